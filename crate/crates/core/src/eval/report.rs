use std::fmt::Write;

use super::crossval::CvResult;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Self { mean: 0.0, std: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoldSummary {
    pub accuracy: MeanStd,
    pub kappa: MeanStd,
    pub macro_f: MeanStd,
    pub weighted_f: MeanStd,
}

/// Human-readable report: config echo, a method summary table, then per
/// method the per-class and per-fold tables.
pub fn render_text(results: &[CvResult], class_names: &[String], echo: &[(String, String)]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Cross-validation report");
    let _ = writeln!(s);
    let _ = writeln!(s, "Configuration");
    for (k, v) in echo {
        let _ = writeln!(s, "  {k:<22} {v}");
    }
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<10} {:>9} {:>8} {:>8} {:>8}   {:>17} {:>17}",
        "method", "accuracy", "kappa", "macro_f", "wght_f", "fold acc", "fold macro_f"
    );
    for r in results {
        let fs = &r.fold_summary;
        let _ = writeln!(
            s,
            "{:<10} {:>9.4} {:>8.4} {:>8.4} {:>8.4}   {:>8.4} ± {:<6.4} {:>8.4} ± {:<6.4}",
            r.method.name(),
            r.pooled.accuracy,
            r.pooled.kappa,
            r.pooled.macro_f,
            r.pooled.weighted_f,
            fs.accuracy.mean,
            fs.accuracy.std,
            fs.macro_f.mean,
            fs.macro_f.std,
        );
    }
    let width = class_names.iter().map(String::len).max().unwrap_or(5).max(5);
    for r in results {
        let _ = writeln!(s);
        let _ = writeln!(s, "[{}] per class (pooled)", r.method.name());
        let _ = writeln!(
            s,
            "  {:<width$} {:>9} {:>9} {:>9} {:>8}",
            "class", "precision", "recall", "f", "support"
        );
        for (name, c) in class_names.iter().zip(&r.pooled.per_class) {
            let _ = writeln!(
                s,
                "  {:<width$} {:>9.4} {:>9.4} {:>9.4} {:>8}",
                name, c.precision, c.recall, c.f_measure, c.support
            );
        }
        let _ = writeln!(s, "[{}] per fold", r.method.name());
        let _ = writeln!(
            s,
            "  {:>4} {:>9} {:>8} {:>8} {:>8}",
            "fold", "accuracy", "kappa", "macro_f", "wght_f"
        );
        for f in &r.folds {
            let _ = writeln!(
                s,
                "  {:>4} {:>9.4} {:>8.4} {:>8.4} {:>8.4}",
                f.fold, f.report.accuracy, f.report.kappa, f.report.macro_f, f.report.weighted_f
            );
        }
    }
    s
}

/// Machine-readable `key=value` lines with full-precision numbers.
pub fn render_key_values(
    results: &[CvResult],
    class_names: &[String],
    echo: &[(String, String)],
) -> String {
    let mut s = String::from("version=1\n");
    let _ = writeln!(s, "classes={}", class_names.join(","));
    for (k, v) in echo {
        let _ = writeln!(s, "config.{k}={v}");
    }
    let methods: Vec<&str> = results.iter().map(|r| r.method.name()).collect();
    let _ = writeln!(s, "methods={}", methods.join(","));
    for r in results {
        let m = r.method.name();
        let p = &r.pooled;
        let _ = writeln!(s, "{m}.pooled.accuracy={}", p.accuracy);
        let _ = writeln!(s, "{m}.pooled.kappa={}", p.kappa);
        let _ = writeln!(s, "{m}.pooled.macro_f={}", p.macro_f);
        let _ = writeln!(s, "{m}.pooled.weighted_f={}", p.weighted_f);
        for (name, c) in class_names.iter().zip(&p.per_class) {
            let _ = writeln!(s, "{m}.class.{name}.precision={}", c.precision);
            let _ = writeln!(s, "{m}.class.{name}.recall={}", c.recall);
            let _ = writeln!(s, "{m}.class.{name}.f={}", c.f_measure);
            let _ = writeln!(s, "{m}.class.{name}.support={}", c.support);
        }
        for t in 0..r.pooled_confusion.num_classes {
            let row: Vec<String> = r.pooled_confusion.row(t).iter().map(u64::to_string).collect();
            let _ = writeln!(s, "{m}.confusion.{t}={}", row.join(","));
        }
        for f in &r.folds {
            let (i, fr) = (f.fold, &f.report);
            let _ = writeln!(s, "{m}.fold.{i}.accuracy={}", fr.accuracy);
            let _ = writeln!(s, "{m}.fold.{i}.kappa={}", fr.kappa);
            let _ = writeln!(s, "{m}.fold.{i}.macro_f={}", fr.macro_f);
            let _ = writeln!(s, "{m}.fold.{i}.weighted_f={}", fr.weighted_f);
        }
        let fs = &r.fold_summary;
        for (key, v) in [
            ("accuracy", fs.accuracy),
            ("kappa", fs.kappa),
            ("macro_f", fs.macro_f),
            ("weighted_f", fs.weighted_f),
        ] {
            let _ = writeln!(s, "{m}.folds.{key}.mean={}", v.mean);
            let _ = writeln!(s, "{m}.folds.{key}.std={}", v.std);
        }
    }
    s
}
