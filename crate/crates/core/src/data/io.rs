use std::fs;
use std::io::Write;
use std::path::Path;

use super::{DataError, Dataset, Manifest, TimeSeriesSample};
use crate::numerics::Vector;

const MANIFEST_VERSION: u32 = 1;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Parses the `key=value` manifest text.
pub fn parse_manifest(text: &str) -> Result<Manifest, DataError> {
    let mut version = None;
    let mut t = None;
    let mut d = None;
    let mut classes = None;
    let mut seed = None;
    let mut generator = None;
    let mut source = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            DataError::Manifest(format!("line {}: expected key=value", lineno + 1))
        })?;
        let value = value.trim();
        let int = |v: &str| {
            v.parse::<u64>()
                .map_err(|_| DataError::Manifest(format!("line {}: bad integer {v:?}", lineno + 1)))
        };
        match key.trim() {
            "version" => version = Some(int(value)?),
            "T" => t = Some(int(value)? as usize),
            "D" => d = Some(int(value)? as usize),
            "classes" => {
                classes = Some(
                    value
                        .split(',')
                        .map(|s| s.trim().to_string())
                        .collect::<Vec<_>>(),
                )
            }
            "seed" => seed = Some(int(value)?),
            "generator" => generator = Some(value.to_string()),
            "source" => source = Some(value.to_string()),
            other => {
                return Err(DataError::Manifest(format!(
                    "line {}: unknown key {other:?}",
                    lineno + 1
                )))
            }
        }
    }
    match version {
        Some(v) if v == MANIFEST_VERSION as u64 => {}
        Some(v) => return Err(DataError::Manifest(format!("unsupported version {v}"))),
        None => return Err(DataError::Manifest("missing version".into())),
    }
    let num_timestamps = t.ok_or_else(|| DataError::Manifest("missing T".into()))?;
    let num_features = d.ok_or_else(|| DataError::Manifest("missing D".into()))?;
    let class_names = classes.ok_or_else(|| DataError::Manifest("missing classes".into()))?;
    if num_timestamps == 0 || num_features == 0 {
        return Err(DataError::Manifest("T and D must be positive".into()));
    }
    if class_names.iter().any(String::is_empty) {
        return Err(DataError::Manifest("empty class name".into()));
    }
    for (i, name) in class_names.iter().enumerate() {
        if class_names[..i].contains(name) {
            return Err(DataError::Manifest(format!("duplicate class {name:?}")));
        }
    }
    Ok(Manifest {
        num_timestamps,
        num_features,
        class_names,
        seed,
        generator,
        source,
    })
}

pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<(), DataError> {
    let mut out = String::new();
    out.push_str(&format!("version={MANIFEST_VERSION}\n"));
    out.push_str(&format!("T={}\n", manifest.num_timestamps));
    out.push_str(&format!("D={}\n", manifest.num_features));
    out.push_str(&format!("classes={}\n", manifest.class_names.join(",")));
    if let Some(seed) = manifest.seed {
        out.push_str(&format!("seed={seed}\n"));
    }
    if let Some(g) = &manifest.generator {
        out.push_str(&format!("generator={g}\n"));
    }
    if let Some(s) = &manifest.source {
        out.push_str(&format!("source={s}\n"));
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Reads a header-free data CSV (`id,label,features...`, timestep-major)
/// against its manifest.
pub fn load_dataset(data_path: &Path, manifest_path: &Path) -> Result<Dataset, DataError> {
    let text = fs::read_to_string(manifest_path).map_err(io_err(manifest_path))?;
    let mut manifest = parse_manifest(&text)?;
    let (t, d) = (manifest.num_timestamps, manifest.num_features);
    let width = t
        .checked_mul(d)
        .filter(|w| w.checked_add(2).is_some())
        .ok_or(DataError::Overflow { t, d })?;

    let file = fs::File::open(data_path).map_err(io_err(data_path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut samples = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        if record.len() < 2 || record.len() - 2 != width {
            return Err(DataError::Arity {
                row,
                expected: width,
                found: record.len().saturating_sub(2),
            });
        }
        let label_name = &record[1];
        let label = manifest
            .class_names
            .iter()
            .position(|c| c == label_name)
            .ok_or_else(|| DataError::UnknownLabel {
                row,
                label: label_name.to_string(),
            })?;
        let mut steps = Vec::with_capacity(t);
        let mut fields = record.iter().enumerate().skip(2);
        for _ in 0..t {
            let mut step = Vec::with_capacity(d);
            for (field, raw) in fields.by_ref().take(d) {
                let value = raw
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| DataError::NonNumeric {
                        row,
                        field: field + 1,
                        value: raw.to_string(),
                    })?;
                step.push(value);
            }
            steps.push(Vector::from_raw(step));
        }
        samples.push(TimeSeriesSample {
            id: record[0].to_string(),
            label,
            steps,
        });
    }
    if samples.is_empty() {
        return Err(DataError::NoSamples);
    }
    if manifest.source.is_none() && manifest.generator.is_none() {
        manifest.source = Some(data_path.display().to_string());
    }
    let classes = manifest.class_names.clone();
    Dataset::new(samples, classes, manifest)
}

/// Writes the data CSV and manifest that [`load_dataset`] reads back.
pub fn save_dataset(ds: &Dataset, data_path: &Path, manifest_path: &Path) -> Result<(), DataError> {
    let mut buf = Vec::new();
    for s in &ds.samples {
        write!(buf, "{},{}", s.id, ds.class_names[s.label]).expect("in-memory write");
        for step in &s.steps {
            for v in step.iter() {
                write!(buf, ",{v}").expect("in-memory write");
            }
        }
        buf.push(b'\n');
    }
    fs::write(data_path, buf).map_err(io_err(data_path))?;
    let mut manifest = ds.manifest.clone();
    manifest.num_timestamps = ds.num_timestamps;
    manifest.num_features = ds.num_features;
    manifest.class_names = ds.class_names.clone();
    write_manifest(&manifest, manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    const MANIFEST: &str = "version=1\nT=2\nD=2\nclasses=water,forest\n";

    #[test]
    fn loads_timestep_major_rows() {
        let dir = tempfile::tempdir().unwrap();
        let m = write(dir.path(), "d.manifest", MANIFEST);
        let d = write(dir.path(), "d.csv", "s1,water,0.1,0.2,0.3,0.4\n");
        let ds = load_dataset(&d, &m).unwrap();
        assert_eq!(ds.len(), 1);
        let s = &ds.samples[0];
        assert_eq!(s.id, "s1");
        assert_eq!(s.label, 0);
        assert_eq!(s.steps[0].as_slice(), &[0.1, 0.2]);
        assert_eq!(s.steps[1].as_slice(), &[0.3, 0.4]);
    }

    #[test]
    fn arity_error_names_row_and_expected() {
        let dir = tempfile::tempdir().unwrap();
        let m = write(dir.path(), "d.manifest", MANIFEST);
        let d = write(
            dir.path(),
            "d.csv",
            "s1,water,0.1,0.2,0.3,0.4\ns2,forest,1,2,3,4,5\n",
        );
        let err = load_dataset(&d, &m).unwrap_err();
        assert!(matches!(
            err,
            DataError::Arity {
                row: 2,
                expected: 4,
                found: 5
            }
        ));
        assert!(err.to_string().contains("row 2"));
    }

    #[test]
    fn empty_file_has_no_samples() {
        let dir = tempfile::tempdir().unwrap();
        let m = write(dir.path(), "d.manifest", MANIFEST);
        let d = write(dir.path(), "d.csv", "");
        let err = load_dataset(&d, &m).unwrap_err();
        assert_eq!(err.to_string(), "no samples");
    }

    #[test]
    fn rejects_unknown_label_and_bad_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let m = write(dir.path(), "d.manifest", MANIFEST);
        let d = write(dir.path(), "a.csv", "s1,urban,1,2,3,4\n");
        assert!(matches!(
            load_dataset(&d, &m),
            Err(DataError::UnknownLabel { row: 1, .. })
        ));
        let d = write(dir.path(), "b.csv", "s1,water,1,x,3,4\n");
        assert!(matches!(
            load_dataset(&d, &m),
            Err(DataError::NonNumeric { row: 1, field: 4, .. })
        ));
        let d = write(dir.path(), "c.csv", "s1,water,1,NaN,3,4\n");
        assert!(matches!(load_dataset(&d, &m), Err(DataError::NonNumeric { .. })));
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let m = write(dir.path(), "d.manifest", MANIFEST);
        let err = load_dataset(&dir.path().join("nope.csv"), &m).unwrap_err();
        assert!(matches!(err, DataError::Io { .. }));
    }

    #[test]
    fn overflowing_shape_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!("version=1\nT={}\nD=4\nclasses=a,b\n", u64::MAX / 2);
        let m = write(dir.path(), "d.manifest", &text);
        let d = write(dir.path(), "d.csv", "s1,a,1\n");
        assert!(matches!(load_dataset(&d, &m), Err(DataError::Overflow { .. })));
    }

    #[test]
    fn manifest_validation() {
        assert!(parse_manifest("T=2\nD=2\nclasses=a,b\n").is_err());
        assert!(parse_manifest("version=2\nT=2\nD=2\nclasses=a,b\n").is_err());
        assert!(parse_manifest("version=1\nT=2\nD=2\nclasses=a,a\n").is_err());
        assert!(parse_manifest("version=1\nT=2\nD=2\nclasses=a,b\nfoo=1\n").is_err());
        let m = parse_manifest("version=1\nT=3\nD=1\nclasses=a, b\nseed=7\n").unwrap();
        assert_eq!(m.class_names, vec!["a", "b"]);
        assert_eq!(m.seed, Some(7));
    }
}
