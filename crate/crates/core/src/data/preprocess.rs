use super::{DataError, Dataset, TimeSeriesSample};
use crate::numerics::Vector;

/// Raw standard deviations below this are treated as zero variance.
const MIN_STD: f64 = 1e-12;

/// One band over time with a per-timestamp validity mask (false = cloudy).
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedSeries {
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl MaskedSeries {
    pub fn new(values: Vec<f64>, valid: Vec<bool>) -> Result<Self, DataError> {
        if values.len() != valid.len() {
            return Err(DataError::Shape {
                expected: format!("{} mask entries", values.len()),
                found: format!("{}", valid.len()),
            });
        }
        Ok(Self { values, valid })
    }

    /// Builds a series from optional observations (`None` = missing).
    pub fn from_options(obs: &[Option<f64>]) -> Self {
        Self {
            values: obs.iter().map(|o| o.unwrap_or(f64::NAN)).collect(),
            valid: obs.iter().map(Option::is_some).collect(),
        }
    }
}

/// Linear interpolation across invalid timestamps; leading and trailing gaps
/// copy the nearest valid value.
pub fn gap_fill_series(series: &MaskedSeries) -> Result<Vector, DataError> {
    if series.values.len() != series.valid.len() {
        return Err(DataError::Shape {
            expected: format!("{} mask entries", series.values.len()),
            found: format!("{}", series.valid.len()),
        });
    }
    let anchors: Vec<usize> = (0..series.values.len())
        .filter(|&i| series.valid[i])
        .collect();
    let (&first, &last) = match (anchors.first(), anchors.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(DataError::AllInvalid),
    };
    if let Some(&bad) = anchors.iter().find(|&&i| !series.values[i].is_finite()) {
        return Err(DataError::Invalid(format!(
            "valid observation at {bad} is not finite"
        )));
    }
    let v = &series.values;
    let mut out = v.clone();
    for x in &mut out[..first] {
        *x = v[first];
    }
    for x in &mut out[last + 1..] {
        *x = v[last];
    }
    for pair in anchors.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let span = (b - a) as f64;
        for (i, x) in out.iter_mut().enumerate().take(b).skip(a + 1) {
            let w = (i - a) as f64 / span;
            *x = v[a] + w * (v[b] - v[a]);
        }
    }
    Ok(Vector::from_raw(out))
}

/// Gap-fills a `T x D` grid of optional observations band by band.
pub fn fill_gaps(steps: &[Vec<Option<f64>>]) -> Result<Vec<Vector>, DataError> {
    let d = steps.first().map_or(0, Vec::len);
    if d == 0 || steps.iter().any(|s| s.len() != d) {
        return Err(DataError::Invalid("ragged or empty observation grid".into()));
    }
    let mut columns = Vec::with_capacity(d);
    for f in 0..d {
        let band: Vec<Option<f64>> = steps.iter().map(|s| s[f]).collect();
        columns.push(gap_fill_series(&MaskedSeries::from_options(&band))?);
    }
    Ok((0..steps.len())
        .map(|t| Vector::from_raw(columns.iter().map(|c| c[t]).collect()))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bands {
    pub blue: f64,
    pub green: f64,
    pub red: f64,
    pub nir: f64,
}

/// Set when an index hit a zero denominator and was defined as 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IndexFlags {
    pub ndvi_undefined: bool,
    pub ndwi_undefined: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadiometricIndices {
    pub ndvi: f64,
    pub ndwi: f64,
    pub bi: f64,
    pub flags: IndexFlags,
}

fn normalized_difference(a: f64, b: f64) -> (f64, bool) {
    let den = a + b;
    if den == 0.0 {
        (0.0, true)
    } else {
        ((a - b) / den, false)
    }
}

/// NDVI, NDWI (green/NIR form) and the two-band brightness index.
pub fn compute_indices(b: Bands) -> RadiometricIndices {
    let (ndvi, ndvi_undefined) = normalized_difference(b.nir, b.red);
    let (ndwi, ndwi_undefined) = normalized_difference(b.green, b.nir);
    let bi = ((b.red * b.red + b.nir * b.nir) / 2.0).sqrt();
    RadiometricIndices {
        ndvi,
        ndwi,
        bi,
        flags: IndexFlags {
            ndvi_undefined,
            ndwi_undefined,
        },
    }
}

/// Feature positions of the bands used by [`compute_indices`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BandLayout {
    pub blue: usize,
    pub green: usize,
    pub red: usize,
    pub nir: usize,
}

/// Appends NDVI, NDWI and BI to every timestep (D grows by 3).
pub fn with_radiometric_indices(ds: &Dataset, layout: BandLayout) -> Result<Dataset, DataError> {
    let max = layout.blue.max(layout.green).max(layout.red).max(layout.nir);
    if max >= ds.num_features {
        return Err(DataError::Shape {
            expected: format!("band index < D={}", ds.num_features),
            found: format!("{max}"),
        });
    }
    let samples = ds
        .samples
        .iter()
        .map(|s| TimeSeriesSample {
            id: s.id.clone(),
            label: s.label,
            steps: s
                .steps
                .iter()
                .map(|x| {
                    let idx = compute_indices(Bands {
                        blue: x[layout.blue],
                        green: x[layout.green],
                        red: x[layout.red],
                        nir: x[layout.nir],
                    });
                    let mut v = x.as_slice().to_vec();
                    v.extend([idx.ndvi, idx.ndwi, idx.bi]);
                    Vector::from_raw(v)
                })
                .collect(),
        })
        .collect();
    let mut manifest = ds.manifest.clone();
    manifest.num_features = ds.num_features + 3;
    Dataset::new(samples, ds.class_names.clone(), manifest)
}

/// Per-(timestep, feature) z-score statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub num_timestamps: usize,
    pub num_features: usize,
    /// Row-major `T x D`.
    pub mean: Vec<f64>,
    /// Row-major `T x D`, already clamped to 1 where variance vanished.
    pub std: Vec<f64>,
}

pub fn fit_normalizer(train: &Dataset) -> Result<Normalizer, DataError> {
    if train.is_empty() {
        return Err(DataError::NoSamples);
    }
    let (t, d) = (train.num_timestamps, train.num_features);
    let n = train.len() as f64;
    let mut mean = vec![0.0; t * d];
    for s in &train.samples {
        for (m, v) in mean.iter_mut().zip(s.steps.iter().flat_map(|x| x.iter())) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; t * d];
    for s in &train.samples {
        for ((acc, v), m) in var
            .iter_mut()
            .zip(s.steps.iter().flat_map(|x| x.iter()))
            .zip(&mean)
        {
            *acc += (v - m) * (v - m);
        }
    }
    let std = var
        .into_iter()
        .map(|v| {
            let s = (v / n).sqrt();
            if s < MIN_STD {
                1.0
            } else {
                s
            }
        })
        .collect();
    Ok(Normalizer {
        num_timestamps: t,
        num_features: d,
        mean,
        std,
    })
}

pub fn apply_normalizer(n: &Normalizer, ds: &Dataset) -> Result<Dataset, DataError> {
    if n.num_timestamps != ds.num_timestamps || n.num_features != ds.num_features {
        return Err(DataError::Shape {
            expected: format!("T={}, D={}", n.num_timestamps, n.num_features),
            found: format!("T={}, D={}", ds.num_timestamps, ds.num_features),
        });
    }
    let d = n.num_features;
    let mut out = ds.clone();
    for s in &mut out.samples {
        for (t, step) in s.steps.iter_mut().enumerate() {
            let base = t * d;
            for (f, v) in step.as_mut_slice().iter_mut().enumerate() {
                *v = (*v - n.mean[base + f]) / n.std[base + f];
            }
        }
    }
    Ok(out)
}
