//! One-vs-one RBF support vector machine trained with SMO using the
//! second-order working-set selection of libsvm.

use std::collections::HashMap;
use std::rc::Rc;

use rayon::prelude::*;

use super::{check_samples, BaselineError, FlatSample};
use crate::model::argmax;
use crate::numerics::Vector;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SvmConfig {
    pub c: f64,
    pub gamma: f64,
    /// Stopping tolerance on the maximal KKT violation.
    pub tol: f64,
    pub max_iter: usize,
    /// Kernel row cache budget.
    pub cache_bytes: usize,
    /// Record the dual objective after every SMO step.
    pub track_objective: bool,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: 100.0,
            gamma: 0.01,
            tol: 1e-3,
            max_iter: 10_000_000,
            cache_bytes: 256 << 20,
            track_objective: false,
        }
    }
}

impl SvmConfig {
    fn validate(&self) -> Result<(), BaselineError> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(BaselineError::Config(format!("C must be > 0, got {}", self.c)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(BaselineError::Config(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(BaselineError::Config(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(BaselineError::Config("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

pub fn rbf_kernel(u: &[f64], v: &[f64], gamma: f64) -> f64 {
    let d2: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
    (-gamma * d2).exp()
}

/// Binary machine separating `positive` (label +1) from `negative`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMachine {
    pub positive: usize,
    pub negative: usize,
    pub support_vectors: Vec<Vec<f64>>,
    /// Dual coefficients of the support vectors (all in `(0, C]`).
    pub alphas: Vec<f64>,
    /// `+1` or `-1` for each support vector.
    pub signs: Vec<f64>,
    pub rho: f64,
    pub iterations: usize,
    /// Dual objective `sum(a) - a'Qa/2` after each step, when tracked.
    pub objective_trace: Vec<f64>,
}

impl BinaryMachine {
    pub fn decision(&self, x: &[f64], gamma: f64) -> f64 {
        self.support_vectors
            .iter()
            .zip(self.alphas.iter().zip(&self.signs))
            .map(|(sv, (a, y))| a * y * rbf_kernel(sv, x, gamma))
            .sum::<f64>()
            - self.rho
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub machines: Vec<BinaryMachine>,
    pub c: f64,
    pub gamma: f64,
    pub num_classes: usize,
    pub num_features: usize,
}

/// LRU cache of kernel matrix rows.
struct KernelCache<'a> {
    points: &'a [&'a [f64]],
    gamma: f64,
    capacity: usize,
    clock: u64,
    rows: HashMap<usize, (Rc<[f64]>, u64)>,
}

impl<'a> KernelCache<'a> {
    fn new(points: &'a [&'a [f64]], gamma: f64, budget: usize) -> Self {
        let per_row = (points.len() * 8).max(1);
        Self {
            points,
            gamma,
            capacity: (budget / per_row).max(2),
            clock: 0,
            rows: HashMap::new(),
        }
    }

    fn row(&mut self, i: usize) -> Rc<[f64]> {
        self.clock += 1;
        let clock = self.clock;
        if let Some((row, stamp)) = self.rows.get_mut(&i) {
            *stamp = clock;
            return row.clone();
        }
        if self.rows.len() >= self.capacity {
            let oldest = *self
                .rows
                .iter()
                .min_by_key(|(_, (_, s))| *s)
                .map(|(k, _)| k)
                .expect("cache is non-empty");
            self.rows.remove(&oldest);
        }
        let xi = self.points[i];
        let row: Rc<[f64]> = self
            .points
            .iter()
            .map(|xj| rbf_kernel(xi, xj, self.gamma))
            .collect();
        self.rows.insert(i, (row.clone(), clock));
        row
    }
}

struct Solution {
    alpha: Vec<f64>,
    rho: f64,
    iterations: usize,
    trace: Vec<f64>,
}

fn dual_objective(alpha: &[f64], grad: &[f64]) -> f64 {
    // With G = Qa - e: a'Qa/2 - e'a = sum a (G - 1) / 2
    -alpha
        .iter()
        .zip(grad)
        .map(|(a, g)| a * (g - 1.0))
        .sum::<f64>()
        / 2.0
}

/// Solves `min a'Qa/2 - e'a` s.t. `y'a = 0`, `0 <= a <= C`.
fn solve_binary(points: &[&[f64]], y: &[f64], cfg: &SvmConfig) -> Result<Solution, BaselineError> {
    let n = points.len();
    let c = cfg.c;
    let mut cache = KernelCache::new(points, cfg.gamma, cfg.cache_bytes);
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut trace = Vec::new();
    let upper = |a: f64| a >= c;
    let lower = |a: f64| a <= 0.0;

    let mut iterations = 0;
    loop {
        // Working set: i maximizes -y G over I_up, j minimizes the
        // second-order objective decrease over I_low.
        let mut gmax = f64::NEG_INFINITY;
        let mut i_idx = None;
        for t in 0..n {
            let cand = if y[t] > 0.0 {
                (!upper(alpha[t])).then_some(-grad[t])
            } else {
                (!lower(alpha[t])).then_some(grad[t])
            };
            if let Some(v) = cand {
                if v >= gmax {
                    gmax = v;
                    i_idx = Some(t);
                }
            }
        }
        let Some(i) = i_idx else { break };
        let qi = cache.row(i);
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_idx = None;
        let mut best_obj = f64::INFINITY;
        for t in 0..n {
            let diff = if y[t] > 0.0 {
                if lower(alpha[t]) {
                    continue;
                }
                gmax2 = gmax2.max(grad[t]);
                gmax + grad[t]
            } else {
                if upper(alpha[t]) {
                    continue;
                }
                gmax2 = gmax2.max(-grad[t]);
                gmax - grad[t]
            };
            if diff > 0.0 {
                let quad = 2.0 - 2.0 * qi[t];
                let obj = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                if obj <= best_obj {
                    best_obj = obj;
                    j_idx = Some(t);
                }
            }
        }
        let Some(j) = j_idx else { break };
        if gmax + gmax2 < cfg.tol {
            break;
        }
        if iterations >= cfg.max_iter {
            return Err(BaselineError::NoConvergence(cfg.max_iter));
        }
        iterations += 1;

        let qj = cache.row(j);
        let kij = qi[j];
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let quad = {
            let q = 2.0 - 2.0 * kij;
            if q > 0.0 {
                q
            } else {
                TAU
            }
        };
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * qi[t] * di + y[j] * qj[t] * dj);
        }
        if cfg.track_objective {
            trace.push(dual_objective(&alpha, &grad));
        }
    }

    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum_free) = (0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * grad[t];
        let to_ub = (upper(alpha[t]) && y[t] < 0.0) || (lower(alpha[t]) && y[t] > 0.0);
        if upper(alpha[t]) || lower(alpha[t]) {
            if to_ub {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    let rho = if free > 0 {
        sum_free / free as f64
    } else {
        (ub + lb) / 2.0
    };
    Ok(Solution {
        alpha,
        rho,
        iterations,
        trace,
    })
}

/// Trains one machine per pair of classes present in `samples`.
pub fn svm_fit(
    samples: &[FlatSample],
    num_classes: usize,
    cfg: &SvmConfig,
) -> Result<SvmModel, BaselineError> {
    cfg.validate()?;
    let num_features = check_samples(samples, num_classes)?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, s) in samples.iter().enumerate() {
        by_class[s.label].push(i);
    }
    let present: Vec<usize> = (0..num_classes).filter(|&k| !by_class[k].is_empty()).collect();
    if present.len() < 2 {
        return Err(BaselineError::TooFewClasses(present.len()));
    }
    let mut pairs = Vec::new();
    for (a, &p) in present.iter().enumerate() {
        for &q in &present[a + 1..] {
            pairs.push((p, q));
        }
    }
    let machines = pairs
        .par_iter()
        .map(|&(p, q)| {
            let idx: Vec<usize> = by_class[p].iter().chain(&by_class[q]).copied().collect();
            let points: Vec<&[f64]> = idx.iter().map(|&i| samples[i].features.as_slice()).collect();
            let y: Vec<f64> = idx
                .iter()
                .map(|&i| if samples[i].label == p { 1.0 } else { -1.0 })
                .collect();
            let sol = solve_binary(&points, &y, cfg)?;
            let mut m = BinaryMachine {
                positive: p,
                negative: q,
                support_vectors: Vec::new(),
                alphas: Vec::new(),
                signs: Vec::new(),
                rho: sol.rho,
                iterations: sol.iterations,
                objective_trace: sol.trace,
            };
            for (t, &a) in sol.alpha.iter().enumerate() {
                if a > 0.0 {
                    m.support_vectors.push(points[t].to_vec());
                    m.alphas.push(a);
                    m.signs.push(y[t]);
                }
            }
            Ok(m)
        })
        .collect::<Result<Vec<_>, BaselineError>>()?;
    Ok(SvmModel {
        machines,
        c: cfg.c,
        gamma: cfg.gamma,
        num_classes,
        num_features,
    })
}

/// Majority vote over pairwise machines; ties go to the lowest class index.
/// Returns the class and the per-class vote counts.
pub fn svm_predict(m: &SvmModel, x: &Vector) -> Result<(usize, Vec<f64>), BaselineError> {
    if x.len() != m.num_features {
        return Err(BaselineError::Length {
            expected: m.num_features,
            found: x.len(),
        });
    }
    let mut votes = vec![0.0; m.num_classes];
    for machine in &m.machines {
        if machine.decision(x.as_slice(), m.gamma) > 0.0 {
            votes[machine.positive] += 1.0;
        } else {
            votes[machine.negative] += 1.0;
        }
    }
    Ok((argmax(&votes), votes))
}
