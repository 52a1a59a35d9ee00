//! Single-layer LSTM without peepholes:
//!
//! ```text
//! i_t = σ(W_ix x_t + W_ih h_{t-1} + b_i)
//! f_t = σ(W_fx x_t + W_fh h_{t-1} + b_f)
//! y_t = tanh(W_yx x_t + W_yh h_{t-1} + b_y)
//! c_t = i_t ⊙ y_t + f_t ⊙ c_{t-1}
//! o_t = σ(W_ox x_t + W_oh h_{t-1} + b_o)
//! h_t = o_t ⊙ tanh(c_t)
//! ```
//!
//! The state starts at `c_0 = h_0 = 0`. Gradients are exact BPTT with the
//! loss entering only through the final hidden state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::numerics::{axpy, gemv_acc, gemv_t_acc, outer_acc, sigmoid, Matrix, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LstmError {
    #[error("shape mismatch: expected {expected}, got {found}")]
    Shape { expected: String, found: String },
    #[error("empty sequence")]
    EmptySequence,
}

fn shape_err(expected: impl Into<String>, found: impl Into<String>) -> LstmError {
    LstmError::Shape {
        expected: expected.into(),
        found: found.into(),
    }
}

/// Input weights, recurrent weights and bias of one gate.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    /// `H x D`
    pub wx: Matrix,
    /// `H x H`
    pub wh: Matrix,
    pub b: Vector,
}

impl GateParams {
    fn zeros(d: usize, h: usize) -> Self {
        Self {
            wx: Matrix::zeros(h, d),
            wh: Matrix::zeros(h, h),
            b: Vector::zeros(h),
        }
    }

    fn slices(&self) -> [&[f64]; 3] {
        [self.wx.as_slice(), self.wh.as_slice(), self.b.as_slice()]
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 3] {
        [
            self.wx.as_mut_slice(),
            self.wh.as_mut_slice(),
            self.b.as_mut_slice(),
        ]
    }

    fn check(&self, d: usize, h: usize) -> Result<(), LstmError> {
        if self.wx.shape() != (h, d) || self.wh.shape() != (h, h) || self.b.len() != h {
            return Err(shape_err(
                format!("gate with W_x {h}x{d}, W_h {h}x{h}, b[{h}]"),
                format!(
                    "W_x {:?}, W_h {:?}, b[{}]",
                    self.wx.shape(),
                    self.wh.shape(),
                    self.b.len()
                ),
            ));
        }
        Ok(())
    }
}

/// Tensor names in serialization and diagnostic order.
pub const TENSOR_NAMES: [&str; 12] = [
    "W_ix", "W_ih", "b_i", "W_fx", "W_fh", "b_f", "W_yx", "W_yh", "b_y", "W_ox", "W_oh", "b_o",
];

macro_rules! gate_tensors {
    ($name:ident) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            pub input_gate: GateParams,
            pub forget_gate: GateParams,
            /// The tanh candidate `y_t`.
            pub candidate: GateParams,
            pub output_gate: GateParams,
            pub input_dim: usize,
            pub hidden_dim: usize,
        }

        impl $name {
            pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
                let g = || GateParams::zeros(input_dim, hidden_dim);
                Self {
                    input_gate: g(),
                    forget_gate: g(),
                    candidate: g(),
                    output_gate: g(),
                    input_dim,
                    hidden_dim,
                }
            }

            pub fn gates(&self) -> [&GateParams; 4] {
                [
                    &self.input_gate,
                    &self.forget_gate,
                    &self.candidate,
                    &self.output_gate,
                ]
            }

            /// All twelve tensors in [`TENSOR_NAMES`] order.
            pub fn tensors(&self) -> [&[f64]; 12] {
                let [a, b, c, d] = self.gates().map(GateParams::slices);
                [
                    a[0], a[1], a[2], b[0], b[1], b[2], c[0], c[1], c[2], d[0], d[1], d[2],
                ]
            }

            pub fn tensors_mut(&mut self) -> [&mut [f64]; 12] {
                let [a0, a1, a2] = self.input_gate.slices_mut();
                let [b0, b1, b2] = self.forget_gate.slices_mut();
                let [c0, c1, c2] = self.candidate.slices_mut();
                let [d0, d1, d2] = self.output_gate.slices_mut();
                [a0, a1, a2, b0, b1, b2, c0, c1, c2, d0, d1, d2]
            }

            /// Validates every tensor against `input_dim`/`hidden_dim`.
            pub fn check_shapes(&self) -> Result<(), LstmError> {
                for g in self.gates() {
                    g.check(self.input_dim, self.hidden_dim)?;
                }
                Ok(())
            }

            pub fn num_values(&self) -> usize {
                4 * self.hidden_dim * (self.input_dim + self.hidden_dim + 1)
            }
        }
    };
}

gate_tensors!(LstmParams);
gate_tensors!(LstmGradients);

impl LstmGradients {
    pub fn add_assign(&mut self, other: &LstmGradients) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            axpy(1.0, b, a);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum()
    }
}

/// Glorot-uniform weights, zero biases except a unit forget bias.
pub fn init_params(input_dim: usize, hidden_dim: usize, seed: u64) -> LstmParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = LstmParams::zeros(input_dim, hidden_dim);
    let sx = (6.0 / (input_dim + hidden_dim) as f64).sqrt();
    let sh = (6.0 / (2 * hidden_dim) as f64).sqrt();
    for gate in [
        &mut p.input_gate,
        &mut p.forget_gate,
        &mut p.candidate,
        &mut p.output_gate,
    ] {
        for w in gate.wx.as_mut_slice() {
            *w = rng.random_range(-sx..=sx);
        }
        for w in gate.wh.as_mut_slice() {
            *w = rng.random_range(-sh..=sh);
        }
    }
    p.forget_gate.b.as_mut_slice().fill(1.0);
    p
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub c: Vector,
    pub h: Vector,
}

impl LstmState {
    pub fn zeros(hidden_dim: usize) -> Self {
        Self {
            c: Vector::zeros(hidden_dim),
            h: Vector::zeros(hidden_dim),
        }
    }
}

/// Activations of one timestep, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub y: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

fn gate_preact(g: &GateParams, x: &[f64], h_prev: &[f64], d: usize, hd: usize) -> Vec<f64> {
    let mut z = g.b.as_slice().to_vec();
    gemv_acc(g.wx.as_slice(), d, x, &mut z);
    gemv_acc(g.wh.as_slice(), hd, h_prev, &mut z);
    z
}

fn step(x: &[f64], h_prev: &[f64], c_prev: &[f64], p: &LstmParams) -> StepCache {
    let (d, hd) = (p.input_dim, p.hidden_dim);
    let mut i = gate_preact(&p.input_gate, x, h_prev, d, hd);
    let mut f = gate_preact(&p.forget_gate, x, h_prev, d, hd);
    let mut y = gate_preact(&p.candidate, x, h_prev, d, hd);
    let mut o = gate_preact(&p.output_gate, x, h_prev, d, hd);
    i.iter_mut().for_each(|v| *v = sigmoid(*v));
    f.iter_mut().for_each(|v| *v = sigmoid(*v));
    y.iter_mut().for_each(|v| *v = v.tanh());
    o.iter_mut().for_each(|v| *v = sigmoid(*v));
    let c: Vec<f64> = (0..hd).map(|k| i[k] * y[k] + f[k] * c_prev[k]).collect();
    let h: Vec<f64> = (0..hd).map(|k| o[k] * c[k].tanh()).collect();
    StepCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        i,
        f,
        y,
        o,
        c,
        h,
    }
}

pub fn cell_forward(
    x: &Vector,
    prev: &LstmState,
    p: &LstmParams,
) -> Result<(LstmState, StepCache), LstmError> {
    if x.len() != p.input_dim {
        return Err(shape_err(format!("x[{}]", p.input_dim), format!("x[{}]", x.len())));
    }
    if prev.c.len() != p.hidden_dim || prev.h.len() != p.hidden_dim {
        return Err(shape_err(
            format!("state of size {}", p.hidden_dim),
            format!("c[{}], h[{}]", prev.c.len(), prev.h.len()),
        ));
    }
    let cache = step(x.as_slice(), prev.h.as_slice(), prev.c.as_slice(), p);
    let state = LstmState {
        c: Vector::from_raw(cache.c.clone()),
        h: Vector::from_raw(cache.h.clone()),
    };
    Ok((state, cache))
}

/// Unrolls the cell over `steps` from the zero state.
pub fn sequence_forward(
    steps: &[Vector],
    p: &LstmParams,
) -> Result<(LstmState, Vec<StepCache>), LstmError> {
    if steps.is_empty() {
        return Err(LstmError::EmptySequence);
    }
    if let Some((t, x)) = steps.iter().enumerate().find(|(_, x)| x.len() != p.input_dim) {
        return Err(shape_err(
            format!("steps of dimension {}", p.input_dim),
            format!("step {t} of dimension {}", x.len()),
        ));
    }
    let hd = p.hidden_dim;
    let mut caches: Vec<StepCache> = Vec::with_capacity(steps.len());
    let zeros = vec![0.0; hd];
    for x in steps {
        let cache = match caches.last() {
            Some(prev) => step(x.as_slice(), &prev.h, &prev.c, p),
            None => step(x.as_slice(), &zeros, &zeros, p),
        };
        caches.push(cache);
    }
    let last = caches.last().expect("non-empty");
    let state = LstmState {
        c: Vector::from_raw(last.c.clone()),
        h: Vector::from_raw(last.h.clone()),
    };
    Ok((state, caches))
}

/// Accumulates BPTT gradients into `grads`. Returns `dL/dx_t` per step when
/// `want_inputs` is set, otherwise an empty list.
pub(crate) fn backward_into(
    caches: &[StepCache],
    p: &LstmParams,
    d_h_final: &[f64],
    grads: &mut LstmGradients,
    want_inputs: bool,
) -> Vec<Vec<f64>> {
    let (d, hd) = (p.input_dim, p.hidden_dim);
    let mut dh = d_h_final.to_vec();
    let mut dc_next = vec![0.0; hd];
    let mut da = [vec![0.0; hd], vec![0.0; hd], vec![0.0; hd], vec![0.0; hd]];
    let mut d_inputs = if want_inputs {
        vec![Vec::new(); caches.len()]
    } else {
        Vec::new()
    };

    for (t, s) in caches.iter().enumerate().rev() {
        for k in 0..hd {
            let tc = s.c[k].tanh();
            let dc = dc_next[k] + dh[k] * s.o[k] * (1.0 - tc * tc);
            let d_o = dh[k] * tc;
            da[0][k] = dc * s.y[k] * s.i[k] * (1.0 - s.i[k]);
            da[1][k] = dc * s.c_prev[k] * s.f[k] * (1.0 - s.f[k]);
            da[2][k] = dc * s.i[k] * (1.0 - s.y[k] * s.y[k]);
            da[3][k] = d_o * s.o[k] * (1.0 - s.o[k]);
            dc_next[k] = dc * s.f[k];
        }
        let mut dh_prev = vec![0.0; hd];
        let mut dx = if want_inputs { vec![0.0; d] } else { Vec::new() };
        let params = p.gates();
        let grad_gates = [
            &mut grads.input_gate,
            &mut grads.forget_gate,
            &mut grads.candidate,
            &mut grads.output_gate,
        ];
        for ((g, gp), a) in grad_gates.into_iter().zip(params).zip(&da) {
            outer_acc(g.wx.as_mut_slice(), d, a, &s.x);
            outer_acc(g.wh.as_mut_slice(), hd, a, &s.h_prev);
            axpy(1.0, a, g.b.as_mut_slice());
            gemv_t_acc(gp.wh.as_slice(), hd, a, &mut dh_prev);
            if want_inputs {
                gemv_t_acc(gp.wx.as_slice(), d, a, &mut dx);
            }
        }
        if want_inputs {
            d_inputs[t] = dx;
        }
        dh = dh_prev;
    }
    d_inputs
}

fn check_caches(caches: &[StepCache], p: &LstmParams) -> Result<(), LstmError> {
    p.check_shapes()?;
    if caches.is_empty() {
        return Err(LstmError::EmptySequence);
    }
    let (d, hd) = (p.input_dim, p.hidden_dim);
    for (t, s) in caches.iter().enumerate() {
        let ok = s.x.len() == d
            && [&s.h_prev, &s.c_prev, &s.i, &s.f, &s.y, &s.o, &s.c, &s.h]
                .iter()
                .all(|v| v.len() == hd);
        if !ok {
            return Err(shape_err(
                format!("cache with D={d}, H={hd}"),
                format!("step {t} with x[{}], h[{}]", s.x.len(), s.h.len()),
            ));
        }
    }
    Ok(())
}

/// Exact gradients of a loss that depends on the final hidden state only.
pub fn sequence_backward(
    caches: &[StepCache],
    p: &LstmParams,
    d_h_final: &Vector,
) -> Result<(LstmGradients, Vec<Vector>), LstmError> {
    check_caches(caches, p)?;
    if d_h_final.len() != p.hidden_dim {
        return Err(shape_err(
            format!("d_h[{}]", p.hidden_dim),
            format!("d_h[{}]", d_h_final.len()),
        ));
    }
    let mut grads = LstmGradients::zeros(p.input_dim, p.hidden_dim);
    let d_inputs = backward_into(caches, p, d_h_final.as_slice(), &mut grads, true);
    Ok((grads, d_inputs.into_iter().map(Vector::from_raw).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn vector(x: &[f64]) -> Vector {
        Vector::new(x.to_vec()).unwrap()
    }

    fn random_params(d: usize, h: usize, seed: u64, scale: f64) -> LstmParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = LstmParams::zeros(d, h);
        for t in p.tensors_mut() {
            for v in t {
                *v = rng.random_range(-scale..scale);
            }
        }
        p
    }

    fn random_steps(n: usize, d: usize, seed: u64) -> Vec<Vector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| vector(&(0..d).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>()))
            .collect()
    }

    /// Scalar loop evaluation of one cell step, written independently of the
    /// matrix helpers.
    fn scalar_cell(x: &[f64], h: &[f64], c: &[f64], p: &LstmParams) -> (Vec<f64>, Vec<f64>) {
        let hd = p.hidden_dim;
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let pre = |g: &GateParams, r: usize| {
            let mut z = g.b[r];
            for j in 0..x.len() {
                z += g.wx.get(r, j) * x[j];
            }
            for j in 0..hd {
                z += g.wh.get(r, j) * h[j];
            }
            z
        };
        let mut c_new = vec![0.0; hd];
        let mut h_new = vec![0.0; hd];
        for r in 0..hd {
            let i = sig(pre(&p.input_gate, r));
            let f = sig(pre(&p.forget_gate, r));
            let y = pre(&p.candidate, r).tanh();
            let o = sig(pre(&p.output_gate, r));
            c_new[r] = i * y + f * c[r];
            h_new[r] = o * c_new[r].tanh();
        }
        (c_new, h_new)
    }

    #[test]
    fn init_is_deterministic_with_unit_forget_bias() {
        let a = init_params(10, 512, 3);
        assert_eq!(a, init_params(10, 512, 3));
        assert_eq!(a.input_gate.wx.shape(), (512, 10));
        assert_eq!(a.input_gate.wh.shape(), (512, 512));
        assert!(a.forget_gate.b.iter().all(|&v| v == 1.0));
        for g in [&a.input_gate, &a.candidate, &a.output_gate] {
            assert!(g.b.iter().all(|&v| v == 0.0));
        }
        let s = (6.0f64 / 522.0).sqrt();
        assert!(a.input_gate.wx.as_slice().iter().all(|v| v.abs() <= s));
        a.check_shapes().unwrap();
    }

    #[test]
    fn zero_cell_from_zero_state() {
        let p = LstmParams::zeros(2, 3);
        let (state, cache) = cell_forward(&vector(&[4.0, -2.0]), &LstmState::zeros(3), &p).unwrap();
        assert!(cache.i.iter().chain(&cache.f).chain(&cache.o).all(|&v| v == 0.5));
        assert!(cache.y.iter().all(|&v| v == 0.0));
        assert_eq!(state.c.as_slice(), &[0.0; 3]);
        assert_eq!(state.h.as_slice(), &[0.0; 3]);
    }

    #[test]
    fn zero_cell_carries_half_memory() {
        // i=f=o=0.5, y=0: c = 0.5 * 1, h = 0.5 * tanh(0.5)
        let p = LstmParams::zeros(1, 1);
        let prev = LstmState {
            c: vector(&[1.0]),
            h: vector(&[0.0]),
        };
        let (state, _) = cell_forward(&vector(&[0.7]), &prev, &p).unwrap();
        assert_eq!(state.c[0], 0.5);
        assert!((state.h[0] - 0.231_058_578_630_004_9).abs() < 1e-12);
    }

    #[test]
    fn matches_scalar_reference() {
        let p = random_params(2, 3, 11, 0.5);
        let prev = LstmState {
            c: vector(&[0.3, -0.2, 0.9]),
            h: vector(&[-0.1, 0.4, 0.2]),
        };
        let x = vector(&[0.8, -1.3]);
        let (state, _) = cell_forward(&x, &prev, &p).unwrap();
        let (c, h) = scalar_cell(x.as_slice(), prev.h.as_slice(), prev.c.as_slice(), &p);
        for k in 0..3 {
            assert!((state.c[k] - c[k]).abs() < 1e-12);
            assert!((state.h[k] - h[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn sequence_equals_chained_cells() {
        let p = random_params(2, 4, 5, 0.5);
        let steps = random_steps(3, 2, 6);
        let (final_state, caches) = sequence_forward(&steps, &p).unwrap();
        assert_eq!(caches.len(), 3);
        let mut state = LstmState::zeros(4);
        for x in &steps {
            state = cell_forward(x, &state, &p).unwrap().0;
        }
        assert_eq!(state, final_state);

        let (one, _) = sequence_forward(&steps[..1], &p).unwrap();
        assert_eq!(one, cell_forward(&steps[0], &LstmState::zeros(4), &p).unwrap().0);
    }

    #[test]
    fn zero_weights_keep_hidden_zero() {
        let p = LstmParams::zeros(2, 3);
        let steps = vec![vector(&[1.0, 2.0]); 7];
        let (_, caches) = sequence_forward(&steps, &p).unwrap();
        assert!(caches.iter().all(|c| c.h.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn forward_rejects_bad_input() {
        let p = LstmParams::zeros(2, 3);
        assert_eq!(sequence_forward(&[], &p), Err(LstmError::EmptySequence));
        assert!(matches!(
            sequence_forward(&[vector(&[1.0, 2.0]), vector(&[1.0])], &p),
            Err(LstmError::Shape { .. })
        ));
    }

    #[test]
    fn saturated_forget_gate_preserves_memory() {
        let mut p = LstmParams::zeros(1, 2);
        p.forget_gate.b.as_mut_slice().fill(20.0);
        // Close the input gate so nothing is written either.
        p.input_gate.b.as_mut_slice().fill(-20.0);
        let mut state = LstmState {
            c: vector(&[0.7, -0.4]),
            h: vector(&[0.0, 0.0]),
        };
        let c0 = state.c.clone();
        for t in 0..50 {
            state = cell_forward(&vector(&[t as f64 * 0.1]), &state, &p).unwrap().0;
        }
        for k in 0..2 {
            assert!((state.c[k] - c0[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn saturated_forget_gate_zero_weights() {
        // Only b_f is large; the candidate is 0 because all its weights are 0.
        let mut p = LstmParams::zeros(3, 2);
        p.forget_gate.b.as_mut_slice().fill(20.0);
        let mut state = LstmState {
            c: vector(&[1.5, -0.25]),
            h: vector(&[0.0, 0.0]),
        };
        let c0 = state.c.clone();
        for _ in 0..23 {
            state = cell_forward(&vector(&[0.3, -1.0, 2.0]), &state, &p).unwrap().0;
        }
        for k in 0..2 {
            assert!((state.c[k] - c0[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let p = random_params(2, 3, 1, 0.5);
        let (_, caches) = sequence_forward(&random_steps(4, 2, 2), &p).unwrap();
        let (g, dx) = sequence_backward(&caches, &p, &Vector::zeros(3)).unwrap();
        assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
        assert!(dx.iter().all(|v| v.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn backward_rejects_mismatched_caches() {
        let p = random_params(2, 3, 1, 0.5);
        let (_, caches) = sequence_forward(&random_steps(2, 2, 2), &p).unwrap();
        let other = random_params(2, 4, 1, 0.5);
        assert!(sequence_backward(&caches, &other, &Vector::zeros(4)).is_err());
        assert!(sequence_backward(&caches, &p, &Vector::zeros(4)).is_err());
        assert_eq!(
            sequence_backward(&[], &p, &Vector::zeros(3)).unwrap_err(),
            LstmError::EmptySequence
        );
    }

    /// Hand-derived single-step gradients for L = ½‖h‖² from the zero state,
    /// where the recurrent weights do not contribute (h_prev = c_prev = 0).
    #[test]
    fn single_step_matches_hand_derivation() {
        let p = random_params(2, 2, 21, 0.8);
        let x = [0.4, -0.9];
        let steps = vec![vector(&x)];
        let (state, caches) = sequence_forward(&steps, &p).unwrap();
        let (g, dx) = sequence_backward(&caches, &p, &state.h).unwrap();

        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let pre = |gp: &GateParams, r: usize| gp.b[r] + gp.wx.get(r, 0) * x[0] + gp.wx.get(r, 1) * x[1];
        for r in 0..2 {
            let i = sig(pre(&p.input_gate, r));
            let y = pre(&p.candidate, r).tanh();
            let o = sig(pre(&p.output_gate, r));
            let c = i * y;
            let h = o * c.tanh();
            // dL/dh = h; dh/dc = o (1 - tanh² c)
            let dc = h * o * (1.0 - c.tanh().powi(2));
            let db_i = dc * y * i * (1.0 - i);
            let db_y = dc * i * (1.0 - y * y);
            let db_o = h * c.tanh() * o * (1.0 - o);
            assert!((g.input_gate.b[r] - db_i).abs() < 1e-14);
            assert!((g.candidate.b[r] - db_y).abs() < 1e-14);
            assert!((g.output_gate.b[r] - db_o).abs() < 1e-14);
            // c_prev = 0, so the forget gate receives no gradient
            assert_eq!(g.forget_gate.b[r], 0.0);
            for j in 0..2 {
                assert!((g.input_gate.wx.get(r, j) - db_i * x[j]).abs() < 1e-14);
                assert_eq!(g.input_gate.wh.get(r, j), 0.0);
            }
        }
        assert_eq!(dx.len(), 1);
    }

    fn half_sq_norm_loss(steps: &[Vector], p: &LstmParams) -> f64 {
        let (s, _) = sequence_forward(steps, p).unwrap();
        0.5 * s.h.iter().map(|v| v * v).sum::<f64>()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let eps = 1e-5;
        let p = random_params(2, 2, 4, 0.7);
        let steps = random_steps(3, 2, 8);
        let (state, caches) = sequence_forward(&steps, &p).unwrap();
        let (g, dx) = sequence_backward(&caches, &p, &state.h).unwrap();
        let analytic = g.tensors();
        for (ti, name) in TENSOR_NAMES.iter().enumerate() {
            for j in 0..analytic[ti].len() {
                let mut plus = p.clone();
                plus.tensors_mut()[ti][j] += eps;
                let mut minus = p.clone();
                minus.tensors_mut()[ti][j] -= eps;
                let fd = (half_sq_norm_loss(&steps, &plus) - half_sq_norm_loss(&steps, &minus))
                    / (2.0 * eps);
                let a = analytic[ti][j];
                let rel = (a - fd).abs() / (a.abs() + fd.abs()).max(1e-8);
                assert!(rel <= 1e-5, "{name}[{j}]: analytic {a}, fd {fd}, rel {rel}");
            }
        }
        for t in 0..steps.len() {
            for j in 0..2 {
                let mut plus = steps.clone();
                plus[t].as_mut_slice()[j] += eps;
                let mut minus = steps.clone();
                minus[t].as_mut_slice()[j] -= eps;
                let fd = (half_sq_norm_loss(&plus, &p) - half_sq_norm_loss(&minus, &p)) / (2.0 * eps);
                let a = dx[t][j];
                let rel = (a - fd).abs() / (a.abs() + fd.abs()).max(1e-8);
                assert!(rel <= 1e-5, "x[{t}][{j}]: analytic {a}, fd {fd}");
            }
        }
    }

    proptest! {
        #[test]
        fn activations_stay_in_range(seed in 0u64..1000, n in 1usize..8, scale in 0.1f64..5.0) {
            let p = random_params(3, 4, seed, scale);
            let mut steps = random_steps(n, 3, seed + 1);
            for s in &mut steps {
                s.as_mut_slice().iter_mut().for_each(|v| *v *= 10.0);
            }
            let (_, caches) = sequence_forward(&steps, &p).unwrap();
            for c in &caches {
                for &v in c.i.iter().chain(&c.f).chain(&c.o) {
                    prop_assert!(v >= 0.0 && v <= 1.0);
                }
                for &v in &c.h {
                    prop_assert!((-1.0..=1.0).contains(&v));
                }
            }
        }

        #[test]
        fn forward_is_pure(seed in 0u64..1000) {
            let p = random_params(2, 3, seed, 1.0);
            let steps = random_steps(4, 2, seed);
            prop_assert_eq!(sequence_forward(&steps, &p).unwrap(), sequence_forward(&steps, &p).unwrap());
        }
    }
}
