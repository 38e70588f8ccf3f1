//! Dense tanh networks with hand-written reverse-mode differentiation, the
//! trainable bundle of network weights plus PDE parameters, and Adam.
//!
//! All network parameters live in one contiguous buffer. Layer `l` occupies
//! `fan_out * fan_in` weights (row-major, one row per output neuron)
//! followed by `fan_out` biases. A [`TrainableSet`] appends the five
//! trainable PDE parameters (`D1, D2, alpha, beta, r1`) to that buffer to
//! form the flat vector seen by the optimizer and the gradient checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::{ParamError, ParamId, RdParams};

/// Default layout: 4 hidden layers of 64.
pub const DEFAULT_LAYERS: [usize; 6] = [2, 64, 64, 64, 64, 2];

/// Smallest magnitude `beta` may take after an optimizer update.
pub const BETA_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("network needs 2 inputs, 2 outputs and at least one hidden layer, got {0:?}")]
    BadLayout(Vec<usize>),
    #[error("expected {expected} values, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("non-finite gradient component {index} ({name})")]
    NonFiniteGradient { index: usize, name: String },
    #[error("input scale must be positive and finite, got {0}")]
    BadScale(f64),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Fully connected network `(x, y) -> (u, v)` with tanh hidden layers and a
/// linear output layer. Inputs are divided by `input_scale` first, which
/// maps a symmetric domain `[-s, s]^2` onto `[-1, 1]^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    params: Vec<f64>,
    input_scale: f64,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new(sizes: &[usize], input_scale: f64, rng_seed: u64) -> Result<Self, NetError> {
        let mut net = Self::zeros(sizes, input_scale)?;
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        for l in 0..net.n_layers() {
            let (fan_in, fan_out) = (net.sizes[l], net.sizes[l + 1]);
            let bound = glorot_bound(fan_in, fan_out);
            let off = net.offsets[l];
            for w in &mut net.params[off..off + fan_in * fan_out] {
                *w = rng.gen_range(-bound..=bound);
            }
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize], input_scale: f64) -> Result<Self, NetError> {
        if sizes.len() < 3 || sizes[0] != 2 || sizes[sizes.len() - 1] != 2 || sizes.contains(&0) {
            return Err(NetError::BadLayout(sizes.to_vec()));
        }
        if !(input_scale.is_finite() && input_scale > 0.0) {
            return Err(NetError::BadScale(input_scale));
        }
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut total = 0;
        for w in sizes.windows(2) {
            offsets.push(total);
            total += w[0] * w[1] + w[1];
        }
        offsets.push(total);
        Ok(Mlp { sizes: sizes.to_vec(), offsets, params: vec![0.0; total], input_scale })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn input_scale(&self) -> f64 {
        self.input_scale
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<(), NetError> {
        if values.len() != self.params.len() {
            return Err(NetError::Shape { expected: self.params.len(), got: values.len() });
        }
        self.params.copy_from_slice(values);
        Ok(())
    }

    /// Weight matrix of layer `l`, `fan_out x fan_in` row-major.
    pub fn weights(&self, l: usize) -> &[f64] {
        let off = self.offsets[l];
        &self.params[off..off + self.sizes[l] * self.sizes[l + 1]]
    }

    pub fn biases(&self, l: usize) -> &[f64] {
        let off = self.offsets[l] + self.sizes[l] * self.sizes[l + 1];
        &self.params[off..off + self.sizes[l + 1]]
    }

    /// Flat-buffer range owned by layer `l`.
    pub fn layer_range(&self, l: usize) -> std::ops::Range<usize> {
        self.offsets[l]..self.offsets[l + 1]
    }

    /// Single-point evaluation.
    pub fn forward(&self, x: f64, y: f64) -> (f64, f64) {
        let mut act = vec![x / self.input_scale, y / self.input_scale];
        for l in 0..self.n_layers() {
            let (w, b) = (self.weights(l), self.biases(l));
            let fan_in = self.sizes[l];
            let last = l + 1 == self.n_layers();
            act = b
                .iter()
                .enumerate()
                .map(|(j, bj)| {
                    let z = bj + w[j * fan_in..(j + 1) * fan_in].iter().zip(&act).map(|(a, b)| a * b).sum::<f64>();
                    if last {
                        z
                    } else {
                        tanh(z)
                    }
                })
                .collect();
        }
        (act[0], act[1])
    }

    /// Batched evaluation that keeps every layer's activations for a later
    /// reverse pass.
    pub fn forward_tape(&self, points: &[[f64; 2]]) -> Tape {
        let n = points.len();
        let mut acts = Vec::with_capacity(self.sizes.len());
        let input: Vec<f64> = points
            .iter()
            .flat_map(|p| [p[0] / self.input_scale, p[1] / self.input_scale])
            .collect();
        acts.push(input);
        for l in 0..self.n_layers() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let b = self.biases(l);
            let mut z = Vec::with_capacity(n * fan_out);
            for _ in 0..n {
                z.extend_from_slice(b);
            }
            let a = &acts[l];
            let w = self.weights(l);
            // z (n x out) += a (n x in) * w^T (in x out)
            unsafe {
                matrixmultiply::dgemm(
                    n,
                    fan_in,
                    fan_out,
                    1.0,
                    a.as_ptr(),
                    fan_in as isize,
                    1,
                    w.as_ptr(),
                    1,
                    fan_in as isize,
                    1.0,
                    z.as_mut_ptr(),
                    fan_out as isize,
                    1,
                );
            }
            if l + 1 < self.n_layers() {
                z.iter_mut().for_each(|v| *v = tanh(*v));
            }
            acts.push(z);
        }
        Tape { n, acts }
    }

    /// Reverse pass: given `d loss / d output` (`n x 2`, row-major) for the
    /// points recorded on `tape`, adds `d loss / d params` into `grad`.
    pub fn backward(&self, tape: &Tape, d_out: &[f64], grad: &mut [f64]) -> Result<(), NetError> {
        let n = tape.n;
        if d_out.len() != 2 * n {
            return Err(NetError::Shape { expected: 2 * n, got: d_out.len() });
        }
        if grad.len() < self.n_params() {
            return Err(NetError::Shape { expected: self.n_params(), got: grad.len() });
        }
        let mut delta = d_out.to_vec();
        for l in (0..self.n_layers()).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let a = &tape.acts[l];
            let off = self.offsets[l];
            let (gw, rest) = grad[off..].split_at_mut(fan_in * fan_out);
            // gw (out x in) += delta^T (out x n) * a (n x in)
            unsafe {
                matrixmultiply::dgemm(
                    fan_out,
                    n,
                    fan_in,
                    1.0,
                    delta.as_ptr(),
                    1,
                    fan_out as isize,
                    a.as_ptr(),
                    fan_in as isize,
                    1,
                    1.0,
                    gw.as_mut_ptr(),
                    fan_in as isize,
                    1,
                );
            }
            let gb = &mut rest[..fan_out];
            for row in delta.chunks_exact(fan_out) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            if l == 0 {
                break;
            }
            // d a (n x in) = delta (n x out) * w (out x in), then through tanh.
            let mut da = vec![0.0; n * fan_in];
            unsafe {
                matrixmultiply::dgemm(
                    n,
                    fan_out,
                    fan_in,
                    1.0,
                    delta.as_ptr(),
                    fan_out as isize,
                    1,
                    self.weights(l).as_ptr(),
                    fan_in as isize,
                    1,
                    0.0,
                    da.as_mut_ptr(),
                    fan_in as isize,
                    1,
                );
            }
            for (d, a) in da.iter_mut().zip(a) {
                *d *= 1.0 - a * a;
            }
            delta = da;
        }
        Ok(())
    }
}

/// Taylor coefficients of `tanh` in odd powers, `x^3` through `x^17`.
const TANH_SERIES: [f64; 8] = [
    -3.333_333_333_333_333_15e-1,
    1.333_333_333_333_333_31e-1,
    -5.396_825_396_825_397_08e-2,
    2.186_948_853_615_520_30e-2,
    -8.863_235_529_902_197_33e-3,
    3.592_128_036_572_481_14e-3,
    -1.455_834_387_051_318_33e-3,
    5.900_274_409_455_859_47e-4,
];

/// `tanh` within a few ulp of libm: a truncated series below 0.125, where
/// the omitted terms are under 1e-17 relative, and one `exp` call above.
#[inline]
pub fn tanh(x: f64) -> f64 {
    let ax = x.abs();
    if ax < 0.125 {
        let x2 = x * x;
        let p = TANH_SERIES.iter().rev().fold(0.0f64, |acc, &c| acc * x2 + c);
        // `x + 0.0` would lose the sign of a negative zero.
        return if x == 0.0 { x } else { x + x * x2 * p };
    }
    let e = (-2.0 * ax).exp();
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Activations recorded by [`Mlp::forward_tape`]; `acts[0]` holds the scaled
/// inputs and the last entry the network outputs.
#[derive(Debug, Clone)]
pub struct Tape {
    n: usize,
    acts: Vec<Vec<f64>>,
}

impl Tape {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Network output `(u, v)` for row `i`.
    #[inline]
    pub fn output(&self, i: usize) -> (f64, f64) {
        let out = self.acts.last().expect("tape has an output layer");
        (out[2 * i], out[2 * i + 1])
    }
}

/// Which of the five trainable PDE parameters an inverse run may change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamMask {
    pub d1: bool,
    pub d2: bool,
    pub alpha: bool,
    pub beta: bool,
    pub r1: bool,
}

impl ParamMask {
    pub fn is_trainable(&self, id: ParamId) -> bool {
        match id {
            ParamId::D1 => self.d1,
            ParamId::D2 => self.d2,
            ParamId::Alpha => self.alpha,
            ParamId::Beta => self.beta,
            ParamId::R1 => self.r1,
            ParamId::R2 => false,
        }
    }

    pub fn trainable(&self) -> Vec<ParamId> {
        ParamId::TRAINABLE.into_iter().filter(|&id| self.is_trainable(id)).collect()
    }

    pub fn only(ids: &[ParamId]) -> Self {
        let mut m = ParamMask::default();
        for id in ids {
            match id {
                ParamId::D1 => m.d1 = true,
                ParamId::D2 => m.d2 = true,
                ParamId::Alpha => m.alpha = true,
                ParamId::Beta => m.beta = true,
                ParamId::R1 => m.r1 = true,
                ParamId::R2 => {}
            }
        }
        m
    }
}

/// A network together with the PDE parameters it is trained against.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainableSet {
    pub net: Mlp,
    params: RdParams,
    pub mask: ParamMask,
}

impl TrainableSet {
    pub fn new(net: Mlp, params: RdParams, mask: ParamMask) -> Self {
        TrainableSet { net, params, mask }
    }

    pub fn params(&self) -> &RdParams {
        &self.params
    }

    /// Length of the flat trainable vector: network parameters + 5.
    pub fn n_flat(&self) -> usize {
        self.net.n_params() + ParamId::TRAINABLE.len()
    }

    /// Flat index of a PDE parameter.
    pub fn flat_index(&self, id: ParamId) -> Option<usize> {
        ParamId::TRAINABLE.iter().position(|&t| t == id).map(|k| self.net.n_params() + k)
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.net.params().to_vec();
        v.extend(ParamId::TRAINABLE.iter().map(|&id| self.params.get(id)));
        v
    }

    /// Overwrites every flat entry, masked ones included. Intended for
    /// checkpoints and finite-difference probes.
    pub fn set_flat(&mut self, values: &[f64]) -> Result<(), NetError> {
        if values.len() != self.n_flat() {
            return Err(NetError::Shape { expected: self.n_flat(), got: values.len() });
        }
        let n = self.net.n_params();
        let mut p = self.params;
        for (k, &id) in ParamId::TRAINABLE.iter().enumerate() {
            p = p.with(id, values[n + k])?;
        }
        self.net.set_params(&values[..n])?;
        self.params = p;
        Ok(())
    }

    /// Name of a flat entry, for diagnostics.
    pub fn flat_name(&self, index: usize) -> String {
        let n = self.net.n_params();
        if index >= n {
            return ParamId::TRAINABLE.get(index - n).map_or("?".into(), |id| id.name().to_string());
        }
        let l = (0..self.net.n_layers()).find(|&l| self.net.layer_range(l).contains(&index)).unwrap_or(0);
        let local = index - self.net.layer_range(l).start;
        let n_w = self.net.layer_sizes()[l] * self.net.layer_sizes()[l + 1];
        if local < n_w {
            let fan_in = self.net.layer_sizes()[l];
            format!("layer{l}.w[{}][{}]", local / fan_in, local % fan_in)
        } else {
            format!("layer{l}.b[{}]", local - n_w)
        }
    }
}

/// Adam moments for every flat trainable entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
    /// Number of times `beta` had to be pushed off zero.
    pub beta_nudges: u64,
}

impl AdamState {
    pub fn new(n: usize, lr: f64) -> Self {
        AdamState { lr, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, step: 0, m: vec![0.0; n], v: vec![0.0; n], beta_nudges: 0 }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One bias-corrected Adam update. Masked PDE entries are left untouched
    /// (their moments too), and `gamma` follows `alpha` automatically.
    pub fn step(&mut self, ts: &mut TrainableSet, grads: &[f64]) -> Result<(), NetError> {
        let n_flat = ts.n_flat();
        if grads.len() != n_flat || self.m.len() != n_flat {
            return Err(NetError::Shape { expected: n_flat, got: grads.len().min(self.m.len()) });
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.epsilon);
        let mut update = |i: usize, x: &mut f64| {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            *x -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        let n_net = ts.net.n_params();
        for (i, x) in ts.net.params_mut().iter_mut().enumerate() {
            update(i, x);
        }
        let mut p = ts.params;
        let mut nudged = false;
        for (k, &id) in ParamId::TRAINABLE.iter().enumerate() {
            if !ts.mask.is_trainable(id) {
                continue;
            }
            let old = p.get(id);
            let mut x = old;
            update(n_net + k, &mut x);
            if id == ParamId::Beta && x.abs() < BETA_FLOOR {
                let dir = if x != 0.0 { x.signum() } else { (x - old).signum() };
                x = BETA_FLOOR * if dir == 0.0 { 1.0 } else { dir };
                nudged = true;
            }
            p = p.with(id, x)?;
        }
        if nudged {
            self.beta_nudges += 1;
            log::warn!("beta reached zero at step {}; nudged to {}", self.step, p.beta());
        }
        ts.params = p;
        Ok(())
    }
}

/// Header of a binary checkpoint; the payload that follows the header line
/// is the flat trainable vector as little-endian `f64`s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub layer_sizes: Vec<usize>,
    pub input_scale: f64,
    pub mask: ParamMask,
    pub step: u64,
    pub r2: f64,
    pub n_values: usize,
}

pub fn write_checkpoint<W: std::io::Write>(mut w: W, ts: &TrainableSet, step: u64) -> Result<(), NetError> {
    let flat = ts.flat();
    let header = CheckpointHeader {
        layer_sizes: ts.net.layer_sizes().to_vec(),
        input_scale: ts.net.input_scale(),
        mask: ts.mask,
        step,
        r2: ts.params().r2(),
        n_values: flat.len(),
    };
    let line = serde_json::to_string(&header).map_err(|e| NetError::Checkpoint(e.to_string()))?;
    w.write_all(line.as_bytes())?;
    w.write_all(b"\n")?;
    for x in flat {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<(TrainableSet, u64), NetError> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| NetError::Checkpoint("missing header line".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| NetError::Checkpoint(e.to_string()))?;
    let payload = &bytes[nl + 1..];
    if payload.len() != 8 * header.n_values {
        return Err(NetError::Checkpoint(format!(
            "payload has {} bytes, header promises {} values",
            payload.len(),
            header.n_values
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let net = Mlp::zeros(&header.layer_sizes, header.input_scale)?;
    // Placeholder parameters; every trainable slot is overwritten below.
    let params = RdParams::new(0.0, 0.0, 0.0, 1.0, 0.0, header.r2)?;
    let mut ts = TrainableSet::new(net, params, header.mask);
    ts.set_flat(&values)?;
    Ok((ts, header.step))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{params_for_pattern, PatternId};

    #[test]
    fn tanh_matches_libm() {
        let mut worst = 0.0f64;
        for i in -400_000..=400_000 {
            let x = i as f64 * 5e-5;
            let (a, b) = (tanh(x), x.tanh());
            worst = worst.max((a - b).abs() / b.abs().max(f64::MIN_POSITIVE));
        }
        assert!(worst < 1e-15, "{worst}");
        assert_eq!(tanh(800.0), 1.0);
        assert_eq!(tanh(-800.0), -1.0);
        assert!(tanh(f64::NAN).is_nan());
        assert_eq!(tanh(-0.0).to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = Mlp::new(&DEFAULT_LAYERS, 100.0, 5).unwrap();
        assert_eq!(a, Mlp::new(&DEFAULT_LAYERS, 100.0, 5).unwrap());
        assert_ne!(a, Mlp::new(&DEFAULT_LAYERS, 100.0, 6).unwrap());
        assert_eq!(a.n_params(), 2 * 64 + 64 + 3 * (64 * 64 + 64) + 64 * 2 + 2);
        for l in 0..a.n_layers() {
            let bound = glorot_bound(a.layer_sizes()[l], a.layer_sizes()[l + 1]);
            assert!(a.weights(l).iter().all(|w| w.abs() <= bound));
            assert!(a.biases(l).iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn rejects_bad_layouts() {
        assert!(Mlp::zeros(&[2, 2], 1.0).is_err());
        assert!(Mlp::zeros(&[3, 4, 2], 1.0).is_err());
        assert!(Mlp::zeros(&[2, 0, 2], 1.0).is_err());
        assert!(Mlp::zeros(&[2, 4, 2], 0.0).is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&DEFAULT_LAYERS, 100.0).unwrap();
        assert_eq!(net.forward(37.0, -12.0), (0.0, 0.0));
    }

    #[test]
    fn one_hidden_neuron_closed_form() {
        let mut net = Mlp::zeros(&[2, 1, 2], 10.0).unwrap();
        // layer0: w = [0.3, -0.7], b = 0.1; layer1: w = [[1.5], [-2.0]], b = [0.25, -0.5]
        net.set_params(&[0.3, -0.7, 0.1, 1.5, -2.0, 0.25, -0.5]).unwrap();
        let (x, y) = (4.0, 3.0);
        let h = (0.3 * x / 10.0 - 0.7 * y / 10.0 + 0.1f64).tanh();
        let (u, v) = net.forward(x, y);
        assert!((u - (1.5 * h + 0.25)).abs() < 1e-15);
        assert!((v - (-2.0 * h - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn batch_matches_single_points() {
        let net = Mlp::new(&DEFAULT_LAYERS, 100.0, 1).unwrap();
        let pts: Vec<[f64; 2]> = (0..17).map(|i| [i as f64 * 11.0 - 90.0, 50.0 - i as f64 * 6.5]).collect();
        let tape = net.forward_tape(&pts);
        for (i, p) in pts.iter().enumerate() {
            let (u, v) = net.forward(p[0], p[1]);
            let (bu, bv) = tape.output(i);
            assert!((u - bu).abs() < 1e-13 && (v - bv).abs() < 1e-13);
        }
    }

    #[test]
    fn input_scaling_is_exact() {
        let net = Mlp::new(&[2, 8, 8, 2], 100.0, 3).unwrap();
        let mut unscaled = net.clone();
        unscaled.input_scale = 1.0;
        for &(x, y) in &[(50.0, -25.0), (-100.0, 100.0), (0.0, 3.0)] {
            assert_eq!(net.forward(x, y), unscaled.forward(x / 100.0, y / 100.0));
        }
    }

    fn sample_set(seed: u64) -> TrainableSet {
        let net = Mlp::new(&[2, 5, 4, 2], 3.0, seed).unwrap();
        TrainableSet::new(net, params_for_pattern(PatternId::P), ParamMask::only(&[ParamId::Alpha]))
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut ts = sample_set(9);
        // Non-zero biases exercise every path.
        let mut flat = ts.flat();
        for (i, x) in flat.iter_mut().enumerate().take(ts.net.n_params()) {
            *x += 0.05 * ((i as f64) * 0.7).sin();
        }
        ts.set_flat(&flat).unwrap();
        let pts = [[0.5, -1.0], [2.0, 1.5], [-2.5, 0.3]];
        let weights = [0.7, -1.3, 0.4, 2.0, -0.6, 1.1];
        let objective = |net: &Mlp| {
            pts.iter()
                .enumerate()
                .map(|(i, p)| {
                    let (u, v) = net.forward(p[0], p[1]);
                    weights[2 * i] * u * u + weights[2 * i + 1] * v.powi(3)
                })
                .sum::<f64>()
        };
        let tape = ts.net.forward_tape(&pts);
        let d_out: Vec<f64> = (0..pts.len())
            .flat_map(|i| {
                let (u, v) = tape.output(i);
                [2.0 * weights[2 * i] * u, 3.0 * weights[2 * i + 1] * v * v]
            })
            .collect();
        let mut grad = vec![0.0; ts.net.n_params()];
        ts.net.backward(&tape, &d_out, &mut grad).unwrap();
        let h = 1e-6;
        for i in 0..ts.net.n_params() {
            let mut plus = ts.net.clone();
            plus.params_mut()[i] += h;
            let mut minus = ts.net.clone();
            minus.params_mut()[i] -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
            assert!(rel < 1e-5 || (fd - grad[i]).abs() < 1e-10, "{}: fd {fd} bp {}", ts.flat_name(i), grad[i]);
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut ts = sample_set(1);
        let before = ts.flat();
        let mut adam = AdamState::new(ts.n_flat(), 2.5e-4);
        let zeros = vec![0.0; ts.n_flat()];
        adam.step(&mut ts, &zeros).unwrap();
        assert_eq!(before, ts.flat());
    }

    #[test]
    fn adam_first_step_by_hand() {
        let mut ts = sample_set(2);
        let before = ts.flat();
        let mut g = vec![0.0; ts.n_flat()];
        g[0] = 0.3;
        let a = ts.flat_index(ParamId::Alpha).unwrap();
        g[a] = -2.0;
        let mut adam = AdamState::new(ts.n_flat(), 1e-3);
        adam.step(&mut ts, &g).unwrap();
        // m_hat = g, v_hat = g^2 after one step, so delta = -lr * g / (|g| + eps).
        let expect0 = before[0] - 1e-3 * 0.3 / (0.3 + 1e-8);
        assert!((ts.flat()[0] - expect0).abs() < 1e-16);
        let expect_a = before[a] + 1e-3 * 2.0 / (2.0 + 1e-8);
        assert!((ts.params().alpha() - expect_a).abs() < 1e-15);
        assert_eq!(ts.params().gamma(), -ts.params().alpha());
    }

    #[test]
    fn adam_respects_mask_and_gamma_tie() {
        let mut ts = sample_set(4);
        let fixed = *ts.params();
        let mut adam = AdamState::new(ts.n_flat(), 1e-2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let g: Vec<f64> = (0..ts.n_flat()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            adam.step(&mut ts, &g).unwrap();
            for id in [ParamId::D1, ParamId::D2, ParamId::Beta, ParamId::R1, ParamId::R2] {
                assert_eq!(ts.params().get(id).to_bits(), fixed.get(id).to_bits());
            }
            assert_eq!(ts.params().gamma(), -ts.params().alpha());
        }
        assert_ne!(ts.params().alpha(), fixed.alpha());
        assert!(adam.step(&mut ts, &[0.0; 3]).is_err());
    }

    #[test]
    fn adam_pushes_beta_off_zero() {
        let net = Mlp::zeros(&[2, 2, 2], 1.0).unwrap();
        let p = RdParams::new(0.0, 0.0, 0.0, 5e-4, 0.0, 0.0).unwrap();
        let mut ts = TrainableSet::new(net, p, ParamMask::only(&[ParamId::Beta]));
        let mut adam = AdamState::new(ts.n_flat(), 5e-4);
        let mut g = vec![0.0; ts.n_flat()];
        g[ts.flat_index(ParamId::Beta).unwrap()] = 1.0;
        adam.step(&mut ts, &g).unwrap();
        assert_eq!(ts.params().beta(), BETA_FLOOR);
        assert_eq!(adam.beta_nudges, 1);
    }

    #[test]
    fn checkpoint_round_trip() {
        let ts = sample_set(12);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ts, 77).unwrap();
        let (back, step) = read_checkpoint(&buf).unwrap();
        assert_eq!(step, 77);
        assert_eq!(back.flat(), ts.flat());
        assert_eq!(back.mask, ts.mask);
        assert_eq!(back.net, ts.net);
        assert!(read_checkpoint(&buf[..buf.len() - 3]).is_err());
    }
}
