//! Feed-forward surrogate `(x0, t) -> x_hat(t)` with an exact time
//! derivative (forward mode) and exact parameter gradients (reverse mode,
//! including the reverse-over-forward path through `d x_hat / dt`).

mod io;

pub use io::{load_model, save_model, Provenance, MODEL_FORMAT_VERSION};

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::InputDomain;

/// Rows per shard for batched gradient work. Fixed so that results do not
/// depend on the number of threads.
pub const SHARD_ROWS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
}

/// Min-max map of every raw input onto `[-1, 1]`:
/// `u = 2 (v - lo) / width - 1`, or `u = 0` when `width == 0`.
/// The last input is time.
#[derive(Debug, Clone, PartialEq)]
pub struct InputNorm {
    pub lo: Vec<f64>,
    pub width: Vec<f64>,
}

impl InputNorm {
    pub fn new(lo: Vec<f64>, width: Vec<f64>) -> Result<Self> {
        if lo.len() != width.len() || lo.is_empty() {
            return Err(Error::InvalidDims("normalization vectors must have equal nonzero length".into()));
        }
        if lo.iter().chain(&width).any(|v| !v.is_finite()) || width.iter().any(|w| *w < 0.0) {
            return Err(Error::InvalidDims("normalization bounds must be finite with width >= 0".into()));
        }
        if *width.last().unwrap() <= 0.0 {
            return Err(Error::InvalidDims("time input needs a positive width".into()));
        }
        Ok(Self { lo, width })
    }

    pub fn from_domain(domain: &InputDomain, horizon: f64) -> Result<Self> {
        let mut lo: Vec<f64> = domain.bounds().iter().map(|b| b.0).collect();
        let mut width: Vec<f64> = domain.bounds().iter().map(|b| b.1 - b.0).collect();
        lo.push(0.0);
        width.push(horizon);
        Self::new(lo, width)
    }

    pub fn len(&self) -> usize {
        self.lo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lo.is_empty()
    }

    pub fn apply(&self, raw: f64, i: usize) -> f64 {
        if self.width[i] > 0.0 {
            2.0 * (raw - self.lo[i]) / self.width[i] - 1.0
        } else {
            0.0
        }
    }

    /// Seconds represented by one unit of normalized time.
    pub fn time_scale(&self) -> f64 {
        0.5 * self.width[self.len() - 1]
    }

    fn normalize(&self, raw: ArrayView2<f64>) -> Array2<f64> {
        let mut u = raw.to_owned();
        for (i, mut col) in u.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| self.apply(v, i));
        }
        u
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    dims: Vec<usize>,
    /// Layer `l` maps width `dims[l]` to `dims[l + 1]`; stored `out x in`.
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    activation: Activation,
    norm: InputNorm,
    seed: u64,
    pub provenance: Provenance,
}

/// Forward-pass record for one batch.
pub struct Tape {
    /// Input to every layer; `acts[0]` is the normalized network input.
    acts: Vec<Array2<f64>>,
    /// Time tangents of `acts[1..]`; empty when no tangent was propagated.
    tangents: Vec<Array2<f64>>,
    pub output: Array2<f64>,
    pub output_dot: Option<Array2<f64>>,
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::InvalidDims(format!("need at least 2 layer widths, got {dims:?}")));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidDims(format!("zero-width layer in {dims:?}")));
    }
    if dims[0] < 2 {
        return Err(Error::InvalidDims("input must hold at least one state and time".into()));
    }
    Ok(())
}

pub fn n_params_for(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Xavier-uniform weights and zero biases with a default normalization of
/// `[-1, 1]` per input (time over `[0, 1]`).
pub fn init_mlp(dims: &[usize], seed: u64) -> Result<MlpModel> {
    check_dims(dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::with_capacity(dims.len() - 1);
    let mut biases = Vec::with_capacity(dims.len() - 1);
    for w in dims.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        weights.push(Array2::from_shape_simple_fn((fan_out, fan_in), || rng.random_range(-a..a)));
        biases.push(Array1::zeros(fan_out));
    }
    let n_in = dims[0];
    let mut lo = vec![-1.0; n_in];
    let mut width = vec![2.0; n_in];
    lo[n_in - 1] = 0.0;
    width[n_in - 1] = 1.0;
    Ok(MlpModel {
        dims: dims.to_vec(),
        weights,
        biases,
        activation: Activation::Tanh,
        norm: InputNorm::new(lo, width)?,
        seed,
        provenance: Provenance::default(),
    })
}

impl MlpModel {
    pub fn with_norm(mut self, norm: InputNorm) -> Result<Self> {
        if norm.len() != self.dims[0] {
            return Err(Error::DimensionMismatch { expected: self.dims[0], got: norm.len() });
        }
        self.norm = norm;
        Ok(self)
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn norm(&self) -> &InputNorm {
        &self.norm
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn n_params(&self) -> usize {
        n_params_for(&self.dims)
    }

    /// Flat parameters: per layer, the weight matrix row-major then the bias.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            p.extend(w.iter());
            p.extend(b.iter());
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return Err(Error::DimensionMismatch { expected: self.n_params(), got: p.len() });
        }
        let mut k = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for v in w.iter_mut().chain(b.iter_mut()) {
                *v = p[k];
                k += 1;
            }
        }
        Ok(())
    }

    pub(crate) fn from_parts(
        dims: Vec<usize>,
        params: &[f64],
        activation: Activation,
        norm: InputNorm,
        seed: u64,
        provenance: Provenance,
    ) -> Result<Self> {
        check_dims(&dims)?;
        let mut m = MlpModel {
            weights: dims.windows(2).map(|w| Array2::zeros((w[1], w[0]))).collect(),
            biases: dims.windows(2).map(|w| Array1::zeros(w[1])).collect(),
            dims,
            activation,
            norm: InputNorm::new(vec![0.0; 1], vec![1.0; 1])?,
            seed,
            provenance,
        };
        m.set_params(params)?;
        m.with_norm(norm)
    }

    fn check_input(&self, inputs: ArrayView2<f64>) -> Result<()> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: inputs.ncols() });
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(())
    }

    /// Runs the network on raw inputs (rows `[x0.., t]`), optionally
    /// carrying the tangent `d/dt`, and keeps what the backward pass needs.
    pub fn forward_tape(&self, inputs: ArrayView2<f64>, with_time_tangent: bool) -> Result<Tape> {
        self.check_input(inputs)?;
        let n_layers = self.weights.len();
        let mut acts = Vec::with_capacity(n_layers);
        let mut tangents = Vec::new();
        let mut a = self.norm.normalize(inputs);
        let mut a_dot: Option<Array2<f64>> = None;
        let t_col = self.input_dim() - 1;
        let t_rate = 1.0 / self.norm.time_scale();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = a.dot(&w.t());
            z += b;
            let z_dot = if !with_time_tangent {
                None
            } else if let Some(ad) = &a_dot {
                Some(ad.dot(&w.t()))
            } else {
                let row = w.column(t_col).mapv(|v| v * t_rate);
                Some(row.broadcast((a.nrows(), row.len())).unwrap().to_owned())
            };
            acts.push(a);
            if l + 1 == n_layers {
                return Ok(Tape { acts, tangents, output: z, output_dot: z_dot });
            }
            match self.activation {
                Activation::Tanh => {
                    z.mapv_inplace(f64::tanh);
                    if let Some(mut zd) = z_dot {
                        Zip::from(&mut zd).and(&z).for_each(|d, &h| *d *= 1.0 - h * h);
                        tangents.push(zd.clone());
                        a_dot = Some(zd);
                    }
                }
                Activation::Identity => {
                    if let Some(zd) = z_dot {
                        tangents.push(zd.clone());
                        a_dot = Some(zd);
                    }
                }
            }
            a = z;
        }
        unreachable!("at least one layer")
    }

    /// Batched forward pass; rows are `[x0.., t]` in physical units.
    pub fn forward_batch(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_tape(inputs, false)?.output)
    }

    /// Batched forward pass returning `(x_hat, d x_hat / dt)` in state units
    /// per second.
    pub fn forward_with_time_derivative(&self, inputs: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let tape = self.forward_tape(inputs, true)?;
        Ok((tape.output, tape.output_dot.expect("tangent requested")))
    }

    /// Batched forward pass over fixed-size shards, for large batches.
    pub fn predict(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(inputs)?;
        let n = inputs.nrows();
        if n <= SHARD_ROWS {
            return self.forward_batch(inputs);
        }
        let parts = map_shards(n, |r| self.forward_batch(inputs.slice(s![r, ..])))?;
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        Ok(ndarray::concatenate(Axis(0), &views).expect("equal widths"))
    }

    pub fn forward(&self, x0: &[f64], t: f64) -> Result<Vec<f64>> {
        let row = single_row(x0, t);
        Ok(self.forward_batch(row.view())?.into_raw_vec_and_offset().0)
    }

    pub fn time_derivative(&self, x0: &[f64], t: f64) -> Result<Vec<f64>> {
        let row = single_row(x0, t);
        let (_, dot) = self.forward_with_time_derivative(row.view())?;
        Ok(dot.into_raw_vec_and_offset().0)
    }

    /// Gradient of a scalar loss with respect to the flat parameters, given
    /// the loss adjoints of the outputs (`y_bar`) and of their time
    /// derivatives (`y_dot_bar`, which needs a tape with tangents).
    pub fn backward(
        &self,
        tape: &Tape,
        y_bar: Option<&Array2<f64>>,
        y_dot_bar: Option<&Array2<f64>>,
    ) -> Result<Vec<f64>> {
        let n = tape.output.nrows();
        let n_layers = self.weights.len();
        let has_dot = y_dot_bar.is_some();
        if has_dot && tape.output_dot.is_none() {
            return Err(Error::InvalidDims("time adjoint needs a tape with tangents".into()));
        }
        let out_shape = (n, self.output_dim());
        let mut g = y_bar.cloned().unwrap_or_else(|| Array2::zeros(out_shape));
        let mut g_dot = y_dot_bar.cloned();
        let mut grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(n_layers);
        let t_col = self.input_dim() - 1;
        let t_rate = 1.0 / self.norm.time_scale();
        for l in (0..n_layers).rev() {
            let a_in = &tape.acts[l];
            let w = &self.weights[l];
            let mut w_bar = g.t().dot(a_in);
            let b_bar = g.sum_axis(Axis(0));
            if let Some(gd) = &g_dot {
                if l == 0 {
                    let col = gd.sum_axis(Axis(0)) * t_rate;
                    let mut c = w_bar.column_mut(t_col);
                    c += &col;
                } else {
                    w_bar += &gd.t().dot(&tape.tangents[l - 1]);
                }
            }
            grads.push((w_bar, b_bar));
            if l == 0 {
                break;
            }
            let a_bar = g.dot(w);
            let a_dot_bar = g_dot.as_ref().map(|gd| gd.dot(w));
            let h = &tape.acts[l];
            match self.activation {
                Activation::Tanh => {
                    let mut z_bar = a_bar;
                    Zip::from(&mut z_bar).and(h).for_each(|zb, &a| *zb *= 1.0 - a * a);
                    if let Some(mut adb) = a_dot_bar {
                        let ad = &tape.tangents[l - 1];
                        Zip::from(&mut z_bar)
                            .and(&adb)
                            .and(h)
                            .and(ad)
                            .for_each(|zb, &adb, &a, &ad| *zb -= 2.0 * a * ad * adb);
                        Zip::from(&mut adb).and(h).for_each(|v, &a| *v *= 1.0 - a * a);
                        g_dot = Some(adb);
                    }
                    g = z_bar;
                }
                Activation::Identity => {
                    g = a_bar;
                    g_dot = a_dot_bar;
                }
            }
        }
        let mut flat: Vec<f64> = Vec::with_capacity(self.n_params());
        for (w_bar, b_bar) in grads.iter().rev() {
            flat.extend(w_bar.iter());
            flat.extend(b_bar.iter());
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss { epoch: None });
        }
        Ok(flat)
    }
}

fn single_row(x0: &[f64], t: f64) -> Array2<f64> {
    let mut row = Array2::zeros((1, x0.len() + 1));
    row.slice_mut(s![0, ..x0.len()]).assign(&ndarray::ArrayView1::from(x0));
    row[[0, x0.len()]] = t;
    row
}

/// Splits `0..n` into fixed-size shards, maps each in parallel and returns
/// the results in shard order.
pub fn map_shards<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> Result<T> + Sync,
{
    let starts: Vec<usize> = (0..n).step_by(SHARD_ROWS).collect();
    starts
        .par_iter()
        .map(|&s| f(s..(s + SHARD_ROWS).min(n)))
        .collect()
}

/// Elementwise sum of equal-length vectors, in order.
pub fn sum_in_order(parts: impl IntoIterator<Item = Vec<f64>>) -> Option<Vec<f64>> {
    let mut it = parts.into_iter();
    let mut acc = it.next()?;
    for p in it {
        for (a, v) in acc.iter_mut().zip(&p) {
            *a += v;
        }
    }
    Some(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_inputs(n: usize, d_in: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((n, d_in), || rng.random_range(-1.0..1.0))
    }

    fn small_net(seed: u64) -> MlpModel {
        let mut m = init_mlp(&[3, 5, 2], seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let p: Vec<f64> = (0..m.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        m.set_params(&p).unwrap();
        m.with_norm(InputNorm::new(vec![-1.0, 0.5, 0.0], vec![2.0, 3.0, 0.7]).unwrap())
            .unwrap()
    }

    #[test]
    fn reference_parameter_count() {
        let m = init_mlp(&[10, 64, 64, 64, 64, 9], 1).unwrap();
        assert_eq!(m.n_params(), 13_769);
        assert_eq!(10 * 64 + 64 + 3 * (64 * 64 + 64) + 64 * 9 + 9, 13_769);
        assert!(m.biases().iter().all(|b| b.iter().all(|v| *v == 0.0)));
        let bound = (6.0f64 / 74.0).sqrt();
        assert!(m.weights()[0].iter().all(|w| w.abs() <= bound));
        let again = init_mlp(&[10, 64, 64, 64, 64, 9], 1).unwrap();
        assert_eq!(
            m.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            again.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_ne!(m.params(), init_mlp(&[10, 64, 64, 64, 64, 9], 2).unwrap().params());
    }

    #[test]
    fn invalid_dims() {
        assert!(matches!(init_mlp(&[3], 0), Err(Error::InvalidDims(_))));
        assert!(matches!(init_mlp(&[3, 0, 2], 0), Err(Error::InvalidDims(_))));
    }

    #[test]
    fn zero_weights_give_output_bias() {
        let mut m = init_mlp(&[3, 4, 2], 0).unwrap();
        let mut p = vec![0.0; m.n_params()];
        let n = p.len();
        p[n - 2] = 0.7;
        p[n - 1] = -1.5;
        m.set_params(&p).unwrap();
        assert_eq!(m.forward(&[0.3, -0.2], 0.4).unwrap(), vec![0.7, -1.5]);
        assert_eq!(m.time_derivative(&[0.3, -0.2], 0.4).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn batch_matches_single_bitwise() {
        let m = init_mlp(&[10, 64, 64, 64, 64, 9], 3).unwrap();
        let x = random_inputs(37, 10, 5);
        let (batch, batch_dot) = m.forward_with_time_derivative(x.view()).unwrap();
        for (i, row) in x.rows().into_iter().enumerate() {
            let v = row.to_vec();
            let single = m.forward(&v[..9], v[9]).unwrap();
            let single_dot = m.time_derivative(&v[..9], v[9]).unwrap();
            for j in 0..9 {
                assert_eq!(single[j].to_bits(), batch[[i, j]].to_bits());
                assert_eq!(single_dot[j].to_bits(), batch_dot[[i, j]].to_bits());
            }
        }
    }

    #[test]
    fn untrained_net_misses_initial_condition() {
        let m = init_mlp(&[3, 8, 2], 9).unwrap();
        let y = m.forward(&[0.5, -0.5], 0.0).unwrap();
        assert!(y.iter().zip([0.5, -0.5]).any(|(a, b)| (a - b).abs() > 1e-3));
    }

    #[test]
    fn normalization_hits_unit_bounds() {
        let dom = InputDomain::from_bounds(vec![(-2.0, 2.0), (1.08, 1.08), (0.3, 0.9)]).unwrap();
        let norm = InputNorm::from_domain(&dom, 1.0).unwrap();
        assert_eq!(norm.apply(-2.0, 0), -1.0);
        assert_eq!(norm.apply(2.0, 0), 1.0);
        assert_eq!(norm.apply(0.3, 2), -1.0);
        assert_eq!(norm.apply(0.9, 2), 1.0);
        assert_eq!(norm.apply(1.08, 1), 0.0);
        assert_eq!(norm.apply(0.0, 3), -1.0);
        assert_eq!(norm.apply(1.0, 3), 1.0);
    }

    #[test]
    fn linear_identity_net_time_derivative() {
        let m = init_mlp(&[3, 2], 4).unwrap().with_activation(Activation::Identity);
        let m = m.with_norm(InputNorm::new(vec![0.0, 0.0, 0.0], vec![1.0, 1.0, 0.5]).unwrap()).unwrap();
        let dot = m.time_derivative(&[0.1, 0.2], 0.3).unwrap();
        let w = &m.weights()[0];
        for i in 0..2 {
            assert_eq!(dot[i], w[[i, 2]] * (1.0 / m.norm().time_scale()));
        }
    }

    #[test]
    fn time_derivative_matches_central_difference() {
        let m = init_mlp(&[4, 16, 16, 3], 11).unwrap();
        let m = m.with_norm(InputNorm::new(vec![-1.0; 4], vec![2.0, 2.0, 2.0, 1.0]).unwrap()).unwrap();
        let x0 = [0.2, -0.4, 0.9];
        for &t in &[0.0, 0.13, 0.5, 0.97] {
            let h = 1e-6;
            let dot = m.time_derivative(&x0, t).unwrap();
            let fp = m.forward(&x0, t + h).unwrap();
            let fm = m.forward(&x0, t - h).unwrap();
            for i in 0..3 {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                assert!((fd - dot[i]).abs() < 1e-6, "t={t} i={i}: {fd} vs {}", dot[i]);
            }
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        let m = init_mlp(&[3, 4, 2], 0).unwrap();
        assert!(matches!(m.forward(&[f64::NAN, 0.0], 0.0), Err(Error::NonFiniteInput)));
        assert!(matches!(
            m.forward_batch(array![[0.0, 1.0]].view()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    /// Loss `sum(c1 * y + c2 * y^2 / 2 + k1 * y_dot + k2 * y_dot^2 / 2)` with
    /// fixed random coefficients, so both adjoint paths are exercised.
    fn probe_loss(m: &MlpModel, x: &Array2<f64>, c: &[Array2<f64>; 4]) -> f64 {
        let (y, yd) = m.forward_with_time_derivative(x.view()).unwrap();
        (&c[0] * &y + &c[1] * &y * &y * 0.5 + &c[2] * &yd + &c[3] * &yd * &yd * 0.5).sum()
    }

    fn check_gradient(m: &MlpModel, use_y: bool, use_dot: bool) {
        let x = random_inputs(6, 3, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut coef = || Array2::from_shape_simple_fn((6, 2), || rng.random_range(-1.0..1.0));
        let zero = Array2::zeros((6, 2));
        let c: [Array2<f64>; 4] = if use_y && use_dot {
            [coef(), coef(), coef(), coef()]
        } else if use_y {
            [coef(), coef(), zero.clone(), zero.clone()]
        } else {
            [zero.clone(), zero.clone(), coef(), coef()]
        };
        let tape = m.forward_tape(x.view(), true).unwrap();
        let y_bar = &c[0] + &c[1] * &tape.output;
        let yd = tape.output_dot.as_ref().unwrap();
        let yd_bar = &c[2] + &c[3] * yd;
        let grad = m.backward(&tape, Some(&y_bar), Some(&yd_bar)).unwrap();
        let p0 = m.params();
        let mut mm = m.clone();
        let h = 1e-5;
        for k in 0..p0.len() {
            let mut p = p0.clone();
            p[k] += h;
            mm.set_params(&p).unwrap();
            let lp = probe_loss(&mm, &x, &c);
            p[k] -= 2.0 * h;
            mm.set_params(&p).unwrap();
            let lm = probe_loss(&mm, &x, &c);
            let fd = (lp - lm) / (2.0 * h);
            let rel = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-3);
            assert!(rel < 1e-5, "param {k}: fd {fd} vs {}", grad[k]);
        }
    }

    #[test]
    fn gradient_check_tanh() {
        for seed in 0..3 {
            let m = small_net(seed);
            check_gradient(&m, true, false);
            check_gradient(&m, false, true);
            check_gradient(&m, true, true);
        }
    }

    #[test]
    fn gradient_check_deep_and_identity() {
        let m = init_mlp(&[3, 6, 5, 2], 8).unwrap();
        check_gradient(&m, true, true);
        let m = small_net(4).with_activation(Activation::Identity);
        check_gradient(&m, true, true);
    }

    #[test]
    fn shards_are_ordered() {
        let parts: Vec<usize> = map_shards(2500, |r| Ok(r.start)).unwrap();
        assert_eq!(parts, vec![0, 1024, 2048]);
        assert_eq!(sum_in_order(vec![vec![1.0, 2.0], vec![3.0, 4.0]]), Some(vec![4.0, 6.0]));
    }

    proptest! {
        #[test]
        fn param_round_trip(seed in any::<u64>()) {
            let mut m = init_mlp(&[4, 7, 3], seed).unwrap();
            let p = m.params();
            m.set_params(&p).unwrap();
            prop_assert_eq!(m.params(), p);
        }

        #[test]
        fn forward_is_deterministic(seed in 0u64..50, t in 0.0..1.0f64) {
            let m = init_mlp(&[3, 8, 8, 2], seed).unwrap();
            let a = m.forward(&[0.1, 0.2], t).unwrap();
            let b = m.forward(&[0.1, 0.2], t).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
