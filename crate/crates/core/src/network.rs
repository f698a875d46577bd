//! Lite correction network: `FC → LayerNorm → GELU → FC`, with its
//! reverse-mode gradient written out by hand.
//!
//! One net maps a node's flattened `T'·C` forecast slice to a same-width
//! correction. Weights are shared across nodes, so a batch is simply one row
//! per node.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    /// `x·Φ(x)` with the erf-based normal CDF.
    #[default]
    Gelu,
    /// The tanh approximation of GELU.
    GeluTanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Gelu => "gelu",
            Activation::GeluTanh => "gelu-tanh",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "gelu" => Some(Activation::Gelu),
            "gelu-tanh" => Some(Activation::GeluTanh),
            _ => None,
        }
    }

    #[inline]
    fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Gelu => gelu(x),
            Activation::GeluTanh => gelu_tanh(x),
        }
    }

    /// Value and derivative, bit-identical to `apply` and the `*_grad`
    /// functions but sharing the CDF or tanh evaluation.
    #[inline]
    fn apply_with_derivative<S: Scalar>(self, x: S) -> (S, S) {
        match self {
            Activation::Gelu => {
                let cdf = normal_cdf(x);
                let pdf = S::lit(NORMAL_PDF_AT_ZERO) * (-(x * x) * S::lit(0.5)).exp();
                (x * cdf, cdf + x * pdf)
            }
            Activation::GeluTanh => {
                let u = S::lit(SQRT_2_OVER_PI) * (x + S::lit(TANH_CUBIC) * x * x * x);
                let th = u.tanh();
                let du = S::lit(SQRT_2_OVER_PI) * (S::one() + S::lit(3.0 * TANH_CUBIC) * x * x);
                let value = S::lit(0.5) * x * (S::one() + th);
                (value, S::lit(0.5) * (S::one() + th) + S::lit(0.5) * x * (S::one() - th * th) * du)
            }
        }
    }
}

const NORMAL_PDF_AT_ZERO: f64 = 0.398_942_280_401_432_7;

/// Standard normal CDF.
#[inline]
pub fn normal_cdf<S: Scalar>(x: S) -> S {
    S::lit(0.5) * (S::one() + (x * S::lit(std::f64::consts::FRAC_1_SQRT_2)).error_function())
}

#[inline]
pub fn gelu<S: Scalar>(x: S) -> S {
    x * normal_cdf(x)
}

/// `Φ(x) + x·φ(x)`.
#[inline]
pub fn gelu_grad<S: Scalar>(x: S) -> S {
    let pdf = S::lit(NORMAL_PDF_AT_ZERO) * (-(x * x) * S::lit(0.5)).exp();
    normal_cdf(x) + x * pdf
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const TANH_CUBIC: f64 = 0.044_715;

#[inline]
pub fn gelu_tanh<S: Scalar>(x: S) -> S {
    let u = S::lit(SQRT_2_OVER_PI) * (x + S::lit(TANH_CUBIC) * x * x * x);
    S::lit(0.5) * x * (S::one() + u.tanh())
}

#[inline]
pub fn gelu_tanh_grad<S: Scalar>(x: S) -> S {
    let u = S::lit(SQRT_2_OVER_PI) * (x + S::lit(TANH_CUBIC) * x * x * x);
    let th = u.tanh();
    let du = S::lit(SQRT_2_OVER_PI) * (S::one() + S::lit(3.0 * TANH_CUBIC) * x * x);
    S::lit(0.5) * (S::one() + th) + S::lit(0.5) * x * (S::one() - th * th) * du
}

/// `gain ⊙ (v − mean) / sqrt(var + eps) + bias` with the population variance.
pub fn layer_norm<S: Scalar>(v: &[S], gain: &[S], bias: &[S], eps: S) -> Result<Vec<S>> {
    if v.len() != gain.len() || v.len() != bias.len() || v.is_empty() {
        return Err(Error::shape(format!(
            "layer norm lengths differ or are empty: v={}, gain={}, bias={}",
            v.len(),
            gain.len(),
            bias.len()
        )));
    }
    if eps < S::zero() {
        return Err(Error::config("layer norm eps must be non-negative"));
    }
    let (mean, var) = moments(v);
    if var + eps <= S::zero() {
        return Err(Error::degenerate("zero variance with eps = 0"));
    }
    let inv_std = S::one() / (var + eps).sqrt();
    Ok(v
        .iter()
        .zip(gain.iter().zip(bias))
        .map(|(&x, (&g, &b))| g * (x - mean) * inv_std + b)
        .collect())
}

#[inline]
fn moments<S: Scalar>(v: &[S]) -> (S, S) {
    let d = S::lit(v.len() as f64);
    let mean = v.iter().copied().sum::<S>() / d;
    let var = v.iter().map(|&x| (x - mean) * (x - mean)).sum::<S>() / d;
    (mean, var)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetSpec {
    pub d_in: usize,
    pub d_hidden: usize,
    pub activation: Activation,
}

impl NetSpec {
    pub fn new(d_in: usize, d_hidden: usize) -> Result<Self> {
        if d_in == 0 || d_hidden == 0 {
            return Err(Error::config(format!(
                "network widths must be positive, got d_in={d_in} d_hidden={d_hidden}"
            )));
        }
        Ok(Self {
            d_in,
            d_hidden,
            activation: Activation::Gelu,
        })
    }

    /// Hidden width defaults to four times the input width.
    pub fn with_default_hidden(d_in: usize) -> Result<Self> {
        Self::new(d_in, 4 * d_in)
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    /// `2·d_in·d_hidden + d_in + 3·d_hidden`.
    pub fn param_count(&self) -> usize {
        2 * self.d_in * self.d_hidden + self.d_in + 3 * self.d_hidden
    }

    fn layout(&self) -> Layout {
        let (d, h) = (self.d_in, self.d_hidden);
        let w1 = 0;
        let b1 = w1 + h * d;
        let ln_gain = b1 + h;
        let ln_bias = ln_gain + h;
        let w2 = ln_bias + h;
        let b2 = w2 + d * h;
        Layout {
            w1,
            b1,
            ln_gain,
            ln_bias,
            w2,
            b2,
            end: b2 + d,
        }
    }
}

/// Offsets of each parameter block in the flat vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    w1: usize,
    b1: usize,
    ln_gain: usize,
    ln_bias: usize,
    w2: usize,
    b2: usize,
    end: usize,
}

static NEXT_STAMP: AtomicU64 = AtomicU64::new(1);

fn fresh_stamp() -> u64 {
    NEXT_STAMP.fetch_add(1, Ordering::Relaxed)
}

macro_rules! param_views {
    ($($name:ident: $from:ident..$to:ident),* $(,)?) => {
        $(
            #[inline]
            pub fn $name(&self) -> &[S] {
                let l = self.spec.layout();
                &self.values[l.$from..l.$to]
            }
        )*
    };
}

/// Parameters of one correction module, stored as one flat vector laid out
/// `w1 | b1 | ln_gain | ln_bias | w2 | b2` (`w1` is `d_hidden×d_in`, `w2` is
/// `d_in×d_hidden`, both row-major).
#[derive(Debug, Clone)]
pub struct CorrectionNet<S> {
    spec: NetSpec,
    eps: S,
    values: Vec<S>,
    // Identifies the parameter values a tape was recorded against.
    stamp: u64,
}

impl<S: PartialEq> PartialEq for CorrectionNet<S> {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.eps == other.eps && self.values == other.values
    }
}

impl<S: Scalar> CorrectionNet<S> {
    /// Uniform `±1/sqrt(fan_in)` weights, zero biases, unit LayerNorm gain.
    pub fn init(spec: NetSpec, seed: u64) -> Self {
        Self::init_stream(spec, seed, 0)
    }

    /// Like [`init`](Self::init) but draws from an independent stream of the
    /// seeded generator, so several nets can share one seed.
    pub fn init_stream(spec: NetSpec, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let l = spec.layout();
        let mut values = vec![S::zero(); l.end];
        let bound1 = 1.0 / (spec.d_in as f64).sqrt();
        let u1 = Uniform::new_inclusive(-bound1, bound1).expect("finite bounds");
        for w in &mut values[l.w1..l.b1] {
            *w = S::lit(u1.sample(&mut rng));
        }
        values[l.ln_gain..l.ln_bias].fill(S::one());
        let bound2 = 1.0 / (spec.d_hidden as f64).sqrt();
        let u2 = Uniform::new_inclusive(-bound2, bound2).expect("finite bounds");
        for w in &mut values[l.w2..l.b2] {
            *w = S::lit(u2.sample(&mut rng));
        }
        Self::from_params(spec, values).expect("layout matches spec")
    }

    pub fn zeros(spec: NetSpec) -> Self {
        Self::from_params(spec, vec![S::zero(); spec.param_count()]).expect("layout matches spec")
    }

    pub fn from_params(spec: NetSpec, values: Vec<S>) -> Result<Self> {
        if values.len() != spec.param_count() {
            return Err(Error::shape(format!(
                "net {}→{}→{} needs {} parameters, got {}",
                spec.d_in,
                spec.d_hidden,
                spec.d_in,
                spec.param_count(),
                values.len()
            )));
        }
        Ok(Self {
            spec,
            eps: S::lit(LAYER_NORM_EPS),
            values,
            stamp: fresh_stamp(),
        })
    }

    #[inline]
    pub fn spec(&self) -> NetSpec {
        self.spec
    }

    #[inline]
    pub fn eps(&self) -> S {
        self.eps
    }

    #[inline]
    pub fn params(&self) -> &[S] {
        &self.values
    }

    /// Mutable access to the flat parameters; outstanding tapes become stale.
    pub fn params_mut(&mut self) -> &mut [S] {
        self.stamp = fresh_stamp();
        &mut self.values
    }

    param_views! {
        w1: w1..b1,
        b1: b1..ln_gain,
        ln_gain: ln_gain..ln_bias,
        ln_bias: ln_bias..w2,
        w2: w2..b2,
        b2: b2..end,
    }

    pub fn cast<T: Scalar>(&self) -> CorrectionNet<T> {
        CorrectionNet {
            spec: self.spec,
            eps: T::lit(self.eps.as_f64()),
            values: self.values.iter().map(|v| T::lit(v.as_f64())).collect(),
            stamp: fresh_stamp(),
        }
    }

    /// Evaluates one input vector of width `d_in`.
    pub fn forward(&self, x: &[S]) -> Result<(Vec<S>, Tape<S>)> {
        self.forward_batch(x, 1)
    }

    /// Evaluates `rows` inputs stored back to back in `xs`, recording what
    /// the reverse pass needs.
    pub fn forward_batch(&self, xs: &[S], rows: usize) -> Result<(Vec<S>, Tape<S>)> {
        let (out, tape) = self.forward_impl(xs, rows, true)?;
        Ok((out, tape.expect("tape requested")))
    }

    /// Same outputs as [`forward_batch`](Self::forward_batch) without a tape.
    pub fn evaluate_batch(&self, xs: &[S], rows: usize) -> Result<Vec<S>> {
        Ok(self.forward_impl(xs, rows, false)?.0)
    }

    fn forward_impl(&self, xs: &[S], rows: usize, record: bool) -> Result<(Vec<S>, Option<Tape<S>>)> {
        let (d, h) = (self.spec.d_in, self.spec.d_hidden);
        if xs.len() != rows * d {
            return Err(Error::shape(format!(
                "expected {rows}×{d} inputs, got {} values",
                xs.len()
            )));
        }
        let l = self.spec.layout();
        let p = &self.values;
        let (w1, w2) = (&p[l.w1..l.b1], &p[l.w2..l.b2]);
        let (b1, gain, bias, b2) = (&p[l.b1..l.ln_gain], &p[l.ln_gain..l.ln_bias], &p[l.ln_bias..l.w2], &p[l.b2..l.end]);
        let hd = S::lit(h as f64);

        // Z = X·W1ᵀ + b1, one row per input.
        let mut z = b1.repeat(rows);
        S::gemm(rows, d, h, xs, (d, 1), w1, (1, d), S::one(), &mut z);

        // The GEMMs read the activations contiguously; a strided tape costs
        // more than the zero-fill saves.
        let act = self.spec.activation;
        let taped = if record { rows * h } else { 0 };
        let mut xhat = vec![S::zero(); taped];
        let mut act_grad = vec![S::zero(); taped];
        let mut inv_std = Vec::with_capacity(if record { rows } else { 0 });
        let mut hidden = vec![S::zero(); rows * h];
        for (r, zr) in z.chunks_exact(h).enumerate() {
            let mean = zr.iter().copied().sum::<S>() / hd;
            let var = zr.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / hd;
            let is = S::one() / (var + self.eps).sqrt();
            let hr = &mut hidden[r * h..(r + 1) * h];
            if record {
                inv_std.push(is);
                let xr = &mut xhat[r * h..(r + 1) * h];
                let ar = &mut act_grad[r * h..(r + 1) * h];
                for j in 0..h {
                    let xh = (zr[j] - mean) * is;
                    let (v, g) = act.apply_with_derivative(gain[j] * xh + bias[j]);
                    hr[j] = v;
                    ar[j] = g;
                    xr[j] = xh;
                }
            } else {
                for j in 0..h {
                    hr[j] = act.apply(gain[j] * ((zr[j] - mean) * is) + bias[j]);
                }
            }
        }

        // Y = A·W2ᵀ + b2.
        let mut out = b2.repeat(rows);
        S::gemm(rows, h, d, &hidden, (h, 1), w2, (1, h), S::one(), &mut out);
        let tape = record.then(|| Tape {
            stamp: self.stamp,
            rows,
            x: xs.to_vec(),
            xhat,
            inv_std,
            act_grad,
            hidden,
        });
        Ok((out, tape))
    }

    /// Reverse pass: parameter gradients and the input cotangent.
    pub fn backward(&self, tape: &Tape<S>, dy: &[S]) -> Result<(NetGradients<S>, Vec<S>)> {
        let mut dx = vec![S::zero(); tape.rows * self.spec.d_in];
        let grads = self.backward_impl(tape, dy, Some(&mut dx))?;
        Ok((grads, dx))
    }

    /// Reverse pass without the input cotangent.
    pub fn backward_params(&self, tape: &Tape<S>, dy: &[S]) -> Result<NetGradients<S>> {
        self.backward_impl(tape, dy, None)
    }

    fn backward_impl(&self, tape: &Tape<S>, dy: &[S], dx: Option<&mut [S]>) -> Result<NetGradients<S>> {
        if tape.stamp != self.stamp {
            return Err(Error::contract(
                "tape was recorded against different network parameters",
            ));
        }
        let (d, h) = (self.spec.d_in, self.spec.d_hidden);
        let rows = tape.rows;
        if dy.len() != rows * d {
            return Err(Error::shape(format!(
                "cotangent has {} values, expected {rows}×{d}",
                dy.len()
            )));
        }
        let l = self.spec.layout();
        let p = &self.values;
        let (w1, gain, w2) = (&p[l.w1..l.b1], &p[l.ln_gain..l.ln_bias], &p[l.w2..l.b2]);
        let hd = S::lit(h as f64);
        let mut g = vec![S::zero(); l.end];

        // dW2 = dYᵀ·A, db2 = Σ_rows dY, dA = dY·W2.
        S::gemm(d, rows, h, dy, (1, d), &tape.hidden, (h, 1), S::zero(), &mut g[l.w2..l.b2]);
        for r in 0..rows {
            axpy(S::one(), &dy[r * d..(r + 1) * d], &mut g[l.b2..l.end]);
        }
        let mut dz = vec![S::zero(); rows * h];
        S::gemm(rows, d, h, dy, (d, 1), w2, (h, 1), S::zero(), &mut dz);

        // Through the activation and LayerNorm, in place: dA becomes dZ.
        let mut dxhat = vec![S::zero(); h];
        for r in 0..rows {
            let xh = &tape.xhat[r * h..(r + 1) * h];
            let act_grad = &tape.act_grad[r * h..(r + 1) * h];
            let dzr = &mut dz[r * h..(r + 1) * h];
            let mut sum_dxhat = S::zero();
            let mut sum_dxhat_xhat = S::zero();
            for j in 0..h {
                let da = dzr[j] * act_grad[j];
                g[l.ln_gain + j] += da * xh[j];
                g[l.ln_bias + j] += da;
                dxhat[j] = da * gain[j];
                sum_dxhat += dxhat[j];
                sum_dxhat_xhat += dxhat[j] * xh[j];
            }
            let scale = tape.inv_std[r] / hd;
            for j in 0..h {
                dzr[j] = scale * (hd * dxhat[j] - sum_dxhat - xh[j] * sum_dxhat_xhat);
            }
            axpy(S::one(), dzr, &mut g[l.b1..l.ln_gain]);
        }

        // dW1 = dZᵀ·X, dX = dZ·W1.
        S::gemm(h, rows, d, &dz, (1, h), &tape.x, (d, 1), S::zero(), &mut g[l.w1..l.b1]);
        if let Some(dx) = dx {
            S::gemm(rows, h, d, &dz, (h, 1), w1, (d, 1), S::zero(), dx);
        }
        Ok(NetGradients {
            spec: self.spec,
            values: g,
        })
    }
}

/// Intermediates cached by a forward pass.
#[derive(Debug, Clone)]
pub struct Tape<S> {
    stamp: u64,
    rows: usize,
    x: Vec<S>,
    xhat: Vec<S>,
    inv_std: Vec<S>,
    /// Activation derivative at each pre-activation.
    act_grad: Vec<S>,
    hidden: Vec<S>,
}

impl<S> Tape<S> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Whether `net` still holds the parameters this tape was recorded with.
    pub fn is_current_for(&self, net: &CorrectionNet<S>) -> bool {
        self.stamp == net.stamp
    }
}

/// Gradients in the same flat layout as [`CorrectionNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetGradients<S> {
    spec: NetSpec,
    values: Vec<S>,
}

impl<S: Scalar> NetGradients<S> {
    pub fn zeros(spec: NetSpec) -> Self {
        Self {
            spec,
            values: vec![S::zero(); spec.param_count()],
        }
    }

    #[inline]
    pub fn as_slice(&self) -> &[S] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<S> {
        self.values
    }

    param_views! {
        w1: w1..b1,
        b1: b1..ln_gain,
        ln_gain: ln_gain..ln_bias,
        ln_bias: ln_bias..w2,
        w2: w2..b2,
        b2: b2..end,
    }
}

#[inline]
fn axpy<S: Scalar>(alpha: S, x: &[S], y: &mut [S]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Φ by composite Simpson quadrature of the normal density on [0, |x|].
    fn phi_quadrature(x: f64) -> f64 {
        let n = 20_000;
        let h = x.abs() / n as f64;
        let pdf = |t: f64| (-(t * t) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = pdf(0.0) + pdf(x.abs());
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * pdf(i as f64 * h);
        }
        let half = s * h / 3.0;
        if x >= 0.0 { 0.5 + half } else { 0.5 - half }
    }

    #[test]
    fn gelu_examples() {
        assert_eq!(gelu(0.0f64), 0.0);
        let want = phi_quadrature(1.0);
        assert!((want - 0.841_344_7).abs() < 1e-7);
        assert!((gelu(1.0f64) - want).abs() < 1e-12);
        assert!(gelu(-10.0f64).abs() < 1e-10);
        for &x in &[-3.0, -0.7, 0.2, 2.5] {
            assert!((gelu(x) - x * phi_quadrature(x)).abs() < 1e-12);
            assert!(gelu(x) <= x.max(0.0) + 1e-15);
        }
    }

    #[test]
    fn activation_derivatives_match_finite_differences() {
        let h = 1e-6;
        for &x in &[-4.0f64, -1.3, -0.1, 0.0, 0.4, 1.7, 3.9] {
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((gelu_grad(x) - fd).abs() < 1e-8, "gelu' at {x}");
            let fd = (gelu_tanh(x + h) - gelu_tanh(x - h)) / (2.0 * h);
            assert!((gelu_tanh_grad(x) - fd).abs() < 1e-8, "gelu_tanh' at {x}");
            assert!((gelu_tanh(x) - gelu(x)).abs() < 1e-3);
        }
    }

    #[test]
    fn layer_norm_examples() {
        let out = layer_norm(&[1.0f64, 2.0, 3.0], &[1.0; 3], &[0.0; 3], 0.0).unwrap();
        let want = [-1.224_745, 0.0, 1.224_745];
        for (o, w) in out.iter().zip(want) {
            assert!((o - w).abs() < 1e-6);
        }
        let eps = 1e-5;
        let out = layer_norm(&[4.0f64; 5], &[1.0; 5], &[0.0; 5], eps).unwrap();
        assert!(out.iter().all(|v| v.abs() <= eps.sqrt()));
        let out = layer_norm(&[1.0f64, -7.0, 2.0], &[0.0; 3], &[0.5, 1.5, 2.5], eps).unwrap();
        assert_eq!(out, vec![0.5, 1.5, 2.5]);
        assert!(matches!(
            layer_norm(&[1.0f64, 2.0], &[1.0], &[0.0, 0.0], eps),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn param_count_matches_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let spec = NetSpec::new(rng.random_range(1..30), rng.random_range(1..70)).unwrap();
            let net = CorrectionNet::<f64>::zeros(spec);
            let (d, h) = (spec.d_in, spec.d_hidden);
            assert_eq!(net.w1().len(), h * d);
            assert_eq!(net.w2().len(), d * h);
            let total = net.w1().len() + net.b1().len() + net.ln_gain().len()
                + net.ln_bias().len() + net.w2().len() + net.b2().len();
            assert_eq!(total, spec.param_count());
            assert_eq!(net.params().len(), total);
        }
    }

    #[test]
    fn init_is_deterministic_and_well_scaled() {
        let spec = NetSpec::new(100, 200).unwrap();
        let a = CorrectionNet::<f64>::init(spec, 9);
        let b = CorrectionNet::<f64>::init(spec, 9);
        assert!(a.params().iter().zip(b.params()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(a.ln_gain().iter().all(|&g| g == 1.0));
        assert!(a.b1().iter().chain(a.b2()).chain(a.ln_bias()).all(|&v| v == 0.0));
        let w = a.w1();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let sd = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
        let want = 1.0 / (3.0f64.sqrt() * 10.0);
        assert!((sd - want).abs() < 0.1 * want, "sd {sd} vs {want}");
        let bound = 0.1;
        assert!(w.iter().all(|v| v.abs() <= bound));
        let other = CorrectionNet::<f64>::init_stream(spec, 9, 1);
        assert_ne!(other.params(), a.params());
    }

    #[test]
    fn zero_and_constant_maps() {
        let spec = NetSpec::new(3, 5).unwrap();
        let net = CorrectionNet::<f64>::zeros(spec);
        let (y, _) = net.forward(&[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(y, vec![0.0; 3]);

        let mut net = CorrectionNet::<f64>::init(spec, 1);
        let l = spec.layout();
        let p = net.params_mut();
        p[l.w2..l.b2].fill(0.0);
        p[l.b2..l.end].copy_from_slice(&[1.0, 2.0, 3.0]);
        let (y, _) = net.forward(&[9.0, 0.5, -4.0]).unwrap();
        assert_eq!(y, vec![1.0, 2.0, 3.0]);
    }

    fn reference_forward(net: &CorrectionNet<f64>, x: &[f64]) -> Vec<f64> {
        let (d, h) = (net.spec().d_in, net.spec().d_hidden);
        let mut z = vec![0.0; h];
        for j in 0..h {
            z[j] = net.b1()[j];
            for i in 0..d {
                z[j] += net.w1()[j * d + i] * x[i];
            }
        }
        let a = layer_norm(&z, net.ln_gain(), net.ln_bias(), LAYER_NORM_EPS).unwrap();
        let act: Vec<f64> = a.iter().map(|&v| gelu(v)).collect();
        (0..d)
            .map(|i| net.b2()[i] + (0..h).map(|j| net.w2()[i * h + j] * act[j]).sum::<f64>())
            .collect()
    }

    fn randomized(spec: NetSpec, seed: u64) -> CorrectionNet<f64> {
        let mut net = CorrectionNet::<f64>::init(spec, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        for p in net.params_mut() {
            *p += rng.random_range(-0.5..0.5);
        }
        net
    }

    #[test]
    fn forward_matches_straight_line_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..10 {
            let spec = NetSpec::new(rng.random_range(1..15), rng.random_range(1..30)).unwrap();
            let net = randomized(spec, seed);
            let x: Vec<f64> = (0..spec.d_in).map(|_| rng.random_range(-3.0..3.0)).collect();
            let (y, _) = net.forward(&x).unwrap();
            for (a, b) in y.iter().zip(reference_forward(&net, &x)) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn batch_rows_are_independent() {
        let spec = NetSpec::new(4, 8).unwrap();
        let net = randomized(spec, 5);
        let xs: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let (batch, _) = net.forward_batch(&xs, 3).unwrap();
        for r in 0..3 {
            let (single, _) = net.forward(&xs[r * 4..(r + 1) * 4]).unwrap();
            assert_eq!(&batch[r * 4..(r + 1) * 4], single.as_slice());
        }
    }

    #[test]
    fn zero_cotangent_gives_zero_gradients() {
        let spec = NetSpec::new(4, 6).unwrap();
        let net = randomized(spec, 2);
        let (_, tape) = net.forward(&[0.1, 0.2, -0.3, 0.4]).unwrap();
        let (g, dx) = net.backward(&tape, &[0.0; 4]).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_tape_is_rejected() {
        let spec = NetSpec::new(2, 3).unwrap();
        let mut net = randomized(spec, 4);
        let (_, tape) = net.forward(&[1.0, 2.0]).unwrap();
        net.params_mut()[0] += 1.0;
        assert!(matches!(
            net.backward(&tape, &[1.0, 1.0]),
            Err(Error::Contract(_))
        ));
        let other = randomized(spec, 4);
        assert!(matches!(
            other.backward(&tape, &[1.0, 1.0]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn tapeless_evaluation_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for act in [Activation::Gelu, Activation::GeluTanh] {
            let spec = NetSpec::new(7, 11).unwrap().with_activation(act);
            let net = randomized(spec, 2);
            let xs: Vec<f64> = (0..5 * 7).map(|_| rng.random_range(-3.0..3.0)).collect();
            let (a, _) = net.forward_batch(&xs, 5).unwrap();
            let b = net.evaluate_batch(&xs, 5).unwrap();
            assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
            for &x in &xs {
                let (v, g) = act.apply_with_derivative(x);
                assert_eq!(v.to_bits(), act.apply(x).to_bits());
                let want = match act {
                    Activation::Gelu => gelu_grad(x),
                    Activation::GeluTanh => gelu_tanh_grad(x),
                };
                assert_eq!(g.to_bits(), want.to_bits());
            }
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        use crate::reference::{central_differences, compare, net_forward, to_dd, Dd, REFERENCE_STEP};
        let mut worst = 0.0f64;
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let d = [4, 12, 24][seed as usize % 3];
            let hid = [8, 48][seed as usize % 2];
            let spec = NetSpec::new(d, hid).unwrap();
            let net = randomized(spec, seed);
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let c: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            // L = c · y, so dL/dy = c.
            let dot = |y: Vec<Dd>| y.iter().zip(&c).fold(Dd::ZERO, |acc, (a, &b)| acc + *a * b);
            let (_, tape) = net.forward(&x).unwrap();
            let (g, dx) = net.backward(&tape, &c).unwrap();
            let xd = to_dd(&x);
            let fd = central_differences(|p| dot(net_forward(spec, net.eps(), p, &xd)), net.params(), REFERENCE_STEP);
            worst = worst.max(compare(g.as_slice(), &fd).max_rel_err);
            let pd = to_dd(net.params());
            let fd = central_differences(|xp| dot(net_forward(spec, net.eps(), &pd, xp)), &x, REFERENCE_STEP);
            worst = worst.max(compare(&dx, &fd).max_rel_err);
        }
        assert!(worst <= 1e-7, "worst relative error {worst}");
    }

    #[test]
    fn single_precision_gradients_match_central_differences() {
        use crate::reference::{central_differences, compare, net_forward, to_dd, Dd, REFERENCE_STEP};
        let mut worst = 0.0f64;
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let d = [4, 12, 24][seed as usize % 3];
            let hid = [8, 48][seed as usize % 2];
            let spec = NetSpec::new(d, hid).unwrap();
            // The reference differentiates the f32 net's own parameters.
            let net = randomized(spec, seed).cast::<f32>();
            let x: Vec<f32> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let c: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let dot = |y: Vec<Dd>| y.iter().zip(&c).fold(Dd::ZERO, |acc, (a, &b)| acc + *a * b as f64);
            let (_, tape) = net.forward(&x).unwrap();
            let (g, dx) = net.backward(&tape, &c).unwrap();
            let p64: Vec<f64> = net.params().iter().map(|&v| v as f64).collect();
            let x64: Vec<f64> = x.iter().map(|&v| v as f64).collect();
            let eps = net.eps() as f64;
            let fd = central_differences(|p| dot(net_forward(spec, eps, p, &to_dd(&x64))), &p64, REFERENCE_STEP);
            let ga: Vec<f64> = g.as_slice().iter().map(|&v| v as f64).collect();
            let fdx = central_differences(|xp| dot(net_forward(spec, eps, &to_dd(&p64), xp)), &x64, REFERENCE_STEP);
            let dxa: Vec<f64> = dx.iter().map(|&v| v as f64).collect();
            worst = worst.max(compare(&ga, &fd).max_rel_err).max(compare(&dxa, &fdx).max_rel_err);
        }
        assert!(worst <= 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn tanh_variant_gradients_match_central_differences() {
        let spec = NetSpec::new(5, 7).unwrap().with_activation(Activation::GeluTanh);
        let net = {
            let mut n = CorrectionNet::<f64>::init(spec, 8);
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            for p in n.params_mut() {
                *p += rng.random_range(-0.5..0.5);
            }
            n
        };
        let x = [0.3, -1.2, 0.8, 2.0, -0.4];
        let (_, tape) = net.forward(&x).unwrap();
        let (g, _) = net.backward(&tape, &[1.0; 5]).unwrap();
        let h = 1e-5;
        let mut probe = net.clone();
        for k in 0..spec.param_count() {
            let orig = probe.params()[k];
            probe.params_mut()[k] = orig + h;
            let up: f64 = probe.forward(&x).unwrap().0.iter().sum();
            probe.params_mut()[k] = orig - h;
            let down: f64 = probe.forward(&x).unwrap().0.iter().sum();
            probe.params_mut()[k] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!((g.as_slice()[k] - fd).abs() < 1e-7 * fd.abs().max(1.0));
        }
    }
}
