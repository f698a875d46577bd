//! Extended-precision reference evaluation of the correction network and the
//! adaptation loss, written independently of the production code paths.
//!
//! Central differences in 64-bit arithmetic bottom out near `1e-11` absolute,
//! which is far above `1e-7` relative for small gradient coordinates. The
//! reference below runs in double-double arithmetic (about 32 significant
//! digits), so a step of `1e-9` leaves both truncation and roundoff many
//! orders below the analytic gradient's own error.

use std::cmp::Ordering;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};
use std::sync::OnceLock;

use crate::engine::{AblationMode, AdaptState, LossKind};
use crate::network::{Activation, NetSpec};
use crate::optimizer::GradCheck;
use crate::scalar::Scalar;
use crate::tensor::SeriesTensor;

/// Unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi)/2`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

pub const LN2: Dd = Dd::new(std::f64::consts::LN_2, 2.319_046_813_846_299_6e-17);
pub const PI: Dd = Dd::new(std::f64::consts::PI, 1.224_646_799_147_353_2e-16);
pub const TWO_OVER_SQRT_PI: Dd = Dd::new(std::f64::consts::FRAC_2_SQRT_PI, 1.533_545_961_316_588e-17);
pub const FRAC_1_SQRT_2: Dd = Dd::new(std::f64::consts::FRAC_1_SQRT_2, -4.833_646_656_726_457e-17);

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn split(a: f64) -> (f64, f64) {
    let c = 134_217_729.0 * a;
    let hi = c - (c - a);
    (hi, a - hi)
}

// Dekker's product; a software FMA would be much slower here.
#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let (ah, al) = split(a);
    let (bh, bl) = split(b);
    (p, ((ah * bh - p) + ah * bl + al * bh) + al * bl)
}

impl Dd {
    pub const ZERO: Dd = Dd::new(0.0, 0.0);
    pub const ONE: Dd = Dd::new(1.0, 0.0);

    pub const fn new(hi: f64, lo: f64) -> Self {
        Self { hi, lo }
    }

    #[inline]
    fn renorm(hi: f64, lo: f64) -> Self {
        let (hi, lo) = quick_two_sum(hi, lo);
        Self { hi, lo }
    }

    /// Rounds to the nearest `f64`.
    #[inline]
    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.hi.is_finite() && self.lo.is_finite()
    }

    #[inline]
    pub fn abs(self) -> Self {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }

    /// Multiplication by a power of two, exact barring underflow.
    #[inline]
    fn scale_pow2(self, k: i32) -> Self {
        let f = 2f64.powi(k);
        Self::new(self.hi * f, self.lo * f)
    }

    pub fn square(self) -> Self {
        self * self
    }

    pub fn sqrt(self) -> Self {
        if self.hi <= 0.0 {
            return Self::ZERO;
        }
        let x = 1.0 / self.hi.sqrt();
        let ax = self.hi * x;
        let (p, e) = two_prod(ax, ax);
        let resid = (self - Dd::new(p, e)).hi;
        let (s, t) = two_sum(ax, resid * (x * 0.5));
        Self::renorm(s, t)
    }

    /// `(k, e)` with `exp(self) = 2^k · (1 + e)`.
    fn exp_parts(self) -> (i32, Dd) {
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2 * k).scale_pow2(-10);
        let mut acc = Dd::ONE;
        for n in (2..=12).rev() {
            acc = Dd::ONE + acc * r / n as f64;
        }
        let mut e = r * acc;
        // (1 + e)² − 1 = e·(e + 2), undoing the 2^-10 reduction.
        for _ in 0..10 {
            e = e * (e + 2.0);
        }
        (k as i32, e)
    }

    pub fn exp(self) -> Self {
        if self.hi > 709.0 {
            return Self::new(f64::INFINITY, 0.0);
        }
        if self.hi < -745.0 {
            return Self::ZERO;
        }
        let (k, e) = self.exp_parts();
        (Dd::ONE + e).scale_pow2(k)
    }

    pub fn exp_m1(self) -> Self {
        if self.hi < -745.0 {
            return -Dd::ONE;
        }
        let (k, e) = self.exp_parts();
        if k == 0 {
            e
        } else {
            (Dd::ONE + e).scale_pow2(k) - 1.0
        }
    }

    pub fn tanh(self) -> Self {
        if self.hi > 40.0 {
            return Dd::ONE;
        }
        if self.hi < -40.0 {
            return -Dd::ONE;
        }
        let m = (self * 2.0).exp_m1();
        m / (m + 2.0)
    }

    /// `erf(x) = 2/√π · e^{−x²} · Σ_n 2ⁿ x^{2n+1} / (2n+1)!!`; every term is
    /// positive for `x > 0`, so the sum carries no cancellation.
    pub fn erf(self) -> Self {
        if self.hi < 0.0 {
            return -(-self).erf();
        }
        if self.hi == 0.0 {
            return Dd::ZERO;
        }
        if self.hi > 8.0 {
            return Dd::ONE;
        }
        let x2 = self * self;
        let two_x2 = x2 * 2.0;
        let inv = odd_reciprocals();
        let mut term = self;
        let mut sum = self;
        for r in &inv[1..] {
            term = term * two_x2 * *r;
            sum += term;
            if term.hi.abs() <= 1e-34 * sum.hi.abs() {
                break;
            }
        }
        TWO_OVER_SQRT_PI * (-x2).exp() * sum
    }
}

/// `1/(2n+1)` for every series index `erf` can reach below `x = 8`.
fn odd_reciprocals() -> &'static [Dd] {
    static TABLE: OnceLock<Vec<Dd>> = OnceLock::new();
    TABLE.get_or_init(|| (0..400).map(|n| Dd::ONE / (2 * n + 1) as f64).collect())
}

impl From<f64> for Dd {
    #[inline]
    fn from(v: f64) -> Self {
        Self::new(v, 0.0)
    }
}

impl PartialOrd for Dd {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.hi.partial_cmp(&other.hi)? {
            Ordering::Equal => self.lo.partial_cmp(&other.lo),
            o => Some(o),
        }
    }
}

impl Neg for Dd {
    type Output = Dd;
    #[inline]
    fn neg(self) -> Dd {
        Dd::new(-self.hi, -self.lo)
    }
}

impl Add for Dd {
    type Output = Dd;
    #[inline]
    fn add(self, b: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        Dd::renorm(s, e + f)
    }
}

impl Add<f64> for Dd {
    type Output = Dd;
    #[inline]
    fn add(self, b: f64) -> Dd {
        let (s, e) = two_sum(self.hi, b);
        Dd::renorm(s, e + self.lo)
    }
}

impl AddAssign for Dd {
    #[inline]
    fn add_assign(&mut self, b: Dd) {
        *self = *self + b;
    }
}

impl Sub for Dd {
    type Output = Dd;
    #[inline]
    fn sub(self, b: Dd) -> Dd {
        self + (-b)
    }
}

impl Sub<f64> for Dd {
    type Output = Dd;
    #[inline]
    fn sub(self, b: f64) -> Dd {
        self + (-b)
    }
}

impl Mul for Dd {
    type Output = Dd;
    #[inline]
    fn mul(self, b: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, b.hi);
        Dd::renorm(p, e + (self.hi * b.lo + self.lo * b.hi))
    }
}

impl Mul<f64> for Dd {
    type Output = Dd;
    #[inline]
    fn mul(self, b: f64) -> Dd {
        let (p, e) = two_prod(self.hi, b);
        Dd::renorm(p, e + self.lo * b)
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, b: Dd) -> Dd {
        let q1 = self.hi / b.hi;
        let r = self - b * q1;
        let q2 = r.hi / b.hi;
        let r = r - b * q2;
        let q3 = r.hi / b.hi;
        Dd::renorm(q1, q2) + q3
    }
}

impl Div<f64> for Dd {
    type Output = Dd;
    #[inline]
    fn div(self, b: f64) -> Dd {
        self / Dd::from(b)
    }
}

impl std::iter::Sum for Dd {
    fn sum<I: Iterator<Item = Dd>>(iter: I) -> Dd {
        iter.fold(Dd::ZERO, |a, b| a + b)
    }
}

fn activation(kind: Activation, x: Dd) -> Dd {
    match kind {
        Activation::Gelu => x * (Dd::ONE + (x * FRAC_1_SQRT_2).erf()) * 0.5,
        Activation::GeluTanh => {
            let sqrt_2_over_pi = TWO_OVER_SQRT_PI * FRAC_1_SQRT_2;
            let u = sqrt_2_over_pi * (x + x * x * x * 0.044_715);
            x * (Dd::ONE + u.tanh()) * 0.5
        }
    }
}

/// Offsets of the parameter blocks.
#[derive(Clone, Copy)]
struct Blocks {
    d: usize,
    h: usize,
    b1: usize,
    gain: usize,
    bias: usize,
    w2: usize,
    b2: usize,
}

impl Blocks {
    fn of(spec: NetSpec) -> Self {
        let (d, h) = (spec.d_in, spec.d_hidden);
        Self {
            d,
            h,
            b1: h * d,
            gain: h * d + h,
            bias: h * d + 2 * h,
            w2: h * d + 3 * h,
            b2: 2 * h * d + 3 * h,
        }
    }
}

/// Every intermediate of one row's forward pass.
#[derive(Debug, Clone)]
struct Row {
    z: Vec<Dd>,
    mean: Dd,
    inv_std: Dd,
    act: Vec<Dd>,
    out: Vec<Dd>,
}

fn pre_activation(b: Blocks, p: &[Dd], x: &[Dd], j: usize) -> Dd {
    (0..b.d).fold(p[b.b1 + j], |acc, i| acc + p[j * b.d + i] * x[i])
}

fn hidden_unit(spec: NetSpec, b: Blocks, p: &[Dd], z: Dd, mean: Dd, inv_std: Dd, j: usize) -> Dd {
    activation(spec.activation, p[b.gain + j] * (z - mean) * inv_std + p[b.bias + j])
}

fn output_unit(b: Blocks, p: &[Dd], act: &[Dd], i: usize) -> Dd {
    (0..b.h).fold(p[b.b2 + i], |acc, j| acc + p[b.w2 + i * b.h + j] * act[j])
}

fn from_pre_activations(spec: NetSpec, eps: f64, p: &[Dd], z: Vec<Dd>) -> Row {
    let b = Blocks::of(spec);
    let mean = z.iter().copied().sum::<Dd>() / b.h as f64;
    let var = z.iter().map(|&v| (v - mean).square()).sum::<Dd>() / b.h as f64;
    let inv_std = Dd::ONE / (var + eps).sqrt();
    let act: Vec<Dd> = (0..b.h).map(|j| hidden_unit(spec, b, p, z[j], mean, inv_std, j)).collect();
    let out = (0..b.d).map(|i| output_unit(b, p, &act, i)).collect();
    Row { z, mean, inv_std, act, out }
}

fn forward_row(spec: NetSpec, eps: f64, p: &[Dd], x: &[Dd]) -> Row {
    let b = Blocks::of(spec);
    let z = (0..b.h).map(|j| pre_activation(b, p, x, j)).collect();
    from_pre_activations(spec, eps, p, z)
}

/// Output of `row` re-evaluated after parameter `k` changed in `p`.
/// Intermediates that do not depend on `k` are reused as computed.
fn perturbed_output(spec: NetSpec, eps: f64, p: &[Dd], x: &[Dd], row: &Row, k: usize) -> Vec<Dd> {
    let b = Blocks::of(spec);
    if k < b.gain {
        let j = if k < b.b1 { k / b.d } else { k - b.b1 };
        let mut z = row.z.clone();
        z[j] = pre_activation(b, p, x, j);
        from_pre_activations(spec, eps, p, z).out
    } else if k < b.w2 {
        let j = (k - b.gain) % b.h;
        let mut act = row.act.clone();
        act[j] = hidden_unit(spec, b, p, row.z[j], row.mean, row.inv_std, j);
        (0..b.d).map(|i| output_unit(b, p, &act, i)).collect()
    } else {
        let i = if k < b.b2 { (k - b.w2) / b.h } else { k - b.b2 };
        let mut out = row.out.clone();
        out[i] = output_unit(b, p, &row.act, i);
        out
    }
}

/// Network output for one row, parameters in the flat layout
/// `w1[h×d] | b1 | ln_gain | ln_bias | w2[d×h] | b2`.
pub fn net_forward(spec: NetSpec, eps: f64, params: &[Dd], x: &[Dd]) -> Vec<Dd> {
    assert_eq!(params.len(), spec.param_count());
    assert_eq!(x.len(), spec.d_in);
    forward_row(spec, eps, params, x).out
}

pub fn to_dd(v: &[f64]) -> Vec<Dd> {
    v.iter().map(|&x| Dd::from(x)).collect()
}

/// Central differences `(f(p+h) − f(p−h)) / 2h` with the probes and the
/// quotient formed in double-double.
pub fn central_differences(mut f: impl FnMut(&[Dd]) -> Dd, params: &[f64], h: f64) -> Vec<f64> {
    let mut probe = to_dd(params);
    (0..params.len())
        .map(|k| {
            probe[k] = Dd::from(params[k]) + h;
            let up = f(&probe);
            probe[k] = Dd::from(params[k]) - h;
            let down = f(&probe);
            probe[k] = Dd::from(params[k]);
            ((up - down) / (2.0 * h)).to_f64()
        })
        .collect()
}

/// Worst relative error with the denominator `max(|a|, |r|, 1e-12)`.
pub fn compare(analytic: &[f64], reference: &[f64]) -> GradCheck<f64> {
    assert_eq!(analytic.len(), reference.len());
    let mut worst = GradCheck {
        max_rel_err: 0.0,
        worst_index: 0,
    };
    for (k, (&a, &r)) in analytic.iter().zip(reference).enumerate() {
        let rel = (a - r).abs() / a.abs().max(r.abs()).max(1e-12);
        if rel > worst.max_rel_err || rel.is_nan() {
            worst = GradCheck {
                max_rel_err: rel,
                worst_index: k,
            };
        }
    }
    worst
}

/// Default reference step.
pub const REFERENCE_STEP: f64 = 1e-9;

/// One adaptation step's loss as a function of `g_s ∥ g_t ∥ λ_s ∥ λ_t`,
/// re-derived from the model definition in double-double.
#[derive(Debug, Clone)]
pub struct AdaptProblem {
    mode: AblationMode,
    loss: LossKind,
    spec: NetSpec,
    eps: f64,
    mu: Dd,
    sigma: Dd,
    n_nodes: usize,
    width: usize,
    base: Vec<Dd>,
    observed: Vec<bool>,
    truth: Vec<Option<Dd>>,
    /// Net inputs per node row; `None` for a path the mode does not use.
    seasonal_in: Option<Vec<Dd>>,
    trend_in: Option<Vec<Dd>>,
    unit_s: bool,
    unit_t: bool,
}

impl AdaptProblem {
    /// Captures the structure of `state` and one `(o, y)` pair; parameter
    /// values are supplied separately.
    pub fn new<S: Scalar>(state: &AdaptState<S>, o: &SeriesTensor<S>, y: &SeriesTensor<S>) -> Self {
        let shape = state.shape();
        assert_eq!(o.shape(), shape);
        assert_eq!(y.shape(), shape);
        let mode = state.mode();
        let (steps, chans) = (shape.n_steps, shape.n_channels);
        let mu = Dd::from(state.scaler().mean().as_f64());
        let sigma = Dd::from(state.scaler().std().as_f64());
        let observed = o.mask().to_vec();
        let base: Vec<Dd> = o.values().iter().map(|v| Dd::from(v.as_f64())).collect();
        let z: Vec<Dd> = base
            .iter()
            .zip(&observed)
            .map(|(&v, &m)| if m { (v - mu) / sigma } else { Dd::ZERO })
            .collect();

        let uses_s = !matches!(mode, AblationMode::M0 | AblationMode::M4);
        let uses_t = matches!(mode, AblationMode::M1 | AblationMode::M2 | AblationMode::M4 | AblationMode::M5);
        let (seasonal_in, trend_in) = if mode == AblationMode::M6 {
            (Some(z), None)
        } else {
            let half = state.decomp().half_width() as isize;
            let mut s_in = vec![Dd::ZERO; z.len()];
            let mut t_in = vec![Dd::ZERO; z.len()];
            for n in 0..shape.n_nodes {
                for c in 0..chans {
                    let at = |t: usize| (n * steps + t) * chans + c;
                    for t in 0..steps {
                        let mut sum = Dd::ZERO;
                        let mut count = 0usize;
                        for off in -half..=half {
                            let j = (t as isize + off).clamp(0, steps as isize - 1) as usize;
                            if observed[at(j)] {
                                sum += z[at(j)];
                                count += 1;
                            }
                        }
                        let i = at(t);
                        if observed[i] && count > 0 {
                            let trend = sum / count as f64;
                            t_in[i] = trend;
                            s_in[i] = z[i] - trend;
                        }
                    }
                }
            }
            (uses_s.then_some(s_in), uses_t.then_some(t_in))
        };
        let unit = matches!(mode, AblationMode::M1 | AblationMode::M2);
        Self {
            mode,
            loss: state.loss_kind(),
            spec: state.net_spec(),
            eps: state.g_s().eps().as_f64(),
            mu,
            sigma,
            n_nodes: shape.n_nodes,
            width: shape.node_len(),
            base,
            observed,
            truth: y
                .values()
                .iter()
                .zip(y.mask())
                .map(|(v, &m)| m.then(|| Dd::from(v.as_f64())))
                .collect(),
            seasonal_in,
            trend_in,
            unit_s: unit,
            unit_t: unit,
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.spec.param_count() + 2 * self.n_nodes
    }

    fn rows(&self, inputs: &Option<Vec<Dd>>, params: &[Dd]) -> Option<Vec<Row>> {
        let w = self.width;
        inputs
            .as_ref()
            .map(|x| (0..self.n_nodes).map(|n| forward_row(self.spec, self.eps, params, &x[n * w..(n + 1) * w])).collect())
    }

    fn flatten(rows: &Option<Vec<Row>>) -> Option<Vec<Dd>> {
        rows.as_ref().map(|r| r.iter().flat_map(|row| row.out.iter().copied()).collect())
    }

    /// Outputs of every row with net parameter `k` changed in `params`.
    fn perturbed(&self, inputs: &Option<Vec<Dd>>, rows: &Option<Vec<Row>>, params: &[Dd], k: usize) -> Option<Vec<Dd>> {
        let w = self.width;
        let (x, rows) = (inputs.as_ref()?, rows.as_ref()?);
        Some(
            rows.iter()
                .enumerate()
                .flat_map(|(n, row)| perturbed_output(self.spec, self.eps, params, &x[n * w..(n + 1) * w], row, k))
                .collect(),
        )
    }

    fn assemble(&self, gs: &Option<Vec<Dd>>, gt: &Option<Vec<Dd>>, lam_s: &[Dd], lam_t: &[Dd]) -> Option<Dd> {
        let mut sum = Dd::ZERO;
        let mut count = 0usize;
        for n in 0..self.n_nodes {
            let cs = if self.unit_s { Dd::ONE } else { lam_s[n] };
            let ct = if self.unit_t { Dd::ONE } else { lam_t[n] };
            for k in n * self.width..(n + 1) * self.width {
                let (Some(y), true) = (self.truth[k], self.observed[k]) else {
                    continue;
                };
                let mut corr = Dd::ZERO;
                if let Some(g) = gs {
                    corr += cs * g[k];
                }
                if let Some(g) = gt {
                    corr += ct * g[k];
                }
                let start = if self.mode == AblationMode::M1 { self.mu } else { self.base[k] };
                let r = start + self.sigma * corr - y;
                sum += match self.loss {
                    LossKind::Mse => r.square() / self.sigma.square(),
                    LossKind::Mae => r.abs() / self.sigma,
                };
                count += 1;
            }
        }
        (count > 0).then(|| sum / count as f64)
    }

    fn split<'a>(&self, params: &'a [Dd]) -> (&'a [Dd], &'a [Dd], &'a [Dd], &'a [Dd]) {
        assert_eq!(params.len(), self.param_count());
        let p = self.spec.param_count();
        let n = self.n_nodes;
        (&params[..p], &params[p..2 * p], &params[2 * p..2 * p + n], &params[2 * p + n..])
    }

    /// The loss at `params`, or `None` when no cell is counted.
    pub fn loss(&self, params: &[Dd]) -> Option<Dd> {
        let (ps, pt, ls, lt) = self.split(params);
        let gs = Self::flatten(&self.rows(&self.seasonal_in, ps));
        let gt = Self::flatten(&self.rows(&self.trend_in, pt));
        self.assemble(&gs, &gt, ls, lt)
    }

    /// Central-difference gradient at `params`. A probe re-evaluates only the
    /// intermediates that depend on the perturbed coordinate.
    pub fn gradient(&self, params: &[f64], h: f64) -> Option<Vec<f64>> {
        let base = to_dd(params);
        let (ps, pt, ls, lt) = self.split(&base);
        let rows_s = self.rows(&self.seasonal_in, ps);
        let rows_t = self.rows(&self.trend_in, pt);
        let gs = Self::flatten(&rows_s);
        let gt = Self::flatten(&rows_t);
        self.assemble(&gs, &gt, ls, lt)?;
        let p = self.spec.param_count();
        let mut probe = base.clone();
        let mut out = Vec::with_capacity(params.len());
        for k in 0..params.len() {
            let mut eval = |v: Dd| -> Dd {
                probe[k] = v;
                let (ps, pt, ls, lt) = self.split(&probe);
                let l = if k < p {
                    self.assemble(&self.perturbed(&self.seasonal_in, &rows_s, ps, k), &gt, ls, lt)
                } else if k < 2 * p {
                    self.assemble(&gs, &self.perturbed(&self.trend_in, &rows_t, pt, k - p), ls, lt)
                } else {
                    self.assemble(&gs, &gt, ls, lt)
                };
                l.expect("counted cells do not depend on parameters")
            };
            let up = eval(base[k] + h);
            let down = eval(base[k] - h);
            probe[k] = base[k];
            out.push(((up - down) / (2.0 * h)).to_f64());
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{AdaptConfig, Scaler};
    use crate::network::CorrectionNet;
    use crate::tensor::Shape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(got: Dd, hi: f64, lo: f64) {
        let err = ((got.hi - hi) + (got.lo - lo)).abs();
        assert!(err <= 1e-30 * hi.abs(), "{got:?} vs ({hi:e}, {lo:e}): {err:e}");
    }

    #[test]
    fn arithmetic_against_known_expansions() {
        close(Dd::ONE / 3.0, 0.333_333_333_333_333_3, 1.850_371_707_708_594e-17);
        close(Dd::from(2.0).sqrt(), std::f64::consts::SQRT_2, -9.667_293_313_452_913e-17);
        close(PI * 2.0 / PI, 2.0, 0.0);
        close((Dd::from(1e16) + 1.0) - 1e16, 1.0, 0.0);
        let third = Dd::ONE / 3.0;
        close(third * 3.0 - 1.0 + 1.0, 1.0, 0.0);
    }

    #[test]
    fn transcendental_functions_against_known_expansions() {
        close(Dd::from(1.7).exp(), 5.473_947_391_727_2, -3.893_534_160_478_951e-16);
        close(Dd::from(-20.0).exp(), 2.061_153_622_438_558e-9, -4.197_557_675_950_54e-26);
        close(Dd::from(0.4).tanh(), 0.379_948_962_255_224_9, 6.300_857_314_372_318_5e-18);
        close(Dd::from(0.3).erf(), 0.328_626_759_459_127_4, 2.290_825_444_698_277_7e-17);
        close(Dd::from(2.5).erf(), 0.999_593_047_982_555, 4.692_515_109_704_223_4e-17);
        close(Dd::from(-4.5).erf(), -0.999_999_999_803_383_9, -1.261_472_797_505_494_7e-17);
        close(LN2.exp(), 2.0, 0.0);
        close(Dd::ZERO.exp(), 1.0, 0.0);
    }

    #[test]
    fn agrees_with_f64_library_functions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let x: f64 = rng.random_range(-6.0..6.0);
            let d = Dd::from(x);
            assert!((d.exp().to_f64() - x.exp()).abs() <= 4e-16 * x.exp());
            assert!((d.tanh().to_f64() - x.tanh()).abs() <= 4e-16);
            assert!((d.erf().to_f64() - libm::erf(x)).abs() <= 4e-16);
            assert!((d.abs().sqrt().to_f64() - x.abs().sqrt()).abs() <= 4e-16 * x.abs().sqrt());
        }
    }

    #[test]
    fn net_forward_matches_production_net() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for act in [Activation::Gelu, Activation::GeluTanh] {
            let spec = NetSpec::new(6, 9).unwrap().with_activation(act);
            let mut net = CorrectionNet::<f64>::init(spec, 4);
            for p in net.params_mut() {
                *p += rng.random_range(-0.3..0.3);
            }
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (y, _) = net.forward(&x).unwrap();
            let r = net_forward(spec, net.eps(), &to_dd(net.params()), &to_dd(&x));
            for (a, b) in y.iter().zip(&r) {
                assert!((a - b.to_f64()).abs() <= 1e-13 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn problem_loss_matches_engine() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shape = Shape::new(3, 4, 2).unwrap();
        for mode in AblationMode::ALL {
            for loss in [LossKind::Mse, LossKind::Mae] {
                let cfg = AdaptConfig { mode, loss, seed: 7, ..AdaptConfig::default() };
                let mut st = AdaptState::<f64>::new(&cfg, shape, Scaler::new(3.0, 2.5).unwrap()).unwrap();
                let p: Vec<f64> = st.flat_params().iter().map(|v| v + rng.random_range(-0.5..0.5)).collect();
                st.set_flat_params(&p).unwrap();
                let mask: Vec<bool> = (0..shape.len()).map(|i| i % 7 != 3).collect();
                let o = SeriesTensor::with_mask(
                    shape,
                    (0..shape.len()).map(|_| rng.random_range(-5.0..10.0)).collect(),
                    mask,
                )
                .unwrap();
                let y = SeriesTensor::from_fn(shape, |_, _, _| rng.random_range(-5.0..10.0)).unwrap();
                let want = st.loss(&o, &y).unwrap().unwrap();
                let got = AdaptProblem::new(&st, &o, &y).loss(&to_dd(&p)).unwrap().to_f64();
                assert!((want - got).abs() <= 1e-13 * want, "{mode} {loss:?}: {want} {got}");
            }
        }
    }

    #[test]
    fn central_differences_of_a_polynomial_are_exact_to_truncation() {
        let f = |p: &[Dd]| p[0] * p[0] * p[0] + p[1] * 3.0;
        let g = central_differences(f, &[0.5, -2.0], REFERENCE_STEP);
        assert!((g[0] - 0.75).abs() <= 1e-17);
        assert!((g[1] - 3.0).abs() <= 1e-17);
        let c = compare(&[0.75, 3.0 + 3e-7], &g);
        assert_eq!(c.worst_index, 1);
        assert!((c.max_rel_err - 1e-7).abs() < 1e-9);
    }
}
