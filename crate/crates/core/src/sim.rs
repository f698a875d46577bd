//! Seeded generator of periodic multivariate series with per-node drift.
//!
//! `value[n,t,c] = base_amp·a_n·sin(2πt/period + φ_n) + level_n + drift_n(t) + ε`
//! with `a_n ~ U(0.5, 1.5)`, `φ_n ~ U(0, 2π)`, `level_n = base_amp·U(1.5, 2.5)`
//! and `ε ~ N(0, noise_std²)`. Node parameters are shared by all channels;
//! noise is drawn per cell.

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::error::{Error, Result};
use crate::tensor::{SeriesTensor, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DriftKind {
    /// Adds `m·base_amp·d_n·r(t)` to the level.
    #[default]
    MeanShift,
    /// Multiplies the seasonal amplitude by `1 + m·d_n·r(t)`.
    AmpScale,
    /// Shifts the seasonal phase by `m·d_n·r(t)·π`.
    PhaseShift,
}

impl DriftKind {
    pub fn name(self) -> &'static str {
        match self {
            DriftKind::MeanShift => "mean-shift",
            DriftKind::AmpScale => "amp-scale",
            DriftKind::PhaseShift => "phase-shift",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "mean-shift" => Some(DriftKind::MeanShift),
            "amp-scale" => Some(DriftKind::AmpScale),
            "phase-shift" => Some(DriftKind::PhaseShift),
            _ => None,
        }
    }
}

pub const DEFAULT_SEED: u64 = 20240501;

#[derive(Debug, Clone, PartialEq)]
pub struct DriftScenario {
    pub n_nodes: usize,
    pub n_channels: usize,
    pub length: usize,
    pub period: usize,
    pub base_amp: f64,
    pub noise_std: f64,
    pub drift_start: usize,
    pub drift_kind: DriftKind,
    /// Drift size at the end of the ramp, as a fraction of `base_amp`.
    pub drift_magnitude: f64,
    pub per_node_spread: f64,
    /// Steps over which the drift ramps up; `None` ramps until the last step
    /// and `Some(0)` is a step change.
    pub ramp_len: Option<usize>,
    pub seed: u64,
}

impl Default for DriftScenario {
    /// 50 nodes, 8 days of 5-minute steps, mean shift from the start of the
    /// last 20% of the series.
    fn default() -> Self {
        let period = 288;
        let length = 8 * period;
        Self {
            n_nodes: 50,
            n_channels: 1,
            length,
            period,
            base_amp: 100.0,
            noise_std: 5.0,
            drift_start: (length as f64 * 0.8).floor() as usize,
            drift_kind: DriftKind::MeanShift,
            drift_magnitude: 0.3,
            per_node_spread: 0.5,
            ramp_len: None,
            seed: DEFAULT_SEED,
        }
    }
}

/// Per-node draws behind a generated series.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeParams {
    pub amplitude: Vec<f64>,
    pub phase: Vec<f64>,
    pub level: Vec<f64>,
    pub drift_factor: Vec<f64>,
}

impl DriftScenario {
    pub fn validate(&self) -> Result<()> {
        if self.n_nodes == 0 || self.n_channels == 0 || self.length == 0 || self.period == 0 {
            return Err(Error::config("scenario dimensions and period must be positive"));
        }
        if self.drift_start >= self.length {
            return Err(Error::config(format!(
                "drift start {} is not before the series end {}",
                self.drift_start, self.length
            )));
        }
        for (name, v) in [
            ("base_amp", self.base_amp),
            ("drift_magnitude", self.drift_magnitude),
        ] {
            if !v.is_finite() {
                return Err(Error::config(format!("{name} must be finite")));
            }
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::config("noise_std must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.per_node_spread) {
            return Err(Error::config("per_node_spread must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Drift progress in `[0, 1]` at step `t`.
    pub fn ramp(&self, t: usize) -> f64 {
        if t < self.drift_start {
            return 0.0;
        }
        let span = self.ramp_len.unwrap_or(self.length - 1 - self.drift_start);
        if span == 0 {
            return 1.0;
        }
        ((t - self.drift_start) as f64 / span as f64).min(1.0)
    }

    pub fn node_params(&self) -> NodeParams {
        self.draw().0
    }

    fn draw(&self) -> (NodeParams, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n = self.n_nodes;
        let unit = |lo: f64, hi: f64| Uniform::new_inclusive(lo, hi).expect("finite bounds");
        let amp = unit(0.5, 1.5);
        let phase = unit(0.0, 2.0 * std::f64::consts::PI);
        let level = unit(1.5, 2.5);
        let spread = unit(1.0 - self.per_node_spread, 1.0 + self.per_node_spread);
        let mut p = NodeParams {
            amplitude: Vec::with_capacity(n),
            phase: Vec::with_capacity(n),
            level: Vec::with_capacity(n),
            drift_factor: Vec::with_capacity(n),
        };
        for _ in 0..n {
            p.amplitude.push(amp.sample(&mut rng));
            p.phase.push(phase.sample(&mut rng));
            p.level.push(self.base_amp * level.sample(&mut rng));
            p.drift_factor.push(spread.sample(&mut rng));
        }
        (p, rng)
    }

    /// The series without noise at node `n`, step `t`.
    pub fn clean_value(&self, p: &NodeParams, n: usize, t: usize) -> f64 {
        let r = self.ramp(t);
        let m = self.drift_magnitude * p.drift_factor[n] * r;
        let angle = 2.0 * std::f64::consts::PI * (t % self.period) as f64 / self.period as f64 + p.phase[n];
        let (amp, angle, shift) = match self.drift_kind {
            DriftKind::MeanShift => (1.0, angle, m * self.base_amp),
            DriftKind::AmpScale => (1.0 + m, angle, 0.0),
            DriftKind::PhaseShift => (1.0, angle + m * std::f64::consts::PI, 0.0),
        };
        self.base_amp * p.amplitude[n] * amp * angle.sin() + p.level[n] + shift
    }

    pub fn generate(&self) -> Result<SeriesTensor<f64>> {
        self.validate()?;
        let (p, mut rng) = self.draw();
        let noise = Normal::new(0.0, self.noise_std).map_err(|e| Error::config(e.to_string()))?;
        let shape = Shape::new(self.n_nodes, self.length, self.n_channels)?;
        let mut values = Vec::with_capacity(shape.len());
        for n in 0..self.n_nodes {
            for t in 0..self.length {
                let clean = self.clean_value(&p, n, t);
                for _ in 0..self.n_channels {
                    let eps = if self.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    values.push(clean + eps);
                }
            }
        }
        SeriesTensor::from_values(shape, values)
    }
}
