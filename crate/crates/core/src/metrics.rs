//! MAE, RMSE and MAPE with a per-horizon breakdown.
//!
//! Sums accumulate in `f64` per horizon step. Aggregates are the
//! count-weighted average of the per-horizon means, which is the mean over all
//! counted cells.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::SeriesTensor;

/// Cells with truth below this are dropped under [`Policy::Grid`].
pub const GRID_MIN_FLOW: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Policy {
    /// Skip missing cells; skip zero truth for MAPE only.
    #[default]
    Graph,
    /// As `Graph`, and also skip cells whose truth is below 10.
    Grid,
}

impl Policy {
    pub fn name(self) -> &'static str {
        match self {
            Policy::Graph => "graph",
            Policy::Grid => "grid",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "graph" => Some(Policy::Graph),
            "grid" => Some(Policy::Grid),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricAccumulator {
    policy: Policy,
    abs: Vec<f64>,
    sq: Vec<f64>,
    ape: Vec<f64>,
    count: Vec<u64>,
    ape_count: Vec<u64>,
}

impl MetricAccumulator {
    pub fn new(policy: Policy, horizon: usize) -> Self {
        Self {
            policy,
            abs: vec![0.0; horizon],
            sq: vec![0.0; horizon],
            ape: vec![0.0; horizon],
            count: vec![0; horizon],
            ape_count: vec![0; horizon],
        }
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn horizon(&self) -> usize {
        self.count.len()
    }

    /// Adds one cell at horizon step `h`; returns whether it was counted.
    pub fn push(&mut self, h: usize, truth: f64, pred: f64) -> bool {
        if self.policy == Policy::Grid && truth < GRID_MIN_FLOW {
            return false;
        }
        let err = (pred - truth).abs();
        self.abs[h] += err;
        self.sq[h] += err * err;
        self.count[h] += 1;
        if truth != 0.0 {
            self.ape[h] += err / truth.abs();
            self.ape_count[h] += 1;
        }
        true
    }

    /// Adds an aligned `N×H×C` pair; cells missing in either are skipped.
    pub fn push_tensors<S: Scalar>(&mut self, truth: &SeriesTensor<S>, pred: &SeriesTensor<S>) -> Result<()> {
        truth.check_same_shape(pred)?;
        let shape = truth.shape();
        if shape.n_steps != self.horizon() {
            return Err(Error::shape(format!(
                "accumulator has horizon {}, tensor has {} steps",
                self.horizon(),
                shape.n_steps
            )));
        }
        let (tv, tm, pv, pm) = (truth.values(), truth.mask(), pred.values(), pred.mask());
        for n in 0..shape.n_nodes {
            for h in 0..shape.n_steps {
                for c in 0..shape.n_channels {
                    let i = shape.index(n, h, c);
                    if tm[i] && pm[i] {
                        self.push(h, tv[i].as_f64(), pv[i].as_f64());
                    }
                }
            }
        }
        Ok(())
    }

    /// Combines shards accumulated independently.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.policy != self.policy || other.horizon() != self.horizon() {
            return Err(Error::shape("cannot merge accumulators with different policy or horizon"));
        }
        for h in 0..self.horizon() {
            self.abs[h] += other.abs[h];
            self.sq[h] += other.sq[h];
            self.ape[h] += other.ape[h];
            self.count[h] += other.count[h];
            self.ape_count[h] += other.ape_count[h];
        }
        Ok(())
    }

    pub fn report(&self) -> Result<MetricReport> {
        let total: u64 = self.count.iter().sum();
        if total == 0 {
            return Err(Error::degenerate("no cell passed the metric policy"));
        }
        let ape_total: u64 = self.ape_count.iter().sum();
        let mean = |s: f64, n: u64| if n == 0 { f64::NAN } else { s / n as f64 };
        let mae_h: Vec<f64> = (0..self.horizon()).map(|h| mean(self.abs[h], self.count[h])).collect();
        let mse_h: Vec<f64> = (0..self.horizon()).map(|h| mean(self.sq[h], self.count[h])).collect();
        let mape_h: Vec<f64> = (0..self.horizon())
            .map(|h| 100.0 * mean(self.ape[h], self.ape_count[h]))
            .collect();
        let weighted = |per: &[f64], counts: &[u64], n: u64| -> f64 {
            if n == 0 {
                return f64::NAN;
            }
            let s: f64 = per
                .iter()
                .zip(counts)
                .filter(|(_, &c)| c > 0)
                .map(|(&m, &c)| m * c as f64)
                .sum();
            s / n as f64
        };
        Ok(MetricReport {
            policy: self.policy,
            mae: weighted(&mae_h, &self.count, total),
            rmse: weighted(&mse_h, &self.count, total).sqrt(),
            mape: weighted(&mape_h, &self.ape_count, ape_total),
            mae_per_horizon: mae_h,
            rmse_per_horizon: mse_h.iter().map(|m| m.sqrt()).collect(),
            mape_per_horizon: mape_h,
            count: total,
            count_per_horizon: self.count.clone(),
            mape_count: ape_total,
            mape_count_per_horizon: self.ape_count.clone(),
        })
    }
}

/// Aggregates and per-horizon arrays; MAPE is in percent. Horizon steps
/// without counted cells report `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub policy: Policy,
    pub mae: f64,
    pub rmse: f64,
    pub mape: f64,
    pub mae_per_horizon: Vec<f64>,
    pub rmse_per_horizon: Vec<f64>,
    pub mape_per_horizon: Vec<f64>,
    pub count: u64,
    pub count_per_horizon: Vec<u64>,
    pub mape_count: u64,
    pub mape_count_per_horizon: Vec<u64>,
}

/// Metrics over aligned streams of `N×H×C` tensors.
pub fn metrics<S: Scalar>(truth: &[SeriesTensor<S>], pred: &[SeriesTensor<S>], policy: Policy) -> Result<MetricReport> {
    if truth.len() != pred.len() {
        return Err(Error::shape(format!(
            "{} truth entries vs {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    let Some(first) = truth.first() else {
        return Err(Error::degenerate("no entries to evaluate"));
    };
    let mut acc = MetricAccumulator::new(policy, first.shape().n_steps);
    for (t, p) in truth.iter().zip(pred) {
        acc.push_tensors(t, p)?;
    }
    acc.report()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use proptest::prelude::*;

    fn row(vals: &[f64]) -> SeriesTensor<f64> {
        SeriesTensor::from_values(Shape::new(vals.len(), 1, 1).unwrap(), vals.to_vec()).unwrap()
    }

    #[test]
    fn perfect_prediction_scores_zero() {
        let y = row(&[3.0, 4.0]);
        let r = metrics(std::slice::from_ref(&y), std::slice::from_ref(&y), Policy::Graph).unwrap();
        assert_eq!((r.mae, r.rmse, r.mape), (0.0, 0.0, 0.0));
    }

    #[test]
    fn hand_example() {
        let r = metrics(&[row(&[10.0, 20.0])], &[row(&[9.0, 22.0])], Policy::Graph).unwrap();
        assert_eq!(r.mae, 1.5);
        assert_eq!(r.mape, 10.0);
        assert_eq!(r.rmse, 2.5f64.sqrt());
    }

    #[test]
    fn grid_filter_drops_low_flow() {
        let r = metrics(&[row(&[5.0, 20.0])], &[row(&[0.0, 22.0])], Policy::Grid).unwrap();
        assert_eq!(r.mae, 2.0);
        assert_eq!(r.count, 1);
        let g = metrics(&[row(&[5.0, 20.0])], &[row(&[0.0, 22.0])], Policy::Graph).unwrap();
        assert_eq!(g.mae, 3.5);
    }

    #[test]
    fn missing_and_zero_truth() {
        let r = metrics(&[row(&[f64::NAN, 0.0, 10.0])], &[row(&[1.0, 2.0, 12.0])], Policy::Graph).unwrap();
        assert_eq!(r.count, 2);
        assert_eq!(r.mae, 2.0);
        assert_eq!(r.mape_count, 1);
        assert_eq!(r.mape, 20.0);
        let r = metrics(&[row(&[4.0])], &[row(&[f64::NAN])], Policy::Graph);
        assert!(matches!(r, Err(Error::Degenerate(_))));
    }

    #[test]
    fn per_horizon_breakdown() {
        let shape = Shape::new(1, 2, 1).unwrap();
        let y = SeriesTensor::from_values(shape, vec![10.0, 20.0]).unwrap();
        let p = SeriesTensor::from_values(shape, vec![11.0, 26.0]).unwrap();
        let r = metrics(&[y], &[p], Policy::Graph).unwrap();
        assert_eq!(r.mae_per_horizon, vec![1.0, 6.0]);
        assert_eq!(r.mape_per_horizon, vec![10.0, 30.0]);
        assert_eq!(r.mae, 3.5);
    }

    proptest! {
        #[test]
        fn matches_single_pass_oracle_and_merges(
            cells in prop::collection::vec((0.0f64..100.0, -50.0f64..150.0, any::<bool>()), 1..60),
            split in 0usize..60,
        ) {
            let horizon = 3;
            let mut acc = MetricAccumulator::new(Policy::Grid, horizon);
            let (mut a, mut b) = (MetricAccumulator::new(Policy::Grid, horizon), MetricAccumulator::new(Policy::Grid, horizon));
            let (mut s_abs, mut s_sq, mut s_ape, mut n, mut na) = (0.0, 0.0, 0.0, 0u64, 0u64);
            for (i, &(y, p, keep)) in cells.iter().enumerate() {
                let y = if keep { y } else { 0.0 };
                acc.push(i % horizon, y, p);
                if i < split { a.push(i % horizon, y, p); } else { b.push(i % horizon, y, p); }
                if y >= 10.0 {
                    s_abs += (p - y).abs();
                    s_sq += (p - y).powi(2);
                    s_ape += (p - y).abs() / y;
                    n += 1;
                    na += 1;
                }
            }
            a.merge(&b).unwrap();
            match acc.report() {
                Err(_) => prop_assert_eq!(n, 0),
                Ok(r) => {
                    let close = |x: f64, want: f64| (x - want).abs() <= 1e-9 * want.abs().max(1e-300);
                    prop_assert!(close(r.mae, s_abs / n as f64));
                    prop_assert!(close(r.rmse, (s_sq / n as f64).sqrt()));
                    prop_assert!(close(r.mape, 100.0 * s_ape / na as f64));
                    let merged = a.report().unwrap();
                    prop_assert!(close(merged.mae, r.mae));
                    prop_assert_eq!(merged.count, r.count);
                    // Count-weighted horizon means reproduce the aggregate.
                    let w: f64 = r.mae_per_horizon.iter().zip(&r.count_per_horizon)
                        .filter(|(_, &c)| c > 0).map(|(&m, &c)| m * c as f64).sum::<f64>() / r.count as f64;
                    prop_assert_eq!(w, r.mae);
                }
            }
        }
    }
}
