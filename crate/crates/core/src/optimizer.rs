//! First-order optimizers over a flat parameter vector and a central
//! finite-difference gradient checker.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_LR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    m: Vec<S>,
    v: Vec<S>,
    step: u64,
}

impl<S: Scalar> AdamState<S> {
    /// Fresh state with β1 = 0.9, β2 = 0.999, eps = 1e-8.
    pub fn new(n_params: usize, lr: S) -> Self {
        Self::with_hyper(n_params, lr, S::lit(0.9), S::lit(0.999), S::lit(1e-8))
    }

    pub fn with_hyper(n_params: usize, lr: S, beta1: S, beta2: S, eps: S) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![S::zero(); n_params],
            v: vec![S::zero(); n_params],
            step: 0,
        }
    }

    /// Restores a state from saved moments.
    pub fn from_parts(lr: S, beta1: S, beta2: S, eps: S, m: Vec<S>, v: Vec<S>, step: u64) -> Result<Self> {
        if m.len() != v.len() {
            return Err(Error::shape(format!(
                "first moments have {} entries, second moments {}",
                m.len(),
                v.len()
            )));
        }
        if v.iter().any(|&x| x < S::zero()) {
            return Err(Error::contract("second moments must be non-negative"));
        }
        Ok(Self {
            lr,
            beta1,
            beta2,
            eps,
            m,
            v,
            step,
        })
    }

    pub fn m(&self) -> &[S] {
        &self.m
    }

    pub fn v(&self) -> &[S] {
        &self.v
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One bias-corrected Adam update in place.
    pub fn step(&mut self, params: &mut [S], grads: &[S]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(format!(
                "optimizer holds {} moments, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        check_finite(grads)?;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = S::one() - self.beta1.powi(t);
        let bc2 = S::one() - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = b1 * *m + (S::one() - b1) * g;
            *v = b2 * *v + (S::one() - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> AdamState<T> {
        let c = |x: S| T::lit(x.as_f64());
        AdamState {
            lr: c(self.lr),
            beta1: c(self.beta1),
            beta2: c(self.beta2),
            eps: c(self.eps),
            m: self.m.iter().map(|&x| c(x)).collect(),
            v: self.v.iter().map(|&x| c(x)).collect(),
            step: self.step,
        }
    }
}

/// `params ← params − lr·grads`.
pub fn sgd_step<S: Scalar>(lr: S, params: &mut [S], grads: &[S]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape(format!(
            "{} params vs {} grads",
            params.len(),
            grads.len()
        )));
    }
    check_finite(grads)?;
    for (p, &g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

fn check_finite<S: Scalar>(grads: &[S]) -> Result<()> {
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::contract(format!("gradient {i} is not finite")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "adam" => Some(OptimizerKind::Adam),
            "sgd" => Some(OptimizerKind::Sgd),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer<S> {
    Adam(AdamState<S>),
    Sgd { lr: S, steps: u64 },
}

impl<S: Scalar> Optimizer<S> {
    pub fn new(kind: OptimizerKind, n_params: usize, lr: S) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(AdamState::new(n_params, lr)),
            OptimizerKind::Sgd => Optimizer::Sgd { lr, steps: 0 },
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        match self {
            Optimizer::Adam(_) => OptimizerKind::Adam,
            Optimizer::Sgd { .. } => OptimizerKind::Sgd,
        }
    }

    pub fn lr(&self) -> S {
        match self {
            Optimizer::Adam(a) => a.lr,
            Optimizer::Sgd { lr, .. } => *lr,
        }
    }

    pub fn set_lr(&mut self, new_lr: S) {
        match self {
            Optimizer::Adam(a) => a.lr = new_lr,
            Optimizer::Sgd { lr, .. } => *lr = new_lr,
        }
    }

    pub fn step_count(&self) -> u64 {
        match self {
            Optimizer::Adam(a) => a.step_count(),
            Optimizer::Sgd { steps, .. } => *steps,
        }
    }

    pub fn step(&mut self, params: &mut [S], grads: &[S]) -> Result<()> {
        match self {
            Optimizer::Adam(a) => a.step(params, grads),
            Optimizer::Sgd { lr, steps } => {
                sgd_step(*lr, params, grads)?;
                *steps += 1;
                Ok(())
            }
        }
    }

    pub fn cast<T: Scalar>(&self) -> Optimizer<T> {
        match self {
            Optimizer::Adam(a) => Optimizer::Adam(a.cast()),
            Optimizer::Sgd { lr, steps } => Optimizer::Sgd {
                lr: T::lit(lr.as_f64()),
                steps: *steps,
            },
        }
    }
}

/// Rescales `grads` so its Euclidean norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm<S: Scalar>(grads: &mut [S], max_norm: S) -> S {
    let norm = grads.iter().map(|&g| g * g).sum::<S>().sqrt();
    if norm > max_norm && norm > S::zero() {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck<S> {
    pub max_rel_err: S,
    /// Coordinate where the worst error occurred.
    pub worst_index: usize,
}

/// Compares `analytic` with central differences `(L(p+h) − L(p−h)) / 2h`
/// coordinate by coordinate. Relative error uses the denominator
/// `max(|analytic|, |fd|, 1e-12)`.
pub fn grad_check<S, F>(mut loss: F, params: &[S], analytic: &[S], h: S) -> Result<GradCheck<S>>
where
    S: Scalar,
    F: FnMut(&[S]) -> Result<S>,
{
    if params.len() != analytic.len() {
        return Err(Error::shape(format!(
            "{} params vs {} analytic gradients",
            params.len(),
            analytic.len()
        )));
    }
    if h <= S::zero() {
        return Err(Error::config("finite-difference step must be positive"));
    }
    let mut probe = params.to_vec();
    let mut worst = GradCheck {
        max_rel_err: S::zero(),
        worst_index: 0,
    };
    let floor = S::lit(1e-12);
    for k in 0..params.len() {
        let orig = probe[k];
        probe[k] = orig + h;
        let up = loss(&probe)?;
        probe[k] = orig - h;
        let down = loss(&probe)?;
        probe[k] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::contract(format!("loss not finite when probing coordinate {k}")));
        }
        let fd = (up - down) / (h + h);
        let a = analytic[k];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(floor);
        if rel > worst.max_rel_err {
            worst = GradCheck {
                max_rel_err: rel,
                worst_index: k,
            };
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{masked_mse, SeriesTensor, Shape};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut adam = AdamState::new(3, 1e-4f64);
        let mut p = vec![1.0, -2.0, 3.5];
        adam.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_has_magnitude_lr() {
        let lr = 1e-4;
        let mut adam = AdamState::new(1, lr);
        let mut p = vec![0.0f64];
        adam.step(&mut p, &[0.5]).unwrap();
        let want = -lr * 0.5 / (0.5 + 1e-8);
        assert!((p[0] - want).abs() <= 1e-8 * want.abs());
    }

    #[test]
    fn adam_is_deterministic() {
        let start = AdamState::new(2, 1e-3f64);
        let run = || {
            let mut s = start.clone();
            let mut p = vec![0.3, 0.7];
            s.step(&mut p, &[0.1, -0.2]).unwrap();
            s.step(&mut p, &[0.05, 0.4]).unwrap();
            (s, p)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn adam_rejects_bad_inputs() {
        let mut adam = AdamState::new(2, 1e-3f64);
        let mut p = vec![0.0; 2];
        assert!(matches!(adam.step(&mut p, &[1.0]), Err(Error::Shape(_))));
        assert!(matches!(
            adam.step(&mut p, &[1.0, f64::NAN]),
            Err(Error::Contract(_))
        ));
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn sgd_examples() {
        let mut p = vec![1.0f64];
        sgd_step(0.1, &mut p, &[2.0]).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-15);
        let mut p = vec![1.0f64, 2.0];
        sgd_step(0.0, &mut p, &[5.0, -3.0]).unwrap();
        assert_eq!(p, vec![1.0, 2.0]);
        assert!(sgd_step(0.1, &mut p, &[1.0]).is_err());
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = vec![3.0f64, 4.0];
        let before = clip_grad_norm(&mut g, 1.0);
        assert_eq!(before, 5.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
        let mut g = vec![0.1f64, 0.1];
        clip_grad_norm(&mut g, 1.0);
        assert_eq!(g, vec![0.1, 0.1]);
    }

    #[test]
    fn grad_check_on_quadratic() {
        let p = vec![0.3f64, -1.7, 2.2, 0.0];
        let analytic: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
        let r = grad_check(|q| Ok(q.iter().map(|x| x * x).sum()), &p, &analytic, 1e-5).unwrap();
        assert!(r.max_rel_err <= 1e-9, "{:?}", r);
    }

    #[test]
    fn grad_check_on_constant() {
        let p = vec![1.0f64, 2.0];
        let r = grad_check(|_| Ok(4.2), &p, &[0.0, 0.0], 1e-5).unwrap();
        assert!(r.max_rel_err <= 1e-9);
    }

    #[test]
    fn grad_check_rejects_non_finite_loss() {
        let r = grad_check(|_| Ok(f64::NAN), &[1.0], &[0.0], 1e-5);
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    // Linear model ŷ = A·p scored with masked MSE; some step in the
    // geometric grid must strictly decrease the loss.
    #[test]
    fn line_search_grid_finds_descent() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..50 {
            let (rows, cols) = (rng.random_range(1..8), rng.random_range(1..6));
            let a: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..rows).map(|_| rng.random_range(-5.0..5.0)).collect();
            let p: Vec<f64> = (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect();
            let shape = Shape::new(1, rows, 1).unwrap();
            let truth = SeriesTensor::from_values(shape, y.clone()).unwrap();
            let loss = |p: &[f64]| {
                let pred: Vec<f64> = (0..rows)
                    .map(|r| (0..cols).map(|c| a[r * cols + c] * p[c]).sum())
                    .collect();
                masked_mse(&truth, &SeriesTensor::from_values(shape, pred).unwrap()).unwrap()
            };
            let resid: Vec<f64> = (0..rows)
                .map(|r| (0..cols).map(|c| a[r * cols + c] * p[c]).sum::<f64>() - y[r])
                .collect();
            let grad: Vec<f64> = (0..cols)
                .map(|c| (0..rows).map(|r| 2.0 * resid[r] * a[r * cols + c]).sum::<f64>() / rows as f64)
                .collect();
            if grad.iter().all(|g| g.abs() < 1e-12) {
                continue;
            }
            let base = loss(&p);
            let descended = (2..=8).any(|e| {
                let mut q = p.clone();
                sgd_step(10f64.powi(-e), &mut q, &grad).unwrap();
                loss(&q) < base
            });
            assert!(descended);
        }
    }

    proptest! {
        #[test]
        fn adam_commutes_with_permutation(
            g in prop::collection::vec(-10.0f64..10.0, 6),
            p in prop::collection::vec(-1.0f64..1.0, 6),
            rot in 0usize..6,
        ) {
            let perm = |v: &[f64]| { let mut w = v.to_vec(); w.rotate_left(rot); w };
            let mut a = AdamState::new(6, 1e-3);
            let mut pa = p.clone();
            a.step(&mut pa, &g).unwrap();
            a.step(&mut pa, &g).unwrap();
            let mut b = AdamState::new(6, 1e-3);
            let mut pb = perm(&p);
            b.step(&mut pb, &perm(&g)).unwrap();
            b.step(&mut pb, &perm(&g)).unwrap();
            prop_assert_eq!(perm(&pa), pb);
            prop_assert_eq!(perm(a.m()), b.m().to_vec());
            prop_assert_eq!(perm(a.v()), b.v().to_vec());
        }

        #[test]
        fn adam_first_step_is_bounded_by_lr(g in prop::collection::vec(-1e3f64..1e3, 1..20)) {
            let lr = 1e-4;
            let mut a = AdamState::new(g.len(), lr);
            let mut p = vec![0.0; g.len()];
            a.step(&mut p, &g).unwrap();
            for x in &p {
                prop_assert!(x.abs() <= lr * (1.0 + 1e-12));
            }
            prop_assert!(a.v().iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn sgd_is_linear_in_grads(
            g1 in prop::collection::vec(-5.0f64..5.0, 4),
            g2 in prop::collection::vec(-5.0f64..5.0, 4),
        ) {
            let lr = 0.25;
            let mut a = vec![0.0; 4];
            sgd_step(lr, &mut a, &g1).unwrap();
            sgd_step(lr, &mut a, &g2).unwrap();
            let sum: Vec<f64> = g1.iter().zip(&g2).map(|(x, y)| x + y).collect();
            let mut b = vec![0.0; 4];
            sgd_step(lr, &mut b, &sum).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
