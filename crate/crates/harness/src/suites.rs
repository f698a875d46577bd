//! Seeded verification suites behind `gradcheck`, `verify` and the
//! acceptance run.

use std::time::{Duration, Instant};

use adcsd::decomposition::{decompose, DecompConfig};
use adcsd::engine::{theorem1_witness, theorem2_witness, AblationMode, AdaptConfig, AdaptState, LossKind, Scaler};
use adcsd::network::Activation;
use adcsd::reference::{compare, AdaptProblem, REFERENCE_STEP};
use adcsd::tensor::{masked_mse, SeriesTensor, Shape};
use adcsd::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape, scale: f64, missing: f64) -> SeriesTensor<f64> {
    let values = (0..shape.len()).map(|_| rng.random_range(-scale..scale)).collect();
    let mask = (0..shape.len()).map(|_| !rng.random_bool(missing)).collect();
    SeriesTensor::with_mask(shape, values, mask).expect("shape-consistent buffers")
}

/// One seeded gradient-check problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCase {
    pub seed: u64,
    pub mode: AblationMode,
    pub loss: LossKind,
    pub shape: Shape,
    pub hidden: usize,
    pub activation: Activation,
}

/// `count` cases drawn from `seed`: small shapes, both activations.
pub fn gradient_cases(count: usize, seed: u64, mode: AblationMode, loss: LossKind) -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| GradCase {
            seed: seed.wrapping_add(i as u64),
            mode,
            loss,
            shape: Shape::new(rng.random_range(2..=5), rng.random_range(3..=6), rng.random_range(1..=2))
                .expect("positive dims"),
            hidden: [4, 8, 12][rng.random_range(0..3)],
            activation: if i % 2 == 0 { Activation::Gelu } else { Activation::GeluTanh },
        })
        .collect()
}

/// State with every parameter moved off its initial value, a non-trivial
/// scaler, and one `(o, y)` pair with some truth cells missing.
pub fn gradient_problem(case: &GradCase) -> (AdaptState<f64>, SeriesTensor<f64>, SeriesTensor<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(case.seed ^ 0x005e_ed9d);
    let cfg = AdaptConfig {
        mode: case.mode,
        d_hidden: Some(case.hidden),
        activation: case.activation,
        loss: case.loss,
        seed: case.seed,
        ..AdaptConfig::default()
    };
    let scaler = Scaler::new(rng.random_range(-1.0..1.0), rng.random_range(0.5..2.0)).expect("positive spread");
    let mut state = AdaptState::new(&cfg, case.shape, scaler).expect("valid case");
    let p: Vec<f64> = state.flat_params().iter().map(|v| v + rng.random_range(-0.5..0.5)).collect();
    state.set_flat_params(&p).expect("same length");
    let o = random_tensor(&mut rng, case.shape, 3.0, 0.0);
    let mut y = random_tensor(&mut rng, case.shape, 3.0, 0.1);
    if y.observed_count() == 0 {
        y = random_tensor(&mut rng, case.shape, 3.0, 0.0);
    }
    (state, o, y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradOutcome {
    pub case: GradCase,
    pub params: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub reference: f64,
    /// Largest reference magnitude over all coordinates.
    pub reference_scale: f64,
}

/// Analytic gradient in precision `S` against central differences of the
/// same problem evaluated in double-double.
pub fn gradient_check<S: Scalar>(case: &GradCase) -> GradOutcome {
    let (state, o, y) = gradient_problem(case);
    let (state, o, y) = (state.cast::<S>(), o.cast::<S>(), y.cast::<S>());
    let (_, g) = state
        .loss_and_gradient(&o, &y)
        .expect("valid problem")
        .expect("truth has observed cells");
    let params: Vec<f64> = state.flat_params().iter().map(|v| v.as_f64()).collect();
    let reference = AdaptProblem::new(&state, &o, &y)
        .gradient(&params, REFERENCE_STEP)
        .expect("finite loss");
    let analytic: Vec<f64> = g.iter().map(|v| v.as_f64()).collect();
    let c = compare(&analytic, &reference);
    GradOutcome {
        case: *case,
        params: params.len(),
        max_rel_err: c.max_rel_err,
        worst_index: c.worst_index,
        analytic: analytic[c.worst_index],
        reference: reference[c.worst_index],
        reference_scale: reference.iter().fold(0.0, |m, v| v.abs().max(m)),
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WitnessOutcome {
    pub instances: usize,
    /// Largest corrected loss `ℓ(y, o + r)`.
    pub t1_max_corrected: f64,
    /// Smallest base loss `ℓ(y, o)`.
    pub t1_min_base: f64,
    /// Largest relative gap between the loss without the original output
    /// and `mean(o²)`.
    pub t2_max_identity_err: f64,
    /// Smallest margin of the loss without the original over the loss with it.
    pub t2_min_gap: f64,
    pub violations: Vec<String>,
}

/// Both witnesses on `count` random instances with `o ≠ y` and `o` nonzero.
pub fn witness_suite(count: usize, seed: u64) -> WitnessOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = WitnessOutcome {
        t1_min_base: f64::INFINITY,
        t2_min_gap: f64::INFINITY,
        ..Default::default()
    };
    while out.instances < count {
        let shape = Shape::new(rng.random_range(1..=8), rng.random_range(1..=12), rng.random_range(1..=2))
            .expect("positive dims");
        let o = random_tensor(&mut rng, shape, 50.0, 0.1);
        let y = random_tensor(&mut rng, shape, 50.0, 0.1);
        // The oracle cells: observed in both tensors.
        let cells: Vec<(f64, f64)> = o
            .values()
            .iter()
            .zip(y.values())
            .zip(o.mask().iter().zip(y.mask()))
            .filter(|(_, (&a, &b))| a && b)
            .map(|((&ov, &yv), _)| (ov, yv))
            .collect();
        if cells.is_empty() {
            continue;
        }
        let i = out.instances;
        out.instances += 1;

        let r = match theorem1_witness(&o, &y) {
            Ok(r) => r,
            Err(e) => {
                out.violations.push(format!("instance {i}: residual witness rejected: {e}"));
                continue;
            }
        };
        let corrected = masked_mse(&y, &o.add(&r).expect("same shape")).expect("same shape");
        let base = masked_mse(&y, &o).expect("same shape");
        out.t1_max_corrected = out.t1_max_corrected.max(corrected);
        out.t1_min_base = out.t1_min_base.min(base);
        if !(corrected <= 1e-10 && base > 0.0) {
            out.violations.push(format!("instance {i}: corrected loss {corrected:e}, base loss {base:e}"));
        }

        match theorem2_witness(&o, &y) {
            Ok(l) => {
                let mean_sq = cells.iter().map(|(ov, _)| ov * ov).sum::<f64>() / cells.len() as f64;
                let err = (l.without_original - mean_sq).abs() / mean_sq;
                out.t2_max_identity_err = out.t2_max_identity_err.max(err);
                out.t2_min_gap = out.t2_min_gap.min(l.without_original - l.with_original);
                if !(err <= 1e-6 && l.without_original > l.with_original) {
                    out.violations.push(format!(
                        "instance {i}: losses with/without original {:e}/{:e}, mean(o²) {mean_sq:e}",
                        l.with_original, l.without_original
                    ));
                }
            }
            Err(e) => out.violations.push(format!("instance {i}: original-output witness rejected: {e}")),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompOutcome {
    pub tensors: usize,
    pub max_abs_err: f64,
    pub max_nodes: usize,
    pub max_steps: usize,
}

/// Seasonal plus trend against the input over observed cells of `count`
/// random tensors with up to 64 nodes and 24 steps.
pub fn decomposition_suite(count: usize, seed: u64) -> DecompOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DecompOutcome {
        tensors: count,
        max_abs_err: 0.0,
        max_nodes: 0,
        max_steps: 0,
    };
    for _ in 0..count {
        let steps = rng.random_range(2..=24);
        let shape = Shape::new(rng.random_range(1..=64), steps, rng.random_range(1..=2)).expect("positive dims");
        out.max_nodes = out.max_nodes.max(shape.n_nodes);
        out.max_steps = out.max_steps.max(steps);
        let kernel = 2 * rng.random_range(1..steps) + 1;
        let scale = 10f64.powi(rng.random_range(0..4));
        let x = random_tensor(&mut rng, shape, scale, 0.05);
        let d = decompose(&x, DecompConfig::new(kernel).expect("odd kernel")).expect("kernel fits");
        for i in 0..shape.len() {
            if x.mask()[i] {
                let err = (d.seasonal.values()[i] + d.trend.values()[i] - x.values()[i]).abs();
                out.max_abs_err = out.max_abs_err.max(err);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThroughputOutcome {
    pub entries: usize,
    pub median: Duration,
    pub p90: Duration,
    pub mean: Duration,
}

/// Wall time of one stream step (predict, then update on the truth) per
/// entry, for an `M5` state with `hidden` units per net.
pub fn throughput(entries: usize, nodes: usize, horizon: usize, hidden: usize, seed: u64) -> ThroughputOutcome {
    let shape = Shape::new(nodes, horizon, 1).expect("positive dims");
    let cfg = AdaptConfig {
        d_hidden: Some(hidden),
        seed,
        ..AdaptConfig::default()
    };
    let mut state = AdaptState::new(&cfg, shape, Scaler::new(50.0, 20.0).expect("positive spread")).expect("valid");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let level: Vec<f64> = (0..nodes).map(|_| rng.random_range(20.0..80.0)).collect();
    let draw = |rng: &mut ChaCha8Rng| {
        SeriesTensor::from_fn(shape, |n, _, _| level[n] + rng.random_range(-5.0..5.0)).expect("shape")
    };
    let mut times = Vec::with_capacity(entries);
    for _ in 0..entries {
        let (o, y) = (draw(&mut rng), draw(&mut rng));
        let start = Instant::now();
        let prepared = state.prepare(&o).expect("shape");
        std::hint::black_box(prepared.prediction());
        state.adapt_prepared(prepared, &y).expect("finite");
        times.push(start.elapsed());
    }
    let mean = times.iter().sum::<Duration>() / entries as u32;
    times.sort();
    ThroughputOutcome {
        entries,
        median: times[entries / 2],
        p90: times[entries * 9 / 10],
        mean,
    }
}
