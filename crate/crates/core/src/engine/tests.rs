use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::io::checkpoint::Checkpoint;
use crate::metrics::Policy;
use crate::optimizer::grad_check;
use crate::tensor::masked_mse;

fn shape(n: usize, h: usize, c: usize) -> Shape {
    Shape::new(n, h, c).unwrap()
}

fn random_tensor(rng: &mut ChaCha8Rng, s: Shape, scale: f64) -> SeriesTensor<f64> {
    SeriesTensor::from_fn(s, |_, _, _| rng.random_range(-scale..scale)).unwrap()
}

fn cfg(mode: AblationMode, seed: u64) -> AdaptConfig {
    AdaptConfig {
        mode,
        seed,
        ..AdaptConfig::default()
    }
}

/// A state with every parameter perturbed, so no path is trivially zero.
fn random_state(mode: AblationMode, s: Shape, seed: u64) -> AdaptState<f64> {
    let mut st = AdaptState::new(&cfg(mode, seed), s, Scaler::identity()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let p: Vec<f64> = st.flat_params().iter().map(|v| v + rng.random_range(-0.5..0.5)).collect();
    st.set_flat_params(&p).unwrap();
    st
}

#[test]
fn fresh_gated_modes_return_the_base_forecast_bit_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = shape(5, 6, 2);
    for mode in [AblationMode::M0, AblationMode::M3, AblationMode::M4, AblationMode::M5, AblationMode::M6] {
        let st = AdaptState::<f64>::new(&cfg(mode, 3), s, Scaler::new(40.0, 7.0).unwrap()).unwrap();
        let mut o = random_tensor(&mut rng, s, 100.0);
        o.values_mut()[3] = -0.0;
        let y = st.predict(&o).unwrap();
        let bits = |t: &SeriesTensor<f64>| t.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&y), bits(&o), "{mode}");
        assert_eq!(y.mask(), o.mask());
    }
}

#[test]
fn m0_ignores_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = shape(3, 4, 1);
    let mut st = random_state(AblationMode::M0, s, 5);
    let before = st.flat_params();
    for _ in 0..3 {
        let o = random_tensor(&mut rng, s, 10.0);
        assert_eq!(st.predict(&o).unwrap(), o);
        st.adapt(&o, &random_tensor(&mut rng, s, 10.0)).unwrap();
    }
    assert_eq!(st.flat_params(), before);
    assert_eq!(st.entries_seen(), 3);
}

#[test]
fn m2_with_zero_nets_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = shape(3, 5, 1);
    let mut st = AdaptState::<f64>::new(&cfg(AblationMode::M2, 1), s, Scaler::identity()).unwrap();
    let spec = st.net_spec();
    st.set_nets(CorrectionNet::zeros(spec), CorrectionNet::zeros(spec)).unwrap();
    let o = random_tensor(&mut rng, s, 10.0);
    assert_eq!(st.predict(&o).unwrap(), o);
}

#[test]
fn m5_matches_step_by_step_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s = shape(4, 6, 2);
    let st = random_state(AblationMode::M5, s, 9);
    let o = random_tensor(&mut rng, s, 3.0);
    let parts = decompose(&o, st.decomp()).unwrap();
    let apply = |net: &CorrectionNet<f64>, part: &SeriesTensor<f64>| {
        let mut out = Vec::new();
        for n in 0..s.n_nodes {
            out.extend(net.forward(part.node(n)).unwrap().0);
        }
        SeriesTensor::from_values(s, out).unwrap()
    };
    let cs = apply(st.g_s(), &parts.seasonal).broadcast_scale(st.lambda_s()).unwrap();
    let ct = apply(st.g_t(), &parts.trend).broadcast_scale(st.lambda_t()).unwrap();
    let want = o.add(&cs).unwrap().add(&ct).unwrap();
    let got = st.predict(&o).unwrap();
    for (a, b) in got.values().iter().zip(want.values()) {
        assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
    }
}

#[test]
fn scaler_maps_corrections_back_to_forecast_units() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = shape(3, 4, 1);
    let (mu, sigma) = (50.0, 8.0);
    for mode in [AblationMode::M1, AblationMode::M5, AblationMode::M6] {
        let raw = random_state(mode, s, 2);
        let mut scaled = raw.clone();
        scaled.scaler = Scaler::new(mu, sigma).unwrap();
        let o = random_tensor(&mut rng, s, 2.0);
        let o_big = o.map(|v| mu + sigma * v);
        let base = if mode.keeps_original() { o.clone() } else { SeriesTensor::zeros(s) };
        let base_big = if mode.keeps_original() { o_big.clone() } else { SeriesTensor::filled(s, mu) };
        let corr = raw.predict(&o).unwrap().sub(&base).unwrap();
        let corr_big = scaled.predict(&o_big).unwrap().sub(&base_big).unwrap();
        for (a, b) in corr.values().iter().zip(corr_big.values()) {
            assert!((sigma * a - b).abs() <= 1e-9 * sigma.max(b.abs()), "{mode}: {a} {b}");
        }
        let y = random_tensor(&mut rng, s, 2.0);
        let l = raw.loss(&o, &y).unwrap().unwrap();
        let l_big = scaled.loss(&o_big, &y.map(|v| mu + sigma * v)).unwrap().unwrap();
        assert!((l - l_big).abs() <= 1e-9 * l.max(1.0));
    }
}

#[test]
fn perfect_prediction_leaves_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let s = shape(3, 4, 1);
    let mut st = random_state(AblationMode::M5, s, 3);
    let o = random_tensor(&mut rng, s, 5.0);
    let y = st.predict(&o).unwrap();
    let before = st.flat_params();
    assert_eq!(st.adapt(&o, &y).unwrap(), Some(0.0));
    assert_eq!(st.flat_params(), before);
}

#[test]
fn lambda_gradient_has_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let s = shape(4, 3, 2);
    let st = AdaptState::<f64>::new(&cfg(AblationMode::M5, 11), s, Scaler::identity()).unwrap();
    let o = random_tensor(&mut rng, s, 3.0);
    let mut y = random_tensor(&mut rng, s, 3.0);
    y = SeriesTensor::with_mask(s, y.values().to_vec(), (0..s.len()).map(|i| i % 5 != 0).collect()).unwrap();
    let (_, g) = st.loss_and_gradient(&o, &y).unwrap().unwrap();
    let parts = decompose(&o, st.decomp()).unwrap();
    let count = y.observed_count() as f64;
    let [_, _, ls, lt] = st.param_groups();
    for n in 0..s.n_nodes {
        let (gs, _) = st.g_s().forward(parts.seasonal.node(n)).unwrap();
        let (gt, _) = st.g_t().forward(parts.trend.node(n)).unwrap();
        let mut ws = 0.0;
        let mut wt = 0.0;
        for k in 0..s.node_len() {
            let i = n * s.node_len() + k;
            if y.mask()[i] {
                ws += (o.values()[i] - y.values()[i]) * gs[k];
                wt += (o.values()[i] - y.values()[i]) * gt[k];
            }
        }
        assert!((g[ls.start + n] - 2.0 * ws / count).abs() <= 1e-12 * ws.abs().max(1.0));
        assert!((g[lt.start + n] - 2.0 * wt / count).abs() <= 1e-12 * wt.abs().max(1.0));
    }
    // At λ = 0 the nets receive no gradient.
    assert!(g[..lt.start - s.n_nodes].iter().all(|&v| v == 0.0));

    let p = st.flat_params();
    let lam: Vec<f64> = p[ls.start..].to_vec();
    let check = grad_check(
        |l: &[f64]| {
            let mut q = p.clone();
            q[ls.start..].copy_from_slice(l);
            let mut t = st.clone();
            t.set_flat_params(&q)?;
            Ok(t.loss(&o, &y)?.unwrap())
        },
        &lam,
        &g[ls.start..],
        1e-5,
    )
    .unwrap();
    assert!(check.max_rel_err <= 1e-7, "{check:?}");
}

#[test]
fn gradients_of_every_mode_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let s = shape(3, 4, 1);
    for mode in AblationMode::ALL {
        for loss in [LossKind::Mse, LossKind::Mae] {
            let mut st = random_state(mode, s, 21);
            st.loss = loss;
            st.scaler = Scaler::new(0.5, 2.0).unwrap();
            let o = random_tensor(&mut rng, s, 3.0);
            let y = random_tensor(&mut rng, s, 3.0);
            let (_, g) = st.loss_and_gradient(&o, &y).unwrap().unwrap();
            let p = st.flat_params();
            let mut probe = st.clone();
            let mut worst = 0.0f64;
            grad_check(
                |q: &[f64]| {
                    probe.set_flat_params(q)?;
                    Ok(probe.loss(&o, &y)?.unwrap())
                },
                &p,
                &g,
                1e-6,
            )
            .unwrap();
            // Absolute agreement at the finite-difference noise floor; the
            // relative bound is checked against the extended-precision oracle.
            let h = 1e-6;
            for k in 0..p.len() {
                let mut q = p.clone();
                q[k] += h;
                probe.set_flat_params(&q).unwrap();
                let up = probe.loss(&o, &y).unwrap().unwrap();
                q[k] -= 2.0 * h;
                probe.set_flat_params(&q).unwrap();
                let down = probe.loss(&o, &y).unwrap().unwrap();
                worst = worst.max((g[k] - (up - down) / (2.0 * h)).abs());
            }
            assert!(worst < 1e-7, "{mode} {loss:?}: {worst}");
        }
    }
}

#[test]
fn descent_with_calibrated_sgd() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let s = shape(4, 6, 1);
    let o = random_tensor(&mut rng, s, 2.0);
    let y = random_tensor(&mut rng, s, 2.0);
    let mut found = false;
    for exp in 2..=8 {
        let lr = 10f64.powi(-exp);
        let mut c = cfg(AblationMode::M5, 4);
        c.optimizer = OptimizerKind::Sgd;
        c.lr = lr;
        let mut st = AdaptState::new(&c, s, Scaler::identity()).unwrap();
        let mut losses = vec![st.loss(&o, &y).unwrap().unwrap()];
        for _ in 0..12 {
            st.adapt(&o, &y).unwrap();
            losses.push(st.loss(&o, &y).unwrap().unwrap());
        }
        if losses.windows(2).all(|w| w[1] < w[0]) {
            found = true;
            break;
        }
    }
    assert!(found, "no learning rate in the grid gave monotone descent");
}

#[test]
fn frozen_trend_path_reproduces_m3() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let s = shape(3, 6, 1);
    for (mode, freeze) in [
        (AblationMode::M3, Freeze { g_t: true, lambda_t: true, ..Freeze::default() }),
        (AblationMode::M4, Freeze { g_s: true, lambda_s: true, ..Freeze::default() }),
    ] {
        let mut c = cfg(mode, 17);
        c.lr = 1e-2;
        let mut a = AdaptState::<f64>::new(&c, s, Scaler::identity()).unwrap();
        c.mode = AblationMode::M5;
        c.freeze = freeze;
        let mut b = AdaptState::<f64>::new(&c, s, Scaler::identity()).unwrap();
        for _ in 0..15 {
            let o = random_tensor(&mut rng, s, 2.0);
            let y = random_tensor(&mut rng, s, 2.0);
            assert_eq!(a.predict(&o).unwrap(), b.predict(&o).unwrap(), "{mode}");
            assert_eq!(a.adapt(&o, &y).unwrap(), b.adapt(&o, &y).unwrap());
        }
        assert_ne!(a.lambda_s().as_slice(), b.lambda_t().as_slice());
    }
}

#[test]
fn adapt_never_writes_the_forecast() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let s = shape(3, 4, 1);
    let mut st = random_state(AblationMode::M5, s, 1);
    let o = random_tensor(&mut rng, s, 2.0);
    let copy = o.clone();
    st.adapt(&o, &random_tensor(&mut rng, s, 2.0)).unwrap();
    assert_eq!(o, copy);
}

#[test]
fn all_missing_truth_is_skipped() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let s = shape(2, 3, 1);
    let mut st = random_state(AblationMode::M5, s, 1);
    let before = st.clone();
    let y = SeriesTensor::from_values(s, vec![f64::NAN; s.len()]).unwrap();
    assert_eq!(st.adapt(&random_tensor(&mut rng, s, 1.0), &y).unwrap(), None);
    assert_eq!(st, before);
    assert_eq!(st.entries_seen(), 0);
}

#[test]
fn overflowing_loss_is_a_contract_violation() {
    let s = shape(1, 3, 1);
    let mut st = AdaptState::<f64>::new(&cfg(AblationMode::M5, 1), s, Scaler::identity()).unwrap();
    let o = SeriesTensor::filled(s, -1e200);
    let y = SeriesTensor::filled(s, 1e200);
    assert!(matches!(st.adapt(&o, &y), Err(Error::Contract(_))));
}

#[test]
fn shape_mismatch_is_rejected() {
    let st = AdaptState::<f64>::new(&cfg(AblationMode::M5, 1), shape(2, 3, 1), Scaler::identity()).unwrap();
    assert!(matches!(st.predict(&SeriesTensor::zeros(shape(3, 3, 1))), Err(Error::Shape(_))));
    let bad_kernel = AdaptConfig { decomp: DecompConfig::new(7).unwrap(), ..AdaptConfig::default() };
    assert!(matches!(AdaptState::<f64>::new(&bad_kernel, shape(2, 3, 1), Scaler::identity()), Err(Error::Config(_))));
}

#[test]
fn checkpoint_round_trip_and_resume() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let s = shape(3, 4, 1);
    let mut c = cfg(AblationMode::M5, 3);
    c.lr = 1e-2;
    c.clip = Some(5.0);
    let fresh = AdaptState::<f64>::new(&c, s, Scaler::new(1.5, 2.0).unwrap()).unwrap();
    let text = fresh.to_checkpoint().to_text();
    assert!(text.contains("array lambda_s 3\n0 0 0\n"));
    assert!(text.contains("array lambda_t 3\n0 0 0\n"));

    let mut st = fresh.clone();
    let data: Vec<_> = (0..8).map(|_| (random_tensor(&mut rng, s, 2.0), random_tensor(&mut rng, s, 2.0))).collect();
    for (o, y) in &data[..4] {
        st.adapt(o, y).unwrap();
    }
    let text = st.to_checkpoint().to_text();
    let mut resumed = AdaptState::<f64>::from_checkpoint(&Checkpoint::parse(&text).unwrap()).unwrap();
    assert_eq!(resumed.to_checkpoint().to_text(), text);
    assert_eq!(resumed, st);
    for (o, y) in &data[4..] {
        let a = st.predict(o).unwrap();
        let b = resumed.predict(o).unwrap();
        assert_eq!(a.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        st.adapt(o, y).unwrap();
        resumed.adapt(o, y).unwrap();
    }
    assert!(matches!(AdaptState::<f32>::from_checkpoint(&Checkpoint::parse(&text).unwrap()), Err(Error::Config(_))));
    assert!(matches!(resumed.predict(&SeriesTensor::zeros(shape(4, 4, 1))), Err(Error::Shape(_))));
}

fn stream(rng: &mut ChaCha8Rng, s: Shape, len: usize) -> Vec<StreamEntry<f64>> {
    (0..len)
        .map(|_| {
            let x = random_tensor(rng, shape(s.n_nodes, 5, s.n_channels), 2.0);
            let o = random_tensor(rng, s, 2.0);
            let y = o.map(|v| 1.3 * v + 0.4);
            StreamEntry::new(x, o, y).unwrap()
        })
        .collect()
}

#[test]
fn single_entry_stream_predicts_base_and_updates_once() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let s = shape(3, 4, 1);
    let entries = stream(&mut rng, s, 1);
    let mut st = AdaptState::new(&cfg(AblationMode::M5, 1), s, Scaler::identity()).unwrap();
    let r = run_stream(&mut st, &entries, 1, Policy::Graph).unwrap();
    assert_eq!(r.predictions[0], entries[0].base_forecast);
    assert_eq!(r.updates, 1);
    assert_eq!(st.entries_seen(), 1);
}

#[test]
fn m0_stream_is_the_base_forecast() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let s = shape(3, 4, 1);
    let entries = stream(&mut rng, s, 6);
    let mut st = random_state(AblationMode::M0, s, 2);
    let before = st.flat_params();
    let r = run_stream(&mut st, &entries, 1, Policy::Graph).unwrap();
    for (p, e) in r.predictions.iter().zip(&entries) {
        assert_eq!(p, &e.base_forecast);
    }
    assert_eq!(st.flat_params(), before);
}

#[test]
fn label_delay_replay_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let s = shape(3, 4, 1);
    let entries = stream(&mut rng, s, 10);
    let mut c = cfg(AblationMode::M5, 5);
    c.lr = 1e-2;
    let fresh = AdaptState::<f64>::new(&c, s, Scaler::identity()).unwrap();
    let mut runs = Vec::new();
    for delay in [0, 1, 4] {
        let mut st = fresh.clone();
        let r = run_stream(&mut st, &entries, delay, Policy::Graph).unwrap();
        let d = delay.max(1);
        for (t, pred) in r.predictions.iter().enumerate() {
            let mut replay = fresh.clone();
            for e in entries.iter().take((t + 1).saturating_sub(d)) {
                replay.adapt(&e.base_forecast, &e.truth).unwrap();
            }
            assert_eq!(pred, &replay.predict(&entries[t].base_forecast).unwrap(), "delay {delay} entry {t}");
        }
        for t in 0..d {
            assert_eq!(r.predictions[t], entries[t].base_forecast);
        }
        assert_eq!(st.entries_seen(), entries.len() as u64);
        runs.push(r);
    }
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[1].predictions[0], runs[2].predictions[0]);
    assert_ne!(runs[1].predictions[5], runs[2].predictions[5]);
}

#[test]
fn stream_rejects_mixed_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let s = shape(3, 4, 1);
    let mut entries = stream(&mut rng, s, 3);
    entries[2].base_forecast = SeriesTensor::zeros(shape(3, 5, 1));
    let mut st = AdaptState::<f64>::new(&cfg(AblationMode::M5, 1), s, Scaler::identity()).unwrap();
    assert!(matches!(run_stream(&mut st, &entries, 1, Policy::Graph), Err(Error::Shape(_))));
}

#[test]
fn adaptation_reduces_a_systematic_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let s = shape(4, 6, 1);
    let entries = stream(&mut rng, s, 300);
    let mut c = cfg(AblationMode::M5, 2);
    c.lr = 1e-2;
    let mut st = AdaptState::new(&c, s, Scaler::identity()).unwrap();
    let adapted = run_stream(&mut st, &entries, 1, Policy::Graph).unwrap();
    let mut base = AdaptState::new(&cfg(AblationMode::M0, 2), s, Scaler::identity()).unwrap();
    let plain = run_stream(&mut base, &entries, 1, Policy::Graph).unwrap();
    assert!(adapted.metrics.mae < 0.8 * plain.metrics.mae, "{} vs {}", adapted.metrics.mae, plain.metrics.mae);
}

#[test]
fn f32_state_matches_f64_closely() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let s = shape(3, 4, 1);
    let st = random_state(AblationMode::M5, s, 4);
    let st32: AdaptState<f32> = st.cast();
    let o = random_tensor(&mut rng, s, 2.0);
    let y64 = st.predict(&o).unwrap();
    let y32 = st32.predict(&o.cast()).unwrap();
    for (a, b) in y64.values().iter().zip(y32.values()) {
        assert!((a - *b as f64).abs() <= 1e-4 * a.abs().max(1.0));
    }
    let fresh = AdaptState::<f32>::new(&cfg(AblationMode::M5, 1), s, Scaler::identity()).unwrap();
    let o32: SeriesTensor<f32> = o.cast();
    assert_eq!(fresh.predict(&o32).unwrap(), o32);
}

#[test]
fn loss_matches_masked_mse_for_identity_scaler() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let s = shape(3, 4, 1);
    let st = random_state(AblationMode::M5, s, 4);
    let o = random_tensor(&mut rng, s, 2.0);
    let y = random_tensor(&mut rng, s, 2.0);
    let want = masked_mse(&y, &st.predict(&o).unwrap()).unwrap();
    assert_eq!(st.loss(&o, &y).unwrap().unwrap(), want);
}

#[test]
fn mode_names_round_trip() {
    for m in AblationMode::ALL {
        assert_eq!(AblationMode::from_name(m.name()), Some(m));
        assert_eq!(AblationMode::from_name(&m.name().to_lowercase()), Some(m));
    }
    assert_eq!(Freeze::parse("g_t, lambda_t").unwrap().describe(), "g_t,lambda_t");
    assert!(Freeze::parse("bogus").is_err());
}

#[test]
fn full_loss_gradient_matches_extended_precision_differences() {
    use crate::reference::{compare, AdaptProblem, REFERENCE_STEP};
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for (i, mode) in AblationMode::ALL.into_iter().enumerate() {
        let s = shape(3, 4, 1 + i % 2);
        let mut st = random_state(mode, s, 30 + i as u64);
        st.scaler = Scaler::new(0.5, 2.0).unwrap();
        let o = random_tensor(&mut rng, s, 3.0);
        let y = random_tensor(&mut rng, s, 3.0);
        let (_, g) = st.loss_and_gradient(&o, &y).unwrap().unwrap();
        let fd = AdaptProblem::new(&st, &o, &y).gradient(&st.flat_params(), REFERENCE_STEP).unwrap();
        let c = compare(&g, &fd);
        assert!(c.max_rel_err <= 1e-7, "{mode}: {c:?}");

        let st32: AdaptState<f32> = st.cast();
        let (o32, y32) = (o.cast::<f32>(), y.cast::<f32>());
        let (_, g32) = st32.loss_and_gradient(&o32, &y32).unwrap().unwrap();
        let p32: Vec<f64> = st32.flat_params().iter().map(|&v| v as f64).collect();
        let fd = AdaptProblem::new(&st32, &o32, &y32).gradient(&p32, REFERENCE_STEP).unwrap();
        let g32: Vec<f64> = g32.iter().map(|&v| v as f64).collect();
        // Single precision resolves coordinates down to about 1e-3 of the
        // largest one; below that its rounding alone exceeds 1e-4 relative.
        let floor = 1e-3 * fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (k, (a, r)) in g32.iter().zip(&fd).enumerate() {
            assert!((a - r).abs() <= 1e-4 * r.abs().max(floor), "{mode} f32 coordinate {k}: {a} vs {r}");
        }
    }
}

#[test]
fn prepared_updates_match_plain_updates() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let s = shape(4, 6, 1);
    let mut c = cfg(AblationMode::M5, 8);
    c.lr = 1e-2;
    let mut plain = AdaptState::<f64>::new(&c, s, Scaler::new(0.3, 1.7).unwrap()).unwrap();
    let mut fast = plain.clone();
    for step in 0..6 {
        let o = random_tensor(&mut rng, s, 2.0);
        let y = random_tensor(&mut rng, s, 2.0);
        let prepared = fast.prepare(&o).unwrap();
        assert_eq!(prepared.prediction(), &plain.predict(&o).unwrap());
        if step % 2 == 1 {
            // A stale pass must be recomputed, not reused.
            fast.adapt(&o, &y).unwrap();
            plain.adapt(&o, &y).unwrap();
        }
        assert_eq!(fast.adapt_prepared(prepared, &y).unwrap(), plain.adapt(&o, &y).unwrap());
        assert_eq!(fast, plain);
    }
}

mod properties {
    use proptest::prelude::*;

    use super::*;

    fn forecast() -> impl Strategy<Value = (SeriesTensor<f64>, SeriesTensor<f64>)> {
        (1usize..6, 2usize..8, 1usize..3).prop_flat_map(|(n, h, c)| {
            let s = Shape::new(n, h, c).unwrap();
            let cells = prop::collection::vec(prop::option::weighted(0.9, -1e4f64..1e4), s.len());
            (cells.clone(), cells).prop_map(move |(o, y)| {
                let t = |v: Vec<Option<f64>>| {
                    let mask = v.iter().map(Option::is_some).collect();
                    SeriesTensor::with_mask(s, v.into_iter().map(|x| x.unwrap_or(0.0)).collect(), mask).unwrap()
                };
                (t(o), t(y))
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn fresh_m5_echoes_any_forecast((o, _) in forecast(), mean in -50.0f64..50.0, std in 0.1f64..40.0, seed in 0u64..1000) {
            let st = AdaptState::new(&cfg(AblationMode::M5, seed), o.shape(), Scaler::new(mean, std).unwrap()).unwrap();
            let y = st.predict(&o).unwrap();
            let bits = |t: &SeriesTensor<f64>| t.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&y), bits(&o));
            prop_assert_eq!(y.mask(), o.mask());
        }

        #[test]
        fn updates_leave_inputs_alone_and_replay_exactly((o, y) in forecast(), mode in 0usize..7, seed in 0u64..1000) {
            let mode = AblationMode::ALL[mode];
            let mut a = random_state(mode, o.shape(), seed);
            let mut b = a.clone();
            let (o0, y0) = (o.clone(), y.clone());
            let la = a.adapt(&o, &y).unwrap();
            prop_assert_eq!(&o, &o0);
            prop_assert_eq!(&y, &y0);
            let lb = b.adapt_prepared(b.prepare(&o).unwrap(), &y).unwrap();
            prop_assert_eq!(la.map(f64::to_bits), lb.map(f64::to_bits));
            prop_assert_eq!(a, b);
        }
    }
}
