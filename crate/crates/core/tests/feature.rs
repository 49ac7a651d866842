use atst::belief::ActionMatrixSet;
use atst::feature::{
    check_admissible, k_weight_vector, sample_pairs, PsiEngine, SeriesConfig, ViolationKind,
};
use atst::model::generators::{benchmark_three_state, random_tabular};
use atst::{ActionSequence, AugmentedState, Error, LinearAtstMdp};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn model(seed: u64, beta: Vec<f64>) -> LinearAtstMdp {
    let n_a = beta.len();
    random_tabular(3, n_a, 0.8, beta, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn push(b: &[f64], m: &LinearAtstMdp, a: usize) -> Vec<f64> {
    let mut out = vec![0.0; b.len()];
    for (s, &w) in b.iter().enumerate() {
        for (t, q) in m.transition(s, a).iter().enumerate() {
            out[t] += w * q;
        }
    }
    out
}

/// Expected aggregated reward plus discounted value after the burst,
/// summed forward over the pending-action chain from the raw kernel.
fn k_forward(m: &LinearAtstMdp, x: &AugmentedState, seq: &ActionSequence, v: &[f64]) -> f64 {
    let n = m.num_states();
    let mut b = vec![0.0; n];
    b[x.anchor().unwrap()] = 1.0;
    for &a in x.tail() {
        b = push(&b, m, a);
    }
    let (gamma, mut w, mut total) = (m.gamma(), 1.0, 0.0);
    for t in 0.. {
        if w < 1e-16 {
            break;
        }
        let a = seq.action_at(t);
        let beta = m.beta(a);
        let next = push(&b, m, a);
        total += w * (0..n).map(|s| b[s] * m.reward(s, a)).sum::<f64>();
        total += w * gamma * beta * next.iter().zip(v).map(|(p, x)| p * x).sum::<f64>();
        w *= gamma * (1.0 - beta);
        b = next;
    }
    total
}

fn random_seq(rng: &mut ChaCha8Rng, n_a: usize) -> ActionSequence {
    let len = rng.random_range(1..5);
    let prefix = (0..len).map(|_| rng.random_range(0..n_a)).collect();
    if rng.random::<bool>() {
        ActionSequence::repeat_last(prefix)
    } else {
        ActionSequence::cycle(prefix)
    }
}

#[test]
fn full_observation_closed_forms() {
    let m = model(1, vec![1.0, 1.0]);
    let engine = PsiEngine::exact(&m).unwrap();
    let ams = engine.matrices();
    let eye = DMatrix::<f64>::identity(m.dim(), m.dim());
    for a in 0..2 {
        let seq = ActionSequence::repeat_last(vec![a, 1 - a]);
        let (m1, m2) = engine.m1_m2(&seq);
        assert!((m1 - (&eye + ams.get(a) * 0.8)).amax() <= 1e-12);
        assert!((m2 - ams.get(a) * 0.8).amax() <= 1e-12);
        for s in 0..3 {
            let psi = engine.psi_state(s, &seq);
            let f = m.phi(s, a);
            let mut want = DVector::zeros(2 * m.dim());
            want.rows_mut(0, m.dim()).copy_from(&(f * 0.1));
            want.rows_mut(m.dim(), m.dim()).copy_from(&(f * 0.4));
            assert!((psi - want).amax() <= 1e-12);
        }
    }
}

#[test]
fn never_observing_sums_the_product_series() {
    let m = model(2, vec![0.0, 0.0]);
    let engine = PsiEngine::exact(&m).unwrap();
    let ams = engine.matrices();
    let (m1, m2) = engine.m1_m2(&ActionSequence::constant(1));
    assert_eq!(m2.amax(), 0.0);
    // (I - γ M)^-1 summed directly
    let d = m.dim();
    let mut want = DMatrix::<f64>::identity(d, d);
    let mut term = DMatrix::<f64>::identity(d, d);
    for _ in 0..400 {
        term = &term * ams.get(1) * 0.8;
        want += &term;
    }
    assert!((m1 - want).amax() <= 1e-7);
}

#[test]
fn deeper_series_moves_psi_by_at_most_the_tail() {
    let m = model(3, vec![0.3, 0.6]);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for depth in [5, 20, 40] {
        let cut = PsiEngine::exact_with_series(&m, SeriesConfig::with_depth(0.8, m.dim(), depth)).unwrap();
        let tail = cut.series().tail_bound;
        for _ in 0..50 {
            let seq = random_seq(&mut rng, 2);
            let x = AugmentedState::with_tail(rng.random_range(0..3), vec![rng.random_range(0..2)]);
            let gap = (cut.psi(&x, &seq) - cut.psi_with_depth(&x, &seq, depth + 10)).norm();
            assert!(gap <= tail + 1e-15, "depth {depth}: {gap} > {tail}");
        }
    }
}

#[test]
fn observed_first_action_ignores_the_rest() {
    let m = model(4, vec![1.0, 0.2]);
    let engine = PsiEngine::exact(&m).unwrap();
    for s in 0..3 {
        let a = engine.psi_state(s, &ActionSequence::repeat_last(vec![0, 1]));
        let b = engine.psi_state(s, &ActionSequence::cycle(vec![0, 0, 1]));
        assert_eq!(a, b);
    }
}

#[test]
fn inner_product_matches_forward_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..10 {
        let m = model(seed, vec![0.25, 0.7]);
        let engine = PsiEngine::exact(&m).unwrap();
        let tol = 2.0 * engine.series().tail_bound * (2.0 * m.v_max() + 2.0 / 0.2) + 1e-10;
        for _ in 0..20 {
            let v: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * m.v_max()).collect();
            let w = k_weight_vector(&m, &v);
            let tail = (0..rng.random_range(0..3)).map(|_| rng.random_range(0..2)).collect();
            let x = AugmentedState::with_tail(rng.random_range(0..3), tail);
            let seq = random_seq(&mut rng, 2);
            let got = engine.psi(&x, &seq).dot(&w);
            let want = k_forward(&m, &x, &seq, &v);
            assert!((got - want).abs() <= tol, "{got} vs {want}");
        }
    }
}

#[test]
fn zero_values_leave_only_reward() {
    let m = benchmark_three_state();
    let engine = PsiEngine::exact(&m).unwrap();
    let w = k_weight_vector(&m, &[0.0; 3]);
    assert!(w.rows(m.dim(), m.dim()).iter().all(|&x| x == 0.0));
    let seq = ActionSequence::repeat_last(vec![1, 0]);
    let got = engine.psi_state(0, &seq).dot(&w);
    assert!((got - k_forward(&m, &AugmentedState::observed(0), &seq, &[0.0; 3])).abs() <= 1e-9);
}

#[test]
fn normalized_engine_constants() {
    let m = benchmark_three_state();
    let d = m.dim() as f64;
    let eps = (1.0 - m.gamma()) / (4.0 * d.sqrt());
    let ams = ActionMatrixSet::from_model(&m).unwrap();
    let engine = PsiEngine::build_estimated(&m, ams.clone(), m.betas().to_vec(), eps, 0.0).unwrap();
    assert!((engine.norm_divisor() - (1.0 + 4.0 * d.sqrt())).abs() <= 1e-12);
    assert!((engine.admissibility().unwrap() - 8.0 * d.sqrt()).abs() <= 1e-12);

    let too_big = (1.0 - m.gamma()) / (2.0 * d.sqrt()) * 1.01;
    let err = PsiEngine::build_estimated(&m, ams, m.betas().to_vec(), too_big, 0.0).unwrap_err();
    assert!(matches!(err, Error::EpsilonTooLarge { .. }));
}

#[test]
fn exact_engine_is_admissible_against_itself() {
    let m = benchmark_three_state();
    let engine = PsiEngine::exact(&m).unwrap();
    let pairs = sample_pairs(3, 2, 500, 5, &mut ChaCha8Rng::seed_from_u64(6));
    let report = check_admissible(&engine, &engine, &pairs, 1e-12);
    assert!(report.passed, "{:?}", report.violations);
    assert_eq!(report.max_error, 0.0);
}

#[test]
fn inflated_unnormalized_matrices_break_the_norm_bound() {
    let m = model(7, vec![0.0, 0.0]);
    let exact = PsiEngine::exact(&m).unwrap();
    let ams = ActionMatrixSet::from_model(&m).unwrap();
    let inflated = ActionMatrixSet::from_matrices((0..2).map(|a| ams.get(a) * 1.2).collect()).unwrap();
    let bad = PsiEngine::estimated(&m, inflated, vec![0.0, 0.0], 0.2, 0.0).unwrap();
    let pairs = sample_pairs(3, 2, 200, 3, &mut ChaCha8Rng::seed_from_u64(7));
    let report = check_admissible(&bad, &exact, &pairs, 10.0);
    assert!(!report.passed);
    assert!(report.violations.iter().any(|v| v.kind == ViolationKind::Norm));
}

#[test]
fn engines_round_trip_on_disk() {
    let m = benchmark_three_state();
    let ams = ActionMatrixSet::from_model(&m).unwrap();
    let engine = PsiEngine::build_estimated(&m, ams, vec![1.0, 0.35], 0.01, 0.05).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("engine.json");
    engine.save(&path).unwrap();
    let back = PsiEngine::load(&path).unwrap();
    assert_eq!(back.mode(), engine.mode());
    assert_eq!(back.admissibility(), engine.admissibility());
    let seq = ActionSequence::repeat_last(vec![1, 1, 0]);
    for s in 0..3 {
        assert!((back.psi_state(s, &seq) - engine.psi_state(s, &seq)).amax() <= 1e-15);
    }
}

#[test]
fn unbounded_series_round_trips_on_disk() {
    let m = benchmark_three_state();
    let ams = ActionMatrixSet::from_model(&m).unwrap();
    // large enough that the series has no finite tail bound
    let engine = PsiEngine::estimated(&m, ams, vec![1.0, 0.3], 0.5, 0.0).unwrap();
    assert!(engine.series().tail_bound.is_infinite());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("engine.json");
    engine.save(&path).unwrap();
    let back = PsiEngine::load(&path).unwrap();
    assert!(back.series().tail_bound.is_infinite());
    assert_eq!(back.series().trunc_depth, engine.series().trunc_depth);
}

proptest! {
    #[test]
    fn psi_is_short_and_prefix_stable(
        seed in 0u64..100,
        b in prop::collection::vec(0.0f64..=1.0, 2),
        prefix in prop::collection::vec(0usize..2, 1..6),
        s in 0usize..3,
    ) {
        let m = model(seed, b);
        let engine = PsiEngine::exact(&m).unwrap();
        let seq = ActionSequence::repeat_last(prefix.clone());
        let psi = engine.psi_state(s, &seq);
        prop_assert!(psi.norm() <= 1.0 + 1e-9);

        let l = engine.series().trunc_depth;
        let mut longer: Vec<usize> = (0..=l).map(|k| seq.action_at(k)).collect();
        longer.push(1 - seq.action_at(l));
        let altered = engine.psi_state(s, &ActionSequence::repeat_last(longer));
        prop_assert!((psi - altered).norm() <= 2.0 * engine.series().tail_bound + 1e-15);
    }
}
