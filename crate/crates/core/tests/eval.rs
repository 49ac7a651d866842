use atst::belief::{optimal_values, ActionMatrixSet};
use atst::eval::{
    exact_policy_value, mc_k_decomposition, mc_k_value, mc_policy_value, run_experiment,
    CommittedSequencePolicy, ExperimentConfig, FnPolicy, McEstimate, ModelSource, RegretShape,
    SequencePolicyEvaluator, MC_TAIL_TOL,
};
use atst::feature::PsiEngine;
use atst::learner::RegretLog;
use atst::model::generators::{benchmark_three_state, random_tabular, single_state};
use atst::model::ModelFile;
use atst::{ActionSequence, AugmentedState, Error, LinearAtstMdp};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn close(est: &McEstimate, value: f64) -> bool {
    (est.mean - value).abs() <= 3.0 * est.std_err + MC_TAIL_TOL
}

/// `(I - γ P_π)^{-1} r_π` for a stationary fully observed policy.
fn classical_value(m: &LinearAtstMdp, pi: &[usize]) -> Vec<f64> {
    let n = m.num_states();
    let p = DMatrix::from_fn(n, n, |s, t| m.transition(s, pi[s])[t]);
    let r = DVector::from_fn(n, |s, _| m.reward(s, pi[s]));
    let lhs = DMatrix::identity(n, n) - p * m.gamma();
    lhs.lu().solve(&r).unwrap().iter().copied().collect()
}

#[test]
fn full_observation_k_is_one_step_lookahead() {
    let m = random_tabular(3, 2, 0.7, vec![1.0, 1.0], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let v = classical_value(&m, &[0, 0, 0]);
    let cont = FnPolicy(|_: &AugmentedState| 0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for s in 0..3 {
        for a in 0..2 {
            let want = m.reward(s, a) + 0.7 * m.transition(s, a).iter().zip(&v).map(|(p, x)| p * x).sum::<f64>();
            let est = mc_k_value(&m, &AugmentedState::observed(s), &ActionSequence::constant(a), &cont, 20_000, &mut rng)
                .unwrap();
            assert!(close(&est, want), "{} vs {want}", est.mean);
        }
    }
}

#[test]
fn k_splits_into_reward_and_continuation() {
    let m = random_tabular(3, 2, 0.8, vec![0.3, 0.8], &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let engine = PsiEngine::exact(&m).unwrap();
    let policy = CommittedSequencePolicy::stationary(vec![
        ActionSequence::repeat_last(vec![0, 1]),
        ActionSequence::constant(1),
        ActionSequence::cycle(vec![1, 0]),
    ])
    .unwrap();
    let v = SequencePolicyEvaluator::new(&m).unwrap().evaluate(&policy).unwrap();
    let d = m.dim();
    let mut reward_w = DVector::zeros(2 * d);
    reward_w.rows_mut(0, d).copy_from(&(m.theta() * (2.0 / (1.0 - m.gamma()))));
    let mut next_w = DVector::zeros(2 * d);
    next_w.rows_mut(d, d).copy_from(&(m.integrate(&v) * 2.0));

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (x, seq) in [
        (AugmentedState::observed(0), ActionSequence::repeat_last(vec![0, 0, 1])),
        (AugmentedState::with_tail(1, vec![0]), ActionSequence::constant(0)),
        (AugmentedState::with_tail(2, vec![1, 0]), ActionSequence::cycle(vec![1, 0])),
    ] {
        let mc = mc_k_decomposition(&m, &x, &seq, &policy, 40_000, &mut rng).unwrap();
        let psi = engine.psi(&x, &seq);
        assert!(close(&mc.reward, psi.dot(&reward_w)));
        assert!(close(&mc.post_burst, psi.dot(&next_w)), "{} vs {}", mc.post_burst.mean, psi.dot(&next_w));
        assert!(close(&mc.k, psi.dot(&(reward_w.clone() + &next_w))));
    }
}

#[test]
fn policy_value_rollouts_match_the_evaluator() {
    let m = benchmark_three_state();
    let policy = CommittedSequencePolicy::stationary(vec![ActionSequence::repeat_last(vec![1, 1, 0]); 3]).unwrap();
    let v = SequencePolicyEvaluator::new(&m).unwrap().evaluate(&policy).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for s in 0..3 {
        let est = mc_policy_value(&m, &policy, s, 20_000, &mut rng).unwrap();
        assert!(close(&est, v[s]), "{} vs {}", est.mean, v[s]);
    }
}

#[test]
fn single_state_values_are_geometric() {
    let m = single_state(&[0.3, 0.9], 0.75, vec![0.5, 0.1]).unwrap();
    let ams = ActionMatrixSet::from_model(&m).unwrap();
    let n = 80;
    for a in 0..2 {
        let v = exact_policy_value(&m, &ams, &FnPolicy(move |_: &AugmentedState| a), n).unwrap();
        let want = m.reward(0, a) / 0.25;
        assert!((v[0] - want).abs() <= 0.75f64.powi(n as i32) / 0.25 + 1e-12);
    }
    let err = exact_policy_value(&m, &ams, &FnPolicy(|_: &AugmentedState| 0), 0).unwrap_err();
    assert!(matches!(err, Error::DepthExhausted));
}

#[test]
fn full_observation_matches_classical_evaluation() {
    let m = random_tabular(4, 3, 0.8, vec![1.0; 3], &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    let ams = ActionMatrixSet::from_model(&m).unwrap();
    let pi = [2, 0, 1, 1];
    let v = exact_policy_value(&m, &ams, &FnPolicy(move |x: &AugmentedState| pi[x.anchor().unwrap()]), 120)
        .unwrap();
    for (a, b) in v.iter().zip(classical_value(&m, &pi)) {
        assert!((a - b).abs() <= 1e-9);
    }
}

#[test]
fn greedy_policy_is_near_optimal() {
    // one hiding action keeps the belief tree a chain
    let m = random_tabular(3, 2, 0.7, vec![1.0, 0.4], &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let ams = ActionMatrixSet::from_model(&m).unwrap();
    let n = 30;
    let plan = optimal_values(&m, &ams, n, n).unwrap();
    let v = exact_policy_value(&m, &ams, &plan, n).unwrap();
    let slack = 2.0 * 0.7f64.powi(n as i32) / 0.3;
    for s in 0..3 {
        assert!(v[s] >= plan.value(s) - slack);
        assert!(v[s] <= plan.value(s) + slack);
    }
}

#[test]
fn evaluator_matches_the_augmented_recursion() {
    let m = benchmark_three_state();
    let ams = ActionMatrixSet::from_model(&m).unwrap();
    let policy = CommittedSequencePolicy::new(vec![
        vec![ActionSequence::constant(1); 3],
        vec![ActionSequence::repeat_last(vec![1, 0]), ActionSequence::constant(0), ActionSequence::cycle(vec![1, 1, 0])],
    ])
    .unwrap();
    let fast = SequencePolicyEvaluator::new(&m).unwrap().evaluate(&policy).unwrap();
    let slow = exact_policy_value(&m, &ams, &policy, 120).unwrap();
    for (a, b) in fast.iter().zip(&slow) {
        assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
    }
}

fn config(dir: &std::path::Path, extra: &str) -> ExperimentConfig {
    let text = format!(
        "seed = 3\nepisodes = 4\nseeds = [0, 1]\noutput_dir = {:?}\n[model]\nkind = \"benchmark\"\n[learner]\nc_rho = 0.01\n{extra}",
        dir.to_str().unwrap()
    );
    ExperimentConfig::from_toml(&text).unwrap()
}

#[test]
fn short_experiment_writes_its_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let summary = run_experiment(&config(dir.path(), "")).unwrap();
    assert_eq!(summary.seeds.len(), 2);
    let slack = summary.v_star_slack.unwrap();
    for s in &summary.seeds {
        let log = RegretLog::load(&s.log_file).unwrap();
        assert_eq!(log.rows.len(), 4);
        assert!(log.regrets().iter().all(|&r| r >= -slack - 1e-9));
        assert!(s.admissibility.is_none());
    }
    assert!(summary.plot_file.unwrap().exists());
    assert!(dir.path().join("summary.json").exists());
}

#[test]
fn estimated_experiment_reports_admissibility() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[engine]\nmode = \"estimated\"\nsamples = 3000\nadmissibility_samples = 50\n[oracle]\nenabled = false\n");
    let summary = run_experiment(&cfg).unwrap();
    for s in &summary.seeds {
        assert_eq!(s.samples, Some(3000));
        let report = s.admissibility.as_ref().unwrap();
        assert_eq!(report.samples, 50);
        assert!(s.certificate.is_some());
        assert!(s.regret.is_none());
    }
    assert!(!summary.sublinear);
}

#[test]
fn config_errors_name_the_field() {
    let cases = [
        ("seed = 1\nepisodes = 0\n[model]\nkind = \"benchmark\"\n", "episodes"),
        ("seed = 1\nepisodes = 5\nseeds = [1, 1]\n[model]\nkind = \"benchmark\"\n", "seeds"),
        ("seed = 1\nepisodes = 5\n[model]\nkind = \"benchmark\"\n[oracle]\neps = 2.0\n", "oracle.eps"),
        ("seed = 1\nepisodes = 5\n[model]\nkind = \"benchmark\"\n[engine]\nmode = \"fancy\"\n", "engine.mode"),
    ];
    for (text, field) in cases {
        match ExperimentConfig::from_toml(text) {
            Err(e @ Error::Config { .. }) => {
                assert!(e.is_validation());
                if let Error::Config { path, .. } = e {
                    assert_eq!(path, field);
                }
            }
            other => panic!("{field}: {other:?}"),
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), "");
    cfg.initial = atst::learner::InitialSchedule::Fixed(7);
    assert!(run_experiment(&cfg).unwrap_err().is_validation());
}

#[test]
fn model_paths_are_relative_to_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let m = benchmark_three_state();
    std::fs::write(dir.path().join("m.json"), serde_json::to_string(&ModelFile::from_model(&m)).unwrap()).unwrap();
    let path = dir.path().join("exp.toml");
    std::fs::write(&path, "seed = 1\nepisodes = 2\n[model]\nkind = \"file\"\npath = \"m.json\"\n").unwrap();
    let cfg = ExperimentConfig::load(&path).unwrap();
    match &cfg.model {
        ModelSource::File { path } => assert_eq!(path, &dir.path().join("m.json")),
        other => panic!("{other:?}"),
    }
    assert_eq!(cfg.output_dir, dir.path().join("out"));
    assert_eq!(cfg.model.build(1).unwrap().num_states(), 3);
}

#[test]
fn estimates_need_two_samples() {
    assert!(McEstimate::from_samples(&[1.0]).is_err());
    let e = McEstimate::from_samples(&[1.0, 1.0, 1.0]).unwrap();
    assert_eq!(e.std_err, 0.0);
    assert!(e.covers(1.0, 3.0) && !e.covers(1.001, 3.0));
}

proptest! {
    #[test]
    fn regret_shape_totals(regrets in prop::collection::vec(0.0f64..2.0, 5..200)) {
        let shape = RegretShape::from_regrets(&regrets);
        prop_assert!((shape.cumulative - regrets.iter().sum::<f64>()).abs() <= 1e-9);
        prop_assert!(shape.mean_first >= 0.0 && shape.mean_last >= 0.0);
        let flat = RegretShape::from_regrets(&vec![regrets[0]; regrets.len()]);
        prop_assert!(!flat.sublinear);
    }
}
