use ope_core::data::{LoggedDataset, LoggedRecord};
use ope_core::diagnostics::{bias_bound, minimax_lower_bound, variance_bound, BoundInputs};
use ope_core::estimators::*;
use ope_core::math::{
    spectral_norm_estimate, spectral_normalize, DenseMatrix, FeedForwardNet, NetShape, SgdConfig,
};
use ope_core::policy::{sample_from, Policy, SoftmaxClassifierPolicy, TabularPolicy};
use ope_core::reward::FnRewardModel;
use ope_core::robust::*;
use ope_core::sim::{log_bandit_feedback, make_blobs, split, SplitConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const K: usize = 3;

fn simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, k).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

/// Contexts are the integers 0..n as one-dimensional vectors, so a tabular
/// policy can look them up.
#[derive(Debug, Clone)]
struct Problem {
    logging: Vec<Vec<f64>>,
    target: Vec<Vec<f64>>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
    model: Vec<Vec<f64>>,
}

fn problem() -> impl Strategy<Value = Problem> {
    (2usize..12).prop_flat_map(|n| {
        (
            prop::collection::vec(simplex(K), n),
            prop::collection::vec(simplex(K), n),
            prop::collection::vec(0..K, n),
            prop::collection::vec(0.0f64..=1.0, n),
            prop::collection::vec(prop::collection::vec(0.0f64..=1.0, K), n),
        )
            .prop_map(|(logging, target, actions, rewards, model)| Problem {
                logging,
                target,
                actions,
                rewards,
                model,
            })
    })
}

impl Problem {
    fn contexts(&self) -> Vec<Vec<f64>> {
        (0..self.actions.len()).map(|i| vec![i as f64]).collect()
    }

    fn logged(&self) -> LoggedDataset {
        let records = (0..self.actions.len())
            .map(|i| LoggedRecord {
                context: vec![i as f64],
                action: self.actions[i],
                reward: self.rewards[i],
                propensity: Some(self.logging[i][self.actions[i]]),
            })
            .collect();
        LoggedDataset::new(records, K, 0.0, 1.0).unwrap()
    }

    fn target(&self) -> TabularPolicy {
        TabularPolicy::new(self.contexts(), self.target.clone()).unwrap()
    }

    fn tables(&self, logged: &LoggedDataset) -> ModelTables {
        let rows = self.model.clone();
        let model = FnRewardModel::new(K, move |x: &[f64], a| rows[x[0] as usize][a]);
        let table = ModelTable::new(logged, &model).unwrap();
        ModelTables {
            direct: Some(table.clone()),
            robust: Some(table.clone()),
            robust_iid: Some(table),
        }
    }
}

fn all_estimates(p: &Problem) -> Vec<(EstimatorKind, Option<f64>)> {
    let logged = p.logged();
    let target = p.target();
    let set = EvaluationSet::new(&logged, &target, None, DEFAULT_WEIGHT_MAX).unwrap();
    let tables = p.tables(&logged);
    EstimatorKind::ALL
        .iter()
        .map(|&k| {
            (
                k,
                EstimatorSpec::with_defaults(k).estimate(&set, &tables).ok(),
            )
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn estimators_are_pure(p in problem()) {
        let a = all_estimates(&p);
        let b = all_estimates(&p);
        for ((_, x), (_, y)) in a.iter().zip(&b) {
            prop_assert_eq!(x.map(f64::to_bits), y.map(f64::to_bits));
        }
    }

    #[test]
    fn model_based_and_self_normalized_estimates_stay_in_reward_range(p in problem()) {
        for (kind, v) in all_estimates(&p) {
            if matches!(kind, EstimatorKind::Dm | EstimatorKind::DmR | EstimatorKind::DmI | EstimatorKind::Snips) {
                let v = v.unwrap();
                prop_assert!((0.0..=1.0).contains(&v), "{kind} = {v}");
            }
        }
    }

    #[test]
    fn snips_of_a_constant_reward_is_that_constant(mut p in problem(), c in 0.0f64..=1.0) {
        p.rewards.iter_mut().for_each(|r| *r = c);
        let logged = p.logged();
        let target = p.target();
        let set = EvaluationSet::new(&logged, &target, None, DEFAULT_WEIGHT_MAX).unwrap();
        prop_assert!((v_snips(&set).unwrap() - c).abs() < 1e-12);
    }

    #[test]
    fn dr_with_infinite_shrink_cap_is_dr(p in problem()) {
        let logged = p.logged();
        let target = p.target();
        let set = EvaluationSet::new(&logged, &target, None, DEFAULT_WEIGHT_MAX).unwrap();
        let t = p.tables(&logged);
        let table = t.direct.as_ref().unwrap();
        let dr = v_dr(&set, table).unwrap();
        prop_assert!((v_dr_shrink(&set, table, f64::INFINITY).unwrap() - dr).abs() < 1e-12);
        prop_assert!((v_dr_switch(&set, table, f64::INFINITY).unwrap() - dr).abs() < 1e-12);
    }

    #[test]
    fn variance_strictly_decreases_with_ratio(
        rho_r in 1e-3f64..100.0,
        proj in -10.0f64..10.0,
        s0 in 0.1f64..10.0,
        w1 in 0.0f64..50.0,
        dw in 1e-3f64..50.0,
    ) {
        let base = BaseGaussian::new(0.5, s0).unwrap();
        let lo = conditional_gaussian(rho_r, proj, &base, DensityRatio::new(w1, f64::INFINITY).unwrap());
        let hi = conditional_gaussian(rho_r, proj, &base, DensityRatio::new(w1 + dw, f64::INFINITY).unwrap());
        prop_assert!(hi.variance < lo.variance);
        prop_assert!(hi.variance > 0.0);
    }

    #[test]
    fn zero_ratio_gives_base_distribution(rho_r in 0.0f64..1e3, proj in -1e3f64..1e3, mu0 in -2.0f64..2.0, s0 in 0.01f64..10.0) {
        let base = BaseGaussian::new(mu0, s0).unwrap();
        let g = conditional_gaussian(rho_r, proj, &base, DensityRatio::new(0.0, 100.0).unwrap());
        prop_assert_eq!(g.mean, mu0);
        prop_assert_eq!(g.variance, s0);
    }

    #[test]
    fn bounds_are_nonnegative_and_monotone(
        w in 0.0f64..100.0,
        eta in 0.0f64..1.0,
        d_eta in 1e-3f64..1.0,
        l in 0.01f64..10.0,
        n in 1.0f64..1e5,
        e in 0.0f64..2.0,
    ) {
        let x = BoundInputs { w, eta1: eta, eta2: eta, l, n, e_p_wr: e, ..BoundInputs::default() };
        let more_slack = BoundInputs { eta1: eta + d_eta, eta2: eta + d_eta, ..x };
        let more_data = BoundInputs { n: n * 2.0, ..x };
        for f in [bias_bound, variance_bound, minimax_lower_bound] {
            let v = f(&x).unwrap();
            prop_assert!(v >= 0.0);
            prop_assert!(f(&more_data).unwrap() <= v);
        }
        prop_assert!(bias_bound(&more_slack).unwrap() >= bias_bound(&x).unwrap());
        prop_assert!(variance_bound(&more_slack).unwrap() >= variance_bound(&x).unwrap());
    }

    #[test]
    fn softmax_policy_outputs_a_simplex(seed in any::<u64>(), x in prop::collection::vec(-50.0f64..50.0, 4), t in 0.05f64..5.0) {
        let net = FeedForwardNet::random(4, &[8], 5, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let p = SoftmaxClassifierPolicy::new(net, t).unwrap().probabilities(&x).unwrap();
        prop_assert_eq!(p.len(), 5);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn forward_is_bitwise_repeatable(seed in any::<u64>(), x in prop::collection::vec(-5.0f64..5.0, 3)) {
        let net = FeedForwardNet::random(3, &[6, 6], 2, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        prop_assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn spectral_normalize_gives_unit_norm(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>(), scale in 1e-3f64..1e3) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..rows * cols).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
        let m = DenseMatrix::new(rows, cols, data).unwrap();
        let s = spectral_norm_estimate(&spectral_normalize(&m, 50), 50);
        prop_assert!((s - 1.0).abs() <= 1e-2, "norm estimate {s}");
    }

    #[test]
    fn sampling_respects_zero_probabilities(p in simplex(4), zero in 0usize..4, u in any::<u64>()) {
        let mut p = p;
        p[zero] = 0.0;
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
        let mut rng = ChaCha8Rng::seed_from_u64(u);
        for _ in 0..50 {
            prop_assert_ne!(sample_from(&p, &mut rng), zero);
        }
    }

    #[test]
    fn split_partitions_rows(n in 2usize..80, frac in 0.05f64..0.95, seed in any::<u64>()) {
        let data = make_blobs(n, 2, 3, 2.0, seed).unwrap();
        let (a, b) = split(&data, &SplitConfig { train_fraction: frac, seed }).unwrap();
        prop_assert_eq!(a.len() + b.len(), n);
        prop_assert!(!a.is_empty() && !b.is_empty());
        let mut all: Vec<(u64, usize)> = (0..a.len()).map(|i| (a.context(i)[0].to_bits(), a.label(i)))
            .chain((0..b.len()).map(|i| (b.context(i)[0].to_bits(), b.label(i))))
            .collect();
        let mut orig: Vec<(u64, usize)> = (0..n).map(|i| (data.context(i)[0].to_bits(), data.label(i))).collect();
        all.sort_unstable();
        orig.sort_unstable();
        prop_assert_eq!(all, orig);
    }

    #[test]
    fn regressor_json_round_trip_is_lossless(seed in any::<u64>(), rho_r in 0.0f64..1e3, xr in prop::collection::vec(-1e3f64..1e3, 4)) {
        let net = FeedForwardNet::random(5, &[7], 4, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut reg = RobustRegressor::new(net, 2, &RobustConfig::default()).unwrap();
        reg.set_rho(RhoParams { rho_r, rho_xr: xr }).unwrap();
        let back = RobustRegressor::from_json(&reg.to_json().unwrap()).unwrap();
        prop_assert_eq!(&back, &reg);
    }
}

#[test]
fn training_keeps_rho_bounded_and_variance_positive() {
    let data = make_blobs(120, 3, 3, 2.0, 5).unwrap();
    let uniform = ope_core::policy::uniform_policy(3).unwrap();
    let logged = log_bandit_feedback(&data, &uniform, 6).unwrap();
    let shape = NetShape {
        hidden: vec![8, 8],
        spectral_norm: true,
    };
    let config = RobustConfig {
        rho_r_max: 5.0,
        ..RobustConfig::default()
    };
    let target = TabularPolicy::new(
        (0..data.len()).map(|i| data.context(i).to_vec()).collect(),
        (0..data.len())
            .map(|i| {
                let mut p = vec![0.1; 3];
                p[data.label(i)] = 0.8;
                p
            })
            .collect(),
    )
    .unwrap();
    for epochs in [0, 1, 3] {
        let sgd = SgdConfig {
            learning_rate: 1e-2,
            epochs,
            batch_size: 4,
            seed: 9,
        };
        let reg = train_robust(&logged, &target, &uniform, &shape, &sgd, &config).unwrap();
        let rho = reg.rho();
        assert!((0.0..=5.0).contains(&rho.rho_r), "rho_r = {}", rho.rho_r);
        for r in logged.records() {
            for a in 0..3 {
                for w in [0.0, 0.5, 1.0, 8.0, 100.0] {
                    let g = reg
                        .predict(&r.context, a, DensityRatio::new(w, 100.0).unwrap())
                        .unwrap();
                    assert!(g.variance > 0.0 && g.variance.is_finite());
                    assert!(g.mean.is_finite());
                }
            }
        }
        if epochs == 0 {
            assert_eq!(rho.rho_r, 0.0);
            assert!(rho.rho_xr.iter().all(|&v| v == 0.0));
        }
    }
}
