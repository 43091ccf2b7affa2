use std::cmp::Ordering;

use diopt_core::baselines::{dc3_correct, violation_penalty};
use diopt_core::diffusion::{sample_from, NoiseModel, Schedule, ScheduleKind};
use diopt_core::evaluation::{instance_metrics, select_index, MetricsRecord};
use diopt_core::problems::{Candidate, Dataset, ProblemFamily, ProblemKind};
use diopt_core::rng;
use diopt_core::trainer::{modified_weights, quality_cmp, weight, LookupTable, RunConfig, WeightMode, WeightParams};
use ndarray::{Array1, Array2};
use proptest::prelude::*;

fn cand(f: f64, viol: Vec<f64>) -> Candidate<f64> {
    Candidate {
        z: Array1::zeros(0),
        y: Array1::zeros(0),
        objective: f,
        violations: Array1::from(viol),
        weight: 0.0,
        modified_weight: 0.0,
    }
}

/// Candidates where roughly half the violation entries are exactly zero.
fn candidates() -> impl Strategy<Value = Vec<Candidate<f64>>> {
    let one = (-100.0..100.0f64, prop::collection::vec(prop_oneof![Just(0.0), 0.0..2.0f64], 3));
    prop::collection::vec(one, 1..12).prop_map(|cs| cs.into_iter().map(|(f, v)| cand(f, v)).collect())
}

fn family() -> impl Strategy<Value = ProblemFamily<f64>> {
    (prop_oneof![Just(ProblemKind::Qp), Just(ProblemKind::Qpsr), Just(ProblemKind::Cqp)], 2..8usize, 0..50u64)
        .prop_flat_map(|(kind, n, seed)| (Just(kind), Just(n), 1..n, 1..8usize, Just(seed)))
        .prop_map(|(kind, n, n_eq, n_ineq, seed)| ProblemFamily::generate(kind, n, n_eq, n_ineq, seed).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn modified_weights_are_nonnegative(cs in candidates(), f_star in -50.0..50.0f64, full in any::<bool>()) {
        let mode = if full { WeightMode::Full } else { WeightMode::ViolationOnly };
        let p = WeightParams::default();
        let w: Vec<f64> = cs.iter().map(|c| weight(c, f_star, mode, &p)).collect();
        prop_assert!(modified_weights(&w).iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn feasible_points_dominate(cs in candidates(), f_star in -50.0..50.0f64) {
        let p = WeightParams::default();
        let w: Vec<f64> = cs.iter().map(|c| weight(c, f_star, WeightMode::Full, &p)).collect();
        let m = modified_weights(&w);
        for (i, a) in cs.iter().enumerate() {
            for (j, b) in cs.iter().enumerate() {
                if a.is_feasible(p.eps) && !b.is_feasible(p.eps) {
                    prop_assert!(w[i] > w[j]);
                    prop_assert!(m[i] >= m[j]);
                }
            }
        }
    }

    #[test]
    fn selection_ignores_order(cs in candidates(), f_star in -50.0..50.0f64, rot in 0..12usize) {
        let p = WeightParams::default();
        let mut shuffled = cs.clone();
        shuffled.rotate_left(rot % cs.len());
        shuffled.reverse();
        let a = &cs[select_index(&cs, f_star, &p).unwrap()];
        let b = &shuffled[select_index(&shuffled, f_star, &p).unwrap()];
        prop_assert_eq!(weight(a, f_star, WeightMode::Full, &p), weight(b, f_star, WeightMode::Full, &p));
        prop_assert_eq!(a.objective, b.objective);
    }

    #[test]
    fn table_never_gets_worse(cs in candidates()) {
        let eps = 0.01;
        let mut table = LookupTable::new(eps);
        let mut prev: Option<Candidate<f64>> = None;
        for c in &cs {
            table.offer(0, c);
            let cur = table.get(0).unwrap().clone();
            if let Some(p) = &prev {
                prop_assert_ne!(quality_cmp(&cur, p, eps), Ordering::Less);
            }
            prop_assert_ne!(quality_cmp(&cur, c, eps), Ordering::Less);
            prev = Some(cur);
        }
    }

    #[test]
    fn completion_satisfies_equalities(fam in family(), seed in any::<u64>()) {
        let mut r = rng::stream(seed, &[]);
        let x = rng::normal_vec::<f64>(&mut r, fam.n_eq());
        let z = rng::normal_vec::<f64>(&mut r, fam.n_free()).mapv(|v| 10.0 * v);
        let y = fam.complete(z.view(), x.view()).unwrap();
        let res = fam.eq_residual(y.view(), x.view());
        prop_assert!(res.iter().all(|v| v.abs() <= 1e-8), "{res}");
        prop_assert_eq!(fam.completion().project(y.view()), z);
    }

    #[test]
    fn anchor_is_feasible(fam in family(), seed in any::<u64>()) {
        let inst = &fam.sample_instances(1)[0];
        let mut r = rng::stream(seed, &[]);
        let x = inst.x.mapv(|v| v * rng::uniform::<f64>(&mut r, 0.0, 1.0));
        let y = fam.anchor(x.view());
        prop_assert!(fam.ineq_values(y.view()).iter().all(|&v| v <= 1e-9));
    }

    #[test]
    fn correction_never_increases_violation(fam in family(), seed in any::<u64>(), steps in 0..15usize) {
        let mut r = rng::stream(seed, &[]);
        let x = rng::normal_vec::<f64>(&mut r, fam.n_eq());
        let z = rng::normal_vec::<f64>(&mut r, fam.n_free()).mapv(|v| 5.0 * v);
        let y = fam.complete(z.view(), x.view()).unwrap();
        let yc = dc3_correct(&fam, x.view(), y.view(), steps, 0.05).unwrap();
        prop_assert!(violation_penalty(&fam, yc.view()) <= violation_penalty(&fam, y.view()));
    }

    #[test]
    fn metrics_ignore_instance_order(fam in family(), count in 1..10usize, rot in 0..10usize) {
        let data = Dataset::new(fam.clone(), fam.sample_instances(count));
        let ys: Vec<Array1<f64>> = data.instances.iter().map(|i| fam.anchor(i.x.view()).mapv(|v| v + 0.3)).collect();
        let ms: Vec<_> = data.instances.iter().zip(&ys).map(|(i, y)| instance_metrics(&fam, i.x.view(), y.view(), None, 0.01)).collect();
        let mut rotated = ms.clone();
        rotated.rotate_left(rot % count);
        let (a, b) = (MetricsRecord::from_instances(&ms), MetricsRecord::from_instances(&rotated));
        prop_assert_eq!(a.feasibility, b.feasibility);
        prop_assert!((a.objective.mean - b.objective.mean).abs() <= 1e-9 * (1.0 + a.objective.mean.abs()));
        prop_assert!((a.ineq_max.std - b.ineq_max.std).abs() <= 1e-9 * (1.0 + a.ineq_max.std));
    }

    #[test]
    fn config_round_trips(
        epochs in 1..100_000usize,
        ratio in 0.0..=1.0f64,
        lr in 1e-6..1.0f64,
        eta in 0.0..2.0f64,
        alternate in any::<bool>(),
        preset in prop::sample::select(vec!["full", "qp-desk", "toy2d-fast"]),
    ) {
        let mut cfg = RunConfig::preset(preset).unwrap();
        cfg.epochs = epochs;
        cfg.supervised_ratio = ratio;
        cfg.learning_rate = lr;
        cfg.eta = eta;
        cfg.alternate = alternate;
        let back = RunConfig::parse(&cfg.emit()).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.emit(), cfg.emit());
    }

    #[test]
    fn dataset_bytes_round_trip(fam in family(), count in 0..6usize) {
        let data = Dataset::new(fam.clone(), fam.sample_instances(count));
        let bytes = data.to_bytes().unwrap();
        let back = Dataset::<f64>::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
        prop_assert_eq!(back.family.digest(), fam.digest());
    }
}

#[test]
fn zero_eta_sampling_is_deterministic() {
    let sched = Schedule::new(5, ScheduleKind::Vp).unwrap();
    let mut r = rng::stream(1, &[]);
    let model: NoiseModel<f64> = NoiseModel::new(3, 2, 16, 8, sched, &mut r).unwrap();
    let cond = Array2::from_shape_fn((4, 2), |(i, j)| (i as f64 - j as f64) * 0.3);
    let init = Array2::from_shape_fn((4, 3), |_| rng::normal::<f64>(&mut r));
    let run = |eta: f64, seed: u64| {
        let mut rngs: Vec<_> = (0..4).map(|i| rng::stream(seed, &[i])).collect();
        sample_from(&model, cond.view(), init.clone(), eta, &mut rngs).unwrap()
    };
    assert_eq!(run(0.0, 1), run(0.0, 2));
    assert_ne!(run(1.0, 1), run(1.0, 2));
}
