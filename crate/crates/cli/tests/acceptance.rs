//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any of them fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{ensure, Result};
use clap::Parser;
use diopt_cli::ops::{self, EvalSettings, Solver};
use diopt_cli::Cli;
use diopt_core::baselines::MbdSettings;
use diopt_core::checkpoint::{Method, Model};
use diopt_core::diffusion::{sample_from, NoiseModel, NoisePredictor};
use diopt_core::evaluation::select_index;
use diopt_core::neural::gradcheck::{GradCase, Tolerance};
use diopt_core::oracle::{grid_search_2d, solve_qp, GridSettings, OracleSettings};
use diopt_core::problems::{Candidate, Dataset, ProblemFamily, ProblemKind};
use diopt_core::rng;
use diopt_core::trainer::{
    metrics_of, modified_weights, solve_instances, weight, EpochRecord, RunConfig, WeightMode, WeightParams,
};
use ndarray::{Array1, Array2};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome { passed, detail: detail.into() })
}

/// The qp-desk run shared by the bootstrap, oracle, baseline and determinism checks.
struct Desk {
    cfg: RunConfig,
    data: Dataset<f64>,
    model: NoiseModel<f64>,
    log: Vec<EpochRecord>,
}

fn desk() -> Result<Desk> {
    let cfg = RunConfig::qp_desk();
    let mut data = ops::generate(&cfg)?;
    let failures = ops::label(&mut data, &OracleSettings::default());
    ensure!(failures.is_empty(), "labeling failed: {}", failures[0]);
    let trained = ops::train(Method::Diopt, &data, &cfg, |_| Ok(()))?;
    let Model::Diffusion(model) = trained.checkpoint.model else {
        unreachable!("diopt trains a diffusion model")
    };
    Ok(Desk { cfg, data, model, log: trained.log })
}

fn theorem() -> Result<Outcome> {
    let t0 = Instant::now();
    let est = ops::verify_theorem1(&(1..=8).collect::<Vec<_>>(), None, 1_000_000, 1e-3, 0)?;
    let secs = t0.elapsed().as_secs_f64();
    let worst = est.iter().map(|e| e.z_score()).fold(0.0, f64::max);
    let d2 = est.iter().find(|e| e.d == 2).map_or(f64::NAN, |e| e.estimate);
    outcome(
        worst <= 4.0 && (0.235..=0.265).contains(&d2) && secs < 60.0,
        format!("max z {worst:.2}, d=2 estimate {d2:.5}, {secs:.1}s"),
    )
}

fn toy_feasibility(data: &Dataset<f64>, ratio: f64, seed: u64) -> Result<f64> {
    let cfg = RunConfig { supervised_ratio: ratio, seed, ..RunConfig::toy2d_fast() };
    let trained = ops::train(Method::Diopt, data, &cfg, |_| Ok(()))?;
    let Model::Diffusion(model) = &trained.checkpoint.model else {
        unreachable!("diopt trains a diffusion model")
    };
    let test = &data.instances[ops::test_range(data, &cfg)?];
    let chosen = solve_instances(model, &data.family, test, 1, cfg.eta, 99, &WeightParams::default())?;
    Ok(metrics_of(&data.family, test, &chosen, cfg.violation_eps).feasibility)
}

fn toy() -> Result<Outcome> {
    let mut data = ops::generate(&RunConfig::toy2d_fast())?;
    ensure!(ops::label(&mut data, &OracleSettings::default()).is_empty(), "toy labeling failed");
    let (mut sup, mut dio) = (Vec::new(), Vec::new());
    for seed in 0..3 {
        sup.push(toy_feasibility(&data, 1.0, seed)?);
        dio.push(toy_feasibility(&data, 0.2, seed)?);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (s, d) = (mean(&sup), mean(&dio));
    outcome(
        s < 50.0 && d > s && d - s >= 20.0,
        format!("feasibility at K=1: supervised {sup:.1?} mean {s:.1}, diopt {dio:.1?} mean {d:.1}"),
    )
}

fn bootstrap(desk: &Desk) -> Result<Outcome> {
    let on = desk.cfg.supervised_epochs();
    let series = |f: &dyn Fn(&EpochRecord) -> Option<f64>| -> Vec<f64> { desk.log.iter().map(|r| f(r).unwrap_or(f64::NAN)).collect() };
    let nv = series(&|r| r.metrics.map(|m| m.ineq_num_viol.mean));
    let gap = series(&|r| r.metrics.and_then(|m| m.gap).map(|g| g.mean));
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    ensure!(on >= 50 && on + 50 <= nv.len(), "onset {on} leaves no 50-epoch windows");
    let (before, after) = (mean(&nv[on - 50..on]), mean(&nv[on..on + 50]));
    let pre = mean(&gap[on - 50..on]);
    let peak = gap[on..].iter().copied().fold(f64::MIN, f64::max);
    let q = gap.len() - gap.len() / 4;
    let last = mean(&gap[q..]);
    outcome(
        after < before && peak > pre && last < peak,
        format!("num viol {before:.3} -> {after:.3}; gap pre {pre:.3}, peak {peak:.3}, final quartile {last:.3}"),
    )
}

fn cand(f: f64, viol: &[f64]) -> Candidate<f64> {
    Candidate {
        z: Array1::zeros(0),
        y: Array1::zeros(0),
        objective: f,
        violations: Array1::from(viol.to_vec()),
        weight: 0.0,
        modified_weight: 0.0,
    }
}

fn weights() -> Result<Outcome> {
    let p = WeightParams::default();
    let mut fails = Vec::new();
    let mut expect = |name: &str, ok: bool| {
        if !ok {
            fails.push(name.to_string());
        }
    };
    expect("feasible at f*", weight(&cand(2.0, &[0.0, 0.0]), 2.0, WeightMode::Full, &p) == 1.0);
    expect("violations 0.5, 0.2", (weight(&cand(2.0, &[0.5, 0.2]), 2.0, WeightMode::Full, &p) + 0.7).abs() < 1e-15);
    expect("violation-only feasible", weight(&cand(2.0, &[0.0, 0.0]), 0.0, WeightMode::ViolationOnly, &p) == 0.0);
    let m = modified_weights(&[1.0, 0.2, -0.7]);
    let want: [f64; 3] = [2.5 / 3.0, 0.1 / 3.0, 0.0];
    expect("mean shift", m.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-12));
    expect("nonnegative untouched", modified_weights(&[0.5, 0.0, 2.0]) == vec![0.5, 0.0, 2.0]);
    expect("equal negatives", modified_weights(&[-0.3; 4]).iter().all(|&v| v == 0.0));
    let one = [cand(0.0, &[0.3]), cand(5.0, &[0.0]), cand(-1.0, &[1.0])];
    expect("single feasible", select_index(&one, 0.0, &p) == Some(1));
    let none = [cand(0.0, &[0.3, 0.1]), cand(0.0, &[0.2, 0.1]), cand(0.0, &[1.0, 0.0])];
    expect("least violation", select_index(&none, 0.0, &p) == Some(1));
    let pair = [cand(1.0, &[0.0]), cand(2.0, &[0.0])];
    expect("lower objective", select_index(&pair, 1.0, &p) == Some(0));

    let mut r = rng::stream(4, &[]);
    let mut bad_sets = 0;
    for _ in 0..10_000 {
        let k = 1 + (rng::uniform::<f64>(&mut r, 0.0, 12.0) as usize).min(11);
        let f_star = rng::uniform(&mut r, -10.0, 10.0);
        let cs: Vec<_> = (0..k)
            .map(|_| {
                let f = rng::uniform(&mut r, -20.0, 20.0);
                let v: Vec<f64> = (0..3)
                    .map(|_| if rng::uniform::<f64>(&mut r, 0.0, 1.0) < 0.5 { 0.0 } else { rng::uniform(&mut r, 0.0, 2.0) })
                    .collect();
                cand(f, &v)
            })
            .collect();
        let w: Vec<f64> = cs.iter().map(|c| weight(c, f_star, WeightMode::Full, &p)).collect();
        let m = modified_weights(&w);
        let dominated = cs.iter().enumerate().any(|(i, a)| {
            cs.iter().enumerate().any(|(j, b)| a.is_feasible(p.eps) && !b.is_feasible(p.eps) && (w[i] <= w[j] || m[i] < m[j]))
        });
        if dominated || m.iter().any(|&v| v < 0.0) {
            bad_sets += 1;
        }
    }
    outcome(
        fails.is_empty() && bad_sets == 0,
        format!("9 exact examples, {} failed {fails:?}; {bad_sets} of 10000 random sets violate the invariants", fails.len()),
    )
}

fn gradients() -> Result<Outcome> {
    let tol = Tolerance::default();
    let mut failed = Vec::new();
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let rep = GradCase::random(seed).check(&tol)?;
        worst = worst.max(rep.worst_rel);
        if !rep.passed() {
            failed.push(seed);
        }
    }
    outcome(failed.is_empty(), format!("20 networks, failing seeds {failed:?}, worst relative error {worst:.2e}"))
}

fn oracle(desk: &Desk) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    let mut solved = 0;
    for s in 0..25u64 {
        let (n, n_eq) = if s % 2 == 0 { (3, 1) } else { (4, 2) };
        let fam = ProblemFamily::<f64>::generate(ProblemKind::Qp, n, n_eq, 2 + (s % 4) as usize, 100 + s)?;
        for inst in fam.sample_instances(2) {
            let qp = solve_qp(&fam, inst.x.view(), 1e-9)?;
            let grid = grid_search_2d(&fam, inst.x.view(), &GridSettings::default())?;
            worst = worst.max((qp.f - grid.f).abs());
            solved += 1;
        }
    }
    let bad = desk.data.instances.iter().filter(|i| i.check_label(&desk.data.family, 1e-6).is_err()).count();
    outcome(
        solved == 50 && worst <= 1e-2 && bad == 0,
        format!("{solved} QPs, worst |f_qp - f_grid| {worst:.2e}; {bad} of {} labels outside 1e-6", desk.data.len()),
    )
}

fn completion() -> Result<Outcome> {
    let families = [
        ProblemFamily::<f64>::generate(ProblemKind::Qp, 10, 4, 8, 1)?,
        ProblemFamily::generate(ProblemKind::Qpsr, 10, 4, 8, 2)?,
        ProblemFamily::generate(ProblemKind::Cqp, 10, 4, 8, 3)?,
        {
            let c = RunConfig::qp_desk();
            ProblemFamily::generate(c.kind, c.n, c.n_eq, c.n_ineq, c.data_seed)?
        },
    ];
    let mut r = rng::stream(7, &[]);
    let mut residual: f64 = 0.0;
    let mut anchors_bad = 0;
    for fam in &families {
        for i in 0..1000 {
            let x: Array1<f64> = (0..fam.n_eq()).map(|_| rng::uniform(&mut r, -1.0, 1.0)).collect();
            if i < 250 {
                let z = rng::normal_vec::<f64>(&mut r, fam.n_free()).mapv(|v| 10.0 * v);
                let y = fam.complete(z.view(), x.view())?;
                residual = residual.max(fam.eq_residual(y.view(), x.view()).iter().fold(0.0, |a, v| a.max(v.abs())));
            }
            if fam.ineq_values(fam.anchor(x.view()).view()).iter().any(|&v| v > 1e-9) {
                anchors_bad += 1;
            }
        }
    }
    outcome(
        residual <= 1e-8 && anchors_bad == 0,
        format!("1000 completions, max equality residual {residual:.2e}; {anchors_bad} of 4000 anchors infeasible"),
    )
}

fn baseline(desk: &Desk) -> Result<Outcome> {
    let range = ops::test_range(&desk.data, &desk.cfg)?;
    let st = EvalSettings { k: 1, eta: desk.cfg.eta, seed: desk.cfg.seed };
    let run = |raw: bool, completion: bool| {
        let mbd = MbdSettings { raw_weights: raw, completion, ..MbdSettings::from_config(&desk.cfg) };
        ops::evaluate(Solver::Mbd(mbd), &desk.data, &desk.cfg, range.clone(), &st)
    };
    let with = run(true, true)?;
    let without = run(true, false)?;
    let default = run(false, true)?;
    outcome(
        with.eq_max.mean <= 1e-8 && with.ineq_mean.mean > 0.0 && without.eq_mean.mean > 1e-6,
        format!(
            "raw weights: completed eq max {:.1e}, ineq mean {:.4}; uncompleted eq mean {:.4} (exp weights: ineq mean {:.4}, feasibility {:.1}%)",
            with.eq_max.mean, with.ineq_mean.mean, without.eq_mean.mean, default.ineq_mean.mean, default.feasibility
        ),
    )
}

fn determinism(desk: &Desk) -> Result<Outcome> {
    let model = &desk.model;
    let test = &desk.data.instances[ops::test_range(&desk.data, &desk.cfg)?];
    let rows = 16.min(test.len());
    let mut cond = Array2::zeros((rows, desk.data.family.n_eq()));
    for (i, inst) in test.iter().take(rows).enumerate() {
        cond.row_mut(i).assign(&inst.x);
    }
    let mut r = rng::stream(11, &[]);
    let init = Array2::from_shape_fn((rows, model.out_dim()), |_| rng::normal::<f64>(&mut r));
    let run = |eta: f64, seed: u64| {
        let mut rngs: Vec<_> = (0..rows as u64).map(|i| rng::stream(seed, &[i])).collect();
        sample_from(model, cond.view(), init.clone(), eta, &mut rngs)
    };
    let still = run(0.0, 1)? == run(0.0, 2)?;
    let moved = run(desk.cfg.eta, 1)? != run(desk.cfg.eta, 2)?;
    outcome(still && moved, format!("eta 0 identical: {still}; eta {} differs: {moved}", desk.cfg.eta))
}

const SMALL: [&str; 18] = [
    "n=6",
    "n_eq=3",
    "n_ineq=6",
    "instances=40",
    "epochs=6",
    "baseline_epochs=6",
    "checkpoint_interval=3",
    "val_size=8",
    "test_size=8",
    "batch_size=8",
    "hidden_width=16",
    "baseline_width=16",
    "train_samples=4",
    "eval_samples=4",
    "log_samples=2",
    "mbd_steps=10",
    "mbd_samples=16",
    "dc3_train_steps=3",
];

fn cli_run(out: &Path) -> Result<()> {
    let dir = out.to_str().expect("utf-8 temp path");
    let data = out.join("dataset.bin");
    let data = data.to_str().expect("utf-8 temp path");
    let mut config = vec!["--preset", "qp-desk"];
    for kv in SMALL {
        config.extend(["--set", kv]);
    }
    let exec = |args: &[&str]| {
        let mut argv = vec!["diopt", "--out", dir];
        argv.extend(args);
        diopt_cli::run(Cli::try_parse_from(&argv)?)
    };
    exec(&[&["generate"], &config[..]].concat())?;
    exec(&["label", data])?;
    for method in ["diopt", "dc3", "mlp"] {
        exec(&[&["train", method, data], &config[..]].concat())?;
    }
    let ckpt = out.join("diopt.ckpt");
    exec(&["eval", data, "--checkpoint", ckpt.to_str().expect("utf-8 temp path"), "--seeds", "0,1"])?;
    exec(&[&["eval", data, "--mbd", "--seeds", "0,1"], &config[..]].concat())?;
    exec(&[&["ablate", "K", data, "--values", "1,4"], &config[..]].concat())?;
    exec(&["verify-theorem1", "--dims", "1,2,3", "--points", "20000"])?;
    Ok(())
}

fn outputs(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if [".csv", ".bin", ".ckpt"].iter().any(|ext| name.ends_with(ext)) {
            files.insert(name, fs::read(&path)?);
        }
    }
    Ok(files)
}

fn reproducible() -> Result<Outcome> {
    let (a, b) = (tempfile::tempdir()?, tempfile::tempdir()?);
    cli_run(a.path())?;
    cli_run(b.path())?;
    let (fa, fb) = (outputs(a.path())?, outputs(b.path())?);
    let expected = ["diopt_log", "dc3_log", "mlp_log", "results_diopt", "results_mbd", "sweep_K", "theorem1"];
    let missing: Vec<_> = expected.iter().filter(|n| !fa.contains_key(&format!("{n}.csv"))).collect();
    let differ: Vec<_> = fa.keys().filter(|k| fb.get(*k) != fa.get(*k)).cloned().collect();
    outcome(
        missing.is_empty() && fa.len() == fb.len() && differ.is_empty(),
        format!("{} files from two runs, missing {missing:?}, differing {differ:?}", fa.len()),
    )
}

fn report(id: usize, name: &str, run: impl FnOnce() -> Result<Outcome>) -> bool {
    let t0 = Instant::now();
    let (passed, detail) = match run() {
        Ok(o) => (o.passed, o.detail),
        Err(e) => (false, format!("error: {e:#}")),
    };
    let verdict = if passed { "PASS" } else { "FAIL" };
    println!("criterion {id:>2} {verdict} {name}: {detail} [{:.1}s]", t0.elapsed().as_secs_f64());
    passed
}

fn main() -> ExitCode {
    let mut ok = true;
    ok &= report(1, "vertex cone fraction", theorem);
    ok &= report(2, "toy feasibility dominance", toy);
    let t0 = Instant::now();
    let prepared = desk();
    let desk = &prepared;
    println!("qp-desk run prepared in {:.1}s", t0.elapsed().as_secs_f64());
    let with_desk = |f: fn(&Desk) -> Result<Outcome>| move || match desk {
        Ok(d) => f(d),
        Err(e) => Err(anyhow::anyhow!("qp-desk run failed: {e:#}")),
    };
    ok &= report(3, "bootstrap dynamics", with_desk(bootstrap));
    ok &= report(4, "weights and selection", weights);
    ok &= report(5, "gradient fidelity", gradients);
    ok &= report(6, "oracle soundness", with_desk(oracle));
    ok &= report(7, "completion and anchor", completion);
    ok &= report(8, "baseline contrast", with_desk(baseline));
    ok &= report(9, "zero-noise determinism", with_desk(determinism));
    ok &= report(10, "command reproducibility", reproducible);
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
