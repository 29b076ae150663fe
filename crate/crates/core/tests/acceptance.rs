//! Acceptance gate: runs each criterion, prints one PASS/FAIL line per
//! criterion and exits nonzero if any fails.

mod common;

use std::time::{Duration, Instant};

use decenergy::catalog::{blockpel_bin, FeatureCatalog};
use decenergy::dataset::{design_matrix, load_dataset, read_dataset};
use decenergy::estimator::{fit, fit_dataset, Bound};
use decenergy::evaluation::{cross_validate, make_folds, mean_relative_error};
use decenergy::measurement::{
    run_session, FixedWorkload, ScriptedCounter, SessionConfig, DEFAULT_MOCK_RANGE_UJ,
};
use decenergy::synth::{default_tool_off_plan, generate, NoiseModel, SynthConfig, ToolOffPlan};
use decenergy::{BlockShape, EnergyModel, FitConfig, ModelKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn catalog_exactness() -> Outcome {
    let fv = FeatureCatalog::build(ModelKind::Fv);
    let fvs = FeatureCatalog::build(ModelKind::Fvs);
    ensure(fv.column_count() == 230, || {
        format!("FV has {} columns", fv.column_count())
    })?;
    let tally: usize = common::FEATURE_TABLE
        .iter()
        .filter(|r| r.4)
        .map(|r| common::width(r.1))
        .sum();
    ensure(tally == 66, || format!("table tally is {tally}"))?;
    ensure(fvs.column_count() == tally, || {
        format!(
            "FVS has {} columns, table tally {tally}",
            fvs.column_count()
        )
    })?;

    for &(name, level, fv_index, in_fv, in_fvs) in common::FEATURE_TABLE {
        for (cat, present) in [(&fv, in_fv), (&fvs, in_fvs)] {
            let spec = cat.spec(name);
            ensure(spec.is_some() == present, || {
                format!("{name}: presence in {:?} is {}", cat.kind(), spec.is_some())
            })?;
            let Some(spec) = spec else { continue };
            ensure(spec.level.as_str() == level, || {
                format!("{name}: level {} != {level}", spec.level.as_str())
            })?;
            ensure(spec.columns.len() == common::width(level), || {
                format!("{name}: width {}", spec.columns.len())
            })?;
        }
        if in_fv {
            let spec = fv.spec(name).unwrap();
            let expected = (fv_index, fv_index + common::width(level) - 1);
            ensure(spec.fv_index_range == Some(expected), || {
                format!("{name}: range {:?} != {expected:?}", spec.fv_index_range)
            })?;
            ensure(spec.columns.start == fv_index - 1, || {
                format!("{name}: starts at column {}", spec.columns.start)
            })?;
        }
    }
    let in_order: Vec<&str> = common::FEATURE_TABLE
        .iter()
        .filter(|r| r.4)
        .map(|r| r.0)
        .collect();
    let built: Vec<&str> = fvs.specs().iter().map(|s| s.name).collect();
    ensure(in_order == built, || format!("FVS order {built:?}"))?;

    let bins = common::bin_vector();
    let mut shapes = 0;
    for w in [1, 2, 4, 8, 16, 32, 64, 128] {
        for h in [1, 2, 4, 8, 16, 32, 64, 128] {
            let bin = blockpel_bin(BlockShape::new(w, h).unwrap());
            let want = bins.iter().position(|&p| p == (w * h).max(4)).unwrap();
            ensure(bin == want, || {
                format!("{w}x{h} -> bin {bin}, expected {want}")
            })?;
            shapes += 1;
        }
    }
    Ok(format!(
        "FV 230, FVS 66, {} table rows, {shapes} shapes",
        common::FEATURE_TABLE.len()
    ))
}

fn fit_recovery() -> Outcome {
    // 25 sequences x 4 QPs x 3 configs + 6 x 60 + 2 x 70 tool-off = 800
    let plan = default_tool_off_plan()
        .into_iter()
        .map(|p| ToolOffPlan {
            count: if p.config == "AI" { 70 } else { 60 },
            ..p
        })
        .collect();
    let cfg = SynthConfig {
        n_sequences: 25,
        seed: 800,
        tool_off_plan: plan,
        ..SynthConfig::default()
    };
    let out = generate(&cfg).map_err(|e| e.to_string())?;
    ensure(out.dataset.len() == 800, || {
        format!("N = {}", out.dataset.len())
    })?;

    let model = fit_dataset(&out.dataset, &FitConfig::default()).map_err(|e| e.to_string())?;
    let zero = &model.metadata().unwrap().zero_support;
    let mut worst = 0.0f64;
    for (j, (&e, &t)) in model.coefficients().iter().zip(&out.e_true).enumerate() {
        if zero.contains(&j) {
            continue;
        }
        worst = worst.max(((e - t) / t).abs());
    }
    ensure(worst <= 1e-6, || {
        format!("worst relative coefficient error {worst:e}")
    })?;

    let report =
        cross_validate(&out.dataset, 10, 800, &FitConfig::default()).map_err(|e| e.to_string())?;
    ensure(report.epsilon_bar <= 1e-6, || {
        format!("CV epsilon_bar {:e}", report.epsilon_bar)
    })?;
    Ok(format!(
        "N = 800, {} supported, worst rel. error {worst:.2e}, CV epsilon_bar {:.2e}",
        230 - zero.len(),
        report.epsilon_bar
    ))
}

fn small_instances() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let noise = Normal::new(0.0, 0.3).unwrap();
    let mut done = 0;
    let mut worst = 0.0f64;
    let mut active = 0;
    while done < 25 {
        let a: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let sv = common::to_dmatrix(&a).singular_values();
        if sv.max() / sv.min() > 10.0 {
            continue;
        }
        let lo: Vec<f64> = (0..3)
            .map(|_| if rng.random_bool(0.5) { 0.0 } else { -1.0 })
            .collect();
        let hi: Vec<f64> = lo.iter().map(|l| l + rng.random_range(1.5..3.0)).collect();
        let x0: Vec<f64> = (0..3)
            .map(|j| rng.random_range(lo[j] - 1.0..hi[j] + 1.0))
            .collect();
        let b: Vec<f64> = a
            .iter()
            .map(|row| {
                row.iter().zip(&x0).map(|(p, q)| p * q).sum::<f64>() + noise.sample(&mut rng)
            })
            .collect();

        let cfg = FitConfig {
            lower: Bound::PerColumn(lo.clone()),
            upper: Bound::PerColumn(hi.clone()),
            ..FitConfig::default()
        };
        let e = fit(
            &common::to_dmatrix(&a),
            &nalgebra::DVector::from_vec(b.clone()),
            &cfg,
        )
        .map_err(|err| err.to_string())?
        .coefficients;
        let grid = common::grid_minimize(&a, &b, &lo, &hi, 5e-4);
        for j in 0..3 {
            worst = worst.max((e[j] - grid[j]).abs());
        }
        ensure(worst <= 1e-2, || {
            format!("instance {done}: fit {e:?} vs grid {grid:?}")
        })?;
        common::check_kkt(&a, &b, &e, &lo, &hi, 1e-8)
            .map_err(|m| format!("instance {done}: {m}"))?;
        active += e
            .iter()
            .zip(lo.iter().zip(&hi))
            .filter(|(x, (l, h))| *x == *l || *x == *h)
            .count();
        done += 1;
    }
    Ok(format!(
        "25 instances, max |fit - grid| {worst:.1e}, {active} active bounds, KKT holds"
    ))
}

fn noise_floor() -> Outcome {
    let mut values = Vec::new();
    for seed in 1..=20u64 {
        let cfg = SynthConfig {
            seed,
            noise: NoiseModel::Multiplicative { sigma_rel: 0.02 },
            ..SynthConfig::default()
        };
        let out = generate(&cfg).map_err(|e| e.to_string())?;
        ensure(out.dataset.len() == 1036, || {
            format!("N = {}", out.dataset.len())
        })?;
        let report = cross_validate(&out.dataset, 10, seed, &FitConfig::default())
            .map_err(|e| e.to_string())?;
        let eps = report.epsilon_bar;
        ensure((0.01..=0.04).contains(&eps), || {
            format!("seed {seed}: epsilon_bar {eps}")
        })?;
        values.push(eps);
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(0.0, f64::max);
    Ok(format!("20 seeds, epsilon_bar in [{lo:.4}, {hi:.4}]"))
}

fn session_phases(rng: &mut ChaCha8Rng, mu: f64, sigma: f64, n: usize) -> ScriptedCounter {
    let idle = 20.0;
    let net = Normal::new(mu, sigma).unwrap();
    let phases: Vec<(f64, f64)> = (0..n).map(|_| (net.sample(rng) + idle, idle)).collect();
    let start = rng.random_range(0.0..DEFAULT_MOCK_RANGE_UJ);
    ScriptedCounter::from_phases(&phases, start, DEFAULT_MOCK_RANGE_UJ)
}

fn coverage() -> Outcome {
    let cfg = SessionConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let workload = || FixedWorkload {
        duration: Duration::from_secs(1),
    };
    let (mut converged, mut covered) = (0, 0);
    for _ in 0..1000 {
        let mut counter = session_phases(&mut rng, 100.0, 0.5, cfg.m_max);
        let out = run_session(&mut workload(), &mut counter, cfg).map_err(|e| e.to_string())?;
        if out.converged {
            converged += 1;
            if (out.mean_energy_joules - 100.0).abs() < cfg.beta * 100.0 {
                covered += 1;
            }
        }
    }
    ensure(converged > 0, || "no session converged".into())?;
    let rate = covered as f64 / converged as f64;
    ensure(rate >= 0.985, || {
        format!("coverage {rate} over {converged} converged sessions")
    })?;

    for _ in 0..100 {
        let mut counter = session_phases(&mut rng, 100.0, 0.0, cfg.m_max);
        let out = run_session(&mut workload(), &mut counter, cfg).map_err(|e| e.to_string())?;
        ensure(out.converged && out.session.len() == 5, || {
            format!("sigma = 0 session took {} samples", out.session.len())
        })?;
    }
    Ok(format!(
        "{converged}/1000 converged, coverage {:.1}%, 100 zero-spread sessions stop at m = 5",
        100.0 * rate
    ))
}

fn error_and_determinism() -> Outcome {
    let close = |x: f64, y: f64| (x - y).abs() < 1e-12;
    let m = |e: &[f64], m: &[f64]| mean_relative_error(e, m).map_err(|err| err.to_string());
    ensure(close(m(&[110.0, 90.0], &[100.0, 100.0])?, 0.10), || {
        "(110, 90) vs (100, 100)".into()
    })?;
    ensure(close(m(&[105.0], &[100.0])?, 0.05), || "105 vs 100".into())?;
    ensure(m(&[3.5, 7.25, 1e4], &[3.5, 7.25, 1e4])? == 0.0, || {
        "exact estimate".into()
    })?;

    let cfg = SynthConfig {
        catalog_kind: ModelKind::Fvs,
        n_sequences: 10,
        seed: 6,
        noise: NoiseModel::Multiplicative { sigma_rel: 0.02 },
        ..SynthConfig::default()
    };
    let d = generate(&cfg).map_err(|e| e.to_string())?.dataset;
    let a = cross_validate(&d, 10, 42, &FitConfig::default())
        .map_err(|e| e.to_string())?
        .to_json();
    let b = cross_validate(&d, 10, 42, &FitConfig::default())
        .map_err(|e| e.to_string())?
        .to_json();
    ensure(a == b, || "report JSON differs between runs".into())?;
    let f1 = make_folds(&d, 10, 42).map_err(|e| e.to_string())?;
    let f2 = make_folds(&d, 10, 42).map_err(|e| e.to_string())?;
    ensure(f1 == f2, || "fold assignment differs".into())?;
    Ok(format!(
        "MRE examples exact, {}-byte report identical across runs",
        a.len()
    ))
}

fn round_trip() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = SynthConfig {
        n_sequences: 6,
        seed: 77,
        noise: NoiseModel::Multiplicative { sigma_rel: 0.02 },
        ..SynthConfig::default()
    };
    let d = generate(&cfg).map_err(|e| e.to_string())?.dataset;
    let path = dir.path().join("d.csv");
    d.save(&path).map_err(|e| e.to_string())?;
    let loaded = load_dataset(&path, ModelKind::Fv).map_err(|e| e.to_string())?;
    ensure(loaded.records() == d.records(), || {
        "records changed on reload".into()
    })?;
    let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
    let again = read_dataset(text.as_bytes(), ModelKind::Fv).map_err(|e| e.to_string())?;
    ensure(again.to_csv_string() == text, || {
        "CSV is not a fixed point".into()
    })?;

    let model = fit_dataset(&d, &FitConfig::default()).map_err(|e| e.to_string())?;
    let mpath = dir.path().join("model.json");
    model.save(&mpath).map_err(|e| e.to_string())?;
    let reloaded = EnergyModel::load(&mpath).map_err(|e| e.to_string())?;
    for r in d.records() {
        let p = model.predict(&r.features).map_err(|e| e.to_string())?;
        let q = reloaded.predict(&r.features).map_err(|e| e.to_string())?;
        ensure(p.to_bits() == q.to_bits(), || {
            format!("{}: {p} vs {q}", r.id)
        })?;
    }
    let (a, _) = design_matrix(&d).map_err(|e| e.to_string())?;
    Ok(format!(
        "{} records x {} columns, {} predictions bit-identical",
        a.nrows(),
        a.ncols(),
        d.len()
    ))
}

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 7] = [
        (
            "catalog exactness",
            Duration::from_secs(1),
            catalog_exactness,
        ),
        ("fit recovery oracle", Duration::from_secs(30), fit_recovery),
        (
            "small-instance solver oracle",
            Duration::from_secs(10),
            small_instances,
        ),
        (
            "noise-floor consistency",
            Duration::from_secs(300),
            noise_floor,
        ),
        ("stopping-rule coverage", Duration::from_secs(60), coverage),
        (
            "relative error and fold determinism",
            Duration::from_secs(10),
            error_and_determinism,
        ),
        ("round-trip I/O", Duration::from_secs(5), round_trip),
    ];
    let mut failed = 0;
    for (i, (name, limit, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|detail| {
            if elapsed <= *limit {
                Ok(detail)
            } else {
                Err(format!("{detail}; took {elapsed:.2?}, limit {limit:?}"))
            }
        });
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({elapsed:.2?}) {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({elapsed:.2?}) {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of 7 criteria failed");
        std::process::exit(1);
    }
    println!("all 7 criteria passed");
}
