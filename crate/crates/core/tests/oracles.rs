mod common;

use decenergy::dataset::{design_matrix, Dataset};
use decenergy::estimator::{fit, fit_dataset};
use decenergy::evaluation::{cross_validate, make_folds};
use decenergy::measurement::{
    counter_delta, run_session, t_critical, EnergySample, FixedWorkload, MeasurementSession,
    ScriptedCounter, SessionConfig,
};
use decenergy::synth::{generate, NoiseModel, SynthConfig, ToolOffPlan};
use decenergy::{FitConfig, ModelKind, Setup, Tool};
use nalgebra::DVector;
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::time::Duration;

fn students_t_quantile(confidence: f64, df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df)
        .unwrap()
        .inverse_cdf(0.5 + confidence / 2.0)
}

#[test]
fn t_critical_agrees_with_reference_quantiles() {
    for confidence in [0.5, 0.8, 0.9, 0.95, 0.99, 0.999] {
        for df in (1..=60).chain([75, 99, 150, 250, 1000, 10_000]) {
            let ours = t_critical(confidence, df).unwrap();
            let reference = students_t_quantile(confidence, df as f64);
            assert!(
                (ours - reference).abs() <= 1e-6 * reference.max(1.0),
                "c = {confidence}, df = {df}: {ours} vs {reference}"
            );
        }
    }
}

#[test]
fn stopping_rule_worked_examples() {
    // sample sets with mean 100 and standard deviation exactly 1
    let session = |m: usize| {
        let mut s = MeasurementSession::new(SessionConfig::default()).unwrap();
        let half = (m as f64 - 1.0).sqrt() / (m as f64).sqrt();
        for i in 0..m {
            let v = if i % 2 == 0 {
                100.0 + half
            } else {
                100.0 - half
            };
            s.push(EnergySample::new(v + 1.0, 1.0, 1.0));
        }
        s
    };
    for (m, expected) in [(5usize, false), (100, true)] {
        let s = session(m);
        let values: Vec<f64> = s.samples.iter().map(|x| x.net_energy_joules).collect();
        let (mean, sd) = common::sample_stats(&values);
        let lhs = 2.0 * sd / (m as f64).sqrt() * students_t_quantile(0.99, m as f64 - 1.0);
        let oracle = lhs < 0.02 * mean;
        // odd m leaves the mean slightly off 100; the oracle sees the same data
        assert_eq!(oracle, expected, "oracle m = {m}: lhs = {lhs}");
        assert_eq!(s.confidence_satisfied().unwrap(), expected, "m = {m}");
    }
}

#[test]
fn wide_spread_session_does_not_converge() {
    // sigma / mu = 0.5
    let nets = [50.0, 150.0, 100.0, 40.0, 160.0, 100.0, 55.0, 145.0];
    let (_, sd) = common::sample_stats(&nets);
    assert!((sd / 100.0 - 0.5).abs() < 0.1);
    for m in 5..=8 {
        let (mean, sd) = common::sample_stats(&nets[..m]);
        let lhs = 2.0 * sd / (m as f64).sqrt() * students_t_quantile(0.99, m as f64 - 1.0);
        assert!(lhs >= 0.02 * mean, "oracle would stop at m = {m}");
    }
    let phases: Vec<(f64, f64)> = nets.iter().map(|&n| (n + 30.0, 30.0)).collect();
    let mut counter =
        ScriptedCounter::from_phases(&phases, 1e6, decenergy::measurement::DEFAULT_MOCK_RANGE_UJ);
    let cfg = SessionConfig {
        m_max: 8,
        ..SessionConfig::default()
    };
    let out = run_session(
        &mut FixedWorkload {
            duration: Duration::from_millis(10),
        },
        &mut counter,
        cfg,
    )
    .unwrap();
    assert!(!out.converged);
    assert_eq!(out.session.len(), 8);
}

#[test]
fn counter_wraps_once() {
    let range = 4294967296.0 * 1e-6;
    let d = counter_delta(range - 1.0, 1.0, range).unwrap();
    assert!((d - 2.0).abs() < 1e-9);
}

#[test]
fn consistent_system_matches_normal_equations() {
    let a = vec![vec![1.0, 1.0], vec![1.0, 2.0], vec![1.0, 3.0]];
    let b = [6.0, 9.0, 12.0];
    let oracle = common::normal_equations(&a, &b);
    assert!(
        oracle.iter().all(|&v| v >= 0.0),
        "unconstrained optimum is feasible"
    );
    let e = fit(
        &common::to_dmatrix(&a),
        &DVector::from_column_slice(&b),
        &FitConfig::default(),
    )
    .unwrap()
    .coefficients;
    for (x, y) in e.iter().zip(&oracle) {
        assert!((x - y).abs() < 1e-10, "{e:?} vs {oracle:?}");
        assert!((x - 3.0).abs() < 1e-10);
    }
}

fn small_synth(kind: ModelKind, noise: NoiseModel, seed: u64) -> (Dataset, Vec<f64>) {
    let cfg = SynthConfig {
        catalog_kind: kind,
        n_sequences: 16,
        seed,
        noise,
        tool_off_plan: vec![
            ToolOffPlan {
                tool: Tool::Dmvr,
                config: "RA".into(),
                count: 20,
            },
            ToolOffPlan {
                tool: Tool::Mip,
                config: "AI".into(),
                count: 20,
            },
        ],
        ..SynthConfig::default()
    };
    let out = generate(&cfg).unwrap();
    (out.dataset, out.e_true)
}

#[test]
fn synthetic_energy_matches_truth_within_noise() {
    let (d, e_true) = small_synth(
        ModelKind::Fv,
        NoiseModel::Multiplicative { sigma_rel: 0.02 },
        5,
    );
    let (a, e) = design_matrix(&d).unwrap();
    let clean = &a * DVector::from_column_slice(&e_true);
    let rel: Vec<f64> = clean
        .iter()
        .zip(e.iter())
        .map(|(c, m)| m / c - 1.0)
        .collect();
    let (mean, sd) = common::sample_stats(&rel);
    assert!(mean.abs() < 0.005, "{mean}");
    assert!((sd - 0.02).abs() < 0.005, "{sd}");
    assert!(rel.iter().all(|r| r.abs() < 0.12));
}

#[test]
fn noiseless_fvs_recovery() {
    let (d, e_true) = small_synth(ModelKind::Fvs, NoiseModel::None, 9);
    assert!(d.len() >= 3 * 66);
    let model = fit_dataset(&d, &FitConfig::default()).unwrap();
    for (j, (e, t)) in model.coefficients().iter().zip(&e_true).enumerate() {
        assert!(((e - t) / t).abs() <= 1e-6, "column {j}: {e} vs {t}");
    }
}

#[test]
fn noiseless_cv_is_order_independent() {
    let (d, _) = small_synth(ModelKind::Fvs, NoiseModel::None, 10);
    let eps = cross_validate(&d, 10, 1, &FitConfig::default())
        .unwrap()
        .epsilon_bar;
    assert!(eps <= 1e-6, "{eps}");
    let mut records = d.records().to_vec();
    records.reverse();
    records.rotate_left(17);
    let shuffled = Dataset::new(ModelKind::Fvs, Setup::Synthetic, records).unwrap();
    let eps = cross_validate(&shuffled, 10, 1, &FitConfig::default())
        .unwrap()
        .epsilon_bar;
    assert!(eps <= 1e-6, "{eps}");
}

#[test]
fn leave_one_out_reports_every_record() {
    let (d, _) = small_synth(
        ModelKind::Fvs,
        NoiseModel::Multiplicative { sigma_rel: 0.02 },
        3,
    );
    let d = d.subset(&(0..12).collect::<Vec<_>>());
    let report = cross_validate(&d, 12, 4, &FitConfig::default()).unwrap();
    assert_eq!(report.per_record.len(), 12);
    let mut folds: Vec<usize> = report.per_record.iter().map(|r| r.fold_index).collect();
    folds.sort_unstable();
    assert_eq!(folds, (0..12).collect::<Vec<_>>());
    assert!(report
        .per_record
        .iter()
        .all(|r| r.estimated_joules.is_finite()));
}

#[test]
fn merge_scale_fold_sizes() {
    let d = generate(&SynthConfig::default()).unwrap().dataset;
    assert_eq!(d.len(), 276 + 760);
    let mut sizes = make_folds(&d, 10, 2024).unwrap().sizes();
    sizes.sort_unstable();
    assert_eq!(sizes, [vec![103; 4], vec![104; 6]].concat());
}
