use std::sync::OnceLock;

use proptest::prelude::*;
use tsmor_core::gpr::{self, TrainOptions};
use tsmor_core::grid::{Grid, Grid1D, Grid2D};
use tsmor_core::hf::{tensor_samples, TestCase};
use tsmor_core::pipeline::{
    average_error, benchmark, efficiency_index, reference_parameter, relative_l1_error, run_offline, speedup, Mode, OfflineArtifacts,
    OfflineConfig, Sweep, TestSet, ERROR_LAMBDA,
};
use tsmor_core::pod::{compute_pod, SnapshotKind, SnapshotMatrix};

fn fast_gpr() -> TrainOptions {
    TrainOptions {
        restarts: 2,
        seed: 11,
        ..TrainOptions::default()
    }
}

/// Coarse wave problem on a 5×4 tensor layout, identity mode.
fn wave_identity() -> &'static OfflineArtifacts {
    static ART: OnceLock<OfflineArtifacts> = OnceLock::new();
    ART.get_or_init(|| {
        let test = TestCase::wave1d(60).unwrap();
        let samples = tensor_samples(&test.bounds, &[5, 4]).unwrap();
        let mut cfg = OfflineConfig::new(&test, 3, 1);
        cfg.n_max = 6;
        cfg.mode = Mode::Identity;
        cfg.gpr = fast_gpr();
        run_offline(&test, samples, &cfg).unwrap()
    })
}

/// Coarse heat problem with five samples (the middle one is `z_ref`), full rank.
fn heat_tsmor() -> &'static OfflineArtifacts {
    static ART: OnceLock<OfflineArtifacts> = OnceLock::new();
    ART.get_or_init(|| {
        let test = TestCase::heat2d(24).unwrap();
        let samples = tensor_samples(&test.bounds, &[5]).unwrap();
        let mut cfg = OfflineConfig::new(&test, 5, 5);
        cfg.registration.max_m = 4;
        cfg.gpr = fast_gpr();
        run_offline(&test, samples, &cfg).unwrap()
    })
}

#[test]
fn relative_error_examples() {
    let g = Grid::D2(Grid2D::square(0.0, 1.0, 4).unwrap());
    let one = vec![1.0; 16];
    assert_eq!(relative_l1_error(&g, &one, &one).unwrap(), 0.0);
    assert!((relative_l1_error(&g, &one, &[0.9; 16]).unwrap() - 0.1).abs() <= 1e-15);
    assert!(relative_l1_error(&g, &[0.0; 16], &one).is_err());
    assert!(relative_l1_error(&g, &one, &[1.0; 3]).is_err());
}

proptest! {
    #[test]
    fn relative_error_is_scale_invariant(
        u in prop::collection::vec(0.1f64..2.0, 8),
        v in prop::collection::vec(-2.0f64..2.0, 8),
        c in 0.01f64..100.0,
    ) {
        let g = Grid::D1(Grid1D::new(0.0, 1.0, 8).unwrap());
        let a = relative_l1_error(&g, &u, &v).unwrap();
        let cu: Vec<f64> = u.iter().map(|x| c * x).collect();
        let cv: Vec<f64> = v.iter().map(|x| c * x).collect();
        let b = relative_l1_error(&g, &cu, &cv).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }
}

#[test]
fn efficiency_and_speedup_examples() {
    assert_eq!(efficiency_index(0.3, 0.3), Some(1.0));
    assert_eq!(efficiency_index(0.6, 0.3), Some(2.0));
    assert_eq!(efficiency_index(0.1, 0.0), None);
    assert_eq!(speedup(&[2.0, 2.0], &[2.0, 2.0]).unwrap(), 1.0);
    assert_eq!(speedup(&[2.0, 4.0], &[1.0, 2.0]).unwrap(), 2.0);
    assert!(speedup(&[1.0], &[0.0]).is_err());
}

#[test]
fn identity_mode_equals_hand_built_pod_gpr() {
    let art = wave_identity();
    let test = &art.test;
    assert!(art.registration.is_none() && art.inverse.is_none());
    let snaps = test.sample_snapshots(&art.samples).unwrap();
    for c in 0..2 {
        let cols: Vec<Vec<f64>> = snaps.iter().map(|s| s[c].clone()).collect();
        let s = SnapshotMatrix::new(cols.clone(), art.samples.clone(), SnapshotKind::Untransformed).unwrap();
        let basis = compute_pod(&s, 6).unwrap();
        // transformed and untransformed bases coincide
        assert_eq!(art.g_models[c].basis, basis);
        assert_eq!(art.untransformed[c], basis);
        let alphas: Vec<Vec<f64>> = cols.iter().map(|u| basis.project(u).unwrap()).collect();
        let gprs: Vec<_> = (0..3)
            .map(|i| {
                let y: Vec<f64> = alphas.iter().map(|a| a[i]).collect();
                let opts = TrainOptions {
                    seed: 11 + 100 * c as u64 + i as u64,
                    ..fast_gpr()
                };
                gpr::train(&art.samples, &y, &opts).unwrap()
            })
            .collect();
        for z in [vec![0.13, 0.77], vec![0.61, 1.9], art.samples[7].clone()] {
            let coeffs: Vec<f64> = gprs.iter().map(|g| g.predict_mean(&z)).collect();
            let direct = basis.truncated(3).unwrap().reconstruct(&coeffs).unwrap();
            let online = art.run_online(&z).unwrap();
            let err = online.fields[c].iter().zip(&direct).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-10, "component {c}, z = {z:?}: {err}");
        }
    }
}

#[test]
fn every_regression_uses_all_training_samples() {
    for art in [wave_identity(), heat_tsmor()] {
        let m = art.samples.len();
        for g in &art.g_models {
            assert!(g.gprs.iter().all(|r| r.n_train() == m && r.spec.inputs == art.samples));
        }
        if let Some(inv) = &art.inverse {
            assert!(inv.components.iter().flat_map(|c| &c.gprs).all(|r| r.n_train() == m));
        }
        assert!(art.error_surrogates.iter().all(|e| e.model.n_train() == m));
    }
}

#[test]
fn online_queries_are_deterministic() {
    let art = heat_tsmor();
    let a = art.run_online(&[0.013]).unwrap();
    let b = art.run_online(&[0.013]).unwrap();
    assert_eq!(a.fields, b.fields);
    assert_eq!(a.predicted_error, b.predicted_error);
    assert!(a.fields.iter().flatten().all(|v| v.is_finite()));
}

#[test]
fn reference_parameter_reproduces_its_snapshot() {
    let art = heat_tsmor();
    let z_ref = reference_parameter(&art.test);
    assert_eq!(z_ref, vec![0.0]);
    let hf = art.test.sample_snapshots(std::slice::from_ref(&z_ref)).unwrap().remove(0);
    let u = art.run_online(&z_ref).unwrap();
    let e = relative_l1_error(&art.test.grid, &hf[0], &u.fields[0]).unwrap();
    assert!(e <= 1e-3, "{e}");
}

#[test]
fn training_samples_reconstruct_within_floor() {
    let art = heat_tsmor();
    let hf = art.test.sample_snapshots(&art.samples).unwrap();
    // two cell resamplings (forward then inverse) leave an O(h) floor
    let h = art.test.grid.max_cell_width();
    for (z, u) in art.samples.iter().zip(&hf) {
        let e = relative_l1_error(&art.test.grid, &u[0], &art.predict(z, 5, 5).unwrap()[0]).unwrap();
        assert!(e <= h, "z = {z:?}: {e}");
    }
    // the surrogate's training data are exactly these in-sample errors
    let set = TestSet {
        samples: art.samples.clone(),
        fields: hf,
        hf_seconds: vec![1.0; 5],
    };
    let ea = average_error(art, &set, 5, 5).unwrap()[0];
    let mean = art.error_surrogates[0].training_errors.iter().sum::<f64>() / 5.0;
    assert!((ea - mean).abs() <= 1e-12 * mean.max(1e-300), "{ea} vs {mean}");
}

#[test]
fn single_sample_average_is_that_sample_error() {
    let art = heat_tsmor();
    let set = TestSet::solve(&art.test, vec![vec![-0.021]]).unwrap();
    let ea = average_error(art, &set, 3, 2).unwrap();
    let u = art.predict(&[-0.021], 3, 2).unwrap();
    assert_eq!(ea[0], relative_l1_error(&art.test.grid, &set.fields[0][0], &u[0]).unwrap());
}

#[test]
fn s_proj_is_exact_at_full_rank_and_nested() {
    let art = heat_tsmor();
    let hf = art.test.sample_snapshots(&[art.samples[1].clone(), vec![0.037]]).unwrap();
    let full = art.s_proj(&hf[0], 5).unwrap();
    let e = relative_l1_error(&art.test.grid, &hf[0][0], &full[0]).unwrap();
    assert!(e <= 1e-10, "{e}");
    for u in &hf {
        let errs: Vec<f64> = (1..=5)
            .map(|n| {
                let p = art.s_proj(u, n).unwrap();
                u[0].iter().zip(&p[0]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
            })
            .collect();
        assert!(errs.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)), "{errs:?}");
    }
}

#[test]
fn predicted_error_is_clamped_and_uses_two_deviations() {
    let art = heat_tsmor();
    for z in [-0.05, -0.017, 0.0, 0.031, 0.05] {
        let e = art.predicted_error(&[z])[0];
        assert!(e >= 0.0);
        assert_eq!(e, art.error_surrogates[0].model.predict(&[z], ERROR_LAMBDA).max(0.0));
    }
    assert_eq!(ERROR_LAMBDA, 2.0);
}

#[test]
fn registration_fixes_the_reference_and_stays_invertible() {
    let art = heat_tsmor();
    let reg = art.registration.as_ref().unwrap();
    assert!(reg.coeffs[2].is_zero());
    assert!(reg.forward_jacobian_min.iter().all(|&j| j > 0.0));
    assert!(art.diagnostics.inverse_jacobian_min > 0.0);
    assert!(art.diagnostics.worst_inversion_residual <= 1e-8);
}

#[test]
fn extrapolation_is_flagged_outside_the_samples() {
    let test = TestCase::heat2d(12).unwrap();
    let mut cfg = OfflineConfig::new(&test, 1, 1);
    cfg.mode = Mode::Identity;
    cfg.gpr = fast_gpr();
    let art = run_offline(&test, vec![vec![-0.02], vec![0.0], vec![0.02]], &cfg).unwrap();
    assert!(!art.run_online(&[0.01]).unwrap().extrapolated);
    assert!(art.run_online(&[0.04]).unwrap().extrapolated);
    assert!(art.run_online(&[0.06]).is_err());
}

#[test]
fn config_errors_are_reported() {
    let test = TestCase::wave1d(20).unwrap();
    let samples = tensor_samples(&test.bounds, &[2, 2]).unwrap();
    let mut cfg = OfflineConfig::new(&test, 2, 2);
    cfg.n_max = 1;
    assert!(run_offline(&test, samples.clone(), &cfg).is_err());
    let mut cfg = OfflineConfig::new(&test, 2, 2);
    cfg.criterion = tsmor_core::pipeline::CriterionSpec::PointSet { n_points: 100 };
    assert!(run_offline(&test, samples, &cfg).is_err());
}

#[test]
fn benchmark_tables_match_the_sweep() {
    let art = heat_tsmor();
    let set = TestSet::random(&art.test, 3, 5).unwrap();
    let report = benchmark(
        art,
        &set,
        &Sweep {
            n: vec![1, 2, 3],
            n_psi: vec![1, 2],
        },
    )
    .unwrap();
    assert_eq!(report.rows.len(), 3);
    assert_eq!(report.average_errors.len(), 6);
    assert_eq!(report.projection.len(), 3);
    assert_eq!(report.summary.m_train, 5);
    assert!(report.rows.iter().all(|r| r.e_r >= 0.0 && r.tau_mor > 0.0));
    let single = benchmark(art, &set, &Sweep { n: vec![2], n_psi: vec![2] }).unwrap();
    assert_eq!(single.average_errors.len(), 1);
    // growing n_psi at fixed n stagnates rather than degrades
    let e = |b: usize| report.average_errors.iter().find(|r| r.n == 3 && r.n_psi == b).unwrap().e_a;
    assert!(e(2) <= 1.1 * e(1), "{} vs {}", e(2), e(1));
}
