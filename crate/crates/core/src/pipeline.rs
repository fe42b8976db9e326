//! Offline and online phases, the S-PROJ comparator and reported metrics.
//!
//! Offline: snapshots → registration → transformed snapshots → POD + GPR of
//! the transformed field → inverse-displacement snapshots → POD + GPR of the
//! inverse → in-sample errors → error surrogate. Online: regress the
//! coefficients, reconstruct `g_n`, predict `Ψ̃`, compose.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpr::{self, GprModel, TrainOptions};
use crate::grid::{Field, Grid, QuadratureRule};
use crate::hf::{heat_inclusion_boundary, sample_snapshots_timed, Sample, TestCase, TestCaseId};
use crate::invmap::{fit_inverse_model, inverse_jacobian_min, predict_inverse, InverseModel, InverseProjector, P1Sampler};
use crate::pod::{compute_pod, PodBasis, SnapshotKind, SnapshotMatrix};
use crate::reduced::CoefficientModel;
use crate::registration::{
    forward_jacobian_min, register_all, transform_snapshot, Criterion, DisplacementCoeffs, Frame, RegistrationConfig, SpatialTransform,
    Target,
};

/// Regression quantile for the error surrogate.
pub const ERROR_LAMBDA: f64 = 2.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Tsmor,
    /// `φ = φ⁻¹ = Id`: plain POD + GPR on the raw snapshots.
    Identity,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Tsmor => "tsmor",
            Mode::Identity => "identity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CriterionSpec {
    L2Snapshot,
    /// Points along the inclusion boundary of the heat problem.
    PointSet { n_points: usize },
}

impl CriterionSpec {
    pub fn default_for(id: TestCaseId) -> Self {
        match id {
            TestCaseId::Heat2d => CriterionSpec::PointSet { n_points: 400 },
            _ => CriterionSpec::L2Snapshot,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineConfig {
    pub n: usize,
    pub n_psi: usize,
    /// Modes kept for truncation sweeps; at least `n` and `n_psi`.
    pub n_max: usize,
    pub n_psi_max: usize,
    pub mode: Mode,
    pub registration: RegistrationConfig,
    pub criterion: CriterionSpec,
    pub gpr: TrainOptions,
    /// Per-axis Gauss-Legendre order for transforms and inverse projection.
    pub quad_order: usize,
}

impl OfflineConfig {
    pub fn new(test: &TestCase, n: usize, n_psi: usize) -> Self {
        Self {
            n,
            n_psi,
            n_max: n,
            n_psi_max: n_psi,
            mode: Mode::Tsmor,
            registration: RegistrationConfig::default(),
            criterion: CriterionSpec::default_for(test.id),
            gpr: TrainOptions::default(),
            quad_order: 3,
        }
    }

    pub fn validate(&self, test: &TestCase) -> Result<()> {
        if self.n < 1 || self.n_psi < 1 {
            return Err(Error::Config("n and n_psi must be at least 1".into()));
        }
        if self.n_max < self.n || self.n_psi_max < self.n_psi {
            return Err(Error::Config("n_max and n_psi_max must not be below n and n_psi".into()));
        }
        if self.quad_order < 1 {
            return Err(Error::Config("quadrature order must be at least 1".into()));
        }
        if let CriterionSpec::PointSet { n_points } = self.criterion {
            if test.id != TestCaseId::Heat2d {
                return Err(Error::Config("point-set matching needs the heat problem's inclusion boundary".into()));
            }
            if n_points < 3 {
                return Err(Error::Config("point-set matching needs at least 3 points".into()));
            }
        }
        self.registration.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationRecord {
    pub m: usize,
    pub xi: Vec<f64>,
    pub converged: bool,
    pub coeffs: Vec<DisplacementCoeffs>,
    pub matching: Vec<f64>,
    /// Minimum over cell centers of `det ∇φ`, per training sample.
    pub forward_jacobian_min: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub snapshots: f64,
    pub registration: f64,
    pub transform: f64,
    pub inverse_snapshots: f64,
    pub training: f64,
    pub error_surrogate: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OfflineDiagnostics {
    /// Worst pointwise `‖φ(y) − x‖` over every inversion.
    pub worst_inversion_residual: f64,
    pub inversion_warnings: usize,
    /// Mean `‖φ(x + Ψ̃_{n_Ψ}(x)) − x‖` per training sample.
    pub round_trip_mean: Vec<f64>,
    /// Minimum `det(I + ∇Ψ̃)` over the inverse snapshots.
    pub inverse_jacobian_min: f64,
    pub timings: StageTimings,
}

#[derive(Debug, Clone)]
pub struct ErrorSurrogate {
    pub model: GprModel,
    pub n: usize,
    pub n_psi: usize,
    /// In-sample errors the model was trained on.
    pub training_errors: Vec<f64>,
}

impl ErrorSurrogate {
    /// `E^R(z)`, shifted two standard deviations up and clamped at zero.
    pub fn predict(&self, z: &[f64]) -> f64 {
        self.model.predict(z, ERROR_LAMBDA).max(0.0)
    }
}

#[derive(Debug, Clone)]
pub struct OfflineArtifacts {
    pub test: TestCase,
    pub config: OfflineConfig,
    pub samples: Vec<Sample>,
    pub z_ref: Sample,
    pub registration: Option<RegistrationRecord>,
    /// Model of the (transformed) field, one per solution component.
    pub g_models: Vec<CoefficientModel>,
    pub inverse: Option<InverseModel>,
    /// One per solution component.
    pub error_surrogates: Vec<ErrorSurrogate>,
    /// POD of the raw snapshots, one per solution component.
    pub untransformed: Vec<PodBasis>,
    pub diagnostics: OfflineDiagnostics,
    sampler: Option<P1Sampler>,
}

/// Center of the parameter box.
pub fn reference_parameter(test: &TestCase) -> Sample {
    test.bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect()
}

fn quad_rule(grid: &Grid, order: usize) -> Result<QuadratureRule> {
    QuadratureRule::tensor(order, grid.dim())
}

/// The samples' bounding box equals `Z` (a tensor layout then holds the corners).
fn covers_box(test: &TestCase, samples: &[Sample]) -> bool {
    test.bounds.iter().enumerate().all(|(d, (lo, hi))| {
        samples.iter().any(|z| z[d] == *lo) && samples.iter().any(|z| z[d] == *hi)
    })
}

fn transpose_components(snapshots: &[Vec<Field>], n_comp: usize) -> Vec<Vec<Field>> {
    (0..n_comp).map(|c| snapshots.iter().map(|s| s[c].clone()).collect()).collect()
}

/// Runs the offline phase, solving the HF problem at every sample.
pub fn run_offline(test: &TestCase, samples: Vec<Sample>, cfg: &OfflineConfig) -> Result<OfflineArtifacts> {
    let start = Instant::now();
    let (snapshots, _) = sample_snapshots_timed(test, &samples)?;
    let mut art = run_offline_with_snapshots(test, samples, snapshots, cfg)?;
    art.diagnostics.timings.snapshots = start.elapsed().as_secs_f64() - art.diagnostics.timings.total;
    art.diagnostics.timings.total = start.elapsed().as_secs_f64();
    Ok(art)
}

/// Offline phase from precomputed snapshots; `snapshots[s][c]` is component
/// `c` at sample `s`.
pub fn run_offline_with_snapshots(
    test: &TestCase,
    samples: Vec<Sample>,
    snapshots: Vec<Vec<Field>>,
    cfg: &OfflineConfig,
) -> Result<OfflineArtifacts> {
    let start = Instant::now();
    cfg.validate(test)?;
    if samples.len() < 2 {
        return Err(Error::Config("at least two training samples are required".into()));
    }
    if snapshots.len() != samples.len() {
        return Err(Error::arg("one snapshot per sample is required"));
    }
    for z in &samples {
        test.check_sample(z)?;
    }
    if !covers_box(test, &samples) {
        tracing::warn!("training samples do not reach every face of the parameter box; predictions near it extrapolate");
    }
    let n_comp = test.n_components();
    let n_cells = test.grid.n_cells();
    if snapshots.iter().any(|s| s.len() != n_comp || s.iter().any(|f| f.len() != n_cells)) {
        return Err(Error::arg("snapshot shapes do not match the test case"));
    }
    let z_ref = reference_parameter(test);
    let mut timings = StageTimings::default();
    let raw = transpose_components(&snapshots, n_comp);
    drop(snapshots);

    let mut diagnostics = OfflineDiagnostics {
        inverse_jacobian_min: 1.0,
        ..Default::default()
    };
    let (registration, transformed, inverse_snaps, sampler) = match cfg.mode {
        Mode::Identity => (None, raw.clone(), None, None),
        Mode::Tsmor => {
            let t0 = Instant::now();
            let frame = Frame::from_grid(&test.grid);
            let (criterion, targets) = match cfg.criterion {
                CriterionSpec::L2Snapshot => {
                    let reference = sample_snapshots_timed(test, std::slice::from_ref(&z_ref))?.0.remove(0).remove(0);
                    let crit = Criterion::l2_snapshot(&test.grid, &reference, cfg.registration.quad_order)?;
                    // the first component drives the registration of all components
                    let targets: Vec<Target> = raw[0].iter().map(|u| Target::Snapshot(u.clone())).collect();
                    (crit, targets)
                }
                CriterionSpec::PointSet { n_points } => {
                    let crit = Criterion::point_set(heat_inclusion_boundary(z_ref[0], n_points))?;
                    let targets = samples.iter().map(|z| Target::Points(heat_inclusion_boundary(z[0], n_points))).collect();
                    (crit, targets)
                }
            };
            let coords: Vec<Vec<f64>> = samples.iter().map(|z| test.normalize(z)).collect();
            let reg = register_all(frame, &criterion, &targets, &coords, &test.normalize(&z_ref), &cfg.registration)?;
            drop(targets);
            let transforms: Vec<SpatialTransform> = reg
                .coeffs
                .iter()
                .map(|c| SpatialTransform::new(frame, c.clone()))
                .collect::<Result<_>>()?;
            let forward_min: Vec<f64> = transforms.iter().map(|t| forward_jacobian_min(t, &test.grid)).collect();
            timings.registration = t0.elapsed().as_secs_f64();
            tracing::info!(m = reg.m, converged = reg.converged, seconds = timings.registration, "registration done");

            let t0 = Instant::now();
            let rule = quad_rule(&test.grid, cfg.quad_order)?;
            let projector = InverseProjector::new(&test.grid, &rule)?;
            let quad = &projector.sampler.quad;
            let transformed: Vec<Vec<Field>> = raw
                .iter()
                .map(|comp| comp.par_iter().zip(&transforms).map(|(u, t)| transform_snapshot(u, t, quad)).collect::<Result<_>>())
                .collect::<Result<_>>()?;
            timings.transform = t0.elapsed().as_secs_f64();

            let t0 = Instant::now();
            let inv = transforms.par_iter().map(|t| projector.snapshot(t)).collect::<Result<Vec<_>>>()?;
            timings.inverse_snapshots = t0.elapsed().as_secs_f64();
            diagnostics.worst_inversion_residual = inv.iter().map(|s| s.worst_residual).fold(0.0, f64::max);
            diagnostics.inversion_warnings = inv.iter().map(|s| s.warnings).sum();
            diagnostics.inverse_jacobian_min = inv
                .iter()
                .map(|s| inverse_jacobian_min(&projector.sampler.space, &s.components))
                .fold(f64::INFINITY, f64::min);
            let record = RegistrationRecord {
                m: reg.m,
                xi: reg.xi,
                converged: reg.converged,
                coeffs: reg.coeffs,
                matching: reg.matching,
                forward_jacobian_min: forward_min,
            };
            (Some((record, transforms, projector.clone())), transformed, Some(inv), Some(projector.sampler))
        }
    };

    let t0 = Instant::now();
    let untransformed = raw
        .iter()
        .map(|cols| {
            let s = SnapshotMatrix::new(cols.clone(), samples.clone(), SnapshotKind::Untransformed)?;
            compute_pod(&s, cfg.n_max.min(s.n_rows.min(s.n_cols())))
        })
        .collect::<Result<Vec<_>>>()?;
    let kind = match cfg.mode {
        Mode::Tsmor => SnapshotKind::Transformed,
        Mode::Identity => SnapshotKind::Untransformed,
    };
    let g_models = transformed
        .into_iter()
        .enumerate()
        .map(|(c, cols)| {
            let opts = TrainOptions {
                seed: cfg.gpr.seed.wrapping_add(100 * c as u64),
                ..cfg.gpr.clone()
            };
            CoefficientModel::fit(cols, &samples, kind, cfg.n_max, &opts)
        })
        .collect::<Result<Vec<_>>>()?;
    let inverse = match &inverse_snaps {
        Some(inv) => {
            let opts = TrainOptions {
                seed: cfg.gpr.seed.wrapping_add(10_000),
                ..cfg.gpr.clone()
            };
            Some(fit_inverse_model(inv, &samples, cfg.n_psi_max, &opts)?)
        }
        None => None,
    };
    drop(inverse_snaps);
    timings.training = t0.elapsed().as_secs_f64();

    let (registration, transforms, projector) = match registration {
        Some((r, t, p)) => (Some(r), t, Some(p)),
        None => (None, Vec::new(), None),
    };
    let mut art = OfflineArtifacts {
        test: test.clone(),
        config: cfg.clone(),
        samples,
        z_ref,
        registration,
        g_models,
        inverse,
        error_surrogates: Vec::new(),
        untransformed,
        diagnostics,
        sampler,
    };
    let (n, n_psi) = art.effective_truncation(cfg.n, cfg.n_psi);
    if let (Some(projector), Some(inv)) = (&projector, &art.inverse) {
        art.diagnostics.round_trip_mean = art
            .samples
            .par_iter()
            .zip(&transforms)
            .map(|(z, t)| Ok(projector.round_trip_error(t, &predict_inverse(inv, z, n_psi)?)))
            .collect::<Result<_>>()?;
    }

    // in-sample errors of the online path train the error surrogate
    let t0 = Instant::now();
    let errors: Vec<Vec<f64>> = art
        .samples
        .par_iter()
        .enumerate()
        .map(|(s, z)| {
            let u = art.predict(z, n, n_psi)?;
            (0..n_comp).map(|c| relative_l1_error(&art.test.grid, &raw[c][s], &u[c])).collect()
        })
        .collect::<Result<_>>()?;
    art.error_surrogates = (0..n_comp)
        .map(|c| {
            let e: Vec<f64> = errors.iter().map(|v| v[c]).collect();
            let opts = TrainOptions {
                seed: cfg.gpr.seed.wrapping_add(20_000 + c as u64),
                ..cfg.gpr.clone()
            };
            Ok(ErrorSurrogate {
                model: gpr::train(&art.samples, &e, &opts)?,
                n,
                n_psi,
                training_errors: e,
            })
        })
        .collect::<Result<_>>()?;
    timings.error_surrogate = t0.elapsed().as_secs_f64();
    timings.total = start.elapsed().as_secs_f64();
    art.diagnostics.timings = timings;
    Ok(art)
}

/// Coefficient predictions at one parameter, before truncation.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Per solution component, all `n_max` coefficients.
    pub g: Vec<Vec<f64>>,
    /// Per spatial component, all `n_psi_max` coefficients.
    pub inverse: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OnlineTimings {
    pub regression: f64,
    pub reconstruction: f64,
    pub composition: f64,
    pub error_model: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineResult {
    pub z: Sample,
    /// One field per solution component.
    pub fields: Vec<Field>,
    /// `E^R` per component.
    pub predicted_error: Vec<f64>,
    /// True when `z` lies outside the bounding box of the training samples.
    pub extrapolated: bool,
    pub timings: OnlineTimings,
}

impl OfflineArtifacts {
    /// Reassembles artifacts from persisted parts; derived tables are rebuilt.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        test: TestCase,
        config: OfflineConfig,
        samples: Vec<Sample>,
        registration: Option<RegistrationRecord>,
        g_models: Vec<CoefficientModel>,
        inverse: Option<InverseModel>,
        error_surrogates: Vec<ErrorSurrogate>,
        untransformed: Vec<PodBasis>,
        diagnostics: OfflineDiagnostics,
    ) -> Result<Self> {
        config.validate(&test)?;
        let n_comp = test.n_components();
        if g_models.len() != n_comp || error_surrogates.len() != n_comp || untransformed.len() != n_comp {
            return Err(Error::arg("artifact parts do not match the number of solution components"));
        }
        if g_models.iter().any(|g| g.basis.n_rows != test.grid.n_cells()) {
            return Err(Error::arg("basis dimension does not match the grid"));
        }
        if (config.mode == Mode::Tsmor) != inverse.is_some() {
            return Err(Error::arg("inverse model presence does not match the mode"));
        }
        let sampler = match config.mode {
            Mode::Tsmor => Some(P1Sampler::new(&test.grid, &quad_rule(&test.grid, config.quad_order)?)?),
            Mode::Identity => None,
        };
        Ok(Self {
            z_ref: reference_parameter(&test),
            test,
            config,
            samples,
            registration,
            g_models,
            inverse,
            error_surrogates,
            untransformed,
            diagnostics,
            sampler,
        })
    }

    pub fn n_components(&self) -> usize {
        self.g_models.len()
    }

    /// Largest usable `(n, n_psi)`.
    pub fn max_truncation(&self) -> (usize, usize) {
        let n = self.g_models.iter().map(CoefficientModel::n).min().unwrap_or(0);
        let n_psi = self.inverse.as_ref().map_or(usize::MAX, |m| m.n_psi);
        (n, n_psi)
    }

    /// `(n, n_psi)` capped at what the models hold.
    pub fn effective_truncation(&self, n: usize, n_psi: usize) -> (usize, usize) {
        let (a, b) = self.max_truncation();
        (n.min(a), n_psi.min(b))
    }

    pub fn is_extrapolation(&self, z: &[f64]) -> bool {
        (0..z.len()).any(|d| {
            let (lo, hi) = self.samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| (a.min(s[d]), b.max(s[d])));
            z[d] < lo || z[d] > hi
        })
    }

    pub fn predict_coefficients(&self, z: &[f64]) -> Result<Prediction> {
        let g = self.g_models.iter().map(|m| m.coefficients(z, m.n())).collect::<Result<_>>()?;
        let inverse = match &self.inverse {
            Some(inv) => inv.components.iter().map(|m| m.coefficients(z, inv.n_psi)).collect::<Result<_>>()?,
            None => Vec::new(),
        };
        Ok(Prediction { g, inverse })
    }

    /// `u_{n,n_Ψ} = Π[g_n ∘ (Id + Ψ̃_{n_Ψ})]` per component.
    pub fn assemble(&self, p: &Prediction, n: usize, n_psi: usize) -> Result<Vec<Field>> {
        let (max_n, max_psi) = self.max_truncation();
        if n < 1 || n > max_n || (self.inverse.is_some() && (n_psi < 1 || n_psi > max_psi)) {
            return Err(Error::arg(format!("truncation ({n}, {n_psi}) outside the stored ({max_n}, {max_psi})")));
        }
        let g: Vec<Field> = self
            .g_models
            .iter()
            .zip(&p.g)
            .map(|(m, a)| m.basis.reconstruct(&a[..n]))
            .collect::<Result<_>>()?;
        let (Some(inv), Some(sampler)) = (&self.inverse, &self.sampler) else {
            return Ok(g);
        };
        let disp: Vec<Field> = inv
            .components
            .iter()
            .zip(&p.inverse)
            .map(|(m, a)| m.basis.reconstruct(&a[..n_psi]))
            .collect::<Result<_>>()?;
        Ok(compose_fields(&g, &self.test.grid, sampler, &disp))
    }

    /// Field prediction without timing or the error model.
    pub fn predict(&self, z: &[f64], n: usize, n_psi: usize) -> Result<Vec<Field>> {
        self.assemble(&self.predict_coefficients(z)?, n, n_psi)
    }

    pub fn predicted_error(&self, z: &[f64]) -> Vec<f64> {
        self.error_surrogates.iter().map(|e| e.predict(z)).collect()
    }

    /// The online phase at the configured truncation.
    pub fn run_online(&self, z: &[f64]) -> Result<OnlineResult> {
        self.test.check_sample(z)?;
        let start = Instant::now();
        let (n, n_psi) = self.effective_truncation(self.config.n, self.config.n_psi);
        let p = self.predict_coefficients(z)?;
        let t_reg = start.elapsed().as_secs_f64();
        let fields = self.assemble(&p, n, n_psi)?;
        let t_fields = start.elapsed().as_secs_f64();
        let predicted_error = self.predicted_error(z);
        let total = start.elapsed().as_secs_f64();
        let extrapolated = self.is_extrapolation(z);
        if extrapolated {
            tracing::warn!(?z, "query outside the training samples' bounding box");
        }
        Ok(OnlineResult {
            z: z.to_vec(),
            fields,
            predicted_error,
            extrapolated,
            timings: OnlineTimings {
                regression: t_reg,
                reconstruction: 0.0,
                composition: t_fields - t_reg,
                error_model: total - t_fields,
                total,
            },
        })
    }

    /// S-PROJ: orthogonal projection of HF fields onto the first `n` raw modes.
    pub fn s_proj(&self, hf: &[Field], n: usize) -> Result<Vec<Field>> {
        self.untransformed
            .iter()
            .zip(hf)
            .map(|(b, u)| {
                let b = b.truncated(n.min(b.n()))?;
                b.reconstruct(&b.project(u)?)
            })
            .collect()
    }

    /// `(E^proj_n(S_G), E^proj_n(S_U))` per component from the singular values.
    pub fn projection_errors(&self, n: usize) -> Vec<(f64, f64)> {
        self.g_models
            .iter()
            .zip(&self.untransformed)
            .map(|(g, u)| (g.basis.projection_error(n), u.projection_error(n)))
            .collect()
    }
}

/// `Π[g ∘ (Id + d)]` by per-cell quadrature with piecewise-constant lookup.
fn compose_fields(g: &[Field], grid: &Grid, sampler: &P1Sampler, disp: &[Field]) -> Vec<Field> {
    let quad = &sampler.quad;
    let mut out = vec![vec![0.0; grid.n_cells()]; g.len()];
    for p in 0..quad.n_points() {
        let x = quad.point(p);
        let d = sampler.displacement(disp, p);
        let cell = grid.locate(grid.clamp([x[0] + d[0], x[1] + d[1]]));
        let (dst, w) = (quad.cell_of(p), quad.weight(p));
        for (o, gc) in out.iter_mut().zip(g) {
            o[dst] += w * gc[cell];
        }
    }
    out
}

/// `‖u_ref − u‖_{L¹} / ‖u_ref‖_{L¹}` with cell-volume weights.
pub fn relative_l1_error(grid: &Grid, u_ref: &[f64], u: &[f64]) -> Result<f64> {
    if u_ref.len() != grid.n_cells() || u.len() != u_ref.len() {
        return Err(Error::arg("fields do not match the grid"));
    }
    let denom: f64 = u_ref.iter().map(|v| v.abs()).sum();
    if !(denom > 0.0) {
        return Err(Error::arg("reference field has zero L1 norm"));
    }
    Ok(u_ref.iter().zip(u).map(|(a, b)| (a - b).abs()).sum::<f64>() / denom)
}

/// `E_pred / E_true`; `None` when the true error vanishes.
pub fn efficiency_index(e_pred: f64, e_true: f64) -> Option<f64> {
    (e_true > 0.0).then(|| e_pred / e_true)
}

/// `Σ τ_HF / Σ τ_MOR`.
pub fn speedup(hf: &[f64], mor: &[f64]) -> Result<f64> {
    let (a, b): (f64, f64) = (hf.iter().sum(), mor.iter().sum());
    if hf.is_empty() || hf.len() != mor.len() || !(a > 0.0 && b > 0.0) {
        return Err(Error::arg("speed-up needs matching, positive timings"));
    }
    Ok(a / b)
}

/// Test parameters with their HF solutions.
#[derive(Debug, Clone)]
pub struct TestSet {
    pub samples: Vec<Sample>,
    /// `fields[s][c]`.
    pub fields: Vec<Vec<Field>>,
    pub hf_seconds: Vec<f64>,
}

impl TestSet {
    pub fn solve(test: &TestCase, samples: Vec<Sample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::arg("test set is empty"));
        }
        let (fields, hf_seconds) = sample_snapshots_timed(test, &samples)?;
        Ok(Self { samples, fields, hf_seconds })
    }

    /// `size` independent uniform samples over `Z`.
    pub fn random(test: &TestCase, size: usize, seed: u64) -> Result<Self> {
        Self::solve(test, uniform_samples(test, size, seed))
    }
}

pub fn uniform_samples(test: &TestCase, size: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..size)
        .map(|_| test.bounds.iter().map(|(lo, hi)| if hi > lo { rng.random_range(*lo..=*hi) } else { *lo }).collect())
        .collect()
}

/// Mean relative L¹ error over the test set, per component.
pub fn average_error(art: &OfflineArtifacts, set: &TestSet, n: usize, n_psi: usize) -> Result<Vec<f64>> {
    let per: Vec<Vec<f64>> = set
        .samples
        .par_iter()
        .zip(&set.fields)
        .map(|(z, hf)| {
            let u = art.predict(z, n, n_psi)?;
            (0..hf.len()).map(|c| relative_l1_error(&art.test.grid, &hf[c], &u[c])).collect()
        })
        .collect::<Result<_>>()?;
    Ok(column_means(&per))
}

fn column_means(rows: &[Vec<f64>]) -> Vec<f64> {
    let k = rows.first().map_or(0, Vec::len);
    (0..k).map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / rows.len() as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub n: Vec<usize>,
    pub n_psi: Vec<usize>,
}

/// One test sample at the configured truncation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub z: Sample,
    pub component: usize,
    pub e: f64,
    pub e_r: f64,
    pub eta: Option<f64>,
    pub tau_hf: f64,
    pub tau_mor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageErrorRow {
    pub n: usize,
    pub n_psi: usize,
    pub component: usize,
    pub e_a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRow {
    pub n: usize,
    pub component: usize,
    pub e_proj_transformed: f64,
    pub e_proj_untransformed: f64,
    /// S-PROJ average error over the test set.
    pub s_proj_e_a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub test: TestCaseId,
    pub mode: Mode,
    pub m: Option<usize>,
    pub n: usize,
    pub n_psi: usize,
    pub m_train: usize,
    pub test_size: usize,
    /// GPR-TS-MOR average error at `(n, n_psi)`, per component.
    pub e_a: Vec<f64>,
    /// S-PROJ average error at `n`, per component.
    pub s_proj_e_a: Vec<f64>,
    pub speedup: f64,
    pub eta_mean: Option<f64>,
    pub eta_min: Option<f64>,
    pub eta_max: Option<f64>,
    pub worst_inversion_residual: f64,
    pub round_trip_mean_max: f64,
    pub forward_jacobian_min: f64,
    pub inverse_jacobian_min: f64,
    pub max_cell_width: f64,
    pub offline_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<MetricRow>,
    pub average_errors: Vec<AverageErrorRow>,
    pub projection: Vec<ProjectionRow>,
    pub summary: BenchmarkSummary,
}

/// Metrics at the configured truncation plus the `(n, n_psi)` sweep.
pub fn benchmark(art: &OfflineArtifacts, set: &TestSet, sweep: &Sweep) -> Result<BenchmarkReport> {
    let (n, n_psi) = art.effective_truncation(art.config.n, art.config.n_psi);
    let (max_n, max_psi) = art.max_truncation();
    let grid = &art.test.grid;
    let n_comp = art.n_components();
    let sweep_n: Vec<usize> = sweep.n.iter().copied().filter(|&k| k >= 1 && k <= max_n).collect();
    let sweep_psi: Vec<usize> = match art.inverse {
        Some(_) => sweep.n_psi.iter().copied().filter(|&k| k >= 1 && k <= max_psi).collect(),
        None => vec![n_psi],
    };

    struct PerSample {
        online: OnlineResult,
        errors: Vec<f64>,
        sweep: Vec<Vec<f64>>,
        s_proj: Vec<Vec<f64>>,
    }
    // timed queries run one at a time so that τ_MOR is not inflated by contention
    let mut per = Vec::with_capacity(set.samples.len());
    for (z, hf) in set.samples.iter().zip(&set.fields) {
        let online = art.run_online(z)?;
        let errors = (0..n_comp).map(|c| relative_l1_error(grid, &hf[c], &online.fields[c])).collect::<Result<Vec<_>>>()?;
        per.push(PerSample {
            online,
            errors,
            sweep: Vec::new(),
            s_proj: Vec::new(),
        });
    }
    per.par_iter_mut().zip(&set.samples).zip(&set.fields).try_for_each(|((p, z), hf)| -> Result<()> {
        let pred = art.predict_coefficients(z)?;
        for &a in &sweep_n {
            for &b in &sweep_psi {
                let u = art.assemble(&pred, a, b)?;
                p.sweep.push((0..n_comp).map(|c| relative_l1_error(grid, &hf[c], &u[c])).collect::<Result<_>>()?);
            }
            let u = art.s_proj(hf, a)?;
            p.s_proj.push((0..n_comp).map(|c| relative_l1_error(grid, &hf[c], &u[c])).collect::<Result<_>>()?);
        }
        Ok(())
    })?;

    let mut rows = Vec::new();
    let mut etas = Vec::new();
    for (p, tau_hf) in per.iter().zip(&set.hf_seconds) {
        for c in 0..n_comp {
            let e_r = p.online.predicted_error[c];
            let eta = efficiency_index(e_r, p.errors[c]);
            if let Some(v) = eta {
                etas.push(v);
            }
            rows.push(MetricRow {
                z: p.online.z.clone(),
                component: c,
                e: p.errors[c],
                e_r,
                eta,
                tau_hf: *tau_hf,
                tau_mor: p.online.timings.total,
            });
        }
    }
    let mut average_errors = Vec::new();
    for (k, &a) in sweep_n.iter().enumerate() {
        for (l, &b) in sweep_psi.iter().enumerate() {
            let idx = k * sweep_psi.len() + l;
            for c in 0..n_comp {
                let e_a = per.iter().map(|p| p.sweep[idx][c]).sum::<f64>() / per.len() as f64;
                average_errors.push(AverageErrorRow { n: a, n_psi: b, component: c, e_a });
            }
        }
    }
    let mut projection = Vec::new();
    for (k, &a) in sweep_n.iter().enumerate() {
        for (c, (eg, eu)) in art.projection_errors(a).into_iter().enumerate() {
            projection.push(ProjectionRow {
                n: a,
                component: c,
                e_proj_transformed: eg,
                e_proj_untransformed: eu,
                s_proj_e_a: per.iter().map(|p| p.s_proj[k][c]).sum::<f64>() / per.len() as f64,
            });
        }
    }
    let e_a = column_means(&per.iter().map(|p| p.errors.clone()).collect::<Vec<_>>());
    let s_proj_e_a = set
        .fields
        .par_iter()
        .map(|hf| {
            let u = art.s_proj(hf, n)?;
            (0..n_comp).map(|c| relative_l1_error(grid, &hf[c], &u[c])).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mor: Vec<f64> = per.iter().map(|p| p.online.timings.total).collect();
    let finite = |v: f64| v.is_finite().then_some(v);
    let summary = BenchmarkSummary {
        test: art.test.id,
        mode: art.config.mode,
        m: art.registration.as_ref().map(|r| r.m),
        n,
        n_psi,
        m_train: art.samples.len(),
        test_size: set.samples.len(),
        e_a,
        s_proj_e_a: column_means(&s_proj_e_a),
        speedup: speedup(&set.hf_seconds, &mor)?,
        eta_mean: (!etas.is_empty()).then(|| etas.iter().sum::<f64>() / etas.len() as f64),
        eta_min: finite(etas.iter().copied().fold(f64::INFINITY, f64::min)),
        eta_max: finite(etas.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        worst_inversion_residual: art.diagnostics.worst_inversion_residual,
        round_trip_mean_max: art.diagnostics.round_trip_mean.iter().copied().fold(0.0, f64::max),
        forward_jacobian_min: art
            .registration
            .as_ref()
            .map_or(1.0, |r| r.forward_jacobian_min.iter().copied().fold(f64::INFINITY, f64::min)),
        inverse_jacobian_min: art.diagnostics.inverse_jacobian_min,
        max_cell_width: grid.max_cell_width(),
        offline_seconds: art.diagnostics.timings.total,
    };
    Ok(BenchmarkReport {
        rows,
        average_errors,
        projection,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_is_the_box_center() {
        let t = TestCase::wave1d(10).unwrap();
        assert_eq!(reference_parameter(&t), vec![0.4, 1.25]);
    }

    #[test]
    fn metric_helpers() {
        assert_eq!(efficiency_index(0.2, 0.1), Some(2.0));
        assert_eq!(efficiency_index(0.2, 0.0), None);
        assert_eq!(speedup(&[1.0, 3.0], &[1.0, 1.0]).unwrap(), 2.0);
        assert!(speedup(&[], &[]).is_err());
    }
}
