//! Offline artifacts on disk: `manifest.json` plus raw little-endian `f64`
//! payloads, each a row-major matrix whose shape and SHA-256 the manifest
//! records.
//!
//! Every GPR row packs `β (p+1), κ₁, ℓ (p), σ_n, standardizer mean (p),
//! standardizer scale (p), log-likelihood, targets (m)`; the inputs are the
//! manifest's sample list. Payload bytes depend only on the computation, so
//! equal configs and seeds give equal hashes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gpr::{GprHyperparams, GprModel, GprSpec, Standardizer};
use crate::hf::io::{f64s_from_le_bytes, f64s_to_le_bytes};
use crate::hf::{Sample, TestCase};
use crate::invmap::InverseModel;
use crate::pipeline::{ErrorSurrogate, Mode, OfflineArtifacts, OfflineConfig, OfflineDiagnostics, RegistrationRecord};
use crate::pod::PodBasis;
use crate::reduced::CoefficientModel;
use crate::registration::DisplacementCoeffs;

pub const MANIFEST: &str = "manifest.json";
pub const FORMAT: &str = "tsmor-bundle";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayloadEntry {
    pub name: String,
    pub file: String,
    pub rows: usize,
    pub cols: usize,
    pub sha256: String,
}

/// Registration output minus the coefficient payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationSummary {
    pub m: usize,
    pub xi: Vec<f64>,
    pub converged: bool,
    pub matching: Vec<f64>,
    pub forward_jacobian_min: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSurrogateEntry {
    pub n: usize,
    pub n_psi: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub mode: Mode,
    pub test: TestCase,
    pub config: OfflineConfig,
    /// SHA-256 of the canonical JSON of `(test, config)`.
    pub config_sha256: String,
    /// Caller-supplied context, e.g. the run configuration.
    #[serde(default)]
    pub provenance: serde_json::Value,
    pub samples: Vec<Sample>,
    pub z_ref: Sample,
    pub registration: Option<RegistrationSummary>,
    /// Stored modes per solution component.
    pub n: Vec<usize>,
    pub n_psi: Option<usize>,
    pub error_surrogates: Vec<ErrorSurrogateEntry>,
    pub diagnostics: OfflineDiagnostics,
    pub payloads: Vec<PayloadEntry>,
}

impl Manifest {
    /// `name → sha256` for every payload, in manifest order.
    pub fn payload_hashes(&self) -> Vec<(String, String)> {
        self.payloads.iter().map(|p| (p.name.clone(), p.sha256.clone())).collect()
    }
}

pub fn config_sha256(test: &TestCase, config: &OfflineConfig) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(&(test, config))?))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Matrix {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    fn from_rows(name: impl Into<String>, rows: &[Vec<f64>], cols: usize) -> Result<Self> {
        let name = name.into();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::arg(format!("payload {name} has ragged rows")));
        }
        Ok(Self {
            name,
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    fn row_vec(name: impl Into<String>, v: &[f64]) -> Self {
        Self {
            name: name.into(),
            rows: 1,
            cols: v.len(),
            data: v.to_vec(),
        }
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        if self.cols == 0 {
            return vec![Vec::new(); self.rows];
        }
        self.data.chunks_exact(self.cols).map(<[f64]>::to_vec).collect()
    }
}

fn gpr_width(p: usize, m: usize) -> usize {
    4 * p + 4 + m
}

fn pack_gpr(spec: &GprSpec, samples: &[Sample]) -> Result<Vec<f64>> {
    if spec.inputs != samples {
        return Err(Error::arg("a regression was trained on inputs other than the sample set"));
    }
    let hp = &spec.hyperparams;
    let mut row = hp.beta.clone();
    row.push(hp.kappa1);
    row.extend(&hp.length_scales);
    row.push(hp.noise_sigma);
    row.extend(&spec.standardizer.mean);
    row.extend(&spec.standardizer.scale);
    row.push(spec.log_likelihood);
    row.extend(&spec.targets);
    Ok(row)
}

fn unpack_gpr(row: &[f64], samples: &[Sample]) -> Result<GprModel> {
    let p = samples.first().map_or(0, Vec::len);
    let m = samples.len();
    if row.len() != gpr_width(p, m) {
        return Err(Error::arg("regression payload row has the wrong width"));
    }
    let mut it = row.iter().copied();
    let mut take = |k: usize| -> Vec<f64> { it.by_ref().take(k).collect() };
    let beta = take(p + 1);
    let kappa1 = take(1)[0];
    let length_scales = take(p);
    let noise_sigma = take(1)[0];
    let mean = take(p);
    let scale = take(p);
    let log_likelihood = take(1)[0];
    let targets = take(m);
    GprModel::from_spec(GprSpec {
        hyperparams: GprHyperparams {
            beta,
            kappa1,
            length_scales,
            noise_sigma,
        },
        standardizer: Standardizer { mean, scale },
        inputs: samples.to_vec(),
        targets,
        log_likelihood,
    })
}

fn gpr_matrix(name: String, models: &[&GprModel], samples: &[Sample]) -> Result<Matrix> {
    let rows = models.iter().map(|g| pack_gpr(&g.spec, samples)).collect::<Result<Vec<_>>>()?;
    let p = samples.first().map_or(0, Vec::len);
    Matrix::from_rows(name, &rows, gpr_width(p, samples.len()))
}

fn basis_matrices(prefix: &str, b: &PodBasis) -> Result<[Matrix; 2]> {
    Ok([
        Matrix::from_rows(format!("{prefix}.modes"), &b.modes, b.n_rows)?,
        Matrix::row_vec(format!("{prefix}.singular_values"), &b.singular_values),
    ])
}

fn coefficient_model_matrices(prefix: &str, model: &CoefficientModel, samples: &[Sample]) -> Result<Vec<Matrix>> {
    let mut out: Vec<Matrix> = basis_matrices(prefix, &model.basis)?.into();
    out.push(gpr_matrix(format!("{prefix}.gpr"), &model.gprs.iter().collect::<Vec<_>>(), samples)?);
    Ok(out)
}

fn collect_matrices(art: &OfflineArtifacts) -> Result<Vec<Matrix>> {
    let mut out = Vec::new();
    if let Some(reg) = &art.registration {
        let width = reg.coeffs.first().map_or(0, |c| c.coeffs.len());
        let rows: Vec<Vec<f64>> = reg.coeffs.iter().map(|c| c.coeffs.clone()).collect();
        out.push(Matrix::from_rows("registration.coefficients", &rows, width)?);
    }
    for (c, g) in art.g_models.iter().enumerate() {
        out.extend(coefficient_model_matrices(&format!("g{c}"), g, &art.samples)?);
    }
    for (c, b) in art.untransformed.iter().enumerate() {
        out.extend(basis_matrices(&format!("u{c}"), b)?);
    }
    if let Some(inv) = &art.inverse {
        for (k, m) in inv.components.iter().enumerate() {
            out.extend(coefficient_model_matrices(&format!("psi{k}"), m, &art.samples)?);
        }
    }
    let surrogates: Vec<&GprModel> = art.error_surrogates.iter().map(|e| &e.model).collect();
    out.push(gpr_matrix("error.gpr".into(), &surrogates, &art.samples)?);
    Ok(out)
}

/// Writes the bundle to `dir`, replacing an existing bundle there. The files
/// are staged in a sibling directory, so a failure leaves nothing behind.
pub fn save(art: &OfflineArtifacts, dir: &Path, provenance: serde_json::Value) -> Result<Manifest> {
    let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent)?;
    let name = dir
        .file_name()
        .ok_or_else(|| Error::bundle(dir, "bundle path has no final component"))?
        .to_string_lossy()
        .into_owned();
    let staging = parent.join(format!(".{name}.partial-{}", std::process::id()));
    let result = write_into(art, &staging, provenance).and_then(|m| {
        if dir.exists() {
            fs::remove_dir_all(dir)?;
        }
        fs::rename(&staging, dir)?;
        Ok(m)
    });
    if result.is_err() && staging.exists() {
        let _ = fs::remove_dir_all(&staging);
    }
    result
}

fn write_into(art: &OfflineArtifacts, dir: &Path, provenance: serde_json::Value) -> Result<Manifest> {
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir)?;
    let mut payloads = Vec::new();
    for m in collect_matrices(art)? {
        let bytes = f64s_to_le_bytes(&m.data);
        let file = format!("{}.f64", m.name);
        fs::write(dir.join(&file), &bytes)?;
        payloads.push(PayloadEntry {
            name: m.name,
            file,
            rows: m.rows,
            cols: m.cols,
            sha256: sha256_hex(&bytes),
        });
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        mode: art.config.mode,
        test: art.test.clone(),
        config: art.config.clone(),
        config_sha256: config_sha256(&art.test, &art.config)?,
        provenance,
        samples: art.samples.clone(),
        z_ref: art.z_ref.clone(),
        registration: art.registration.as_ref().map(|r| RegistrationSummary {
            m: r.m,
            xi: r.xi.clone(),
            converged: r.converged,
            matching: r.matching.clone(),
            forward_jacobian_min: r.forward_jacobian_min.clone(),
        }),
        n: art.g_models.iter().map(CoefficientModel::n).collect(),
        n_psi: art.inverse.as_ref().map(|i| i.n_psi),
        error_surrogates: art
            .error_surrogates
            .iter()
            .map(|e| ErrorSurrogateEntry { n: e.n, n_psi: e.n_psi })
            .collect(),
        diagnostics: art.diagnostics.clone(),
        payloads,
    };
    fs::write(dir.join(MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let bytes = fs::read(&path).map_err(|e| Error::bundle(&path, e.to_string()))?;
    let m: Manifest = serde_json::from_slice(&bytes).map_err(|e| Error::bundle(&path, e.to_string()))?;
    if m.format != FORMAT || m.version != VERSION {
        return Err(Error::bundle(&path, format!("unsupported bundle format {} v{}", m.format, m.version)));
    }
    Ok(m)
}

struct Reader<'a> {
    dir: &'a Path,
    manifest: &'a Manifest,
}

impl Reader<'_> {
    /// Reads and verifies one payload.
    fn get(&self, name: &str) -> Result<Matrix> {
        let entry = self
            .manifest
            .payloads
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::bundle(self.dir, format!("payload {name} is missing from the manifest")))?;
        let path: PathBuf = self.dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| Error::bundle(&path, e.to_string()))?;
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(Error::bundle(&path, "checksum mismatch"));
        }
        let data = f64s_from_le_bytes(&bytes).map_err(|e| Error::bundle(&path, e.to_string()))?;
        if data.len() != entry.rows * entry.cols {
            return Err(Error::bundle(&path, format!("expected {}×{} values, found {}", entry.rows, entry.cols, data.len())));
        }
        Ok(Matrix {
            name: entry.name.clone(),
            rows: entry.rows,
            cols: entry.cols,
            data,
        })
    }

    fn basis(&self, prefix: &str) -> Result<PodBasis> {
        let modes = self.get(&format!("{prefix}.modes"))?;
        Ok(PodBasis {
            n_rows: modes.cols,
            modes: modes.rows(),
            singular_values: self.get(&format!("{prefix}.singular_values"))?.data,
        })
    }

    fn gprs(&self, name: &str) -> Result<Vec<GprModel>> {
        let m = self.get(name)?;
        let gprs = m.rows().iter().map(|r| unpack_gpr(r, &self.manifest.samples)).collect::<Result<Vec<_>>>();
        gprs.map_err(|e| Error::bundle(self.dir.join(format!("{}.f64", m.name)), e.to_string()))
    }

    fn coefficient_model(&self, prefix: &str) -> Result<CoefficientModel> {
        let basis = self.basis(prefix)?;
        let gprs = self.gprs(&format!("{prefix}.gpr"))?;
        if basis.n() != gprs.len() {
            return Err(Error::bundle(self.dir, format!("{prefix}: basis size and regression count differ")));
        }
        Ok(CoefficientModel { basis, gprs })
    }
}

/// Loads and verifies a bundle; the manifest is returned alongside.
pub fn load(dir: &Path) -> Result<(OfflineArtifacts, Manifest)> {
    let manifest = read_manifest(dir)?;
    let r = Reader { dir, manifest: &manifest };
    let test = manifest.test.clone();
    let n_comp = test.n_components();
    let registration = match &manifest.registration {
        Some(s) => {
            let m = r.get("registration.coefficients")?;
            let dim = test.grid.dim();
            let coeffs = m
                .rows()
                .into_iter()
                .map(|c| DisplacementCoeffs::from_vec(dim, s.m, c))
                .collect::<Result<Vec<_>>>()?;
            Some(RegistrationRecord {
                m: s.m,
                xi: s.xi.clone(),
                converged: s.converged,
                coeffs,
                matching: s.matching.clone(),
                forward_jacobian_min: s.forward_jacobian_min.clone(),
            })
        }
        None => None,
    };
    let g_models = (0..n_comp).map(|c| r.coefficient_model(&format!("g{c}"))).collect::<Result<Vec<_>>>()?;
    let untransformed = (0..n_comp).map(|c| r.basis(&format!("u{c}"))).collect::<Result<Vec<_>>>()?;
    let inverse = match manifest.n_psi {
        Some(n_psi) => Some(InverseModel {
            components: (0..test.grid.dim())
                .map(|k| r.coefficient_model(&format!("psi{k}")))
                .collect::<Result<_>>()?,
            n_psi,
        }),
        None => None,
    };
    let surrogate_models = r.gprs("error.gpr")?;
    if surrogate_models.len() != manifest.error_surrogates.len() {
        return Err(Error::bundle(dir, "error surrogate count does not match the manifest"));
    }
    let error_surrogates = surrogate_models
        .into_iter()
        .zip(&manifest.error_surrogates)
        .map(|(model, e)| ErrorSurrogate {
            training_errors: model.spec.targets.clone(),
            model,
            n: e.n,
            n_psi: e.n_psi,
        })
        .collect();
    let art = OfflineArtifacts::from_parts(
        test,
        manifest.config.clone(),
        manifest.samples.clone(),
        registration,
        g_models,
        inverse,
        error_surrogates,
        untransformed,
        manifest.diagnostics.clone(),
    )
    .map_err(|e| Error::bundle(dir, e.to_string()))?;
    Ok((art, manifest))
}
