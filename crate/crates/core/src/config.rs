//! Run configuration: one JSON file describes an experiment end to end.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpr::TrainOptions;
use crate::grid::Field;
use crate::hf::io::read_snapshots;
use crate::hf::{tensor_samples, Sample, TestCase, TestCaseId};
use crate::pipeline::{CriterionSpec, Mode, OfflineConfig, Sweep};
use crate::registration::RegistrationConfig;

pub const DEFAULT_TEST_SIZE: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SampleLayout {
    /// Uniform points per parameter axis, both ends included.
    Tensor(Vec<usize>),
    List(Vec<Sample>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub test: TestCaseId,
    /// Cells per spatial axis.
    pub grid: usize,
    /// Final time; only the Burgers problem accepts a value.
    #[serde(default)]
    pub t_final: Option<f64>,
    /// Required unless `snapshots` supplies the samples.
    #[serde(default)]
    pub samples: Option<SampleLayout>,
    /// Precomputed snapshot files, one per solution component.
    #[serde(default)]
    pub snapshots: Option<Vec<PathBuf>>,
    pub n: usize,
    pub n_psi: usize,
    #[serde(default)]
    pub n_max: Option<usize>,
    #[serde(default)]
    pub n_psi_max: Option<usize>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub registration: RegistrationConfig,
    #[serde(default)]
    pub criterion: Option<CriterionSpec>,
    #[serde(default)]
    pub quad_order: Option<usize>,
    /// Seeds every regression; the test set uses `seed + 1`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub gpr: TrainOptions,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    #[serde(default)]
    pub sweep: Option<Sweep>,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_test_size() -> usize {
    DEFAULT_TEST_SIZE
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let test = self.test_case()?;
        if self.samples.is_none() && self.snapshots.is_none() {
            return Err(Error::Config("either samples or snapshots must be given".into()));
        }
        if let Some(SampleLayout::List(list)) = &self.samples {
            for z in list {
                test.check_sample(z).map_err(|e| Error::Config(e.to_string()))?;
            }
        }
        if let Some(files) = &self.snapshots {
            if files.len() != test.n_components() {
                return Err(Error::Config(format!("{} snapshot files given, the problem has {} components", files.len(), test.n_components())));
            }
        }
        if self.test_size == 0 {
            return Err(Error::Config("test_size must be positive".into()));
        }
        self.offline_config(&test).validate(&test)
    }

    pub fn test_case(&self) -> Result<TestCase> {
        let test = match (self.test, self.t_final) {
            (TestCaseId::Burgers2d, Some(t)) => TestCase::burgers2d(self.grid, t),
            (_, Some(_)) => return Err(Error::Config("t_final applies to the Burgers problem only".into())),
            (id, None) => TestCase::new(id, self.grid),
        };
        test.map_err(|e| Error::Config(e.to_string()))
    }

    /// The training samples from the layout (snapshot imports carry their own).
    pub fn layout_samples(&self, test: &TestCase) -> Result<Option<Vec<Sample>>> {
        match &self.samples {
            Some(SampleLayout::Tensor(counts)) => Ok(Some(tensor_samples(&test.bounds, counts)?)),
            Some(SampleLayout::List(list)) => Ok(Some(list.clone())),
            None => Ok(None),
        }
    }

    /// Imported snapshots as `snapshots[s][c]` with their samples.
    pub fn import_snapshots(&self, test: &TestCase) -> Result<Option<(Vec<Sample>, Vec<Vec<Field>>)>> {
        let Some(files) = &self.snapshots else {
            return Ok(None);
        };
        let mut samples: Option<Vec<Sample>> = None;
        let mut per_component = Vec::with_capacity(files.len());
        for f in files {
            let (cols, side) = read_snapshots(f).map_err(|e| Error::Config(format!("{}: {e}", f.display())))?;
            if side.grid != test.grid {
                return Err(Error::Config(format!("{}: grid does not match the configured problem", f.display())));
            }
            match &samples {
                Some(s) if *s != side.samples => {
                    return Err(Error::Config("snapshot files list different samples".into()));
                }
                _ => samples = Some(side.samples),
            }
            per_component.push(cols);
        }
        let samples = samples.expect("at least one file");
        if let Some(layout) = self.layout_samples(test)? {
            if layout != samples {
                return Err(Error::Config("snapshot samples differ from the configured layout".into()));
            }
        }
        let n = samples.len();
        let snapshots = (0..n).map(|s| per_component.iter().map(|c| c[s].clone()).collect()).collect();
        Ok(Some((samples, snapshots)))
    }

    pub fn offline_config(&self, test: &TestCase) -> OfflineConfig {
        let mut cfg = OfflineConfig::new(test, self.n, self.n_psi);
        cfg.n_max = self.n_max.unwrap_or(self.n).max(self.n);
        cfg.n_psi_max = self.n_psi_max.unwrap_or(self.n_psi).max(self.n_psi);
        cfg.mode = self.mode;
        cfg.registration = self.registration.clone();
        if let Some(c) = self.criterion {
            cfg.criterion = c;
        }
        if let Some(q) = self.quad_order {
            cfg.quad_order = q;
        }
        cfg.gpr = TrainOptions {
            seed: self.seed,
            ..self.gpr.clone()
        };
        cfg
    }

    pub fn test_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }

    /// The sweep, defaulting to the configured truncation alone.
    pub fn sweep(&self) -> Sweep {
        self.sweep.clone().unwrap_or_else(|| Sweep {
            n: vec![self.n],
            n_psi: vec![self.n_psi],
        })
    }

    pub fn bundle_dir(&self) -> PathBuf {
        self.output.join("bundle")
    }
}
