//! POD basis plus one independent GPR per reduced coefficient.
//!
//! The coefficient regressions do not depend on how many modes are later
//! used, so a model fitted for `n` modes serves every truncation `≤ n`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpr::{self, GprModel, GprSpec, TrainOptions};
use crate::grid::Field;
use crate::hf::Sample;
use crate::pod::{compute_pod, PodBasis, SnapshotKind, SnapshotMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientModelSpec {
    pub basis: PodBasis,
    pub gprs: Vec<GprSpec>,
}

#[derive(Debug, Clone)]
pub struct CoefficientModel {
    pub basis: PodBasis,
    pub gprs: Vec<GprModel>,
}

impl CoefficientModel {
    /// POD of `snapshots` truncated at `n` (capped at the matrix rank bound),
    /// then a GPR from `samples` to each projection coefficient.
    pub fn fit(snapshots: Vec<Field>, samples: &[Sample], kind: SnapshotKind, n: usize, opts: &TrainOptions) -> Result<Self> {
        let s = SnapshotMatrix::new(snapshots, samples.to_vec(), kind)?;
        let n = n.min(s.n_rows.min(s.n_cols()));
        let basis = compute_pod(&s, n)?;
        let coeffs: Vec<Vec<f64>> = s.columns.iter().map(|c| basis.project(c)).collect::<Result<_>>()?;
        let gprs = (0..n)
            .into_par_iter()
            .map(|i| {
                let y: Vec<f64> = coeffs.iter().map(|a| a[i]).collect();
                let opts = TrainOptions {
                    seed: opts.seed.wrapping_add(i as u64),
                    ..opts.clone()
                };
                gpr::train(samples, &y, &opts)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { basis, gprs })
    }

    pub fn n(&self) -> usize {
        self.gprs.len()
    }

    /// Mean predictions of the first `n` coefficients.
    pub fn coefficients(&self, z: &[f64], n: usize) -> Result<Vec<f64>> {
        if n < 1 || n > self.n() {
            return Err(Error::arg(format!("{n} coefficients requested, model has {}", self.n())));
        }
        Ok(self.gprs[..n].iter().map(|g| g.predict_mean(z)).collect())
    }

    pub fn predict(&self, z: &[f64], n: usize) -> Result<Field> {
        self.basis.reconstruct(&self.coefficients(z, n)?)
    }

    pub fn to_spec(&self) -> CoefficientModelSpec {
        CoefficientModelSpec {
            basis: self.basis.clone(),
            gprs: self.gprs.iter().map(|g| g.spec.clone()).collect(),
        }
    }

    pub fn from_spec(spec: CoefficientModelSpec) -> Result<Self> {
        if spec.basis.n() != spec.gprs.len() {
            return Err(Error::arg("basis size and regression count differ"));
        }
        let gprs = spec.gprs.into_iter().map(GprModel::from_spec).collect::<Result<_>>()?;
        Ok(Self { basis: spec.basis, gprs })
    }
}
