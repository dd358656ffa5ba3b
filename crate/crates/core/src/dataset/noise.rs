use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::TimeSeriesDataset;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Zero whole time steps (all channels) with probability `level`.
    Missing,
    /// Add N(0, level^2) to every value; `level` is in per-channel std units.
    Gaussian,
}

impl NoiseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::Missing => "missing",
            NoiseKind::Gaussian => "gaussian",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub level: f64,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            NoiseKind::Missing => (0.0..=1.0).contains(&self.level),
            NoiseKind::Gaussian => self.level >= 0.0 && self.level.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "noise level {} out of range for kind {}",
                self.level,
                self.kind.as_str()
            )))
        }
    }
}

/// Corrupts a (standardized) dataset. Pure given `spec.seed`.
pub fn inject_noise(ds: &TimeSeriesDataset, spec: &NoiseSpec) -> Result<TimeSeriesDataset> {
    spec.validate()?;
    let mut out = ds.clone();
    if spec.level == 0.0 {
        return Ok(out);
    }
    let mut rng = rng::stream(spec.seed, &[rng::STREAM_NOISE]);
    match spec.kind {
        NoiseKind::Missing => {
            for step in out.samples.chunks_exact_mut(ds.d) {
                if rng.random::<f64>() < spec.level {
                    step.iter_mut().for_each(|v| *v = 0.0);
                }
            }
        }
        NoiseKind::Gaussian => {
            let normal = Normal::new(0.0, spec.level).expect("validated level");
            for v in out.samples.iter_mut() {
                *v = (*v as f64 + normal.sample(&mut rng)) as f32;
            }
        }
    }
    Ok(out)
}
