//! Spread of nAP over randomly drawn reference sets.

use serde::{Deserialize, Serialize};

use super::coco::{coco_map, EvalMode, DEFAULT_MAX_DETS};
use crate::dataset::{sample_references, Dataset};
use crate::error::{Error, Result};
use crate::memory_bank::build_bank;
use crate::merging::MergeConfig;
use crate::pipeline::{eval_images, infer_targets};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceConfig {
    pub shots: usize,
    pub seeds: Vec<u64>,
    pub merge: MergeConfig,
    pub mode: EvalMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub shots: usize,
    pub runs: usize,
    pub mean: f64,
    /// Population standard deviation of `per_run`.
    pub std: f64,
    pub seeds: Vec<u64>,
    pub per_run: Vec<f64>,
}

impl VarianceReport {
    pub fn from_runs(shots: usize, seeds: Vec<u64>, per_run: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&per_run);
        VarianceReport {
            shots,
            runs: per_run.len(),
            mean,
            std,
            seeds,
            per_run,
        }
    }
}

/// Mean and population standard deviation; `(0, 0)` for an empty slice.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// nAP of one run: sample `shots` references per category with `seed`,
/// build the bank, infer every target and evaluate.
pub fn run_once(dataset: &Dataset, shots: usize, seed: u64, merge: &MergeConfig, mode: EvalMode) -> Result<f64> {
    let dim = dataset
        .feature_dim()?
        .ok_or_else(|| Error::Config("dataset has no images".into()))?;
    let refs = sample_references(&dataset.references, &dataset.category_ids(), shots, seed)?;
    let bank = build_bank(&refs, dim)?;
    let (results, _) = infer_targets(&dataset.targets, &bank, merge)?;
    let images = eval_images(&dataset.targets, &results)?;
    Ok(coco_map(&images, mode, DEFAULT_MAX_DETS)?.mean_ap)
}

/// One run per seed, in seed-list order.
pub fn variance_study(dataset: &Dataset, cfg: &VarianceConfig) -> Result<VarianceReport> {
    if cfg.seeds.is_empty() {
        return Err(Error::Config("variance study needs at least one seed".into()));
    }
    let per_run = cfg
        .seeds
        .iter()
        .map(|&seed| run_once(dataset, cfg.shots, seed, &cfg.merge, cfg.mode))
        .collect::<Result<Vec<_>>>()?;
    Ok(VarianceReport::from_runs(cfg.shots, cfg.seeds.clone(), per_run))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn population_std() {
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!((m, s), (5.0, 2.0));
        assert_eq!(mean_std(&[]), (0.0, 0.0));
    }

    #[test]
    fn report_from_runs() {
        let r = VarianceReport::from_runs(3, vec![1, 2], vec![0.25, 0.75]);
        assert_eq!((r.runs, r.mean, r.std), (2, 0.5, 0.25));
    }
}
