//! Seeded generator for dual-funnel datasets: the population shrinks stage by
//! stage while the feature width grows.
//!
//! A latent score drives both the intake features and every survival
//! decision. Features of later stages are fixed linear maps of all earlier
//! features plus Gaussian noise, so they are predictable from the intake
//! features up to that noise.

use ndarray::{s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{FunnelDataset, Outcome, RowOutcomes};
use crate::error::{Result, StageError};
use crate::labels::{FillPolicy, LabelMatrix};
use crate::schema::StageSchema;
use crate::util::rng_from_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthFunnelConfig {
    pub n0: usize,
    /// Fraction of stage `s-1` that reaches stage `s`, for `s = 1..=S`.
    pub survival_rates: Vec<f64>,
    /// Feature width added by each stage `0..=S`.
    pub dims_per_stage: Vec<usize>,
    pub dependency_noise_sigma: f64,
    /// Fraction of survival decisions swapped at random.
    pub label_noise: f64,
    /// Fraction of the final-stage population that passes the last stage.
    pub final_pass_rate: f64,
    pub seed: u64,
}

impl Default for SynthFunnelConfig {
    fn default() -> Self {
        Self {
            n0: 1000,
            survival_rates: vec![0.5, 0.4, 0.2],
            dims_per_stage: vec![4, 2, 2, 2],
            dependency_noise_sigma: 0.1,
            label_noise: 0.0,
            final_pass_rate: 0.5,
            seed: 0,
        }
    }
}

impl SynthFunnelConfig {
    /// Config with `stages` decision stages and the default shape.
    pub fn with_stages(stages: usize, n0: usize, seed: u64) -> Self {
        let default = Self::default();
        let survival_rates = (0..stages)
            .map(|s| default.survival_rates.get(s).copied().unwrap_or(0.5))
            .collect();
        let dims_per_stage = (0..=stages)
            .map(|s| default.dims_per_stage.get(s).copied().unwrap_or(2))
            .collect();
        Self {
            n0,
            survival_rates,
            dims_per_stage,
            seed,
            ..default
        }
    }

    pub fn num_stages(&self) -> usize {
        self.survival_rates.len()
    }

    /// Stage populations `n^0 ..= n^S`.
    pub fn populations(&self) -> Vec<usize> {
        let mut pops = vec![self.n0];
        for r in &self.survival_rates {
            let prev = *pops.last().expect("non-empty");
            pops.push((prev as f64 * r).round() as usize);
        }
        pops
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.num_stages();
        if s == 0 {
            return Err(StageError::validation("at least one survival rate is required"));
        }
        if self.dims_per_stage.len() != s + 1 {
            return Err(StageError::validation(format!(
                "{} survival rates need {} stage widths, got {}",
                s,
                s + 1,
                self.dims_per_stage.len()
            )));
        }
        if self.dims_per_stage.iter().any(|d| *d == 0) {
            return Err(StageError::validation("every stage must add at least one feature"));
        }
        if self.survival_rates.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
            return Err(StageError::validation("survival rates must lie in (0, 1]"));
        }
        let last = *self.populations().last().expect("non-empty");
        if last < 4 {
            return Err(StageError::validation(format!(
                "final stage would hold {last} rows; at least 4 are required"
            )));
        }
        if !(self.dependency_noise_sigma >= 0.0) {
            return Err(StageError::validation("dependency noise must be non-negative"));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return Err(StageError::validation("label noise must lie in [0, 0.5)"));
        }
        if !(self.final_pass_rate > 0.0 && self.final_pass_rate < 1.0) {
            return Err(StageError::validation("final pass rate must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Generated funnel together with the ground truth the dataset withholds.
#[derive(Debug, Clone)]
pub struct SynthFunnel {
    pub dataset: FunnelDataset,
    pub labels: LabelMatrix,
    /// Every feature of every row, aligned with `dataset` rows.
    pub full_features: Array2<f64>,
    /// Latent score, aligned with `dataset` rows.
    pub latent: Array1<f64>,
}

/// Generate a funnel dataset and its labels (rejections propagated).
pub fn synth_funnel(cfg: &SynthFunnelConfig) -> Result<(FunnelDataset, LabelMatrix)> {
    let f = synth_funnel_with_truth(cfg)?;
    Ok((f.dataset, f.labels))
}

pub fn synth_funnel_with_truth(cfg: &SynthFunnelConfig) -> Result<SynthFunnel> {
    cfg.validate()?;
    let mut rng = rng_from_seed(cfg.seed);
    let n = cfg.n0;
    let stages = cfg.num_stages();
    let total: usize = cfg.dims_per_stage.iter().sum();

    let latent: Array1<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut full = Array2::<f64>::zeros((n, total));

    let d0 = cfg.dims_per_stage[0];
    for j in 0..d0 {
        let load: f64 = rng.random_range(0.5..0.9);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let rest = (1.0 - load * load).sqrt();
        for i in 0..n {
            let e: f64 = StandardNormal.sample(&mut rng);
            full[(i, j)] = sign * load * latent[i] + rest * e;
        }
    }
    let mut width = d0;
    for s in 1..=stages {
        let k = cfg.dims_per_stage[s];
        let mut coef = Array2::<f64>::zeros((width, k));
        let scale = 1.0 / (width as f64).sqrt();
        coef.mapv_inplace(|_| {
            let g: f64 = StandardNormal.sample(&mut rng);
            g * scale
        });
        let mut block = full.slice(s![.., ..width]).dot(&coef);
        for (mut col, mut c) in block.axis_iter_mut(Axis(1)).zip(coef.axis_iter_mut(Axis(1))) {
            let m = col.mean().unwrap_or(0.0);
            let sd = col.mapv(|v| (v - m) * (v - m)).mean().unwrap_or(1.0).sqrt();
            if sd > 0.0 {
                col.mapv_inplace(|v| v / sd);
                c.mapv_inplace(|v| v / sd);
            }
        }
        for v in block.iter_mut() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *v += cfg.dependency_noise_sigma * e;
        }
        full.slice_mut(s![.., width..width + k]).assign(&block);
        width += k;
    }

    // survival by latent rank with random swaps
    let pops = cfg.populations();
    let mut depth = vec![0usize; n];
    let mut pool: Vec<usize> = (0..n).collect();
    for s in 1..=stages {
        let keep = pops[s];
        let mut survivors = top_by_latent(&pool, &latent, keep);
        apply_swaps(&mut survivors, &pool, cfg.label_noise, &mut rng);
        for &i in &survivors {
            depth[i] = s;
        }
        pool = survivors;
    }
    let mut outcome: Vec<Option<Outcome>> = depth
        .iter()
        .map(|d| match d {
            0 => None,
            _ => Some(Outcome::Reject),
        })
        .collect();
    let passes = ((pool.len() as f64) * cfg.final_pass_rate).round() as usize;
    let mut winners = top_by_latent(&pool, &latent, passes.clamp(1, pool.len() - 1));
    apply_swaps(&mut winners, &pool, cfg.label_noise, &mut rng);
    for &i in &winners {
        outcome[i] = Some(Outcome::Pass);
    }

    let rows = RowOutcomes::new((0..n).collect(), depth, outcome, None)?;
    let schema = StageSchema::continuous(&cfg.dims_per_stage)?;
    let dataset = FunnelDataset::new(schema, full.clone(), rows)?;
    let order: Vec<usize> = dataset.row_ids().to_vec();
    let full_features = full.select(Axis(0), &order);
    let latent = latent.select(Axis(0), &order);
    let labels = dataset.label_matrix(FillPolicy::PropagateReject);
    Ok(SynthFunnel {
        dataset,
        labels,
        full_features,
        latent,
    })
}

fn top_by_latent(pool: &[usize], latent: &Array1<f64>, keep: usize) -> Vec<usize> {
    let mut sorted = pool.to_vec();
    sorted.sort_by(|&a, &b| latent[b].total_cmp(&latent[a]).then(a.cmp(&b)));
    sorted.truncate(keep);
    sorted.sort_unstable();
    sorted
}

fn apply_swaps<R: Rng>(chosen: &mut Vec<usize>, pool: &[usize], noise: f64, rng: &mut R) {
    if noise <= 0.0 {
        return;
    }
    let mut others: Vec<usize> = pool
        .iter()
        .copied()
        .filter(|i| chosen.binary_search(i).is_err())
        .collect();
    let m = (noise * chosen.len().min(others.len()) as f64).round() as usize;
    if m == 0 {
        return;
    }
    chosen.shuffle(rng);
    others.shuffle(rng);
    for k in 0..m {
        chosen[k] = others[k];
    }
    chosen.sort_unstable();
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn populations_follow_survival_rates() {
        let cfg = SynthFunnelConfig {
            n0: 1000,
            survival_rates: vec![0.5, 0.2, 0.1],
            dims_per_stage: vec![3, 2, 2, 2],
            seed: 3,
            ..Default::default()
        };
        let (ds, labels) = synth_funnel(&cfg).unwrap();
        assert_eq!(ds.populations(), vec![1000, 500, 100, 10]);
        assert_eq!(labels.num_stages(), 3);
    }

    #[test]
    fn same_seed_same_bits() {
        let cfg = SynthFunnelConfig {
            label_noise: 0.1,
            seed: 11,
            ..Default::default()
        };
        let a = synth_funnel_with_truth(&cfg).unwrap();
        let b = synth_funnel_with_truth(&cfg).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.labels, b.labels);
        assert!(a
            .full_features
            .iter()
            .zip(b.full_features.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn rejects_degenerate_final_stage() {
        let cfg = SynthFunnelConfig {
            n0: 20,
            survival_rates: vec![0.1, 0.5],
            dims_per_stage: vec![1, 1, 1],
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn final_stage_has_both_outcomes() {
        let f = synth_funnel_with_truth(&SynthFunnelConfig::default()).unwrap();
        let last = f.labels.values().column(2).to_vec();
        let range = f.dataset.rows_reaching(3);
        let finals = &last[range];
        assert!(finals.contains(&1) && finals.contains(&-1));
    }
}
