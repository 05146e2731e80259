//! Error-threshold active sampling.
//!
//! A reserve sample `s` moves into the training subset when
//! `1 − erf((ε_s − μ)/σ) < p_tol`, with `μ`, `σ` the mean and spread of
//! per-sample force errors over the validation set.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chemdata::{Cluster, ClusterSet, SplitIndices, Vec3};
use crate::error::{Error, Result};
use crate::model::{energy_and_forces, ModelParams};
use crate::training::{train_with_hook, Checkpoint, LossConfig, ModelInit, Schedule};

/// Gaussian error function, accurate to a few ulps.
///
/// Maclaurin series for `|x| < 2.5`, continued fraction for `erfc` beyond.
pub fn erf(x: f64) -> f64 {
    if x.is_nan() {
        return x;
    }
    let a = x.abs();
    let v = if a < 2.5 {
        let x2 = a * a;
        let (mut term, mut sum, mut n) = (a, a, 0.0);
        while term.abs() > 1e-17 * sum.abs() {
            n += 1.0;
            term *= -x2 / n;
            sum += term / (2.0 * n + 1.0);
        }
        sum * std::f64::consts::FRAC_2_SQRT_PI
    } else if a < 6.0 {
        1.0 - erfc_cf(a)
    } else {
        1.0
    };
    v.copysign(x)
}

/// `erfc(x)` for `x ≥ 2.5` by modified Lentz on
/// `e^{−x²}/√π · 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + …))))`.
fn erfc_cf(x: f64) -> f64 {
    let tiny = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..200 {
        let a = k as f64 * 0.5;
        d = x + a * d;
        d = if d.abs() < tiny { tiny } else { d };
        c = x + a / c;
        c = if c.abs() < tiny { tiny } else { c };
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x * x).exp() / (f * std::f64::consts::PI.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mu: f64,
    /// Population standard deviation.
    pub sigma: f64,
    pub n: usize,
}

pub fn error_stats(errors: &[f64]) -> Result<ErrorStats> {
    if errors.is_empty() {
        return Err(Error::MissingData("no samples for error statistics".into()));
    }
    let n = errors.len() as f64;
    let mu = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mu).powi(2)).sum::<f64>() / n;
    Ok(ErrorStats { mu, sigma: var.sqrt(), n: errors.len() })
}

/// Mean absolute force-component error of one prediction.
pub fn sample_force_error(pred: &[Vec3], target: &[Vec3]) -> f64 {
    let s: f64 = pred.iter().zip(target).flat_map(|(p, t)| (0..3).map(move |k| (p[k] - t[k]).abs())).sum();
    s / (3 * pred.len()).max(1) as f64
}

/// ε for each cluster, in input order.
pub fn sample_errors(params: &ModelParams, clusters: &[&Cluster]) -> Result<Vec<f64>> {
    clusters
        .par_iter()
        .map(|c| {
            let target = c
                .forces
                .as_ref()
                .ok_or_else(|| Error::MissingData("active sampling needs force targets".into()))?;
            let (_, f) = energy_and_forces(params, &c.atomic_numbers, &c.positions)?;
            Ok(sample_force_error(&f, target))
        })
        .collect()
}

pub fn validation_error_stats(params: &ModelParams, validation: &[Cluster]) -> Result<ErrorStats> {
    if validation.is_empty() {
        return Err(Error::MissingData("empty validation set".into()));
    }
    let refs: Vec<&Cluster> = validation.iter().collect();
    error_stats(&sample_errors(params, &refs)?)
}

/// `1 − erf((ε − μ)/σ) < p_tol`; for `σ = 0`, promote iff `ε > μ`.
pub fn promotion_decision(epsilon: f64, stats: &ErrorStats, p_tol: f64) -> bool {
    if stats.sigma == 0.0 {
        return epsilon > stats.mu;
    }
    1.0 - erf((epsilon - stats.mu) / stats.sigma) < p_tol
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub p_tol: f64,
    /// Epochs between rounds.
    pub round_period: usize,
    /// Reserve samples scored per round.
    pub score_count: usize,
    /// Fraction of the training indices that start in the training subset.
    pub initial_fraction: f64,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig { p_tol: 0.05, round_period: 5, score_count: 256, initial_fraction: 0.5, seed: 0 }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_tol > 0.0 && self.p_tol < 1.0) {
            return Err(Error::Config(format!("p_tol must lie in (0, 1), got {}", self.p_tol)));
        }
        if self.round_period == 0 || self.score_count == 0 {
            return Err(Error::Config("round_period and score_count must be at least 1".into()));
        }
        if !(self.initial_fraction > 0.0 && self.initial_fraction <= 1.0) {
            return Err(Error::Config("initial_fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromotionRecord {
    pub round: usize,
    pub sample_id: usize,
    pub epsilon_s: f64,
    pub mu: f64,
    pub sigma: f64,
    pub promoted: bool,
}

/// Training subset and reserve, both as dataset indices, plus the
/// append-only scoring log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingPools {
    pub train_subset: Vec<usize>,
    pub reserve: Vec<usize>,
    pub log: Vec<PromotionRecord>,
    pub rounds: usize,
}

impl SamplingPools {
    pub fn new(train_subset: Vec<usize>, reserve: Vec<usize>) -> Result<Self> {
        let a: BTreeSet<usize> = train_subset.iter().copied().collect();
        if a.len() != train_subset.len() || reserve.iter().any(|i| a.contains(i)) {
            return Err(Error::Split("training subset and reserve must be disjoint and duplicate-free".into()));
        }
        let b: BTreeSet<usize> = reserve.iter().copied().collect();
        if b.len() != reserve.len() {
            return Err(Error::Split("reserve has duplicate indices".into()));
        }
        Ok(SamplingPools { train_subset, reserve, log: Vec::new(), rounds: 0 })
    }

    /// Seeded split of `train` into an initial subset and the reserve.
    pub fn from_training_indices(train: &[usize], initial_fraction: f64, seed: u64) -> Result<Self> {
        let mut idx = train.to_vec();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let k = ((initial_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len());
        let reserve = idx.split_off(k);
        Self::new(idx, reserve)
    }

    /// Rebuilds the pools reached from an initial state by applying `log`.
    pub fn replay(train_subset: Vec<usize>, reserve: Vec<usize>, log: &[PromotionRecord]) -> Result<Self> {
        let mut p = Self::new(train_subset, reserve)?;
        for r in log {
            if r.promoted {
                p.promote(r.sample_id)?;
            }
            p.rounds = p.rounds.max(r.round);
        }
        p.log = log.to_vec();
        Ok(p)
    }

    fn promote(&mut self, id: usize) -> Result<()> {
        let pos = self
            .reserve
            .iter()
            .position(|&i| i == id)
            .ok_or_else(|| Error::Split(format!("sample {id} is not in the reserve")))?;
        self.reserve.remove(pos);
        self.train_subset.push(id);
        Ok(())
    }

    pub fn log_csv(&self) -> String {
        let mut s = String::from("round,sample_id,epsilon_s,mu,sigma,promoted\n");
        for r in &self.log {
            s.push_str(&format!("{},{},{},{},{},{}\n", r.round, r.sample_id, r.epsilon_s, r.mu, r.sigma, r.promoted));
        }
        s
    }
}

/// Scores a seeded random subset of the reserve against fresh validation
/// statistics and promotes every qualifying sample. Returns the number promoted.
pub fn active_round(
    params: &ModelParams,
    data: &ClusterSet,
    validation: &[Cluster],
    pools: &mut SamplingPools,
    p_tol: f64,
    score_count: usize,
    seed: u64,
) -> Result<usize> {
    pools.rounds += 1;
    let round = pools.rounds;
    if pools.reserve.is_empty() {
        return Ok(0);
    }
    let stats = validation_error_stats(params, validation)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(round as u64);
    let mut chosen = pools.reserve.clone();
    chosen.shuffle(&mut rng);
    chosen.truncate(score_count.min(chosen.len()));
    let clusters: Vec<&Cluster> = chosen
        .iter()
        .map(|&i| data.clusters.get(i).ok_or_else(|| Error::Split(format!("reserve index {i} out of range"))))
        .collect::<Result<_>>()?;
    let eps = sample_errors(params, &clusters)?;
    let mut promoted = 0;
    for (&id, &e) in chosen.iter().zip(&eps) {
        let decision = promotion_decision(e, &stats, p_tol);
        pools.log.push(PromotionRecord { round, sample_id: id, epsilon_s: e, mu: stats.mu, sigma: stats.sigma, promoted: decision });
        if decision {
            pools.promote(id)?;
            promoted += 1;
        }
    }
    Ok(promoted)
}

/// Warm-started training on `pools.train_subset` with an active round every
/// `round_period` epochs. Validation uses `split.validation`.
pub fn active_training_loop(
    parent: &Checkpoint,
    data: &ClusterSet,
    split: &SplitIndices,
    mut pools: SamplingPools,
    loss: &LossConfig,
    schedule: &Schedule,
    sampling: &SamplingConfig,
) -> Result<(Checkpoint, SamplingPools)> {
    sampling.validate()?;
    let validation: Vec<Cluster> = split
        .validation
        .iter()
        .map(|&i| data.clusters.get(i).cloned().ok_or_else(|| Error::Split(format!("index {i} out of range"))))
        .collect::<Result<_>>()?;
    let inner = SplitIndices { train: pools.train_subset.clone(), ..split.clone() };
    let mut hook = |ctx: crate::training::EpochContext<'_>| -> Result<()> {
        if ctx.epoch.is_multiple_of(sampling.round_period) && !pools.reserve.is_empty() {
            let n = active_round(ctx.params, data, &validation, &mut pools, sampling.p_tol, sampling.score_count, sampling.seed)?;
            log::info!("epoch {}: active round {} promoted {n}", ctx.epoch, pools.rounds);
            *ctx.train = pools.train_subset.clone();
        }
        Ok(())
    };
    let ck = train_with_hook(data, &inner, ModelInit::From(parent), loss, schedule, &mut hook)?;
    Ok((ck, pools))
}
