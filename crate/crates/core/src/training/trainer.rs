use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, OptimizerState};
use super::checkpoint::{save_checkpoint, Checkpoint, EpochRecord, Provenance};
use super::loss::{compute_loss, LossConfig};
use crate::chemdata::{batch_clusters, Cluster, ClusterSet, SplitIndices};
use crate::error::{Error, Result};
use crate::hash::Fnv64;
use crate::model::{init_params, ModelConfig, ModelParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplier applied when validation loss plateaus.
    pub lr_decay: f64,
    /// Validation epochs without improvement before decaying.
    pub lr_patience: usize,
    pub min_lr: f64,
    /// Epochs without a new best before stopping; `None` disables.
    pub early_stopping: Option<usize>,
    /// Seeds mini-batch shuffling.
    pub seed: u64,
    /// Where the best checkpoint is written as it improves.
    #[serde(skip)]
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            epochs: 200,
            batch_size: 32,
            lr: 1e-3,
            lr_decay: 0.5,
            lr_patience: 10,
            min_lr: 1e-6,
            early_stopping: Some(40),
            seed: 0,
            checkpoint_path: None,
        }
    }
}

impl Schedule {
    pub fn finetune() -> Self {
        Schedule { lr: 1e-4, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config("lr must be positive and lr_decay in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Starting weights for a training run.
#[derive(Clone, Copy, Debug)]
pub enum ModelInit<'a> {
    Scratch { config: &'a ModelConfig, seed: u64 },
    From(&'a Checkpoint),
}

/// State handed to a per-epoch hook.
pub struct EpochContext<'a> {
    pub epoch: usize,
    pub params: &'a ModelParams,
    /// Current training indices into the dataset; the hook may grow them.
    pub train: &'a mut Vec<usize>,
}

/// Short stable label for a dataset: its `pes`/`tag` keys, size and content hash.
pub fn dataset_tag(set: &ClusterSet) -> String {
    let mut h = Fnv64::default();
    for c in &set.clusters {
        h.update(&c.atomic_numbers);
        for p in &c.positions {
            h.update_f64s(p);
        }
        h.update_f64s(&[c.energy.unwrap_or(f64::NAN)]);
        if let Some(f) = &c.forces {
            for v in f {
                h.update_f64s(v);
            }
        }
    }
    let first = set.clusters.first();
    let key = |k: &str| set.tags.get(k).or_else(|| first.and_then(|c| c.tags.get(k))).cloned();
    let mut parts: Vec<String> = [key("pes"), key("tag")].into_iter().flatten().collect();
    parts.push(format!("n{}", set.len()));
    parts.push(h.hex()[..8].to_string());
    parts.join("-")
}

/// Loss of `params` over `clusters`, without gradients.
pub fn evaluate_loss(params: &ModelParams, clusters: &[Cluster], cfg: &LossConfig) -> Result<f64> {
    if clusters.is_empty() {
        return Err(Error::Split("cannot evaluate loss on an empty set".into()));
    }
    let batch = batch_clusters(clusters)?;
    Ok(compute_loss(params, &batch, cfg, false)?.total)
}

fn pick(set: &ClusterSet, idx: &[usize]) -> Result<Vec<Cluster>> {
    idx.iter()
        .map(|&i| {
            set.clusters
                .get(i)
                .cloned()
                .ok_or_else(|| Error::Split(format!("index {i} out of range for {} clusters", set.len())))
        })
        .collect()
}

pub fn train(
    data: &ClusterSet,
    split: &SplitIndices,
    init: ModelInit<'_>,
    loss: &LossConfig,
    schedule: &Schedule,
) -> Result<Checkpoint> {
    train_with_hook(data, split, init, loss, schedule, &mut |_| Ok(()))
}

/// Mini-batch Adam training with best-validation checkpointing.
///
/// History row 0 holds the losses of the initial weights. The returned
/// checkpoint carries the weights with the lowest validation loss. `hook`
/// runs after every epoch and may enlarge the training index set.
pub fn train_with_hook(
    data: &ClusterSet,
    split: &SplitIndices,
    init: ModelInit<'_>,
    loss: &LossConfig,
    schedule: &Schedule,
    hook: &mut dyn FnMut(EpochContext<'_>) -> Result<()>,
) -> Result<Checkpoint> {
    loss.validate()?;
    schedule.validate()?;
    if split.train.is_empty() || split.validation.is_empty() {
        return Err(Error::Split("training and validation partitions must be non-empty".into()));
    }
    let mut train_idx = split.train.clone();
    let val = pick(data, &split.validation)?;

    let (mut params, provenance, seed) = match init {
        ModelInit::Scratch { config, seed } => {
            let mut p = init_params(config, seed)?;
            if let Some(e) = data.subset(&train_idx).mean_energy_per_atom() {
                p.set_element_offsets(e);
            }
            (p, Provenance::Scratch, seed)
        }
        ModelInit::From(parent) => (parent.params.clone(), parent.child_provenance(), parent.seed),
    };
    let elements = data.elements();
    if !params.config.covers(&elements) {
        return Err(Error::Config(format!(
            "model vocabulary {:?} does not cover dataset elements {elements:?}",
            params.config.element_vocabulary
        )));
    }

    let mut opt = OptimizerState::new(params.len(), schedule.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut history = vec![EpochRecord {
        epoch: 0,
        train_loss: evaluate_loss(&params, &pick(data, &train_idx)?, loss)?,
        val_loss: evaluate_loss(&params, &val, loss)?,
        lr: opt.lr,
    }];
    let snapshot = |params: &ModelParams, opt: &OptimizerState, history: &[EpochRecord], n_train: usize| Checkpoint {
        params: params.clone(),
        optimizer: Some(opt.clone()),
        history: history.to_vec(),
        provenance: provenance.clone(),
        dataset_tag: dataset_tag(data),
        seed,
        n_train,
    };
    let mut best_val = history[0].val_loss;
    let mut best = snapshot(&params, &opt, &history, train_idx.len());
    let mut since_best = 0;
    let mut plateau = 0;

    for epoch in 1..=schedule.epochs {
        let diverged = |e: Error| match e {
            Error::NonFinite(msg) => Error::Divergence { epoch, msg },
            other => other,
        };
        let mut order = train_idx.clone();
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        for chunk in order.chunks(schedule.batch_size) {
            let batch = batch_clusters(&pick(data, chunk)?)?;
            let out = compute_loss(&params, &batch, loss, true).map_err(diverged)?;
            adam_step(&mut opt, &mut params.values, out.grad.as_ref().expect("requested")).map_err(diverged)?;
            weighted += out.total * chunk.len() as f64;
        }
        let val_loss = evaluate_loss(&params, &val, loss).map_err(diverged)?;
        history.push(EpochRecord { epoch, train_loss: weighted / order.len() as f64, val_loss, lr: opt.lr });

        if val_loss < best_val {
            best_val = val_loss;
            best = snapshot(&params, &opt, &history, train_idx.len());
            if let Some(path) = &schedule.checkpoint_path {
                save_checkpoint(&best, path)?;
            }
            since_best = 0;
            plateau = 0;
        } else {
            since_best += 1;
            plateau += 1;
            if plateau >= schedule.lr_patience {
                opt.lr = (opt.lr * schedule.lr_decay).max(schedule.min_lr);
                plateau = 0;
            }
        }

        hook(EpochContext { epoch, params: &params, train: &mut train_idx })?;
        if schedule.early_stopping.is_some_and(|p| since_best >= p) {
            break;
        }
    }
    best.history = history;
    if let Some(path) = &schedule.checkpoint_path {
        save_checkpoint(&best, path)?;
    }
    Ok(best)
}

/// Warm-started training from `parent` with a fresh optimizer.
pub fn finetune(
    parent: &Checkpoint,
    data: &ClusterSet,
    split: &SplitIndices,
    loss: &LossConfig,
    schedule: &Schedule,
) -> Result<Checkpoint> {
    train(data, split, ModelInit::From(parent), loss, schedule)
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,lr\n");
    for r in history {
        s.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, r.val_loss, r.lr));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chemdata::split_dataset;
    use crate::model::energy_and_forces;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            n_atom_features: 6,
            n_interactions: 1,
            n_rbf: 5,
            cutoff: 4.0,
            rbf_width: 0.8,
            readout_hidden: 4,
            element_vocabulary: vec![1, 8],
            energy_offset: 0.0,
        }
    }

    /// Waters with jittered geometry and a smooth synthetic energy.
    fn toy_set(n: usize) -> ClusterSet {
        let mut out = Vec::new();
        for k in 0..n {
            let s = k as f64 * 0.37;
            let pos = vec![
                [0.0, 0.0, 0.0],
                [0.95 + 0.05 * s.sin(), 0.0, 0.0],
                [-0.24, 0.92 + 0.04 * (2.0 * s).cos(), 0.0],
                [2.8 + 0.2 * s.cos(), 0.1, 0.3 * s.sin()],
                [3.3, 0.8, 0.1],
                [3.1, -0.7, 0.4],
            ];
            let e = -5.0 + (pos[3][0] - 2.9).powi(2) + 0.5 * pos[3][2];
            out.push(Cluster::new(vec![8, 1, 1, 8, 1, 1], pos).unwrap().with_energy(e));
        }
        ClusterSet::new(out)
    }

    fn quick() -> Schedule {
        Schedule { epochs: 4, batch_size: 4, lr: 1e-2, seed: 3, ..Schedule::default() }
    }

    #[test]
    fn identical_seeds_identical_history() {
        let data = toy_set(20);
        let split = split_dataset(20, (0.6, 0.2, 0.2), 1).unwrap();
        let cfg = tiny_config();
        let run = || train(&data, &split, ModelInit::Scratch { config: &cfg, seed: 9 }, &LossConfig::energy_only(), &quick()).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.history, b.history);
        assert_eq!(a.params.values, b.params.values);
        assert_eq!(a.history.len(), 5);
        assert!(a.history.last().unwrap().val_loss < a.history[0].val_loss);
    }

    #[test]
    fn warm_start_epoch_zero_matches_parent() {
        let data = toy_set(20);
        let split = split_dataset(20, (0.6, 0.2, 0.2), 1).unwrap();
        let cfg = tiny_config();
        let parent = train(&data, &split, ModelInit::Scratch { config: &cfg, seed: 9 }, &LossConfig::energy_only(), &quick()).unwrap();
        let split2 = split_dataset(20, (0.5, 0.3, 0.2), 2).unwrap();
        let zero = Schedule { epochs: 0, ..quick() };
        let child = finetune(&parent, &data, &split2, &LossConfig::energy_only(), &zero).unwrap();
        assert_eq!(child.params.values, parent.params.values);
        let expect = evaluate_loss(&parent.params, &pick(&data, &split2.validation).unwrap(), &LossConfig::energy_only()).unwrap();
        assert_eq!(child.history[0].val_loss, expect);
        assert_eq!(child.provenance.chain_len(), parent.provenance.chain_len() + 1);
        assert_eq!(child.provenance.parent(), Some(parent.id().as_str()));
    }

    #[test]
    fn vocabulary_mismatch_rejected() {
        let mut data = toy_set(10);
        data.clusters[0].atomic_numbers[1] = 6;
        let split = split_dataset(10, (0.6, 0.2, 0.2), 1).unwrap();
        let cfg = tiny_config();
        let r = train(&data, &split, ModelInit::Scratch { config: &cfg, seed: 1 }, &LossConfig::energy_only(), &quick());
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn force_training_reduces_loss() {
        let teacher = init_params(&tiny_config(), 77).unwrap();
        let mut data = toy_set(12);
        for c in &mut data.clusters {
            let (e, f) = energy_and_forces(&teacher, &c.atomic_numbers, &c.positions).unwrap();
            c.energy = Some(e);
            c.forces = Some(f);
        }
        let split = split_dataset(12, (0.5, 0.25, 0.25), 4).unwrap();
        let cfg = tiny_config();
        let ck = train(&data, &split, ModelInit::Scratch { config: &cfg, seed: 2 }, &LossConfig::with_forces(), &quick()).unwrap();
        assert!(ck.history.iter().skip(1).any(|r| r.val_loss < ck.history[0].val_loss));
        assert!(history_csv(&ck.history).starts_with("epoch,train_loss,val_loss,lr\n0,"));
    }
}
