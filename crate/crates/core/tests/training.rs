mod common;

use common::*;
use nnpforge::chemdata::{batch_clusters, Cluster, ClusterSet, SplitIndices};
use nnpforge::model::{energy_and_forces, ModelConfig};
use nnpforge::surrogate::{generate_minima, surface_energy_forces, MinimaConfig, Pes, SurrogateSpec};
use nnpforge::training::*;
use proptest::prelude::*;

fn labeled(seed: u64) -> Cluster {
    let c = small_cluster(seed);
    let (e, f) = surface_energy_forces(&SurrogateSpec::default(), Pes::A, &c).unwrap();
    c.with_energy(e).with_forces(f).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn loss_is_non_negative_and_zero_on_own_predictions(seed in any::<u64>(), we in 0.0f64..1.0, mae in any::<bool>()) {
        let p = small_model(seed);
        let cfg = LossConfig {
            energy_weight: we,
            force_weight: 1.0 - we,
            energy_loss: if mae { EnergyLoss::Mae } else { EnergyLoss::Mse },
            ..LossConfig::energy_only()
        };
        let cs = vec![labeled(seed), labeled(seed.wrapping_add(1))];
        let l = compute_loss(&p, &batch_clusters(&cs).unwrap(), &cfg, false).unwrap();
        prop_assert!(l.total >= 0.0);
        let own: Vec<Cluster> = cs
            .iter()
            .map(|c| {
                let (e, f) = energy_and_forces(&p, &c.atomic_numbers, &c.positions).unwrap();
                c.clone().with_energy(e).with_forces(f).unwrap()
            })
            .collect();
        let l0 = compute_loss(&p, &batch_clusters(&own).unwrap(), &cfg, false).unwrap();
        prop_assert_eq!(l0.total, 0.0);
    }
}

#[test]
fn first_adam_step_has_learning_rate_magnitude() {
    let mut st = OptimizerState::new(3, 0.01);
    let mut x = vec![1.0, 2.0, 3.0];
    adam_step(&mut st, &mut x, &[0.5, -2.0, 1e-3]).unwrap();
    // bias-corrected moments give −lr·g/(|g| + ε) on the first step
    let expect = [1.0 - 0.01 * 0.5 / (0.5 + 1e-8), 2.0 + 0.01 * 2.0 / (2.0 + 1e-8), 3.0 - 0.01 * 1e-3 / (1e-3 + 1e-8)];
    for (a, b) in x.iter().zip(expect) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn one_small_step_reduces_single_sample_loss() {
    for seed in 0..5 {
        let mut p = small_model(seed);
        let batch = batch_clusters(&[labeled(40 + seed)]).unwrap();
        let cfg = LossConfig::with_forces();
        let before = compute_loss(&p, &batch, &cfg, true).unwrap();
        let mut st = OptimizerState::new(p.len(), 1e-5);
        adam_step(&mut st, &mut p.values, &before.grad.unwrap()).unwrap();
        let after = compute_loss(&p, &batch, &cfg, false).unwrap();
        assert!(after.total < before.total, "seed {seed}: {} -> {}", before.total, after.total);
    }
}

#[test]
fn overfits_ten_clusters() {
    let spec = SurrogateSpec::default();
    let data = generate_minima(&spec, &MinimaConfig { sizes: vec![3, 4, 5], count: 10, seed: 21, ..Default::default() }).unwrap();
    assert_eq!(data.len(), 10);
    let all: Vec<usize> = (0..10).collect();
    let split = SplitIndices { train: all.clone(), validation: all, test: vec![], seed: None };
    let config = ModelConfig { n_atom_features: 16, n_interactions: 2, n_rbf: 12, readout_hidden: 16, ..ModelConfig::default() };
    let schedule = Schedule { epochs: 2000, batch_size: 10, lr: 1e-3, lr_patience: 50, early_stopping: None, seed: 5, ..Schedule::default() };
    let ck = train(&data, &split, ModelInit::Scratch { config: &config, seed: 5 }, &LossConfig::energy_only(), &schedule).unwrap();
    let mae = mae_per_cluster(&ck, &data);
    assert!(mae < 0.01, "train energy MAE {mae} kcal/mol per cluster");
}

fn mae_per_cluster(ck: &Checkpoint, data: &ClusterSet) -> f64 {
    data.clusters
        .iter()
        .map(|c| (energy_and_forces(&ck.params, &c.atomic_numbers, &c.positions).unwrap().0 - c.energy.unwrap()).abs())
        .sum::<f64>()
        / data.len() as f64
}

#[test]
fn scratch_and_finetune_differ_only_in_initialization() {
    let spec = SurrogateSpec::default();
    let data = generate_minima(&spec, &MinimaConfig { sizes: vec![3, 4], count: 12, seed: 2, ..Default::default() }).unwrap();
    let split = nnpforge::chemdata::split_dataset(data.len(), (0.5, 0.25, 0.25), 1).unwrap();
    let config = ModelConfig { n_atom_features: 8, n_interactions: 1, n_rbf: 6, readout_hidden: 4, ..ModelConfig::default() };
    let schedule = Schedule { epochs: 3, seed: 9, ..Schedule::default() };
    let parent = train(&data, &split, ModelInit::Scratch { config: &config, seed: 1 }, &LossConfig::energy_only(), &schedule).unwrap();
    let a = finetune(&parent, &data, &split, &LossConfig::energy_only(), &schedule).unwrap();
    let b = train(&data, &split, ModelInit::Scratch { config: &config, seed: 1 }, &LossConfig::energy_only(), &schedule).unwrap();
    assert_eq!(a.dataset_tag, b.dataset_tag);
    assert_eq!(a.seed, b.seed);
    assert_eq!(a.history.len(), b.history.len());
    assert_ne!(a.provenance, b.provenance);
    assert_eq!(a.provenance.parent(), Some(parent.id()).as_deref());
}
