use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chemdata::{Batch, Vec3};
use crate::error::{Error, Result};
use crate::model::{backward_cluster, forward_cluster, species_of, sum_in_order, ModelParams};
use crate::scalar::Dual;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyLoss {
    Mse,
    Mae,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyNormalization {
    Cluster,
    PerWater,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub energy_weight: f64,
    pub force_weight: f64,
    pub energy_loss: EnergyLoss,
    pub normalize_energy_by: EnergyNormalization,
}

impl LossConfig {
    /// MSE on total cluster energy, no force term.
    pub fn energy_only() -> Self {
        LossConfig {
            energy_weight: 1.0,
            force_weight: 0.0,
            energy_loss: EnergyLoss::Mse,
            normalize_energy_by: EnergyNormalization::Cluster,
        }
    }

    /// Force-dominated weighting used when finetuning on non-minima.
    pub fn with_forces() -> Self {
        LossConfig { energy_weight: 0.01, force_weight: 0.99, ..Self::energy_only() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.energy_weight >= 0.0 && self.force_weight >= 0.0) || self.energy_weight + self.force_weight <= 0.0 {
            return Err(Error::Config(format!(
                "loss weights must be non-negative with a positive sum (energy {}, force {})",
                self.energy_weight, self.force_weight
            )));
        }
        Ok(())
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::energy_only()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub energy: f64,
    pub force: f64,
    pub predicted_energies: Vec<f64>,
    /// Batch-concatenated; only when the force term is active.
    pub predicted_forces: Option<Vec<Vec3>>,
    pub grad: Option<Vec<f64>>,
}

struct ClusterContribution {
    energy: f64,
    forces: Option<Vec<Vec3>>,
    energy_term: f64,
    force_term: f64,
    grad: Option<Vec<f64>>,
}

/// `L = w_E·L_E + w_F·L_F` over a batch, optionally with `∂L/∂θ`.
///
/// `L_E` is the MSE (or MAE) of per-cluster energies, optionally divided by
/// the water count; `L_F` is the mean squared force component error over
/// every atom in the batch. The force term's parameter gradient is taken
/// through the reverse pass in dual arithmetic.
pub fn compute_loss(params: &ModelParams, batch: &Batch, cfg: &LossConfig, with_grad: bool) -> Result<LossValue> {
    cfg.validate()?;
    let use_forces = cfg.force_weight > 0.0;
    if use_forces && !batch.all_have_forces() {
        return Err(Error::MissingData("force_weight > 0 but the batch lacks force targets".into()));
    }
    if cfg.energy_weight > 0.0 && batch.energies.iter().any(|e| e.is_none()) {
        return Err(Error::MissingData("energy_weight > 0 but a cluster lacks an energy target".into()));
    }
    let species = species_of(params, &batch.atomic_numbers)?;
    let n_clusters = batch.n_clusters() as f64;
    let n_components = 3.0 * batch.n_atoms() as f64;

    let parts: Vec<ClusterContribution> = (0..batch.n_clusters())
        .into_par_iter()
        .map(|k| {
            let r = batch.atoms_of(k);
            let n_atoms = r.len();
            let tape = forward_cluster(params, &species[r.clone()], &batch.positions[r.clone()]);
            let energy = tape.energy;

            let (energy_term, energy_adjoint) = match batch.energies[k] {
                Some(target) if cfg.energy_weight > 0.0 => {
                    let norm = match cfg.normalize_energy_by {
                        EnergyNormalization::Cluster => 1.0,
                        EnergyNormalization::PerWater => (n_atoms / 3).max(1) as f64,
                    };
                    let res = (energy - target) / norm;
                    match cfg.energy_loss {
                        EnergyLoss::Mse => (res * res / n_clusters, 2.0 * res / (norm * n_clusters)),
                        EnergyLoss::Mae => (res.abs() / n_clusters, res.signum() / (norm * n_clusters)),
                    }
                }
                _ => (0.0, 0.0),
            };

            let mut forces = None;
            let mut force_term = 0.0;
            let mut direction = Vec::new();
            if use_forces {
                let mut g = vec![[0.0; 3]; n_atoms];
                backward_cluster(params, &tape, 1.0, None, Some(&mut g));
                let target = &batch.forces.as_ref().expect("checked above")[r.clone()];
                let pred: Vec<Vec3> = g.iter().map(|v| [-v[0], -v[1], -v[2]]).collect();
                direction.reserve(n_atoms);
                for (p, t) in pred.iter().zip(target) {
                    let mut u = [0.0; 3];
                    for ax in 0..3 {
                        let d = p[ax] - t[ax];
                        force_term += d * d / n_components;
                        // dL/d(∇E) = −dL/dF̂
                        u[ax] = -cfg.force_weight * 2.0 * d / n_components;
                    }
                    direction.push(u);
                }
                forces = Some(pred);
            }

            let grad = with_grad.then(|| {
                let mut g = vec![0.0; params.len()];
                if energy_adjoint != 0.0 {
                    backward_cluster(params, &tape, cfg.energy_weight * energy_adjoint, Some(&mut g), None);
                }
                if use_forces {
                    let pos: Vec<[Dual<f64>; 3]> = batch.positions[r.clone()]
                        .iter()
                        .zip(&direction)
                        .map(|(p, u)| [Dual::new(p[0], u[0]), Dual::new(p[1], u[1]), Dual::new(p[2], u[2])])
                        .collect();
                    let dtape = forward_cluster(params, &species[r.clone()], &pos);
                    let mut dg = vec![Dual::<f64>::default(); params.len()];
                    backward_cluster(params, &dtape, Dual::constant(1.0), Some(&mut dg), None);
                    for (a, b) in g.iter_mut().zip(&dg) {
                        *a += b.eps;
                    }
                }
                g
            });

            ClusterContribution { energy, forces, energy_term, force_term, grad }
        })
        .collect();

    let energy: f64 = parts.iter().map(|p| p.energy_term).sum();
    let force: f64 = parts.iter().map(|p| p.force_term).sum();
    let total = cfg.energy_weight * energy + cfg.force_weight * force;
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("loss = {total}")));
    }
    let grad = with_grad.then(|| sum_in_order(params.len(), parts.iter().map(|p| p.grad.as_deref().unwrap())));
    let predicted_forces = use_forces.then(|| parts.iter().flat_map(|p| p.forces.clone().unwrap()).collect());
    Ok(LossValue {
        total,
        energy,
        force,
        predicted_energies: parts.iter().map(|p| p.energy).collect(),
        predicted_forces,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chemdata::{batch_clusters, Cluster};
    use crate::model::{energy_and_forces, init_params, ModelConfig};

    fn cfg() -> ModelConfig {
        ModelConfig {
            n_atom_features: 8,
            n_interactions: 2,
            n_rbf: 6,
            cutoff: 4.0,
            rbf_width: 0.8,
            readout_hidden: 4,
            element_vocabulary: vec![1, 8],
            energy_offset: 0.0,
        }
    }

    fn water_dimer() -> Cluster {
        Cluster::new(
            vec![8, 1, 1, 8, 1, 1],
            vec![
                [0.0, 0.0, 0.0],
                [0.96, 0.0, 0.0],
                [-0.24, 0.93, 0.0],
                [2.9, 0.1, 0.2],
                [3.3, 0.9, 0.1],
                [3.2, -0.7, 0.4],
            ],
        )
        .unwrap()
    }

    #[test]
    fn exact_targets_give_zero_loss() {
        let p = init_params(&cfg(), 1).unwrap();
        let c = water_dimer();
        let (e, f) = energy_and_forces(&p, &c.atomic_numbers, &c.positions).unwrap();
        let c = c.with_energy(e).with_forces(f).unwrap();
        let b = batch_clusters(&[c]).unwrap();
        let l = compute_loss(&p, &b, &LossConfig { energy_weight: 0.5, force_weight: 0.5, ..LossConfig::energy_only() }, false)
            .unwrap();
        assert_eq!(l.total, 0.0);
    }

    #[test]
    fn residual_of_two_gives_four() {
        let p = init_params(&cfg(), 1).unwrap();
        let c = water_dimer();
        let e = energy_and_forces(&p, &c.atomic_numbers, &c.positions).unwrap().0;
        let b = batch_clusters(&[c.with_energy(e - 2.0)]).unwrap();
        let l = compute_loss(&p, &b, &LossConfig::energy_only(), false).unwrap();
        assert!((l.total - 4.0).abs() < 1e-12);
        // force_weight = 0 ignores missing force targets
        assert_eq!(l.force, 0.0);
    }

    #[test]
    fn missing_force_targets_rejected() {
        let p = init_params(&cfg(), 1).unwrap();
        let b = batch_clusters(&[water_dimer().with_energy(-1.0)]).unwrap();
        assert!(matches!(compute_loss(&p, &b, &LossConfig::with_forces(), false), Err(Error::MissingData(_))));
        let bad = LossConfig { energy_weight: 0.0, force_weight: 0.0, ..LossConfig::energy_only() };
        assert!(matches!(compute_loss(&p, &b, &bad, false), Err(Error::Config(_))));
    }

    #[test]
    fn per_water_normalization() {
        let p = init_params(&cfg(), 1).unwrap();
        let c = water_dimer();
        let e = energy_and_forces(&p, &c.atomic_numbers, &c.positions).unwrap().0;
        let b = batch_clusters(&[c.with_energy(e - 2.0)]).unwrap();
        let lc = LossConfig { normalize_energy_by: EnergyNormalization::PerWater, energy_loss: EnergyLoss::Mae, ..LossConfig::energy_only() };
        assert!((compute_loss(&p, &b, &lc, false).unwrap().total - 1.0).abs() < 1e-12);
    }
}
