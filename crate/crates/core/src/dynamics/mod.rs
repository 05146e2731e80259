//! Velocity Verlet molecular dynamics with an optional Berendsen thermostat.
//!
//! Units: Å, fs, amu, kcal/mol, K.

mod io;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chemdata::{atomic_mass, Cluster, Vec3};
use crate::error::{Error, Result};
use crate::model::{energy_and_forces, ModelParams};
use crate::surrogate::Surrogate;
use crate::training::Checkpoint;

pub use io::{trajectory_xyz, validation_csv, TrajectorySidecar};

/// (kcal/mol/Å)/amu → Å/fs².
pub const ACCEL_CONVERSION: f64 = 4.184e-4;
/// kcal/mol/K
pub const BOLTZMANN: f64 = 0.0019872041;

/// Anything that yields energy (kcal/mol) and forces (kcal/mol/Å).
pub trait ForceProvider: Sync {
    fn energy_forces(&self, atomic_numbers: &[u8], positions: &[Vec3]) -> Result<(f64, Vec<Vec3>)>;
    fn describe(&self) -> String;
}

impl ForceProvider for ModelParams {
    fn energy_forces(&self, z: &[u8], x: &[Vec3]) -> Result<(f64, Vec<Vec3>)> {
        energy_and_forces(self, z, x)
    }
    fn describe(&self) -> String {
        "nnp".into()
    }
}

impl ForceProvider for Checkpoint {
    fn energy_forces(&self, z: &[u8], x: &[Vec3]) -> Result<(f64, Vec<Vec3>)> {
        energy_and_forces(&self.params, z, x)
    }
    fn describe(&self) -> String {
        format!("nnp:{}", self.id())
    }
}

impl ForceProvider for Surrogate {
    fn energy_forces(&self, z: &[u8], x: &[Vec3]) -> Result<(f64, Vec<Vec3>)> {
        self.energy_forces(&Cluster::new(z.to_vec(), x.to_vec())?)
    }
    fn describe(&self) -> String {
        format!("surrogate:{}", self.pes.label())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ensemble {
    #[serde(rename = "NVT")]
    Nvt,
    #[serde(rename = "NVE")]
    Nve,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MDConfig {
    /// fs
    pub dt: f64,
    pub n_steps: usize,
    /// K
    pub temperature: f64,
    /// Berendsen coupling time, fs.
    pub tau: f64,
    pub mode: Ensemble,
    pub seed: u64,
    pub snapshot_stride: usize,
    /// Per-atom force norm beyond which a run is truncated (kcal/mol/Å).
    pub max_force: f64,
}

impl Default for MDConfig {
    fn default() -> Self {
        MDConfig {
            dt: 0.25,
            n_steps: 10_000,
            temperature: 300.0,
            tau: 50.0,
            mode: Ensemble::Nvt,
            seed: 0,
            snapshot_stride: 10,
            max_force: 1000.0,
        }
    }
}

impl MDConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || self.n_steps == 0 || self.snapshot_stride == 0 {
            return Err(Error::Config("dt must be positive; n_steps and snapshot_stride at least 1".into()));
        }
        if self.mode == Ensemble::Nvt && !(self.tau >= self.dt) {
            return Err(Error::Config("NVT needs tau ≥ dt".into()));
        }
        if !(self.temperature >= 0.0) || !(self.max_force > 0.0) {
            return Err(Error::Config("temperature must be ≥ 0 and max_force positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MDState {
    pub positions: Vec<Vec3>,
    /// Å/fs
    pub velocities: Vec<Vec3>,
    /// amu
    pub masses: Vec<f64>,
    pub step: usize,
    pub temperature: f64,
    pub potential_energy: f64,
    pub forces: Vec<Vec3>,
}

impl MDState {
    /// Evaluates initial forces at `positions`.
    pub fn new(
        provider: &dyn ForceProvider,
        atomic_numbers: &[u8],
        positions: Vec<Vec3>,
        velocities: Vec<Vec3>,
        masses: Vec<f64>,
    ) -> Result<Self> {
        if positions.len() != velocities.len() || positions.len() != masses.len() || positions.is_empty() {
            return Err(Error::Shape("positions, velocities and masses must have equal, non-zero length".into()));
        }
        if masses.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::Config("masses must be positive".into()));
        }
        let (potential_energy, forces) = provider.energy_forces(atomic_numbers, &positions)?;
        let temperature = kinetic_temperature(&velocities, &masses);
        Ok(MDState { positions, velocities, masses, step: 0, temperature, potential_energy, forces })
    }

    pub fn kinetic_energy(&self) -> f64 {
        kinetic_energy(&self.velocities, &self.masses)
    }

    pub fn total_energy(&self) -> f64 {
        self.potential_energy + self.kinetic_energy()
    }
}

/// kcal/mol
pub fn kinetic_energy(velocities: &[Vec3], masses: &[f64]) -> f64 {
    let mv2: f64 = velocities.iter().zip(masses).map(|(v, m)| m * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2])).sum();
    0.5 * mv2 / ACCEL_CONVERSION
}

/// `2·KE/(k_B·(3N − 3))`; zero when there are no internal degrees of freedom.
pub fn kinetic_temperature(velocities: &[Vec3], masses: &[f64]) -> f64 {
    let dof = 3 * velocities.len() as isize - 3;
    if dof <= 0 {
        return 0.0;
    }
    2.0 * kinetic_energy(velocities, masses) / (BOLTZMANN * dof as f64)
}

/// Maxwell–Boltzmann draw at `t0`, zero net momentum, rescaled to exactly `t0`.
pub fn init_velocities(masses: &[f64], t0: f64, seed: u64) -> Vec<Vec3> {
    let mut v = vec![[0.0; 3]; masses.len()];
    if t0 <= 0.0 || masses.len() < 2 {
        return v;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (vi, &m) in v.iter_mut().zip(masses) {
        let s = (BOLTZMANN * t0 * ACCEL_CONVERSION / m).sqrt();
        for x in vi.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x = s * z;
        }
    }
    let total_m: f64 = masses.iter().sum();
    for k in 0..3 {
        let p: f64 = v.iter().zip(masses).map(|(vi, m)| m * vi[k]).sum();
        for vi in v.iter_mut() {
            vi[k] -= p / total_m;
        }
    }
    let t = kinetic_temperature(&v, masses);
    if t > 0.0 {
        let f = (t0 / t).sqrt();
        v.iter_mut().flatten().for_each(|x| *x *= f);
    }
    v
}

/// Berendsen factor `√(1 + dt/τ·(T₀/T − 1))`, clamped to [0.9, 1.1].
pub fn berendsen_scale(t_inst: f64, t0: f64, dt: f64, tau: f64) -> f64 {
    if t_inst <= 0.0 {
        return if t0 > 0.0 { 1.1 } else { 1.0 };
    }
    let arg = 1.0 + dt / tau * (t0 / t_inst - 1.0);
    arg.max(0.0).sqrt().clamp(0.9, 1.1)
}

/// Half-kick, drift, force re-evaluation, half-kick.
///
/// Errors with `NonFinite` when the new forces are not finite; the state is
/// then left at the drifted positions for inspection.
pub fn verlet_step(state: &mut MDState, provider: &dyn ForceProvider, atomic_numbers: &[u8], dt: f64) -> Result<()> {
    let half = 0.5 * dt * ACCEL_CONVERSION;
    for i in 0..state.positions.len() {
        let m = state.masses[i];
        for k in 0..3 {
            state.velocities[i][k] += half * state.forces[i][k] / m;
            state.positions[i][k] += dt * state.velocities[i][k];
        }
    }
    let (e, f) = provider.energy_forces(atomic_numbers, &state.positions)?;
    if !e.is_finite() || f.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("forces at step {}", state.step + 1)));
    }
    for i in 0..state.positions.len() {
        let m = state.masses[i];
        for k in 0..3 {
            state.velocities[i][k] += half * f[i][k] / m;
        }
    }
    state.forces = f;
    state.potential_energy = e;
    state.step += 1;
    state.temperature = kinetic_temperature(&state.velocities, &state.masses);
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub step: usize,
    pub positions: Vec<Vec3>,
    /// Provider energy, kcal/mol.
    pub energy: f64,
    pub forces: Vec<Vec3>,
    pub temperature: f64,
    pub kinetic_energy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Unstable { step: usize, reason: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub atomic_numbers: Vec<u8>,
    pub frames: Vec<Frame>,
    pub config: MDConfig,
    pub provenance: String,
    pub status: RunStatus,
}

impl Trajectory {
    pub fn is_truncated(&self) -> bool {
        matches!(self.status, RunStatus::Unstable { .. })
    }

    pub fn total_energies(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.energy + f.kinetic_energy).collect()
    }
}

fn snapshot(s: &MDState) -> Frame {
    Frame {
        step: s.step,
        positions: s.positions.clone(),
        energy: s.potential_energy,
        forces: s.forces.clone(),
        temperature: s.temperature,
        kinetic_energy: s.kinetic_energy(),
    }
}

/// Integrates from a prepared state. Frames are taken every
/// `snapshot_stride` steps, starting with the initial state.
pub fn run_md_from_state(
    provider: &dyn ForceProvider,
    atomic_numbers: &[u8],
    mut state: MDState,
    cfg: &MDConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    let mut frames = vec![snapshot(&state)];
    let mut status = RunStatus::Completed;
    let too_big = |f: &[Vec3]| f.iter().any(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() > cfg.max_force);
    if too_big(&state.forces) {
        status = RunStatus::Unstable { step: 0, reason: "initial force exceeds bound".into() };
    }
    while status == RunStatus::Completed && state.step < cfg.n_steps {
        match verlet_step(&mut state, provider, atomic_numbers, cfg.dt) {
            Ok(()) => {}
            Err(Error::NonFinite(msg)) => {
                status = RunStatus::Unstable { step: state.step + 1, reason: msg };
                break;
            }
            Err(e) => return Err(e),
        }
        if too_big(&state.forces) {
            status = RunStatus::Unstable { step: state.step, reason: format!("force exceeds {} kcal/mol/Å", cfg.max_force) };
            break;
        }
        if cfg.mode == Ensemble::Nvt {
            let lambda = berendsen_scale(state.temperature, cfg.temperature, cfg.dt, cfg.tau);
            state.velocities.iter_mut().flatten().for_each(|v| *v *= lambda);
            state.temperature = kinetic_temperature(&state.velocities, &state.masses);
        }
        if state.step.is_multiple_of(cfg.snapshot_stride) {
            frames.push(snapshot(&state));
        }
    }
    Ok(Trajectory {
        atomic_numbers: atomic_numbers.to_vec(),
        frames,
        config: cfg.clone(),
        provenance: provider.describe(),
        status,
    })
}

/// Full run: velocities drawn at `cfg.temperature` with `cfg.seed`.
pub fn run_md(provider: &dyn ForceProvider, cluster: &Cluster, cfg: &MDConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let masses = cluster.masses()?;
    let v = init_velocities(&masses, cfg.temperature, cfg.seed);
    let state = MDState::new(provider, &cluster.atomic_numbers, cluster.positions.clone(), v, masses)?;
    run_md_from_state(provider, &cluster.atomic_numbers, state, cfg)
}

/// One run per seed, gathered in seed order.
pub fn run_ensemble(provider: &dyn ForceProvider, cluster: &Cluster, cfg: &MDConfig, seeds: &[u64]) -> Result<Vec<Trajectory>> {
    seeds
        .par_iter()
        .map(|&seed| run_md(provider, cluster, &MDConfig { seed, ..cfg.clone() }))
        .collect()
}

/// Relative change of the block-averaged total energy between the first and
/// last tenth of a trajectory; insensitive to the bounded oscillation
/// Verlet superimposes on the conserved energy.
pub fn energy_drift(total_energies: &[f64]) -> f64 {
    let n = total_energies.len();
    if n < 2 {
        return 0.0;
    }
    let w = (n / 10).max(1);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let (a, b) = (mean(&total_energies[..w]), mean(&total_energies[n - w..]));
    (b - a).abs() / a.abs().max(f64::MIN_POSITIVE)
}

/// Largest `|E(t) − E(0)|/|E(0)|` over a trajectory.
pub fn max_energy_deviation(total_energies: &[f64]) -> f64 {
    let e0 = total_energies.first().copied().unwrap_or(0.0);
    total_energies.iter().map(|e| (e - e0).abs()).fold(0.0, f64::max) / e0.abs().max(f64::MIN_POSITIVE)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Valid,
    Invalid,
    Unstable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryValidation {
    pub steps: Vec<usize>,
    pub e_provider: Vec<f64>,
    pub e_reference: Vec<f64>,
    pub verdict: Verdict,
}

/// Re-scores every frame with `reference`. Valid iff the run completed and
/// every frame is bound (reference E < 0).
pub fn validate_trajectory(traj: &Trajectory, reference: &dyn ForceProvider) -> Result<TrajectoryValidation> {
    let e_reference = traj
        .frames
        .par_iter()
        .map(|f| Ok(reference.energy_forces(&traj.atomic_numbers, &f.positions)?.0))
        .collect::<Result<Vec<f64>>>()?;
    let verdict = if traj.is_truncated() {
        Verdict::Unstable
    } else if !e_reference.is_empty() && e_reference.iter().all(|&e| e < 0.0) {
        Verdict::Valid
    } else {
        Verdict::Invalid
    };
    Ok(TrajectoryValidation {
        steps: traj.frames.iter().map(|f| f.step).collect(),
        e_provider: traj.frames.iter().map(|f| f.energy).collect(),
        e_reference,
        verdict,
    })
}

/// Masses for atomic numbers, from the element table.
pub fn masses_of(atomic_numbers: &[u8]) -> Result<Vec<f64>> {
    atomic_numbers.iter().map(|&z| atomic_mass(z).ok_or(Error::UnknownElement(z))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn acceleration_constant_by_hand() {
        // 1 kcal/mol = 4184 J / 6.02214076e23; 1 amu = 1.66053907e-27 kg; 1 Å/fs² = 1e20 m/s²
        let joule_per_kcal_mol = 4184.0 / 6.022_140_76e23;
        let a = joule_per_kcal_mol / 1e-10 / 1.660_539_07e-27 / 1e20;
        assert!((a - ACCEL_CONVERSION).abs() / a < 1e-4, "{a}");
    }

    #[test]
    fn berendsen_examples() {
        assert_eq!(berendsen_scale(300.0, 300.0, 0.25, 50.0), 1.0);
        assert_eq!(berendsen_scale(150.0, 300.0, 1.0, 2.0), 1.1);
        assert!((berendsen_scale(280.0, 300.0, 0.25, 1e12) - 1.0).abs() < 1e-12);
        assert_eq!(berendsen_scale(1e6, 300.0, 1.0, 1.0), 0.9);
    }

    #[test]
    fn temperature_basics() {
        let m = vec![15.999, 1.008, 1.008];
        assert_eq!(kinetic_temperature(&[[0.0; 3]; 3], &m), 0.0);
        let v = vec![[0.001, 0.0, 0.0], [0.0, 0.01, 0.0], [0.0, -0.01, 0.002]];
        let t = kinetic_temperature(&v, &m);
        let v2: Vec<Vec3> = v.iter().map(|x| [2.0 * x[0], 2.0 * x[1], 2.0 * x[2]]).collect();
        assert!((kinetic_temperature(&v2, &m) - 4.0 * t).abs() < 1e-9 * t);
        // by hand: Σ m v² = 15.999e-6 + 1.008e-4 + 1.008·1.04e-4 = 2.21631e-4 amu Å²/fs²
        let ke = 0.5 * 2.216_31e-4 / 4.184e-4;
        let expect = 2.0 * ke / (0.0019872041 * 6.0);
        assert!((t - expect).abs() < 1e-9, "{t} vs {expect}");
    }

    #[test]
    fn init_velocity_contract() {
        let m = vec![15.999, 1.008, 1.008, 15.999, 1.008, 1.008];
        assert!(init_velocities(&m, 0.0, 1).iter().flatten().all(|&x| x == 0.0));
        let v = init_velocities(&m, 300.0, 42);
        assert!((kinetic_temperature(&v, &m) - 300.0).abs() < 1e-9);
        for k in 0..3 {
            let p: f64 = v.iter().zip(&m).map(|(vi, mi)| vi[k] * mi).sum();
            assert!(p.abs() < 1e-12);
        }
        assert_eq!(v, init_velocities(&m, 300.0, 42));
    }

    #[test]
    fn drift_ignores_oscillation() {
        let e: Vec<f64> = (0..1000).map(|i| -10.0 + 1e-3 * (i as f64 * 0.7).sin()).collect();
        assert!(energy_drift(&e) < 1e-5);
        assert!(max_energy_deviation(&e) > 5e-5);
    }
}
