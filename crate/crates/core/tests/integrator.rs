use nnpforge::chemdata::{Cluster, Vec3};
use nnpforge::dynamics::*;
use nnpforge::surrogate::{generate_minima, MinimaConfig, Pes, Surrogate, SurrogateSpec};
use nnpforge::Result;

/// Two atoms joined by a harmonic spring.
struct Spring {
    k: f64,
    r0: f64,
}

impl ForceProvider for Spring {
    fn energy_forces(&self, _: &[u8], x: &[Vec3]) -> Result<(f64, Vec<Vec3>)> {
        let d = [x[1][0] - x[0][0], x[1][1] - x[0][1], x[1][2] - x[0][2]];
        let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        let f = -self.k * (r - self.r0) / r;
        let f1 = [f * d[0], f * d[1], f * d[2]];
        Ok((0.5 * self.k * (r - self.r0).powi(2), vec![[-f1[0], -f1[1], -f1[2]], f1]))
    }
    fn describe(&self) -> String {
        "spring".into()
    }
}

fn nve(n_steps: usize, dt: f64) -> MDConfig {
    MDConfig { n_steps, dt, mode: Ensemble::Nve, snapshot_stride: 1, ..MDConfig::default() }
}

fn minimum(n: usize) -> Cluster {
    let set = generate_minima(&SurrogateSpec::default(), &MinimaConfig { sizes: vec![n], count: 1, seed: 3, ..Default::default() });
    set.unwrap().clusters.remove(0)
}

fn surface_a() -> Surrogate {
    Surrogate::new(SurrogateSpec::default(), Pes::A).unwrap()
}

#[test]
fn harmonic_oscillator_conserves_energy() {
    let spring = Spring { k: 100.0, r0: 1.0 };
    let masses = vec![1.0, 4.0];
    let mu = masses[0] * masses[1] / (masses[0] + masses[1]);
    let period = 2.0 * std::f64::consts::PI / (spring.k * ACCEL_CONVERSION / mu).sqrt();
    let z = [1, 2];
    let state = MDState::new(&spring, &z, vec![[0.0; 3], [1.1, 0.0, 0.0]], vec![[0.0; 3]; 2], masses).unwrap();
    let traj = run_md_from_state(&spring, &z, state, &nve(10_000, period / 100.0)).unwrap();
    let drift = energy_drift(&traj.total_energies());
    assert!(drift < 1e-6, "drift {drift:e}");
}

#[test]
fn zero_force_moves_by_velocity_times_dt() {
    let free = Spring { k: 0.0, r0: 1.0 };
    let z = [1, 1];
    let mut s = MDState::new(&free, &z, vec![[0.0; 3], [2.0, 0.0, 0.0]], vec![[0.01, -0.02, 0.03], [0.0; 3]], vec![1.0, 1.0]).unwrap();
    verlet_step(&mut s, &free, &z, 0.5).unwrap();
    assert_eq!(s.positions[0], [0.005, -0.01, 0.015]);
}

#[test]
fn time_reversal_recovers_start() {
    let pot = surface_a();
    let c = minimum(3);
    let z = &c.atomic_numbers;
    let masses = c.masses().unwrap();
    let v = init_velocities(&masses, 300.0, 5);
    let mut s = MDState::new(&pot, z, c.positions.clone(), v, masses).unwrap();
    for _ in 0..1000 {
        verlet_step(&mut s, &pot, z, 0.25).unwrap();
    }
    s.velocities.iter_mut().flatten().for_each(|x| *x = -*x);
    for _ in 0..1000 {
        verlet_step(&mut s, &pot, z, 0.25).unwrap();
    }
    let err = s.positions.iter().zip(&c.positions).flat_map(|(a, b)| (0..3).map(move |k| (a[k] - b[k]).abs())).fold(0.0, f64::max);
    assert!(err < 1e-8, "max deviation {err:e}");
}

#[test]
fn surrogate_water_nve_has_no_drift() {
    let pot = surface_a();
    let c = minimum(3);
    let traj = run_md(&pot, &c, &MDConfig { seed: 1, ..nve(10_000, 0.25) }).unwrap();
    assert!(!traj.is_truncated());
    let e = traj.total_energies();
    let drift = energy_drift(&e);
    assert!(drift < 1e-5, "drift {drift:e}, max deviation {:e}", max_energy_deviation(&e));
}

#[test]
fn thermostat_holds_target_temperature() {
    let pot = surface_a();
    let c = minimum(6);
    let traj = run_md(&pot, &c, &MDConfig { seed: 2, snapshot_stride: 1, ..MDConfig::default() }).unwrap();
    let half = &traj.frames[traj.frames.len() / 2..];
    let mean = half.iter().map(|f| f.temperature).sum::<f64>() / half.len() as f64;
    assert!((mean - 300.0).abs() < 15.0, "mean temperature {mean}");
}

#[test]
fn infinite_coupling_time_is_nve() {
    let pot = surface_a();
    let c = minimum(3);
    let base = MDConfig { n_steps: 2000, seed: 4, ..MDConfig::default() };
    let a = run_md(&pot, &c, &MDConfig { mode: Ensemble::Nve, ..base.clone() }).unwrap();
    let b = run_md(&pot, &c, &MDConfig { tau: f64::INFINITY, ..base }).unwrap();
    assert_eq!(a.frames, b.frames);
}

#[test]
fn runs_are_deterministic_per_seed() {
    let pot = surface_a();
    let c = minimum(4);
    let cfg = MDConfig { n_steps: 500, seed: 8, ..MDConfig::default() };
    assert_eq!(run_md(&pot, &c, &cfg).unwrap().frames, run_md(&pot, &c, &cfg).unwrap().frames);
    let other = run_md(&pot, &c, &MDConfig { seed: 9, ..cfg }).unwrap();
    assert_ne!(run_md(&pot, &c, &MDConfig { n_steps: 500, seed: 8, ..MDConfig::default() }).unwrap().frames, other.frames);
}

#[test]
fn force_blowup_truncates_run() {
    let stiff = Spring { k: 1e9, r0: 1.0 };
    let z = [1, 1];
    let state = MDState::new(&stiff, &z, vec![[0.0; 3], [1.0, 0.0, 0.0]], vec![[0.0; 3], [0.5, 0.0, 0.0]], vec![1.0, 1.0]).unwrap();
    let traj = run_md_from_state(&stiff, &z, state, &nve(100, 0.25)).unwrap();
    assert!(traj.is_truncated());
    assert!(matches!(traj.status, RunStatus::Unstable { .. }));
}

#[test]
fn self_validation_reproduces_stored_energies() {
    let pot = surface_a();
    let c = minimum(3);
    let traj = run_md(&pot, &c, &MDConfig { n_steps: 400, ..MDConfig::default() }).unwrap();
    let v = validate_trajectory(&traj, &pot).unwrap();
    for (a, b) in v.e_provider.iter().zip(&v.e_reference) {
        assert!((a - b).abs() < 1e-10);
    }
    assert_eq!(v.verdict, Verdict::Valid);
}

#[test]
fn scattered_frame_is_invalid() {
    let pot = surface_a();
    let c = minimum(3);
    let mut traj = run_md(&pot, &c, &MDConfig { n_steps: 20, ..MDConfig::default() }).unwrap();
    let last = traj.frames.last_mut().unwrap();
    for (i, x) in last.positions.iter_mut().enumerate() {
        x[0] += 100.0 * (i / 3) as f64;
    }
    let v = validate_trajectory(&traj, &pot).unwrap();
    assert!(v.e_reference.last().unwrap().abs() < 1.0);
    assert_eq!(v.verdict, Verdict::Invalid);
}
