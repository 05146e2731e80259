mod common;

use common::*;
use nnpforge::chemdata::{Cluster, ClusterSet, Vec3};
use nnpforge::dynamics::ForceProvider;
use nnpforge::evaluation::*;
use nnpforge::surrogate::{generate_minima, generate_nonminima, MinimaConfig, NonMinimaConfig, Pes, Surrogate, SurrogateSpec};
use nnpforge::Result;
use proptest::prelude::*;
use rand::seq::SliceRandom;

/// Predicts −10 kcal/mol per water and a unit x force on every atom.
struct Fixed;

impl ForceProvider for Fixed {
    fn energy_forces(&self, z: &[u8], _: &[Vec3]) -> Result<(f64, Vec<Vec3>)> {
        Ok((-10.0 * (z.len() / 3) as f64, vec![[1.0, 0.0, 0.0]; z.len()]))
    }
    fn describe(&self) -> String {
        "fixed".into()
    }
}

fn labeled(n_waters: usize, energy: f64, force: Vec3) -> Cluster {
    let mut r = rng(n_waters as u64);
    let c = random_waters(n_waters, 3.0, 2.6, &mut r);
    let n = c.n_atoms();
    c.with_energy(energy).with_forces(vec![force; n]).unwrap()
}

#[test]
fn three_cluster_report_by_hand() {
    let test = ClusterSet::new(vec![
        labeled(1, -9.5, [1.0, 0.0, 0.0]),
        labeled(2, -21.0, [0.0, 2.0, 0.0]),
        labeled(3, -27.0, [-3.0, 0.0, 0.0]),
    ]);
    let r = evaluate_model(&Fixed, &test, "hand").unwrap();
    let close = |a: f64, b: f64| assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    // per-water errors 0.5, 0.5, 1.0
    close(r.e_h2o_mae, 2.0 / 3.0);
    close(r.e_h2o_rmse, 0.5f64.sqrt());
    let f = r.forces.unwrap();
    // per atom: magnitude errors 0 (×3), −1 (×6), −2 (×9); angles 0, ½, 1
    close(f.f_mag_mean, 4.0 / 3.0);
    close(f.f_mag_bias, -4.0 / 3.0);
    close(f.f_mag_median, 1.5);
    close(f.f_ang_mean, 2.0 / 3.0);
    close(f.f_ang_median, 0.75);
    assert_eq!((f.n_atoms, f.undefined_angle), (18, 0));
    assert_eq!(r.e_h2o_true, vec![-9.5, -10.5, -9.0]);
}

fn thermal_set() -> ClusterSet {
    let spec = SurrogateSpec::default();
    let minima = generate_minima(&spec, &MinimaConfig { sizes: vec![3, 4, 5], count: 12, seed: 8, ..Default::default() }).unwrap();
    generate_nonminima(&spec, Pes::A, &minima, &NonMinimaConfig { steps: 200, frames_per_run: 5, seed: 2, ..Default::default() }).unwrap()
}

#[test]
fn report_matches_brute_force_loop_and_ignores_order() {
    let test = thermal_set();
    assert!(test.len() <= 100);
    let model = small_model(11);
    let r = evaluate_model(&model, &test, "t").unwrap();
    let (mut e, mut m, mut a) = (0.0, 0.0, 0.0);
    let mut n_atoms = 0;
    for c in &test.clusters {
        let (pe, pf) = model.energy_forces(&c.atomic_numbers, &c.positions).unwrap();
        e += e_h2o_error(pe, c.energy.unwrap(), c.n_waters());
        for (p, t) in pf.iter().zip(c.forces.as_ref().unwrap()) {
            m += f_mag_error(p, t).abs();
            a += f_ang_error(p, t).unwrap();
            n_atoms += 1;
        }
    }
    let f = r.forces.as_ref().unwrap();
    assert!((r.e_h2o_mae - e / test.len() as f64).abs() < 1e-12);
    assert!((f.f_mag_mean - m / n_atoms as f64).abs() < 1e-12);
    assert!((f.f_ang_mean - a / n_atoms as f64).abs() < 1e-12);

    let mut shuffled = test.clusters.clone();
    shuffled.shuffle(&mut rng(3));
    let rs = evaluate_model(&model, &ClusterSet::new(shuffled), "t").unwrap();
    let fs = rs.forces.unwrap();
    assert!((rs.e_h2o_mae - r.e_h2o_mae).abs() < 1e-12);
    assert!((fs.f_mag_mean - f.f_mag_mean).abs() < 1e-12);
    assert_eq!(fs.f_mag_median, f.f_mag_median);
    assert_eq!(fs.f_ang_median, f.f_ang_median);
}

#[test]
fn reference_surface_scores_zero_error() {
    let test = thermal_set();
    let r = evaluate_model(&Surrogate::new(SurrogateSpec::default(), Pes::A).unwrap(), &test, "self").unwrap();
    assert!(r.e_h2o_mae < 1e-12);
    assert!(r.forces.unwrap().f_ang_mean < 1e-6);
}

#[test]
fn energy_only_sets_omit_force_metrics() {
    let mut c = labeled(2, -20.0, [0.0; 3]);
    c.forces = None;
    let r = evaluate_model(&Fixed, &ClusterSet::new(vec![c]), "e").unwrap();
    assert!(r.forces.is_none() && !r.notes.is_empty());
    assert!(evaluate_model(&Fixed, &ClusterSet::new(vec![]), "e").is_err());
}

#[test]
fn histogram_counts_every_value_in_range() {
    let vals: Vec<f64> = (0..500).map(|i| -10.0 + 0.013 * i as f64).collect();
    let (lo, hi) = union_range(&[&vals]);
    let h = energy_histogram(&vals, lo, hi, DEFAULT_BINS).unwrap();
    assert_eq!(h.counts.iter().sum::<usize>(), vals.len());
    assert_eq!(h.out_of_range, 0);
    assert_eq!(h.edges.len(), DEFAULT_BINS + 1);
    let shifted: Vec<f64> = vals.iter().map(|v| v + 0.5).collect();
    let (lo2, hi2) = union_range(&[&vals, &shifted]);
    let a = energy_histogram(&vals, lo2, hi2, DEFAULT_BINS).unwrap();
    let b = energy_histogram(&shifted, lo2, hi2, DEFAULT_BINS).unwrap();
    assert!(b.center_of_mass() > a.center_of_mass());
}

fn vec3() -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(-50.0f64..50.0)
}

proptest! {
    #[test]
    fn angle_error_properties(a in vec3(), b in vec3()) {
        prop_assume!(norm(&a) > 1e-9 && norm(&b) > 1e-9);
        let x = f_ang_error(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert_eq!(x, f_ang_error(&b, &a).unwrap());
        prop_assert_eq!(f_ang_error(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(f_ang_error(&a, &[-a[0], -a[1], -a[2]]).unwrap(), 1.0);
    }

    #[test]
    fn parallel_vectors_never_give_nan(a in vec3(), s in 1e-3f64..1e3) {
        prop_assume!(norm(&a) > 1e-9);
        let x = f_ang_error(&a, &[s * a[0], s * a[1], s * a[2]]).unwrap();
        prop_assert!(x.is_finite() && x >= 0.0);
    }

    #[test]
    fn magnitude_error_obeys_triangle_bound(a in vec3(), b in vec3()) {
        let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
        prop_assert!(f_mag_error(&a, &b).abs() <= norm(&d) * (1.0 + 1e-12) + 1e-12);
    }
}
