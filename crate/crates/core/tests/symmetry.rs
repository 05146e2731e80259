mod common;

use common::*;
use nnpforge::chemdata::{Cluster, Vec3};
use nnpforge::dynamics::ForceProvider;
use nnpforge::surrogate::{Pes, Surrogate, SurrogateSpec};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn eval(p: &dyn ForceProvider, c: &Cluster) -> (f64, Vec<Vec3>) {
    p.energy_forces(&c.atomic_numbers, &c.positions).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Checks invariance of E, rotational equivariance of F, and zero net force
/// and torque. `perm` maps new atom index to old.
fn check(p: &dyn ForceProvider, c: &Cluster, perm: &[usize], seed: u64) {
    let mut r = rng(seed);
    let (e, f) = eval(p, c);

    let shift = [0, 1, 2].map(|_| r.random_range(-20.0..20.0));
    let mut t = c.clone();
    t.positions.iter_mut().for_each(|x| (0..3).for_each(|k| x[k] += shift[k]));
    let (et, ft) = eval(p, &t);
    assert!(rel(et, e) < 1e-10, "translation: {et} vs {e}");
    assert!(rel_err(&flat(&ft), &flat(&f)) < 1e-8);

    let rot = random_rotation(&mut r);
    let mut rc = c.clone();
    rc.positions = c.positions.iter().map(|x| rotate(&rot, x)).collect();
    let (er, fr) = eval(p, &rc);
    assert!(rel(er, e) < 1e-10, "rotation: {er} vs {e}");
    let f_rot: Vec<Vec3> = f.iter().map(|v| rotate(&rot, v)).collect();
    assert!(rel_err(&flat(&fr), &flat(&f_rot)) < 1e-8, "force equivariance");

    let pc = Cluster::new(perm.iter().map(|&i| c.atomic_numbers[i]).collect(), perm.iter().map(|&i| c.positions[i]).collect())
        .unwrap();
    let (ep, fp) = eval(p, &pc);
    assert!(rel(ep, e) < 1e-10, "permutation: {ep} vs {e}");
    let f_perm: Vec<Vec3> = perm.iter().map(|&i| f[i]).collect();
    assert!(rel_err(&flat(&fp), &flat(&f_perm)) < 1e-8);

    let scale = f.iter().map(norm).fold(1.0, f64::max);
    let centered: Vec<Vec3> = {
        let g = net_force(&c.positions).map(|s| s / c.n_atoms() as f64);
        c.positions.iter().map(|x| [x[0] - g[0], x[1] - g[1], x[2] - g[2]]).collect()
    };
    assert!(norm(&net_force(&f)) < 1e-8 * scale, "net force {:?}", net_force(&f));
    assert!(norm(&net_torque(&centered, &f)) < 1e-8 * scale, "net torque {:?}", net_torque(&centered, &f));
}

/// Any atom order for the network.
fn atom_permutation(n: usize, r: &mut impl Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(r);
    p
}

/// Molecule order and hydrogen order within molecules, keeping O,H,H layout.
fn water_permutation(n_waters: usize, r: &mut impl Rng) -> Vec<usize> {
    let mut mols: Vec<usize> = (0..n_waters).collect();
    mols.shuffle(r);
    mols.iter()
        .flat_map(|&m| if r.random_bool(0.5) { [3 * m, 3 * m + 2, 3 * m + 1] } else { [3 * m, 3 * m + 1, 3 * m + 2] })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn network_is_invariant(seed in any::<u64>()) {
        let p = small_model(seed);
        let c = small_cluster(seed.wrapping_add(1));
        let perm = atom_permutation(c.n_atoms(), &mut rng(seed));
        check(&p, &c, &perm, seed);
    }

    #[test]
    fn surfaces_are_invariant(seed in any::<u64>(), n in 2usize..7) {
        let mut r = rng(seed);
        // spread wide enough that some molecule pairs sit in the switching range
        let c = random_waters(n, 5.0, 2.6, &mut r);
        let perm = water_permutation(n, &mut r);
        for pes in [Pes::A, Pes::B] {
            check(&Surrogate::new(SurrogateSpec::default(), pes).unwrap(), &c, &perm, seed);
        }
    }
}
