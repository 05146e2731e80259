mod common;

use common::*;
use nnpforge::chemdata::Cluster;
use nnpforge::surrogate::*;

fn water_at(o: [f64; 3], flip: bool) -> Vec<[f64; 3]> {
    let half = 104.52f64.to_radians() / 2.0;
    let (s, c) = (0.9572 * half.sin(), 0.9572 * half.cos());
    let d = if flip { -1.0 } else { 1.0 };
    // hydrogens point along ±x, away from a partner placed on the other side
    vec![o, [o[0] + d * c, o[1] + s, o[2]], [o[0] + d * c, o[1] - s, o[2]]]
}

fn waters(centers: &[([f64; 3], bool)]) -> Cluster {
    let x: Vec<[f64; 3]> = centers.iter().flat_map(|&(o, f)| water_at(o, f)).collect();
    Cluster::new([8, 1, 1].repeat(centers.len()), x).unwrap()
}

/// Fourth-order central difference of E along one coordinate.
fn fd_force(spec: &SurrogateSpec, pes: Pes, c: &Cluster, a: usize, k: usize) -> f64 {
    let h = 1e-3;
    let at = |d: f64| {
        let mut p = c.clone();
        p.positions[a][k] += d;
        surface_energy(spec, pes, &p).unwrap()
    };
    -(-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h)
}

#[test]
fn analytic_forces_match_finite_differences() {
    let spec = SurrogateSpec::default();
    let mut r = rng(42);
    for trial in 0..12 {
        let n = 2 + trial % 5;
        // wide placement so molecule pairs land in the 8–9 Å switching window
        let c = random_waters(n, if trial % 2 == 0 { 2.5 } else { 5.5 }, 2.6, &mut r);
        for pes in [Pes::A, Pes::B] {
            let (_, f) = surface_energy_forces(&spec, pes, &c).unwrap();
            let fd: Vec<f64> = (0..c.n_atoms()).flat_map(|a| (0..3).map(move |k| (a, k))).map(|(a, k)| fd_force(&spec, pes, &c, a, k)).collect();
            let err = rel_err(&flat(&f), &fd);
            assert!(err < 1e-8, "trial {trial} {pes:?}: {err:e}");
        }
    }
}

#[test]
fn switching_window_is_exercised_smoothly() {
    let spec = SurrogateSpec::default();
    for pes in [Pes::A, Pes::B] {
        for r in [7.9, 8.2, 8.5, 8.8, 9.05] {
            let c = waters(&[([0.0; 3], true), ([r, 0.3, -0.2], false)]);
            let (_, f) = surface_energy_forces(&spec, pes, &c).unwrap();
            let fd: Vec<f64> = (0..6).flat_map(|a| (0..3).map(move |k| (a, k))).map(|(a, k)| fd_force(&spec, pes, &c, a, k)).collect();
            let scale = fd.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-6);
            let max = flat(&f).iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(max < 1e-8 * scale.max(1.0), "{pes:?} at {r}: {max:e}");
        }
    }
}

#[test]
fn isolated_equilibrium_water_has_zero_energy() {
    let spec = SurrogateSpec::default();
    let c = waters(&[([1.0, 2.0, 3.0], false)]);
    assert!(surrogate_energy(&spec, &c).unwrap().abs() < 1e-20);
    assert!(pes_b_energy(&spec, &c).unwrap().abs() < 1e-20);
}

#[test]
fn separated_waters_do_not_interact() {
    let spec = SurrogateSpec::default();
    let c = waters(&[([0.0; 3], true), ([100.0, 0.0, 0.0], false)]);
    assert!(surrogate_energy(&spec, &c).unwrap().abs() < 1e-6);
    assert!(pes_b_energy(&spec, &c).unwrap().abs() < 1e-6);
}

#[test]
fn oxygen_lj_minimum() {
    // charges off and a negligible hydrogen site leave only the O–O LJ term
    let spec = SurrogateSpec { q_o: 0.0, q_h: 0.0, lj_h_epsilon: 1e-300, ..SurrogateSpec::default() };
    let r = 2f64.powf(1.0 / 6.0) * spec.lj_o_sigma;
    let c = waters(&[([0.0; 3], true), ([r, 0.0, 0.0], false)]);
    let e = surrogate_energy(&spec, &c).unwrap();
    assert!((e + spec.lj_o_epsilon).abs() < 1e-12, "{e}");
}

#[test]
fn surface_b_shifts_minima_upward() {
    let spec = SurrogateSpec::default();
    let minima = generate_minima(&spec, &MinimaConfig { sizes: vec![3, 4, 5], count: 30, seed: 9, ..Default::default() }).unwrap();
    let mut shift = 0.0;
    for c in &minima.clusters {
        let (ea, eb) = (surrogate_energy(&spec, c).unwrap(), pes_b_energy(&spec, c).unwrap());
        assert!(ea < 0.0 && ea != eb);
        shift += (eb - ea) / c.n_waters() as f64;
    }
    assert!(shift / minima.len() as f64 > 0.0);
}

#[test]
fn non_water_input_is_rejected() {
    let c = Cluster::new(vec![8, 8, 1], vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
    assert!(surrogate_energy(&SurrogateSpec::default(), &c).is_err());
}
