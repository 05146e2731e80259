#![allow(dead_code)]

use nnpforge::chemdata::{Cluster, Vec3};
use nnpforge::model::{init_params, ModelConfig, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat3 = [[f64; 3]; 3];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform random rotation from a normalized random quaternion.
pub fn random_rotation(rng: &mut impl Rng) -> Mat3 {
    let mut q = [0.0f64; 4];
    loop {
        for x in q.iter_mut() {
            *x = rng.random_range(-1.0..1.0);
        }
        let n = q.iter().map(|x| x * x).sum::<f64>();
        if n > 1e-3 && n <= 1.0 {
            let n = n.sqrt();
            q.iter_mut().for_each(|x| *x /= n);
            break;
        }
    }
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

pub fn rotate(r: &Mat3, v: &Vec3) -> Vec3 {
    [0, 1, 2].map(|i| r[i][0] * v[0] + r[i][1] * v[1] + r[i][2] * v[2])
}

pub fn norm(v: &Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn net_force(f: &[Vec3]) -> Vec3 {
    f.iter().fold([0.0; 3], |a, v| [a[0] + v[0], a[1] + v[1], a[2] + v[2]])
}

pub fn net_torque(x: &[Vec3], f: &[Vec3]) -> Vec3 {
    x.iter().zip(f).fold([0.0; 3], |a, (r, v)| {
        let t = cross(r, v);
        [a[0] + t[0], a[1] + t[1], a[2] + t[2]]
    })
}

/// `‖a − b‖ / ‖b‖` over flattened vectors.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let n: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    d / n.max(f64::MIN_POSITIVE)
}

pub fn flat(v: &[Vec3]) -> Vec<f64> {
    v.iter().flatten().copied().collect()
}

/// `n` slightly distorted waters with random orientations, oxygens at
/// least `min_oo` apart inside a sphere of the given radius.
pub fn random_waters(n: usize, radius: f64, min_oo: f64, rng: &mut impl Rng) -> Cluster {
    let mut oxygens: Vec<Vec3> = Vec::new();
    while oxygens.len() < n {
        let p = [0, 1, 2].map(|_| rng.random_range(-radius..radius));
        if norm(&p) <= radius && oxygens.iter().all(|o| norm(&[o[0] - p[0], o[1] - p[1], o[2] - p[2]]) >= min_oo) {
            oxygens.push(p);
        }
    }
    let mut z = Vec::new();
    let mut x = Vec::new();
    for o in oxygens {
        let r = random_rotation(rng);
        let half = (104.52f64 + rng.random_range(-8.0..8.0)).to_radians() / 2.0;
        let (l1, l2) = (0.9572 + rng.random_range(-0.05..0.05), 0.9572 + rng.random_range(-0.05..0.05));
        let h1 = rotate(&r, &[l1 * half.sin(), l1 * half.cos(), 0.0]);
        let h2 = rotate(&r, &[-l2 * half.sin(), l2 * half.cos(), 0.0]);
        z.extend([8, 1, 1]);
        x.push(o);
        x.push([o[0] + h1[0], o[1] + h1[1], o[2] + h1[2]]);
        x.push([o[0] + h2[0], o[1] + h2[1], o[2] + h2[2]]);
    }
    Cluster::new(z, x).unwrap()
}

/// A cluster the size of the ones used in training, 2–5 waters.
pub fn small_cluster(seed: u64) -> Cluster {
    let mut r = rng(seed);
    let n = r.random_range(2..=5);
    random_waters(n, 1.6 * (n as f64).cbrt() + 0.8, 2.6, &mut r)
}

pub fn small_config() -> ModelConfig {
    ModelConfig {
        n_atom_features: 12,
        n_interactions: 2,
        n_rbf: 10,
        cutoff: 5.0,
        rbf_width: 0.5,
        readout_hidden: 8,
        element_vocabulary: vec![1, 8],
        energy_offset: -2.0,
    }
}

/// Randomly initialized model whose outputs are not dominated by the offset.
pub fn small_model(seed: u64) -> ModelParams {
    let mut p = init_params(&small_config(), seed).unwrap();
    let mut r = rng(seed ^ 0xabcdef);
    for v in p.values.iter_mut() {
        *v += 0.05 * r.random_range(-1.0..1.0);
    }
    p
}
