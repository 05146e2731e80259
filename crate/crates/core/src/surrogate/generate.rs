use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::terms::energy_gradient;
use super::{surface_energy_forces, Pes, Surrogate, SurrogateSpec};
use crate::chemdata::{Cluster, ClusterSet, Vec3, HYDROGEN, OXYGEN};
use crate::dynamics::{run_md, Ensemble, MDConfig};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinimaConfig {
    pub pes: Pes,
    /// Waters per cluster, drawn uniformly from this list.
    pub sizes: Vec<usize>,
    pub count: usize,
    pub seed: u64,
    /// Convergence threshold on the largest force component (kcal/mol/Å).
    pub force_tol: f64,
    pub max_iterations: usize,
}

impl Default for MinimaConfig {
    fn default() -> Self {
        MinimaConfig { pes: Pes::A, sizes: (3..=8).collect(), count: 100, seed: 0, force_tol: 1e-4, max_iterations: 20_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NonMinimaConfig {
    /// Runs cycle through these temperatures (K).
    pub temperatures: Vec<f64>,
    pub steps: usize,
    pub dt: f64,
    pub tau: f64,
    /// Frames kept per run, evenly spaced over its second half.
    pub frames_per_run: usize,
    pub seed: u64,
}

impl Default for NonMinimaConfig {
    fn default() -> Self {
        NonMinimaConfig { temperatures: vec![260.0, 300.0], steps: 1000, dt: 0.5, tau: 50.0, frames_per_run: 5, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Relaxed {
    pub positions: Vec<Vec3>,
    pub energy: f64,
    pub max_force: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn flat(x: &[Vec3]) -> Vec<f64> {
    x.iter().flatten().copied().collect()
}

fn unflat(x: &[f64]) -> Vec<Vec3> {
    x.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(g: &[f64]) -> f64 {
    g.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Local minimization by limited-memory BFGS with Armijo backtracking,
/// until the largest force component falls below `force_tol`.
pub fn relax(spec: &SurrogateSpec, pes: Pes, positions: &[Vec3], force_tol: f64, max_iterations: usize) -> Relaxed {
    const MEMORY: usize = 10;
    const MAX_DISPLACEMENT: f64 = 0.2;
    let eval = |x: &[f64]| {
        let (e, g) = energy_gradient(spec, pes, &unflat(x));
        (e, flat(&g))
    };
    let mut x = flat(positions);
    let (mut e, mut g) = eval(&x);
    let mut hist: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::with_capacity(MEMORY);
    let mut iterations = 0;
    let mut failures = 0;
    while iterations < max_iterations && max_abs(&g) >= force_tol && e.is_finite() {
        iterations += 1;
        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dotv(s, &d);
            d.iter_mut().zip(y).for_each(|(di, yi)| *di -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = hist.last() {
            let gamma = dotv(s, y) / dotv(y, y);
            d.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dotv(y, &d);
            d.iter_mut().zip(s).for_each(|(di, si)| *di += (a - b) * si);
        }
        let mut slope = dotv(&g, &d);
        if !(slope < 0.0) {
            hist.clear();
            d = g.iter().map(|v| -v).collect();
            slope = dotv(&g, &d);
        }
        let mut step = 1.0f64.min(MAX_DISPLACEMENT / max_abs(&d).max(1e-300));
        let accepted = loop {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            let (en, gn) = eval(&xn);
            if en.is_finite() && en <= e + 1e-4 * step * slope {
                break Some((xn, en, gn));
            }
            step *= 0.5;
            if step < 1e-14 {
                break None;
            }
        };
        match accepted {
            Some((xn, en, gn)) => {
                let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dotv(&s, &y);
                if sy > 1e-12 {
                    if hist.len() == MEMORY {
                        hist.remove(0);
                    }
                    hist.push((s, y, 1.0 / sy));
                }
                x = xn;
                e = en;
                g = gn;
                failures = 0;
            }
            None => {
                hist.clear();
                failures += 1;
                if failures > 2 {
                    break;
                }
            }
        }
    }
    let max_force = max_abs(&g);
    Relaxed { positions: unflat(&x), energy: e, max_force, iterations, converged: max_force < force_tol && e.is_finite() }
}

fn random_rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    let mut q = [0.0f64; 4];
    for v in q.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Waters at equilibrium geometry, randomly oriented, with oxygens spread in
/// a sphere at least 2.7 Å apart.
fn random_waters(spec: &SurrogateSpec, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    let th = spec.theta0();
    let local = [[0.0, 0.0, 0.0], [spec.oh_r0, 0.0, 0.0], [spec.oh_r0 * th.cos(), spec.oh_r0 * th.sin(), 0.0]];
    let mut radius = 1.6 * (n as f64).cbrt() + 0.8;
    let mut oxygens: Vec<Vec3> = Vec::with_capacity(n);
    while oxygens.len() < n {
        let mut placed = false;
        for _ in 0..2000 {
            let p: Vec3 = [
                rng.random_range(-radius..radius),
                rng.random_range(-radius..radius),
                rng.random_range(-radius..radius),
            ];
            if p.iter().map(|v| v * v).sum::<f64>() > radius * radius {
                continue;
            }
            let ok = oxygens
                .iter()
                .all(|o| (0..3).map(|k| (o[k] - p[k]).powi(2)).sum::<f64>() >= 2.7f64.powi(2));
            if ok {
                oxygens.push(p);
                placed = true;
                break;
            }
        }
        if !placed {
            radius += 0.3;
        }
    }
    let mut out = Vec::with_capacity(3 * n);
    for o in oxygens {
        let r = random_rotation(rng);
        for l in &local {
            out.push([
                o[0] + r[0][0] * l[0] + r[0][1] * l[1] + r[0][2] * l[2],
                o[1] + r[1][0] * l[0] + r[1][1] * l[1] + r[1][2] * l[2],
                o[2] + r[2][0] * l[0] + r[2][1] * l[1] + r[2][2] * l[2],
            ]);
        }
    }
    out
}

/// True when the O–O graph with edges under `reach` Å is connected.
fn connected(pos: &[Vec3], reach: f64) -> bool {
    let n = pos.len() / 3;
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(m) = stack.pop() {
        for k in 0..n {
            if !seen[k] && (0..3).map(|a| (pos[3 * m][a] - pos[3 * k][a]).powi(2)).sum::<f64>() < reach * reach {
                seen[k] = true;
                stack.push(k);
            }
        }
    }
    seen.iter().all(|&s| s)
}

fn water_numbers(n: usize) -> Vec<u8> {
    (0..n).flat_map(|_| [OXYGEN, HYDROGEN, HYDROGEN]).collect()
}

/// Relaxed, bound water clusters.
///
/// Attempt `k` draws from stream `k` of a generator seeded by `cfg.seed`, so
/// output is identical for any thread count. Attempts that fail to converge
/// or end unbound/fragmented are discarded with a log line.
pub fn generate_minima(spec: &SurrogateSpec, cfg: &MinimaConfig) -> Result<ClusterSet> {
    spec.validate()?;
    if cfg.sizes.is_empty() || cfg.sizes.iter().any(|&s| !(2..=25).contains(&s)) {
        return Err(Error::Config("minima sizes must lie in 2..=25 waters".into()));
    }
    let mut clusters = Vec::with_capacity(cfg.count);
    let mut next = 0u64;
    let max_attempts = 20 * cfg.count as u64 + 20;
    while clusters.len() < cfg.count {
        if next >= max_attempts {
            return Err(Error::MissingData(format!(
                "only {} of {} minima converged after {next} attempts",
                clusters.len(),
                cfg.count
            )));
        }
        let wave = ((cfg.count - clusters.len()) as u64 + 4).min(max_attempts - next);
        let results: Vec<(u64, Option<Cluster>)> = (next..next + wave)
            .into_par_iter()
            .map(|k| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(k);
                let n = cfg.sizes[rng.random_range(0..cfg.sizes.len())];
                let start = random_waters(spec, n, &mut rng);
                let r = relax(spec, cfg.pes, &start, cfg.force_tol, cfg.max_iterations);
                let ok = r.converged && r.energy < 0.0 && connected(&r.positions, 3.6);
                let c = ok.then(|| {
                    let mut c = Cluster::new(water_numbers(n), r.positions).expect("valid shape").with_energy(r.energy);
                    c.tags.insert("tag".into(), "minima".into());
                    c.tags.insert("pes".into(), cfg.pes.label().into());
                    c
                });
                (k, c)
            })
            .collect();
        for (k, c) in results {
            match c {
                Some(c) if clusters.len() < cfg.count => clusters.push(c),
                Some(_) => {}
                None => log::debug!("minima attempt {k} discarded (not converged, unbound or fragmented)"),
            }
        }
        next += wave;
    }
    let mut set = ClusterSet::new(clusters);
    set.tags.insert("tag".into(), "minima".into());
    set.tags.insert("pes".into(), cfg.pes.label().into());
    Ok(set)
}

/// Thermal samples from short NVT runs on the surface, each starting at one
/// minimum. Emitted clusters carry surface energies and forces.
pub fn generate_nonminima(spec: &SurrogateSpec, pes: Pes, minima: &ClusterSet, cfg: &NonMinimaConfig) -> Result<ClusterSet> {
    let surface = Surrogate::new(spec.clone(), pes)?;
    if cfg.temperatures.is_empty() || cfg.frames_per_run == 0 || cfg.steps < 2 * cfg.frames_per_run {
        return Err(Error::Config("need temperatures, frames_per_run ≥ 1 and steps ≥ 2·frames_per_run".into()));
    }
    let stride = (cfg.steps / 2) / cfg.frames_per_run;
    let runs: Vec<Result<Vec<Cluster>>> = minima
        .clusters
        .par_iter()
        .enumerate()
        .map(|(i, start)| {
            let t = cfg.temperatures[i % cfg.temperatures.len()];
            let md = MDConfig {
                dt: cfg.dt,
                n_steps: cfg.steps,
                temperature: t,
                tau: cfg.tau,
                mode: Ensemble::Nvt,
                seed: cfg.seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                snapshot_stride: stride,
                max_force: 1000.0,
            };
            let traj = run_md(&surface, start, &md)?;
            if traj.is_truncated() {
                log::debug!("non-minima run from minimum {i} unstable; skipped");
                return Ok(Vec::new());
            }
            let half = cfg.steps - cfg.frames_per_run * stride;
            Ok(traj
                .frames
                .iter()
                .filter(|f| f.step > half)
                .filter(|f| f.energy < 0.0 && f.energy.is_finite())
                .map(|f| {
                    let mut c = Cluster {
                        atomic_numbers: start.atomic_numbers.clone(),
                        positions: f.positions.clone(),
                        energy: Some(f.energy),
                        forces: Some(f.forces.clone()),
                        tags: Default::default(),
                    };
                    c.tags.insert("tag".into(), "nonminima".into());
                    c.tags.insert("pes".into(), pes.label().into());
                    c.tags.insert("temperature".into(), format!("{t}"));
                    c
                })
                .collect())
        })
        .collect();
    let mut clusters = Vec::new();
    for r in runs {
        clusters.extend(r?);
    }
    let mut set = ClusterSet::new(clusters);
    set.tags.insert("tag".into(), "nonminima".into());
    set.tags.insert("pes".into(), pes.label().into());
    Ok(set)
}

/// The same geometries with energies (and forces, where present) from `pes`.
pub fn relabel(spec: &SurrogateSpec, pes: Pes, set: &ClusterSet) -> Result<ClusterSet> {
    let clusters = set
        .clusters
        .par_iter()
        .map(|c| {
            let (e, f) = surface_energy_forces(spec, pes, c)?;
            let mut out = c.clone().with_energy(e);
            if out.forces.is_some() {
                out.forces = Some(f);
            }
            out.tags.insert("pes".into(), pes.label().into());
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = ClusterSet::new(clusters);
    out.tags = set.tags.clone();
    out.tags.insert("pes".into(), pes.label().into());
    Ok(out)
}
