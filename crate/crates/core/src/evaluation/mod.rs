//! Test-set metrics: per-water energy error, force magnitude and angle
//! errors, energy histograms and comparison tables.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chemdata::{ClusterSet, Vec3};
use crate::dynamics::ForceProvider;
use crate::error::{Error, Result};

/// `|E_pred − E_true| / n_waters`.
pub fn e_h2o_error(e_pred: f64, e_true: f64, n_waters: usize) -> f64 {
    (e_pred - e_true).abs() / n_waters.max(1) as f64
}

fn norm(v: &Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Signed `‖F̂‖ − ‖F‖`.
pub fn f_mag_error(pred: &Vec3, truth: &Vec3) -> f64 {
    norm(pred) - norm(truth)
}

/// Angle between the two vectors over π, in [0, 1]; `None` if either norm
/// is below 1e-12.
///
/// Uses `atan2(‖a×b‖, a·b)`, which stays accurate for nearly parallel
/// vectors and returns exactly 0 and 1 for parallel and antiparallel ones.
pub fn f_ang_error(pred: &Vec3, truth: &Vec3) -> Option<f64> {
    if norm(pred) < 1e-12 || norm(truth) < 1e-12 {
        return None;
    }
    let (a, b) = (pred, truth);
    let cross = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    Some(norm(&cross).atan2(dot) / std::f64::consts::PI)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForceMetrics {
    /// Mean of |F_mag|.
    pub f_mag_mean: f64,
    pub f_mag_median: f64,
    /// Signed mean of F_mag.
    pub f_mag_bias: f64,
    pub f_ang_mean: f64,
    pub f_ang_median: f64,
    pub n_atoms: usize,
    /// Atoms left out of angular statistics because a force vanished.
    pub undefined_angle: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub test_set: String,
    pub provenance: String,
    pub n_samples: usize,
    pub e_h2o_mae: f64,
    pub e_h2o_rmse: f64,
    pub forces: Option<ForceMetrics>,
    /// Per-water predicted and reference energies, in test-set order.
    pub e_h2o_pred: Vec<f64>,
    pub e_h2o_true: Vec<f64>,
    pub notes: Vec<String>,
}

/// All metrics of `provider` over `test`. Force metrics are computed only
/// when every cluster carries reference forces.
pub fn evaluate_model(provider: &dyn ForceProvider, test: &ClusterSet, tag: &str) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(Error::MissingData("empty test set".into()));
    }
    let preds: Vec<(f64, Vec<Vec3>)> = test
        .clusters
        .par_iter()
        .map(|c| provider.energy_forces(&c.atomic_numbers, &c.positions))
        .collect::<Result<_>>()?;
    let mut abs_err = Vec::with_capacity(test.len());
    let (mut e_pred, mut e_true) = (Vec::with_capacity(test.len()), Vec::with_capacity(test.len()));
    for (c, (e, _)) in test.clusters.iter().zip(&preds) {
        let t = c.energy_or_err()?;
        let nw = c.n_waters().max(1);
        abs_err.push(e_h2o_error(*e, t, nw));
        e_pred.push(e / nw as f64);
        e_true.push(t / nw as f64);
    }
    let mut notes = Vec::new();
    let forces = if test.has_forces() {
        let (mut mags, mut angs, mut undefined) = (Vec::new(), Vec::new(), 0);
        for (c, (_, f)) in test.clusters.iter().zip(&preds) {
            for (p, t) in f.iter().zip(c.forces.as_ref().unwrap()) {
                mags.push(f_mag_error(p, t));
                match f_ang_error(p, t) {
                    Some(a) => angs.push(a),
                    None => undefined += 1,
                }
            }
        }
        let abs_mags: Vec<f64> = mags.iter().map(|m| m.abs()).collect();
        Some(ForceMetrics {
            f_mag_mean: mean(&abs_mags),
            f_mag_median: median(&abs_mags),
            f_mag_bias: mean(&mags),
            f_ang_mean: mean(&angs),
            f_ang_median: median(&angs),
            n_atoms: mags.len(),
            undefined_angle: undefined,
        })
    } else {
        notes.push("force metrics omitted: test set lacks reference forces".into());
        None
    };
    Ok(MetricsReport {
        test_set: tag.to_string(),
        provenance: provider.describe(),
        n_samples: test.len(),
        e_h2o_mae: mean(&abs_err),
        e_h2o_rmse: mean(&abs_err.iter().map(|e| e * e).collect::<Vec<_>>()).sqrt(),
        forces,
        e_h2o_pred: e_pred,
        e_h2o_true: e_true,
        notes,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Values outside `[edges[0], edges[bins]]`.
    pub out_of_range: usize,
}

impl Histogram {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_left,bin_right,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            s.push_str(&format!("{},{},{}\n", self.edges[i], self.edges[i + 1], c));
        }
        s
    }

    /// Count-weighted mean of bin centers.
    pub fn center_of_mass(&self) -> f64 {
        let total: usize = self.counts.iter().sum();
        let s: f64 = self
            .counts
            .iter()
            .enumerate()
            .map(|(i, &c)| c as f64 * 0.5 * (self.edges[i] + self.edges[i + 1]))
            .sum();
        s / total.max(1) as f64
    }
}

/// Fixed-width histogram over `[lo, hi]`; the top edge is inclusive.
pub fn energy_histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Histogram> {
    if values.is_empty() || bins == 0 {
        return Err(Error::MissingData("histogram needs at least one value and one bin".into()));
    }
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    let w = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| if i == bins { hi } else { lo + i as f64 * w }).collect();
    let mut counts = vec![0; bins];
    let mut out_of_range = 0;
    for &v in values {
        if !(v >= lo && v <= hi) {
            out_of_range += 1;
            continue;
        }
        let i = (((v - lo) / w).floor() as usize).min(bins - 1);
        counts[i] += 1;
    }
    Ok(Histogram { edges, counts, out_of_range })
}

/// Min and max over several distributions, for shared bins.
pub fn union_range(sets: &[&[f64]]) -> (f64, f64) {
    sets.iter()
        .flat_map(|s| s.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
}

pub const DEFAULT_BINS: usize = 60;

/// One row of a model comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub initialization: String,
    pub n_train: usize,
    pub report: MetricsReport,
}

/// Markdown table: Initialization, N_train, test set, E_H2O, F_mag, F_ang, host.
pub fn comparison_table(rows: &[ComparisonRow], host: &str) -> String {
    let mut s = String::from("| Initialization | N_train | Test set | E_H2O (kcal/mol) | F_mag (kcal/mol/Å) | F_ang | Host |\n");
    s.push_str("|---|---|---|---|---|---|---|\n");
    for r in rows {
        let (fm, fa) = match &r.report.forces {
            Some(f) => (format!("{:.4}", f.f_mag_mean), format!("{:.4}", f.f_ang_mean)),
            None => ("n/a".into(), "n/a".into()),
        };
        s.push_str(&format!(
            "| {} | {} | {} | {:.4} | {} | {} | {} |\n",
            r.initialization, r.n_train, r.report.test_set, r.report.e_h2o_mae, fm, fa, host
        ));
    }
    s
}
