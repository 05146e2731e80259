//! Forward pass with a retained tape and a hand-derived reverse pass.
//!
//! The reverse pass yields parameter gradients and position gradients from
//! the same tape. Both passes are generic over [`Real`]; instantiating them
//! with [`Dual`] positions gives the parameter gradient of a directional
//! derivative of the energy, which is what the force term of the loss needs.

use rayon::prelude::*;

use super::layers::{add_acc, affine, affine_transpose_acc, cosine_cutoff, dot, outer_acc, rbf_expand_with_derivative};
use super::{BlockOffsets, ModelParams};
use crate::chemdata::{Batch, Cluster, Vec3};
use crate::error::{Error, Result};
use crate::scalar::{Dual, Real};

#[inline]
fn ssp_and_sigmoid<T: Real>(x: T) -> (T, T) {
    let one = T::one();
    let e = (-x.abs()).exp();
    let ssp = x.max(T::zero()) + e.ln_1p() - T::LN_2();
    let sig = if x >= T::zero() { one / (one + e) } else { e / (one + e) };
    (ssp, sig)
}

struct BlockTape<T> {
    h_in: Vec<T>,
    xin: Vec<T>,
    f1: Vec<T>,
    s1: Vec<T>,
    wraw: Vec<T>,
    filt: Vec<T>,
    m: Vec<T>,
    o1: Vec<T>,
    s_o1: Vec<T>,
}

/// Intermediates of one cluster's forward pass.
pub struct ClusterTape<T> {
    species: Vec<usize>,
    pairs: Vec<(usize, usize)>,
    unit: Vec<[T; 3]>,
    rbf: Vec<T>,
    drbf: Vec<T>,
    fc: Vec<T>,
    dfc: Vec<T>,
    blocks: Vec<BlockTape<T>>,
    h: Vec<T>,
    r1: Vec<T>,
    s_r1: Vec<T>,
    pub energy: T,
}

impl<T> ClusterTape<T> {
    pub fn n_atoms(&self) -> usize {
        self.species.len()
    }

    /// Undirected pairs inside the cutoff.
    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }
}

pub(crate) fn species_of(params: &ModelParams, atomic_numbers: &[u8]) -> Result<Vec<usize>> {
    atomic_numbers.iter().map(|&z| params.config.species_index(z)).collect()
}

pub(crate) fn forward_cluster<T: Real>(params: &ModelParams, species: &[usize], positions: &[[T; 3]]) -> ClusterTape<T> {
    let cfg = &params.config;
    let lay = params.layout();
    let (n, f, k, hd) = (species.len(), cfg.n_atom_features, cfg.n_rbf, cfg.readout_hidden);

    let mut pairs = Vec::new();
    let mut unit = Vec::new();
    let mut dists = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let dx = [positions[j][0] - positions[i][0], positions[j][1] - positions[i][1], positions[j][2] - positions[i][2]];
            let d = (dx[0] * dx[0] + dx[1] * dx[1] + dx[2] * dx[2]).sqrt();
            if d.value() <= cfg.cutoff {
                pairs.push((i, j));
                unit.push([dx[0] / d, dx[1] / d, dx[2] / d]);
                dists.push(d);
            }
        }
    }
    let np = pairs.len();
    let mut rbf = vec![T::zero(); np * k];
    let mut drbf = vec![T::zero(); np * k];
    let mut fc = Vec::with_capacity(np);
    let mut dfc = Vec::with_capacity(np);
    for (p, &d) in dists.iter().enumerate() {
        rbf_expand_with_derivative(d, k, cfg.cutoff, cfg.rbf_width, &mut rbf[p * k..(p + 1) * k], &mut drbf[p * k..(p + 1) * k]);
        let (c, dc) = cosine_cutoff(d, cfg.cutoff);
        fc.push(c);
        dfc.push(dc);
    }

    let emb = params.w(lay.embedding, cfg.element_vocabulary.len() * f);
    let mut h: Vec<T> = species.iter().flat_map(|&s| emb[s * f..(s + 1) * f].iter().map(|&v| T::lift(v))).collect();

    let mut blocks = Vec::with_capacity(cfg.n_interactions);
    let mut a1 = vec![T::zero(); f];
    let mut o1pre = vec![T::zero(); f];
    let mut v = vec![T::zero(); f];
    for bo in &lay.blocks {
        let w_in = params.w(bo.in2f_w, f * f);
        let w1 = params.w(bo.filter1_w, f * k);
        let b1 = params.w(bo.filter1_b, f);
        let w2 = params.w(bo.filter2_w, f * f);
        let b2 = params.w(bo.filter2_b, f);
        let wo1 = params.w(bo.out1_w, f * f);
        let bo1 = params.w(bo.out1_b, f);
        let wo2 = params.w(bo.out2_w, f * f);
        let bo2 = params.w(bo.out2_b, f);

        let h_in = h.clone();
        let mut xin = vec![T::zero(); n * f];
        for a in 0..n {
            affine(w_in, None, &h_in[a * f..(a + 1) * f], &mut xin[a * f..(a + 1) * f]);
        }
        let mut f1 = vec![T::zero(); np * f];
        let mut s1 = vec![T::zero(); np * f];
        let mut wraw = vec![T::zero(); np * f];
        let mut filt = vec![T::zero(); np * f];
        let mut m = vec![T::zero(); n * f];
        for (p, &(i, j)) in pairs.iter().enumerate() {
            let r = p * f..(p + 1) * f;
            affine(w1, Some(b1), &rbf[p * k..(p + 1) * k], &mut a1);
            for q in 0..f {
                let (y, s) = ssp_and_sigmoid(a1[q]);
                f1[p * f + q] = y;
                s1[p * f + q] = s;
            }
            affine(w2, Some(b2), &f1[r.clone()], &mut wraw[r.clone()]);
            let c = fc[p];
            for q in 0..f {
                let w = wraw[p * f + q] * c;
                filt[p * f + q] = w;
                m[i * f + q] += xin[j * f + q] * w;
                m[j * f + q] += xin[i * f + q] * w;
            }
        }
        let mut o1 = vec![T::zero(); n * f];
        let mut s_o1 = vec![T::zero(); n * f];
        for a in 0..n {
            let r = a * f..(a + 1) * f;
            affine(wo1, Some(bo1), &m[r.clone()], &mut o1pre);
            for q in 0..f {
                let (y, s) = ssp_and_sigmoid(o1pre[q]);
                o1[a * f + q] = y;
                s_o1[a * f + q] = s;
            }
            affine(wo2, Some(bo2), &o1[r.clone()], &mut v);
            add_acc(&mut h[r], &v);
        }
        blocks.push(BlockTape { h_in, xin, f1, s1, wraw, filt, m, o1, s_o1 });
    }

    let wr1 = params.w(lay.readout1_w, hd * f);
    let br1 = params.w(lay.readout1_b, hd);
    let wr2 = params.w(lay.readout2_w, hd);
    let br2 = params.values[lay.readout2_b];
    let bias = params.w(lay.element_bias, cfg.element_vocabulary.len());
    let mut r1 = vec![T::zero(); n * hd];
    let mut s_r1 = vec![T::zero(); n * hd];
    let mut pre = vec![T::zero(); hd];
    let mut energy = T::zero();
    for a in 0..n {
        affine(wr1, Some(br1), &h[a * f..(a + 1) * f], &mut pre);
        for q in 0..hd {
            let (y, s) = ssp_and_sigmoid(pre[q]);
            r1[a * hd + q] = y;
            s_r1[a * hd + q] = s;
        }
        energy += dot(wr2, &r1[a * hd..(a + 1) * hd]) + T::lift(br2 + bias[species[a]]);
    }

    ClusterTape { species: species.to_vec(), pairs, unit, rbf, drbf, fc, dfc, blocks, h, r1, s_r1, energy }
}

#[inline]
fn seg<T>(g: &mut [T], off: usize, len: usize) -> &mut [T] {
    &mut g[off..off + len]
}

/// Accumulates `adjoint · ∂E/∂θ` into `grad_params` and `adjoint · ∂E/∂x`
/// into `grad_pos`; either may be skipped.
pub(crate) fn backward_cluster<T: Real>(
    params: &ModelParams,
    tape: &ClusterTape<T>,
    adjoint: T,
    mut grad_params: Option<&mut [T]>,
    grad_pos: Option<&mut [[T; 3]]>,
) {
    let cfg = &params.config;
    let lay = params.layout();
    let (n, f, k, hd) = (tape.n_atoms(), cfg.n_atom_features, cfg.n_rbf, cfg.readout_hidden);
    let need_pos = grad_pos.is_some();

    let wr1 = params.w(lay.readout1_w, hd * f);
    let wr2 = params.w(lay.readout2_w, hd);
    let mut dh = vec![T::zero(); n * f];
    let mut dpre = vec![T::zero(); hd];
    for a in 0..n {
        let r1 = &tape.r1[a * hd..(a + 1) * hd];
        for q in 0..hd {
            dpre[q] = adjoint.scale(wr2[q]) * tape.s_r1[a * hd + q];
        }
        if let Some(g) = grad_params.as_deref_mut() {
            g[lay.readout2_b] += adjoint;
            g[lay.element_bias + tape.species[a]] += adjoint;
            for (gq, &rq) in seg(g, lay.readout2_w, hd).iter_mut().zip(r1) {
                *gq += adjoint * rq;
            }
            outer_acc(seg(g, lay.readout1_w, hd * f), &dpre, &tape.h[a * f..(a + 1) * f]);
            add_acc(seg(g, lay.readout1_b, hd), &dpre);
        }
        affine_transpose_acc(wr1, &dpre, &mut dh[a * f..(a + 1) * f]);
    }

    let np = tape.pairs.len();
    let mut dd = vec![T::zero(); if need_pos { np } else { 0 }];
    let mut dm = vec![T::zero(); n * f];
    let mut dxin = vec![T::zero(); n * f];
    let mut tmp = vec![T::zero(); f];
    let mut dwraw = vec![T::zero(); f];
    let mut de = vec![T::zero(); k];
    for (bt, bo) in tape.blocks.iter().zip(&lay.blocks).rev() {
        let BlockOffsets { in2f_w, filter1_w, filter1_b, filter2_w, filter2_b, out1_w, out1_b, out2_w, out2_b } = *bo;
        let w_in = params.w(in2f_w, f * f);
        let w1 = params.w(filter1_w, f * k);
        let w2 = params.w(filter2_w, f * f);
        let wo1 = params.w(out1_w, f * f);
        let wo2 = params.w(out2_w, f * f);

        // output MLP; the residual passes dh through unchanged
        for a in 0..n {
            let r = a * f..(a + 1) * f;
            let dv = &dh[r.clone()];
            tmp.fill(T::zero());
            affine_transpose_acc(wo2, dv, &mut tmp);
            for q in 0..f {
                tmp[q] *= bt.s_o1[a * f + q];
            }
            if let Some(g) = grad_params.as_deref_mut() {
                outer_acc(seg(g, out2_w, f * f), dv, &bt.o1[r.clone()]);
                add_acc(seg(g, out2_b, f), dv);
                outer_acc(seg(g, out1_w, f * f), &tmp, &bt.m[r.clone()]);
                add_acc(seg(g, out1_b, f), &tmp);
            }
            dm[r.clone()].fill(T::zero());
            affine_transpose_acc(wo1, &tmp, &mut dm[r]);
        }

        // continuous-filter convolution
        dxin.fill(T::zero());
        for (p, &(i, j)) in tape.pairs.iter().enumerate() {
            let pr = p * f..(p + 1) * f;
            let c = tape.fc[p];
            let mut dc = T::zero();
            for q in 0..f {
                let w = bt.filt[p * f + q];
                let df = dm[i * f + q] * bt.xin[j * f + q] + dm[j * f + q] * bt.xin[i * f + q];
                dxin[j * f + q] += dm[i * f + q] * w;
                dxin[i * f + q] += dm[j * f + q] * w;
                dwraw[q] = df * c;
                if need_pos {
                    dc += df * bt.wraw[p * f + q];
                }
            }
            tmp.fill(T::zero());
            affine_transpose_acc(w2, &dwraw, &mut tmp);
            for q in 0..f {
                tmp[q] *= bt.s1[p * f + q];
            }
            if let Some(g) = grad_params.as_deref_mut() {
                outer_acc(seg(g, filter2_w, f * f), &dwraw, &bt.f1[pr.clone()]);
                add_acc(seg(g, filter2_b, f), &dwraw);
                outer_acc(seg(g, filter1_w, f * k), &tmp, &tape.rbf[p * k..(p + 1) * k]);
                add_acc(seg(g, filter1_b, f), &tmp);
            }
            if need_pos {
                de.fill(T::zero());
                affine_transpose_acc(w1, &tmp, &mut de);
                let drbf = &tape.drbf[p * k..(p + 1) * k];
                let mut s = dc * tape.dfc[p];
                for q in 0..k {
                    s += de[q] * drbf[q];
                }
                dd[p] += s;
            }
        }

        // atom-wise input projection
        for a in 0..n {
            let r = a * f..(a + 1) * f;
            if let Some(g) = grad_params.as_deref_mut() {
                outer_acc(seg(g, in2f_w, f * f), &dxin[r.clone()], &bt.h_in[r.clone()]);
            }
            affine_transpose_acc(w_in, &dxin[r.clone()], &mut dh[r]);
        }
    }

    if let Some(g) = grad_params {
        for a in 0..n {
            add_acc(seg(g, lay.embedding + tape.species[a] * f, f), &dh[a * f..(a + 1) * f]);
        }
    }
    if let Some(gx) = grad_pos {
        for (p, &(i, j)) in tape.pairs.iter().enumerate() {
            let u = tape.unit[p];
            for ax in 0..3 {
                let v = dd[p] * u[ax];
                gx[j][ax] += v;
                gx[i][ax] -= v;
            }
        }
    }
}

/// Per-cluster energies and tapes for a batch.
pub struct BatchForward<T> {
    pub energies: Vec<T>,
    pub tapes: Vec<ClusterTape<T>>,
}

pub fn energy_forward(params: &ModelParams, batch: &Batch) -> Result<BatchForward<f64>> {
    let species = species_of(params, &batch.atomic_numbers)?;
    let tapes: Vec<ClusterTape<f64>> = (0..batch.n_clusters())
        .into_par_iter()
        .map(|k| {
            let r = batch.atoms_of(k);
            forward_cluster(params, &species[r.clone()], &batch.positions[r])
        })
        .collect();
    Ok(BatchForward { energies: tapes.iter().map(|t| t.energy).collect(), tapes })
}

/// `Σ_c adjoint_c · ∂E_c/∂θ`.
pub fn param_gradients(params: &ModelParams, fwd: &BatchForward<f64>, adjoint: &[f64]) -> Result<Vec<f64>> {
    if adjoint.len() != fwd.tapes.len() {
        return Err(Error::Shape(format!("adjoint has {} entries for {} clusters", adjoint.len(), fwd.tapes.len())));
    }
    let parts: Vec<Vec<f64>> = fwd
        .tapes
        .par_iter()
        .zip(adjoint.par_iter())
        .map(|(t, &a)| {
            let mut g = vec![0.0; params.len()];
            if a != 0.0 {
                backward_cluster(params, t, a, Some(&mut g), None);
            }
            g
        })
        .collect();
    Ok(sum_in_order(params.len(), parts.iter().map(|v| v.as_slice())))
}

pub(crate) fn sum_in_order<'a>(len: usize, parts: impl Iterator<Item = &'a [f64]>) -> Vec<f64> {
    let mut total = vec![0.0; len];
    for p in parts {
        add_acc(&mut total, p);
    }
    total
}

/// Energies and forces for every cluster of a batch.
pub struct ForcePass {
    pub energies: Vec<f64>,
    /// Batch-concatenated, kcal/mol/Å.
    pub forces: Vec<Vec3>,
}

impl ForcePass {
    pub fn compute(params: &ModelParams, batch: &Batch) -> Result<Self> {
        let species = species_of(params, &batch.atomic_numbers)?;
        let parts: Vec<(f64, Vec<Vec3>)> = (0..batch.n_clusters())
            .into_par_iter()
            .map(|k| {
                let r = batch.atoms_of(k);
                let tape = forward_cluster(params, &species[r.clone()], &batch.positions[r.clone()]);
                let mut g = vec![[0.0; 3]; r.len()];
                backward_cluster(params, &tape, 1.0, None, Some(&mut g));
                (tape.energy, g.into_iter().map(|v| [-v[0], -v[1], -v[2]]).collect())
            })
            .collect();
        let mut energies = Vec::with_capacity(parts.len());
        let mut forces = Vec::with_capacity(batch.n_atoms());
        for (e, f) in parts {
            energies.push(e);
            forces.extend(f);
        }
        Ok(ForcePass { energies, forces })
    }
}

/// Energy and `−∂E/∂x` for one configuration.
pub fn energy_and_forces(params: &ModelParams, atomic_numbers: &[u8], positions: &[Vec3]) -> Result<(f64, Vec<Vec3>)> {
    let species = species_of(params, atomic_numbers)?;
    let tape = forward_cluster(params, &species, positions);
    let mut g = vec![[0.0; 3]; positions.len()];
    backward_cluster(params, &tape, 1.0, None, Some(&mut g));
    Ok((tape.energy, g.into_iter().map(|v| [-v[0], -v[1], -v[2]]).collect()))
}

pub fn forces(params: &ModelParams, cluster: &Cluster) -> Result<Vec<Vec3>> {
    Ok(energy_and_forces(params, &cluster.atomic_numbers, &cluster.positions)?.1)
}

/// `∇_θ Σ_a direction_a · ∇_{x_a} E`, summed over the batch's clusters.
///
/// Runs the forward and reverse passes in dual arithmetic with the position
/// tangent set to `direction`; the tangent part of the parameter gradient is
/// the mixed second derivative contracted with `direction`.
pub fn force_loss_param_gradient(params: &ModelParams, batch: &Batch, direction: &[Vec3]) -> Result<Vec<f64>> {
    if direction.len() != batch.n_atoms() {
        return Err(Error::Shape(format!("direction has {} rows for {} atoms", direction.len(), batch.n_atoms())));
    }
    let species = species_of(params, &batch.atomic_numbers)?;
    let parts: Vec<Vec<f64>> = (0..batch.n_clusters())
        .into_par_iter()
        .map(|k| {
            let r = batch.atoms_of(k);
            let dir = &direction[r.clone()];
            if dir.iter().all(|v| v == &[0.0; 3]) {
                return vec![0.0; params.len()];
            }
            let pos: Vec<[Dual<f64>; 3]> = batch.positions[r.clone()]
                .iter()
                .zip(dir)
                .map(|(p, u)| [Dual::new(p[0], u[0]), Dual::new(p[1], u[1]), Dual::new(p[2], u[2])])
                .collect();
            let tape = forward_cluster(params, &species[r], &pos);
            let mut g = vec![Dual::<f64>::default(); params.len()];
            backward_cluster(params, &tape, Dual::constant(1.0), Some(&mut g), None);
            g.into_iter().map(|d| d.eps).collect()
        })
        .collect();
    Ok(sum_in_order(params.len(), parts.iter().map(|v| v.as_slice())))
}
