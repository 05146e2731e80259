use std::collections::BTreeMap;
use std::ops::Range;

use super::{Cluster, Vec3};
use crate::error::{Error, Result};

/// Several clusters concatenated atom-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub atomic_numbers: Vec<u8>,
    pub positions: Vec<Vec3>,
    /// Cluster index of every atom; non-decreasing.
    pub membership: Vec<usize>,
    /// Atom offset of each cluster, plus a final sentinel.
    pub offsets: Vec<usize>,
    pub energies: Vec<Option<f64>>,
    /// Per-atom force targets, zero-padded for clusters without them.
    /// `None` when no cluster carries forces.
    pub forces: Option<Vec<Vec3>>,
    /// Which clusters carry force targets.
    pub has_forces: Vec<bool>,
    tags: Vec<BTreeMap<String, String>>,
}

impl Batch {
    pub fn n_clusters(&self) -> usize {
        self.energies.len()
    }

    pub fn n_atoms(&self) -> usize {
        self.atomic_numbers.len()
    }

    pub fn atoms_of(&self, k: usize) -> Range<usize> {
        self.offsets[k]..self.offsets[k + 1]
    }

    pub fn all_have_forces(&self) -> bool {
        self.has_forces.iter().all(|&f| f)
    }

    pub fn n_waters(&self, k: usize) -> usize {
        self.atoms_of(k).len() / 3
    }

    /// Splits back into the original clusters.
    pub fn unbatch(&self) -> Vec<Cluster> {
        (0..self.n_clusters())
            .map(|k| {
                let r = self.atoms_of(k);
                Cluster {
                    atomic_numbers: self.atomic_numbers[r.clone()].to_vec(),
                    positions: self.positions[r.clone()].to_vec(),
                    energy: self.energies[k],
                    forces: self
                        .forces
                        .as_ref()
                        .filter(|_| self.has_forces[k])
                        .map(|f| f[r].to_vec()),
                    tags: self.tags[k].clone(),
                }
            })
            .collect()
    }
}

pub fn batch_clusters(cs: &[Cluster]) -> Result<Batch> {
    if cs.is_empty() {
        return Err(Error::Shape("cannot batch zero clusters".into()));
    }
    let any_forces = cs.iter().any(|c| c.forces.is_some());
    let mut b = Batch {
        atomic_numbers: Vec::new(),
        positions: Vec::new(),
        membership: Vec::new(),
        offsets: vec![0],
        energies: Vec::with_capacity(cs.len()),
        forces: any_forces.then(Vec::new),
        has_forces: Vec::with_capacity(cs.len()),
        tags: Vec::with_capacity(cs.len()),
    };
    for (k, c) in cs.iter().enumerate() {
        c.validate()?;
        b.atomic_numbers.extend_from_slice(&c.atomic_numbers);
        b.positions.extend_from_slice(&c.positions);
        b.membership.extend(std::iter::repeat_n(k, c.n_atoms()));
        b.offsets.push(b.atomic_numbers.len());
        b.energies.push(c.energy);
        if let Some(dst) = b.forces.as_mut() {
            match &c.forces {
                Some(src) => dst.extend_from_slice(src),
                None => dst.extend(std::iter::repeat_n([0.0; 3], c.n_atoms())),
            }
        }
        b.has_forces.push(c.forces.is_some());
        b.tags.push(c.tags.clone());
    }
    Ok(b)
}
