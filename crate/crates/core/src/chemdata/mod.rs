//! Molecular configurations, extended-XYZ ingestion, dataset splits,
//! neighbor graphs and batching.

mod batch;
mod neighbors;
mod split;
pub(crate) mod xyz;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use batch::{batch_clusters, Batch};
pub use neighbors::{neighbor_pairs, Pair, PairList};
pub use split::{read_split_files, split_dataset, write_split_files, SplitIndices};
pub use xyz::{parse_xyz, parse_xyz_strict, read_xyz_file, write_xyz, write_xyz_file};

pub type Vec3 = [f64; 3];

pub const HYDROGEN: u8 = 1;
pub const OXYGEN: u8 = 8;

/// Fixed symbol table: (atomic number, symbol, mass in amu).
const ELEMENTS: &[(u8, &str, f64)] = &[
    (1, "H", 1.008),
    (6, "C", 12.011),
    (7, "N", 14.007),
    (8, "O", 15.999),
    (9, "F", 18.998),
    (16, "S", 32.06),
];

pub fn symbol_to_number(sym: &str) -> Option<u8> {
    ELEMENTS.iter().find(|e| e.1 == sym).map(|e| e.0)
}

pub fn number_to_symbol(z: u8) -> Option<&'static str> {
    ELEMENTS.iter().find(|e| e.0 == z).map(|e| e.1)
}

pub fn atomic_mass(z: u8) -> Option<f64> {
    ELEMENTS.iter().find(|e| e.0 == z).map(|e| e.2)
}

/// One molecular configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub atomic_numbers: Vec<u8>,
    /// Å
    pub positions: Vec<Vec3>,
    /// kcal/mol
    pub energy: Option<f64>,
    /// kcal/mol/Å
    pub forces: Option<Vec<Vec3>>,
    /// Comment-line keys other than `energy`.
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
}

impl Cluster {
    pub fn new(atomic_numbers: Vec<u8>, positions: Vec<Vec3>) -> Result<Self> {
        let c = Cluster { atomic_numbers, positions, energy: None, forces: None, tags: BTreeMap::new() };
        c.validate()?;
        Ok(c)
    }

    pub fn with_energy(mut self, energy: f64) -> Self {
        self.energy = Some(energy);
        self
    }

    pub fn with_forces(mut self, forces: Vec<Vec3>) -> Result<Self> {
        self.forces = Some(forces);
        self.validate()?;
        Ok(self)
    }

    pub fn n_atoms(&self) -> usize {
        self.atomic_numbers.len()
    }

    /// Number of water molecules, assuming the O,H,H layout.
    pub fn n_waters(&self) -> usize {
        self.n_atoms() / 3
    }

    pub fn is_water_pattern(&self) -> bool {
        self.n_atoms().is_multiple_of(3)
            && self
                .atomic_numbers
                .chunks(3)
                .all(|m| m == [OXYGEN, HYDROGEN, HYDROGEN])
    }

    pub fn masses(&self) -> Result<Vec<f64>> {
        self.atomic_numbers
            .iter()
            .map(|&z| atomic_mass(z).ok_or(Error::UnknownElement(z)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.atomic_numbers.is_empty() {
            return Err(Error::Shape("cluster has no atoms".into()));
        }
        if self.positions.len() != self.atomic_numbers.len() {
            return Err(Error::Shape(format!(
                "{} positions for {} atoms",
                self.positions.len(),
                self.atomic_numbers.len()
            )));
        }
        if self.positions.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("cluster positions".into()));
        }
        if let Some(f) = &self.forces {
            if f.len() != self.positions.len() {
                return Err(Error::Shape(format!("{} force rows for {} atoms", f.len(), self.positions.len())));
            }
        }
        Ok(())
    }

    pub fn energy_or_err(&self) -> Result<f64> {
        self.energy.ok_or_else(|| Error::MissingData("cluster has no reference energy".into()))
    }
}

/// A collection of clusters plus provenance tags.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub clusters: Vec<Cluster>,
    pub tags: BTreeMap<String, String>,
}

impl ClusterSet {
    pub fn new(clusters: Vec<Cluster>) -> Self {
        ClusterSet { clusters, tags: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Sorted distinct atomic numbers across all clusters.
    pub fn elements(&self) -> Vec<u8> {
        let mut z: Vec<u8> = self.clusters.iter().flat_map(|c| c.atomic_numbers.iter().copied()).collect();
        z.sort_unstable();
        z.dedup();
        z
    }

    pub fn subset(&self, indices: &[usize]) -> ClusterSet {
        ClusterSet { clusters: indices.iter().map(|&i| self.clusters[i].clone()).collect(), tags: self.tags.clone() }
    }

    pub fn has_forces(&self) -> bool {
        !self.clusters.is_empty() && self.clusters.iter().all(|c| c.forces.is_some())
    }

    /// Mean reference energy per atom, used to seed per-element offsets.
    pub fn mean_energy_per_atom(&self) -> Option<f64> {
        let (e, n) = self
            .clusters
            .iter()
            .filter_map(|c| c.energy.map(|e| (e, c.n_atoms())))
            .fold((0.0, 0usize), |(se, sn), (e, n)| (se + e, sn + n));
        (n > 0).then(|| e / n as f64)
    }
}
