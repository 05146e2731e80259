//! Analytic water surfaces used as reference potentials.
//!
//! Surface A is a flexible three-site water model: harmonic O–H bonds and
//! H–O–H angle inside each molecule, Lennard-Jones plus point-charge
//! Coulomb between molecules. Each molecule pair interacts as a neutral
//! group, switched smoothly to zero as its O–O distance goes from 8 to 9 Å.
//! Surface B rescales A, adds a per-molecule binding offset that
//! vanishes on dissociation, and a weak O–O repulsion with a larger σ.
//! Both provide exact analytic forces.

mod generate;
mod terms;

use serde::{Deserialize, Serialize};

use crate::chemdata::{Cluster, Vec3};
use crate::error::{Error, Result};

pub use generate::{generate_minima, generate_nonminima, relabel, relax, MinimaConfig, NonMinimaConfig, Relaxed};
pub use terms::{energy_generic, switch};

/// Which reference surface.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pes {
    A,
    B,
}

impl Pes {
    pub fn label(self) -> &'static str {
        match self {
            Pes::A => "A",
            Pes::B => "B",
        }
    }
}

impl std::str::FromStr for Pes {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Pes::A),
            "B" | "b" => Ok(Pes::B),
            _ => Err(Error::Config(format!("unknown surface `{s}` (expected A or B)"))),
        }
    }
}

/// Parameters of surface B relative to A.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PesBSpec {
    /// Multiplier on E_A.
    pub scale: f64,
    /// kcal/mol per bound molecule.
    pub per_water: f64,
    /// O–O range over which a neighbor counts as binding (Å).
    pub binding_on: f64,
    pub binding_off: f64,
    /// Weight of the extra O–O Lennard-Jones term.
    pub oo_weight: f64,
    /// σ′ of the extra term (Å).
    pub oo_sigma: f64,
}

impl Default for PesBSpec {
    fn default() -> Self {
        PesBSpec { scale: 1.05, per_water: 0.3, binding_on: 4.0, binding_off: 5.5, oo_weight: 0.1, oo_sigma: 3.35 }
    }
}

/// Surrogate parameters. Units: kcal/mol, Å, radians for angle constants,
/// degrees for `hoh_theta0_deg`, elementary charges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateSpec {
    pub oh_k: f64,
    pub oh_r0: f64,
    pub hoh_k: f64,
    pub hoh_theta0_deg: f64,
    pub lj_o_epsilon: f64,
    pub lj_o_sigma: f64,
    /// Small hydrogen Lennard-Jones site; keeps H from collapsing onto a
    /// neighboring O under the point-charge attraction.
    pub lj_h_epsilon: f64,
    pub lj_h_sigma: f64,
    pub q_o: f64,
    pub q_h: f64,
    /// kcal·Å/(mol·e²)
    pub coulomb_k: f64,
    pub switch_on: f64,
    pub switch_off: f64,
    pub pes_b: PesBSpec,
}

impl Default for SurrogateSpec {
    fn default() -> Self {
        SurrogateSpec {
            oh_k: 450.0,
            oh_r0: 0.9572,
            hoh_k: 55.0,
            hoh_theta0_deg: 104.52,
            lj_o_epsilon: 0.1521,
            lj_o_sigma: 3.1507,
            lj_h_epsilon: 0.046,
            lj_h_sigma: 0.4,
            q_o: -0.834,
            q_h: 0.417,
            coulomb_k: 332.0637,
            switch_on: 8.0,
            switch_off: 9.0,
            pes_b: PesBSpec::default(),
        }
    }
}

impl SurrogateSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("oh_k", self.oh_k),
            ("oh_r0", self.oh_r0),
            ("hoh_k", self.hoh_k),
            ("hoh_theta0_deg", self.hoh_theta0_deg),
            ("lj_o_epsilon", self.lj_o_epsilon),
            ("lj_o_sigma", self.lj_o_sigma),
            ("lj_h_epsilon", self.lj_h_epsilon),
            ("lj_h_sigma", self.lj_h_sigma),
            ("coulomb_k", self.coulomb_k),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(Error::Config(format!("surrogate parameter {name} must be positive")));
        }
        if (self.q_o + 2.0 * self.q_h).abs() > 1e-12 {
            return Err(Error::Config("molecular charges must sum to zero".into()));
        }
        if !(self.switch_off > self.switch_on && self.switch_on > 0.0) {
            return Err(Error::Config("switch_off must exceed switch_on > 0".into()));
        }
        let b = &self.pes_b;
        if !(b.binding_off > b.binding_on && b.binding_on > 0.0 && b.oo_sigma > 0.0) {
            return Err(Error::Config("invalid surface-B binding range or σ′".into()));
        }
        Ok(())
    }

    pub(crate) fn theta0(&self) -> f64 {
        self.hoh_theta0_deg.to_radians()
    }
}

fn check_water(c: &Cluster) -> Result<()> {
    c.validate()?;
    if !c.is_water_pattern() {
        return Err(Error::Config("surrogate surfaces need O,H,H-ordered water clusters".into()));
    }
    Ok(())
}

/// Energy on the given surface (kcal/mol).
pub fn surface_energy(spec: &SurrogateSpec, pes: Pes, cluster: &Cluster) -> Result<f64> {
    check_water(cluster)?;
    Ok(energy_generic(spec, pes, &cluster.positions))
}

/// Energy and analytic forces on the given surface.
pub fn surface_energy_forces(spec: &SurrogateSpec, pes: Pes, cluster: &Cluster) -> Result<(f64, Vec<Vec3>)> {
    check_water(cluster)?;
    let (e, g) = terms::energy_gradient(spec, pes, &cluster.positions);
    Ok((e, g.into_iter().map(|v| [-v[0], -v[1], -v[2]]).collect()))
}

pub fn surrogate_energy(spec: &SurrogateSpec, cluster: &Cluster) -> Result<f64> {
    surface_energy(spec, Pes::A, cluster)
}

pub fn surrogate_forces(spec: &SurrogateSpec, cluster: &Cluster) -> Result<Vec<Vec3>> {
    Ok(surface_energy_forces(spec, Pes::A, cluster)?.1)
}

pub fn pes_b_energy(spec: &SurrogateSpec, cluster: &Cluster) -> Result<f64> {
    surface_energy(spec, Pes::B, cluster)
}

pub fn pes_b_forces(spec: &SurrogateSpec, cluster: &Cluster) -> Result<Vec<Vec3>> {
    Ok(surface_energy_forces(spec, Pes::B, cluster)?.1)
}

/// A surface bound to its parameters, usable as an MD force provider.
#[derive(Clone, Debug, PartialEq)]
pub struct Surrogate {
    pub spec: SurrogateSpec,
    pub pes: Pes,
}

impl Surrogate {
    pub fn new(spec: SurrogateSpec, pes: Pes) -> Result<Self> {
        spec.validate()?;
        Ok(Surrogate { spec, pes })
    }

    pub fn energy(&self, cluster: &Cluster) -> Result<f64> {
        surface_energy(&self.spec, self.pes, cluster)
    }

    pub fn energy_forces(&self, cluster: &Cluster) -> Result<(f64, Vec<Vec3>)> {
        surface_energy_forces(&self.spec, self.pes, cluster)
    }
}
