use serde::{Deserialize, Serialize};

use super::{MDConfig, RunStatus, Trajectory, TrajectoryValidation, Verdict};
use crate::chemdata::xyz::write_frame;
use crate::chemdata::Cluster;
use crate::error::Result;

/// Extended XYZ, one frame per snapshot, predicted forces in columns 5–7.
pub fn trajectory_xyz(traj: &Trajectory) -> Result<String> {
    let mut out = String::new();
    for f in &traj.frames {
        let c = Cluster {
            atomic_numbers: traj.atomic_numbers.clone(),
            positions: f.positions.clone(),
            energy: Some(f.energy),
            forces: Some(f.forces.clone()),
            tags: Default::default(),
        };
        write_frame(&mut out, &c, &format!("step={} energy={} temperature={}", f.step, f.energy, f.temperature))?;
    }
    Ok(out)
}

/// JSON companion of a trajectory file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySidecar {
    pub config: MDConfig,
    pub provenance: String,
    #[serde(flatten)]
    pub status: RunStatus,
    pub n_frames: usize,
    pub verdict: Option<Verdict>,
}

impl TrajectorySidecar {
    pub fn new(traj: &Trajectory, verdict: Option<Verdict>) -> Self {
        TrajectorySidecar {
            config: traj.config.clone(),
            provenance: traj.provenance.clone(),
            status: traj.status.clone(),
            n_frames: traj.frames.len(),
            verdict,
        }
    }
}

pub fn validation_csv(v: &TrajectoryValidation) -> String {
    let mut s = String::from("step,E_nnp,E_reference\n");
    for ((step, a), b) in v.steps.iter().zip(&v.e_provider).zip(&v.e_reference) {
        s.push_str(&format!("{step},{a},{b}\n"));
    }
    s
}
