use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nnpforge::surrogate::Pes;
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "nnpforge", version, about = "Train, finetune and validate neural network potentials for water clusters")]
pub struct Cli {
    /// Worker thread cap (defaults to all cores)
    #[arg(long, global = true, env = "NNPFORGE_THREADS")]
    pub threads: Option<usize>,
    /// Output directory; defaults to runs/<timestamp>-<command>
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// JSON config with optional sections model, loss, schedule, md, sampling, surrogate
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate minima or thermal non-minima on a surrogate surface
    GenData(GenDataArgs),
    /// Train a model from scratch
    Pretrain(TrainArgs),
    /// Continue training from a checkpoint, optionally with active sampling
    Finetune(FinetuneArgs),
    /// Run molecular dynamics with a model or a surrogate
    Md(MdArgs),
    /// Re-score a trajectory on a surrogate surface
    Validate(ValidateArgs),
    /// Evaluate a checkpoint on a test set
    Eval(EvalArgs),
    /// Evaluate several checkpoints and emit a comparison table
    Compare(CompareArgs),
    /// Re-execute a run from its manifest and check the outputs match
    Rerun(RerunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Pretrain(_) => "pretrain",
            Command::Finetune(_) => "finetune",
            Command::Md(_) => "md",
            Command::Validate(_) => "validate",
            Command::Eval(_) => "eval",
            Command::Compare(_) => "compare",
            Command::Rerun(_) => "rerun",
        }
    }

    /// Makes every input path absolute so a manifest stays valid from any
    /// working directory.
    pub fn absolutize(&mut self) {
        fn abs(p: &mut PathBuf) {
            if let Ok(a) = std::path::absolute(&*p) {
                *p = a;
            }
        }
        fn abs_opt(p: &mut Option<PathBuf>) {
            if let Some(p) = p {
                abs(p);
            }
        }
        match self {
            Command::GenData(a) => {
                abs_opt(&mut a.minima);
                abs_opt(&mut a.relabel);
            }
            Command::Pretrain(a) => a.absolutize(),
            Command::Finetune(a) => {
                a.train.absolutize();
                abs(&mut a.from);
            }
            Command::Md(a) => {
                abs_opt(&mut a.from);
                abs(&mut a.cluster);
            }
            Command::Validate(a) => abs(&mut a.traj),
            Command::Eval(a) => {
                abs(&mut a.from);
                abs(&mut a.test);
                abs_opt(&mut a.split_dir);
            }
            Command::Compare(a) => abs(&mut a.rows),
            Command::Rerun(a) => abs(&mut a.manifest),
        }
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct GenDataArgs {
    /// Reference surface (A or B)
    #[arg(long)]
    pub pes: Pes,
    /// Waters per cluster, as a range `3-8` or a list `3,5,7`
    #[arg(long, default_value = "3-8")]
    pub sizes: String,
    /// Clusters to emit
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sample thermal non-minima from surrogate NVT runs started at minima
    #[arg(long)]
    pub nonminima: bool,
    /// Start non-minima runs from these minima instead of generating them
    #[arg(long, requires = "nonminima")]
    pub minima: Option<PathBuf>,
    /// NVT temperatures in K, cycled over the source minima
    #[arg(long = "temp", value_delimiter = ',', default_values_t = [260.0, 300.0])]
    pub temps: Vec<f64>,
    /// Steps per non-minima run
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    /// Frames kept from the second half of each run
    #[arg(long, default_value_t = 5)]
    pub frames_per_run: usize,
    /// Re-label an existing file on --pes instead of generating clusters
    #[arg(long, conflicts_with = "nonminima")]
    pub relabel: Option<PathBuf>,
    /// Train, validation and test fractions
    #[arg(long, default_value = "0.8,0.1,0.1")]
    pub split: String,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Extended XYZ dataset with energies
    #[arg(long)]
    pub data: PathBuf,
    /// Directory holding train.idx, val.idx and test.idx
    #[arg(long)]
    pub split_dir: Option<PathBuf>,
    /// Fractions used when no split directory is given
    #[arg(long, default_value = "0.8,0.1,0.1")]
    pub split: String,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Seeds weight initialization, shuffling and any fresh split
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Force-loss weight w; the energy term gets 1 − w
    #[arg(long)]
    pub force_weight: Option<f64>,
}

impl TrainArgs {
    fn absolutize(&mut self) {
        if let Ok(a) = std::path::absolute(&self.data) {
            self.data = a;
        }
        if let Some(d) = &mut self.split_dir {
            if let Ok(a) = std::path::absolute(&*d) {
                *d = a;
            }
        }
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct FinetuneArgs {
    /// Parent checkpoint
    #[arg(long)]
    pub from: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainArgs,
    /// Grow the training subset by erf-threshold active sampling
    #[arg(long)]
    pub active: bool,
    #[arg(long)]
    pub p_tol: Option<f64>,
    /// Epochs between sampling rounds
    #[arg(long)]
    pub round_period: Option<usize>,
    /// Reserve samples scored per round
    #[arg(long)]
    pub score_count: Option<usize>,
    /// Fraction of the training split in the initial subset
    #[arg(long)]
    pub initial_fraction: Option<f64>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct MdArgs {
    /// Checkpoint driving the dynamics
    #[arg(long, required_unless_present = "pes", conflicts_with = "pes")]
    pub from: Option<PathBuf>,
    /// Drive the dynamics with a surrogate surface instead
    #[arg(long)]
    pub pes: Option<Pes>,
    /// XYZ file with the starting geometry
    #[arg(long)]
    pub cluster: PathBuf,
    /// Frame of --cluster to start from
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    /// Target temperature, K
    #[arg(long)]
    pub temp: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Time step, fs
    #[arg(long)]
    pub dt: Option<f64>,
    /// Berendsen coupling time, fs
    #[arg(long)]
    pub tau: Option<f64>,
    /// Microcanonical run without a thermostat
    #[arg(long)]
    pub nve: bool,
    /// Run an ensemble of this many consecutive seeds
    #[arg(long)]
    pub seeds: Option<u64>,
    /// First (or only) seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Steps between saved frames
    #[arg(long)]
    pub stride: Option<usize>,
    /// Re-score every trajectory on this surface and record a verdict
    #[arg(long)]
    pub reference: Option<Pes>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ValidateArgs {
    /// Trajectory XYZ written by `md`
    #[arg(long)]
    pub traj: PathBuf,
    /// Reference surface
    #[arg(long)]
    pub pes: Pes,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub from: PathBuf,
    /// Test set, extended XYZ
    #[arg(long)]
    pub test: PathBuf,
    /// Restrict --test to the test.idx indices in this directory
    #[arg(long)]
    pub split_dir: Option<PathBuf>,
    /// Also write per-water energy histograms
    #[arg(long)]
    pub hist: bool,
    #[arg(long, default_value_t = nnpforge::evaluation::DEFAULT_BINS)]
    pub bins: usize,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct CompareArgs {
    /// JSON list of {checkpoint, test, split_dir?, label?}; relative paths
    /// resolve against the file's directory
    #[arg(long)]
    pub rows: PathBuf,
    /// Host description for the table (defaults to architecture and core count)
    #[arg(long)]
    pub host: Option<String>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct RerunArgs {
    /// manifest.json of an earlier run
    #[arg(long)]
    pub manifest: PathBuf,
}

/// Parses `3-8` or `3,5,7`.
pub fn parse_sizes(s: &str) -> Option<Vec<usize>> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once('-') {
        let (a, b): (usize, usize) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
        return (a <= b).then(|| (a..=b).collect());
    }
    s.split(',').map(|t| t.trim().parse().ok()).collect()
}

/// Parses three comma-separated fractions.
pub fn parse_fractions(s: &str) -> Option<(f64, f64, f64)> {
    let v: Vec<f64> = s.split(',').map(|t| t.trim().parse().ok()).collect::<Option<_>>()?;
    match v[..] {
        [a, b, c] => Some((a, b, c)),
        _ => None,
    }
}

/// `rows` entries resolve relative to the rows file.
pub(crate) fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
