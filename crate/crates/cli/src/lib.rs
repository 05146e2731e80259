//! The `nnpforge` command line: data generation, training, dynamics,
//! trajectory validation and evaluation. Every command writes its artifacts,
//! a `manifest.json` and a `log.txt` into one run directory, and any run can
//! be repeated from its manifest with `rerun`.

pub mod args;
mod commands;
pub mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nnpforge::training::{dataset_tag, Provenance, RunManifest};
use nnpforge::chemdata::ClusterSet;
use serde_json::json;

pub use args::{Cli, Command};
pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] nnpforge::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("rerun differs from its manifest: {0}")]
    Mismatch(String),
}

impl CliError {
    /// 2 for bad input, 3 for numerical failure, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Core(nnpforge::Error::Config(_)) => 2,
            CliError::Core(e) if e.is_numerical() => 3,
            _ => 1,
        }
    }
}

pub(crate) fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Artifacts and bookkeeping of one command invocation.
pub struct Run {
    pub dir: PathBuf,
    seeds: BTreeMap<String, u64>,
    inputs: BTreeMap<String, String>,
    dataset_tags: BTreeMap<String, String>,
    provenance: Option<Provenance>,
    outputs: Vec<String>,
    log: Vec<String>,
}

impl Run {
    fn new(dir: PathBuf) -> Self {
        Run {
            dir,
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            dataset_tags: BTreeMap::new(),
            provenance: None,
            outputs: Vec::new(),
            log: Vec::new(),
        }
    }

    pub(crate) fn note(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        println!("{msg}");
        self.log.push(msg);
    }

    pub(crate) fn seed(&mut self, role: &str, seed: u64) {
        self.seeds.insert(role.into(), seed);
    }

    pub(crate) fn input(&mut self, role: &str, path: &Path) {
        self.inputs.insert(role.into(), path.display().to_string());
    }

    pub(crate) fn dataset(&mut self, role: &str, path: &Path, set: &ClusterSet) {
        self.input(role, path);
        self.dataset_tags.insert(role.into(), dataset_tag(set));
    }

    pub(crate) fn provenance(&mut self, p: Provenance) {
        self.provenance = Some(p);
    }

    /// Writes an artifact into the run directory and tracks its hash.
    pub(crate) fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes)?;
        self.track(name);
        Ok(path)
    }

    /// Tracks a file some library call already wrote into the run directory.
    pub(crate) fn track(&mut self, name: &str) {
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.into());
        }
    }

    fn finish(self, cmd: &Command, cfg: &RunConfig) -> Result<RunManifest, CliError> {
        let config = json!({ "command": cmd, "resolved": cfg });
        let mut m = RunManifest::new(cmd.name(), config);
        m.seeds = self.seeds;
        m.inputs = self.inputs;
        m.dataset_tags = self.dataset_tags;
        m.provenance = self.provenance;
        for name in &self.outputs {
            m.record_output(self.dir.join(name))?;
        }
        m.save(self.dir.join("manifest.json"))?;
        let mut log = self.log.join("\n");
        log.push('\n');
        std::fs::write(self.dir.join("log.txt"), log)?;
        Ok(m)
    }
}

fn default_dir(command: &str) -> PathBuf {
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    let base = PathBuf::from("runs").join(format!("{stamp}-{command}"));
    let mut dir = base.clone();
    let mut k = 1;
    while dir.exists() {
        k += 1;
        dir = PathBuf::from(format!("{}-{k}", base.display()));
    }
    dir
}

/// Runs one command with `cfg` as the base configuration and returns the
/// run directory and manifest.
pub fn execute(mut cmd: Command, mut cfg: RunConfig, out: Option<PathBuf>) -> Result<(PathBuf, RunManifest), CliError> {
    if let Command::Rerun(r) = &cmd {
        return rerun(&r.manifest, out);
    }
    cmd.absolutize();
    let dir = out.unwrap_or_else(|| default_dir(cmd.name()));
    std::fs::create_dir_all(&dir)?;
    let mut run = Run::new(dir.clone());
    match &mut cmd {
        Command::GenData(a) => commands::gen_data(a, &mut cfg, &mut run)?,
        Command::Pretrain(a) => commands::pretrain(a, &mut cfg, &mut run)?,
        Command::Finetune(a) => commands::finetune(a, &mut cfg, &mut run)?,
        Command::Md(a) => commands::md(a, &mut cfg, &mut run)?,
        Command::Validate(a) => commands::validate(a, &mut cfg, &mut run)?,
        Command::Eval(a) => commands::eval(a, &mut cfg, &mut run)?,
        Command::Compare(a) => commands::compare(a, &mut cfg, &mut run)?,
        Command::Rerun(_) => unreachable!(),
    }
    let m = run.finish(&cmd, &cfg)?;
    Ok((dir, m))
}

/// Re-executes the command recorded in a manifest and checks that every
/// output hash matches.
pub fn rerun(manifest: &Path, out: Option<PathBuf>) -> Result<(PathBuf, RunManifest), CliError> {
    let old = RunManifest::load(manifest)?;
    let bad = |e: serde_json::Error| usage(format!("manifest {}: {e}", manifest.display()));
    let cmd: Command = serde_json::from_value(old.config["command"].clone()).map_err(bad)?;
    let cfg: RunConfig = serde_json::from_value(old.config["resolved"].clone()).map_err(bad)?;
    if matches!(cmd, Command::Rerun(_)) {
        return Err(usage("a rerun manifest cannot itself be rerun"));
    }
    let (dir, new) = execute(cmd, cfg, out)?;
    let mut diffs = Vec::new();
    if new.config_hash != old.config_hash {
        diffs.push(format!("config hash {} vs {}", new.config_hash, old.config_hash));
    }
    for (name, h) in &old.outputs {
        match new.outputs.get(name) {
            Some(n) if n == h => {}
            Some(n) => diffs.push(format!("{name}: {n} vs {h}")),
            None => diffs.push(format!("{name}: missing")),
        }
    }
    for name in new.outputs.keys().filter(|k| !old.outputs.contains_key(*k)) {
        diffs.push(format!("{name}: not in the original run"));
    }
    if !diffs.is_empty() {
        return Err(CliError::Mismatch(diffs.join("; ")));
    }
    println!("rerun: {} outputs identical", old.outputs.len());
    Ok((dir, new))
}

/// Entry point behind the binary.
pub fn run(cli: Cli) -> Result<(PathBuf, RunManifest), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        // Fails only if the pool already exists, e.g. in-process reuse.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    execute(cli.command, cfg, cli.out)
}
