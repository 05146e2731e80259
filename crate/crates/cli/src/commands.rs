use std::path::{Path, PathBuf};

use nnpforge::active::{active_training_loop, SamplingPools};
use nnpforge::chemdata::{read_split_files, read_xyz_file, split_dataset, write_split_files, write_xyz, ClusterSet, SplitIndices};
use nnpforge::dynamics::{
    energy_drift, masses_of, run_ensemble, trajectory_xyz, validate_trajectory, validation_csv, Ensemble, ForceProvider,
    Frame, RunStatus, Trajectory, TrajectorySidecar,
};
use nnpforge::evaluation::{comparison_table, energy_histogram, evaluate_model, union_range, ComparisonRow};
use nnpforge::surrogate::{generate_minima, generate_nonminima, relabel, MinimaConfig, NonMinimaConfig, Surrogate};
use nnpforge::training::{
    dataset_tag, history_csv, load_checkpoint, save_checkpoint, train, Checkpoint, LossConfig, ModelInit, Schedule,
};
use serde::Deserialize;
use serde_json::json;

use crate::args::{parse_fractions, parse_sizes, resolve, CompareArgs, EvalArgs, FinetuneArgs, GenDataArgs, MdArgs, TrainArgs, ValidateArgs};
use crate::{usage, CliError, Run, RunConfig};

type Result<T> = std::result::Result<T, CliError>;

const SPLIT_FILES: [&str; 3] = ["train.idx", "val.idx", "test.idx"];

fn fractions(s: &str) -> Result<(f64, f64, f64)> {
    parse_fractions(s).ok_or_else(|| usage(format!("--split expects three comma-separated fractions, got `{s}`")))
}

fn write_split(run: &mut Run, split: &SplitIndices) -> Result<()> {
    write_split_files(&run.dir, split)?;
    SPLIT_FILES.iter().for_each(|f| run.track(f));
    Ok(())
}

fn mean_per_water(set: &ClusterSet) -> f64 {
    let v: Vec<f64> = set.clusters.iter().filter_map(|c| Some(c.energy? / c.n_waters().max(1) as f64)).collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

pub fn gen_data(a: &GenDataArgs, cfg: &mut RunConfig, run: &mut Run) -> Result<()> {
    let sizes = parse_sizes(&a.sizes).ok_or_else(|| usage(format!("--sizes expects `3-8` or `3,5,7`, got `{}`", a.sizes)))?;
    if a.count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    let split_fr = fractions(&a.split)?;
    run.seed("data", a.seed);
    let minima_cfg = |count| MinimaConfig { pes: a.pes, sizes: sizes.clone(), count, seed: a.seed, ..Default::default() };

    let set = if let Some(src) = &a.relabel {
        let input = read_xyz_file(src)?;
        run.dataset("relabel", src, &input);
        relabel(&cfg.surrogate, a.pes, &input)?
    } else if a.nonminima {
        let sources = a.count.div_ceil(a.frames_per_run.max(1));
        let minima = match &a.minima {
            Some(p) => {
                let m = read_xyz_file(p)?;
                run.dataset("minima", p, &m);
                m.subset(&(0..sources.min(m.len())).collect::<Vec<_>>())
            }
            None => generate_minima(&cfg.surrogate, &minima_cfg(sources))?,
        };
        let nm = NonMinimaConfig {
            temperatures: a.temps.clone(),
            steps: a.steps,
            frames_per_run: a.frames_per_run,
            seed: a.seed,
            ..Default::default()
        };
        let mut set = generate_nonminima(&cfg.surrogate, a.pes, &minima, &nm)?;
        set.clusters.truncate(a.count);
        set
    } else {
        generate_minima(&cfg.surrogate, &minima_cfg(a.count))?
    };

    run.write("data.xyz", write_xyz(&set)?)?;
    let split = split_dataset(set.len(), split_fr, a.seed)?;
    write_split(run, &split)?;
    run.note(format!(
        "{} clusters on PES-{} ({}), mean E/H2O {:.4} kcal/mol, tag {}",
        set.len(),
        a.pes.label(),
        if set.has_forces() { "energies and forces" } else { "energies" },
        mean_per_water(&set),
        dataset_tag(&set)
    ));
    Ok(())
}

fn load_training_data(a: &TrainArgs, run: &mut Run) -> Result<(ClusterSet, SplitIndices)> {
    let data = read_xyz_file(&a.data)?;
    run.dataset("data", &a.data, &data);
    let split = match &a.split_dir {
        Some(d) => {
            run.input("split", d);
            read_split_files(d)?
        }
        None => split_dataset(data.len(), fractions(&a.split)?, a.seed.unwrap_or(0))?,
    };
    Ok((data, split))
}

fn resolve_schedule(a: &TrainArgs, cfg: &mut RunConfig, default: fn() -> Schedule) -> Schedule {
    let mut s = cfg.schedule.clone().unwrap_or_else(default);
    if let Some(e) = a.epochs {
        s.epochs = e;
    }
    if let Some(seed) = a.seed {
        s.seed = seed;
    }
    if let Some(lr) = a.lr {
        s.lr = lr;
    }
    if let Some(b) = a.batch_size {
        s.batch_size = b;
    }
    cfg.schedule = Some(s.clone());
    s
}

fn resolve_loss(a: &TrainArgs, cfg: &mut RunConfig, default: LossConfig) -> Result<LossConfig> {
    let mut l = cfg.loss.unwrap_or(default);
    if let Some(w) = a.force_weight {
        if !(0.0..=1.0).contains(&w) {
            return Err(usage(format!("--force-weight must lie in [0, 1], got {w}")));
        }
        l.force_weight = w;
        l.energy_weight = 1.0 - w;
    }
    cfg.loss = Some(l);
    Ok(l)
}

fn write_training_outputs(ck: &Checkpoint, split: &SplitIndices, run: &mut Run) -> Result<()> {
    save_checkpoint(ck, run.dir.join("checkpoint.nnpf"))?;
    run.track("checkpoint.nnpf");
    run.write("history.csv", history_csv(&ck.history))?;
    write_split(run, split)?;
    run.provenance(ck.provenance.clone());
    let best = ck.history.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
    run.note(format!(
        "checkpoint {} ({}), {} epochs, best validation loss {best:.6}, {} training clusters",
        ck.id(),
        ck.provenance.label(),
        ck.history.len() - 1,
        ck.n_train
    ));
    Ok(())
}

pub fn pretrain(a: &TrainArgs, cfg: &mut RunConfig, run: &mut Run) -> Result<()> {
    let (data, split) = load_training_data(a, run)?;
    let schedule = resolve_schedule(a, cfg, Schedule::default);
    let loss = resolve_loss(a, cfg, LossConfig::energy_only())?;
    run.seed("init", schedule.seed);
    run.seed("shuffle", schedule.seed);
    let ck = train(&data, &split, ModelInit::Scratch { config: &cfg.model, seed: schedule.seed }, &loss, &schedule)?;
    write_training_outputs(&ck, &split, run)
}

pub fn finetune(a: &FinetuneArgs, cfg: &mut RunConfig, run: &mut Run) -> Result<()> {
    let parent = load_checkpoint(&a.from)?;
    run.input("from", &a.from);
    let (data, split) = load_training_data(&a.train, run)?;
    let schedule = resolve_schedule(&a.train, cfg, Schedule::finetune);
    let default_loss = if data.has_forces() { LossConfig::with_forces() } else { LossConfig::energy_only() };
    let loss = resolve_loss(&a.train, cfg, default_loss)?;
    cfg.model = parent.params.config.clone();
    run.seed("shuffle", schedule.seed);
    let ck = if a.active {
        let s = &mut cfg.sampling;
        if let Some(p) = a.p_tol {
            s.p_tol = p;
        }
        if let Some(r) = a.round_period {
            s.round_period = r;
        }
        if let Some(c) = a.score_count {
            s.score_count = c;
        }
        if let Some(f) = a.initial_fraction {
            s.initial_fraction = f;
        }
        s.validate()?;
        run.seed("sampling", s.seed);
        let pools = SamplingPools::from_training_indices(&split.train, s.initial_fraction, s.seed)?;
        let (ck, pools) = active_training_loop(&parent, &data, &split, pools, &loss, &schedule, s)?;
        run.write("promotions.csv", pools.log_csv())?;
        run.write("pools.json", serde_json::to_string_pretty(&pools).map_err(nnpforge::Error::from)?)?;
        let promoted = pools.log.iter().filter(|r| r.promoted).count();
        run.note(format!("{} sampling rounds, {promoted} of {} scored samples promoted", pools.rounds, pools.log.len()));
        ck
    } else {
        nnpforge::training::finetune(&parent, &data, &split, &loss, &schedule)?
    };
    write_training_outputs(&ck, &split, run)
}

pub fn md(a: &MdArgs, cfg: &mut RunConfig, run: &mut Run) -> Result<()> {
    let provider: Box<dyn ForceProvider> = match (&a.from, a.pes) {
        (Some(p), _) => {
            run.input("from", p);
            Box::new(load_checkpoint(p)?)
        }
        (None, Some(pes)) => Box::new(Surrogate::new(cfg.surrogate.clone(), pes)?),
        (None, None) => return Err(usage("md needs --from or --pes")),
    };
    let clusters = read_xyz_file(&a.cluster)?;
    run.dataset("cluster", &a.cluster, &clusters);
    let start = clusters
        .clusters
        .get(a.frame)
        .ok_or_else(|| usage(format!("--frame {} out of range ({} frames)", a.frame, clusters.len())))?;

    let md = &mut cfg.md;
    if let Some(t) = a.temp {
        md.temperature = t;
    }
    if let Some(n) = a.steps {
        md.n_steps = n;
    }
    if let Some(dt) = a.dt {
        md.dt = dt;
    }
    if let Some(tau) = a.tau {
        md.tau = tau;
    }
    if a.nve {
        md.mode = Ensemble::Nve;
    }
    if let Some(s) = a.stride {
        md.snapshot_stride = s;
    }
    if let Some(s) = a.seed {
        md.seed = s;
    }
    let seeds: Vec<u64> = (0..a.seeds.unwrap_or(1)).map(|i| md.seed + i).collect();
    run.seed("md", md.seed);
    let reference = a.reference.map(|p| Surrogate::new(cfg.surrogate.clone(), p)).transpose()?;

    let trajs = run_ensemble(provider.as_ref(), start, &cfg.md, &seeds)?;
    let mut summary = Vec::new();
    for (t, &seed) in trajs.iter().zip(&seeds) {
        run.write(&format!("traj-seed{seed}.xyz"), trajectory_xyz(t)?)?;
        let verdict = match &reference {
            Some(r) => {
                let v = validate_trajectory(t, r)?;
                run.write(&format!("validation-seed{seed}.csv"), validation_csv(&v))?;
                Some(v.verdict)
            }
            None => None,
        };
        let side = TrajectorySidecar::new(t, verdict);
        run.write(&format!("traj-seed{seed}.json"), serde_json::to_string_pretty(&side).map_err(nnpforge::Error::from)?)?;
        let drift = energy_drift(&t.total_energies());
        run.note(format!(
            "seed {seed}: {} frames, {}, verdict {}, total-energy drift {drift:.3e}",
            t.frames.len(),
            match &t.status {
                RunStatus::Completed => "completed".to_string(),
                RunStatus::Unstable { step, reason } => format!("unstable at step {step} ({reason})"),
            },
            verdict.map(|v| format!("{v:?}").to_lowercase()).unwrap_or_else(|| "-".into()),
        ));
        summary.push(json!({ "seed": seed, "n_frames": t.frames.len(), "status": t.status, "verdict": verdict, "energy_drift": drift }));
    }
    run.write("summary.json", serde_json::to_string_pretty(&summary).map_err(nnpforge::Error::from)?)?;
    Ok(())
}

/// Rebuilds a trajectory from its XYZ file and optional JSON sidecar.
pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let set = read_xyz_file(path)?;
    let first = set.clusters.first().ok_or_else(|| usage(format!("{} holds no frames", path.display())))?;
    let atomic_numbers = first.atomic_numbers.clone();
    let masses = masses_of(&atomic_numbers)?;
    let tag = |c: &nnpforge::chemdata::Cluster, k: &str| c.tags.get(k).and_then(|v| v.parse::<f64>().ok());
    let frames = set
        .clusters
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let temperature = tag(c, "temperature").unwrap_or(0.0);
            Frame {
                step: tag(c, "step").map(|s| s as usize).unwrap_or(i),
                positions: c.positions.clone(),
                energy: c.energy.unwrap_or(f64::NAN),
                forces: c.forces.clone().unwrap_or_else(|| vec![[0.0; 3]; c.n_atoms()]),
                temperature,
                // 3N − 3 degrees of freedom, as in the integrator.
                kinetic_energy: 0.5
                    * (3 * masses.len()).saturating_sub(3) as f64
                    * nnpforge::dynamics::BOLTZMANN
                    * temperature,
            }
        })
        .collect();
    let sidecar: Option<TrajectorySidecar> = match std::fs::read_to_string(path.with_extension("json")) {
        Ok(s) => Some(serde_json::from_str(&s).map_err(nnpforge::Error::from)?),
        Err(_) => None,
    };
    Ok(Trajectory {
        atomic_numbers,
        frames,
        config: sidecar.as_ref().map(|s| s.config.clone()).unwrap_or_default(),
        provenance: sidecar.as_ref().map(|s| s.provenance.clone()).unwrap_or_else(|| "unknown".into()),
        status: sidecar.map(|s| s.status).unwrap_or(RunStatus::Completed),
    })
}

pub fn validate(a: &ValidateArgs, cfg: &mut RunConfig, run: &mut Run) -> Result<()> {
    let traj = read_trajectory(&a.traj)?;
    run.input("traj", &a.traj);
    let reference = Surrogate::new(cfg.surrogate.clone(), a.pes)?;
    let v = validate_trajectory(&traj, &reference)?;
    run.write("validation.csv", validation_csv(&v))?;
    let first_unbound = v.e_reference.iter().position(|&e| e >= 0.0).map(|i| v.steps[i]);
    let report = json!({
        "verdict": v.verdict,
        "provider": traj.provenance,
        "reference": reference.describe(),
        "n_frames": v.steps.len(),
        "first_unbound_step": first_unbound,
        "max_e_reference": v.e_reference.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    });
    run.write("validation.json", serde_json::to_string_pretty(&report).map_err(nnpforge::Error::from)?)?;
    run.note(format!("verdict {:?} over {} frames", v.verdict, v.steps.len()).to_lowercase());
    Ok(())
}

fn load_test(test: &Path, split_dir: Option<&Path>, run: Option<&mut Run>) -> Result<ClusterSet> {
    let set = read_xyz_file(test)?;
    let set = match split_dir {
        Some(d) => {
            let idx = read_split_files(d)?.test;
            if let Some(&bad) = idx.iter().find(|&&i| i >= set.len()) {
                return Err(usage(format!("test index {bad} out of range for {} clusters", set.len())));
            }
            set.subset(&idx)
        }
        None => set,
    };
    if let Some(run) = run {
        run.dataset("test", test, &set);
    }
    Ok(set)
}

pub fn eval(a: &EvalArgs, _cfg: &mut RunConfig, run: &mut Run) -> Result<()> {
    let ck = load_checkpoint(&a.from)?;
    run.input("from", &a.from);
    let test = load_test(&a.test, a.split_dir.as_deref(), Some(run))?;
    let report = evaluate_model(&ck, &test, &dataset_tag(&test))?;
    run.write("report.json", serde_json::to_string_pretty(&report).map_err(nnpforge::Error::from)?)?;
    let forces = match &report.forces {
        Some(f) => format!(", F_mag {:.4}, F_ang {:.4}", f.f_mag_mean, f.f_ang_mean),
        None => String::new(),
    };
    run.note(format!("{} samples: E_H2O MAE {:.4}{forces}", report.n_samples, report.e_h2o_mae));
    for n in &report.notes {
        run.note(format!("note: {n}"));
    }
    if a.hist {
        let (lo, hi) = union_range(&[&report.e_h2o_true, &report.e_h2o_pred]);
        run.write("hist_true.csv", energy_histogram(&report.e_h2o_true, lo, hi, a.bins)?.to_csv())?;
        run.write("hist_pred.csv", energy_histogram(&report.e_h2o_pred, lo, hi, a.bins)?.to_csv())?;
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RowSpec {
    checkpoint: PathBuf,
    test: PathBuf,
    #[serde(default)]
    split_dir: Option<PathBuf>,
    #[serde(default)]
    label: Option<String>,
}

fn default_host() -> String {
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!("{} {cores}-core", std::env::consts::ARCH)
}

pub fn compare(a: &mut CompareArgs, _cfg: &mut RunConfig, run: &mut Run) -> Result<()> {
    let text = std::fs::read_to_string(&a.rows)?;
    let specs: Vec<RowSpec> =
        serde_json::from_str(&text).map_err(|e| usage(format!("rows {}: {e}", a.rows.display())))?;
    run.input("rows", &a.rows);
    let base = a.rows.parent().unwrap_or(Path::new("."));
    let host = a.host.get_or_insert_with(default_host).clone();
    let mut rows = Vec::new();
    for (k, s) in specs.iter().enumerate() {
        let ck_path = resolve(base, &s.checkpoint);
        let ck = load_checkpoint(&ck_path)?;
        run.input(&format!("row{k}.checkpoint"), &ck_path);
        let test_path = resolve(base, &s.test);
        let split = s.split_dir.as_ref().map(|d| resolve(base, d));
        let test = load_test(&test_path, split.as_deref(), None)?;
        run.dataset(&format!("row{k}.test"), &test_path, &test);
        let report = evaluate_model(&ck, &test, &dataset_tag(&test))?;
        rows.push(ComparisonRow {
            initialization: s.label.clone().unwrap_or_else(|| ck.provenance.label().to_string()),
            n_train: ck.n_train,
            report,
        });
    }
    let table = comparison_table(&rows, &host);
    run.write("comparison.md", &table)?;
    run.write("comparison.json", serde_json::to_string_pretty(&rows).map_err(nnpforge::Error::from)?)?;
    run.note(table.trim_end().to_string());
    Ok(())
}
