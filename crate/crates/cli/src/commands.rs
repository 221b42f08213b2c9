use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use snn_actor::actor::{ActorParams, DenseActor};
use snn_actor::checkpoint::{load_checkpoint, Checkpoint};
use snn_actor::energy::{
    self, count_ops, estimate_energy, format_cell, mean_std, record_firing_rates, task_preset, Arch, FiringReport,
};
use snn_actor::envs::{make_env, serve, serve_tcp, Env};
use snn_actor::grad::BackwardOptions;
use snn_actor::gradcheck::{run_suite, Profile, FD_TOL, ORACLE_TOL};
use snn_actor::math::{RngStream, StreamId};
use snn_actor::td3::{self, evaluate, Policy, RunLog, RunOptions, Td3Error, RUN_LOG_FILE};

use crate::config::{Network, RunConfig, SNAPSHOT_FILE};
use crate::{CliError, EnergyArgs, EvalArgs, GradcheckArgs, ReportArgs, ServeArgs, TrainArgs};

pub const NONFINITE_DUMP: &str = "nonfinite_batch.json";

fn write_out(out: &mut dyn Write, text: std::fmt::Arguments) -> Result<(), CliError> {
    out.write_fmt(text).map_err(CliError::io("<stdout>"))
}

macro_rules! say {
    ($out:expr, $($arg:tt)*) => {
        write_out($out, format_args!("{}\n", format_args!($($arg)*)))
    };
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

fn run_seed<P: Policy>(
    actor: P,
    cfg: &RunConfig,
    seed: u64,
    dir: &Path,
) -> Result<(RunLog, u64), CliError> {
    let mut env = cfg.open_env()?;
    let mut eval_env = cfg.open_env()?;
    let opts = RunOptions {
        seed,
        strict: cfg.run.strict,
        out_dir: Some(dir.to_path_buf()),
    };
    match td3::train(actor, env.as_mut(), eval_env.as_mut(), &cfg.td3, &opts) {
        Ok(r) => Ok((r.log, r.env_steps)),
        Err(Td3Error::NonFinite { what, update, dump }) => {
            let path = dir.join(NONFINITE_DUMP);
            fs::write(&path, &dump).map_err(CliError::io(&path))?;
            Err(CliError::Failed(format!(
                "non-finite {what} at update {update}; batch written to {}",
                path.display()
            )))
        }
        Err(e) => Err(e.into()),
    }
}

pub fn train(cfg: &mut RunConfig, args: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if let Some(env) = &args.env {
        cfg.run.env = env.clone();
    }
    if let Some(n) = args.network {
        cfg.run.network = n;
    }
    if let Some(x) = args.total_steps {
        cfg.td3.total_steps = x;
    }
    if let Some(x) = args.warmup_steps {
        cfg.td3.warmup_steps = x;
    }
    if let Some(x) = args.eval_every {
        cfg.td3.eval_every = x;
    }
    cfg.validate()?;
    for &seed in &cfg.run.seeds {
        let dir = seed_dir(&cfg.run.out, seed);
        fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
        let mut snapshot = cfg.clone();
        snapshot.run.seeds = vec![seed];
        let snap_path = dir.join(SNAPSHOT_FILE);
        fs::write(&snap_path, snapshot.to_toml()).map_err(CliError::io(&snap_path))?;

        let spec = cfg.open_env()?.spec();
        let mut rng = RngStream::new(seed, StreamId::Init);
        let (log, steps) = match cfg.run.network {
            Network::IlcSan => run_seed(ActorParams::new(spec, cfg.actor.clone(), &mut rng)?, cfg, seed, &dir)?,
            Network::Dense => run_seed(DenseActor::new(spec, &cfg.dense.hidden, &mut rng)?, cfg, seed, &dir)?,
        };
        match log.max_eval() {
            Some(best) => say!(
                out,
                "seed {seed}: {steps} steps, {} evaluations, best mean return {best:.2} -> {}",
                log.rows.len(),
                dir.display()
            )?,
            None => say!(out, "seed {seed}: {steps} steps, no evaluations -> {}", dir.display())?,
        }
    }
    Ok(())
}

fn evaluate_checkpoint(ck: &Checkpoint, env: &mut dyn Env, episodes: usize, seed: u64) -> Result<f64, CliError> {
    if env.spec() != *ck.spec() {
        return Err(CliError::Env(format!(
            "checkpoint expects {:?}, environment reports {:?}",
            ck.spec(),
            env.spec()
        )));
    }
    Ok(match ck {
        Checkpoint::Spiking(p) => evaluate(p, env, episodes, seed)?,
        Checkpoint::Dense(d) => evaluate(d, env, episodes, seed)?,
    })
}

pub fn eval(cfg: &mut RunConfig, args: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if let Some(env) = &args.env {
        cfg.run.env = env.clone();
    }
    cfg.validate()?;
    let ck = load_checkpoint(&args.checkpoint)?;
    let episodes = args.episodes.unwrap_or(cfg.td3.eval_episodes);
    let seed = cfg.run.seeds[0];
    let mut env = cfg.open_env()?;
    let mean = evaluate_checkpoint(&ck, env.as_mut(), episodes, seed)?;
    say!(out, "mean return over {episodes} episodes: {mean:.4}")
}

pub fn gradcheck(
    cfg: &RunConfig,
    args: &GradcheckArgs,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), CliError> {
    let profile = Profile::by_name(&args.profile)
        .ok_or_else(|| CliError::Config(format!("unknown profile {:?}; use tiny or small", args.profile)))?;
    let opts = BackwardOptions {
        surrogate_scale: if args.corrupt_derivative { 1.5 } else { 1.0 },
    };
    if args.trials == 0 {
        write_out(err, format_args!("warning: zero trials requested, nothing was checked\n"))?;
    }
    let r = run_suite(&profile, args.trials, cfg.run.seeds[0], opts)?;
    let mark = |ok: bool| if ok { "ok" } else { "FAIL" };
    say!(out, "trials: {}", r.trials)?;
    say!(out, "{:<24} max rel {:.3e} (< {ORACLE_TOL:e}) {}", "backward vs oracle", r.oracle_max, mark(r.oracle_ok()))?;
    for (name, e) in [
        ("critic vs FD", r.critic_fd_max),
        ("stimulation vs FD", r.stimulation_fd_max),
        ("decoder vs FD", r.decoder_fd_max),
        ("full network vs FD", r.full_fd_max),
    ] {
        say!(out, "{name:<24} max rel {e:.3e} (< {FD_TOL:e}) {}", mark(e < FD_TOL))?;
    }
    say!(out, "smooth full-network passes: {}", r.full_fd_passes)?;
    if r.passed() {
        Ok(())
    } else {
        Err(CliError::Failed("gradient check failed".into()))
    }
}

fn read_rates(path: &Path, t_len: usize) -> Result<FiringReport, CliError> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    } else {
        Ok(FiringReport::from_csv(&text, t_len)?)
    }
}

pub fn energy(cfg: &mut RunConfig, args: &EnergyArgs, write_files: bool, out: &mut dyn Write) -> Result<(), CliError> {
    if let Some(env) = &args.env {
        cfg.run.env = env.clone();
    }
    let (arch, fr) = if let Some(path) = &args.checkpoint {
        let ck = load_checkpoint(path)?;
        match ck {
            Checkpoint::Spiking(p) => {
                let mut env = cfg.open_env()?;
                let fr = record_firing_rates(&p, env.as_mut(), cfg.run.seeds[0])?;
                (Arch::of_actor(&p), fr)
            }
            Checkpoint::Dense(d) => (Arch::of_dense(&d), FiringReport::from_rates(1, &[])),
        }
    } else {
        let task = args
            .task
            .as_deref()
            .ok_or_else(|| CliError::Config("table-only mode needs --task (or pass --checkpoint)".into()))?;
        let preset = task_preset(task)?;
        let a = &cfg.actor;
        let spiking = |base: Arch| Arch {
            p_in: a.p_in,
            p_out: a.p_out,
            hidden: a.hidden.clone(),
            ..base
        };
        let arch = match args.arch.as_str() {
            "ilc_san" => Arch {
                intra: a.intra,
                ..spiking(Arch::ilc_san(preset.n, preset.m))
            },
            "popsan" => spiking(Arch::popsan(preset.n, preset.m)),
            "dense" => Arch {
                hidden: cfg.dense.hidden.clone(),
                ..Arch::dense(preset.n, preset.m)
            },
            other => return Err(CliError::Config(format!("unknown --arch {other:?}; use ilc_san, popsan or dense"))),
        };
        let fr = match &args.rates {
            Some(p) => read_rates(p, a.t_len)?,
            None if arch.kind == energy::NetKind::Dense => FiringReport::from_rates(a.t_len, &[]),
            None => return Err(CliError::Config("table-only mode needs --rates for spiking architectures".into())),
        };
        (arch, fr)
    };
    let ops = count_ops(&arch, &fr, fr.t_len)?;
    let e = estimate_energy(&ops);
    for r in &fr.layers {
        say!(out, "fr {:<8} {:.4}", r.layer, r.fr)?;
    }
    for l in &ops.layers {
        say!(out, "ops {:<8} {:>10} {:?}", l.layer, l.count, l.kind)?;
    }
    say!(
        out,
        "total: {} SOP, {} FLOP, {} nJ per inference",
        ops.total_sop,
        ops.total_flop,
        e.display_nj()
    )?;
    if write_files {
        let dir = &cfg.run.out;
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        let json = serde_json::json!({ "arch": arch, "firing": fr, "ops": ops, "energy": e });
        for (name, body) in [
            ("firing_rates.csv", fr.to_csv()),
            ("ops.csv", ops.to_csv()),
            ("energy.csv", e.to_csv()),
            ("energy_report.json", serde_json::to_string_pretty(&json).expect("report serializes")),
        ] {
            let p = dir.join(name);
            fs::write(&p, body).map_err(CliError::io(&p))?;
        }
    }
    Ok(())
}

/// Seed directories under `path`: itself if it holds a run log, otherwise
/// every immediate subdirectory that does.
fn seed_dirs(path: &Path) -> Result<Vec<PathBuf>, CliError> {
    if path.join(RUN_LOG_FILE).is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(path)
        .map_err(CliError::io(path))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(RUN_LOG_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::Config(format!("{} contains no {RUN_LOG_FILE}", path.display())));
    }
    Ok(dirs)
}

fn task_of(seed_dir: &Path, fallback: &Path) -> String {
    RunConfig::load(&seed_dir.join(SNAPSHOT_FILE))
        .map(|c| c.run.env)
        .unwrap_or_else(|_| fallback.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default())
}

/// Per task, the best evaluation of every seed.
fn collect_maxima(paths: &[PathBuf], err: &mut dyn Write) -> Result<BTreeMap<String, Vec<f64>>, CliError> {
    let mut by_task: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for path in paths {
        for dir in seed_dirs(path)? {
            let log_path = dir.join(RUN_LOG_FILE);
            let text = fs::read_to_string(&log_path).map_err(CliError::io(&log_path))?;
            let log = RunLog::from_csv(&text).map_err(|e| CliError::Config(format!("{}: {e}", log_path.display())))?;
            match log.max_eval() {
                Some(best) => by_task.entry(task_of(&dir, path)).or_default().push(best),
                None => write_out(err, format_args!("warning: {} has no evaluations, skipped\n", log_path.display()))?,
            }
        }
    }
    Ok(by_task)
}

pub fn report(
    cfg: &RunConfig,
    args: &ReportArgs,
    write_files: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), CliError> {
    let runs = collect_maxima(&args.runs, err)?;
    let base = collect_maxima(&args.baseline, err)?;
    let mut csv = String::from("task,seeds,mean,std,cell,baseline_cell,ratio\n");
    let mut pairs = Vec::new();
    for (task, maxima) in &runs {
        let (mean, std) = mean_std(maxima);
        let cell = format_cell(mean, std);
        let (bcell, ratio) = match base.get(task) {
            Some(b) => {
                let (bm, bs) = mean_std(b);
                pairs.push((task.clone(), mean, bm));
                (format_cell(bm, bs), if bm != 0.0 { format!("{:.4}", mean / bm) } else { String::new() })
            }
            None => {
                if !args.baseline.is_empty() {
                    write_out(err, format_args!("warning: no baseline for task {task}; excluded from APR\n"))?;
                }
                (String::new(), String::new())
            }
        };
        say!(out, "{task:<24} {cell:>14}  ({} seeds){}", maxima.len(), if bcell.is_empty() { String::new() } else { format!("  baseline {bcell}") })?;
        csv.push_str(&format!("{task},{},{mean},{std},{cell},{bcell},{ratio}\n", maxima.len()));
    }
    if !args.baseline.is_empty() {
        if pairs.is_empty() {
            write_out(err, format_args!("warning: no task has both runs and baselines; APR undefined\n"))?;
        } else {
            let value = energy::apr(&pairs)?;
            say!(out, "APR over {} tasks: {value:.2}%", pairs.len())?;
            csv.push_str(&format!("APR,{},,,{value:.2}%,,\n", pairs.len()));
        }
    }
    if write_files {
        let dir = &cfg.run.out;
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        let p = dir.join("report.csv");
        fs::write(&p, csv).map_err(CliError::io(&p))?;
    }
    Ok(())
}

pub fn serve_env(args: &ServeArgs) -> Result<(), CliError> {
    let name = args.env.clone();
    make_env(&name).map_err(|e| CliError::Env(e.to_string()))?;
    match &args.listen {
        Some(addr) => {
            let listener = TcpListener::bind(addr).map_err(CliError::io(addr))?;
            let local = listener.local_addr().map_err(CliError::io(addr))?;
            eprintln!("serving {name} on {local}");
            serve_tcp(move || make_env(&name).expect("checked above"), listener, args.max_connections)
                .map_err(CliError::io(addr))
        }
        None => {
            let mut env = make_env(&name).map_err(|e| CliError::Env(e.to_string()))?;
            let stdin = std::io::stdin();
            serve(env.as_mut(), stdin.lock(), std::io::stdout().lock()).map_err(CliError::io("<stdio>"))
        }
    }
}
