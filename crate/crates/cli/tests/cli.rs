use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn snn_actor(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_snn-actor"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn write_run(dir: &Path, env: &str, evals: &[f64]) {
    fs::create_dir_all(dir).unwrap();
    fs::write(dir.join("config.toml"), format!("[run]\nenv = \"{env}\"\n")).unwrap();
    let mut log = String::from("step,eval_mean_reward,actor_loss,critic_loss,wall_seconds\n");
    for (k, e) in evals.iter().enumerate() {
        log.push_str(&format!("{},{e},,,0\n", (k + 1) * 100));
    }
    fs::write(dir.join("run_log.csv"), log).unwrap();
}

const SMALL_RUN: &str = "[actor]\nhidden = [32]\n[dense]\nhidden = [32]\n[td3]\ncritic_hidden = [32]\nbatch = 16\n";

#[test]
fn missing_config_names_the_path() {
    let out = snn_actor(&["--config", "/no/such/run.toml", "train"]);
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("/no/such/run.toml"), "{}", text(&out.stderr));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[td3]\nbatchsize = 5\n").unwrap();
    let out = snn_actor(&["--config", cfg.to_str().unwrap(), "train"]);
    assert!(!out.status.success());
    let err = text(&out.stderr);
    assert!(err.contains("batchsize") && err.contains("line 2"), "{err}");
}

#[test]
fn smoke_train_then_eval_and_audit() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("runs");
    let out = snn_actor(&[
        "--seed",
        "3",
        "--out",
        out_dir.to_str().unwrap(),
        "train",
        "--env",
        "pendulum",
        "--total-steps",
        "1000",
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let seed_dir = out_dir.join("seed_3");
    let log = fs::read_to_string(seed_dir.join("run_log.csv")).unwrap();
    assert!(log.lines().count() >= 2, "{log}");
    for f in ["config.toml", "checkpoint_initial.json", "checkpoint_final.json"] {
        assert!(seed_dir.join(f).is_file(), "missing {f}");
    }

    let ck = seed_dir.join("checkpoint_final.json");
    let out = snn_actor(&["eval", "--checkpoint", ck.to_str().unwrap(), "--episodes", "2"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("over 2 episodes"));

    let audit = dir.path().join("audit");
    let out = snn_actor(&["--out", audit.to_str().unwrap(), "energy", "--checkpoint", ck.to_str().unwrap()]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("nJ per inference"));
    for f in ["firing_rates.csv", "ops.csv", "energy.csv", "energy_report.json"] {
        assert!(audit.join(f).is_file(), "missing {f}");
    }
}

#[test]
fn strict_reruns_write_identical_logs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, SMALL_RUN).unwrap();
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = snn_actor(&[
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "5",
            "--strict",
            "--out",
            out_dir.to_str().unwrap(),
            "train",
            "--total-steps",
            "400",
            "--warmup-steps",
            "200",
            "--eval-every",
            "200",
        ]);
        assert!(out.status.success(), "{}", text(&out.stderr));
        fs::read_to_string(out_dir.join("seed_5/run_log.csv")).unwrap()
    };
    let a = run("a");
    assert_eq!(a, run("b"));
    assert_eq!(a.lines().count(), 3, "{a}");
}

#[test]
fn snapshot_reproduces_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, SMALL_RUN).unwrap();
    let first = dir.path().join("first");
    let args = ["train", "--total-steps", "300", "--warmup-steps", "100", "--eval-every", "150"];
    let mut cmd = vec!["--config", cfg.to_str().unwrap(), "--strict", "--out", first.to_str().unwrap()];
    cmd.extend(args);
    assert!(snn_actor(&cmd).status.success());
    let snap = first.join("seed_0/config.toml");
    let second = dir.path().join("second");
    let out = snn_actor(&["--config", snap.to_str().unwrap(), "--out", second.to_str().unwrap(), "train"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert_eq!(
        fs::read_to_string(first.join("seed_0/run_log.csv")).unwrap(),
        fs::read_to_string(second.join("seed_0/run_log.csv")).unwrap()
    );
}

#[test]
fn energy_table_mode() {
    let dir = tempfile::tempdir().unwrap();
    let rates = dir.path().join("hopper.csv");
    fs::write(&rates, "layer,fr\nFC1,0.165\nFC2,0.208\nFC3,0.369\nGroupFC,0.421\nIntraFC,0.328\n").unwrap();
    let out = snn_actor(&["energy", "--task", "Hopper-v3", "--rates", rates.to_str().unwrap()]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains(" 8.2 nJ"), "{}", text(&out.stdout));

    let out = snn_actor(&["energy", "--task", "Ant", "--arch", "dense"]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("96000 FLOP, 1200.0 nJ"), "{}", text(&out.stdout));

    let out = snn_actor(&["energy", "--task", "Hopper"]);
    assert!(!out.status.success());
}

#[test]
fn gradcheck_outcomes() {
    let ok = snn_actor(&["gradcheck", "--trials", "5"]);
    assert!(ok.status.success(), "{}", text(&ok.stdout));

    let bad = snn_actor(&["gradcheck", "--trials", "5", "--corrupt-derivative"]);
    assert!(!bad.status.success());
    assert!(text(&bad.stdout).contains("FAIL"));

    let none = snn_actor(&["gradcheck", "--trials", "0"]);
    assert!(none.status.success());
    assert!(text(&none.stderr).contains("warning"));
}

#[test]
fn report_cells_and_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("snn");
    write_run(&runs.join("seed_0"), "pendulum", &[-900.0, 10.0, 5.0]);
    write_run(&runs.join("seed_1"), "pendulum", &[20.0, -3.0]);
    let out = snn_actor(&["report", "--runs", runs.to_str().unwrap(), "--baseline", runs.to_str().unwrap()]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert!(stdout.contains("15±5"), "{stdout}");
    assert!(stdout.contains("APR over 1 tasks: 100.00%"), "{stdout}");
}

#[test]
fn report_warns_on_missing_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("snn");
    write_run(&runs.join("seed_0"), "pendulum", &[-150.0]);
    write_run(&runs.join("seed_1"), "reacher", &[-10.0]);
    let base = dir.path().join("dan");
    write_run(&base.join("seed_0"), "reacher", &[-20.0]);
    let report_dir = dir.path().join("report");
    let out = snn_actor(&[
        "--out",
        report_dir.to_str().unwrap(),
        "report",
        "--runs",
        runs.to_str().unwrap(),
        "--baseline",
        base.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stderr).contains("no baseline for task pendulum"), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("APR over 1 tasks: 50.00%"), "{}", text(&out.stdout));
    assert!(report_dir.join("report.csv").is_file());
}

#[test]
fn dead_network_audit_counts_no_downstream_ops() {
    use snn_actor::actor::{ActorConfig, ActorParams, EnvSpec};
    use snn_actor::checkpoint::{save_checkpoint, Checkpoint};

    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("dead.json");
    let cfg = ActorConfig { hidden: vec![16], ..Default::default() };
    let dead = ActorParams::zeroed(EnvSpec::symmetric(3, 1, 2.0), cfg).unwrap();
    save_checkpoint(&Checkpoint::Spiking(dead), &ck).unwrap();
    let out = snn_actor(&["energy", "--checkpoint", ck.to_str().unwrap()]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    let counts: Vec<(String, u64)> = stdout
        .lines()
        .filter_map(|l| l.strip_prefix("ops "))
        .map(|l| {
            let mut f = l.split_whitespace();
            (f.next().unwrap().to_string(), f.next().unwrap().parse().unwrap())
        })
        .collect();
    assert_eq!(counts.len(), 4, "{stdout}");
    // The encoder has no weights, so only the first layer sees spikes.
    for (layer, n) in &counts[1..] {
        assert_eq!(*n, 0, "{layer}: {stdout}");
    }
}
