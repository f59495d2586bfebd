use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_autoalign");

const TINY_SAC: &[&str] = &[
    "--set",
    "sac.total_steps=300",
    "--set",
    "sac.warmup_steps=100",
    "--set",
    "sac.log_every=100",
    "--set",
    "sac.validation_every=300",
    "--set",
    "sac.validation_trials=2",
    "--set",
    "sac.checkpoint_every=200",
    "--set",
    "sac.batch_size=16",
    "--set",
    "sac.hidden_sizes=[16, 16]",
];

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("AUTOALIGN_CFG__SAC__TOTAL_STEPS")
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn header(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_owned()
}

#[test]
fn spdc_scan_writes_three_tables_and_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("scan");
    run_ok(&[
        "spdc-scan",
        "--out",
        p(&out),
        "--set",
        "scan.steps=5",
        "--set",
        "scan.grid_points=256",
    ]);
    assert_eq!(
        header(&out.join("opo_sweep.csv")),
        "temperature_C,signal_nm,idler_nm,opening_angle_rad,log10_abs_dk"
    );
    assert!(header(&out.join("spectral_sweep.csv")).ends_with("fwhm_nm,brightness_rel"));
    assert_eq!(header(&out.join("biphoton.csv")), "lambda_nm,re_psi,im_psi");
    let rows = fs::read_to_string(out.join("spectral_sweep.csv"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(rows, 6);
    let resolved = fs::read_to_string(out.join("config.resolved.toml")).unwrap();
    assert!(resolved.contains("steps = 5"));
}

#[test]
fn ha_run_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let c = dir.path().join("c.csv");
    run_ok(&[
        "ha-run",
        "--seed",
        "11",
        "--out",
        p(dir.path()),
        "--trace",
        p(&a),
    ]);
    run_ok(&[
        "ha-run",
        "--seed",
        "11",
        "--out",
        p(dir.path()),
        "--trace",
        p(&b),
    ]);
    run_ok(&[
        "ha-run",
        "--seed",
        "12",
        "--out",
        p(dir.path()),
        "--trace",
        p(&c),
    ]);
    let (a, b, c) = (
        fs::read(a).unwrap(),
        fs::read(b).unwrap(),
        fs::read(c).unwrap(),
    );
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(String::from_utf8(a)
        .unwrap()
        .starts_with("t_s,r_um,theta_rad,z_um,counts,int_time_s,W,decision,phase\n"));
}

#[test]
fn ha_run_without_signal_exits_3_and_keeps_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "ha-run",
        "--out",
        p(dir.path()),
        "--set",
        "coupling.z_optimal_um=1000000",
    ]);
    assert_eq!(out.status.code(), Some(3));
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.lines().nth(1).unwrap().contains("abort"));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "ha-run",
        "--out",
        p(dir.path()),
        "--set",
        "heuristic.bogus=1",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&[
        "ha-run",
        "--out",
        p(dir.path()),
        "--set",
        "heuristic.step_shrink=1.5",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let missing = dir.path().join("none.toml");
    let out = run(&["ha-run", "--config", p(&missing)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_and_env_layering() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("cfg.toml");
    fs::write(&file, "[scan]\nsteps = 3\ngrid_points = 256\n").unwrap();
    let out = dir.path().join("scan");
    let status = Command::new(BIN)
        .args([
            "spdc-scan",
            "--config",
            p(&file),
            "--out",
            p(&out),
            "--set",
            "scan.steps=4",
        ])
        .env("AUTOALIGN_CFG__SCAN__T_MAX_C", "30")
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    let resolved = fs::read_to_string(out.join("config.resolved.toml")).unwrap();
    assert!(resolved.contains("steps = 4"));
    assert!(resolved.contains("grid_points = 256"));
    assert!(resolved.contains("t_max_c = 30"));
}

#[test]
fn train_eval_roc_campaign_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train");
    let mut args = vec!["rl-train", "--seed", "4", "--out", p(&train)];
    args.extend_from_slice(TINY_SAC);
    run_ok(&args);
    for f in [
        "final.ckpt",
        "best.ckpt",
        "ckpt-00000200.ckpt",
        "train_log.csv",
        "config.resolved.toml",
    ] {
        assert!(train.join(f).exists(), "missing {f}");
    }
    assert_eq!(
        header(&train.join("train_log.csv")),
        "env_step,mean_reward,mean_ep_len,alpha,critic_loss,actor_loss"
    );
    assert_eq!(
        fs::read_to_string(train.join("train_log.csv"))
            .unwrap()
            .lines()
            .count(),
        4
    );

    let ckpt = train.join("final.ckpt");
    let trials = dir.path().join("eval/rl.csv");
    run_ok(&[
        "rl-eval",
        "--ckpt",
        p(&ckpt),
        "--trials",
        "4",
        "--jobs",
        "2",
        "--out",
        p(&trials),
    ]);
    let text = fs::read_to_string(&trials).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.starts_with("trial_id,policy,seed,"));

    // Thread count must not change results.
    let again = dir.path().join("eval/rl1.csv");
    run_ok(&[
        "rl-eval",
        "--ckpt",
        p(&ckpt),
        "--trials",
        "4",
        "--jobs",
        "1",
        "--out",
        p(&again),
    ]);
    assert_eq!(text, fs::read_to_string(&again).unwrap());

    let roc = dir.path().join("eval/roc.csv");
    let out = run_ok(&["roc", "--in", p(&trials), "--out", p(&roc)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("AUC"));
    let curve = fs::read_to_string(&roc).unwrap();
    assert_eq!(curve.lines().next().unwrap(), "threshold_s,accuracy");
    assert_eq!(curve.lines().count(), 362);

    let campaign = dir.path().join("campaign");
    run_ok(&[
        "campaign",
        "--ckpt",
        p(&ckpt),
        "--trials",
        "4",
        "--out",
        p(&campaign),
    ]);
    let report = fs::read_to_string(campaign.join("report.txt")).unwrap();
    assert!(report.starts_with("auc_ha,auc_rl,delta,median_ha_s,median_rl_s,win_rate\n"));
    assert_eq!(
        fs::read_to_string(campaign.join("trials.csv"))
            .unwrap()
            .lines()
            .count(),
        9
    );
    assert!(campaign.join("roc_ha.csv").exists() && campaign.join("roc_rl.csv").exists());

    // Mixed policies need an explicit filter.
    let mixed = run(&[
        "roc",
        "--in",
        p(&campaign.join("trials.csv")),
        "--out",
        p(&roc),
    ]);
    assert_eq!(mixed.status.code(), Some(2));
    run_ok(&[
        "roc",
        "--in",
        p(&campaign.join("trials.csv")),
        "--out",
        p(&roc),
        "--policy",
        "heuristic",
    ]);
    assert_eq!(
        fs::read_to_string(&roc).unwrap(),
        fs::read_to_string(campaign.join("roc_ha.csv")).unwrap()
    );

    let incompatible = run(&[
        "rl-eval",
        "--ckpt",
        p(&ckpt),
        "--trials",
        "1",
        "--out",
        p(&dir.path().join("x.csv")),
        "--set",
        "mdp.obs_frames=2",
    ]);
    assert_eq!(incompatible.status.code(), Some(2));
}

#[test]
fn corrupt_checkpoint_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ckpt");
    fs::write(&bad, b"not a checkpoint").unwrap();
    let out = run(&[
        "rl-eval",
        "--ckpt",
        p(&bad),
        "--out",
        p(&dir.path().join("y.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
