use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use autoalign_core::campaign::{heuristic_trial, rl_trial, run_trials, trial_seed, trial_start};
use autoalign_core::config::RunConfig;
use autoalign_core::env::OpticalStage;
use autoalign_core::heuristic::{background_threshold, run_alignment, Outcome};
use autoalign_core::metrics::{
    compare_policies, median_time, read_trials_csv, roc_curve, write_trials_csv, Policy,
    TrialResult,
};
use autoalign_core::rl::{write_train_log, Checkpoint, SacAgent, Trainer};
use autoalign_core::spdc::{
    biphoton_wavefunction, temperature_sweep, write_biphoton_csv, write_opo_csv, write_sweep_csv,
};
use autoalign_core::{Error, Result};

use crate::Common;

const RESOLVED_CONFIG: &str = "config.resolved.toml";

fn load_config(common: &Common) -> Result<RunConfig> {
    let text = match &common.config {
        Some(path) => Some(
            fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?,
        ),
        None => None,
    };
    RunConfig::resolve(text.as_deref(), &common.overrides, std::env::vars())
}

fn jobs(common: &Common) -> usize {
    common.jobs.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    })
}

fn default_dir(subcommand: &str) -> PathBuf {
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    PathBuf::from("runs").join(format!("{stamp}-{subcommand}"))
}

fn make_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Output directory plus the resolved-config echo inside it.
fn prepare_dir(out: Option<PathBuf>, subcommand: &str, config: &RunConfig) -> Result<PathBuf> {
    let dir = out.unwrap_or_else(|| default_dir(subcommand));
    make_dir(&dir)?;
    write_resolved(&dir, config)?;
    Ok(dir)
}

/// For subcommands whose `--out` names a file: its directory gets the echo.
fn prepare_file(
    out: Option<PathBuf>,
    subcommand: &str,
    default_name: &str,
    config: &RunConfig,
) -> Result<PathBuf> {
    let path = out.unwrap_or_else(|| default_dir(subcommand).join(default_name));
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    make_dir(dir)?;
    write_resolved(dir, config)?;
    Ok(path)
}

fn write_resolved(dir: &Path, config: &RunConfig) -> Result<()> {
    let path = dir.join(RESOLVED_CONFIG);
    fs::write(&path, config.to_toml_string()?).map_err(|e| Error::io(path, e))
}

pub fn spdc_scan(common: &Common, out: Option<PathBuf>) -> Result<()> {
    let config = load_config(common)?;
    let dir = prepare_dir(out, "spdc-scan", &config)?;
    let s = config.scan;
    let rows = temperature_sweep(
        &config.crystal,
        s.t_min_c,
        s.t_max_c,
        s.steps,
        s.grid_points,
    )?;
    write_opo_csv(&rows, create(&dir.join("opo_sweep.csv"))?)?;
    write_sweep_csv(&rows, create(&dir.join("spectral_sweep.csv"))?)?;
    let psi = biphoton_wavefunction(&config.crystal, s.grid_points)?;
    write_biphoton_csv(&psi, create(&dir.join("biphoton.csv"))?)?;
    let failed = rows
        .iter()
        .filter(|r| r.phase_match.is_err() || r.spectrum.is_err())
        .count();
    println!(
        "spdc-scan: {} temperatures ({failed} flagged) -> {}",
        rows.len(),
        dir.display()
    );
    Ok(())
}

pub fn ha_run(common: &Common, out: Option<PathBuf>, trace_path: Option<PathBuf>) -> Result<()> {
    let config = load_config(common)?;
    let dir = prepare_dir(out, "ha-run", &config)?;
    let env = config.env_config();
    let start = trial_start(&env, common.seed, 0);
    let mut stage = OpticalStage::new(
        env.coupling,
        start.to_pose(),
        trial_seed(common.seed, 0).rotate_left(17),
    )?;
    let trace = run_alignment(&mut stage, config.heuristic, env.c_max())?;
    let trace_path = trace_path.unwrap_or_else(|| dir.join("trace.csv"));
    if let Some(parent) = trace_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        make_dir(parent)?;
    }
    trace.write_csv(create(&trace_path)?)?;
    println!(
        "ha-run: outcome {:?}, elapsed {:.0} s, converged at {:?} s, {} measurements -> {}",
        trace.outcome,
        trace.elapsed_s,
        trace.converged_at_s,
        trace.events.len(),
        trace_path.display()
    );
    if trace.outcome == Outcome::AbortedNoSignal {
        let h = &config.heuristic;
        return Err(Error::NoSignal {
            counts: trace.events.first().map_or(0, |e| e.record.counts),
            threshold: background_threshold(
                env.coupling.background_rate_cps,
                h.initial_integration_s,
            ),
        });
    }
    Ok(())
}

fn train(config: &RunConfig, seed: u64, dir: &Path) -> Result<SacAgent<f32>> {
    let env = config.env_config();
    let mut trainer = Trainer::new(env, config.sac.clone(), seed)?;
    let every = config.sac.checkpoint_every;
    let result = trainer.run(|t, row| {
        if (row.env_step / t.agent.config.log_every) % 10 == 0 {
            eprintln!(
                "step {:>8}  reward/step {:+.4}  ep_len {:>7.2}  alpha {:.4}",
                row.env_step, row.mean_reward, row.mean_ep_len, row.alpha
            );
        }
        if every > 0 && row.env_step % every == 0 {
            let ckpt = Checkpoint::new(
                t.agent.clone(),
                env,
                row.env_step as u64,
                Some(t.rng().clone()),
            );
            ckpt.save(&dir.join(format!("ckpt-{:08}.ckpt", row.env_step)))?;
        }
        Ok(())
    });
    write_train_log(trainer.log(), create(&dir.join("train_log.csv"))?)?;
    let step = trainer.env_step() as u64;
    if let Err(e) = result {
        if matches!(e, Error::NonFinite(_)) {
            Checkpoint::new(
                trainer.agent.clone(),
                env,
                step,
                Some(trainer.rng().clone()),
            )
            .save(&dir.join("diagnostic.ckpt"))?;
        }
        return Err(e);
    }
    Checkpoint::new(
        trainer.agent.clone(),
        env,
        step,
        Some(trainer.rng().clone()),
    )
    .save(&dir.join("final.ckpt"))?;
    let best = trainer.best_agent().clone();
    Checkpoint::new(best.clone(), env, step, None).save(&dir.join("best.ckpt"))?;
    if let Some(score) = trainer.best_score() {
        eprintln!("best validation mean time {score:.1} s");
    }
    Ok(best)
}

pub fn rl_train(common: &Common, out: Option<PathBuf>) -> Result<()> {
    let config = load_config(common)?;
    let dir = prepare_dir(out, "rl-train", &config)?;
    train(&config, common.seed, &dir)?;
    println!(
        "rl-train: {} steps -> {}",
        config.sac.total_steps,
        dir.display()
    );
    Ok(())
}

fn summarize(label: &str, results: &[TrialResult], config: &RunConfig) -> Result<()> {
    let curve = roc_curve(results, config.eval.n_thresholds)?;
    let converged = results.iter().filter(|r| r.converged).count();
    println!(
        "{label}: {converged}/{} converged, median {} s, AUC {:.4}",
        results.len(),
        median_time(results)?,
        curve.auc
    );
    Ok(())
}

pub fn rl_eval(
    common: &Common,
    ckpt: &Path,
    trials: Option<u64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let config = load_config(common)?;
    let checkpoint = Checkpoint::load(ckpt)?;
    let env = config.env_config();
    checkpoint.check_compatible(&env)?;
    let path = prepare_file(out, "rl-eval", "trials.csv", &config)?;
    let n = trials.unwrap_or(config.eval.trials);
    let budget = config.eval.budget_s;
    let agent = &checkpoint.agent;
    let results = run_trials(n, jobs(common), |id| {
        rl_trial(agent, &env, common.seed, id, budget)
    })?;
    write_trials_csv(&results, create(&path)?)?;
    summarize("rl-eval", &results, &config)
}

pub fn roc(
    common: &Common,
    input: &Path,
    out: Option<PathBuf>,
    policy: Option<String>,
) -> Result<()> {
    let config = load_config(common)?;
    let file = File::open(input).map_err(|e| Error::io(input, e))?;
    let mut results = read_trials_csv(file)?;
    if let Some(p) = policy {
        let p = match p.as_str() {
            "heuristic" => Policy::Heuristic,
            "rl" => Policy::Rl,
            other => return Err(Error::Input(format!("unknown policy `{other}`"))),
        };
        results.retain(|r| r.policy == p);
    } else if results.iter().any(|r| r.policy != results[0].policy) {
        return Err(Error::Input(
            "trials file mixes policies; pass --policy".into(),
        ));
    }
    let path = prepare_file(out, "roc", "curve.csv", &config)?;
    let curve = roc_curve(&results, config.eval.n_thresholds)?;
    curve.write_csv(create(&path)?)?;
    println!(
        "roc: {} trials, AUC {:.6} -> {}",
        results.len(),
        curve.auc,
        path.display()
    );
    Ok(())
}

pub fn campaign(
    common: &Common,
    trials: Option<u64>,
    ckpt: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let config = load_config(common)?;
    let dir = prepare_dir(out, "campaign", &config)?;
    let env = config.env_config();
    let agent = match ckpt {
        Some(path) => {
            let c = Checkpoint::load(&path)?;
            c.check_compatible(&env)?;
            c.agent
        }
        None => {
            let agent_dir = dir.join("agent");
            make_dir(&agent_dir)?;
            train(&config, common.seed, &agent_dir)?
        }
    };
    let n = trials.unwrap_or(config.eval.trials);
    let budget = config.eval.budget_s;
    let workers = jobs(common);
    let ha = run_trials(n, workers, |id| {
        heuristic_trial(&env, &config.heuristic, common.seed, id, budget)
    })?;
    let rl = run_trials(n, workers, |id| {
        rl_trial(&agent, &env, common.seed, id, budget)
    })?;

    let all: Vec<TrialResult> = ha.iter().chain(&rl).copied().collect();
    write_trials_csv(&all, create(&dir.join("trials.csv"))?)?;
    let report = compare_policies(&ha, &rl, config.eval.n_thresholds)?;
    report.roc_ha.write_csv(create(&dir.join("roc_ha.csv"))?)?;
    report.roc_rl.write_csv(create(&dir.join("roc_rl.csv"))?)?;
    let path = dir.join("report.txt");
    fs::write(&path, report.to_text()).map_err(|e| Error::io(path, e))?;
    print!("{}", report.to_text());
    println!("campaign: {n} paired trials -> {}", dir.display());
    Ok(())
}
