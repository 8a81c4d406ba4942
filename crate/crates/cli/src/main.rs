//! Command-line front end: train the models, evaluate checkpoints against
//! the LQR reference, print the LQR synthesis, verify gradients, and dump
//! raw rollouts.

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use reach_core::config::TrainConfig;
use reach_core::env::EnvParams;
use reach_core::eval::{
    self, default_sweep_grid, evaluate, make_task, sweep_csv, Controller, PolicyController,
    PolicyInput, TaskVariant,
};
use reach_core::gradcheck;
use reach_core::lqr::{solve_care, ReachSystem};
use reach_core::nets::{ActionMode, PolicyModel, TransitionModel};
use reach_core::trainer::Trainer;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "reach", version, about = "Point-mass reaching: learned control vs LQR")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train transition and policy networks per a configuration file.
    Train {
        /// Path to a key = value configuration file.
        #[arg(short, long)]
        config: PathBuf,
        /// Output directory for checkpoints, logs, and the manifest.
        #[arg(short, long)]
        out: PathBuf,
        /// Continue a previous run from its saved state.
        #[arg(long)]
        resume: bool,
        /// Override the configured iteration count.
        #[arg(long)]
        iterations: Option<u64>,
    },
    /// Evaluate a policy checkpoint (or the LQR) on the reaching benchmark.
    Eval {
        /// Policy checkpoint to evaluate.
        #[arg(long, required_unless_present = "lqr", conflicts_with = "lqr")]
        checkpoint: Option<PathBuf>,
        /// Evaluate the LQR reference instead of a checkpoint.
        #[arg(long)]
        lqr: bool,
        #[arg(long, default_value = "stationary")]
        variant: TaskVariant,
        /// Rotation angles in degrees (comma separated). "sweep" expands to
        /// the default -120..120 grid.
        #[arg(long, default_value = "0", value_delimiter = ',')]
        gamma: Vec<String>,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Keep the benchmark's observation/process noise switched on.
        #[arg(long)]
        noise: bool,
        /// Transition checkpoint, required when the policy was trained on
        /// state estimates.
        #[arg(long)]
        transition: Option<PathBuf>,
        /// Feed the policy the transition model's state estimate.
        #[arg(long)]
        estimate_input: bool,
    },
    /// Synthesize the LQR gain, print it, and roll out the fixed scenario.
    Lqr {
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 5.0)]
        kappa: f64,
        #[arg(long, default_value_t = 200)]
        steps: usize,
    },
    /// Finite-difference verification of all gradient paths.
    Gradcheck {
        #[arg(long, default_value_t = 12345)]
        seed: u64,
        /// Test hook: deliberately corrupt one gradient to prove the
        /// harness fails loudly.
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Roll out raw episodes with a given controller and dump trace CSVs.
    Rollout {
        /// Controller kind: lqr | policy | random.
        #[arg(long)]
        controller: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "stationary")]
        variant: TaskVariant,
        #[arg(long, default_value_t = 8)]
        episodes: usize,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        gamma: f64,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long)]
        noise: bool,
    },
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn env_seed_override() -> Result<Option<u64>> {
    match std::env::var("SEED") {
        Ok(v) => {
            let seed = v
                .parse()
                .with_context(|| format!("SEED environment variable '{v}' is not a u64"))?;
            Ok(Some(seed))
        }
        Err(_) => Ok(None),
    }
}

fn run() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train {
            config,
            out,
            resume,
            iterations,
        } => cmd_train(&config, &out, resume, iterations),
        Command::Eval {
            checkpoint,
            lqr,
            variant,
            gamma,
            out,
            steps,
            seed,
            noise,
            transition,
            estimate_input,
        } => cmd_eval(
            checkpoint.as_deref(),
            lqr,
            variant,
            &gamma,
            &out,
            steps,
            seed,
            noise,
            transition.as_deref(),
            estimate_input,
        ),
        Command::Lqr { out, kappa, steps } => cmd_lqr(out.as_deref(), kappa, steps),
        Command::Gradcheck { seed, corrupt } => cmd_gradcheck(seed, corrupt),
        Command::Rollout {
            controller,
            checkpoint,
            variant,
            episodes,
            out,
            seed,
            gamma,
            steps,
            noise,
        } => cmd_rollout(
            &controller,
            checkpoint.as_deref(),
            variant,
            episodes,
            &out,
            seed,
            gamma,
            steps,
            noise,
        ),
    }
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).with_context(|| format!("writing {}", path.display()))
}

fn cmd_train(config_path: &Path, out: &Path, resume: bool, iterations: Option<u64>) -> Result<ExitCode> {
    let mut config = TrainConfig::from_file(config_path)
        .with_context(|| format!("loading config {}", config_path.display()))?;
    if let Some(seed) = env_seed_override()? {
        config.seed = seed;
    }
    if let Some(iters) = iterations {
        config.iterations = iters;
    }
    config.validate()?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    // Manifest first: a run must be reconstructible even if interrupted.
    write_file(&out.join("config_snapshot.txt"), &config.emit())?;
    let mut manifest = String::new();
    let _ = writeln!(manifest, "tool_version = {TOOL_VERSION}");
    let _ = writeln!(manifest, "command = train");
    let _ = writeln!(manifest, "seed = {}", config.seed);
    let _ = writeln!(manifest, "out_dir = {}", out.display());
    let _ = writeln!(manifest, "config_snapshot = config_snapshot.txt");
    let _ = writeln!(manifest, "log = log.csv");
    let _ = writeln!(manifest, "state = state.ck");
    let _ = writeln!(manifest, "memory_dir = memory");
    let _ = writeln!(manifest, "transition_checkpoint = transition.ck");
    let _ = writeln!(manifest, "policy_checkpoint = policy.ck");
    let _ = writeln!(manifest, "transition_init_checkpoint = transition_init.ck");
    let _ = writeln!(manifest, "policy_init_checkpoint = policy_init.ck");
    write_file(&out.join("manifest.txt"), &manifest)?;

    let mut trainer = if resume {
        // The saved state's configuration governs a resumed run; only the
        // iteration target may be raised from the command line.
        let mut trainer = Trainer::resume(out).context("resuming from saved state")?;
        if let Some(iters) = iterations {
            trainer.config.iterations = iters;
        }
        trainer
    } else {
        let trainer = Trainer::new(config)?;
        trainer.transition().save(&out.join("transition_init.ck"))?;
        trainer.policy().save(&out.join("policy_init.ck"))?;
        trainer
    };

    // Emit the initial state so `--iterations 0` still leaves checkpoints.
    trainer.transition().save(&out.join("transition.ck"))?;
    trainer.policy().save(&out.join("policy.ck"))?;
    trainer.save_state(out)?;

    trainer.run(|t, record| {
        t.transition()
            .save(&out.join("transition.ck"))
            .map_err(reach_core::trainer::TrainError::from)?;
        t.policy()
            .save(&out.join("policy.ck"))
            .map_err(reach_core::trainer::TrainError::from)?;
        t.save_state(out)?;
        println!(
            "iter {:>4}: loss_t {:>10.5} loss_p {:>10.5} mse {:>10.3e} J_s {:>8.3} J_m {:>8.3} ({:.1}s)",
            record.iter,
            record.loss_t,
            record.loss_p,
            record.mse_1step,
            record.j_stationary,
            record.j_moving,
            record.seconds
        );
        Ok(())
    })?;

    println!(
        "done: {} iterations, {} episodes, {} env steps, {}+{} updates",
        trainer.iterations_done(),
        trainer.log().episodes_total,
        trainer.log().env_steps_total,
        trainer.log().transition_updates_total,
        trainer.log().policy_updates_total,
    );
    Ok(ExitCode::SUCCESS)
}

fn eval_env_params(gamma_deg: f64, noise: bool) -> EnvParams {
    let mut p = if noise { EnvParams::default() } else { EnvParams::noiseless() };
    p.gamma = gamma_deg.to_radians();
    p
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    checkpoint: Option<&Path>,
    lqr: bool,
    variant: TaskVariant,
    gamma_args: &[String],
    out: &Path,
    steps: usize,
    mut seed: u64,
    noise: bool,
    transition: Option<&Path>,
    estimate_input: bool,
) -> Result<ExitCode> {
    if let Some(s) = env_seed_override()? {
        seed = s;
    }
    let gammas: Vec<f64> = if gamma_args.iter().any(|g| g == "sweep") {
        default_sweep_grid()
    } else {
        gamma_args
            .iter()
            .map(|g| {
                g.parse::<f64>()
                    .with_context(|| format!("--gamma value '{g}' is not a number"))
            })
            .collect::<Result<_>>()?
    };

    let controller = if lqr {
        let gain = solve_care(&ReachSystem::point_mass(5.0))?;
        Controller::from_gain(&gain, 1.0)
    } else {
        let path = checkpoint.expect("clap enforces checkpoint unless --lqr");
        let policy = PolicyModel::load(path)
            .with_context(|| format!("loading policy checkpoint {}", path.display()))?;
        let transition_model = match transition {
            Some(tp) => Some(
                TransitionModel::load(tp)
                    .with_context(|| format!("loading transition checkpoint {}", tp.display()))?,
            ),
            None => None,
        };
        if estimate_input && transition_model.is_none() {
            bail!("--estimate-input requires --transition");
        }
        Controller::Policy(Box::new(PolicyController {
            policy,
            mode: ActionMode::Mean,
            input: if estimate_input {
                PolicyInput::Estimate
            } else {
                PolicyInput::Observation
            },
            transition: transition_model,
        }))
    };

    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let task = make_task(variant, steps, 0.02);
    let mut reports = Vec::new();
    let mut manifest = String::new();
    let _ = writeln!(manifest, "tool_version = {TOOL_VERSION}");
    let _ = writeln!(manifest, "command = eval");
    let _ = writeln!(manifest, "seed = {seed}");
    let _ = writeln!(manifest, "out_dir = {}", out.display());
    if let Some(c) = checkpoint {
        let _ = writeln!(manifest, "checkpoint = {}", c.display());
    }

    for &gamma in &gammas {
        let params = eval_env_params(gamma, noise);
        let report = evaluate(&controller, &task, &params, steps, seed)?;
        let base = format!("report_{}_{}_gamma{:+}", report.controller, variant, gamma);
        write_file(&out.join(format!("{base}.csv")), &report.to_csv())?;
        write_file(&out.join(format!("{base}.svg")), &report.to_svg())?;
        let _ = writeln!(manifest, "report = {base}.csv");
        let _ = writeln!(manifest, "plot = {base}.svg");
        println!("gamma {gamma:>7.1} deg: J = {:.4}", report.total);
        reports.push(report);
    }
    let sweep_name = format!("sweep_{}_{}.csv", controller.id(), variant);
    write_file(&out.join(&sweep_name), &sweep_csv(&reports))?;
    let _ = writeln!(manifest, "sweep = {sweep_name}");
    write_file(&out.join("manifest.txt"), &manifest)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_lqr(out: Option<&Path>, kappa: f64, steps: usize) -> Result<ExitCode> {
    let sys = ReachSystem::point_mass(kappa);
    let gain = solve_care(&sys)?;
    println!("K =");
    for row in &gain.k {
        println!("{},{},{},{}", row[0], row[1], row[2], row[3]);
    }
    println!("care_residual = {:e}", gain.residual);
    println!("iterations = {}", gain.iterations);

    // The fixed corner-to-corner scenario.
    let controller = Controller::from_gain(&gain, 1.0);
    let start = [-0.5, 0.5, 0.0, 0.0];
    let target = [0.5, -0.5, 0.0, 0.0];
    let (trace, metrics) = eval::rollout_to_target(
        &controller,
        &EnvParams::noiseless(),
        start,
        target,
        steps,
        42,
    )?;
    println!("scenario_final_error = {}", metrics.final_position_error);
    println!("scenario_overshoot = {}", metrics.overshoot);
    println!("scenario_J = {}", metrics.j);

    if let Some(out) = out {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let mut gain_csv = String::from("k11,k12,k13,k14\n");
        for row in &gain.k {
            let _ = writeln!(gain_csv, "{},{},{},{}", row[0], row[1], row[2], row[3]);
        }
        write_file(&out.join("gain.csv"), &gain_csv)?;
        let mut p_csv = String::from("p1,p2,p3,p4\n");
        for row in &gain.p {
            let _ = writeln!(p_csv, "{},{},{},{}", row[0], row[1], row[2], row[3]);
        }
        write_file(&out.join("riccati.csv"), &p_csv)?;
        trace
            .write_csv(&out.join("scenario.csv"))
            .context("writing scenario rollout")?;
        let mut manifest = String::new();
        let _ = writeln!(manifest, "tool_version = {TOOL_VERSION}");
        let _ = writeln!(manifest, "command = lqr");
        let _ = writeln!(manifest, "kappa = {kappa}");
        let _ = writeln!(manifest, "out_dir = {}", out.display());
        let _ = writeln!(manifest, "gain = gain.csv");
        let _ = writeln!(manifest, "riccati = riccati.csv");
        let _ = writeln!(manifest, "scenario = scenario.csv");
        write_file(&out.join("manifest.txt"), &manifest)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(mut seed: u64, corrupt: bool) -> Result<ExitCode> {
    if let Some(s) = env_seed_override()? {
        seed = s;
    }
    let report = gradcheck::run_all(seed, corrupt);
    for s in &report.suites {
        println!(
            "suite {:<24} max_rel_err = {:e} (threshold {:e}, {} cases) {}",
            s.name,
            s.max_rel_err,
            s.threshold,
            s.cases,
            if s.passed() { "PASS" } else { "FAIL" }
        );
    }
    if report.passed() {
        println!("gradcheck: all suites passed");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("gradcheck: FAILED");
        Ok(ExitCode::FAILURE)
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_rollout(
    controller_kind: &str,
    checkpoint: Option<&Path>,
    variant: TaskVariant,
    episodes: usize,
    out: &Path,
    mut seed: u64,
    gamma: f64,
    steps: usize,
    noise: bool,
) -> Result<ExitCode> {
    if let Some(s) = env_seed_override()? {
        seed = s;
    }
    let controller = match controller_kind {
        "lqr" => {
            let gain = solve_care(&ReachSystem::point_mass(5.0))?;
            Controller::from_gain(&gain, 1.0)
        }
        "random" => Controller::Random { u_max: 1.0 },
        "policy" => {
            let path = checkpoint.context("--controller policy requires --checkpoint")?;
            let policy = PolicyModel::load(path)
                .with_context(|| format!("loading policy checkpoint {}", path.display()))?;
            Controller::Policy(Box::new(PolicyController {
                policy,
                mode: ActionMode::Sample,
                input: PolicyInput::Observation,
                transition: None,
            }))
        }
        other => bail!("unknown controller '{other}' (lqr | policy | random)"),
    };

    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let params = eval_env_params(gamma, noise);
    let task = make_task(variant, steps, params.dt);
    let mut manifest = String::new();
    let _ = writeln!(manifest, "tool_version = {TOOL_VERSION}");
    let _ = writeln!(manifest, "command = rollout");
    let _ = writeln!(manifest, "controller = {controller_kind}");
    let _ = writeln!(manifest, "seed = {seed}");
    let _ = writeln!(manifest, "out_dir = {}", out.display());
    for e in 0..episodes {
        let target_traj = &task.targets[e % task.targets.len()];
        let path = [e as u64];
        let mut env = reach_core::env::PlaneEnv::new(params, seed, &path);
        let trace =
            eval::run_episode(&controller, &mut env, task.start, target_traj, steps, seed, &path)?;
        let name = format!("rollout_{e:03}.csv");
        trace
            .write_csv(&out.join(&name))
            .with_context(|| format!("writing {name}"))?;
        let _ = writeln!(manifest, "episode = {name}");
    }
    write_file(&out.join("manifest.txt"), &manifest)?;
    println!("wrote {episodes} episodes to {}", out.display());
    Ok(ExitCode::SUCCESS)
}
