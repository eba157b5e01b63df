//! Command-line entry point.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::agent::{AgentNetwork, DqnAgent, NeuralQ};
use crate::autodiff::Checkpoint;
use crate::config::{LoadedConfig, RunConfig};
use crate::env::write_trace_jsonl;
use crate::error::{Error, Result};
use crate::evaluator::{
    evaluate, export_trajectory, report_csv, Corruption, EvalReport, GreedyAgent, LocalizationPolicy, OraclePolicy,
    RandomPolicy,
};
use crate::geometry::Action;
use crate::imaging::{generate_scene, save_frame, SceneManifest};
use crate::rng::derived;
use crate::trainer::{self, checkpoint_path, make_checkpoint, streams, MetricsWriter, TrainSetup};
use crate::worksim::{
    deploy_grid, ConstantPolicy, DeployReport, GreedyNetworkPolicy, OracleMotionPolicy, ScratchEnv, Workspace,
    WorkspacePolicy,
};

#[derive(Debug, Parser)]
#[command(name = "ohpl", version, about = "One-shot hand-eye policy learning at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalPolicyArg {
    Agent,
    Oracle,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DeployPolicyArg {
    Agent,
    Oracle,
    Noop,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a scene image, echo its manifest and draw the groundtruth box.
    GenScene {
        /// Scene manifest (TOML); the built-in default scene when omitted.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a localization agent on the configured scene.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `train.total_episodes`.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Train the Scratch baseline directly in the camera workspace.
    ScratchTrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Evaluate a checkpoint (or a scripted policy) on the nine start cells.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        config: PathBuf,
        /// One of blur:7, blur:15, noise:10, noise:20, light:left, light:right, light:above.
        #[arg(long)]
        corrupt: Option<String>,
        #[arg(long, value_enum, default_value_t = EvalPolicyArg::Agent)]
        policy: EvalPolicyArg,
    },
    /// Deploy checkpoints zero-shot in the camera workspace.
    Deploy {
        /// One report row per checkpoint.
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        config: PathBuf,
        /// Move the object with the configured motion model.
        #[arg(long)]
        moving: bool,
        #[arg(long, value_enum, default_value_t = DeployPolicyArg::Agent)]
        policy: DeployPolicyArg,
    },
    /// Print a checkpoint's architecture and parameter counts.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

/// Parses `args` and runs the command. Returns the process exit code:
/// 0 on success, 1 for usage or configuration errors, 2 for runtime
/// failures.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                1
            } else {
                2
            }
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::GenScene { manifest, out, seed } => gen_scene(manifest.as_deref(), &out, seed),
        Command::Train { config, episodes } => train(&config, episodes),
        Command::ScratchTrain { config, episodes } => scratch_train(&config, episodes),
        Command::Eval {
            checkpoint,
            config,
            corrupt,
            policy,
        } => eval(checkpoint.as_deref(), &config, corrupt.as_deref(), policy),
        Command::Deploy {
            checkpoint,
            config,
            moving,
            policy,
        } => deploy(&checkpoint, &config, moving, policy),
        Command::Inspect { checkpoint } => inspect(&checkpoint),
    }
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write(p: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(p, bytes).map_err(|e| Error::io(p, e))
}

fn write_json<T: Serialize>(p: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    text.push('\n');
    write(p, text)
}

fn image_ext() -> &'static str {
    if cfg!(feature = "png") {
        "png"
    } else {
        "ppm"
    }
}

fn load_config(path: &Path) -> Result<LoadedConfig> {
    match RunConfig::load(path) {
        Err(Error::Io { path, source }) => Err(Error::Config(format!("cannot read config {}: {source}", path.display()))),
        other => other,
    }
}

/// Writes the fully-resolved config beside the outputs.
fn echo_config(loaded: &LoadedConfig, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    write(&dir.join("config.resolved.toml"), loaded.config.to_toml_string())
}

fn gen_scene(manifest: Option<&Path>, out: &Path, seed: u64) -> Result<()> {
    let m = match manifest {
        Some(p) => SceneManifest::load(p)?,
        None => SceneManifest::default(),
    };
    let image = generate_scene(&m, seed)?;
    create_dir(out)?;
    let ext = image_ext();
    save_frame(&image, out.join(format!("scene.{ext}")))?;
    write(&out.join("manifest.toml"), m.to_toml_string())?;
    let mut overlay = image.clone();
    let g = m.groundtruth_box;
    let (x0, y0, x1, y1) = (g.x.round() as i64, g.y.round() as i64, g.right().round() as i64, g.bottom().round() as i64);
    let green = [0.1, 1.0, 0.2];
    overlay.draw_rect(x0, y0, x1, y0 + 2, green);
    overlay.draw_rect(x0, y1 - 2, x1, y1, green);
    overlay.draw_rect(x0, y0, x0 + 2, y1, green);
    overlay.draw_rect(x1 - 2, y0, x1, y1, green);
    save_frame(&overlay, out.join(format!("overlay.{ext}")))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn train(config: &Path, episodes: Option<usize>) -> Result<()> {
    let mut loaded = load_config(config)?;
    if let Some(n) = episodes {
        loaded.config.train.total_episodes = n;
    }
    let out = loaded.output_dir();
    echo_config(&loaded, &out)?;
    let manifest = loaded.manifest()?;
    let c = &loaded.config;
    let image = generate_scene(&manifest, c.scene_seed)?;
    let ckpt_dir = out.join("checkpoints");
    let setup = TrainSetup {
        image: &image,
        manifest: &manifest,
        env: c.env,
        agent: c.agent.clone(),
        train: loaded.train_config(out.join("metrics.csv")),
        config_hash: loaded.model_hash()?,
        checkpoint_dir: Some(&ckpt_dir),
    };
    let outcome = trainer::train(&setup)?;
    let running = trainer::running_success(&outcome.records, 30);
    let summary = serde_json::json!({
        "episodes": outcome.records.len(),
        "env_steps": outcome.env_steps,
        "updates": outcome.updates,
        "final_running_success": running.last().copied(),
        "final_checkpoint": outcome.final_checkpoint.as_ref().and_then(|p| p.file_name()).map(|n| n.to_string_lossy().into_owned()),
    });
    write_json(&out.join("train_summary.json"), &summary)?;
    println!(
        "trained {} episodes ({} steps, {} updates); checkpoints in {}",
        outcome.records.len(),
        outcome.env_steps,
        outcome.updates,
        ckpt_dir.display()
    );
    Ok(())
}

fn scratch_train(config: &Path, episodes: Option<usize>) -> Result<()> {
    let mut loaded = load_config(config)?;
    if let Some(n) = episodes {
        loaded.config.train.total_episodes = n;
    }
    let out = loaded.output_dir().join("scratch");
    echo_config(&loaded, &out)?;
    let manifest = loaded.manifest()?;
    let c = &loaded.config;
    let ws = Workspace::new(&manifest, c.scene_seed, c.workspace)?;
    let mut env = ScratchEnv::new(ws, c.scratch, c.env.state_size);
    let train_cfg = loaded.train_config(out.join("metrics.csv"));
    let net = AgentNetwork::<f32>::new(c.agent.network, &mut derived(c.seed, streams::NETWORK_INIT));
    let mut agent = DqnAgent::new(NeuralQ::new(net, &c.agent, train_cfg.lr_start), c.agent.clone())?;
    let ckpt_dir = out.join("checkpoints");
    create_dir(&ckpt_dir)?;
    let hash = loaded.model_hash()?;
    let save = |episode: usize, agent: &DqnAgent<NeuralQ>| {
        make_checkpoint(&agent.online().net, hash, &[("episode", episode as f64), ("env_steps", agent.env_steps() as f64)])
            .save(checkpoint_path(&ckpt_dir, episode))
    };
    save(0, &agent)?;
    let mut metrics = MetricsWriter::create(train_cfg.metrics_path.as_deref().expect("metrics path set"))?;
    let every = train_cfg.checkpoint_every;
    let records = crate::worksim::train_scratch(&mut env, &mut agent, &train_cfg, |r, agent| {
        metrics.append(r)?;
        if every > 0 && r.episode % every == 0 {
            save(r.episode, agent)?;
        }
        Ok(())
    })?;
    metrics.finish()?;
    if let Some(last) = records.last() {
        if every == 0 || last.episode % every != 0 {
            save(last.episode, &agent)?;
        }
    }
    let running = trainer::running_success(&records, 30);
    let mut curve = String::from("episode,running_success\n");
    for (r, v) in records.iter().zip(&running) {
        curve.push_str(&format!("{},{}\n", r.episode, v));
    }
    write(&out.join("running_success.csv"), curve)?;
    println!("scratch: {} episodes, final running success {:?}", records.len(), running.last());
    Ok(())
}

/// Loads a checkpoint and checks it against the config's architecture and
/// model hash.
pub fn load_agent(loaded: &LoadedConfig, path: &Path) -> Result<AgentNetwork<f32>> {
    let ckpt = Checkpoint::load(path)?;
    let net = AgentNetwork::<f32>::from_checkpoint(loaded.config.agent.network, &ckpt)?;
    let expected = loaded.model_hash()?;
    if ckpt.config_hash != expected {
        return Err(Error::ConfigMismatch {
            expected,
            found: ckpt.config_hash,
        });
    }
    Ok(net)
}

fn eval(checkpoint: Option<&Path>, config: &Path, corrupt: Option<&str>, policy: EvalPolicyArg) -> Result<()> {
    let mut loaded = load_config(config)?;
    if let Some(spec) = corrupt {
        loaded.config.eval.corruption = Some(spec.parse::<Corruption>()?);
    }
    let manifest = loaded.manifest()?;
    let net = match (policy, checkpoint) {
        (EvalPolicyArg::Agent, Some(p)) => Some(load_agent(&loaded, p)?),
        (EvalPolicyArg::Agent, None) => {
            return Err(Error::InvalidArgument("eval: --checkpoint is required with --policy agent".into()));
        }
        _ => None,
    };
    let mut policy: Box<dyn LocalizationPolicy> = match (&net, policy) {
        (Some(net), _) => Box::new(GreedyAgent::new(net)),
        (None, EvalPolicyArg::Random) => Box::new(RandomPolicy),
        (None, _) => Box::new(OraclePolicy),
    };
    let c = &loaded.config;
    let label = format!(
        "{}-{}",
        policy.name(),
        c.eval.corruption.map(|k| k.to_string().replace(':', "-")).unwrap_or_else(|| "clean".into())
    );
    let out = loaded.output_dir().join("eval").join(&label);
    echo_config(&loaded, &out)?;
    let (report, samples) = evaluate(policy.as_mut(), &manifest, c.scene_seed, &c.env, &c.eval, c.seed)?;
    write_eval_outputs(&out, &report, &samples)?;
    println!("{label}: success {} over {} episodes", report.overall.formatted, report.overall.n);
    for cell in &report.cells {
        println!("  {:<3} {}", cell.position.name(), cell.formatted);
    }
    Ok(())
}

fn write_eval_outputs(out: &Path, report: &EvalReport, samples: &[crate::evaluator::TrajectorySample]) -> Result<()> {
    write_json(&out.join("report.json"), report)?;
    let (cells, curve) = report_csv(report);
    write(&out.join("cells.csv"), cells)?;
    write(&out.join("curve.csv"), curve)?;
    let traj = out.join("trajectories");
    create_dir(&traj)?;
    let ext = image_ext();
    for s in samples {
        let stem = format!("{}_{}_t{}", s.position.name(), s.light.name(), s.trial);
        let (overlay, strip) = export_trajectory(&s.episode.trace, &s.image, &s.episode.states)?;
        save_frame(&overlay, traj.join(format!("{stem}_overlay.{ext}")))?;
        if let Some(strip) = strip {
            save_frame(&strip, traj.join(format!("{stem}_strip.{ext}")))?;
        }
        let mut buf = Vec::new();
        write_trace_jsonl(&s.episode.trace, &mut buf)?;
        write(&traj.join(format!("{stem}.jsonl")), buf)?;
    }
    Ok(())
}

fn deploy(checkpoints: &[PathBuf], config: &Path, moving: bool, policy: DeployPolicyArg) -> Result<()> {
    let loaded = load_config(config)?;
    let manifest = loaded.manifest()?;
    let c = &loaded.config;
    let nets = match policy {
        DeployPolicyArg::Agent if checkpoints.is_empty() => {
            return Err(Error::InvalidArgument("deploy: --checkpoint is required with --policy agent".into()));
        }
        DeployPolicyArg::Agent => checkpoints.iter().map(|p| load_agent(&loaded, p)).collect::<Result<Vec<_>>>()?,
        _ => Vec::new(),
    };
    let mut policies: Vec<Box<dyn WorkspacePolicy + '_>> = match policy {
        DeployPolicyArg::Agent => nets
            .iter()
            .map(|net| Box::new(GreedyNetworkPolicy { net }) as Box<dyn WorkspacePolicy>)
            .collect(),
        DeployPolicyArg::Oracle => vec![Box::new(OracleMotionPolicy)],
        DeployPolicyArg::Noop => vec![Box::new(ConstantPolicy(Action::NoOp))],
    };
    let out = loaded.output_dir().join(if moving { "deploy-moving" } else { "deploy" });
    echo_config(&loaded, &out)?;
    let mut reports: Vec<DeployReport> = Vec::new();
    let mut traces = String::new();
    for (row, p) in policies.iter_mut().enumerate() {
        let report = deploy_grid(
            &manifest,
            c.scene_seed,
            c.workspace,
            p.as_mut(),
            &c.deploy.starts,
            c.deploy.trials_per_start,
            c.env.state_size,
            moving.then_some(c.motion),
            c.seed,
            |pos, trial, outcome| {
                for r in &outcome.trace {
                    let line = serde_json::json!({
                        "row": row,
                        "start": pos.name(),
                        "trial": trial,
                        "step": r.step,
                        "action": r.action,
                        "camera": r.camera,
                        "object": r.object,
                        "success": r.success,
                    });
                    traces.push_str(&line.to_string());
                    traces.push('\n');
                }
            },
        )?;
        reports.push(report);
    }
    write(&out.join("traces.jsonl"), traces)?;
    let labels: Vec<String> = checkpoints
        .iter()
        .map(|p| p.display().to_string())
        .chain(std::iter::repeat(String::new()))
        .take(reports.len())
        .collect();
    let rows: Vec<_> = reports
        .iter()
        .zip(&labels)
        .map(|(r, l)| serde_json::json!({"checkpoint": l, "report": r}))
        .collect();
    write_json(&out.join("report.json"), &serde_json::json!({ "moving": moving, "rows": rows }))?;
    let mut table = String::from("model");
    for s in &c.deploy.starts {
        table.push(',');
        table.push_str(s.name());
    }
    table.push_str(",overall\n");
    for r in &reports {
        table.push_str(&r.policy);
        for cell in &r.cells {
            table.push_str(&format!(",{}", cell.summary.formatted));
        }
        table.push_str(&format!(",{}\n", r.overall.formatted));
    }
    write(&out.join("table.csv"), &table)?;
    print!("{table}");
    Ok(())
}

fn inspect(path: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(path)?;
    let mut stdout = std::io::stdout().lock();
    let mut line = |s: String| writeln!(stdout, "{s}").map_err(|e| Error::io("<stdout>", e));
    line(format!("descriptor: {}", ckpt.descriptor))?;
    line(format!("architecture hash: {:016x}", ckpt.arch_hash()))?;
    line(format!("config hash: {:016x}", ckpt.config_hash))?;
    for (k, v) in &ckpt.meta {
        line(format!("meta {k}: {v}"))?;
    }
    let (mut filter, mut backbone, mut total) = (0usize, 0usize, 0usize);
    for t in &ckpt.tensors {
        let n = t.data.len();
        total += n;
        if t.name.starts_with("filter.") {
            filter += n;
        } else {
            backbone += n;
        }
        line(format!("  {:<16} {:?} {n}", t.name, t.shape))?;
    }
    line(format!("total params: {total}"))?;
    line(format!("dynamic filter params: {filter}"))?;
    line(format!("q-network params: {backbone}"))?;
    let ratio = if backbone > 0 { filter as f64 / backbone as f64 } else { 0.0 };
    line(format!("filter/backbone ratio: {}", format_sig(ratio, 4)))
}

/// Formats with `sig` significant digits in scientific notation.
pub fn format_sig(v: f64, sig: usize) -> String {
    format!("{:.*e}", sig.saturating_sub(1), v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_formatting() {
        assert_eq!(format_sig(264.0 / 1_685_671.0, 4), "1.566e-4");
        assert_eq!(format_sig(0.0, 4), "0.000e0");
    }

    #[test]
    fn usage_errors_exit_with_one() {
        assert_eq!(run(["ohpl", "bogus"]), 1);
        assert_eq!(run(["ohpl", "train"]), 1);
        assert_eq!(run(["ohpl", "--help"]), 0);
    }
}
