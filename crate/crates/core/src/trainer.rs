//! Episode loop, learning-rate schedule, metrics and checkpoints.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, AgentNetwork, DqnAgent, Experience, NeuralQ, QFunction, TabularQ};
use crate::autodiff::{hash64, Checkpoint};
use crate::env::{EnvConfig, LocalizationEnv};
use crate::error::{Error, Result};
use crate::geometry::Action;
use crate::imaging::{Frame, PackedFrame, SceneManifest};
use crate::rng::{derived, SimRng};

/// Seed streams derived from the run seed.
pub mod streams {
    pub const NETWORK_INIT: u64 = 0;
    pub const ENV: u64 = 1;
    pub const AGENT: u64 = 2;
}

/// Minimal episodic interface the DQN loop runs against.
pub trait Environment {
    type State: Clone;

    fn reset(&mut self, rng: &mut SimRng) -> Result<Self::State>;

    fn step(&mut self, action: Action, rng: &mut SimRng) -> Result<EnvStep<Self::State>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep<S> {
    pub state: S,
    pub reward: f64,
    pub terminal: bool,
    pub reached_goal: bool,
    /// Task progress measure reported in metrics (overlap for localization).
    pub score: f64,
}

impl Environment for LocalizationEnv {
    type State = PackedFrame;

    fn reset(&mut self, rng: &mut SimRng) -> Result<PackedFrame> {
        Ok(PackedFrame::from_frame(&LocalizationEnv::reset(self, rng)?))
    }

    fn step(&mut self, action: Action, rng: &mut SimRng) -> Result<EnvStep<PackedFrame>> {
        let r = LocalizationEnv::step(self, action, rng)?;
        Ok(EnvStep {
            state: PackedFrame::from_frame(&r.state),
            reward: r.reward,
            terminal: r.terminal,
            reached_goal: r.info.reached_goal,
            score: r.info.jaccard,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_episodes: usize,
    /// Hard cap on environment steps (0 = none); the episode in progress
    /// is cut short.
    pub max_env_steps: u64,
    pub lr_start: f64,
    /// Per gradient update.
    pub lr_decay_rate: f64,
    pub lr_min: f64,
    /// Filled from the run seed when part of a run config.
    #[serde(skip)]
    pub seed: u64,
    /// In episodes; 0 writes only the initial and final checkpoints.
    pub checkpoint_every: usize,
    #[serde(skip)]
    pub metrics_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_episodes: 1000,
            max_env_steps: 30_000,
            lr_start: 0.001,
            lr_decay_rate: 0.99995,
            lr_min: 1e-5,
            seed: 0,
            checkpoint_every: 100,
            metrics_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_start > 0.0 && self.lr_min > 0.0 && self.lr_min <= self.lr_start) {
            return Err(Error::Config("train: need 0 < lr_min <= lr_start".into()));
        }
        if !(self.lr_decay_rate > 0.0 && self.lr_decay_rate <= 1.0) {
            return Err(Error::Config("train.lr_decay_rate must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, updates: u64) -> f64 {
        (self.lr_start * self.lr_decay_rate.powf(updates as f64)).max(self.lr_min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub total_reward: f64,
    pub steps: usize,
    pub final_jaccard: f64,
    pub reached_goal: bool,
    pub epsilon: f64,
    pub env_steps: u64,
    pub updates: u64,
    pub lr: f64,
    pub mean_loss: Option<f64>,
    /// Written to the `_timing.csv` companion, not the metrics CSV.
    pub wall_time_s: f64,
}

pub const METRICS_HEADER: &str =
    "episode,total_reward,steps,final_jaccard,reached_goal,epsilon,env_steps,updates,lr,mean_loss";

impl EpisodeRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.episode,
            self.total_reward,
            self.steps,
            self.final_jaccard,
            u8::from(self.reached_goal),
            self.epsilon,
            self.env_steps,
            self.updates,
            self.lr,
            self.mean_loss.map(|l| l.to_string()).unwrap_or_default()
        )
    }
}

/// Mean success over the trailing `window` records, one value per record.
pub fn running_success(records: &[EpisodeRecord], window: usize) -> Vec<f64> {
    let flags: Vec<bool> = records.iter().map(|r| r.reached_goal).collect();
    running_mean(&flags, window)
}

pub fn running_mean(flags: &[bool], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(flags.len());
    let mut hits = 0usize;
    for i in 0..flags.len() {
        hits += usize::from(flags[i]);
        if i >= window {
            hits -= usize::from(flags[i - window]);
        }
        out.push(hits as f64 / (i + 1).min(window) as f64);
    }
    out
}

/// Runs DQN episodes until the episode count or step budget is exhausted.
/// `on_episode` sees every finished record together with the agent.
pub fn run_dqn<E, Q, F>(
    env: &mut E,
    agent: &mut DqnAgent<Q>,
    cfg: &TrainConfig,
    mut on_episode: F,
) -> Result<Vec<EpisodeRecord>>
where
    E: Environment<State = Q::State>,
    Q: QFunction,
    F: FnMut(&EpisodeRecord, &DqnAgent<Q>) -> Result<()>,
{
    cfg.validate()?;
    let mut env_rng = derived(cfg.seed, streams::ENV);
    let mut agent_rng = derived(cfg.seed, streams::AGENT);
    let budget = if cfg.max_env_steps == 0 { u64::MAX } else { cfg.max_env_steps };
    let mut records = Vec::new();
    for episode in 1..=cfg.total_episodes {
        if agent.env_steps() >= budget {
            break;
        }
        let started = Instant::now();
        let epsilon = agent.epsilon();
        let mut state = env.reset(&mut env_rng)?;
        let (mut total_reward, mut steps) = (0.0, 0usize);
        let (mut loss_sum, mut loss_n) = (0.0, 0usize);
        let (score, reached) = loop {
            let action = agent.act(&state, &mut agent_rng)?;
            let r = env.step(action, &mut env_rng)?;
            total_reward += r.reward;
            steps += 1;
            let lr = cfg.lr_at(agent.updates());
            let exp = Experience {
                state,
                action,
                reward: r.reward,
                next_state: r.state.clone(),
                terminal: r.terminal,
            };
            let out = agent.observe(exp, lr, &mut agent_rng)?;
            if let Some(loss) = out.loss {
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        update: agent.updates(),
                        episode,
                    });
                }
                loss_sum += loss;
                loss_n += 1;
            }
            if r.terminal || agent.env_steps() >= budget {
                break (r.score, r.reached_goal);
            }
            state = r.state;
        };
        let record = EpisodeRecord {
            episode,
            total_reward,
            steps,
            final_jaccard: score,
            reached_goal: reached,
            epsilon,
            env_steps: agent.env_steps(),
            updates: agent.updates(),
            lr: cfg.lr_at(agent.updates()),
            mean_loss: (loss_n > 0).then(|| loss_sum / loss_n as f64),
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        on_episode(&record, agent)?;
        records.push(record);
    }
    Ok(records)
}

/// Hash of everything that defines what a model was trained on.
pub fn config_hash(scene: &SceneManifest, scene_seed: u64, env: &EnvConfig, agent: &AgentConfig) -> u64 {
    let doc = serde_json::json!({
        "scene": scene,
        "scene_seed": scene_seed,
        "env": env,
        "agent": agent,
    });
    hash64(doc.to_string().as_bytes())
}

pub fn checkpoint_path(dir: &Path, episode: usize) -> PathBuf {
    dir.join(format!("ckpt_ep{episode}"))
}

/// Serializes the online network with run metadata.
pub fn make_checkpoint(net: &AgentNetwork<f32>, config_hash: u64, meta: &[(&str, f64)]) -> Checkpoint {
    let mut ckpt = net.to_checkpoint();
    ckpt.config_hash = config_hash;
    ckpt.meta = meta.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    ckpt
}

pub struct MetricsWriter {
    path: PathBuf,
    csv: BufWriter<File>,
    timing: BufWriter<File>,
}

impl MetricsWriter {
    /// Creates `path` and a `*_timing.csv` companion for wall-clock times.
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let open = |p: &Path| File::create(p).map(BufWriter::new).map_err(|e| Error::io(p, e));
        let timing_path = timing_path(path);
        let mut w = MetricsWriter {
            path: path.to_path_buf(),
            csv: open(path)?,
            timing: open(&timing_path)?,
        };
        writeln!(w.csv, "{METRICS_HEADER}").map_err(|e| Error::io(&w.path, e))?;
        writeln!(w.timing, "episode,wall_time_s").map_err(|e| Error::io(&timing_path, e))?;
        Ok(w)
    }

    pub fn append(&mut self, r: &EpisodeRecord) -> Result<()> {
        writeln!(self.csv, "{}", r.csv_row()).map_err(|e| Error::io(&self.path, e))?;
        writeln!(self.timing, "{},{:.6}", r.episode, r.wall_time_s).map_err(|e| Error::io(&self.path, e))?;
        self.csv.flush().map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.csv.flush().map_err(|e| Error::io(&self.path, e))?;
        self.timing.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn timing_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("metrics");
    path.with_file_name(format!("{stem}_timing.csv"))
}

/// Everything needed to train one localization model.
#[derive(Debug, Clone)]
pub struct TrainSetup<'a> {
    pub image: &'a Frame,
    pub manifest: &'a SceneManifest,
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub train: TrainConfig,
    pub config_hash: u64,
    pub checkpoint_dir: Option<&'a Path>,
}

pub struct TrainOutcome {
    pub network: AgentNetwork<f32>,
    pub records: Vec<EpisodeRecord>,
    pub env_steps: u64,
    pub updates: u64,
    pub final_checkpoint: Option<PathBuf>,
}

/// Trains a neural agent on one scene image.
pub fn train(setup: &TrainSetup<'_>) -> Result<TrainOutcome> {
    setup.agent.validate()?;
    setup.train.validate()?;
    let mut env = LocalizationEnv::new(setup.image.clone(), setup.manifest.groundtruth_box, setup.env)?;
    let net = AgentNetwork::<f32>::new(setup.agent.network, &mut derived(setup.train.seed, streams::NETWORK_INIT));
    let q = NeuralQ::new(net, &setup.agent, setup.train.lr_start);
    let mut agent = DqnAgent::new(q, setup.agent.clone())?;
    let mut metrics = match &setup.train.metrics_path {
        Some(p) => Some(MetricsWriter::create(p)?),
        None => None,
    };
    let save = |episode: usize, agent: &DqnAgent<NeuralQ>| -> Result<Option<PathBuf>> {
        let Some(dir) = setup.checkpoint_dir else {
            return Ok(None);
        };
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = checkpoint_path(dir, episode);
        let meta = [
            ("episode", episode as f64),
            ("env_steps", agent.env_steps() as f64),
            ("updates", agent.updates() as f64),
            ("seed", setup.train.seed as f64),
        ];
        make_checkpoint(&agent.online().net, setup.config_hash, &meta).save(&path)?;
        Ok(Some(path))
    };
    let mut last_saved = save(0, &agent)?;
    let mut last_episode = 0;
    let every = setup.train.checkpoint_every;
    let records = run_dqn(&mut env, &mut agent, &setup.train, |r, agent| {
        if let Some(m) = metrics.as_mut() {
            m.append(r)?;
        }
        last_episode = r.episode;
        if every > 0 && r.episode % every == 0 {
            last_saved = save(r.episode, agent)?;
        }
        Ok(())
    })?;
    if last_episode > 0 && (every == 0 || last_episode % every != 0) {
        last_saved = save(last_episode, &agent)?;
    }
    if let Some(m) = metrics {
        m.finish()?;
    }
    let (env_steps, updates) = (agent.env_steps(), agent.updates());
    Ok(TrainOutcome {
        network: agent.into_online().net,
        records,
        env_steps,
        updates,
        final_checkpoint: last_saved,
    })
}

/// Deterministic corridor with the goal somewhere inside it. Only the two
/// horizontal shifts move; every other action stays put.
#[derive(Debug, Clone)]
pub struct LineWorld {
    pub n_states: usize,
    pub goal: usize,
    pub step_reward: f64,
    pub max_steps: usize,
    position: usize,
    steps: usize,
}

impl LineWorld {
    pub fn new(n_states: usize, goal: usize) -> Self {
        assert!(goal < n_states, "goal outside the corridor");
        LineWorld {
            n_states,
            goal,
            step_reward: -0.1,
            max_steps: 20,
            position: 0,
            steps: 0,
        }
    }

    pub fn next_state(&self, s: usize, action: Action) -> usize {
        match action {
            Action::ShiftLeft => s.saturating_sub(1),
            Action::ShiftRight => (s + 1).min(self.n_states - 1),
            _ => s,
        }
    }

    pub fn reset_to(&mut self, s: usize) {
        self.position = s;
        self.steps = 0;
    }

    /// Greedy rollout from `start`; true when the goal is reached.
    pub fn greedy_reaches_goal(&self, q: &TabularQ, start: usize) -> Result<bool> {
        let mut s = start;
        for _ in 0..self.max_steps {
            if s == self.goal {
                return Ok(true);
            }
            s = self.next_state(s, crate::agent::argmax(&q.q_values(&s)?));
        }
        Ok(s == self.goal)
    }
}

impl Environment for LineWorld {
    type State = usize;

    fn reset(&mut self, rng: &mut SimRng) -> Result<usize> {
        use rand::Rng;
        let mut s = rng.random_range(0..self.n_states - 1);
        if s >= self.goal {
            s += 1;
        }
        self.reset_to(s);
        Ok(s)
    }

    fn step(&mut self, action: Action, _rng: &mut SimRng) -> Result<EnvStep<usize>> {
        self.position = self.next_state(self.position, action);
        self.steps += 1;
        let reached = self.position == self.goal;
        Ok(EnvStep {
            state: self.position,
            reward: if reached { 1.0 } else { self.step_reward },
            terminal: reached || self.steps >= self.max_steps,
            reached_goal: reached,
            score: f64::from(u8::from(reached)),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(i: usize, ok: bool) -> EpisodeRecord {
        EpisodeRecord {
            episode: i,
            total_reward: 0.0,
            steps: 1,
            final_jaccard: 0.0,
            reached_goal: ok,
            epsilon: 0.5,
            env_steps: 0,
            updates: 0,
            lr: 0.001,
            mean_loss: None,
            wall_time_s: 0.0,
        }
    }

    #[test]
    fn running_success_windows() {
        let all: Vec<_> = (0..40).map(|i| record(i, true)).collect();
        assert!(running_success(&all, 30).iter().all(|&v| v == 1.0));
        let alt: Vec<_> = (0..100).map(|i| record(i, i % 2 == 0)).collect();
        let curve = running_success(&alt, 30);
        assert!(curve[29..].iter().all(|v| (v - 0.5).abs() <= 1.0 / 30.0 + 1e-12));
        let few: Vec<_> = [true, false, true].iter().enumerate().map(|(i, &b)| record(i, b)).collect();
        let c = running_success(&few, 30);
        assert_eq!(c, vec![1.0, 0.5, 2.0 / 3.0]);
    }

    #[test]
    fn lr_schedule_is_monotone_with_floor() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(0), 0.001);
        let mut prev = f64::INFINITY;
        for u in (0..200_000).step_by(1000) {
            let lr = cfg.lr_at(u);
            assert!(lr <= prev && lr >= 1e-5);
            prev = lr;
        }
        assert_eq!(cfg.lr_at(10_000_000), 1e-5);
    }

    #[test]
    fn zero_episodes_produce_no_records() {
        let cfg = AgentConfig::default();
        let mut agent = DqnAgent::new(TabularQ::new(8, &cfg, 0.01), cfg).unwrap();
        let train = TrainConfig {
            total_episodes: 0,
            ..TrainConfig::default()
        };
        let records = run_dqn(&mut LineWorld::new(8, 5), &mut agent, &train, |_, _| Ok(())).unwrap();
        assert!(records.is_empty());
    }

    #[test]
    fn step_budget_is_respected() {
        let cfg = AgentConfig {
            warmup_steps: 10,
            ..AgentConfig::default()
        };
        let mut agent = DqnAgent::new(TabularQ::new(8, &cfg, 0.01), cfg).unwrap();
        let train = TrainConfig {
            total_episodes: 1000,
            max_env_steps: 137,
            ..TrainConfig::default()
        };
        let records = run_dqn(&mut LineWorld::new(8, 5), &mut agent, &train, |_, _| Ok(())).unwrap();
        assert_eq!(agent.env_steps(), 137);
        assert_eq!(records.last().unwrap().env_steps, 137);
        assert!(agent.replay().len() <= 5000);
    }
}
