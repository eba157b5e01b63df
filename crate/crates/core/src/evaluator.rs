//! Measurement protocols: nine-position grids, illumination and corruption
//! variants, overlap-threshold sweeps and trajectory overlays.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{argmax, AgentNetwork};
use crate::env::{EnvConfig, LocalizationEnv, TraceRecord};
use crate::error::{Error, Result};
use crate::geometry::{Action, BoundingBox, N_ACTIONS};
use crate::imaging::{gaussian_blur, gaussian_noise, generate_scene, Frame, Light, PackedFrame, SceneManifest};
use crate::rng::{derive_seed, SimRng};

/// Named start cells. The name says which way the start view is displaced
/// from the object: a `B` start looks from below, so the object shows up
/// near the top of the view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StartPosition {
    M,
    ML,
    MR,
    T,
    TL,
    TR,
    B,
    BL,
    BR,
}

impl StartPosition {
    pub const ALL: [StartPosition; 9] = [
        StartPosition::M,
        StartPosition::ML,
        StartPosition::MR,
        StartPosition::T,
        StartPosition::TL,
        StartPosition::TR,
        StartPosition::B,
        StartPosition::BL,
        StartPosition::BR,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StartPosition::M => "M",
            StartPosition::ML => "ML",
            StartPosition::MR => "MR",
            StartPosition::T => "T",
            StartPosition::TL => "TL",
            StartPosition::TR => "TR",
            StartPosition::B => "B",
            StartPosition::BL => "BL",
            StartPosition::BR => "BR",
        }
    }

    /// Unit grid offset `(dx, dy)` in image directions (y grows downward).
    pub fn offset(self) -> (f64, f64) {
        match self {
            StartPosition::M => (0.0, 0.0),
            StartPosition::ML => (-1.0, 0.0),
            StartPosition::MR => (1.0, 0.0),
            StartPosition::T => (0.0, -1.0),
            StartPosition::TL => (-1.0, -1.0),
            StartPosition::TR => (1.0, -1.0),
            StartPosition::B => (0.0, 1.0),
            StartPosition::BL => (-1.0, 1.0),
            StartPosition::BR => (1.0, 1.0),
        }
    }

    pub fn parse(s: &str) -> Option<StartPosition> {
        StartPosition::ALL.into_iter().find(|p| p.name().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for StartPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Fraction of the containment slack used by off-center starts.
pub const START_OFFSET_FRACTION: f64 = 0.9;

/// Deterministic start box: twice the object width, shifted toward the
/// cell's direction while still containing the object when possible.
pub fn start_box(pos: StartPosition, gt: &BoundingBox, cfg: &EnvConfig) -> BoundingBox {
    let tc = &cfg.transition;
    let w = (2.0 * gt.w).min(tc.image_size).min(tc.w_max).max(tc.w_min);
    let slack = ((w - gt.w) / 2.0).max(0.0);
    let (dx, dy) = pos.offset();
    let (cx, cy) = gt.center();
    let b = BoundingBox::from_center(
        cx + START_OFFSET_FRACTION * slack * dx,
        cy + START_OFFSET_FRACTION * slack * dy,
        w,
    );
    BoundingBox::new(
        b.x.clamp(0.0, tc.image_size - w),
        b.y.clamp(0.0, tc.image_size - w),
        w,
    )
}

/// Image corruption applied to the whole environment image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Corruption {
    Blur(usize),
    Noise(u32),
    Light(Light),
}

pub const CORRUPTION_CHOICES: &str = "blur:7, blur:15, noise:10, noise:20, light:left, light:right, light:above";

impl FromStr for Corruption {
    type Err = Error;

    fn from_str(s: &str) -> Result<Corruption> {
        let bad = || {
            Error::InvalidArgument(format!(
                "invalid corruption `{s}`; expected one of {CORRUPTION_CHOICES}"
            ))
        };
        let (kind, value) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "blur" => match value.parse::<usize>() {
                Ok(k) if k >= 1 && k % 2 == 1 => Ok(Corruption::Blur(k)),
                _ => Err(bad()),
            },
            "noise" => match value.parse::<u32>() {
                Ok(v) if v > 0 => Ok(Corruption::Noise(v)),
                _ => Err(bad()),
            },
            "light" => Light::parse(value).map(Corruption::Light).ok_or_else(bad),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for Corruption {
    type Error = Error;

    fn try_from(s: String) -> Result<Corruption> {
        s.parse()
    }
}

impl From<Corruption> for String {
    fn from(c: Corruption) -> String {
        c.to_string()
    }
}

impl fmt::Display for Corruption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Corruption::Blur(k) => write!(f, "blur:{k}"),
            Corruption::Noise(v) => write!(f, "noise:{v}"),
            Corruption::Light(l) => write!(f, "light:{}", l.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalProtocol {
    pub positions: Vec<StartPosition>,
    pub trials_per_cell: usize,
    /// Empty means the scene's own light.
    pub lights: Vec<Light>,
    pub corruption: Option<Corruption>,
    pub thresholds: Vec<f64>,
    /// Trajectories exported per cell (first trials).
    pub trajectories_per_cell: usize,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol {
            positions: StartPosition::ALL.to_vec(),
            trials_per_cell: 10,
            lights: Vec::new(),
            corruption: None,
            thresholds: (1..=9).map(|i| i as f64 / 10.0).collect(),
            trajectories_per_cell: 1,
        }
    }
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.trials_per_cell == 0 {
            return Err(Error::Config("eval.trials_per_cell must be at least 1".into()));
        }
        if self.positions.is_empty() {
            return Err(Error::Config("eval.positions must not be empty".into()));
        }
        validate_thresholds(&self.thresholds)
    }

    /// Lights actually evaluated for a scene.
    pub fn effective_lights(&self, manifest: &SceneManifest) -> Vec<Light> {
        match (self.corruption, self.lights.is_empty()) {
            (Some(Corruption::Light(l)), _) => vec![l],
            (_, true) => vec![manifest.light],
            (_, false) => self.lights.clone(),
        }
    }
}

pub fn validate_thresholds(thresholds: &[f64]) -> Result<()> {
    if thresholds.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
        return Err(Error::Config("thresholds must lie in (0, 1)".into()));
    }
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config("thresholds must be sorted ascending".into()));
    }
    Ok(())
}

pub fn standard_error(p: f64, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Percentages with the standard error in brackets, e.g. `95.8 (4.1)`.
pub fn format_ratio_se(p: f64, se: f64) -> String {
    format!("{:.1} ({:.1})", 100.0 * p, 100.0 * se)
}

/// Builds the evaluation image for one light with the corruption applied.
pub fn corrupted_image(
    manifest: &SceneManifest,
    scene_seed: u64,
    light: Light,
    corruption: Option<Corruption>,
    seed: u64,
) -> Result<Frame> {
    let mut m = manifest.clone();
    m.light = light;
    let image = generate_scene(&m, scene_seed)?;
    match corruption {
        Some(Corruption::Blur(k)) => gaussian_blur(&image, k),
        Some(Corruption::Noise(v)) => gaussian_noise(&image, f64::from(v), derive_seed(seed, 0xC0)),
        Some(Corruption::Light(_)) | None => Ok(image),
    }
}

/// Chooses an action in the localization environment.
pub trait LocalizationPolicy {
    fn name(&self) -> String;

    fn choose(&mut self, env: &LocalizationEnv, state: &Frame, rng: &mut SimRng) -> Result<Action>;
}

/// Greedy network policy. States are quantized exactly as during training.
pub struct GreedyAgent<'a> {
    pub net: &'a AgentNetwork<f32>,
    pub label: String,
}

impl<'a> GreedyAgent<'a> {
    pub fn new(net: &'a AgentNetwork<f32>) -> Self {
        let label = if net.spec().dynamic_filter { "ohpl-full" } else { "ohpl-base" };
        GreedyAgent {
            net,
            label: label.into(),
        }
    }

    pub fn q_values(&self, state: &Frame) -> Result<[f64; N_ACTIONS]> {
        let packed = PackedFrame::from_frame(state);
        Ok(self
            .net
            .q_values_tensor(crate::agent::packed_to_tensor(&[&packed])?)?[0])
    }
}

impl LocalizationPolicy for GreedyAgent<'_> {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn choose(&mut self, _env: &LocalizationEnv, state: &Frame, _rng: &mut SimRng) -> Result<Action> {
        Ok(argmax(&self.q_values(state)?))
    }
}

/// Scripted greedy-on-next-overlap policy.
pub struct OraclePolicy;

impl LocalizationPolicy for OraclePolicy {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn choose(&mut self, env: &LocalizationEnv, _state: &Frame, _rng: &mut SimRng) -> Result<Action> {
        env.oracle_action()
    }
}

pub struct RandomPolicy;

impl LocalizationPolicy for RandomPolicy {
    fn name(&self) -> String {
        "random".into()
    }

    fn choose(&mut self, _env: &LocalizationEnv, _state: &Frame, rng: &mut SimRng) -> Result<Action> {
        Ok(Action::ALL[rng.random_range(0..N_ACTIONS)])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub success: bool,
    pub steps: usize,
    pub final_jaccard: f64,
    pub max_jaccard: f64,
    pub trace: Vec<TraceRecord>,
    /// States after each step; filled only when requested.
    pub states: Vec<Frame>,
}

/// Plays one episode from `start` until termination.
pub fn run_episode<P: LocalizationPolicy + ?Sized>(
    env: &mut LocalizationEnv,
    start: BoundingBox,
    policy: &mut P,
    rng: &mut SimRng,
    keep_states: bool,
) -> Result<EpisodeSummary> {
    let mut state = env.reset_to(start)?;
    let mut max_j = env.trace()[0].jaccard;
    let mut states = Vec::new();
    loop {
        let action = policy.choose(env, &state, rng)?;
        let r = env.step(action, rng)?;
        max_j = max_j.max(r.info.jaccard);
        if keep_states {
            states.push(r.state.clone());
        }
        if r.terminal {
            return Ok(EpisodeSummary {
                success: r.info.reached_goal,
                steps: r.info.step,
                final_jaccard: r.info.jaccard,
                max_jaccard: max_j,
                trace: env.trace().to_vec(),
                states,
            });
        }
        state = r.state;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub position: StartPosition,
    pub n: usize,
    pub successes: usize,
    pub success_ratio: f64,
    pub standard_error: f64,
    pub formatted: String,
    pub mean_steps: f64,
    pub mean_final_jaccard: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub success_ratio: f64,
    pub standard_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub successes: usize,
    pub success_ratio: f64,
    pub standard_error: f64,
    pub formatted: String,
}

impl Summary {
    pub fn from_counts(successes: usize, n: usize) -> Summary {
        let p = if n == 0 { 0.0 } else { successes as f64 / n as f64 };
        let se = standard_error(p, n);
        Summary {
            n,
            successes,
            success_ratio: p,
            standard_error: se,
            formatted: format_ratio_se(p, se),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: String,
    pub seed: u64,
    pub corruption: Option<Corruption>,
    pub lights: Vec<Light>,
    pub success_threshold: f64,
    pub trials_per_cell: usize,
    pub cells: Vec<CellReport>,
    pub overall: Summary,
    pub curve: Vec<CurvePoint>,
}

/// An exported episode for overlays.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub position: StartPosition,
    pub light: Light,
    pub trial: usize,
    pub image: Frame,
    pub episode: EpisodeSummary,
}

/// Success ratio per threshold using the best overlap of each episode.
pub fn threshold_sweep(max_jaccards: &[f64], thresholds: &[f64]) -> Result<Vec<CurvePoint>> {
    validate_thresholds(thresholds)?;
    let n = max_jaccards.len();
    Ok(thresholds
        .iter()
        .map(|&t| {
            let hits = max_jaccards.iter().filter(|&&j| j > t).count();
            let s = Summary::from_counts(hits, n);
            CurvePoint {
                threshold: t,
                success_ratio: s.success_ratio,
                standard_error: s.standard_error,
            }
        })
        .collect())
}

fn trial_seed(seed: u64, cell: usize, light: usize, trial: usize) -> u64 {
    derive_seed(seed, ((cell as u64) << 40) | ((light as u64) << 20) | trial as u64)
}

/// Runs the full protocol with one policy.
pub fn evaluate<P: LocalizationPolicy + ?Sized>(
    policy: &mut P,
    manifest: &SceneManifest,
    scene_seed: u64,
    env_cfg: &EnvConfig,
    protocol: &EvalProtocol,
    seed: u64,
) -> Result<(EvalReport, Vec<TrajectorySample>)> {
    protocol.validate()?;
    env_cfg.validate()?;
    let lights = protocol.effective_lights(manifest);
    let gt = manifest.groundtruth_box;
    let mut envs = Vec::with_capacity(lights.len());
    for &light in &lights {
        let image = corrupted_image(manifest, scene_seed, light, protocol.corruption, seed)?;
        envs.push(LocalizationEnv::new(image, gt, *env_cfg)?);
    }
    let mut cells = Vec::new();
    let mut all_max = Vec::new();
    let mut samples = Vec::new();
    let (mut total_hits, mut total_n) = (0, 0);
    for (ci, &pos) in protocol.positions.iter().enumerate() {
        let start = start_box(pos, &gt, env_cfg);
        let (mut hits, mut n, mut steps, mut final_j) = (0usize, 0usize, 0usize, 0.0);
        for (li, env) in envs.iter_mut().enumerate() {
            for trial in 0..protocol.trials_per_cell {
                let mut rng = crate::rng::seeded(trial_seed(seed, ci, li, trial));
                let keep = trial < protocol.trajectories_per_cell;
                let ep = run_episode(env, start, policy, &mut rng, keep)?;
                hits += usize::from(ep.success);
                n += 1;
                steps += ep.steps;
                final_j += ep.final_jaccard;
                all_max.push(ep.max_jaccard);
                if keep {
                    samples.push(TrajectorySample {
                        position: pos,
                        light: lights[li],
                        trial,
                        image: env.image().clone(),
                        episode: ep,
                    });
                }
            }
        }
        total_hits += hits;
        total_n += n;
        let s = Summary::from_counts(hits, n);
        cells.push(CellReport {
            position: pos,
            n,
            successes: hits,
            success_ratio: s.success_ratio,
            standard_error: s.standard_error,
            formatted: s.formatted,
            mean_steps: steps as f64 / n as f64,
            mean_final_jaccard: final_j / n as f64,
        });
    }
    let report = EvalReport {
        policy: policy.name(),
        seed,
        corruption: protocol.corruption,
        lights,
        success_threshold: env_cfg.success_threshold,
        trials_per_cell: protocol.trials_per_cell,
        cells,
        overall: Summary::from_counts(total_hits, total_n),
        curve: threshold_sweep(&all_max, &protocol.thresholds)?,
    };
    Ok((report, samples))
}

/// Companion CSV rows for a report: one per cell, then the sweep curve.
pub fn report_csv(report: &EvalReport) -> (String, String) {
    let mut cells = String::from("position,n,successes,success_ratio,standard_error,mean_steps,mean_final_jaccard\n");
    for c in &report.cells {
        cells.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            c.position, c.n, c.successes, c.success_ratio, c.standard_error, c.mean_steps, c.mean_final_jaccard
        ));
    }
    let mut curve = String::from("threshold,success_ratio,standard_error\n");
    for p in &report.curve {
        curve.push_str(&format!("{},{},{}\n", p.threshold, p.success_ratio, p.standard_error));
    }
    (cells, curve)
}

/// Colour for step `i` of `n` on a dark-blue to yellow ramp.
pub fn step_color(i: usize, n: usize) -> [f32; 3] {
    const DARK_BLUE: [f32; 3] = [0.12, 0.05, 0.45];
    const YELLOW: [f32; 3] = [1.0, 0.92, 0.1];
    let t = if n <= 1 { 0.0 } else { i as f32 / (n - 1) as f32 };
    std::array::from_fn(|c| DARK_BLUE[c] + t * (YELLOW[c] - DARK_BLUE[c]))
}

fn outline(frame: &mut Frame, b: &BoundingBox, rgb: [f32; 3], thickness: i64) {
    let x0 = b.x.round() as i64;
    let y0 = b.y.round() as i64;
    let x1 = (b.x + b.w).round() as i64;
    let y1 = (b.y + b.w).round() as i64;
    frame.draw_rect(x0, y0, x1, y0 + thickness, rgb);
    frame.draw_rect(x0, y1 - thickness, x1, y1, rgb);
    frame.draw_rect(x0, y0, x0 + thickness, y1, rgb);
    frame.draw_rect(x1 - thickness, y0, x1, y1, rgb);
}

/// Environment image with one colour-graded outline per step, plus the
/// post-step states laid out left to right.
pub fn export_trajectory(trace: &[TraceRecord], image: &Frame, states: &[Frame]) -> Result<(Frame, Option<Frame>)> {
    let boxes: Vec<&TraceRecord> = trace.iter().filter(|r| r.action.is_some()).collect();
    let boxes = if boxes.is_empty() { trace.iter().collect() } else { boxes };
    if boxes.is_empty() {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    }
    let mut overlay = image.clone();
    for (i, r) in boxes.iter().enumerate() {
        outline(&mut overlay, &r.bbox, step_color(i, boxes.len()), 2);
    }
    let strip = if states.is_empty() {
        None
    } else {
        Some(Frame::hstack(states)?)
    };
    Ok((overlay, strip))
}

/// Monte-Carlo success rate of uniformly random actions (baseline).
pub fn random_baseline(manifest: &SceneManifest, scene_seed: u64, env_cfg: &EnvConfig, seed: u64) -> Result<f64> {
    let (report, _) = evaluate(
        &mut RandomPolicy,
        manifest,
        scene_seed,
        env_cfg,
        &EvalProtocol {
            trajectories_per_cell: 0,
            ..EvalProtocol::default()
        },
        seed,
    )?;
    Ok(report.overall.success_ratio)
}
