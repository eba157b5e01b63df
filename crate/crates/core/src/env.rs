//! Sequential localization as an episodic MDP over a single image.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{jaccard, sample_sigma, transition, Action, BoundingBox, TransitionConfig};
use crate::imaging::{crop_resize, Frame};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpawnConfig {
    pub scale_min: f64,
    pub scale_max: f64,
    pub max_resamples: usize,
}

impl Default for SpawnConfig {
    fn default() -> Self {
        SpawnConfig {
            scale_min: 1.2,
            scale_max: 3.0,
            max_resamples: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub t_max: usize,
    pub success_threshold: f64,
    pub alpha: f64,
    pub state_size: usize,
    pub transition: TransitionConfig,
    pub spawn: SpawnConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            t_max: 50,
            success_threshold: 0.8,
            alpha: 0.5,
            state_size: 84,
            transition: TransitionConfig::default(),
            spawn: SpawnConfig::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.success_threshold > 0.0 && self.success_threshold < 1.0) {
            return Err(Error::Config("env.success_threshold must lie in (0, 1)".into()));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Config("env.alpha must be positive".into()));
        }
        if self.t_max == 0 {
            return Err(Error::Config("env.t_max must be at least 1".into()));
        }
        if self.state_size == 0 {
            return Err(Error::Config("env.state_size must be positive".into()));
        }
        if !(self.spawn.scale_min > 1.0 && self.spawn.scale_min <= self.spawn.scale_max) {
            return Err(Error::Config("env.spawn: need 1 < scale_min <= scale_max".into()));
        }
        self.transition.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub jaccard: f64,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub step: usize,
    pub reached_goal: bool,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub state: Frame,
    pub reward: f64,
    pub terminal: bool,
    pub info: StepInfo,
}

/// Three-branch reward on an overlap value. The shaped branch is snapped
/// to a 1e-12 grid, so decimal inputs give decimal rewards (0.8 maps to
/// exactly -0.1 rather than -0.09999999999999998).
pub fn reward_for_jaccard(j: f64, cfg: &EnvConfig) -> f64 {
    if j > cfg.success_threshold {
        1.0
    } else if j > 0.0 {
        (cfg.alpha * (j - 1.0) * 1e12).round() / 1e12
    } else {
        -1.0
    }
}

pub fn reward(gt: &BoundingBox, bbox: &BoundingBox, cfg: &EnvConfig) -> Result<f64> {
    Ok(reward_for_jaccard(jaccard(gt, bbox)?, cfg))
}

fn uniform<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

fn check_gt(gt: &BoundingBox, cfg: &EnvConfig) -> Result<()> {
    gt.validate()?;
    if !gt.is_legal(&cfg.transition) {
        return Err(Error::InvalidBox(format!(
            "groundtruth {gt:?} is not a legal box in a {} px image",
            cfg.transition.image_size
        )));
    }
    Ok(())
}

/// Draws an initial box that contains `gt`, lies inside the image and does
/// not already count as a success.
pub fn spawn_box<R: Rng + ?Sized>(gt: &BoundingBox, cfg: &EnvConfig, rng: &mut R) -> Result<BoundingBox> {
    check_gt(gt, cfg)?;
    let tc = &cfg.transition;
    let w_hi = (cfg.spawn.scale_max * gt.w).min(tc.image_size).min(tc.w_max);
    let w_lo = (cfg.spawn.scale_min * gt.w).max(tc.w_min);
    let acceptable =
        |b: &BoundingBox| b.contains(gt) && b.is_legal(tc) && b.iou(gt) <= cfg.success_threshold;
    if w_lo <= w_hi {
        for _ in 0..cfg.spawn.max_resamples.max(1) {
            let w = uniform(w_lo, w_hi, rng);
            let x_lo = (gt.right() - w).max(0.0);
            let x_hi = gt.x.min(tc.image_size - w);
            let y_lo = (gt.bottom() - w).max(0.0);
            let y_hi = gt.y.min(tc.image_size - w);
            if x_lo > x_hi || y_lo > y_hi {
                continue;
            }
            let b = BoundingBox::new(uniform(x_lo, x_hi, rng), uniform(y_lo, y_hi, rng), w);
            if acceptable(&b) {
                return Ok(b);
            }
        }
    }
    let w = tc.w_max.min(tc.image_size);
    let b = BoundingBox::new(
        gt.x.min(tc.image_size - w).max(0.0),
        gt.y.min(tc.image_size - w).max(0.0),
        w,
    );
    if acceptable(&b) {
        Ok(b)
    } else {
        Err(Error::InvalidBox(format!(
            "no legal box contains {gt:?} with overlap <= {}",
            cfg.success_threshold
        )))
    }
}

pub fn reset<R: Rng + ?Sized>(
    env_image: &Frame,
    gt: &BoundingBox,
    cfg: &EnvConfig,
    rng: &mut R,
) -> Result<(Frame, BoundingBox)> {
    let b = spawn_box(gt, cfg, rng)?;
    Ok((crop_resize(env_image, &b, cfg.state_size)?, b))
}

/// One transition. `step_index` counts from 1 up to `t_max`.
pub fn step<R: Rng + ?Sized>(
    env_image: &Frame,
    gt: &BoundingBox,
    bbox: &BoundingBox,
    action: Action,
    step_index: usize,
    cfg: &EnvConfig,
    rng: &mut R,
) -> Result<StepResult> {
    if step_index == 0 || step_index > cfg.t_max {
        return Err(Error::Contract(format!(
            "step index {step_index} outside 1..={}",
            cfg.t_max
        )));
    }
    let sigma = sample_sigma(&cfg.transition, rng);
    let next = transition(bbox, action, sigma, &cfg.transition)?;
    let j = jaccard(gt, &next)?;
    let reached_goal = j > cfg.success_threshold;
    Ok(StepResult {
        state: crop_resize(env_image, &next, cfg.state_size)?,
        reward: reward_for_jaccard(j, cfg),
        terminal: reached_goal || step_index == cfg.t_max,
        info: StepInfo {
            jaccard: j,
            bbox: next,
            step: step_index,
            reached_goal,
            sigma,
        },
    })
}

/// Greedy one-step lookahead on overlap with a fixed step scale; ties go to
/// the lowest action index.
pub fn oracle_action(gt: &BoundingBox, bbox: &BoundingBox, cfg: &EnvConfig) -> Result<Action> {
    const LOOKAHEAD_SIGMA: f64 = 0.1;
    let mut lookahead = cfg.transition;
    lookahead.sigma_min = lookahead.sigma_min.min(LOOKAHEAD_SIGMA);
    lookahead.sigma_max = lookahead.sigma_max.max(LOOKAHEAD_SIGMA);
    let mut best = (Action::NoOp, f64::NEG_INFINITY);
    for a in Action::ALL {
        let j = jaccard(gt, &transition(bbox, a, LOOKAHEAD_SIGMA, &lookahead)?)?;
        if j > best.1 {
            best = (a, j);
        }
    }
    Ok(best.0)
}

/// One line of an episode trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub action: Option<Action>,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub sigma: Option<f64>,
    pub jaccard: f64,
    pub reward: Option<f64>,
    pub terminal: bool,
}

pub fn write_trace_jsonl<W: Write>(records: &[TraceRecord], mut out: W) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io("<trace>", e))?;
    }
    Ok(())
}

/// Stateful wrapper that owns the image and enforces the episode lifecycle.
#[derive(Debug, Clone)]
pub struct LocalizationEnv {
    image: Frame,
    gt: BoundingBox,
    cfg: EnvConfig,
    bbox: Option<BoundingBox>,
    steps: usize,
    done: bool,
    trace: Vec<TraceRecord>,
}

impl LocalizationEnv {
    pub fn new(image: Frame, gt: BoundingBox, cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        check_gt(&gt, &cfg)?;
        Ok(LocalizationEnv {
            image,
            gt,
            cfg,
            bbox: None,
            steps: 0,
            done: false,
            trace: Vec::new(),
        })
    }

    pub fn image(&self) -> &Frame {
        &self.image
    }

    pub fn groundtruth(&self) -> BoundingBox {
        self.gt
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn current_box(&self) -> Option<BoundingBox> {
        self.bbox
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Frame> {
        let b = spawn_box(&self.gt, &self.cfg, rng)?;
        self.reset_to(b)
    }

    /// Starts an episode from a chosen legal box.
    pub fn reset_to(&mut self, bbox: BoundingBox) -> Result<Frame> {
        bbox.validate()?;
        if !bbox.is_legal(&self.cfg.transition) {
            return Err(Error::InvalidBox(format!("start box {bbox:?} is not legal")));
        }
        let state = crop_resize(&self.image, &bbox, self.cfg.state_size)?;
        self.bbox = Some(bbox);
        self.steps = 0;
        self.done = false;
        self.trace.clear();
        self.trace.push(TraceRecord {
            step: 0,
            action: None,
            bbox,
            sigma: None,
            jaccard: jaccard(&self.gt, &bbox)?,
            reward: None,
            terminal: false,
        });
        Ok(state)
    }

    pub fn step<R: Rng + ?Sized>(&mut self, action: Action, rng: &mut R) -> Result<StepResult> {
        let bbox = self
            .bbox
            .ok_or_else(|| Error::Contract("step called before reset".into()))?;
        if self.done {
            return Err(Error::Contract("step called after the episode terminated".into()));
        }
        let r = step(&self.image, &self.gt, &bbox, action, self.steps + 1, &self.cfg, rng)?;
        self.steps += 1;
        self.bbox = Some(r.info.bbox);
        self.done = r.terminal;
        self.trace.push(TraceRecord {
            step: self.steps,
            action: Some(action),
            bbox: r.info.bbox,
            sigma: Some(r.info.sigma),
            jaccard: r.info.jaccard,
            reward: Some(r.reward),
            terminal: r.terminal,
        });
        Ok(r)
    }

    pub fn oracle_action(&self) -> Result<Action> {
        let bbox = self
            .bbox
            .ok_or_else(|| Error::Contract("oracle queried before reset".into()))?;
        oracle_action(&self.gt, &bbox, &self.cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn flat_env() -> LocalizationEnv {
        let img = Frame::from_fn(360, 360, |r, c| [r as f32 / 360.0, c as f32 / 360.0, 0.5]);
        LocalizationEnv::new(img, BoundingBox::new(150.0, 150.0, 60.0), EnvConfig::default()).unwrap()
    }

    #[test]
    fn reward_branches() {
        let cfg = EnvConfig::default();
        let cases = [(0.0, -1.0), (0.3, -0.35), (0.5, -0.25), (0.8, -0.1), (0.9, 1.0)];
        for (j, r) in cases {
            assert!((reward_for_jaccard(j, &cfg) - r).abs() < 1e-15, "J={j}");
        }
    }

    #[test]
    fn spawn_contains_groundtruth() {
        let cfg = EnvConfig::default();
        let gt = BoundingBox::new(150.0, 150.0, 60.0);
        let mut rng = seeded(2);
        for _ in 0..2000 {
            let b = spawn_box(&gt, &cfg, &mut rng).unwrap();
            assert!(b.contains(&gt) && b.is_legal(&cfg.transition));
            assert!(b.iou(&gt) <= 0.8);
            assert!(b.w >= 72.0 - 1e-9 && b.w <= 180.0 + 1e-9);
        }
    }

    #[test]
    fn degenerate_spawn_is_deterministic() {
        let mut cfg = EnvConfig::default();
        cfg.spawn.scale_min = 3.0;
        cfg.spawn.scale_max = 3.0;
        let gt = BoundingBox::new(0.0, 0.0, 100.0);
        let a = spawn_box(&gt, &cfg, &mut seeded(1)).unwrap();
        let b = spawn_box(&gt, &cfg, &mut seeded(99)).unwrap();
        assert_eq!(a, BoundingBox::new(0.0, 0.0, 300.0));
        assert_eq!(a, b);
    }

    #[test]
    fn oversize_groundtruth_has_no_spawn() {
        let cfg = EnvConfig::default();
        assert!(spawn_box(&BoundingBox::new(10.0, 10.0, 340.0), &cfg, &mut seeded(0)).is_err());
    }

    #[test]
    fn goal_noop_terminates_with_success() {
        let mut env = flat_env();
        env.reset_to(BoundingBox::new(148.0, 148.0, 64.0)).unwrap();
        let r = env.step(Action::NoOp, &mut seeded(0)).unwrap();
        assert!(r.terminal && r.info.reached_goal);
        assert_eq!(r.reward, 1.0);
        assert!(env.step(Action::NoOp, &mut seeded(0)).is_err());
    }

    #[test]
    fn last_step_terminates() {
        let env = flat_env();
        let cfg = *env.config();
        let gt = env.groundtruth();
        // J = 0.3 exactly: same y-range, horizontal overlap 60 * 0.3 * 2 / 1.3.
        let overlap = 0.6 * 60.0 / 1.3;
        let bbox = BoundingBox::new(gt.x + 60.0 - overlap, gt.y, 60.0);
        let r = step(env.image(), &gt, &bbox, Action::NoOp, 50, &cfg, &mut seeded(0)).unwrap();
        assert!(r.terminal && !r.info.reached_goal);
        assert!((r.reward + 0.35).abs() < 1e-12);
        assert!(step(env.image(), &gt, &bbox, Action::NoOp, 51, &cfg, &mut seeded(0)).is_err());
    }

    #[test]
    fn voided_move_repeats_state() {
        let mut env = flat_env();
        let s0 = env.reset_to(BoundingBox::new(0.0, 100.0, 200.0)).unwrap();
        let r = env.step(Action::ShiftLeft, &mut seeded(0)).unwrap();
        assert_eq!(r.info.bbox, BoundingBox::new(0.0, 100.0, 200.0));
        assert_eq!(r.state, s0);
    }

    #[test]
    fn trace_lines_are_json() {
        let mut env = flat_env();
        let mut rng = seeded(5);
        env.reset(&mut rng).unwrap();
        env.step(Action::ZoomIn, &mut rng).unwrap();
        let mut buf = Vec::new();
        write_trace_jsonl(env.trace(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        let second: serde_json::Value = serde_json::from_str(text.lines().nth(1).unwrap()).unwrap();
        assert_eq!(second["action"], "zoom_in");
        assert!(second["box"]["w"].as_f64().unwrap() > 0.0);
    }
}
