//! A toy camera workspace. A pinhole camera translates in front of a flat
//! object sprite and a textured backdrop; the localization actions map to
//! camera motions.
//!
//! World frame: x right, y up, z forward. The canonical camera sits at the
//! origin looking along +z and sees exactly the generated scene image.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{argmax, DqnAgent, NeuralQ};
use crate::error::{Error, Result};
use crate::evaluator::{StartPosition, Summary};
use crate::geometry::Action;
use crate::imaging::{light_factor, resize, Frame, PackedFrame, SceneManifest, SceneTextures, WorldSpec};
use crate::rng::{derive_seed, seeded, SimRng};
use crate::trainer::{EnvStep, Environment};

pub type Vec3 = [f64; 3];

/// Depth of the object when the manifest has no explicit world layout.
pub const DEFAULT_OBJECT_DEPTH: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkspaceConfig {
    pub step_size: f64,
    pub t_max: usize,
    /// Lateral offset of the off-center start poses.
    pub start_offset: f64,
    /// Uniform per-trial perturbation of the start pose on each axis.
    pub start_jitter: f64,
    /// Lateral margin of the explorable region around both the canonical
    /// axis and the object.
    pub lateral_extent: f64,
    pub z_min: f64,
    /// Closest allowed approach to the object plane.
    pub min_clearance: f64,
}

impl Default for WorkspaceConfig {
    fn default() -> Self {
        WorkspaceConfig {
            step_size: 0.02,
            t_max: 50,
            start_offset: 0.12,
            start_jitter: 0.01,
            lateral_extent: 0.3,
            z_min: -0.2,
            min_clearance: 0.05,
        }
    }
}

impl WorkspaceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || self.t_max == 0 {
            return Err(Error::Config("workspace: need step_size > 0 and t_max >= 1".into()));
        }
        if !(self.start_jitter >= 0.0 && self.start_offset >= 0.0 && self.lateral_extent > self.start_offset + self.start_jitter) {
            return Err(Error::Config(
                "workspace: starts must lie inside the explorable region (lateral_extent > start_offset + start_jitter)"
                    .into(),
            ));
        }
        if !(self.min_clearance > 0.0) {
            return Err(Error::Config("workspace.min_clearance must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScratchRewardConfig {
    pub success_bonus: f64,
    pub distance_coefficient: f64,
}

impl Default for ScratchRewardConfig {
    fn default() -> Self {
        ScratchRewardConfig {
            success_bonus: 1.0,
            distance_coefficient: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionConfig {
    /// Per-axis bound of the uniformly drawn velocity (units per step).
    pub velocity_range: Vec3,
    /// Per-axis half-size of the region the object bounces around in.
    pub extent: Vec3,
}

impl Default for MotionConfig {
    fn default() -> Self {
        MotionConfig {
            velocity_range: [0.004, 0.004, 0.002],
            extent: [0.06, 0.06, 0.04],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisBox {
    pub min: Vec3,
    pub max: Vec3,
}

impl AxisBox {
    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] - 1e-12 && p[k] <= self.max[k] + 1e-12)
    }

    pub fn center(&self) -> Vec3 {
        std::array::from_fn(|k| 0.5 * (self.min[k] + self.max[k]))
    }

    fn shifted(&self, d: &Vec3) -> AxisBox {
        AxisBox {
            min: std::array::from_fn(|k| self.min[k] + d[k]),
            max: std::array::from_fn(|k| self.max[k] + d[k]),
        }
    }
}

pub fn distance(a: &Vec3, b: &Vec3) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt()
}

/// Camera translation for an action.
pub fn motion(action: Action, step: f64) -> Vec3 {
    match action {
        Action::ShiftLeft => [-step, 0.0, 0.0],
        Action::ShiftRight => [step, 0.0, 0.0],
        Action::ShiftUp => [0.0, step, 0.0],
        Action::ShiftDown => [0.0, -step, 0.0],
        Action::ZoomIn => [0.0, 0.0, step],
        Action::ZoomOut => [0.0, 0.0, -step],
        Action::NoOp => [0.0; 3],
    }
}

#[derive(Debug, Clone)]
pub struct Workspace {
    cfg: WorkspaceConfig,
    manifest: SceneManifest,
    world: WorldSpec,
    textures: SceneTextures,
    camera: Vec3,
    object: Vec3,
    explorable: AxisBox,
}

impl Workspace {
    pub fn new(manifest: &SceneManifest, scene_seed: u64, cfg: WorkspaceConfig) -> Result<Workspace> {
        manifest.validate()?;
        cfg.validate()?;
        let world = manifest.world.clone().unwrap_or_else(|| {
            WorldSpec::canonical(&manifest.groundtruth_box, manifest.image_size, DEFAULT_OBJECT_DEPTH)
        });
        let o = world.object_position;
        let l = cfg.lateral_extent;
        let explorable = AxisBox {
            min: [o[0].min(0.0) - l, o[1].min(0.0) - l, cfg.z_min],
            max: [o[0].max(0.0) + l, o[1].max(0.0) + l, o[2] - cfg.min_clearance],
        };
        Ok(Workspace {
            cfg,
            textures: SceneTextures::new(manifest, scene_seed),
            manifest: manifest.clone(),
            camera: [0.0; 3],
            object: o,
            explorable,
            world,
        })
    }

    pub fn config(&self) -> &WorkspaceConfig {
        &self.cfg
    }

    pub fn world(&self) -> &WorldSpec {
        &self.world
    }

    pub fn camera(&self) -> Vec3 {
        self.camera
    }

    pub fn object(&self) -> Vec3 {
        self.object
    }

    pub fn explorable(&self) -> AxisBox {
        self.explorable
    }

    /// Goal region, carried along with the object.
    pub fn goal_region(&self) -> AxisBox {
        let o = self.world.object_position;
        let d = [self.object[0] - o[0], self.object[1] - o[1], self.object[2] - o[2]];
        AxisBox {
            min: self.world.goal_min,
            max: self.world.goal_max,
        }
        .shifted(&d)
    }

    pub fn in_goal(&self) -> bool {
        self.goal_region().contains(&self.camera)
    }

    pub fn set_camera(&mut self, p: Vec3) -> Result<()> {
        if !self.explorable.contains(&p) {
            return Err(Error::InvalidArgument(format!("camera position {p:?} is outside the explorable region")));
        }
        self.camera = p;
        Ok(())
    }

    /// Moves the object; the explorable region does not follow.
    pub fn set_object(&mut self, p: Vec3) {
        self.object = p;
    }

    /// Nominal start pose for a named cell. The name gives the side the
    /// camera is displaced to, so a bottom start sits below the axis.
    pub fn start_pose(&self, pos: StartPosition) -> Vec3 {
        let (dx, dy) = pos.offset();
        [self.cfg.start_offset * dx, -self.cfg.start_offset * dy, 0.0]
    }

    /// Start pose with the per-trial perturbation drawn from `rng`.
    pub fn jittered_start<R: Rng + ?Sized>(&self, pos: StartPosition, rng: &mut R) -> Vec3 {
        let mut p = self.start_pose(pos);
        let j = self.cfg.start_jitter;
        if j > 0.0 {
            for v in &mut p {
                *v += rng.random_range(-j..=j);
            }
        }
        p
    }

    /// Pinhole render of the current view.
    pub fn render(&self) -> Frame {
        let n = self.manifest.image_size;
        let c = n as f64 / 2.0;
        let f = self.world.focal_length;
        let cam = self.camera;
        let obj = self.object;
        let obj_depth = obj[2] - cam[2];
        let back_z = obj[2] + self.world.backdrop_offset;
        let back_depth = back_z - cam[2];
        let half_px = self.manifest.sprite_size() / 2.0;
        let half_world = half_px * self.world.object_position[2] / f;
        let (light, strength) = (self.manifest.light, self.manifest.light_strength);
        let lit = |rgb: [f32; 3], u0: f64, v0: f64| {
            let k = light_factor(light, strength, (u0 - 0.5) / (n as f64 - 1.0), (v0 - 0.5) / (n as f64 - 1.0));
            [(rgb[0] * k).clamp(0.0, 1.0), (rgb[1] * k).clamp(0.0, 1.0), (rgb[2] * k).clamp(0.0, 1.0)]
        };
        // Canonical-view coordinates of a world point; textures and lighting
        // are looked up there.
        let canonical = |x: f64, y: f64, z: f64| (f * x / z + c, c - f * y / z);
        Frame::from_fn(n, n, |r, col| {
            let (du, dv) = ((col as f64 + 0.5 - c) / f, (r as f64 + 0.5 - c) / f);
            if obj_depth > 0.0 {
                let x = cam[0] + du * obj_depth;
                let y = cam[1] - dv * obj_depth;
                let lu = (x - obj[0]) / half_world;
                let lv = -(y - obj[1]) / half_world;
                if let Some(rgb) = self.textures.object_at(lu, lv) {
                    let o = self.world.object_position;
                    let (u0, v0) = canonical(o[0] + lu * half_world, o[1] - lv * half_world, o[2]);
                    return lit(rgb, u0, v0);
                }
            }
            if back_depth <= 0.0 {
                return [0.0; 3];
            }
            let x = cam[0] + du * back_depth;
            let y = cam[1] - dv * back_depth;
            let (u0, v0) = canonical(x, y, back_z);
            lit(self.textures.background_at(u0, v0), u0, v0)
        })
    }

    /// Projected image position of the object center, if in front.
    pub fn project_object(&self) -> Option<(f64, f64)> {
        let z = self.object[2] - self.camera[2];
        if z <= 0.0 {
            return None;
        }
        let c = self.manifest.image_size as f64 / 2.0;
        let f = self.world.focal_length;
        Some((
            f * (self.object[0] - self.camera[0]) / z + c,
            c - f * (self.object[1] - self.camera[1]) / z,
        ))
    }

    /// Projected sprite width in pixels.
    pub fn projected_object_width(&self) -> Option<f64> {
        let z = self.object[2] - self.camera[2];
        (z > 0.0).then(|| {
            let world_w = self.manifest.sprite_size() * self.world.object_position[2] / self.world.focal_length;
            self.world.focal_length * world_w / z
        })
    }

    /// Moves the camera one step; returns false when the move is voided.
    pub fn apply_robot_action(&mut self, action: Action) -> bool {
        let d = motion(action, self.cfg.step_size);
        let next: Vec3 = std::array::from_fn(|k| self.camera[k] + d[k]);
        if self.explorable.contains(&next) {
            self.camera = next;
            true
        } else {
            false
        }
    }

    /// The agent's view: the whole render resized to the state size.
    pub fn state(&self, size: usize) -> Result<Frame> {
        resize(&self.render(), size, size)
    }

    /// Greedy motion toward the goal-region center; ties go to the lowest
    /// action index.
    pub fn oracle_action(&self) -> Action {
        let target = self.goal_region().center();
        let mut best = (Action::NoOp, f64::INFINITY);
        for a in Action::ALL {
            let mut probe = self.clone();
            probe.apply_robot_action(a);
            let d = distance(&probe.camera, &target);
            if d < best.1 - 1e-12 {
                best = (a, d);
            }
        }
        best.0
    }
}

/// Chooses camera motions from the rendered state.
pub trait WorkspacePolicy {
    fn name(&self) -> String;

    fn choose(&mut self, ws: &Workspace, state: &Frame) -> Result<Action>;
}

pub struct GreedyNetworkPolicy<'a> {
    pub net: &'a crate::agent::AgentNetwork<f32>,
}

impl WorkspacePolicy for GreedyNetworkPolicy<'_> {
    fn name(&self) -> String {
        if self.net.spec().dynamic_filter { "ohpl-full" } else { "ohpl-base" }.into()
    }

    fn choose(&mut self, _ws: &Workspace, state: &Frame) -> Result<Action> {
        let packed = PackedFrame::from_frame(state);
        let q = self.net.q_values_tensor(crate::agent::packed_to_tensor(&[&packed])?)?;
        Ok(argmax(&q[0]))
    }
}

pub struct OracleMotionPolicy;

impl WorkspacePolicy for OracleMotionPolicy {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn choose(&mut self, ws: &Workspace, _state: &Frame) -> Result<Action> {
        Ok(ws.oracle_action())
    }
}

pub struct ConstantPolicy(pub Action);

impl WorkspacePolicy for ConstantPolicy {
    fn name(&self) -> String {
        format!("constant-{}", self.0.robot_name())
    }

    fn choose(&mut self, _ws: &Workspace, _state: &Frame) -> Result<Action> {
        Ok(self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeployRecord {
    pub step: usize,
    pub action: Action,
    pub camera: Vec3,
    pub object: Vec3,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeployOutcome {
    pub success: bool,
    pub steps: usize,
    pub trace: Vec<DeployRecord>,
}

/// Per-step object motion with reflective bounds around its rest pose.
#[derive(Debug, Clone)]
pub struct ObjectMotion {
    cfg: MotionConfig,
    rest: Vec3,
    rng: SimRng,
}

impl ObjectMotion {
    pub fn new(cfg: MotionConfig, rest: Vec3, seed: u64) -> Self {
        ObjectMotion {
            cfg,
            rest,
            rng: seeded(seed),
        }
    }

    pub fn advance(&mut self, p: Vec3) -> Vec3 {
        std::array::from_fn(|k| {
            let vr = self.cfg.velocity_range[k];
            if vr <= 0.0 {
                return p[k];
            }
            let v = self.rng.random_range(-vr..=vr);
            let (lo, hi) = (self.rest[k] - self.cfg.extent[k], self.rest[k] + self.cfg.extent[k]);
            let mut x = p[k] + v;
            if x > hi {
                x = 2.0 * hi - x;
            }
            if x < lo {
                x = 2.0 * lo - x;
            }
            x.clamp(lo, hi)
        })
    }
}

/// Runs one reaching episode from `start`. Success is latched: the episode
/// ends the moment the camera is inside the goal region.
pub fn deploy<P: WorkspacePolicy + ?Sized>(
    ws: &mut Workspace,
    policy: &mut P,
    start: Vec3,
    state_size: usize,
    mut motion: Option<&mut ObjectMotion>,
) -> Result<DeployOutcome> {
    ws.set_camera(start)?;
    let mut trace = Vec::new();
    for step in 1..=ws.cfg.t_max {
        let state = ws.state(state_size)?;
        let action = policy.choose(ws, &state)?;
        ws.apply_robot_action(action);
        if let Some(m) = motion.as_deref_mut() {
            let next = m.advance(ws.object);
            ws.set_object(next);
        }
        let success = ws.in_goal();
        trace.push(DeployRecord {
            step,
            action,
            camera: ws.camera,
            object: ws.object,
            success,
        });
        if success {
            return Ok(DeployOutcome {
                success: true,
                steps: step,
                trace,
            });
        }
    }
    Ok(DeployOutcome {
        success: false,
        steps: ws.cfg.t_max,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeployCell {
    pub start: StartPosition,
    pub summary: Summary,
    pub mean_steps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeployReport {
    pub policy: String,
    pub seed: u64,
    pub moving: bool,
    pub trials_per_start: usize,
    pub cells: Vec<DeployCell>,
    pub overall: Summary,
}

fn deploy_trial_seed(seed: u64, cell: usize, trial: usize) -> u64 {
    derive_seed(seed, ((cell as u64) << 32) | trial as u64)
}

/// Deploys over the given starts, `trials` episodes each. With a motion
/// config the object moves every step; the start jitter stream is the same
/// either way.
#[allow(clippy::too_many_arguments)]
pub fn deploy_grid<P: WorkspacePolicy + ?Sized>(
    manifest: &SceneManifest,
    scene_seed: u64,
    cfg: WorkspaceConfig,
    policy: &mut P,
    starts: &[StartPosition],
    trials: usize,
    state_size: usize,
    motion: Option<MotionConfig>,
    seed: u64,
    mut on_trial: impl FnMut(StartPosition, usize, &DeployOutcome),
) -> Result<DeployReport> {
    if trials == 0 {
        return Err(Error::Config("deploy: trials must be at least 1".into()));
    }
    let mut ws = Workspace::new(manifest, scene_seed, cfg)?;
    let rest = ws.object();
    let mut cells = Vec::new();
    let (mut hits_all, mut n_all) = (0, 0);
    for (ci, &pos) in starts.iter().enumerate() {
        let (mut hits, mut steps) = (0usize, 0usize);
        for trial in 0..trials {
            let s = deploy_trial_seed(seed, ci, trial);
            let mut rng = seeded(s);
            let start = ws.jittered_start(pos, &mut rng);
            ws.set_object(rest);
            let mut mover = motion.map(|m| ObjectMotion::new(m, rest, derive_seed(s, 0x0B)));
            let out = deploy(&mut ws, policy, start, state_size, mover.as_mut())?;
            hits += usize::from(out.success);
            steps += out.steps;
            on_trial(pos, trial, &out);
        }
        hits_all += hits;
        n_all += trials;
        cells.push(DeployCell {
            start: pos,
            summary: Summary::from_counts(hits, trials),
            mean_steps: steps as f64 / trials as f64,
        });
    }
    Ok(DeployReport {
        policy: policy.name(),
        seed,
        moving: motion.is_some(),
        trials_per_start: trials,
        cells,
        overall: Summary::from_counts(hits_all, n_all),
    })
}

/// Moving-object protocol: success ratios with binomial standard errors.
#[allow(clippy::too_many_arguments)]
pub fn run_moving_object<P: WorkspacePolicy + ?Sized>(
    manifest: &SceneManifest,
    scene_seed: u64,
    cfg: WorkspaceConfig,
    policy: &mut P,
    motion: MotionConfig,
    starts: &[StartPosition],
    trials: usize,
    state_size: usize,
    seed: u64,
) -> Result<DeployReport> {
    deploy_grid(manifest, scene_seed, cfg, policy, starts, trials, state_size, Some(motion), seed, |_, _, _| {})
}

/// The workspace as a training environment for the Scratch baseline.
#[derive(Debug, Clone)]
pub struct ScratchEnv {
    pub ws: Workspace,
    pub reward: ScratchRewardConfig,
    pub state_size: usize,
    steps: usize,
}

impl ScratchEnv {
    pub fn new(ws: Workspace, reward: ScratchRewardConfig, state_size: usize) -> Self {
        ScratchEnv {
            ws,
            reward,
            state_size,
            steps: 0,
        }
    }

    /// Goal bonus on entry, otherwise a penalty proportional to the
    /// camera-object distance.
    pub fn shaped_reward(&self, in_goal: bool) -> f64 {
        if in_goal {
            self.reward.success_bonus
        } else {
            -self.reward.distance_coefficient * distance(&self.ws.camera(), &self.ws.object())
        }
    }
}

impl Environment for ScratchEnv {
    type State = PackedFrame;

    fn reset(&mut self, rng: &mut SimRng) -> Result<PackedFrame> {
        let e = self.ws.cfg.start_offset + self.ws.cfg.start_jitter;
        let start = [rng.random_range(-e..=e), rng.random_range(-e..=e), 0.0];
        self.ws.set_camera(start)?;
        self.steps = 0;
        Ok(PackedFrame::from_frame(&self.ws.state(self.state_size)?))
    }

    fn step(&mut self, action: Action, _rng: &mut SimRng) -> Result<EnvStep<PackedFrame>> {
        self.ws.apply_robot_action(action);
        self.steps += 1;
        let in_goal = self.ws.in_goal();
        Ok(EnvStep {
            state: PackedFrame::from_frame(&self.ws.state(self.state_size)?),
            reward: self.shaped_reward(in_goal),
            terminal: in_goal || self.steps >= self.ws.cfg.t_max,
            reached_goal: in_goal,
            score: distance(&self.ws.camera(), &self.ws.object()),
        })
    }
}

/// Trains a Scratch agent directly in the workspace with the shared DQN
/// loop. Returns the agent and its episode records.
pub fn train_scratch(
    env: &mut ScratchEnv,
    agent: &mut DqnAgent<NeuralQ>,
    train: &crate::trainer::TrainConfig,
    on_episode: impl FnMut(&crate::trainer::EpisodeRecord, &DqnAgent<NeuralQ>) -> Result<()>,
) -> Result<Vec<crate::trainer::EpisodeRecord>> {
    crate::trainer::run_dqn(env, agent, train, on_episode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::generate_scene;

    fn ws() -> Workspace {
        Workspace::new(&SceneManifest::default(), 0, WorkspaceConfig::default()).unwrap()
    }

    #[test]
    fn canonical_render_matches_scene_image() {
        let m = SceneManifest::default();
        let a = ws().render();
        let b = generate_scene(&m, 0).unwrap();
        let max = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f32, f32::max);
        assert!(max < 1e-4, "max diff {max}");
    }

    #[test]
    fn object_on_axis_projects_to_center() {
        let mut w = ws();
        let o = w.object();
        w.set_camera([o[0], o[1], 0.0]).unwrap();
        let (u, v) = w.project_object().unwrap();
        assert!((u - 180.0).abs() < 1e-9 && (v - 180.0).abs() < 1e-9);
    }

    #[test]
    fn move_left_shifts_object_right() {
        let mut w = ws();
        let (u0, _) = w.project_object().unwrap();
        assert!(w.apply_robot_action(Action::ShiftLeft));
        let (u1, _) = w.project_object().unwrap();
        assert!(u1 > u0);
    }

    #[test]
    fn halving_depth_doubles_width() {
        let mut w = ws();
        let z = w.object()[2];
        let w0 = w.projected_object_width().unwrap();
        w.set_camera([0.0, 0.0, z / 2.0]).unwrap();
        let w1 = w.projected_object_width().unwrap();
        assert!((w1 - 2.0 * w0).abs() <= 1.0);
    }

    #[test]
    fn thirty_zoom_steps_reach_the_goal() {
        let mut w = ws();
        assert!(!w.in_goal());
        for _ in 0..30 {
            w.apply_robot_action(Action::ZoomIn);
        }
        assert!(w.in_goal(), "camera {:?} goal {:?}", w.camera(), w.goal_region());
    }

    #[test]
    fn noop_and_boundary_moves_leave_camera_unchanged() {
        let mut w = ws();
        let before = w.camera();
        assert!(w.apply_robot_action(Action::NoOp));
        assert_eq!(w.camera(), before);
        w.set_camera([0.3, 0.0, 0.0]).unwrap();
        assert!(!w.apply_robot_action(Action::ShiftRight));
        assert_eq!(w.camera(), [0.3, 0.0, 0.0]);
    }

    #[test]
    fn object_behind_camera_is_omitted() {
        let mut w = ws();
        w.set_object([0.0, 0.0, -0.5]);
        let f = w.render();
        assert!(f.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(w.project_object().is_none());
    }

    #[test]
    fn shaping_prefers_closer_poses() {
        let mut env = ScratchEnv::new(ws(), ScratchRewardConfig::default(), 84);
        let far = env.shaped_reward(false);
        env.ws.apply_robot_action(Action::ZoomIn);
        let near = env.shaped_reward(false);
        assert!(near > far);
        assert_eq!(env.shaped_reward(true), 1.0);
    }

    #[test]
    fn reflective_motion_stays_bounded() {
        let rest = [0.0, 0.0, 0.9];
        let cfg = MotionConfig {
            velocity_range: [0.05, 0.05, 0.05],
            extent: [0.06, 0.06, 0.04],
        };
        let mut m = ObjectMotion::new(cfg, rest, 3);
        let mut p = rest;
        for _ in 0..1000 {
            p = m.advance(p);
            for k in 0..3 {
                assert!((p[k] - rest[k]).abs() <= cfg.extent[k] + 1e-12);
            }
        }
    }
}
