//! Kinematic two-camera manipulation world: a gripper, an optional cube and a
//! goal marker, observed by a fixed camera and an orbiting one.

mod raster;

pub use raster::{render_primitives, CameraSpec, Primitive, Shape, BACKGROUND};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::nets::RngState;

pub const MAX_STEPS: usize = 50;
pub const WORKSPACE_LO: [f64; 3] = [-0.3, -0.3, 0.0];
pub const WORKSPACE_HI: [f64; 3] = [0.3, 0.3, 0.3];
/// End-effector displacement for a unit action component.
pub const STEP_SIZE: f64 = 0.05;
pub const REACH_EPS: f64 = 0.05;
pub const PUSH_EPS: f64 = 0.05;
pub const LIFT_HEIGHT: f64 = 0.1;
pub const CUBE_HALF: f64 = 0.03;
pub const SUCCESS_BONUS: f64 = 10.0;
/// Horizontal gripper-to-cube distance below which the cube is pushed.
pub const CONTACT_RADIUS: f64 = 0.05;
pub const GRASP_RADIUS: f64 = 0.04;
/// Number of predefined configurations per task.
pub const CONFIG_COUNT: usize = 16;

const GREEN: [f32; 3] = [0.15, 0.75, 0.2];
const RED: [f32; 3] = [0.85, 0.12, 0.1];
const BODY_GRAY: [f32; 3] = [0.5, 0.5, 0.53];
const FINGER_GRAY: [f32; 3] = [0.3, 0.3, 0.33];
const TABLE: [f32; 3] = [0.72, 0.62, 0.48];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Reach,
    Push,
    Lift,
}

impl Task {
    pub fn action_dim(self) -> usize {
        match self {
            Task::Reach => 3,
            Task::Push => 2,
            Task::Lift => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Reach => "reach",
            Task::Push => "push",
            Task::Lift => "lift",
        }
    }

    fn has_object(self) -> bool {
        !matches!(self, Task::Reach)
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reach" => Ok(Task::Reach),
            "push" => Ok(Task::Push),
            "lift" => Ok(Task::Lift),
            other => Err(Error::UnknownTask(other.to_string())),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub ee_pos: [f64; 3],
    /// 1 is fully open.
    pub gripper_aperture: f64,
    pub object_pos: [f64; 3],
    pub goal_pos: [f64; 3],
    pub grasped: bool,
    pub step_count: usize,
}

impl WorldState {
    /// End-effector position followed by the gripper aperture.
    pub fn robot_state(&self) -> Vec<f32> {
        vec![
            self.ee_pos[0] as f32,
            self.ee_pos[1] as f32,
            self.ee_pos[2] as f32,
            self.gripper_aperture as f32,
        ]
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn dist_xy(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn clip_to_workspace(p: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|i| p[i].clamp(WORKSPACE_LO[i], WORKSPACE_HI[i]))
}

/// Strict-inequality success predicate.
pub fn success(state: &WorldState, task: Task) -> bool {
    match task {
        Task::Reach => dist(state.ee_pos, state.goal_pos) < REACH_EPS,
        Task::Push => dist_xy(state.object_pos, state.goal_pos) < PUSH_EPS,
        Task::Lift => state.grasped && state.object_pos[2] > LIFT_HEIGHT,
    }
}

/// Distance the dense reward penalizes.
fn shaping_distance(state: &WorldState, task: Task) -> f64 {
    match task {
        Task::Reach => dist(state.ee_pos, state.goal_pos),
        Task::Push => dist_xy(state.object_pos, state.goal_pos) + 0.5 * dist_xy(state.ee_pos, state.object_pos),
        Task::Lift => dist(state.ee_pos, state.object_pos) + (LIFT_HEIGHT - state.object_pos[2]).max(0.0),
    }
}

/// Predefined start configurations of a task, identical across runs.
pub fn task_configurations(task: Task) -> Vec<WorldState> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + task.action_dim() as u64);
    (0..CONFIG_COUNT)
        .map(|_| {
            let home = [0.0, 0.0, 0.15];
            match task {
                Task::Reach => WorldState {
                    ee_pos: home,
                    gripper_aperture: 1.0,
                    object_pos: [0.0, 0.0, CUBE_HALF],
                    goal_pos: [
                        rng.random_range(-0.2..0.2),
                        rng.random_range(-0.2..0.2),
                        rng.random_range(0.05..0.25),
                    ],
                    grasped: false,
                    step_count: 0,
                },
                Task::Push => {
                    let obj = [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), CUBE_HALF];
                    let th: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                    let (s, c) = th.sin_cos();
                    let goal = [obj[0] + 0.15 * c, obj[1] + 0.15 * s, 0.0];
                    WorldState {
                        ee_pos: [obj[0] - 0.1 * c, obj[1] - 0.1 * s, CUBE_HALF],
                        gripper_aperture: 1.0,
                        object_pos: obj,
                        goal_pos: goal,
                        grasped: false,
                        step_count: 0,
                    }
                }
                Task::Lift => WorldState {
                    ee_pos: home,
                    gripper_aperture: 1.0,
                    object_pos: [rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15), CUBE_HALF],
                    goal_pos: [0.0, 0.0, LIFT_HEIGHT],
                    grasped: false,
                    step_count: 0,
                },
            }
        })
        .collect()
}

/// Scene primitives for a state, table included.
pub fn scene(state: &WorldState, task: Task) -> Vec<Primitive> {
    let mut prims = vec![Primitive {
        shape: Shape::Cuboid {
            half: [0.36, 0.36, 0.01],
            yaw: 0.0,
        },
        center: [0.0, 0.0, -0.0101],
        color: TABLE,
        checker: Some(0.12),
    }];
    let cuboid = |half: [f64; 3], center: [f64; 3], color| Primitive {
        shape: Shape::Cuboid { half, yaw: 0.0 },
        center,
        color,
        checker: None,
    };
    let ee = state.ee_pos;
    prims.push(cuboid([0.025, 0.025, 0.025], [ee[0], ee[1], ee[2] + 0.05], BODY_GRAY));
    let spread = 0.012 + 0.02 * state.gripper_aperture;
    for sign in [-1.0, 1.0] {
        prims.push(cuboid([0.007, 0.012, 0.02], [ee[0] + sign * spread, ee[1], ee[2] + 0.01], FINGER_GRAY));
    }
    if task.has_object() {
        prims.push(cuboid([CUBE_HALF; 3], state.object_pos, GREEN));
    }
    match task {
        Task::Reach => prims.push(Primitive {
            shape: Shape::Sphere { radius: 0.03 },
            center: state.goal_pos,
            color: RED,
            checker: None,
        }),
        Task::Push => prims.push(cuboid([0.04, 0.04, 0.003], state.goal_pos, RED)),
        Task::Lift => {}
    }
    prims
}

pub fn render(state: &WorldState, task: Task, cam: &CameraSpec, size: usize) -> Image {
    render_primitives(&scene(state, task), cam, size)
}

pub fn default_static_camera() -> CameraSpec {
    CameraSpec {
        azimuth: -90.0,
        elevation: 40.0,
        radius: 0.75,
        look_at: [0.0, 0.0, 0.05],
        fov: 45.0,
    }
}

/// The static camera rotated about the vertical axis by `phi_d` degrees.
pub fn camera_at_offset(static_cam: &CameraSpec, phi_d: f64) -> CameraSpec {
    CameraSpec {
        azimuth: static_cam.azimuth + phi_d,
        ..*static_cam
    }
}

/// Dynamic camera with azimuth offset drawn uniformly from `[0, phi]`.
pub fn dynamic_camera(static_cam: &CameraSpec, rng: &mut impl Rng, phi: f64) -> Result<(CameraSpec, f64)> {
    if !(phi >= 0.0) || !phi.is_finite() {
        return Err(Error::Precondition(format!("phi must be finite and >= 0, got {phi}")));
    }
    let offset = if phi == 0.0 { 0.0 } else { rng.random_range(0.0..=phi) };
    Ok((camera_at_offset(static_cam, offset), offset))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualObservation {
    pub static_view: Image,
    pub dynamic_view: Image,
    /// Dynamic camera azimuth offset in degrees.
    pub phi_d: f64,
    pub robot_state: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub task: Task,
    pub image_size: usize,
    /// Maximum dynamic camera offset in degrees.
    pub phi: f64,
    pub static_camera: CameraSpec,
}

impl EnvConfig {
    pub fn new(task: Task, image_size: usize, phi: f64) -> Self {
        Self {
            task,
            image_size,
            phi,
            static_camera: default_static_camera(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub obs: DualObservation,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSnapshot {
    pub state: WorldState,
    pub rng: RngState,
    pub done: bool,
}

pub struct Env {
    cfg: EnvConfig,
    configs: Vec<WorldState>,
    state: WorldState,
    rng: ChaCha8Rng,
    done: bool,
}

impl Env {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.static_camera.validate()?;
        if cfg.image_size == 0 {
            return Err(Error::Precondition("image size must be positive".into()));
        }
        if !(cfg.phi >= 0.0) {
            return Err(Error::Precondition(format!("phi must be >= 0, got {}", cfg.phi)));
        }
        let configs = task_configurations(cfg.task);
        Ok(Self {
            state: configs[0],
            configs,
            cfg,
            rng: ChaCha8Rng::seed_from_u64(0),
            done: true,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn task(&self) -> Task {
        self.cfg.task
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// World state, episode RNG and done flag, enough to continue exactly.
    pub fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot {
            state: self.state,
            rng: RngState::capture(&self.rng),
            done: self.done,
        }
    }

    pub fn restore(&mut self, snap: &EnvSnapshot) -> Result<()> {
        self.rng = snap.rng.restore()?;
        self.state = snap.state;
        self.done = snap.done;
        Ok(())
    }

    /// Starts an episode from a configuration chosen by `seed`.
    pub fn reset(&mut self, seed: u64) -> DualObservation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let idx = rng.random_range(0..self.configs.len());
        self.start(idx, rng)
    }

    /// Starts an episode from predefined configuration `index` (modulo the count).
    pub fn reset_to(&mut self, index: usize, seed: u64) -> DualObservation {
        let idx = index % self.configs.len();
        self.start(idx, ChaCha8Rng::seed_from_u64(seed))
    }

    fn start(&mut self, idx: usize, rng: ChaCha8Rng) -> DualObservation {
        self.state = self.configs[idx];
        self.rng = rng;
        self.done = false;
        self.observe()
    }

    fn observe(&mut self) -> DualObservation {
        let (cam, phi_d) =
            dynamic_camera(&self.cfg.static_camera, &mut self.rng, self.cfg.phi).expect("phi validated at construction");
        self.observe_with(&cam, phi_d)
    }

    /// Observation with the dynamic camera fixed at offset `phi_d`.
    pub fn observe_at(&self, phi_d: f64) -> DualObservation {
        let cam = camera_at_offset(&self.cfg.static_camera, phi_d);
        self.observe_with(&cam, phi_d)
    }

    fn observe_with(&self, cam: &CameraSpec, phi_d: f64) -> DualObservation {
        let size = self.cfg.image_size;
        DualObservation {
            static_view: render(&self.state, self.cfg.task, &self.cfg.static_camera, size),
            dynamic_view: render(&self.state, self.cfg.task, cam, size),
            phi_d,
            robot_state: self.state.robot_state(),
        }
    }

    pub fn step(&mut self, action: &[f32]) -> Result<Step> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        let task = self.cfg.task;
        if action.len() != task.action_dim() {
            return Err(Error::shape(task.action_dim(), action.len()));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::Precondition("non-finite action".into()));
        }
        let a: Vec<f64> = action.iter().map(|&x| (x as f64).clamp(-1.0, 1.0)).collect();
        let s = &mut self.state;
        let before = s.ee_pos;
        let delta = match task {
            Task::Push => [a[0], a[1], 0.0],
            _ => [a[0], a[1], a[2]],
        };
        s.ee_pos = clip_to_workspace(std::array::from_fn(|i| s.ee_pos[i] + STEP_SIZE * delta[i]));
        match task {
            Task::Reach => {}
            Task::Push => {
                if dist_xy(s.ee_pos, s.object_pos) < CONTACT_RADIUS {
                    let moved = [s.ee_pos[0] - before[0], s.ee_pos[1] - before[1], 0.0];
                    s.object_pos = clip_to_workspace(std::array::from_fn(|i| s.object_pos[i] + moved[i]));
                    s.object_pos[2] = CUBE_HALF;
                }
            }
            Task::Lift => {
                s.gripper_aperture = (s.gripper_aperture + 0.25 * a[3]).clamp(0.0, 1.0);
                if s.grasped && s.gripper_aperture > 0.6 {
                    s.grasped = false;
                    s.object_pos[2] = CUBE_HALF;
                } else if !s.grasped && s.gripper_aperture < 0.35 && dist(s.ee_pos, s.object_pos) < GRASP_RADIUS {
                    s.grasped = true;
                }
                if s.grasped {
                    s.object_pos = [s.ee_pos[0], s.ee_pos[1], s.ee_pos[2].max(CUBE_HALF)];
                }
            }
        }
        s.step_count += 1;
        let ok = success(s, task);
        let reward = -shaping_distance(s, task).min(1.0) + if ok { SUCCESS_BONUS } else { 0.0 };
        self.done = ok || s.step_count >= MAX_STEPS;
        Ok(Step {
            obs: self.observe(),
            reward,
            done: self.done,
            success: ok,
        })
    }
}

/// Scripted controller that heads straight for the task's next waypoint.
pub fn scripted_action(state: &WorldState, task: Task) -> Vec<f32> {
    let toward = |from: [f64; 3], to: [f64; 3]| -> [f64; 3] {
        std::array::from_fn(|i| ((to[i] - from[i]) / STEP_SIZE).clamp(-1.0, 1.0))
    };
    match task {
        Task::Reach => toward(state.ee_pos, state.goal_pos).iter().map(|&v| v as f32).collect(),
        Task::Push => {
            let (o, g) = (state.object_pos, state.goal_pos);
            let d = dist_xy(o, g).max(1e-9);
            let dir = [(g[0] - o[0]) / d, (g[1] - o[1]) / d];
            // Line up behind the cube, then drive through it.
            let behind = [o[0] - dir[0] * 0.045, o[1] - dir[1] * 0.045, CUBE_HALF];
            let target = if dist_xy(state.ee_pos, behind) > 0.02 { behind } else { [g[0], g[1], CUBE_HALF] };
            let v = toward(state.ee_pos, target);
            vec![v[0] as f32, v[1] as f32]
        }
        Task::Lift => {
            let over = dist_xy(state.ee_pos, state.object_pos) < 0.01;
            let at = dist(state.ee_pos, state.object_pos) < 0.02;
            let (target, grip) = if state.grasped {
                ([state.ee_pos[0], state.ee_pos[1], 0.2], -1.0)
            } else if at {
                (state.ee_pos, -1.0)
            } else if over {
                (state.object_pos, 1.0)
            } else {
                ([state.object_pos[0], state.object_pos[1], state.ee_pos[2]], 1.0)
            };
            let v = toward(state.ee_pos, target);
            vec![v[0] as f32, v[1] as f32, v[2] as f32, grip]
        }
    }
}
