//! Per-connection session state and message handling. Everything here is
//! synchronous; the server only moves frames in and out.

use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use nalgebra::Vector3;
use tdcr_core::ik::{plan_config_trajectory, solve_ik, IkSettings};
use tdcr_core::kinematics::{forward_kinematics, Config, RobotSpec};
use tdcr_core::learning::{ContextModel, ContextVector, DEFAULT_WAYPOINTS};
use tdcr_core::metrics::resample_arclength;
use tdcr_core::presets::load_task_and_robot;
use tdcr_core::store::StoreWriter;
use tdcr_core::tasks::oracle::{anatomy_placement, sphere_pair};
use tdcr_core::tasks::{DemoMeta, DemoSource, Demonstration, Task};
use tdcr_core::{learning::ContextSchema, Error};

use crate::protocol::{parse_client, ClientMsg, EnvDescriptor, ErrorCode, RecordAction, ServerMsg, Surface, PROTOCOL_VERSION};

#[derive(Debug, Clone, PartialEq)]
pub struct TeleopSettings {
    /// Per-target refinement; `max_iters` bounds the work per message.
    pub ik: IkSettings,
    /// Full-accuracy IK used to plan playback.
    pub playback_ik: IkSettings,
    pub backbone_points: usize,
    /// Waypoints per saved demonstration.
    pub waypoints: usize,
    pub cadence: Duration,
}

impl Default for TeleopSettings {
    fn default() -> Self {
        Self {
            ik: IkSettings { max_iters: 5, fk_steps: 100, ..IkSettings::default() },
            playback_ik: IkSettings::default(),
            backbone_points: 64,
            waypoints: DEFAULT_WAYPOINTS,
            cadence: Duration::from_millis(20),
        }
    }
}

/// Destination of saved demonstrations.
pub trait DemoSink: Send {
    /// Returns the index of the stored record.
    fn append(&mut self, demo: &Demonstration) -> tdcr_core::Result<usize>;
}

impl DemoSink for StoreWriter {
    fn append(&mut self, demo: &Demonstration) -> tdcr_core::Result<usize> {
        StoreWriter::append(self, demo)
    }
}

impl DemoSink for Vec<Demonstration> {
    fn append(&mut self, demo: &Demonstration) -> tdcr_core::Result<usize> {
        self.push(demo.clone());
        Ok(self.len() - 1)
    }
}

pub type SharedSink = Arc<Mutex<dyn DemoSink>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Idle,
    Recording,
    Playback,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub tip: Vector3<f64>,
    /// Seconds since recording started.
    pub t: f64,
}

/// A request that could not be served. The session is left as it was.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub code: ErrorCode,
    pub msg: String,
}

impl Failure {
    fn new(code: ErrorCode, msg: impl Into<String>) -> Self {
        Self { code, msg: msg.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::SchemaMismatch { .. } => ErrorCode::SchemaMismatch,
            Error::Io { .. } | Error::Parse { .. } | Error::Json(_) | Error::Toml(_) => ErrorCode::File,
            Error::DimensionMismatch { .. } | Error::DegenerateInput(_) => ErrorCode::InvalidContext,
            _ => ErrorCode::Internal,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<Failure> for ServerMsg {
    fn from(f: Failure) -> Self {
        ServerMsg::Error { code: f.code, msg: f.msg }
    }
}

/// Messages produced by one request. `cadence` separates consecutive states.
#[derive(Debug, Clone, Default)]
pub struct Reply {
    pub messages: Vec<ServerMsg>,
    pub cadence: Duration,
}

impl Reply {
    fn one(msg: ServerMsg) -> Self {
        Self { messages: vec![msg], cadence: Duration::ZERO }
    }
}

/// Evenly spaced subset that keeps both ends.
pub fn decimate<T: Copy>(points: &[T], max: usize) -> Vec<T> {
    let n = points.len();
    if n <= max || max < 2 {
        return points[..n.min(max)].to_vec();
    }
    (0..max).map(|i| points[(i * (n - 1) + (max - 1) / 2) / (max - 1)]).collect()
}

/// Robot, task and recording state of one client.
#[derive(Debug)]
pub struct Session {
    id: String,
    spec: RobotSpec,
    task: Task,
    settings: TeleopSettings,
    config: Config,
    tip: Vector3<f64>,
    mode: Mode,
    buffer: Vec<Sample>,
    stopped: Option<Vec<Sample>>,
    context: Option<ContextVector>,
    started: Instant,
}

impl Session {
    pub fn new(spec: RobotSpec, task: Task, settings: TeleopSettings) -> tdcr_core::Result<Self> {
        spec.validate()?;
        settings.ik.validate()?;
        settings.playback_ik.validate()?;
        let config = Config::home(&spec);
        let tip = Self::backbone(&spec, &config, settings.ik.fk_steps)?.last().copied().ok_or(Error::EmptyShape)?;
        Ok(Self {
            id: uuid::Uuid::new_v4().to_string(),
            spec,
            task,
            settings,
            config,
            tip,
            mode: Mode::Idle,
            buffer: Vec::new(),
            stopped: None,
            context: None,
            started: Instant::now(),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn spec(&self) -> &RobotSpec {
        &self.spec
    }

    pub fn task(&self) -> &Task {
        &self.task
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn tip(&self) -> Vector3<f64> {
        self.tip
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn context(&self) -> Option<&ContextVector> {
        self.context.as_ref()
    }

    /// Tips recorded so far, or the stopped recording awaiting save.
    pub fn recorded(&self) -> Vec<Vector3<f64>> {
        match &self.stopped {
            Some(s) if self.mode != Mode::Recording => s.iter().map(|s| s.tip).collect(),
            _ => self.buffer.iter().map(|s| s.tip).collect(),
        }
    }

    fn backbone(spec: &RobotSpec, config: &Config, steps: usize) -> tdcr_core::Result<Vec<Vector3<f64>>> {
        Ok(forward_kinematics(spec, config, steps)?.positions().collect())
    }

    fn state_for(&self, config: &Config, target: Option<&Vector3<f64>>, steps: usize) -> Result<(ServerMsg, Vector3<f64>), Failure> {
        let backbone = Self::backbone(&self.spec, config, steps)?;
        let tip = *backbone.last().ok_or(Error::EmptyShape)?;
        let residual = target.map_or(0.0, |p| (p - tip).norm());
        let msg = ServerMsg::State {
            backbone: decimate(&backbone, self.settings.backbone_points).into_iter().map(Into::into).collect(),
            tip: tip.into(),
            config: config.clone(),
            residual,
            recording: self.mode == Mode::Recording,
        };
        Ok((msg, tip))
    }

    /// Current state with zero residual.
    pub fn state(&self) -> Result<ServerMsg, Failure> {
        self.state_for(&self.config, None, self.settings.ik.fk_steps).map(|(m, _)| m)
    }

    fn surface(&self, context: &ContextVector) -> Result<Surface, Failure> {
        Ok(match self.task.schema() {
            ContextSchema::EightPlane => {
                let e = self.task.def.eight.as_ref().expect("validated task");
                Surface::Plane {
                    point: context.p_ref().into(),
                    normal: [0.0, 1.0, 0.0],
                    half_extents: [0.5 * e.p_ref_size[0], 0.5 * e.p_ref_size[1]],
                }
            }
            ContextSchema::DoubleSphere => {
                let s = self.task.def.sphere.as_ref().expect("validated task");
                let pair = sphere_pair(s, context)?;
                Surface::Spheres { centers: [pair.c1.into(), pair.c2.into()], radii: [pair.r1, pair.r2] }
            }
            ContextSchema::Anatomy => {
                let mesh = self.task.mesh.as_deref().ok_or_else(|| Failure::new(ErrorCode::File, "task has no mesh"))?;
                let place = anatomy_placement(mesh, context)?;
                let placed = mesh.transformed(&place.anchor, place.scale, &place.p_ref);
                Surface::Mesh { vertices: placed.vertices.iter().map(|v| (*v).into()).collect(), triangles: placed.triangles }
            }
        })
    }

    /// Environment for the entered context, or the nominal one.
    pub fn env(&self, predicted: Option<Vec<[f64; 3]>>, context: Option<&ContextVector>) -> Result<ServerMsg, Failure> {
        let nominal;
        let context = match context.or(self.context.as_ref()) {
            Some(c) => c,
            None => {
                nominal = self.task.nominal_context()?;
                &nominal
            }
        };
        let descriptor = EnvDescriptor {
            task: self.task.def.name.clone(),
            schema: self.task.schema().to_string(),
            context: context.values().to_vec(),
            surface: self.surface(context)?,
            predicted,
        };
        Ok(ServerMsg::Env { version: PROTOCOL_VERSION, descriptor })
    }

    fn parse_context(&self, values: Vec<f64>) -> Result<ContextVector, Failure> {
        ContextVector::from_task_values(self.task.schema(), values)
            .map_err(|e| Failure::new(ErrorCode::InvalidContext, e.to_string()))
    }

    pub fn set_context(&mut self, values: Vec<f64>) -> Result<ServerMsg, Failure> {
        let context = self.parse_context(values)?;
        let env = self.env(None, Some(&context))?;
        self.context = Some(context);
        Ok(env)
    }

    /// Bounded IK refinement toward `p`, warm-started from the current
    /// configuration. While recording, the achieved tip is appended.
    pub fn handle_target(&mut self, p: [f64; 3]) -> Result<ServerMsg, Failure> {
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Failure::new(ErrorCode::InvalidTarget, "target must be finite"));
        }
        let target = Vector3::from(p);
        let sol = solve_ik(&self.spec, &self.config, &target, &self.settings.ik)?;
        let (msg, tip) = self.state_for(&sol.config, Some(&target), self.settings.ik.fk_steps)?;
        self.config = sol.config;
        self.tip = tip;
        if self.mode == Mode::Recording {
            self.buffer.push(Sample { tip, t: self.started.elapsed().as_secs_f64() });
        }
        Ok(msg)
    }

    pub fn handle_record(&mut self, action: RecordAction, sink: &Mutex<dyn DemoSink>) -> Result<ServerMsg, Failure> {
        match action {
            RecordAction::Start => {
                if self.mode == Mode::Recording {
                    return Err(Failure::new(ErrorCode::BadState, "already recording"));
                }
                self.stopped = None;
                self.buffer.clear();
                self.started = Instant::now();
                self.mode = Mode::Recording;
                self.state()
            }
            RecordAction::Stop => {
                if self.mode != Mode::Recording {
                    return Err(Failure::new(ErrorCode::BadState, "not recording"));
                }
                self.stopped = Some(std::mem::take(&mut self.buffer));
                self.mode = Mode::Idle;
                self.state()
            }
            RecordAction::Save => {
                if self.mode == Mode::Recording {
                    return Err(Failure::new(ErrorCode::BadState, "stop the recording before saving"));
                }
                let points: Vec<Vector3<f64>> = match &self.stopped {
                    Some(s) if !s.is_empty() => s.iter().map(|s| s.tip).collect(),
                    _ => return Err(Failure::new(ErrorCode::EmptyRecording, "no recorded points to save")),
                };
                let context = self.context.clone().ok_or_else(|| {
                    let fields = self.task.schema().field_names();
                    Failure::new(ErrorCode::IncompleteContext, format!("send a context with fields {:?} first", &fields[..fields.len() - 1]))
                })?;
                let trajectory = resample_arclength(&points, self.settings.waypoints)
                    .map_err(|e| Failure::new(ErrorCode::EmptyRecording, format!("recording cannot be resampled: {e}")))?;
                let demo = Demonstration {
                    context,
                    trajectory,
                    meta: DemoMeta {
                        source: DemoSource::Teleop,
                        seed: None,
                        index: None,
                        session: Some(self.id.clone()),
                        snap_residual: None,
                    },
                };
                let index = sink.lock().map_err(|_| Failure::new(ErrorCode::Internal, "store lock poisoned"))?.append(&demo)?;
                self.stopped = None;
                Ok(ServerMsg::Saved { index })
            }
        }
    }

    /// Predicts, plans from the current configuration and returns the overlay
    /// followed by one state per waypoint. The robot ends at the last waypoint.
    pub fn handle_playback(&mut self, model: &str, context: Vec<f64>, cadence: Option<Duration>) -> Result<Reply, Failure> {
        if self.mode == Mode::Recording {
            return Err(Failure::new(ErrorCode::BadState, "stop the recording before playback"));
        }
        let model = ContextModel::load(PathBuf::from(model))?;
        if model.schema() != self.task.schema() {
            return Err(Failure::new(
                ErrorCode::SchemaMismatch,
                format!("model is for {}, session task is {}", model.schema(), self.task.schema()),
            ));
        }
        let context = self.parse_context(context)?;
        let predicted = model.predict(&context)?;
        self.mode = Mode::Playback;
        let planned = plan_config_trajectory(&self.spec, predicted.waypoints(), &self.config, &self.settings.playback_ik);
        self.mode = Mode::Idle;
        let plan = planned?;
        let overlay = predicted.waypoints().iter().map(|p| (*p).into()).collect();
        let mut messages = vec![self.env(Some(overlay), Some(&context))?];
        for (config, target) in plan.waypoints.iter().zip(predicted.waypoints()) {
            let (msg, tip) = self.state_for(config, Some(target), self.settings.playback_ik.fk_steps)?;
            messages.push(msg);
            self.tip = tip;
        }
        if let Some(last) = plan.waypoints.last() {
            self.config = last.clone();
        }
        messages.push(ServerMsg::ack("playback"));
        Ok(Reply { messages, cadence: cadence.unwrap_or(self.settings.cadence) })
    }

    pub fn reset(&mut self) -> Result<ServerMsg, Failure> {
        self.config = Config::home(&self.spec);
        self.mode = Mode::Idle;
        self.buffer.clear();
        self.stopped = None;
        let (msg, tip) = self.state_for(&self.config, None, self.settings.ik.fk_steps)?;
        self.tip = tip;
        Ok(msg)
    }
}

/// Defaults shared by every connection of a server.
#[derive(Clone)]
pub struct ServerConfig {
    pub preset_dirs: Vec<PathBuf>,
    pub default_task: Option<String>,
    pub default_robot: Option<String>,
    pub settings: TeleopSettings,
    pub sink: SharedSink,
}

impl std::fmt::Debug for ServerConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ServerConfig")
            .field("preset_dirs", &self.preset_dirs)
            .field("default_task", &self.default_task)
            .field("default_robot", &self.default_robot)
            .field("settings", &self.settings)
            .finish_non_exhaustive()
    }
}

/// Protocol state of one client: uninitialized until `init`.
#[derive(Debug)]
pub struct Connection {
    config: Arc<ServerConfig>,
    session: Option<Session>,
}

impl Connection {
    pub fn new(config: Arc<ServerConfig>) -> Self {
        Self { config, session: None }
    }

    pub fn session(&self) -> Option<&Session> {
        self.session.as_ref()
    }

    pub fn handle_text(&mut self, text: &str) -> Reply {
        match parse_client(text) {
            Ok(msg) => self.handle(msg),
            Err(e) => Reply::one(ServerMsg::error(ErrorCode::Malformed, e.to_string())),
        }
    }

    pub fn handle(&mut self, msg: ClientMsg) -> Reply {
        match self.dispatch(msg) {
            Ok(reply) => reply,
            Err(f) => Reply::one(f.into()),
        }
    }

    fn init(&mut self, task: Option<String>, robot: Option<String>) -> Result<Reply, Failure> {
        let task = task
            .or_else(|| self.config.default_task.clone())
            .ok_or_else(|| Failure::new(ErrorCode::File, "no task given and the server has no default"))?;
        let robot = robot.or_else(|| self.config.default_robot.clone());
        let loaded = load_task_and_robot(&task, robot.as_deref(), &self.config.preset_dirs)?;
        let session = Session::new(loaded.robot, loaded.task, self.config.settings.clone())?;
        let messages = vec![session.env(None, None)?, session.state()?];
        log::info!("session {} started on {}", session.id(), loaded.task_path.display());
        self.session = Some(session);
        Ok(Reply { messages, cadence: Duration::ZERO })
    }

    fn dispatch(&mut self, msg: ClientMsg) -> Result<Reply, Failure> {
        if let ClientMsg::Init { task, robot } = msg {
            return self.init(task, robot);
        }
        let sink = self.config.sink.clone();
        let session = self.session.as_mut().ok_or_else(|| Failure::new(ErrorCode::NotInitialized, "send init first"))?;
        let one = match msg {
            ClientMsg::Init { .. } => unreachable!("handled above"),
            ClientMsg::Context { values } => session.set_context(values)?,
            ClientMsg::Target { p } => session.handle_target(p)?,
            ClientMsg::Record { action } => session.handle_record(action, &*sink)?,
            ClientMsg::Playback { model, context, cadence_ms } => {
                return session.handle_playback(&model, context, cadence_ms.map(Duration::from_millis));
            }
            ClientMsg::Reset => session.reset()?,
        };
        Ok(Reply::one(one))
    }
}
