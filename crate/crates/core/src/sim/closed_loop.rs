//! Discrete-time teleoperation loop: operator head → mapping and filter →
//! delayed, rate-limited robot head → camera capture → eye rendering.

use std::collections::VecDeque;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::RgbImage;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::{optical_in_body, StereoRig};
use crate::exec::Execution;
use crate::geom::Pose;
use crate::headctl::{jump_guard, FilterState, HeadCtlConfig, HeadMapping};
use crate::render::{render_stereo, EyeOffsets, RenderConfig, StereoView};
use crate::sim::robot::{RobotConfig, RobotHeadModel};
use crate::sim::scene::{Capturer, Scene};
use crate::sim::trajectory::Trajectory;
use crate::sim::{secs_to_ns, SimError};
use crate::transport::{latency_report, LatencyReport, TimedPoseBuffer};

/// Stage durations from exposure to photons, milliseconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatencyBudget {
    pub exposure_ms: f64,
    pub transfer_ms: f64,
    pub encode_ms: f64,
    pub network_ms: f64,
    pub decode_ms: f64,
    pub render_ms: f64,
}

impl Default for LatencyBudget {
    fn default() -> Self {
        Self {
            exposure_ms: 8.0,
            transfer_ms: 10.0,
            encode_ms: 5.0,
            network_ms: 4.0,
            decode_ms: 5.0,
            render_ms: 8.0,
        }
    }
}

impl LatencyBudget {
    pub fn total_ms(&self) -> f64 {
        self.exposure_ms + self.transfer_ms + self.encode_ms + self.network_ms + self.decode_ms + self.render_ms
    }

    pub fn total_ns(&self) -> u64 {
        secs_to_ns(self.total_ms() * 1e-3)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopConfig {
    pub control_hz: f64,
    pub camera_hz: f64,
    pub display_hz: f64,
    /// Extra simulated time after the trajectory ends.
    pub settle_s: f64,
    /// Robot head pose that the operator's nominal pose maps to.
    pub robot_nominal: Pose,
    /// Camera resolution factor for captured frames.
    pub capture_scale: f64,
    pub latency: LatencyBudget,
    pub robot: RobotConfig,
    pub headctl: HeadCtlConfig,
    pub render: RenderConfig,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            control_hz: 250.0,
            camera_hz: 45.0,
            display_hz: 90.0,
            settle_s: 1.0,
            robot_nominal: Pose::from_translation(Vector3::new(0.0, 0.0, 1.2)),
            capture_scale: 0.25,
            latency: LatencyBudget::default(),
            robot: RobotConfig::default(),
            headctl: HeadCtlConfig::default(),
            render: RenderConfig {
                out_width: 256,
                out_height: 256,
                ..RenderConfig::default()
            },
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        for (name, v) in [
            ("control_hz", self.control_hz),
            ("camera_hz", self.camera_hz),
            ("display_hz", self.display_hz),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !(self.settle_s >= 0.0) {
            return Err(SimError::InvalidConfig("settle_s must be non-negative".into()));
        }
        if !(self.capture_scale > 0.0 && self.capture_scale <= 1.0) {
            return Err(SimError::InvalidConfig("capture_scale must be in (0, 1]".into()));
        }
        let l = &self.latency;
        if [
            l.exposure_ms,
            l.transfer_ms,
            l.encode_ms,
            l.network_ms,
            l.decode_ms,
            l.render_ms,
        ]
        .iter()
        .any(|v| !(*v >= 0.0))
        {
            return Err(SimError::InvalidConfig("latency stages must be non-negative".into()));
        }
        self.robot.validate()?;
        self.headctl
            .validate()
            .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        self.render
            .validate()
            .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        if self.display_hz < self.camera_hz {
            log::warn!(
                "display rate {} Hz is below camera rate {} Hz; frames will be skipped",
                self.display_hz,
                self.camera_hz
            );
        }
        Ok(())
    }

    pub fn control_period_ns(&self) -> u64 {
        secs_to_ns(1.0 / self.control_hz)
    }
}

/// One control tick of the trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimRow {
    pub t_s: f64,
    /// Operator head mapped into robot space.
    pub operator: Pose,
    /// Robot head pose as reported to the viewer.
    pub robot: Pose,
    /// Distance between the virtual eye and the physical camera.
    pub ds_m: f64,
    pub v_op_mps: f64,
    pub v_rob_mps: f64,
    /// Latency of the newest frame on screen.
    pub frame_latency_s: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameTiming {
    pub capture_ns: u64,
    pub display_ns: u64,
}

#[derive(Clone, Debug)]
struct CapturedFrame {
    timing: FrameTiming,
    /// Left camera pose at capture.
    t_world_rig: Pose,
    images: Option<(RgbImage, RgbImage)>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutput {
    pub row: SimRow,
    /// A display refresh falls on this tick.
    pub display_due: bool,
}

/// Incremental closed loop; one [`ClosedLoop::step`] per control tick.
pub struct ClosedLoop {
    cfg: LoopConfig,
    scene: Scene,
    rig: StereoRig,
    capturers: Option<(Capturer, Capturer)>,
    exec: Execution,
    mapping: Option<HeadMapping>,
    filter: FilterState,
    robot: RobotHeadModel,
    reports: TimedPoseBuffer,
    period_ns: u64,
    tick: u64,
    next_camera: u64,
    next_display: u64,
    next_report: u64,
    in_flight: VecDeque<CapturedFrame>,
    shown: Option<CapturedFrame>,
    timings: Vec<FrameTiming>,
    last_mapped: Option<Pose>,
    last_reported: Option<Pose>,
}

/// Time of the `k`-th event of a `hz` schedule.
fn event_ns(k: u64, hz: f64) -> u64 {
    (k as f64 * 1e9 / hz).round() as u64
}

impl ClosedLoop {
    /// `render_frames` enables capture and eye rendering; without it only
    /// timing and poses are simulated.
    pub fn new(
        scene: Scene,
        rig: &StereoRig,
        cfg: LoopConfig,
        render_frames: bool,
        exec: Execution,
    ) -> Result<Self, SimError> {
        cfg.validate()?;
        scene.validate()?;
        let rig = StereoRig::new(
            rig.left.scaled(cfg.capture_scale),
            rig.right.scaled(cfg.capture_scale),
            rig.t_l_r,
        );
        let capturers = render_frames.then(|| (Capturer::new(&rig.left), Capturer::new(&rig.right)));
        let capacity = ((cfg.robot.report_hz * 4.0).ceil() as usize).max(16);
        Ok(Self {
            robot: RobotHeadModel::new(cfg.robot_nominal, cfg.robot),
            period_ns: cfg.control_period_ns(),
            cfg,
            scene,
            rig,
            capturers,
            exec,
            mapping: None,
            filter: FilterState::default(),
            reports: TimedPoseBuffer::new(crate::transport::frames::ROBOT_HEAD, capacity),
            tick: 0,
            next_camera: 0,
            next_display: 0,
            next_report: 0,
            in_flight: VecDeque::new(),
            shown: None,
            timings: Vec::new(),
            last_mapped: None,
            last_reported: None,
        })
    }

    pub fn config(&self) -> &LoopConfig {
        &self.cfg
    }

    pub fn time_ns(&self) -> u64 {
        self.tick * self.period_ns
    }

    /// Changes the projection sphere radius for subsequent renders.
    pub fn set_radius(&mut self, r: f64) -> Result<(), SimError> {
        let mut render = self.cfg.render;
        render.r = r;
        render.validate().map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        self.cfg.render = render;
        Ok(())
    }

    /// Re-captures the nominal pose on the next step.
    pub fn rezero(&mut self) {
        self.mapping = None;
    }

    pub fn frame_timings(&self) -> &[FrameTiming] {
        &self.timings
    }

    fn rig_pose(head: &Pose) -> Pose {
        *head * Pose::from_rotation(optical_in_body())
    }

    pub fn step(&mut self, t_vr_head: &Pose) -> Result<StepOutput, SimError> {
        let t = self.time_ns();
        let dt = self.period_ns as f64 * 1e-9;
        if self.mapping.is_none() {
            let m = HeadMapping::capture(self.robot.actual, t_vr_head)
                .map_err(|e| SimError::InvalidTrajectory(e.to_string()))?;
            self.mapping = Some(m);
            // The filter restarts from the robot's current pose.
            self.filter = FilterState {
                current: self.robot.actual,
                initialized: true,
                mode: Default::default(),
            };
        }
        let mapped = self.mapping.as_ref().expect("set above").map_head(t_vr_head);
        let (command, _) = jump_guard(&mut self.filter, &mapped, dt, &self.cfg.headctl);
        let actual = self.robot.head_step(t, command, dt);

        if event_ns(self.next_report, self.cfg.robot.report_hz) <= t {
            self.reports.push(t, actual).expect("ticks increase");
            while event_ns(self.next_report, self.cfg.robot.report_hz) <= t {
                self.next_report += 1;
            }
        }

        let budget = self.cfg.latency.total_ns();
        while event_ns(self.next_camera, self.cfg.camera_hz) <= t {
            let capture_ns = event_ns(self.next_camera, self.cfg.camera_hz);
            let display_ns = (capture_ns + budget).div_ceil(self.period_ns) * self.period_ns;
            let t_world_rig = Self::rig_pose(&actual);
            let images = self.capturers.as_ref().map(|(l, r)| {
                let right_pose = t_world_rig * self.rig.t_l_r;
                self.exec.join(
                    || l.capture(&self.scene, &t_world_rig, self.exec),
                    || r.capture(&self.scene, &right_pose, self.exec),
                )
            });
            self.in_flight.push_back(CapturedFrame {
                timing: FrameTiming { capture_ns, display_ns },
                t_world_rig,
                images,
            });
            self.next_camera += 1;
        }
        while self.in_flight.front().is_some_and(|f| f.timing.display_ns <= t) {
            let f = self.in_flight.pop_front().expect("checked");
            self.timings.push(f.timing);
            self.shown = Some(f);
        }

        let report_delay = secs_to_ns(self.cfg.robot.report_delay_s);
        let reported = self
            .reports
            .lookup(t.saturating_sub(report_delay))
            .map(|l| l.pose)
            .unwrap_or(actual);
        let speed = |prev: Option<Pose>, now: &Pose| prev.map_or(0.0, |p| p.distance_to(now) / dt);
        let row = SimRow {
            t_s: t as f64 * 1e-9,
            operator: mapped,
            robot: reported,
            ds_m: mapped.distance_to(&actual),
            v_op_mps: speed(self.last_mapped, &mapped),
            v_rob_mps: speed(self.last_reported, &reported),
            frame_latency_s: self
                .shown
                .as_ref()
                .map(|f| (f.timing.display_ns - f.timing.capture_ns) as f64 * 1e-9),
        };
        self.last_mapped = Some(mapped);
        self.last_reported = Some(reported);

        let mut display_due = false;
        while event_ns(self.next_display, self.cfg.display_hz) <= t {
            display_due = true;
            self.next_display += 1;
        }
        self.tick += 1;
        Ok(StepOutput { row, display_due })
    }

    /// Renders the newest displayed stereo frame for the current operator
    /// eye pose. `None` until a captured frame has reached the display.
    pub fn render_eyes(&self) -> Option<Result<StereoView, SimError>> {
        let frame = self.shown.as_ref()?;
        let (left, right) = frame.images.as_ref()?;
        let head = Self::rig_pose(&self.last_mapped?);
        Some(
            render_stereo(
                left,
                right,
                &self.rig,
                &frame.t_world_rig,
                &head,
                &EyeOffsets::matching_rig(&self.rig),
                &self.cfg.render,
                self.exec,
            )
            .map_err(SimError::from),
        )
    }

    /// Capture stamp of the frame [`ClosedLoop::render_eyes`] would use.
    pub fn shown_capture_ns(&self) -> Option<u64> {
        self.shown.as_ref().map(|f| f.timing.capture_ns)
    }
}

#[derive(Clone, Debug)]
pub struct SimTrace {
    pub control_hz: f64,
    pub rows: Vec<SimRow>,
    pub frames: Vec<FrameTiming>,
}

impl SimTrace {
    pub fn column(&self, f: impl Fn(&SimRow) -> f64) -> Vec<f64> {
        self.rows.iter().map(f).collect()
    }

    /// Pose-to-photon latency over all displayed frames (one clock, zero
    /// offset).
    pub fn latency(&self) -> LatencyReport {
        let pairs: Vec<(u64, u64)> = self.frames.iter().map(|f| (f.capture_ns, f.display_ns)).collect();
        latency_report(&pairs, 0)
    }

    /// CSV with columns `t_s,ds_m,v_op_mps,v_rob_mps,frame_latency_s`; the
    /// latency cell is empty before the first frame is shown.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t_s,ds_m,v_op_mps,v_rob_mps,frame_latency_s")?;
        for r in &self.rows {
            let lat = r.frame_latency_s.map(|v| format!("{v:.6}")).unwrap_or_default();
            writeln!(
                w,
                "{:.6},{:.9},{:.9},{:.9},{}",
                r.t_s, r.ds_m, r.v_op_mps, r.v_rob_mps, lat
            )?;
        }
        Ok(())
    }
}

/// Where and how often to save rendered eye views.
#[derive(Clone, Debug)]
pub struct FrameDump {
    pub dir: PathBuf,
    /// Save every n-th display refresh.
    pub every: usize,
}

fn save_png(img: &RgbImage, path: &Path) -> Result<(), SimError> {
    img.save(path)
        .map_err(|e| SimError::Io(format!("{}: {e}", path.display())))
}

/// Plays `trajectory` through the loop at the control rate.
pub fn run_closed_loop(
    scene: &Scene,
    trajectory: &Trajectory,
    rig: &StereoRig,
    cfg: &LoopConfig,
    dump: Option<&FrameDump>,
    exec: Execution,
) -> Result<SimTrace, SimError> {
    trajectory.validate()?;
    let mut sim = ClosedLoop::new(scene.clone(), rig, cfg.clone(), dump.is_some(), exec)?;
    if let Some(d) = dump {
        std::fs::create_dir_all(&d.dir).map_err(|e| SimError::Io(format!("{}: {e}", d.dir.display())))?;
    }
    let end_ns = secs_to_ns(trajectory.duration() + cfg.settle_s);
    let mut rows = Vec::new();
    let mut refresh = 0usize;
    let mut saved = 0usize;
    while sim.time_ns() <= end_ns {
        let t = sim.time_ns() as f64 * 1e-9;
        let out = sim.step(&trajectory.sample(t))?;
        rows.push(out.row);
        if let (Some(d), true) = (dump, out.display_due) {
            if refresh.is_multiple_of(d.every.max(1)) {
                if let Some(view) = sim.render_eyes() {
                    let view = view?;
                    save_png(&view.left.image, &d.dir.join(format!("eye_{saved:05}_left.png")))?;
                    save_png(&view.right.image, &d.dir.join(format!("eye_{saved:05}_right.png")))?;
                    saved += 1;
                }
            }
            refresh += 1;
        }
    }
    Ok(SimTrace {
        control_hz: cfg.control_hz,
        rows,
        frames: sim.frame_timings().to_vec(),
    })
}
