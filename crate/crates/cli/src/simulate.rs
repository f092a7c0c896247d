use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use spheroview::config::RunConfig;
use spheroview::exec::Execution;
use spheroview::sim::{estimate_lag, onset_lags, pearson, run_closed_loop, FrameDump, SimTrace, Trajectory};

use crate::common::{emit, load_config, load_rig, load_scene, read, to_json, usage, write_sidecar};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Scene JSON, or the built-in `lab`.
    #[arg(long, default_value = "lab")]
    scene: String,

    /// Trajectory JSON, or a built-in: `sweep` (lateral step moves) or
    /// `dynamic` (random moves seeded by --seed).
    #[arg(long, default_value = "dynamic")]
    trajectory: String,

    /// Length of the `dynamic` trajectory, seconds.
    #[arg(long, default_value_t = 20.0)]
    duration_s: f64,

    /// Seed for built-in random trajectories.
    #[arg(long, default_value_t = 1)]
    seed: u64,

    /// Run configuration JSON [default: built-in defaults].
    #[arg(long)]
    config: Option<PathBuf>,

    /// Stereo rig JSON [default: built-in reference rig].
    #[arg(long)]
    rig: Option<PathBuf>,

    /// Per-tick metrics CSV: t_s,ds_m,v_op_mps,v_rob_mps,frame_latency_s.
    #[arg(long)]
    metrics: Option<PathBuf>,

    /// Directory for rendered eye views (PNG); enables capture and rendering.
    #[arg(long)]
    frames: Option<PathBuf>,

    /// Save every n-th display refresh when --frames is given.
    #[arg(long, default_value_t = 1)]
    frame_every: usize,

    /// Summary JSON [default: stdout].
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Serialize)]
struct LatencySummary {
    frames: usize,
    anomalies: usize,
    mean_s: f64,
    p95_s: f64,
}

#[derive(Serialize)]
struct Summary {
    schema: u32,
    duration_s: f64,
    ticks: usize,
    latency: LatencySummary,
    ds_mean_m: f64,
    ds_max_m: f64,
    /// Correlation between operator speed and eye-camera deviation.
    pearson_v_op_ds: Option<f64>,
    /// Delay of the robot speed trace behind the operator's.
    lag_s: Option<f64>,
    /// Operator-to-robot onset and settle delays at 10 % of peak speed.
    onset_t1_s: Option<f64>,
    onset_t2_s: Option<f64>,
}

#[derive(Serialize)]
struct Effective<'a> {
    scene: &'a str,
    trajectory: &'a str,
    duration_s: f64,
    seed: u64,
    config: &'a RunConfig,
}

fn load_trajectory(arg: &str, seed: u64, duration_s: f64) -> Result<Trajectory> {
    match arg {
        "sweep" => Ok(Trajectory::sweep()),
        "dynamic" => {
            if duration_s.is_nan() || duration_s <= 0.0 {
                return Err(usage("--duration-s must be positive"));
            }
            Ok(Trajectory::dynamic(seed, duration_s))
        }
        path => Trajectory::from_json(&read(Path::new(path))?).with_context(|| format!("loading trajectory {path}")),
    }
}

fn summarize(trace: &SimTrace) -> Summary {
    let v_op = trace.column(|r| r.v_op_mps);
    let v_rob = trace.column(|r| r.v_rob_mps);
    let ds = trace.column(|r| r.ds_m);
    let lat = trace.latency();
    let rate = trace.control_hz;
    let onset = onset_lags(&v_op, &v_rob, rate, 0.1).ok();
    Summary {
        schema: 1,
        duration_s: trace.rows.last().map_or(0.0, |r| r.t_s),
        ticks: trace.rows.len(),
        latency: LatencySummary {
            frames: lat.per_frame.len(),
            anomalies: lat.anomalies,
            mean_s: lat.mean_s,
            p95_s: lat.p95_s,
        },
        ds_mean_m: ds.iter().sum::<f64>() / ds.len().max(1) as f64,
        ds_max_m: ds.iter().copied().fold(0.0, f64::max),
        pearson_v_op_ds: pearson(&v_op, &ds).ok(),
        lag_s: estimate_lag(&v_op, &v_rob, rate, 0.5).ok(),
        onset_t1_s: onset.map(|o| o.0),
        onset_t2_s: onset.map(|o| o.1),
    }
}

pub fn run(a: Args, exec: Execution) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let rig = load_rig(a.rig.as_deref())?;
    let scene = load_scene(&a.scene)?;
    let trajectory = load_trajectory(&a.trajectory, a.seed, a.duration_s)?;
    if a.frame_every == 0 {
        return Err(usage("--frame-every must be at least 1"));
    }
    let dump = a.frames.as_ref().map(|dir| FrameDump {
        dir: dir.clone(),
        every: a.frame_every,
    });
    let trace = run_closed_loop(&scene, &trajectory, &rig, &cfg.loop_config(), dump.as_ref(), exec)?;

    if let Some(path) = &a.metrics {
        let f = File::create(path).with_context(|| format!("writing {}", path.display()))?;
        trace.write_csv(BufWriter::new(f))?;
    }
    emit(a.summary.as_deref(), &to_json(&summarize(&trace)))?;
    let effective = Effective {
        scene: &a.scene,
        trajectory: &a.trajectory,
        duration_s: a.duration_s,
        seed: a.seed,
        config: &cfg,
    };
    if let Some(primary) = a.metrics.as_ref().or(a.summary.as_ref()) {
        write_sidecar(primary, "simulate", &effective)?;
    }
    Ok(())
}
