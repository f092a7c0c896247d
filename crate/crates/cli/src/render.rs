use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::ValueEnum;
use serde::Serialize;
use spheroview::camera::Side;
use spheroview::exec::Execution;
use spheroview::render::{error_curve, reproject, write_error_curve_csv, RenderConfig};

use crate::common::{emit, load_pose, load_rig, write_sidecar};

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum CameraSide {
    Left,
    Right,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Captured fisheye frame (PNG), sized as the rig camera.
    #[arg(long)]
    frame: PathBuf,

    /// Stereo rig JSON [default: built-in reference rig].
    #[arg(long)]
    rig: Option<PathBuf>,

    /// Which rig camera captured the frame.
    #[arg(long, value_enum, default_value_t = CameraSide::Left)]
    side: CameraSide,

    /// Camera pose at capture, JSON {"q":[w,x,y,z],"t":[x,y,z]} [default: identity].
    #[arg(long)]
    cam_pose: Option<PathBuf>,

    /// Eye pose, same format [default: identity].
    #[arg(long)]
    eye_pose: Option<PathBuf>,

    /// Projection sphere radius, meters.
    #[arg(long, default_value_t = 1.0)]
    r: f64,

    #[arg(long, default_value_t = 800)]
    width: u32,

    #[arg(long, default_value_t = 800)]
    height: u32,

    /// Vertical field of view of the eye, degrees.
    #[arg(long, default_value_t = 90.0)]
    fov_deg: f64,

    /// Output PNG.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct Effective {
    side: CameraSide,
    render: RenderConfig,
}

pub fn run(a: Args, exec: Execution) -> Result<()> {
    let rig = load_rig(a.rig.as_deref())?;
    let side = match a.side {
        CameraSide::Left => Side::Left,
        CameraSide::Right => Side::Right,
    };
    let frame = image::open(&a.frame)
        .with_context(|| format!("reading {}", a.frame.display()))?
        .to_rgb8();
    let cfg = RenderConfig {
        r: a.r,
        out_width: a.width,
        out_height: a.height,
        eye_fov: a.fov_deg.to_radians(),
        ..RenderConfig::default()
    };
    let cam = load_pose(a.cam_pose.as_deref())?;
    let eye = load_pose(a.eye_pose.as_deref())?;
    let view = reproject(&frame, rig.intrinsics(side), &cam, &eye, &cfg, exec)?;
    view.image
        .save(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))?;
    write_sidecar(
        &a.out,
        "render",
        &Effective {
            side: a.side,
            render: cfg,
        },
    )?;
    log::info!("rendered in {:.2} ms", view.render_time.as_secs_f64() * 1e3);
    Ok(())
}

#[derive(Debug, clap::Args)]
pub struct CurveArgs {
    /// Eye displacement perpendicular to the viewing ray, meters.
    #[arg(long, default_value_t = 0.1)]
    dx: f64,

    /// Projection sphere radius, meters.
    #[arg(long, default_value_t = 1.0)]
    r: f64,

    #[arg(long, default_value_t = 0.2)]
    d_min: f64,

    #[arg(long, default_value_t = 3.0)]
    d_max: f64,

    /// Number of samples, both ends included.
    #[arg(long, default_value_t = 50)]
    steps: usize,

    /// CSV with columns d_m,gamma_deg [default: stdout].
    #[arg(long)]
    csv: Option<PathBuf>,
}

pub fn run_curve(a: CurveArgs) -> Result<()> {
    let samples = error_curve(a.dx, a.r, a.d_min, a.d_max, a.steps)?;
    let mut buf = Vec::new();
    write_error_curve_csv(&mut buf, &samples)?;
    emit(a.csv.as_deref(), &String::from_utf8(buf).expect("ascii csv"))
}
