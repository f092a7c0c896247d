use std::path::PathBuf;
use std::time::Duration;

use anyhow::{Context, Result};
use spheroview::exec::Execution;
use spheroview::sim::{run_live_session, LiveOptions};
use spheroview::transport::Server;

use crate::common::{load_config, load_rig, load_scene, to_json};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// TCP port for framed TCP, WebSocket and UI files [default: serve.port
    /// from the config, 8765].
    #[arg(long, env = "SPHEROVIEW_PORT")]
    port: Option<u16>,

    /// Address to listen on.
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,

    /// Scene JSON, or the built-in `lab`.
    #[arg(long, default_value = "lab")]
    scene: String,

    /// Run configuration JSON [default: built-in defaults].
    #[arg(long)]
    config: Option<PathBuf>,

    /// Stereo rig JSON [default: built-in reference rig].
    #[arg(long)]
    rig: Option<PathBuf>,

    /// Directory with the viewer's static files, served over HTTP.
    #[arg(long)]
    ui: Option<PathBuf>,

    /// End each session after this many seconds.
    #[arg(long)]
    session_limit_s: Option<f64>,

    /// Offset added to every clock reading the server reports, milliseconds
    /// (for exercising clock synchronization).
    #[arg(long, default_value_t = 0.0)]
    clock_skew_ms: f64,
}

pub fn run(a: Args, exec: Execution) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let rig = load_rig(a.rig.as_deref())?;
    let scene = load_scene(&a.scene)?;
    let port = a.port.unwrap_or(cfg.serve.port);
    let opts = LiveOptions {
        stream_hz: cfg.serve.stream_hz,
        frame_size: cfg.serve.frame_size,
        jpeg_quality: cfg.serve.jpeg_quality,
        clock_skew_ns: (a.clock_skew_ms * 1e6).round() as i64,
        max_duration: a.session_limit_s.map(Duration::from_secs_f64),
    };
    let loop_cfg = cfg.loop_config();
    let server =
        Server::bind((a.bind.as_str(), port), a.ui.clone()).with_context(|| format!("binding {}:{port}", a.bind))?;
    log::info!("effective config:\n{}", to_json(&cfg));
    log::info!("listening on {}", server.local_addr()?);
    server.run(move |mut carrier| {
        match run_live_session(carrier.as_mut(), scene.clone(), &rig, &loop_cfg, opts, exec) {
            Ok(s) => log::info!(
                "session: {} ticks ({} skipped), {} head poses in, {} stereo frames out",
                s.ticks,
                s.skipped_ticks,
                s.poses_received,
                s.frames_sent
            ),
            Err(e) => log::error!("session failed: {e}"),
        }
    })?;
    Ok(())
}
