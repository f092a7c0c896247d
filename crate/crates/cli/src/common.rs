use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use spheroview::camera::StereoRig;
use spheroview::config::RunConfig;
use spheroview::exec::Execution;
use spheroview::geom::Pose;
use spheroview::sim::Scene;

/// Bad invocation detected after argument parsing; exits with status 1.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::default()
    }
}

pub fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn load_rig(path: Option<&Path>) -> Result<StereoRig> {
    match path {
        Some(p) => StereoRig::load(p).with_context(|| format!("loading rig {}", p.display())),
        None => Ok(StereoRig::default_rig()),
    }
}

pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

pub fn load_pose(path: Option<&Path>) -> Result<Pose> {
    match path {
        Some(p) => serde_json::from_str(&read(p)?).with_context(|| format!("parsing pose {}", p.display())),
        None => Ok(Pose::identity()),
    }
}

/// A scene file, or the built-in `lab` scene.
pub fn load_scene(arg: &str) -> Result<Scene> {
    if arg == "lab" {
        return Ok(Scene::lab());
    }
    Scene::from_json(&read(Path::new(arg))?).with_context(|| format!("loading scene {arg}"))
}

/// Writes `text` to `path`, or to stdout when `path` is `None`.
pub fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

pub fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// `out.csv` → `out.config.json`.
pub fn sidecar_path(primary: &Path) -> PathBuf {
    primary.with_extension("config.json")
}

/// Records the command line and effective settings next to an output so
/// the run can be reproduced.
pub fn write_sidecar<T: Serialize>(primary: &Path, command: &str, effective: &T) -> Result<()> {
    #[derive(Serialize)]
    struct Sidecar<'a, T> {
        schema: u32,
        command: &'a str,
        args: Vec<String>,
        effective: &'a T,
    }
    let args = std::env::args().skip(1).collect();
    let text = to_json(&Sidecar {
        schema: 1,
        command,
        args,
        effective,
    });
    let path = sidecar_path(primary);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}
