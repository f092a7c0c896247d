use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use spheroview::calib::{
    generate_synthetic, params_from_json, samples_from_json, samples_to_json, solve, CalibParams, SolveOptions,
    SyntheticOptions,
};
use spheroview::exec::Execution;

use crate::common::{emit, load_rig, read, to_json, write_sidecar};

#[derive(Debug, clap::Args)]
#[command(group(clap::ArgGroup::new("input").required(true).args(["samples", "synthetic"])))]
pub struct Args {
    /// Samples JSON (`{"schema":1,"samples":[...]}` or a bare list).
    #[arg(long)]
    samples: Option<PathBuf>,

    /// Generate samples from the reference transforms instead of reading them.
    #[arg(long)]
    synthetic: bool,

    /// Number of synthetic samples.
    #[arg(long, default_value_t = 200)]
    n: usize,

    /// Standard deviation of synthetic pixel noise per axis.
    #[arg(long, default_value_t = 0.5)]
    noise_px: f64,

    /// Seed for synthetic samples and the perturbed initial guess.
    #[arg(long, default_value_t = 1)]
    seed: u64,

    /// Stereo rig JSON [default: built-in reference rig].
    #[arg(long)]
    rig: Option<PathBuf>,

    /// Initial transforms JSON {t_cam, t_mount, t_mark} [default: reference
    /// transforms, perturbed for --synthetic].
    #[arg(long)]
    init: Option<PathBuf>,

    /// Translation kick applied to each reference transform for a synthetic
    /// run without --init, meters.
    #[arg(long, default_value_t = 0.05)]
    perturb_m: f64,

    /// Rotation kick for a synthetic run without --init, degrees.
    #[arg(long, default_value_t = 5.0)]
    perturb_deg: f64,

    /// Also use samples seen by only one camera.
    #[arg(long)]
    allow_single_side: bool,

    #[arg(long, default_value_t = 100)]
    max_iterations: usize,

    /// Estimate JSON [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,

    /// Write the (synthetic) samples used to this file.
    #[arg(long)]
    save_samples: Option<PathBuf>,
}

#[derive(Serialize)]
struct Effective<'a> {
    samples: Option<&'a PathBuf>,
    synthetic: Option<SyntheticSettings>,
    init: Option<&'a PathBuf>,
    allow_single_side: bool,
    max_iterations: usize,
}

#[derive(Serialize)]
struct SyntheticSettings {
    n: usize,
    noise_px: f64,
    seed: u64,
    perturb_m: f64,
    perturb_deg: f64,
}

pub fn run(a: Args, exec: Execution) -> Result<()> {
    let rig = load_rig(a.rig.as_deref())?;
    let truth = CalibParams::reference();
    let samples = match &a.samples {
        Some(p) => samples_from_json(&read(p)?).with_context(|| format!("loading samples {}", p.display()))?,
        None => generate_synthetic(&truth, &rig, &SyntheticOptions::new(a.n, a.noise_px, a.seed))?,
    };
    if let Some(p) = &a.save_samples {
        emit(Some(p), &samples_to_json(&samples))?;
    }
    let init = match &a.init {
        Some(p) => params_from_json(&read(p)?).with_context(|| format!("loading init {}", p.display()))?,
        None if a.synthetic => {
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed.wrapping_add(1));
            truth.perturbed(a.perturb_m, a.perturb_deg.to_radians(), &mut rng)
        }
        None => truth,
    };
    let opts = SolveOptions {
        max_iterations: a.max_iterations,
        allow_single_side: a.allow_single_side,
        exec,
        ..SolveOptions::default()
    };
    let est = solve(&samples, &rig, &init, &opts)?;
    emit(a.out.as_deref(), &to_json(&est))?;
    if let Some(out) = &a.out {
        let effective = Effective {
            samples: a.samples.as_ref(),
            synthetic: a.synthetic.then_some(SyntheticSettings {
                n: a.n,
                noise_px: a.noise_px,
                seed: a.seed,
                perturb_m: a.perturb_m,
                perturb_deg: a.perturb_deg,
            }),
            init: a.init.as_ref(),
            allow_single_side: a.allow_single_side,
            max_iterations: a.max_iterations,
        };
        write_sidecar(out, "calibrate", &effective)?;
    }
    eprintln!(
        "{} samples, rms {:.4} px after {} iterations",
        samples.len(),
        est.rms_px,
        est.iterations
    );
    if a.synthetic {
        for (name, e, t) in [
            ("t_cam", &est.t_cam, &truth.t_cam),
            ("t_mount", &est.t_mount, &truth.t_mount),
        ] {
            eprintln!(
                "  {name}: {:.4} mm, {:.5} deg from truth",
                e.distance_to(t) * 1e3,
                e.angle_to(t).to_degrees()
            );
        }
        // The marker is a point; only its position is estimated.
        eprintln!(
            "  t_mark: {:.4} mm from truth",
            est.t_mark.distance_to(&truth.t_mark) * 1e3
        );
    }
    if !est.converged {
        bail!("solver stopped after {} iterations without converging", est.iterations);
    }
    Ok(())
}
