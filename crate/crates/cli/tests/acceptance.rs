//! Acceptance suite: one PASS/FAIL line per criterion, with the measured
//! values. Set `SPHEROVIEW_ACCEPTANCE_STRICT=1` to exit non-zero when any
//! criterion fails.

use std::process::Command;
use std::time::Instant;

use nalgebra::{Matrix4, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};
use spheroview::calib::{generate_synthetic, solve, CalibParams, SolveOptions, SyntheticOptions};
use spheroview::camera::{optical_in_body, DoubleSphereIntrinsics, StereoRig};
use spheroview::exec::{worker_threads, Execution};
use spheroview::geom::Pose;
use spheroview::headctl::{filter_coefficient, jump_guard, FilterState, HeadCtlConfig, HeadMapping};
use spheroview::render::{angular_error, angular_error_asymptote, render_stereo, EyeOffsets, RenderConfig};
use spheroview::sim::{estimate_lag, pearson, run_closed_loop, BearingProbe, Capturer, LoopConfig, Scene, Trajectory};
use spheroview::transport::{clock_offset, ClockMsg, Encoding, FrameMsg, Message, PoseMsg, SimulatedLink};

type Criterion<'a> = (&'static str, f64, Box<dyn FnOnce() -> Outcome + 'a>);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    let axis = Vector3::from(UnitSphere.sample(rng));
    let rot = UnitQuaternion::from_scaled_axis(axis * rng.gen_range(0.0..std::f64::consts::PI));
    let t = Vector3::new(
        rng.gen_range(-2.0..2.0),
        rng.gen_range(-2.0..2.0),
        rng.gen_range(-2.0..2.0),
    );
    Pose::new(rot, t)
}

fn matrix(p: &Pose) -> Matrix4<f64> {
    let mut m = p.rotation().to_homogeneous();
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(p.translation());
    m
}

fn eq5_reproduction() -> Outcome {
    let out = Command::new(env!("CARGO_BIN_EXE_spheroview"))
        .args([
            "error-curve",
            "--dx",
            "0.1",
            "--r",
            "1.0",
            "--d-min",
            "0.2",
            "--d-max",
            "3.0",
        ])
        .output()
        .expect("run error-curve");
    if !out.status.success() {
        return outcome(false, format!("error-curve exited with {}", out.status));
    }
    let rows: Vec<(f64, f64)> = String::from_utf8_lossy(&out.stdout)
        .lines()
        .skip(1)
        .map(|l| {
            let (d, g) = l.split_once(',').expect("two columns");
            (d.parse().unwrap(), g.parse().unwrap())
        })
        .collect();
    let at = |d: f64| rows.iter().find(|r| r.0 == d).map(|r| r.1);
    let g1 = at(1.0);
    let g3 = at(3.0).unwrap_or(f64::NAN);
    let asym = angular_error_asymptote(0.1, 1.0).to_degrees();
    let gap = (asym - g3).abs();
    outcome(
        g1 == Some(0.0) && gap <= 0.3,
        format!("gamma(1.0 m) = {g1:?} deg; gamma(3.0 m) = {g3:.4} deg vs asymptote {asym:.4} deg, gap {gap:.3} deg (limit 0.3)"),
    )
}

fn rendered_distortion(probe: &BearingProbe) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for d in [0.3, 0.5, 2.0, 3.0] {
        match probe.translation_error(d, 0.1, 1.0, Execution::default()) {
            Ok(e) => {
                let diff = (e - angular_error(d, 0.1, 1.0)).abs().to_degrees();
                worst = worst.max(diff);
                parts.push(format!("d={d}: {:+.3} deg", e.to_degrees()));
            }
            Err(e) => return outcome(false, format!("d={d}: {e}")),
        }
    }
    outcome(
        worst < 0.2,
        format!("{}; worst deviation {worst:.4} deg (limit 0.2)", parts.join(", ")),
    )
}

fn rotation_invariance(probe: &BearingProbe) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for d in [0.3, 1.0, 3.0] {
        for _ in 0..5 {
            let dir = Vector3::new(rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8), 1.0).normalize();
            let target = dir * d;
            let aim = UnitQuaternion::rotation_between(&Vector3::z(), &dir).unwrap_or_else(UnitQuaternion::identity);
            let off = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0).normalize();
            let tilt = UnitQuaternion::from_scaled_axis(off * rng.gen_range(0.0..25f64.to_radians()));
            let roll = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), rng.gen_range(-3.1..3.1));
            let view = Pose::from_rotation(aim * tilt * roll);
            match probe.rotation_error(&target, &view, 1.0, Execution::default()) {
                Ok(e) => worst = worst.max(e.to_degrees()),
                Err(e) => return outcome(false, format!("d={d}: {e}")),
            }
            n += 1;
        }
    }
    outcome(
        worst < 0.05,
        format!("{n} random rotations; worst bearing error {worst:.4} deg (limit 0.05)"),
    )
}

fn calibration_recovery() -> Outcome {
    let rig = StereoRig::default_rig();
    let truth = CalibParams::reference();
    let opts = SolveOptions::default();
    let samples = generate_synthetic(&truth, &rig, &SyntheticOptions::new(200, 0.0, 1)).unwrap();
    let init = truth.perturbed(0.05, 5f64.to_radians(), &mut ChaCha8Rng::seed_from_u64(2));
    let est = match solve(&samples, &rig, &init, &opts) {
        Ok(e) => e,
        Err(e) => return outcome(false, format!("noiseless solve failed: {e}")),
    };
    let pos = [
        est.t_cam.distance_to(&truth.t_cam),
        est.t_mount.distance_to(&truth.t_mount),
        est.t_mark.distance_to(&truth.t_mark),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    let ang = est
        .t_cam
        .angle_to(&truth.t_cam)
        .max(est.t_mount.angle_to(&truth.t_mount))
        .to_degrees();
    let noiseless_ok = est.converged && pos < 1e-4 && ang < 0.01;

    let mut errors = Vec::new();
    let mut rms = Vec::new();
    for seed in 0..20u64 {
        let samples = generate_synthetic(&truth, &rig, &SyntheticOptions::new(200, 0.5, 100 + seed)).unwrap();
        let init = truth.perturbed(0.05, 5f64.to_radians(), &mut ChaCha8Rng::seed_from_u64(200 + seed));
        match solve(&samples, &rig, &init, &opts) {
            Ok(e) => {
                errors.push(
                    [
                        e.t_cam.distance_to(&truth.t_cam),
                        e.t_mount.distance_to(&truth.t_mount),
                        e.t_mark.distance_to(&truth.t_mark),
                    ]
                    .into_iter()
                    .fold(0.0, f64::max),
                );
                rms.push(e.rms_px);
            }
            Err(e) => return outcome(false, format!("noisy seed {seed}: {e}")),
        }
    }
    errors.sort_by(f64::total_cmp);
    let median = 0.5 * (errors[9] + errors[10]);
    let (lo, hi) = rms
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
    let noisy_ok = median < 2e-3 && lo >= 0.35 && hi <= 0.65;
    outcome(
        noiseless_ok && noisy_ok,
        format!(
            "noiseless: max translation error {pos:.2e} m, max rotation error {ang:.2e} deg; \
             0.5 px noise over 20 seeds: median translation error {:.3} mm, rms_px in [{lo:.3}, {hi:.3}]",
            median * 1e3
        ),
    )
}

fn double_sphere_round_trips() -> Outcome {
    let rig = StereoRig::default_rig();
    let intr = rig.left;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut dir_worst, mut px_worst) = (0.0f64, 0.0f64);
    let mut n = 0;
    while n < 10_000 {
        let d = Vector3::from(UnitSphere.sample(&mut rng));
        let p = intr.project(&d).unwrap();
        if p.valid {
            let back = intr.unproject(&p.pixel);
            dir_worst = dir_worst.max(if back.valid {
                back.direction.angle(&d)
            } else {
                f64::INFINITY
            });
            n += 1;
        }
    }
    // Rays on the rim of the valid unprojection region can fall just outside
    // the projection's validity test; those are counted, not compared.
    n = 0;
    let mut rim = 0;
    while n < 10_000 {
        let px = Vector2::new(
            rng.gen_range(0.0..intr.width as f64),
            rng.gen_range(0.0..intr.height as f64),
        );
        let u = intr.unproject(&px);
        if u.valid {
            let p = intr.project(&u.direction).unwrap();
            if p.valid {
                px_worst = px_worst.max((p.pixel - px).norm());
                n += 1;
            } else {
                rim += 1;
            }
        }
    }
    let pin = DoubleSphereIntrinsics::pinhole(420.0, 800, 600);
    let mut pin_worst = 0.0f64;
    for _ in 0..10_000 {
        let p = Vector3::new(
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(0.1..5.0),
        );
        let got = pin.project(&p).unwrap().pixel;
        let want = Vector2::new(420.0 * p.x / p.z + 400.0, 420.0 * p.y / p.z + 300.0);
        pin_worst = pin_worst.max((got - want).norm());
    }
    outcome(
        dir_worst < 1e-6 && px_worst < 1e-6 && pin_worst < 1e-9,
        format!(
            "direction round trip {dir_worst:.2e} rad, pixel round trip {px_worst:.2e} px ({rim} rim pixels skipped), \
             pinhole limit {pin_worst:.2e} px"
        ),
    )
}

fn head_mapping_and_filter() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut oracle_worst = 0.0f64;
    let mut fixed_worst = 0.0f64;
    for _ in 0..200 {
        let nominal_vr = random_pose(&mut rng);
        let flat_vr = Pose::new(
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), rng.gen_range(-3.0..3.0))
                * UnitQuaternion::from_axis_angle(&Vector3::x_axis(), rng.gen_range(-1.0..1.0)),
            *nominal_vr.translation(),
        );
        let m = match HeadMapping::capture(random_pose(&mut rng), &flat_vr) {
            Ok(m) => m,
            Err(e) => return outcome(false, format!("capture failed: {e}")),
        };
        let at_nominal = m.map_head(&m.t_vr_nom);
        fixed_worst = fixed_worst.max(
            at_nominal
                .distance_to(&m.t_robot_nom)
                .max(at_nominal.angle_to(&m.t_robot_nom)),
        );
        let head = random_pose(&mut rng);
        let oracle = matrix(&m.t_robot_nom) * matrix(&m.t_vr_nom).try_inverse().unwrap() * matrix(&head);
        oracle_worst = oracle_worst.max((oracle - matrix(&m.map_head(&head))).abs().max());
    }
    let a = filter_coefficient(100.0, 1.0 / 90.0);
    let coefficient_ok = (a - 0.87469).abs() <= 1e-5;

    let cfg = HeadCtlConfig::default();
    let mut s = FilterState::default();
    jump_guard(&mut s, &Pose::identity(), 0.01, &cfg);
    let mut violations = 0;
    for _ in 0..100_000 {
        let dt = rng.gen_range(0.001..0.05);
        let target = random_pose(&mut rng);
        let before = s.current;
        let (after, _) = jump_guard(&mut s, &target, dt, &cfg);
        if before.distance_to(&after) > cfg.v_max * dt * (1.0 + 1e-9)
            || before.angle_to(&after) > cfg.omega_max * dt * (1.0 + 1e-6) + 1e-9
        {
            violations += 1;
        }
    }
    outcome(
        fixed_worst < 1e-9 && oracle_worst < 1e-9 && coefficient_ok && violations == 0,
        format!(
            "fixed point {fixed_worst:.1e}, matrix oracle {oracle_worst:.1e}; filter coefficient {a:.6} vs 0.87469 +- 1e-5 \
             ({}); cap violations {violations} in 1e5 steps",
            if coefficient_ok { "ok" } else { "outside tolerance" }
        ),
    )
}

fn latency_accounting() -> Outcome {
    let cfg = LoopConfig::default();
    let tick = 1.0 / cfg.control_hz;
    let trace = match run_closed_loop(
        &Scene::lab(),
        &Trajectory::sweep(),
        &StereoRig::default_rig(),
        &cfg,
        None,
        Execution::default(),
    ) {
        Ok(t) => t,
        Err(e) => return outcome(false, e.to_string()),
    };
    let budget_ms = cfg.latency.total_ms();
    let mean = trace.latency().mean_s;
    let v_op = trace.column(|r| r.v_op_mps);
    let v_rob = trace.column(|r| r.v_rob_mps);
    let lag = estimate_lag(&v_op, &v_rob, cfg.control_hz, 0.5).unwrap_or(f64::NAN);
    let constructed = cfg.robot.command_delay_s + cfg.robot.report_delay_s;
    outcome(
        (mean - 0.040).abs() <= tick && (lag - constructed).abs() <= tick && budget_ms == 40.0,
        format!(
            "budget {budget_ms} ms, mean frame latency {:.2} ms (40 +- {:.0}); lag {:.2} ms vs constructed {:.0} ms (+- 1 sample)",
            mean * 1e3,
            tick * 1e3,
            lag * 1e3,
            constructed * 1e3
        ),
    )
}

fn deviation_velocity_correlation() -> Outcome {
    let trace = match run_closed_loop(
        &Scene::lab(),
        &Trajectory::dynamic(1, 20.0),
        &StereoRig::default_rig(),
        &LoopConfig::default(),
        None,
        Execution::default(),
    ) {
        Ok(t) => t,
        Err(e) => return outcome(false, e.to_string()),
    };
    match pearson(&trace.column(|r| r.v_op_mps), &trace.column(|r| r.ds_m)) {
        Ok(c) => outcome(c > 0.8, format!("pearson(|v_op|, ds) = {c:.4} (limit 0.8)")),
        Err(e) => outcome(false, e.to_string()),
    }
}

fn performance() -> Outcome {
    let rig = StereoRig::default_rig();
    let scene = Scene::lab();
    let t_rig = Pose::from_translation(Vector3::new(0.0, 0.0, 1.2)) * Pose::from_rotation(optical_in_body());
    let left = Capturer::new(&rig.left).capture(&scene, &t_rig, Execution::default());
    let right = Capturer::new(&rig.right).capture(&scene, &(t_rig * rig.t_l_r), Execution::default());
    let cfg = RenderConfig::default();
    let offsets = EyeOffsets::matching_rig(&rig);
    let frames = 300;
    let start = Instant::now();
    for k in 0..frames {
        let s = k as f64 / frames as f64;
        let head = t_rig * Pose::from_translation(Vector3::new(0.05 * s, -0.03 * s, 0.02));
        if let Err(e) = render_stereo(&left, &right, &rig, &t_rig, &head, &offsets, &cfg, Execution::default()) {
            return outcome(false, e.to_string());
        }
    }
    let mean_ms = start.elapsed().as_secs_f64() * 1e3 / frames as f64;
    outcome(
        mean_ms <= 11.0,
        format!(
            "mean render_stereo {mean_ms:.2} ms over {frames} frames at {}x{} per eye (limit 11 ms on an 8-core desktop)",
            cfg.out_width, cfg.out_height
        ),
    )
}

fn random_message(rng: &mut ChaCha8Rng) -> Message {
    match rng.gen_range(0..5) {
        0 => {
            let (w, h) = (rng.gen_range(0..8u16), rng.gen_range(0..8u16));
            let raw = rng.gen::<bool>();
            let mut payload = vec![
                0;
                if raw {
                    w as usize * h as usize * 3
                } else {
                    rng.gen_range(0..64)
                }
            ];
            rng.fill_bytes(&mut payload);
            Message::Frame(FrameMsg {
                capture_timestamp_ns: rng.gen(),
                camera_id: rng.gen(),
                encoding: if raw { Encoding::RawRgb8 } else { Encoding::Jpeg },
                width: w,
                height: h,
                payload,
            })
        }
        1 => {
            let mut pose = [0.0; 7];
            for v in &mut pose {
                *v = f64::from_bits(rng.gen());
            }
            Message::Pose(PoseMsg {
                timestamp_ns: rng.gen(),
                frame_id: rng.gen(),
                pose,
            })
        }
        2 => Message::ClockPing(ClockMsg {
            t1: rng.gen(),
            t2: rng.gen(),
            t3: rng.gen(),
        }),
        3 => Message::ClockPong(ClockMsg {
            t1: rng.gen(),
            t2: rng.gen(),
            t3: rng.gen(),
        }),
        _ => Message::ConfigUpdate(serde_json::json!({ "r": rng.gen_range(0.2..5.0) })),
    }
}

fn transport_conformance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut mismatches = 0;
    for _ in 0..100_000 {
        let bytes = random_message(&mut rng).encode().unwrap();
        match Message::decode(&bytes).and_then(|m| m.encode()) {
            Ok(again) if again == bytes => {}
            _ => mismatches += 1,
        }
    }
    let skew = 25_000_000i64;
    let mut worst_excess = i64::MIN;
    for seed in 0..20 {
        let mut link = SimulatedLink::new(skew, (200_000, 3_000_000), (200_000, 3_000_000), seed);
        let est = clock_offset(&mut link, 8).unwrap();
        worst_excess = worst_excess.max((est.offset_ns - skew).abs() - est.rtt_ns / 2);
    }
    outcome(
        mismatches == 0 && worst_excess <= 0,
        format!(
            "1e5 fuzzed messages, {mismatches} mismatches; 25 ms skew over 20 links, worst |error| - RTT/2 = {:.3} ms",
            worst_excess as f64 * 1e-6
        ),
    )
}

fn machine_info() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    let cores = std::thread::available_parallelism().map_or(0, |n| n.get());
    format!(
        "{cpu}; {cores} logical cores; {} worker threads; {}/{}",
        worker_threads(),
        std::env::consts::OS,
        std::env::consts::ARCH
    )
}

fn main() {
    println!("acceptance suite on {}", machine_info());
    let probe = BearingProbe::new(&StereoRig::default_rig().left, RenderConfig::default());
    let criteria: Vec<Criterion> = vec![
        ("error curve reproduction", 1.0, Box::new(eq5_reproduction)),
        (
            "analytic vs rendered distortion",
            10.0,
            Box::new(|| rendered_distortion(&probe)),
        ),
        ("rotation invariance", 10.0, Box::new(|| rotation_invariance(&probe))),
        ("calibration recovery", 60.0, Box::new(calibration_recovery)),
        ("double-sphere round trips", 5.0, Box::new(double_sphere_round_trips)),
        ("head mapping and filter", 10.0, Box::new(head_mapping_and_filter)),
        ("latency accounting", 30.0, Box::new(latency_accounting)),
        (
            "deviation-velocity correlation",
            30.0,
            Box::new(deviation_velocity_correlation),
        ),
        ("render performance", f64::INFINITY, Box::new(performance)),
        ("transport conformance", f64::INFINITY, Box::new(transport_conformance)),
    ];
    let total = criteria.len();
    let mut failed = 0;
    for (name, budget_s, run) in criteria {
        let start = Instant::now();
        let o = run();
        let secs = start.elapsed().as_secs_f64();
        let in_time = secs <= budget_s;
        let pass = o.pass && in_time;
        if !pass {
            failed += 1;
        }
        let timing = if budget_s.is_finite() {
            format!(
                "{secs:.2} s of {budget_s:.0} s{}",
                if in_time { "" } else { ", over budget" }
            )
        } else {
            format!("{secs:.2} s")
        };
        println!("{} {name}: {} [{timing}]", if pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} of {total} criteria passed", total - failed);
    if failed > 0 && std::env::var("SPHEROVIEW_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
