use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::Duration;

use spheroview::camera::StereoRig;
use spheroview::exec::Execution;
use spheroview::geom::Pose;
use spheroview::sim::{capture, Scene};
use spheroview::transport::{clock_offset, Carrier, CarrierClock, Message, TcpCarrier};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spheroview"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn error_curve_is_zero_at_the_sphere_radius() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["error-curve", "--dx", "0.1", "--r", "1.0"], dir.path());
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("d_m,gamma_deg"));
    let row = lines.find(|l| l.starts_with("1,")).expect("d = 1.0 row");
    assert_eq!(row, "1,0");
    assert_eq!(text.lines().count(), 51);
}

#[test]
fn synthetic_noiseless_calibration_converges() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &[
            "calibrate",
            "--synthetic",
            "--noise-px",
            "0",
            "--seed",
            "1",
            "--out",
            "est.json",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let est: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("est.json")).unwrap()).unwrap();
    assert_eq!(est["schema"], 1);
    assert_eq!(est["converged"], true);
    assert!(est["rms_px"].as_f64().unwrap() < 1e-6);
    let side: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("est.config.json")).unwrap()).unwrap();
    assert_eq!(side["command"], "calibrate");
    assert_eq!(side["effective"]["synthetic"]["seed"], 1);
}

#[test]
fn calibration_from_files_matches_synthetic_run() {
    let dir = tempfile::tempdir().unwrap();
    let a = run(
        &[
            "calibrate",
            "--synthetic",
            "--n",
            "80",
            "--seed",
            "4",
            "--save-samples",
            "s.json",
        ],
        dir.path(),
    );
    assert!(a.status.success());
    let b = run(&["calibrate", "--samples", "s.json"], dir.path());
    assert!(b.status.success(), "{}", String::from_utf8_lossy(&b.stderr));
    let est: serde_json::Value = serde_json::from_slice(&b.stdout).unwrap();
    assert_eq!(est["converged"], true);
    assert!((0.35..0.65).contains(&est["rms_px"].as_f64().unwrap()));
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["calibrate"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage:"));
    assert_eq!(run(&["no-such-command"], dir.path()).status.code(), Some(1));
    assert_eq!(
        run(&["simulate", "--frame-every", "0"], dir.path()).status.code(),
        Some(1)
    );
    assert_eq!(run(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["calibrate", "--samples", "missing.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.json"));
    std::fs::write(dir.path().join("bad.json"), r#"{"headctl":{"fc":1}}"#).unwrap();
    assert_eq!(
        run(&["simulate", "--config", "bad.json"], dir.path()).status.code(),
        Some(2)
    );
    assert_eq!(
        run(&["error-curve", "--d-min", "3", "--d-max", "1"], dir.path())
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn simulate_is_reproducible_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let args = |m: &str, s: &str| {
        vec![
            "simulate".to_string(),
            "--duration-s".into(),
            "3".into(),
            "--seed".into(),
            "5".into(),
            "--metrics".into(),
            m.into(),
            "--summary".into(),
            s.into(),
        ]
    };
    for (m, s) in [("a.csv", "a.json"), ("b.csv", "b.json")] {
        let o = bin().args(args(m, s)).current_dir(dir.path()).output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let read = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    assert_eq!(read("a.json"), read("b.json"));
    let header = String::from_utf8(read("a.csv")).unwrap();
    assert!(header.starts_with("t_s,ds_m,v_op_mps,v_rob_mps,frame_latency_s\n"));
    let side: serde_json::Value = serde_json::from_slice(&read("a.config.json")).unwrap();
    assert_eq!(side["effective"]["config"]["schema"], 1);
    assert_eq!(side["effective"]["seed"], 5);
}

#[test]
fn simulate_writes_frames() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("cfg.json"),
        r#"{"render":{"out_width":64,"out_height":64},"sim":{"capture_scale":0.1}}"#,
    )
    .unwrap();
    let o = run(
        &[
            "simulate",
            "--trajectory",
            "sweep",
            "--config",
            "cfg.json",
            "--frames",
            "eyes",
            "--frame-every",
            "30",
            "--summary",
            "s.json",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let pngs = std::fs::read_dir(dir.path().join("eyes")).unwrap().count();
    assert!(pngs >= 4, "{pngs}");
    let img = image::open(dir.path().join("eyes/eye_00000_left.png")).unwrap();
    assert_eq!((img.width(), img.height()), (64, 64));
}

#[test]
fn render_reprojects_a_captured_frame() {
    let dir = tempfile::tempdir().unwrap();
    let rig = StereoRig::default_rig();
    let cam = Pose::from_rotation(spheroview::camera::optical_in_body());
    let t_world_cam = Pose::from_translation(nalgebra::Vector3::new(0.0, 0.0, 1.2)).compose(&cam);
    let frame = capture(&Scene::lab(), &t_world_cam, &rig.left, Execution::default());
    frame.save(dir.path().join("frame.png")).unwrap();
    std::fs::write(dir.path().join("eye.json"), r#"{"q":[1,0,0,0],"t":[0.05,0,0]}"#).unwrap();
    let o = run(
        &[
            "render",
            "--frame",
            "frame.png",
            "--eye-pose",
            "eye.json",
            "--width",
            "120",
            "--height",
            "100",
            "--out",
            "o.png",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let img = image::open(dir.path().join("o.png")).unwrap().to_rgb8();
    assert_eq!((img.width(), img.height()), (120, 100));
    assert!(img.pixels().any(|p| p.0 != [0, 0, 0]));
    assert!(dir.path().join("o.config.json").exists());

    // A frame of the wrong size is a runtime error.
    image::RgbImage::new(10, 10).save(dir.path().join("small.png")).unwrap();
    let o = run(&["render", "--frame", "small.png", "--out", "x.png"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn serve_answers_on_the_port_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("cfg.json"),
        r#"{"serve":{"frame_size":64},"sim":{"capture_scale":0.1}}"#,
    )
    .unwrap();
    let mut child = bin()
        .args([
            "serve",
            "--config",
            "cfg.json",
            "--clock-skew-ms",
            "25",
            "--session-limit-s",
            "10",
        ])
        .env("SPHEROVIEW_PORT", "0")
        .env("RUST_LOG", "info")
        .current_dir(dir.path())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
    let addr = loop {
        let line = lines.next().expect("server exited").unwrap();
        if let Some(rest) = line.split("listening on ").nth(1) {
            break rest.trim().to_string();
        }
    };
    std::thread::spawn(move || for _ in lines {});
    let mut c = TcpCarrier::connect(addr.as_str()).unwrap();
    let est = clock_offset(&mut CarrierClock::new(&mut c, Duration::from_secs(5)), 8).unwrap();
    assert!(
        (est.offset_ns - 25_000_000).abs() <= est.rtt_ns / 2 + 1_000_000,
        "{est:?}"
    );
    let mut got_frame = false;
    for _ in 0..100 {
        if let Some(Message::Frame(f)) = c.recv(Duration::from_millis(100)).unwrap() {
            assert_eq!((f.width, f.height), (64, 64));
            got_frame = true;
            break;
        }
    }
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(got_frame);
}
