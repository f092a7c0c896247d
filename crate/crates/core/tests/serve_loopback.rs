use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use spheroview::camera::StereoRig;
use spheroview::exec::Execution;
use spheroview::sim::{run_live_session, LiveOptions, LoopConfig, Scene};
use spheroview::transport::{
    clock_offset, frames, latency_report, now_ns, Carrier, CarrierClock, Encoding, Message, PoseMsg, Server,
    TcpCarrier, WsCarrier,
};

fn start(skew_ns: i64) -> (SocketAddr, Arc<AtomicBool>) {
    let server = Server::bind("127.0.0.1:0", None).unwrap();
    let addr = server.local_addr().unwrap();
    let stop = server.shutdown_handle();
    let cfg = LoopConfig {
        capture_scale: 0.1,
        ..LoopConfig::default()
    };
    let opts = LiveOptions {
        frame_size: 96,
        clock_skew_ns: skew_ns,
        max_duration: Some(Duration::from_secs(20)),
        ..LiveOptions::default()
    };
    thread::spawn(move || {
        server
            .run(move |mut carrier| {
                let rig = StereoRig::default_rig();
                run_live_session(carrier.as_mut(), Scene::lab(), &rig, &cfg, opts, Execution::default()).unwrap();
            })
            .unwrap()
    });
    (addr, stop)
}

fn collect_frames(c: &mut dyn Carrier, n: usize) -> Vec<(u64, u64)> {
    let head = PoseMsg::from_pose(now_ns(), frames::VR_HEAD, &spheroview::sim::trajectory::operator_rest());
    c.send(&Message::Pose(head)).unwrap();
    let deadline = Instant::now() + Duration::from_secs(15);
    let mut out = Vec::new();
    let mut robot_poses = 0;
    while out.len() < n && Instant::now() < deadline {
        match c.recv(Duration::from_millis(100)).unwrap() {
            Some(Message::Frame(f)) => {
                assert_eq!(f.encoding, Encoding::Jpeg);
                assert_eq!((f.width, f.height), (96, 96));
                if f.camera_id == 0 {
                    out.push((f.capture_timestamp_ns, now_ns()));
                }
            }
            Some(Message::Pose(p)) => {
                assert_eq!(p.frame_id, frames::ROBOT_HEAD);
                p.to_pose().unwrap();
                robot_poses += 1;
            }
            _ => {}
        }
    }
    assert_eq!(out.len(), n, "timed out waiting for frames");
    assert!(robot_poses > 0);
    out
}

#[test]
fn tcp_session_streams_frames_with_skew_corrected_latency() {
    let skew = 25_000_000;
    let (addr, stop) = start(skew);
    let mut c = TcpCarrier::connect(addr).unwrap();
    let est = clock_offset(&mut CarrierClock::new(&mut c, Duration::from_secs(5)), 8).unwrap();
    assert!((est.offset_ns - skew).abs() <= est.rtt_ns / 2 + 1_000_000, "{est:?}");
    let frames = collect_frames(&mut c, 5);
    // The estimate is server minus client; the report wants display (client)
    // minus capture (server).
    let report = latency_report(&frames, -est.offset_ns);
    assert_eq!(report.anomalies, 0);
    // Frames leave the server once their modeled display time has passed.
    assert!(report.mean_s >= 0.039, "{report:?}");
    assert!(report.mean_s < 1.0, "{report:?}");
    stop.store(true, Ordering::Relaxed);
}

#[test]
fn websocket_session_accepts_config_updates() {
    let (addr, stop) = start(0);
    let mut c = WsCarrier::connect(addr).unwrap();
    let est = clock_offset(&mut CarrierClock::new(&mut c, Duration::from_secs(5)), 8).unwrap();
    assert!(est.offset_ns.abs() < 1_000_000, "{est:?}");
    c.send(&Message::ConfigUpdate(serde_json::json!({"r": 2.0}))).unwrap();
    c.send(&Message::ConfigUpdate(serde_json::json!({"rezero": true})))
        .unwrap();
    collect_frames(&mut c, 3);
    stop.store(true, Ordering::Relaxed);
}
