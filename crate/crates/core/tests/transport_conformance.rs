use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spheroview::transport::{
    clock_offset, latency_report, ClockMsg, Encoding, FrameMsg, Message, PoseMsg, SimulatedLink, StreamDecoder,
};

fn random_message(rng: &mut ChaCha8Rng) -> Message {
    match rng.gen_range(0..5) {
        0 => {
            let (w, h) = (rng.gen_range(0..8u16), rng.gen_range(0..8u16));
            let encoding = if rng.gen() { Encoding::RawRgb8 } else { Encoding::Jpeg };
            let len = match encoding {
                Encoding::RawRgb8 => w as usize * h as usize * 3,
                Encoding::Jpeg => rng.gen_range(0..64),
            };
            let mut payload = vec![0; len];
            rng.fill_bytes(&mut payload);
            Message::Frame(FrameMsg {
                capture_timestamp_ns: rng.gen(),
                camera_id: rng.gen(),
                encoding,
                width: w,
                height: h,
                payload,
            })
        }
        1 => {
            // Arbitrary bit patterns, NaN payloads included, must survive.
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
        k @ (2 | 3) => {
            let c = ClockMsg {
                t1: rng.gen(),
                t2: rng.gen(),
                t3: rng.gen(),
            };
            if k == 2 {
                Message::ClockPing(c)
            } else {
                Message::ClockPong(c)
            }
        }
        _ => Message::ConfigUpdate(serde_json::json!({ "r": rng.gen_range(0.2..5.0), "rezero": rng.gen::<bool>() })),
    }
}

#[test]
fn fuzzed_messages_round_trip_byte_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut stream = Vec::new();
    let mut encoded = Vec::new();
    for _ in 0..100_000 {
        let m = random_message(&mut rng);
        let bytes = m.encode().unwrap();
        let back = Message::decode(&bytes).unwrap();
        // Compare through the encoding so NaN payloads count as equal.
        assert_eq!(back.encode().unwrap(), bytes);
        stream.extend_from_slice(&bytes);
        encoded.push(bytes);
    }
    // The same bytes split at random points decode to the same sequence.
    let mut dec = StreamDecoder::new();
    let mut out = Vec::new();
    let mut i = 0;
    while i < stream.len() {
        let n = rng.gen_range(1..4096).min(stream.len() - i);
        dec.push(&stream[i..i + n]);
        i += n;
        while let Some(p) = dec.next_packet() {
            out.push(p.unwrap().encode().unwrap());
        }
    }
    assert_eq!(out, encoded);
}

#[test]
fn injected_skew_is_recovered_within_half_rtt() {
    let skew = 25_000_000i64;
    for seed in 0..20 {
        let mut link = SimulatedLink::new(skew, (200_000, 3_000_000), (200_000, 3_000_000), seed);
        let est = clock_offset(&mut link, 8).unwrap();
        assert!((est.offset_ns - skew).abs() <= est.rtt_ns / 2, "seed {seed}: {est:?}");
    }
}

#[test]
fn latency_report_is_epoch_invariant() {
    let frames: Vec<(u64, u64)> = (0..50).map(|k| (k * 22_222_222, k * 22_222_222 + 40_000_000)).collect();
    let shifted: Vec<(u64, u64)> = frames.iter().map(|&(c, d)| (c + (1 << 40), d + (1 << 40))).collect();
    let a = latency_report(&frames, 0);
    let b = latency_report(&shifted, 0);
    assert_eq!(a.mean_s, b.mean_s);
    assert!((a.mean_s - 0.040).abs() < 1e-12);
}
