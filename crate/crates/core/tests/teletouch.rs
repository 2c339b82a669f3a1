//! Relay and site behavior over real loopback sockets.

use std::io::{Read, Write};
use std::net::TcpStream;
use std::time::{Duration, Instant};

use arraytac::engine::{ClockMode, Engine, EngineConfig, PlatformPose, StaticPose};
use arraytac::teletouch::scan::{grid_scan, scan_trajectory, StiffnessMap, PROBE_QUANTUM_MM};
use arraytac::teletouch::wire::{read_frame, write_frame, Frame, PoseFrame, Role};
use arraytac::teletouch::{start_relay, LocalSite, Phantom, RelayConfig, RemoteConfig, RemoteSite};

fn connect(addr: std::net::SocketAddr, role: Role) -> TcpStream {
    let mut s = TcpStream::connect(addr).unwrap();
    s.set_nodelay(true).unwrap();
    write_frame(&mut s, &Frame::Hello(role)).unwrap();
    s
}

#[test]
fn ping_answered_with_original_timestamp() {
    let relay = start_relay("127.0.0.1:0", RelayConfig::default()).unwrap();
    let mut s = connect(relay.local_addr(), Role::Local);
    let t_us = 0xDEAD_BEEF_0123_4567;
    write_frame(&mut s, &Frame::Ping { t_us }).unwrap();
    assert_eq!(read_frame(&mut s).unwrap(), Frame::Pong { t_us });
    relay.shutdown();
}

#[test]
fn thousand_frames_in_order_without_loss() {
    let relay = start_relay("127.0.0.1:0", RelayConfig::default()).unwrap();
    let mut remote = connect(relay.local_addr(), Role::Remote);
    let mut local = connect(relay.local_addr(), Role::Local);
    // Let both registrations land before sending.
    std::thread::sleep(Duration::from_millis(50));
    let frames: Vec<Frame> = (1..=1000u32)
        .map(|seq| Frame::Pose(PoseFrame { seq, t_us: seq as u64 * 7, x: seq as f32, y: 1.0, z: 2.0 }))
        .collect();
    let writer = std::thread::spawn(move || {
        for f in &frames {
            write_frame(&mut local, f).unwrap();
        }
        local
    });
    for seq in 1..=1000u32 {
        match read_frame(&mut remote).unwrap() {
            Frame::Pose(p) => assert_eq!(p.seq, seq),
            other => panic!("unexpected {other:?}"),
        }
    }
    drop(writer.join().unwrap());
    relay.shutdown();
}

#[test]
fn bad_length_drops_connection() {
    let relay = start_relay("127.0.0.1:0", RelayConfig::default()).unwrap();
    let mut s = connect(relay.local_addr(), Role::Local);
    s.write_all(&[99, 0, 0, 0, 0x03]).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(2))).unwrap();
    let mut buf = [0u8; 8];
    // Closed by the relay: read returns 0 (or a reset).
    assert!(matches!(s.read(&mut buf), Ok(0) | Err(_)));
    relay.shutdown();
}

#[test]
fn injected_delay_shows_in_round_trip() {
    let delay = Duration::from_millis(20);
    let relay = start_relay("127.0.0.1:0", RelayConfig { delay, ..RelayConfig::default() }).unwrap();
    let remote = RemoteSite::connect(relay.local_addr(), Phantom::two_tumor(), RemoteConfig::default()).unwrap();
    let local = LocalSite::connect(relay.local_addr()).unwrap();
    for _ in 0..5 {
        local.ping();
        std::thread::sleep(Duration::from_millis(10));
    }
    assert!(local.wait_for_pongs(5, Duration::from_secs(3)));
    for rtt in local.stats().rtt_us {
        let rtt = rtt as f64 * 1e-6;
        assert!((0.040..0.070).contains(&rtt), "rtt {rtt}");
    }
    local.close();
    remote.close().unwrap();
    relay.shutdown();
}

#[test]
fn loopback_pipeline_latency_and_echoes() {
    let relay = start_relay("127.0.0.1:0", RelayConfig::default()).unwrap();
    let remote = RemoteSite::connect(relay.local_addr(), Phantom::two_tumor(), RemoteConfig::default()).unwrap();
    let mut local = LocalSite::connect(relay.local_addr()).unwrap();
    std::thread::sleep(Duration::from_millis(50));
    let mut engine = Engine::new(EngineConfig::default()).unwrap();
    let mut pose = StaticPose(PlatformPose::new(18.0, 22.0, 2.0));
    let mut last = None;
    engine
        .run(&mut pose, &mut local, Some(0.5), ClockMode::RealTime, |s| {
            last = Some(s.clone());
            true
        })
        .unwrap();
    assert!(local.wait_for_echo(local.last_seq(), Duration::from_secs(1)));
    let stats = local.stats();
    assert!(stats.end_to_end_s.len() > 200);
    assert!(stats.max_end_to_end_s < 0.010, "max {}", stats.max_end_to_end_s);
    assert!(!stats.budget_exceeded());
    assert_eq!(local.unknown_echoes(), 0);
    let snap = last.unwrap();
    assert!(!snap.stale);
    assert_eq!(snap.scene_id, "teletouch");
    // Over the hard inclusion the display renders stiffer than background.
    assert!(snap.units[5].k > 0.8, "{}", snap.units[5].k);
    local.close();
    remote.close().unwrap();
    relay.shutdown();
}

#[test]
fn link_loss_goes_stale_and_holds() {
    let relay = start_relay("127.0.0.1:0", RelayConfig::default()).unwrap();
    let remote = RemoteSite::connect(relay.local_addr(), Phantom::two_tumor(), RemoteConfig::default()).unwrap();
    let mut local = LocalSite::connect(relay.local_addr()).unwrap();
    std::thread::sleep(Duration::from_millis(50));
    let mut engine = Engine::new(EngineConfig::default()).unwrap();
    let mut pose = StaticPose(PlatformPose::new(18.0, 22.0, 2.0));
    engine.run(&mut pose, &mut local, Some(0.2), ClockMode::RealTime, |_| true).unwrap();
    let held = *engine.commands();
    remote.close().unwrap();
    let t = Instant::now();
    let mut last = None;
    engine
        .run(&mut pose, &mut local, Some(0.8), ClockMode::RealTime, |s| {
            last = Some(s.clone());
            true
        })
        .unwrap();
    assert!(t.elapsed() >= Duration::from_millis(700));
    assert!(last.unwrap().stale);
    assert_eq!(*engine.commands(), held);
    local.close();
    relay.shutdown();
}

#[test]
fn scan_through_relay_localizes() {
    let relay = start_relay("127.0.0.1:0", RelayConfig::default()).unwrap();
    let phantom = Phantom::two_tumor();
    let remote = RemoteSite::connect(relay.local_addr(), phantom.clone(), RemoteConfig::default()).unwrap();
    let mut local = LocalSite::connect(relay.local_addr()).unwrap();
    std::thread::sleep(Duration::from_millis(50));
    let points = grid_scan(phantom.extent_mm, 3.0, 2.5);
    let mut traj = scan_trajectory(&points, 0.002, 2.0);
    let mut engine = Engine::new(EngineConfig::default()).unwrap();
    local.set_recording(true);
    engine
        .run(&mut traj, &mut local, Some(points.len() as f64 * 0.002), ClockMode::AsFastAsPossible, |_| true)
        .unwrap();
    assert!(local.wait_for_echo(local.last_seq(), Duration::from_secs(2)));
    let records = local.take_records();
    assert!(records.len() >= points.len());
    let map = StiffnessMap::from_records(&records, PROBE_QUANTUM_MM);
    let found: Vec<(f64, f64)> = map.peaks(2, 12.0).iter().map(|p| (p.0, p.1)).collect();
    let e = arraytac::analysis::localization_error(&found, &phantom.centers_mm()).unwrap();
    assert!(e.per_truth_cm.iter().all(|&d| d < 0.5), "{e:?}");
    local.close();
    remote.close().unwrap();
    relay.shutdown();
}
