mod common;

use std::sync::{Arc, Mutex};
use std::thread::sleep;
use std::time::{Duration, Instant};

use serde_json::Value;
use xrteleop::codec::{decode_sim_state, encode_packet};
use xrteleop::episode::Episode;
use xrteleop::scripts::{generate, Script};
use xrteleop::service::{ServeOptions, Service};
use xrteleop::stream::{publish, subscribe_with, PublisherConfig, SubscriberConfig};
use xrteleop::transport::{Connection, Transport};
use xrteleop_core::sim::SimState;
use xrteleop_core::TrackingPacket;

fn options(transport: Transport) -> ServeOptions {
    ServeOptions {
        config: common::demo_config(),
        state_bind: "127.0.0.1:0".into(),
        state_transport: transport,
        tracking: None,
        emulation: None,
        record: None,
        ui: None,
        duration: None,
    }
}

fn watch_state(addr: std::net::SocketAddr, t: Transport) -> (xrteleop::stream::Subscriber, Arc<Mutex<Option<SimState>>>) {
    let latest = Arc::new(Mutex::new(None));
    let sink = latest.clone();
    let sub = subscribe_with(
        SubscriberConfig::new(addr.to_string(), t),
        |b| decode_sim_state(b).map(|s| (s.time_ns, s)),
        move |s| *sink.lock().unwrap() = Some(s),
        |e| panic!("{e}"),
    )
    .unwrap();
    (sub, latest)
}

fn send_paced(conn: &mut Connection, packets: &[TrackingPacket], rate_hz: f64) {
    let start = Instant::now();
    for (i, p) in packets.iter().enumerate() {
        conn.send(&encode_packet(p).unwrap()).unwrap();
        let due = start + Duration::from_secs_f64((i + 1) as f64 / rate_hz);
        sleep(due.saturating_duration_since(Instant::now()));
    }
}

fn http_get(addr: std::net::SocketAddr, path: &str) -> String {
    use std::io::{Read, Write};
    let mut s = std::net::TcpStream::connect(addr).unwrap();
    write!(s, "GET {path} HTTP/1.0\r\n\r\n").unwrap();
    let mut out = String::new();
    s.read_to_string(&mut out).unwrap();
    out.split_once("\r\n\r\n").unwrap().1.to_string()
}

#[test]
fn browser_style_client_drives_the_arm_and_the_run_is_recorded() {
    let dir = std::env::temp_dir().join(format!("xrteleop-serve-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("index.html"), "ok").unwrap();
    let episode = dir.join("run.xrte");
    let mut opts = options(Transport::WebSocket);
    opts.record = Some(episode.clone());
    opts.ui = Some((dir.clone(), "127.0.0.1:0".into()));
    let initial = opts.config.initial["arm"].clone();
    let service = Service::start(opts).unwrap();

    let ui: Value = serde_json::from_str(&http_get(service.ui_addr().unwrap(), "/api/config")).unwrap();
    assert_eq!(ui["state_port"], service.state_addr().port());
    assert_eq!(ui["state_transport"], "websocket");
    assert!(ui["chains"]["arm"].as_str().unwrap().contains("<robot"));

    let (watcher, latest) = watch_state(service.state_addr(), Transport::WebSocket);
    let mut conn = Connection::connect(&service.state_addr().to_string(), Transport::WebSocket, Duration::from_secs(1)).unwrap();
    let started = Instant::now();
    let packets = generate(Script::Square, 90.0, None).packets;
    send_paced(&mut conn, &packets[..270], 90.0);
    sleep(Duration::from_millis(100));
    let elapsed = started.elapsed().as_secs_f64();
    let ticks_seen = service.ticks();
    let summary = service.shutdown().unwrap();
    drop(watcher);

    let expected = elapsed * 90.0;
    assert!((summary.ticks as f64) > expected * 0.9, "{} ticks in {elapsed:.2} s", summary.ticks);
    assert!(summary.ticks >= ticks_seen);
    assert!(summary.fresh_packets >= 240, "{summary:?}");
    assert_eq!(summary.step_failures, 0);
    let state = latest.lock().unwrap().clone().expect("state stream delivered");
    let moved = (state.chains["arm"].as_vector() - initial.as_vector()).norm();
    assert!(moved > 1e-3, "arm did not move");

    let ep = Episode::load(&episode).unwrap();
    let want = summary.ticks as f64 * 50.0 / 90.0;
    assert!((ep.frames.len() as f64 - want).abs() <= 2.0, "{} frames for {} ticks", ep.frames.len(), summary.ticks);
    assert_eq!(ep.meta.rate_hz, 50.0);
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn upstream_tracking_publisher_feeds_the_loop() {
    let packets = generate(Script::Demo, 90.0, None).packets;
    let mut i = 0;
    let upstream = publish(
        move || {
            i += 1;
            packets.get(i - 1).cloned()
        },
        &PublisherConfig::new("127.0.0.1:0", Transport::TcpFramed, 90.0),
    )
    .unwrap();
    let mut opts = options(Transport::TcpFramed);
    opts.tracking = Some(SubscriberConfig::new(upstream.local_addr().to_string(), Transport::TcpFramed));
    opts.emulation = Some("delay=5..15ms,drop=0.1,seed=4".parse().unwrap());
    opts.duration = Some(Duration::from_millis(1500));
    let summary = Service::start(opts).unwrap().wait().unwrap();
    assert!((120..=145).contains(&summary.ticks), "{summary:?}");
    assert!(summary.fresh_packets >= 80, "{summary:?}");
    assert!(summary.emulated_lost > 0, "{summary:?}");
}

#[test]
fn stale_packets_are_dropped_until_the_source_goes_quiet() {
    let service = Service::start(options(Transport::TcpFramed)).unwrap();
    let mut conn = Connection::connect(&service.state_addr().to_string(), Transport::TcpFramed, Duration::from_secs(1)).unwrap();
    let packet = |seq: u64| TrackingPacket { sequence: seq, ..Default::default() };
    let burst = |conn: &mut Connection, seqs: std::ops::Range<u64>| {
        for s in seqs {
            conn.send(&encode_packet(&packet(s)).unwrap()).unwrap();
            sleep(Duration::from_millis(25));
        }
    };
    burst(&mut conn, 100..110);
    burst(&mut conn, 50..55);
    sleep(Duration::from_millis(1200));
    burst(&mut conn, 0..10);
    sleep(Duration::from_millis(50));
    let s = service.shutdown().unwrap();
    assert_eq!(s.fresh_packets, 20, "{s:?}");
    assert_eq!(s.stale_dropped, 5, "{s:?}");
}
