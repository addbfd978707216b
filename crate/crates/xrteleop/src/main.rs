use std::error::Error;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand};

use xrteleop::bench::{run_latency_bench, BenchOptions};
use xrteleop::config::load_config;
use xrteleop::fk_fixtures::fk_fixtures_text;
use xrteleop::netem::NetworkEmulation;
use xrteleop::scripts::{generate, Script};
use xrteleop::service::{ServeOptions, Service};
use xrteleop::session::{load_session, save_session, SessionWriter};
use xrteleop::sim_loop::run_session;
use xrteleop::stream::{publish, subscribe, PublisherConfig, SubscriberConfig};
use xrteleop::transport::Transport;

type AnyResult<T> = Result<T, Box<dyn Error>>;

/// XR teleoperation kernel: tracking streams, IK, and a simulated robot.
#[derive(Parser)]
#[command(name = "xrteleop", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the simulated robot, driven by live tracking packets.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Address for the robot state stream; clients may also send tracking packets on it.
        #[arg(long, default_value = "127.0.0.1:9870")]
        listen: String,
        #[arg(long, default_value = "ws")]
        transport: Transport,
        /// Upstream tracking publisher to subscribe to.
        #[arg(long)]
        tracking: Option<String>,
        #[arg(long, default_value = "tcp")]
        tracking_transport: Transport,
        /// Emulated link applied to incoming tracking, e.g. `delay=5..15ms,drop=0.1,seed=1`.
        #[arg(long)]
        emulate: Option<NetworkEmulation>,
        /// Write an episode file on exit.
        #[arg(long)]
        record: Option<PathBuf>,
        /// Serve the browser client from this directory.
        #[arg(long)]
        ui: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        ui_addr: String,
        /// Stop after this many seconds.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Publish a recorded session as a live tracking stream.
    Replay {
        session: PathBuf,
        #[arg(long, default_value = "127.0.0.1:9871")]
        listen: String,
        #[arg(long, default_value = "tcp")]
        transport: Transport,
        #[arg(long, default_value_t = 90.0)]
        rate: f64,
        /// Start over when the session ends.
        #[arg(long = "loop")]
        repeat: bool,
    },
    /// Subscribe to a tracking stream and save it as a session file.
    Record {
        /// Publisher address.
        addr: String,
        #[arg(long, default_value = "tcp")]
        transport: Transport,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        duration: f64,
    },
    /// Measure one-way latency over a loopback link.
    BenchLatency {
        #[arg(long)]
        emulate: Option<NetworkEmulation>,
        #[arg(long, default_value = "tcp")]
        transport: Transport,
        #[arg(long, default_value_t = 90.0)]
        rate: f64,
        #[arg(long, default_value_t = 900)]
        packets: u64,
    },
    /// Write a scripted tracking session.
    GenSession {
        #[arg(long)]
        script: Script,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 90.0)]
        rate: f64,
        /// Length in seconds; the square always runs to completion.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Write forward-kinematics fixtures for the browser client.
    ExportFkFixtures {
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a session through the controller offline and write a JSON-lines trace.
    RunSession {
        session: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        emulate: Option<NetworkEmulation>,
        /// Also write the run as an episode file.
        #[arg(long)]
        episode: Option<PathBuf>,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse().command) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(cmd: Command) -> AnyResult<()> {
    match cmd {
        Command::Serve { config, listen, transport, tracking, tracking_transport, emulate, record, ui, ui_addr, duration } => {
            let service = Service::start(ServeOptions {
                config: load_config(&config)?,
                state_bind: listen,
                state_transport: transport,
                tracking: tracking.map(|a| SubscriberConfig::new(a, tracking_transport)),
                emulation: emulate,
                record,
                ui: ui.map(|d| (d, ui_addr)),
                duration: duration.map(Duration::from_secs_f64),
            })?;
            log::info!("state stream on {}", service.state_addr());
            if let Some(a) = service.ui_addr() {
                log::info!("browser client on http://{a}/");
            }
            let s = service.wait()?;
            println!(
                "ticks={} fresh={} stale={} lost={} failures={} episode_frames={}",
                s.ticks, s.fresh_packets, s.stale_dropped, s.emulated_lost, s.step_failures, s.episode_frames
            );
        }
        Command::Replay { session, listen, transport, rate, repeat } => {
            let packets = load_session(&session)?;
            if packets.is_empty() {
                return Err("session is empty".into());
            }
            let mut i = 0usize;
            let publisher = publish(
                move || {
                    if i == packets.len() && repeat {
                        i = 0;
                    }
                    let p = packets.get(i).cloned();
                    i += 1;
                    p
                },
                &PublisherConfig::new(listen, transport, rate),
            )?;
            log::info!("replaying on {}", publisher.local_addr());
            while !publisher.wait_finished(Duration::from_secs(1)) {}
            println!("published={}", publisher.published());
        }
        Command::Record { addr, transport, out, duration } => {
            let writer = Arc::new(Mutex::new(SessionWriter::create(&out)?));
            let failed = Arc::new(AtomicBool::new(false));
            let sink = writer.clone();
            let flag = failed.clone();
            let sub = subscribe(
                SubscriberConfig::new(addr, transport),
                move |p| {
                    if let Err(e) = sink.lock().unwrap().write(&p) {
                        log::error!("write failed: {e}");
                        flag.store(true, Ordering::Relaxed);
                    }
                },
                |e| log::warn!("{e}"),
            )?;
            let end = Instant::now() + Duration::from_secs_f64(duration);
            while Instant::now() < end && !failed.load(Ordering::Relaxed) {
                std::thread::sleep(Duration::from_millis(50));
            }
            let delivered = sub.delivered();
            sub.join();
            let writer = Arc::try_unwrap(writer).map_err(|_| "recorder still in use")?.into_inner().unwrap();
            writer.finish()?;
            println!("recorded={delivered}");
        }
        Command::BenchLatency { emulate, transport, rate, packets } => {
            let mut opts = BenchOptions::new(transport, rate, packets);
            opts.emulation = emulate;
            let report = run_latency_bench(&opts)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::GenSession { script, out, rate, duration } => {
            let s = generate(script, rate, duration);
            save_session(&out, &s.packets)?;
            println!("packets={}", s.packets.len());
        }
        Command::ExportFkFixtures { out } => write_file(&out, fk_fixtures_text().as_bytes())?,
        Command::RunSession { session, config, trace, emulate, episode } => {
            let loaded = load_config(&config)?;
            let packets = load_session(&session)?;
            let run = run_session(&packets, &loaded, emulate);
            let mut w = BufWriter::new(File::create(&trace)?);
            run.write_trace(&mut w)?;
            w.flush()?;
            if let Some(path) = episode {
                run.to_episode(&loaded.task, &loaded.robot, &loaded.teleop)?.save(&path)?;
            }
            println!("ticks={} lost={} superseded={}", run.ticks.len(), run.lost, run.superseded);
        }
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> AnyResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, bytes)?;
    Ok(())
}
