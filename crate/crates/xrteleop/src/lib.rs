pub mod bench;
pub mod codec;
pub mod config;
pub mod episode;
pub mod fk_fixtures;
pub mod framing;
pub mod latency;
pub mod netem;
pub mod scripts;
pub mod service;
pub mod session;
pub mod sim_loop;
pub mod stream;
pub mod transport;
pub mod ui;
pub mod urdf;
