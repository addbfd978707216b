//! Static file server for the browser client plus a small JSON API.
//!
//! Routes: `/api/config` (state stream location and robot description),
//! `/api/schema` (tracking packet schema), `/api/fk-fixtures`, and anything
//! else from the static directory, with `/` mapped to `index.html`.

use std::fs;
use std::io::Cursor;
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde_json::Value;
use tiny_http::{Header, Request, Response, Server};

pub const PACKET_SCHEMA: &str = include_str!("../assets/schema/tracking_packet.schema.json");

pub struct UiServer {
    addr: std::net::SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl UiServer {
    /// Serve `root` and `config` (returned verbatim from `/api/config`) on `bind`.
    pub fn start(bind: &str, root: PathBuf, config: Value) -> std::io::Result<Self> {
        let server = Server::http(bind).map_err(|e| std::io::Error::other(e.to_string()))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("UI server is not bound to an IP address"))?;
        let stop = Arc::new(AtomicBool::new(false));
        let thread = {
            let stop = stop.clone();
            let config = serde_json::to_vec(&config).expect("plain JSON");
            let fk = crate::fk_fixtures::fk_fixtures_text().into_bytes();
            thread::Builder::new().name("xrteleop-ui".into()).spawn(move || {
                while !stop.load(Ordering::Acquire) {
                    match server.recv_timeout(Duration::from_millis(50)) {
                        Ok(Some(req)) => handle(req, &root, &config, &fk),
                        Ok(None) => {}
                        Err(e) => {
                            log::warn!("UI server: {e}");
                            break;
                        }
                    }
                }
            })?
        };
        Ok(Self { addr, stop, thread: Some(thread) })
    }

    pub fn local_addr(&self) -> std::net::SocketAddr {
        self.addr
    }

    pub fn stop(&mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for UiServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript; charset=utf-8",
        Some("css") => "text/css; charset=utf-8",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        Some("wasm") => "application/wasm",
        Some("urdf" | "xml") => "application/xml",
        _ => "application/octet-stream",
    }
}

fn respond(req: Request, status: u16, ctype: &str, body: Vec<u8>) {
    let header = Header::from_bytes("Content-Type", ctype).expect("static header");
    let resp = Response::new(status.into(), vec![header], Cursor::new(body.clone()), Some(body.len()), None);
    if let Err(e) = req.respond(resp) {
        log::debug!("UI response failed: {e}");
    }
}

/// Map a URL path onto `root`, refusing anything that escapes it.
pub fn resolve_static(root: &Path, url: &str) -> Option<PathBuf> {
    let path = url.split(['?', '#']).next().unwrap_or("");
    let rel = path.trim_start_matches('/');
    let rel = if rel.is_empty() { "index.html" } else { rel };
    let rel = Path::new(rel);
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return None;
    }
    Some(root.join(rel))
}

fn handle(req: Request, root: &Path, config: &[u8], fk: &[u8]) {
    let url = req.url().to_string();
    match url.split('?').next().unwrap_or("") {
        "/api/config" => respond(req, 200, "application/json", config.to_vec()),
        "/api/schema" => respond(req, 200, "application/json", PACKET_SCHEMA.as_bytes().to_vec()),
        "/api/fk-fixtures" => respond(req, 200, "application/json", fk.to_vec()),
        _ => match resolve_static(root, &url) {
            None => respond(req, 403, "text/plain", b"forbidden".to_vec()),
            Some(p) => match fs::read(&p) {
                Ok(body) => respond(req, 200, content_type(&p), body),
                Err(_) => respond(req, 404, "text/plain", b"not found".to_vec()),
            },
        },
    }
}
