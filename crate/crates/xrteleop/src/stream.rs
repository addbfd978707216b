//! Latest-only streaming of tracking packets and robot state.
//!
//! A [`Publisher`] owns a listening socket and pushes frames to every
//! connected client. Each client has a single-slot mailbox, so a slow reader
//! only ever sees the freshest frame and never blocks the producer or other
//! clients. A [`Subscriber`] connects to a publisher, decodes on a reader
//! thread, drops out-of-order frames, and hands the latest item to a callback
//! thread.

use std::io::{self, ErrorKind};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use thiserror::Error;
use xrteleop_core::TrackingPacket;

use crate::codec::{decode_packet, encode_packet, CodecError, SequenceGuard};
use crate::framing::read_frame;
use crate::transport::{Connection, Transport, TransportError};

/// Called with every message a client sends back to the publisher.
pub type InboundHandler = Arc<dyn Fn(Vec<u8>) + Send + Sync>;

/// Wall-clock nanoseconds since the Unix epoch.
pub fn now_ns() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos() as u64)
}

/// Sleep until `deadline`, finishing with a short spin for sub-millisecond accuracy.
pub fn sleep_until(deadline: Instant) {
    loop {
        let now = Instant::now();
        if now >= deadline {
            return;
        }
        let left = deadline - now;
        if left > Duration::from_millis(2) {
            thread::sleep(left - Duration::from_millis(1));
        } else {
            thread::yield_now();
        }
    }
}

#[derive(Clone)]
pub struct PublisherConfig {
    pub bind: String,
    pub transport: Transport,
    pub rate_hz: f64,
    /// Further connections are refused once this many clients are attached.
    pub max_clients: usize,
    pub inbound: Option<InboundHandler>,
}

impl PublisherConfig {
    pub fn new(bind: impl Into<String>, transport: Transport, rate_hz: f64) -> Self {
        Self { bind: bind.into(), transport, rate_hz, max_clients: 64, inbound: None }
    }

    pub fn with_inbound(mut self, handler: InboundHandler) -> Self {
        self.inbound = Some(handler);
        self
    }
}

#[derive(Default)]
struct Mailbox {
    payload: Option<Arc<Vec<u8>>>,
    closed: bool,
}

#[derive(Default)]
struct ClientSlot {
    mailbox: Mutex<Mailbox>,
    ready: Condvar,
}

impl ClientSlot {
    fn close(&self) {
        self.mailbox.lock().unwrap().closed = true;
        self.ready.notify_all();
    }
}

#[derive(Default)]
struct PubShared {
    clients: Mutex<Vec<Arc<ClientSlot>>>,
    stop: AtomicBool,
    finished: AtomicBool,
    published: AtomicU64,
    sent: AtomicU64,
}

pub struct Publisher {
    addr: SocketAddr,
    shared: Arc<PubShared>,
    threads: Vec<JoinHandle<()>>,
}

impl Publisher {
    /// Start listening. Frames are pushed with [`Publisher::push`].
    pub fn bind(cfg: &PublisherConfig) -> io::Result<Self> {
        let listener = TcpListener::bind(&cfg.bind)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(PubShared::default());
        let acceptor = {
            let shared = shared.clone();
            let transport = cfg.transport;
            let inbound = cfg.inbound.clone();
            let max_clients = cfg.max_clients;
            thread::Builder::new()
                .name("xrteleop-accept".into())
                .spawn(move || accept_loop(listener, transport, max_clients, inbound, shared))?
        };
        Ok(Self { addr, shared, threads: vec![acceptor] })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn client_count(&self) -> usize {
        self.shared.clients.lock().unwrap().len()
    }

    /// Frames handed to [`Publisher::push`], whether or not anyone listened.
    pub fn published(&self) -> u64 {
        self.shared.published.load(Ordering::Relaxed)
    }

    /// Frames written to client sockets.
    pub fn sent(&self) -> u64 {
        self.shared.sent.load(Ordering::Relaxed)
    }

    /// True once a ticking source has run dry.
    pub fn is_finished(&self) -> bool {
        self.shared.finished.load(Ordering::Acquire)
    }

    /// Replace every client's pending frame with `payload`.
    pub fn push(&self, payload: Vec<u8>) {
        push_to(&self.shared, Arc::new(payload));
    }

    /// Block until the source is exhausted or `timeout` passes.
    pub fn wait_finished(&self, timeout: Duration) -> bool {
        let end = Instant::now() + timeout;
        while Instant::now() < end {
            if self.is_finished() {
                return true;
            }
            thread::sleep(Duration::from_millis(5));
        }
        self.is_finished()
    }

    pub fn stop(&mut self) {
        self.shared.stop.store(true, Ordering::Release);
        for c in self.shared.clients.lock().unwrap().iter() {
            c.close();
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for Publisher {
    fn drop(&mut self) {
        self.stop();
    }
}

fn push_to(shared: &PubShared, payload: Arc<Vec<u8>>) {
    shared.published.fetch_add(1, Ordering::Relaxed);
    for c in shared.clients.lock().unwrap().iter() {
        c.mailbox.lock().unwrap().payload = Some(payload.clone());
        c.ready.notify_one();
    }
}

fn accept_loop(
    listener: TcpListener,
    transport: Transport,
    max_clients: usize,
    inbound: Option<InboundHandler>,
    shared: Arc<PubShared>,
) {
    let mut workers: Vec<JoinHandle<()>> = Vec::new();
    while !shared.stop.load(Ordering::Acquire) {
        match listener.accept() {
            Ok((stream, peer)) => {
                workers.retain(|h| !h.is_finished());
                if workers.len() >= max_clients {
                    log::warn!("refusing {peer}: {max_clients} clients already connected");
                    drop(stream);
                    continue;
                }
                let shared = shared.clone();
                let inbound = inbound.clone();
                let spawned = thread::Builder::new()
                    .name(format!("xrteleop-client-{peer}"))
                    .spawn(move || serve_client(stream, transport, inbound, shared));
                match spawned {
                    Ok(h) => workers.push(h),
                    Err(e) => log::warn!("cannot spawn client thread: {e}"),
                }
                workers.retain(|h| !h.is_finished());
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                log::warn!("accept failed: {e}");
                thread::sleep(Duration::from_millis(50));
            }
        }
    }
    for h in workers {
        let _ = h.join();
    }
}

fn serve_client(stream: TcpStream, transport: Transport, inbound: Option<InboundHandler>, shared: Arc<PubShared>) {
    if stream.set_nonblocking(false).is_err() {
        return;
    }
    let _ = stream.set_read_timeout(Some(Duration::from_secs(5)));
    let mut conn = match Connection::accept(stream, transport) {
        Ok(c) => c,
        Err(e) => {
            log::warn!("handshake failed: {e}");
            return;
        }
    };
    let slot = Arc::new(ClientSlot::default());
    shared.clients.lock().unwrap().push(slot.clone());
    log::info!("client connected: {:?}", conn.peer_addr());

    // Framed TCP reads are not resumable after a timeout, so they get their own thread.
    let mut tcp_reader = None;
    let mut poll_ws = false;
    if let Some(handler) = inbound.clone() {
        match &conn {
            Connection::Tcp(s) => {
                if let Ok(mut r) = s.try_clone() {
                    let _ = r.set_read_timeout(None);
                    let slot = slot.clone();
                    tcp_reader = thread::Builder::new()
                        .spawn(move || {
                            while let Ok(Some(b)) = read_frame(&mut r) {
                                handler(b);
                            }
                            slot.close();
                        })
                        .ok();
                }
            }
            Connection::Ws(_) => poll_ws = true,
        }
    }
    if poll_ws {
        let _ = conn.set_read_timeout(Some(Duration::from_millis(1)));
    }
    let wait = if poll_ws { Duration::from_millis(2) } else { Duration::from_millis(50) };

    loop {
        let payload = {
            let mut mb = slot.mailbox.lock().unwrap();
            if mb.payload.is_none() && !mb.closed {
                mb = slot.ready.wait_timeout(mb, wait).unwrap().0;
            }
            if mb.closed || shared.stop.load(Ordering::Acquire) {
                break;
            }
            mb.payload.take()
        };
        if let Some(p) = payload {
            if conn.send(&p).is_err() {
                break;
            }
            shared.sent.fetch_add(1, Ordering::Relaxed);
        }
        if poll_ws {
            match conn.recv() {
                Ok(b) => {
                    if let Some(h) = &inbound {
                        h(b)
                    }
                }
                Err(e) if e.is_timeout() => {}
                Err(_) => break,
            }
        }
    }
    shared.clients.lock().unwrap().retain(|c| !Arc::ptr_eq(c, &slot));
    conn.close();
    if let Some(t) = tcp_reader {
        let _ = t.join();
    }
    log::info!("client disconnected");
}

/// Publish packets from `source` at `cfg.rate_hz`.
///
/// Each packet is stamped with a fresh sequence number and the wall-clock
/// send time. Publishing stops when the source returns `None`.
pub fn publish<F>(mut source: F, cfg: &PublisherConfig) -> io::Result<Publisher>
where
    F: FnMut() -> Option<TrackingPacket> + Send + 'static,
{
    if !(cfg.rate_hz > 0.0 && cfg.rate_hz.is_finite()) {
        return Err(io::Error::new(ErrorKind::InvalidInput, "rate must be positive"));
    }
    let mut publisher = Publisher::bind(cfg)?;
    let shared = publisher.shared.clone();
    let period = Duration::from_secs_f64(1.0 / cfg.rate_hz);
    let ticker = thread::Builder::new().name("xrteleop-ticker".into()).spawn(move || {
        let start = Instant::now();
        let mut tick: u32 = 0;
        let mut sequence = 0u64;
        while !shared.stop.load(Ordering::Acquire) {
            let Some(mut packet) = source() else {
                shared.finished.store(true, Ordering::Release);
                return;
            };
            packet.sequence = sequence;
            packet.timestamp_ns = now_ns();
            sequence += 1;
            match encode_packet(&packet) {
                Ok(bytes) => push_to(&shared, Arc::new(bytes)),
                Err(e) => log::warn!("dropping unencodable packet: {e}"),
            }
            tick += 1;
            let mut due = start + period * tick;
            let now = Instant::now();
            if now > due + period * 2 {
                // Fell far behind: resynchronise instead of bursting.
                tick = ((now - start).as_secs_f64() / period.as_secs_f64()).ceil() as u32;
                due = start + period * tick;
            }
            sleep_until(due);
        }
    })?;
    publisher.threads.push(ticker);
    Ok(publisher)
}

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("connect failed: {0}")]
    Connect(TransportError),
    #[error("connection lost: {0}")]
    Disconnected(TransportError),
    #[error("bad frame: {0}")]
    Codec(#[from] CodecError),
    #[error("gave up after {0} failed connection attempts")]
    RetriesExhausted(u32),
}

#[derive(Clone, Debug)]
pub struct SubscriberConfig {
    pub addr: String,
    pub transport: Transport,
    pub connect_timeout: Duration,
    pub backoff_initial: Duration,
    pub backoff_max: Duration,
    /// Consecutive failed connection attempts tolerated; `None` retries forever.
    pub max_retries: Option<u32>,
}

impl SubscriberConfig {
    pub fn new(addr: impl Into<String>, transport: Transport) -> Self {
        Self {
            addr: addr.into(),
            transport,
            connect_timeout: Duration::from_secs(1),
            backoff_initial: Duration::from_millis(100),
            backoff_max: Duration::from_secs(5),
            max_retries: None,
        }
    }
}

struct Inbox<T> {
    item: Option<T>,
    errors: Vec<StreamError>,
    closed: bool,
}

struct SubShared<T> {
    inbox: Mutex<Inbox<T>>,
    ready: Condvar,
    stop: AtomicBool,
    connected: AtomicBool,
    received: AtomicU64,
    delivered: AtomicU64,
    connections: AtomicUsize,
}

impl<T> SubShared<T> {
    fn error(&self, e: StreamError) {
        self.inbox.lock().unwrap().errors.push(e);
        self.ready.notify_one();
    }
}

pub struct Subscriber {
    stop: Box<dyn Fn() + Send + Sync>,
    stats: Arc<dyn SubStats>,
    threads: Vec<JoinHandle<()>>,
}

trait SubStats: Send + Sync {
    fn received(&self) -> u64;
    fn delivered(&self) -> u64;
    fn connected(&self) -> bool;
    fn connections(&self) -> usize;
}

impl<T: Send> SubStats for SubShared<T> {
    fn received(&self) -> u64 {
        self.received.load(Ordering::Relaxed)
    }
    fn delivered(&self) -> u64 {
        self.delivered.load(Ordering::Relaxed)
    }
    fn connected(&self) -> bool {
        self.connected.load(Ordering::Acquire)
    }
    fn connections(&self) -> usize {
        self.connections.load(Ordering::Relaxed)
    }
}

impl Subscriber {
    /// Frames read off the socket, including ones later dropped.
    pub fn received(&self) -> u64 {
        self.stats.received()
    }

    /// Items passed to the callback.
    pub fn delivered(&self) -> u64 {
        self.stats.delivered()
    }

    pub fn is_connected(&self) -> bool {
        self.stats.connected()
    }

    /// Successful connections so far, reconnects included.
    pub fn connections(&self) -> usize {
        self.stats.connections()
    }

    /// Stop both threads; pending items are discarded.
    pub fn stop(&mut self) {
        (self.stop)();
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    /// Wait for the reader to give up on its own, then drain the callback thread.
    pub fn join(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for Subscriber {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Subscribe to a tracking-packet stream.
pub fn subscribe<F, E>(cfg: SubscriberConfig, on_packet: F, on_error: E) -> io::Result<Subscriber>
where
    F: FnMut(TrackingPacket) + Send + 'static,
    E: FnMut(StreamError) + Send + 'static,
{
    subscribe_with(cfg, |b| decode_packet(b).map(|p| (p.sequence, p)), on_packet, on_error)
}

/// Subscribe with a custom decoder returning an ordering key and the item.
/// Items whose key does not increase are reported and dropped.
pub fn subscribe_with<T, D, F, E>(cfg: SubscriberConfig, decode: D, mut on_item: F, mut on_error: E) -> io::Result<Subscriber>
where
    T: Send + 'static,
    D: Fn(&[u8]) -> Result<(u64, T), CodecError> + Send + 'static,
    F: FnMut(T) + Send + 'static,
    E: FnMut(StreamError) + Send + 'static,
{
    let shared = Arc::new(SubShared {
        inbox: Mutex::new(Inbox { item: None, errors: Vec::new(), closed: false }),
        ready: Condvar::new(),
        stop: AtomicBool::new(false),
        connected: AtomicBool::new(false),
        received: AtomicU64::new(0),
        delivered: AtomicU64::new(0),
        connections: AtomicUsize::new(0),
    });
    let reader = {
        let shared = shared.clone();
        thread::Builder::new().name("xrteleop-sub-read".into()).spawn(move || read_loop(cfg, decode, &shared))?
    };
    let callback = {
        let shared = shared.clone();
        thread::Builder::new().name("xrteleop-sub-cb".into()).spawn(move || loop {
            let (item, errors) = {
                let mut ib = shared.inbox.lock().unwrap();
                while ib.item.is_none() && ib.errors.is_empty() && !ib.closed {
                    ib = shared.ready.wait(ib).unwrap();
                }
                if shared.stop.load(Ordering::Acquire) {
                    return;
                }
                let done = ib.closed && ib.item.is_none() && ib.errors.is_empty();
                if done {
                    return;
                }
                (ib.item.take(), std::mem::take(&mut ib.errors))
            };
            for e in errors {
                on_error(e);
            }
            if let Some(item) = item {
                shared.delivered.fetch_add(1, Ordering::Relaxed);
                on_item(item);
            }
        })?
    };
    let stop = {
        let shared = shared.clone();
        Box::new(move || {
            shared.stop.store(true, Ordering::Release);
            shared.inbox.lock().unwrap().closed = true;
            shared.ready.notify_all();
        })
    };
    Ok(Subscriber { stop, stats: shared, threads: vec![reader, callback] })
}

fn sleep_unless_stopped(stop: &AtomicBool, d: Duration) {
    let end = Instant::now() + d;
    while !stop.load(Ordering::Acquire) && Instant::now() < end {
        thread::sleep(Duration::from_millis(5).min(end.saturating_duration_since(Instant::now())));
    }
}

fn read_loop<T, D>(cfg: SubscriberConfig, decode: D, shared: &SubShared<T>)
where
    D: Fn(&[u8]) -> Result<(u64, T), CodecError>,
{
    let mut guard = SequenceGuard::default();
    let mut failures = 0u32;
    let mut backoff = cfg.backoff_initial;
    while !shared.stop.load(Ordering::Acquire) {
        let mut conn = match Connection::connect(&cfg.addr, cfg.transport, cfg.connect_timeout) {
            Ok(c) => c,
            Err(e) => {
                failures += 1;
                shared.error(StreamError::Connect(e));
                if cfg.max_retries.is_some_and(|m| failures > m) {
                    shared.error(StreamError::RetriesExhausted(failures));
                    break;
                }
                sleep_unless_stopped(&shared.stop, backoff);
                backoff = (backoff * 2).min(cfg.backoff_max);
                continue;
            }
        };
        failures = 0;
        backoff = cfg.backoff_initial;
        // A restarted publisher numbers from zero again.
        guard.reset();
        let _ = conn.set_read_timeout(Some(Duration::from_millis(50)));
        shared.connections.fetch_add(1, Ordering::Relaxed);
        shared.connected.store(true, Ordering::Release);
        while !shared.stop.load(Ordering::Acquire) {
            match conn.recv() {
                Ok(bytes) => {
                    shared.received.fetch_add(1, Ordering::Relaxed);
                    match decode(&bytes).and_then(|(key, item)| guard.check(key).map(|_| item)) {
                        Ok(item) => {
                            shared.inbox.lock().unwrap().item = Some(item);
                            shared.ready.notify_one();
                        }
                        Err(e) => shared.error(e.into()),
                    }
                }
                Err(e) if e.is_timeout() => {}
                Err(e) => {
                    shared.error(StreamError::Disconnected(e));
                    break;
                }
            }
        }
        shared.connected.store(false, Ordering::Release);
        conn.close();
    }
    shared.inbox.lock().unwrap().closed = true;
    shared.ready.notify_all();
}
