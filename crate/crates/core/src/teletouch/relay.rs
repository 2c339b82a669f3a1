//! Frame forwarder between one local and one remote site, with optional
//! injected delay and jitter.

use std::collections::HashMap;
use std::io::{self, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::wire::{read_frame, read_raw, Frame, Role, WireError, PING};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct RelayConfig {
    /// Added to every forwarded frame in each direction.
    pub delay: Duration,
    /// Extra uniform delay in `[0, jitter]`, never reordering a direction.
    pub jitter: Duration,
    pub seed: u64,
}

type Outbox = Sender<(Instant, Vec<u8>)>;

#[derive(Default)]
struct Registry {
    sites: HashMap<Role, (Outbox, TcpStream)>,
}

pub struct RelayHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    registry: Arc<Mutex<Registry>>,
    accept: Option<JoinHandle<()>>,
}

impl RelayHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    /// Block until the accept loop ends.
    pub fn wait(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        for (_, (_, s)) in self.registry.lock().expect("registry").sites.drain() {
            let _ = s.shutdown(Shutdown::Both);
        }
    }
}

impl Drop for RelayHandle {
    fn drop(&mut self) {
        if self.accept.is_some() {
            self.stop_now();
        }
    }
}

/// Writer thread: holds each frame until its due time, then writes it.
fn spawn_writer(mut stream: TcpStream) -> Outbox {
    let (tx, rx) = mpsc::channel::<(Instant, Vec<u8>)>();
    std::thread::spawn(move || {
        for (due, bytes) in rx {
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                std::thread::sleep(wait);
            }
            if stream.write_all(&bytes).is_err() {
                break;
            }
        }
    });
    tx
}

fn handle_connection(stream: TcpStream, registry: Arc<Mutex<Registry>>, config: RelayConfig) {
    let peer_addr = stream.peer_addr().ok();
    let mut reader = match stream.try_clone() {
        Ok(r) => r,
        Err(e) => {
            log::warn!("relay: cannot clone stream for {peer_addr:?}: {e}");
            return;
        }
    };
    let role = match read_frame(&mut reader) {
        Ok(Frame::Hello(role)) => role,
        Ok(other) => {
            log::warn!("relay: {peer_addr:?} opened with {:#04x} instead of HELLO; dropping", other.msg_type());
            let _ = stream.shutdown(Shutdown::Both);
            return;
        }
        Err(e) => {
            log::warn!("relay: dropping {peer_addr:?}: {e}");
            let _ = stream.shutdown(Shutdown::Both);
            return;
        }
    };
    let own = {
        let mut reg = registry.lock().expect("registry");
        if reg.sites.contains_key(&role) {
            log::warn!("relay: {role:?} site already registered; dropping {peer_addr:?}");
            let _ = stream.shutdown(Shutdown::Both);
            return;
        }
        let Ok(writer) = stream.try_clone() else { return };
        let tx = spawn_writer(writer);
        reg.sites.insert(role, (tx.clone(), stream));
        tx
    };
    log::info!("relay: {role:?} site registered from {peer_addr:?}");

    let seed = config.seed ^ if role == Role::Local { 0 } else { 0x5eed };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last_due = Instant::now();
    let mut jitter = || {
        if config.jitter.is_zero() {
            Duration::ZERO
        } else {
            config.jitter.mul_f64(rng.random::<f64>())
        }
    };
    let reason = loop {
        let (msg_type, payload) = match read_raw(&mut reader) {
            Ok(f) => f,
            Err(e) => break e,
        };
        let now = Instant::now();
        if msg_type == PING {
            // The ping crosses the link twice before its answer arrives.
            let t_us = match Frame::decode(msg_type, &payload) {
                Ok(Frame::Ping { t_us }) => t_us,
                Ok(_) => unreachable!("PING decodes to Ping"),
                Err(e) => break e,
            };
            let due = now + 2 * config.delay + jitter();
            if own.send((due, Frame::Pong { t_us }.encode())).is_err() {
                break WireError::Closed;
            }
            continue;
        }
        let mut bytes = Vec::with_capacity(5 + payload.len());
        bytes.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        bytes.push(msg_type);
        bytes.extend_from_slice(&payload);
        let due = (now + config.delay + jitter()).max(last_due);
        last_due = due;
        let peer = registry
            .lock()
            .expect("registry")
            .sites
            .get(&role.peer())
            .map(|(tx, _)| tx.clone());
        match peer {
            Some(tx) => {
                let _ = tx.send((due, bytes));
            }
            None => log::debug!("relay: no {:?} site yet; dropped {msg_type:#04x}", role.peer()),
        }
    };
    match reason {
        WireError::Closed => log::info!("relay: {role:?} site disconnected"),
        e => log::warn!("relay: dropping {role:?} connection: {e}"),
    }
    if let Some((_, s)) = registry.lock().expect("registry").sites.remove(&role) {
        let _ = s.shutdown(Shutdown::Both);
    }
}

pub fn start_relay(bind: impl ToSocketAddrs, config: RelayConfig) -> io::Result<RelayHandle> {
    let listener = TcpListener::bind(bind)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let registry = Arc::new(Mutex::new(Registry::default()));
    let accept = {
        let stop = stop.clone();
        let registry = registry.clone();
        std::thread::Builder::new().name("relay-accept".into()).spawn(move || {
            while !stop.load(Ordering::Relaxed) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let _ = stream.set_nonblocking(false);
                        let _ = stream.set_nodelay(true);
                        let registry = registry.clone();
                        std::thread::spawn(move || handle_connection(stream, registry, config));
                    }
                    Err(e) if e.kind() == io::ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(5)),
                    Err(e) => log::warn!("relay: accept failed: {e}"),
                }
            }
        })?
    };
    log::info!("relay listening on {addr} (delay {:?}, jitter {:?})", config.delay, config.jitter);
    Ok(RelayHandle {
        addr,
        stop,
        registry,
        accept: Some(accept),
    })
}
