//! Newline-delimited JSON state service for the operator console.
//!
//! One simulation thread owns the engine. Client commands arrive on a queue
//! that it drains once per render refresh, so a scene swap or pose change
//! always lands between two refreshes. Snapshots are serialized once and
//! fanned out to per-client writer threads.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Engine, EngineConfig, EngineSnapshot, Pacer, PlatformPose, PoseSource, SceneSampler, RENDER_DIVIDER};
use crate::analysis::{AnnotationExport, Mark, Timestamp};
use crate::control::PenaltyOrder;
use crate::plant::INNER_DT;
use crate::scene::{SampleMode, Scene, WORKSPACE_MM, WORKSPACE_Z_MM};
use crate::unit::SimError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Client to server.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Pose { x: f64, y: f64, z: f64 },
    LoadScene { id: String },
    Mark {
        x: f64,
        y: f64,
        #[serde(default)]
        label: String,
    },
    Unmark { index: usize },
    Config(ConfigUpdate),
    /// Ask for the current marks in annotation-export form.
    Export,
}

impl ClientMessage {
    fn name(&self) -> &'static str {
        match self {
            ClientMessage::Pose { .. } => "pose",
            ClientMessage::LoadScene { .. } => "load_scene",
            ClientMessage::Mark { .. } => "mark",
            ClientMessage::Unmark { .. } => "unmark",
            ClientMessage::Config(_) => "config",
            ClientMessage::Export => "export",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigUpdate {
    pub snapshot_hz: Option<f64>,
    pub penalty_order: Option<PenaltyOrder>,
    pub z_reference_mm: Option<f64>,
    pub sample_mode: Option<SampleMode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub workspace: Vec3,
    pub scenes: Vec<String>,
    pub scene: String,
    pub inner_hz: f64,
    pub render_hz: f64,
    pub snapshot_hz: f64,
    pub marks: Vec<Mark>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateMessage {
    pub tick: u64,
    pub sim_time: f64,
    pub pose: Vec3,
    pub heights: Vec<f64>,
    pub k: Vec<f64>,
    pub f: Vec<f64>,
    pub targets: Vec<f64>,
    pub u: Vec<f64>,
    pub stale: bool,
    pub scene: String,
    pub render_rate_hz: Option<f64>,
}

impl From<&EngineSnapshot> for StateMessage {
    fn from(s: &EngineSnapshot) -> Self {
        let col = |f: fn(&super::UnitSnapshot) -> f64| s.units.iter().map(f).collect::<Vec<_>>();
        Self {
            tick: s.tick,
            sim_time: s.sim_time_s,
            pose: Vec3 {
                x: s.pose.x_mm,
                y: s.pose.y_mm,
                z: s.pose.z_mm,
            },
            heights: col(|u| u.height_mm),
            k: col(|u| u.k),
            f: col(|u| u.f),
            targets: col(|u| u.target_mm),
            u: col(|u| u.u_output_v),
            stale: s.stale,
            scene: s.scene_id.clone(),
            render_rate_hz: s.render_rate_hz,
        }
    }
}

/// Server to client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello(Hello),
    State(StateMessage),
    Ack { cmd: String },
    Error { message: String },
    Annotations(AnnotationExport),
}

impl ServerMessage {
    pub fn to_line(&self) -> Arc<str> {
        let mut s = serde_json::to_string(self).expect("server messages serialize");
        s.push('\n');
        s.into()
    }
}

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub engine: EngineConfig,
    /// Scenes offered to clients; the first is loaded at start.
    pub scenes: Vec<Scene>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            engine: EngineConfig::default(),
            scenes: Scene::builtins(),
        }
    }
}

type Line = Arc<str>;

enum Inbound {
    Join(Sender<Line>),
    Command(ClientMessage, Sender<Line>),
}

struct HeldPose(PlatformPose);

impl PoseSource for HeldPose {
    fn pose_at(&mut self, _t: f64) -> Option<PlatformPose> {
        Some(self.0)
    }
}

/// Everything the simulation thread owns besides the engine itself.
struct Session {
    scenes: Vec<Scene>,
    sampler: SceneSampler,
    pose: HeldPose,
    marks: Vec<Mark>,
    clients: Vec<Sender<Line>>,
}

impl Session {
    fn hello(&self, engine: &Engine) -> ServerMessage {
        ServerMessage::Hello(Hello {
            workspace: Vec3 {
                x: WORKSPACE_MM.0,
                y: WORKSPACE_MM.1,
                z: WORKSPACE_Z_MM,
            },
            scenes: self.scenes.iter().map(|s| s.id.clone()).collect(),
            scene: self.sampler.scene.id.clone(),
            inner_hz: 1.0 / INNER_DT,
            render_hz: 1.0 / (INNER_DT * RENDER_DIVIDER as f64),
            snapshot_hz: engine.config().snapshot_hz,
            marks: self.marks.clone(),
        })
    }

    fn apply(&mut self, engine: &mut Engine, msg: ClientMessage) -> ServerMessage {
        let ack = ServerMessage::Ack { cmd: msg.name().into() };
        match msg {
            ClientMessage::Pose { x, y, z } => {
                if !(x.is_finite() && y.is_finite() && z.is_finite()) {
                    return error("pose coordinates must be finite");
                }
                self.pose.0 = PlatformPose::new(x, y, z);
            }
            ClientMessage::LoadScene { id } => match self.scenes.iter().find(|s| s.id == id) {
                Some(s) => self.sampler.scene = s.clone(),
                None => return error(&format!("unknown scene {id:?}")),
            },
            ClientMessage::Mark { x, y, label } => {
                if !(x.is_finite() && y.is_finite()) {
                    return error("mark coordinates must be finite");
                }
                self.marks.push(Mark { x, y, label });
            }
            ClientMessage::Unmark { index } => {
                if index >= self.marks.len() {
                    return error(&format!("no mark {index}"));
                }
                self.marks.remove(index);
            }
            ClientMessage::Config(c) => {
                if let Some(hz) = c.snapshot_hz {
                    if !(hz.is_finite() && hz > 0.0 && hz <= 1.0 / INNER_DT) {
                        return error("snapshot_hz must be in (0, 10000]");
                    }
                    engine.set_snapshot_rate(hz);
                }
                if let Some(order) = c.penalty_order {
                    engine.set_penalty_order(order);
                }
                if let Some(z) = c.z_reference_mm {
                    if !z.is_finite() {
                        return error("z_reference_mm must be finite");
                    }
                    self.sampler.z_reference_mm = z;
                }
                if let Some(mode) = c.sample_mode {
                    self.sampler.mode = mode;
                }
            }
            ClientMessage::Export => {
                return ServerMessage::Annotations(AnnotationExport {
                    marks: self.marks.clone(),
                    scene_id: self.sampler.scene.id.clone(),
                    timestamp: Timestamp::now(),
                })
            }
        }
        ack
    }

    fn broadcast(&mut self, line: Line) {
        self.clients.retain(|c| c.send(line.clone()).is_ok());
    }
}

fn error(message: &str) -> ServerMessage {
    ServerMessage::Error { message: message.into() }
}

fn simulation_loop(mut engine: Engine, mut session: Session, inbox: Receiver<Inbound>, stop: Arc<AtomicBool>) -> Result<(), SimError> {
    let mut pacer = Pacer::new();
    let start = engine.tick_count();
    while !stop.load(Ordering::Relaxed) {
        loop {
            match inbox.try_recv() {
                Ok(Inbound::Join(tx)) => {
                    if tx.send(session.hello(&engine).to_line()).is_ok() {
                        session.clients.push(tx);
                    }
                }
                Ok(Inbound::Command(msg, reply)) => {
                    let out = session.apply(&mut engine, msg);
                    let _ = reply.send(out.to_line());
                }
                Err(TryRecvError::Empty) | Err(TryRecvError::Disconnected) => break,
            }
        }
        for _ in 0..RENDER_DIVIDER {
            if let Some(snap) = engine.step(&mut session.pose, &mut session.sampler)? {
                session.broadcast(ServerMessage::State(StateMessage::from(&snap)).to_line());
            }
        }
        let rate = pacer.render_tick((engine.tick_count() - start) as f64 * INNER_DT);
        engine.set_render_rate_hz(rate);
    }
    Ok(())
}

fn client_threads(stream: TcpStream, inbox: Sender<Inbound>) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let mut writer = stream.try_clone()?;
    let reader = stream;
    let (tx, rx) = mpsc::channel::<Line>();
    if inbox.send(Inbound::Join(tx.clone())).is_err() {
        return Ok(());
    }
    std::thread::spawn(move || {
        for line in rx {
            if writer.write_all(line.as_bytes()).is_err() {
                break;
            }
        }
        let _ = writer.shutdown(Shutdown::Both);
    });
    std::thread::spawn(move || {
        let peer = reader.peer_addr().ok();
        for line in BufReader::new(reader).lines() {
            let Ok(line) = line else { break };
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<ClientMessage>(&line) {
                Ok(msg) => {
                    if inbox.send(Inbound::Command(msg, tx.clone())).is_err() {
                        break;
                    }
                }
                Err(e) => {
                    log::warn!("malformed command from {peer:?}: {e}");
                    if tx.send(error(&format!("malformed command: {e}")).to_line()).is_err() {
                        break;
                    }
                }
            }
        }
    });
    Ok(())
}

/// A running server; dropping it without [`ServerHandle::shutdown`] leaves
/// the threads running.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    streams: Arc<Mutex<Vec<TcpStream>>>,
    threads: Vec<JoinHandle<()>>,
    sim: Option<JoinHandle<Result<(), SimError>>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Block until the simulation thread exits (on error or shutdown).
    pub fn wait(mut self) -> Result<(), SimError> {
        let r = self.sim.take().map_or(Ok(()), |h| h.join().unwrap_or(Ok(())));
        self.stop.store(true, Ordering::Relaxed);
        self.close();
        r
    }

    pub fn shutdown(mut self) -> Result<(), SimError> {
        self.stop.store(true, Ordering::Relaxed);
        let r = self.sim.take().map_or(Ok(()), |h| h.join().unwrap_or(Ok(())));
        self.close();
        r
    }

    fn close(&mut self) {
        for s in self.streams.lock().expect("stream list").drain(..) {
            let _ = s.shutdown(Shutdown::Both);
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

/// Bind and start serving in background threads.
pub fn start(bind: impl ToSocketAddrs, config: ServerConfig) -> io::Result<ServerHandle> {
    let first = config
        .scenes
        .first()
        .cloned()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "no scenes to serve"))?;
    let engine = Engine::new(config.engine).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
    let listener = TcpListener::bind(bind)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;

    let session = Session {
        pose: HeldPose(engine.pose()),
        sampler: SceneSampler::new(first),
        scenes: config.scenes,
        marks: Vec::new(),
        clients: Vec::new(),
    };
    let stop = Arc::new(AtomicBool::new(false));
    let streams = Arc::new(Mutex::new(Vec::new()));
    let (inbox_tx, inbox_rx) = mpsc::channel();

    let sim = {
        let stop = stop.clone();
        std::thread::Builder::new()
            .name("engine".into())
            .spawn(move || {
                let r = simulation_loop(engine, session, inbox_rx, stop);
                if let Err(e) = &r {
                    log::error!("simulation stopped: {e}");
                }
                r
            })?
    };
    let accept = {
        let stop = stop.clone();
        let streams = streams.clone();
        std::thread::Builder::new().name("accept".into()).spawn(move || {
            while !stop.load(Ordering::Relaxed) {
                match listener.accept() {
                    Ok((stream, peer)) => {
                        log::info!("client connected from {peer}");
                        let _ = stream.set_nonblocking(false);
                        if let Ok(c) = stream.try_clone() {
                            streams.lock().expect("stream list").push(c);
                        }
                        if let Err(e) = client_threads(stream, inbox_tx.clone()) {
                            log::warn!("client {peer} setup failed: {e}");
                        }
                    }
                    Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                        std::thread::sleep(Duration::from_millis(10))
                    }
                    Err(e) => log::warn!("accept failed: {e}"),
                }
            }
        })?
    };
    log::info!("serving on {addr}");
    Ok(ServerHandle {
        addr,
        stop,
        streams,
        threads: vec![accept],
        sim: Some(sim),
    })
}

/// Bind and serve until the simulation stops.
pub fn serve(bind: impl ToSocketAddrs, config: ServerConfig) -> io::Result<()> {
    start(bind, config)?
        .wait()
        .map_err(|e| io::Error::other(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::UNITS;

    #[test]
    fn parses_client_commands() {
        let m: ClientMessage = serde_json::from_str(r#"{"type":"pose","x":1,"y":2,"z":3}"#).unwrap();
        assert_eq!(m, ClientMessage::Pose { x: 1.0, y: 2.0, z: 3.0 });
        let m: ClientMessage = serde_json::from_str(r#"{"type":"config","penalty_order":3,"sample_mode":"patch_average"}"#).unwrap();
        assert_eq!(
            m,
            ClientMessage::Config(ConfigUpdate {
                penalty_order: Some(PenaltyOrder::Cubic),
                sample_mode: Some(SampleMode::PatchAverage),
                ..ConfigUpdate::default()
            })
        );
        assert!(serde_json::from_str::<ClientMessage>(r#"{"type":"config","bogus":1}"#).is_err());
        assert!(serde_json::from_str::<ClientMessage>(r#"{"type":"teleport"}"#).is_err());
    }

    #[test]
    fn state_message_shape() {
        let e = Engine::new(EngineConfig::default()).unwrap();
        let v = serde_json::to_value(ServerMessage::State(StateMessage::from(&e.snapshot()))).unwrap();
        assert_eq!(v["type"], "state");
        assert_eq!(v["heights"].as_array().unwrap().len(), UNITS);
        assert!(v["pose"]["x"].is_number());
        assert!(v["stale"].is_boolean());
    }
}
