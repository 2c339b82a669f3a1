//! The two ends of a tele-touch session.
//!
//! The local site streams platform poses and turns tactile replies into the
//! engine's render commands. The remote site answers each pose with a probe
//! press on a phantom.

use std::collections::BTreeMap;
use std::io::BufWriter;
use std::io::Write;
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use super::phantom::{probe_sample, Phantom};
use super::wire::{read_frame, write_frame, Frame, PoseFrame, Role, TactileFrame, WireError, FLAG_BOUNDARY};
use super::TeleError;
use crate::control::RenderCommand;
use crate::engine::{CommandSource, PlatformPose, SampledCommands};
use crate::scene::UNITS;
use crate::shore::ShoreRegression;

/// Commands are held and flagged stale after this long without a reply.
pub const STALE_AFTER: Duration = Duration::from_millis(500);
/// End-to-end latency budget, s.
pub const LATENCY_BUDGET_S: f64 = 0.1;
/// Render refreshes between pings.
const PING_EVERY: u64 = 50;
/// Unanswered poses kept for latency accounting.
const SENT_WINDOW: usize = 4096;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LatencyStats {
    /// Ping round trips, µs.
    pub rtt_us: Vec<u64>,
    /// Pose sent to matching tactile frame received, s.
    pub end_to_end_s: Vec<f64>,
    pub max_end_to_end_s: f64,
}

impl LatencyStats {
    pub fn record_rtt(&mut self, us: u64) {
        self.rtt_us.push(us);
    }

    pub fn record_end_to_end(&mut self, s: f64) {
        self.end_to_end_s.push(s);
        self.max_end_to_end_s = self.max_end_to_end_s.max(s);
    }

    /// Half of each round trip, s.
    pub fn one_way_estimates_s(&self) -> Vec<f64> {
        self.rtt_us.iter().map(|&r| r as f64 * 0.5e-6).collect()
    }

    pub fn mean_rtt_s(&self) -> Option<f64> {
        (!self.rtt_us.is_empty()).then(|| self.rtt_us.iter().sum::<u64>() as f64 * 1e-6 / self.rtt_us.len() as f64)
    }

    pub fn mean_end_to_end_s(&self) -> Option<f64> {
        (!self.end_to_end_s.is_empty()).then(|| self.end_to_end_s.iter().sum::<f64>() / self.end_to_end_s.len() as f64)
    }

    pub fn budget_exceeded(&self) -> bool {
        self.max_end_to_end_s > LATENCY_BUDGET_S
    }
}

/// A tactile reply paired with the pose it answers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanRecord {
    pub pose: PoseFrame,
    pub tactile: TactileFrame,
    pub latency_s: f64,
}

#[derive(Default)]
struct Inbound {
    sent: BTreeMap<u32, (Instant, PoseFrame)>,
    latest: Option<(Instant, TactileFrame)>,
    stats: LatencyStats,
    recording: bool,
    records: Vec<ScanRecord>,
    last_echo: u32,
    /// Tactile frames echoing a pose we never sent.
    unknown_echoes: u64,
    closed: Option<String>,
}

pub struct LocalSite {
    outbox: Sender<Frame>,
    shared: Arc<(Mutex<Inbound>, Condvar)>,
    stream: TcpStream,
    epoch: Instant,
    seq: u32,
    refreshes: u64,
    reader: Option<JoinHandle<()>>,
}

fn now_us(epoch: Instant) -> u64 {
    epoch.elapsed().as_micros() as u64
}

impl LocalSite {
    pub fn connect(relay: impl ToSocketAddrs) -> Result<Self, TeleError> {
        let stream = TcpStream::connect(relay)?;
        stream.set_nodelay(true)?;
        let mut w = stream.try_clone()?;
        write_frame(&mut w, &Frame::Hello(Role::Local))?;
        let (outbox, rx) = mpsc::channel::<Frame>();
        std::thread::spawn(move || {
            for f in rx {
                if write_frame(&mut w, &f).is_err() {
                    break;
                }
            }
        });
        let epoch = Instant::now();
        let shared = Arc::new((Mutex::new(Inbound::default()), Condvar::new()));
        let reader = {
            let shared = shared.clone();
            let mut r = stream.try_clone()?;
            std::thread::spawn(move || {
                let reason = loop {
                    match read_frame(&mut r) {
                        Ok(Frame::Tactile(t)) => {
                            let now = Instant::now();
                            let (lock, cv) = &*shared;
                            let mut s = lock.lock().expect("local site state");
                            match s.sent.remove(&t.echo_seq) {
                                Some((sent_at, pose)) => {
                                    let latency = (now - sent_at).as_secs_f64();
                                    s.stats.record_end_to_end(latency);
                                    if s.recording {
                                        s.records.push(ScanRecord { pose, tactile: t, latency_s: latency });
                                    }
                                    // Poses older than the echo will not be answered.
                                    s.sent = s.sent.split_off(&t.echo_seq);
                                }
                                None => s.unknown_echoes += 1,
                            }
                            s.last_echo = t.echo_seq;
                            s.latest = Some((now, t));
                            cv.notify_all();
                        }
                        Ok(Frame::Pong { t_us }) => {
                            let rtt = now_us(epoch).saturating_sub(t_us);
                            let (lock, cv) = &*shared;
                            lock.lock().expect("local site state").stats.record_rtt(rtt);
                            cv.notify_all();
                        }
                        Ok(other) => log::debug!("local site ignoring frame {:#04x}", other.msg_type()),
                        Err(e) => break e,
                    }
                };
                if !matches!(reason, WireError::Closed) {
                    log::warn!("local site link failed: {reason}");
                }
                let (lock, cv) = &*shared;
                lock.lock().expect("local site state").closed = Some(reason.to_string());
                cv.notify_all();
            })
        };
        Ok(Self {
            outbox,
            shared,
            stream,
            epoch,
            seq: 0,
            refreshes: 0,
            reader: Some(reader),
        })
    }

    /// Send a pose and return its sequence number.
    pub fn send_pose(&mut self, pose: &PlatformPose) -> u32 {
        self.seq += 1;
        let frame = PoseFrame {
            seq: self.seq,
            t_us: now_us(self.epoch),
            x: pose.x_mm as f32,
            y: pose.y_mm as f32,
            z: pose.z_mm as f32,
        };
        {
            let mut s = self.shared.0.lock().expect("local site state");
            s.sent.insert(frame.seq, (Instant::now(), frame));
            while s.sent.len() > SENT_WINDOW {
                s.sent.pop_first();
            }
        }
        let _ = self.outbox.send(Frame::Pose(frame));
        frame.seq
    }

    pub fn ping(&self) {
        let _ = self.outbox.send(Frame::Ping { t_us: now_us(self.epoch) });
    }

    pub fn last_seq(&self) -> u32 {
        self.seq
    }

    pub fn stats(&self) -> LatencyStats {
        self.shared.0.lock().expect("local site state").stats.clone()
    }

    pub fn unknown_echoes(&self) -> u64 {
        self.shared.0.lock().expect("local site state").unknown_echoes
    }

    pub fn latest(&self) -> Option<TactileFrame> {
        self.shared.0.lock().expect("local site state").latest.map(|(_, t)| t)
    }

    pub fn is_stale(&self) -> bool {
        let s = self.shared.0.lock().expect("local site state");
        s.latest.is_none_or(|(at, _)| at.elapsed() > STALE_AFTER)
    }

    pub fn set_recording(&self, on: bool) {
        self.shared.0.lock().expect("local site state").recording = on;
    }

    pub fn take_records(&self) -> Vec<ScanRecord> {
        std::mem::take(&mut self.shared.0.lock().expect("local site state").records)
    }

    /// Wait until the reply to `seq` (or a later one) arrives.
    pub fn wait_for_echo(&self, seq: u32, timeout: Duration) -> bool {
        let (lock, cv) = &*self.shared;
        let guard = lock.lock().expect("local site state");
        let (g, _) = cv
            .wait_timeout_while(guard, timeout, |s| s.last_echo < seq && s.closed.is_none())
            .expect("local site state");
        g.last_echo >= seq
    }

    /// Wait until at least `n` ping round trips have been measured.
    pub fn wait_for_pongs(&self, n: usize, timeout: Duration) -> bool {
        let (lock, cv) = &*self.shared;
        let guard = lock.lock().expect("local site state");
        let (g, _) = cv
            .wait_timeout_while(guard, timeout, |s| s.stats.rtt_us.len() < n && s.closed.is_none())
            .expect("local site state");
        g.stats.rtt_us.len() >= n
    }

    pub fn close(mut self) {
        let _ = self.stream.shutdown(Shutdown::Both);
        if let Some(h) = self.reader.take() {
            let _ = h.join();
        }
    }
}

impl CommandSource for LocalSite {
    fn commands(&mut self, pose: &PlatformPose, _t: f64) -> SampledCommands {
        self.send_pose(pose);
        if self.refreshes.is_multiple_of(PING_EVERY) {
            self.ping();
        }
        self.refreshes += 1;
        let s = self.shared.0.lock().expect("local site state");
        match s.latest {
            None => SampledCommands {
                commands: [RenderCommand::default(); UNITS],
                stale: true,
            },
            Some((at, t)) => SampledCommands {
                commands: std::array::from_fn(|i| {
                    RenderCommand {
                        target_height_mm: t.heights[i] as f64,
                        k: t.k[i] as f64,
                        f: 0.0,
                    }
                    .sanitized()
                }),
                stale: at.elapsed() > STALE_AFTER,
            },
        }
    }

    fn scene_id(&self) -> &str {
        "teletouch"
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RemoteConfig {
    /// The probe keeps at least this much press depth so it stays in
    /// contact, mm.
    pub min_press_mm: f64,
    pub regression: ShoreRegression,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            min_press_mm: 2.0,
            regression: ShoreRegression::default(),
        }
    }
}

/// Build the reply to one pose.
pub fn tactile_reply(phantom: &Phantom, pose: &PoseFrame, seq: u32, t_us: u64, config: &RemoteConfig) -> TactileFrame {
    let press = (pose.z as f64).max(config.min_press_mm);
    let s = probe_sample(phantom, pose.x as f64, pose.y as f64, press, &config.regression);
    TactileFrame {
        seq,
        t_us,
        echo_seq: pose.seq,
        heights: s.heights_mm.map(|v| v as f32),
        k: s.k.map(|v| v as f32),
        normal_force: s.normal_force_n as f32,
        indentation: s.mean_indentation_mm() as f32,
        flags: if s.boundary { FLAG_BOUNDARY } else { 0 },
    }
}

pub struct RemoteSite {
    stream: TcpStream,
    worker: Option<JoinHandle<Result<u64, TeleError>>>,
}

impl RemoteSite {
    pub fn connect(relay: impl ToSocketAddrs, phantom: Phantom, config: RemoteConfig) -> Result<Self, TeleError> {
        phantom.validate()?;
        let stream = TcpStream::connect(relay)?;
        stream.set_nodelay(true)?;
        let mut r = stream.try_clone()?;
        let mut w = BufWriter::new(stream.try_clone()?);
        write_frame(&mut w, &Frame::Hello(Role::Remote))?;
        w.flush()?;
        let worker = std::thread::spawn(move || {
            let epoch = Instant::now();
            let mut seq = 0u32;
            loop {
                match read_frame(&mut r) {
                    Ok(Frame::Pose(p)) => {
                        seq += 1;
                        let reply = tactile_reply(&phantom, &p, seq, now_us(epoch), &config);
                        write_frame(&mut w, &Frame::Tactile(reply))?;
                        w.flush()?;
                    }
                    Ok(other) => log::debug!("remote site ignoring frame {:#04x}", other.msg_type()),
                    Err(WireError::Closed) => return Ok(seq as u64),
                    Err(e) => return Err(e.into()),
                }
            }
        });
        Ok(Self {
            stream,
            worker: Some(worker),
        })
    }

    /// Block until the relay closes the link; returns poses answered.
    pub fn wait(mut self) -> Result<u64, TeleError> {
        self.worker.take().map_or(Ok(0), |h| h.join().unwrap_or(Ok(0)))
    }

    pub fn close(mut self) -> Result<u64, TeleError> {
        let _ = self.stream.shutdown(Shutdown::Both);
        match self.worker.take().map_or(Ok(0), |h| h.join().unwrap_or(Ok(0))) {
            // A shutdown mid-read surfaces as an I/O error; that is expected here.
            Err(TeleError::Wire(WireError::Io(_))) => Ok(0),
            r => r,
        }
    }
}
