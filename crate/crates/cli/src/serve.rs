//! Live WebSocket service around the online engine, and log replay.
//!
//! One thread owns the engine. Socket sessions never touch it: they forward parsed
//! requests over a channel and receive pre-serialized frames over their own channel.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use modir_core::eval::tsr;
use modir_core::inference::{write_events, Engine, EngineConfig, Event, InferenceError};
use modir_core::model::ModelCheckpoint;
use modir_core::sim::{success_predicate, Outcome, RobotState, Trace};
use serde_json::json;
use tungstenite::{Message, WebSocket};

use crate::protocol::{parse_inbound, Inbound, MessageType, Role, WireMessage, PROTOCOL_VERSION};

#[derive(Clone, Debug)]
pub struct ServeOptions {
    pub addr: SocketAddr,
    pub rate_hz: f64,
    pub pace: f64,
    /// JSONL event log of everything the engine did.
    pub log: Option<PathBuf>,
}

type Frame = Arc<str>;

enum Control {
    Join { id: u64, tx: Sender<Frame> },
    Leave { id: u64 },
    Request { id: u64, inbound: Inbound },
}

/// A running service; dropping it without `shutdown` leaves the threads running.
pub struct Service {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<Result<()>>>,
}

impl Service {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("ws://{}", self.addr)
    }

    pub fn shutdown(self) -> Result<()> {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the accept loop.
        let _ = TcpStream::connect(self.addr);
        self.join()
    }

    /// Blocks until the service stops.
    pub fn join(self) -> Result<()> {
        for t in self.threads {
            t.join().map_err(|_| anyhow::anyhow!("service thread panicked"))??;
        }
        Ok(())
    }
}

fn send_text(ws: &mut WebSocket<TcpStream>, text: &str) -> bool {
    ws.send(Message::text(text)).is_ok()
}

fn accept_loop(
    listener: TcpListener,
    stop: Arc<AtomicBool>,
    mut on_session: impl FnMut(u64, WebSocket<TcpStream>) + Send + 'static,
) -> JoinHandle<Result<()>> {
    thread::spawn(move || {
        let mut next_id = 0u64;
        for stream in listener.incoming() {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = stream else { continue };
            let Ok(ws) = tungstenite::accept(stream) else { continue };
            next_id += 1;
            on_session(next_id, ws);
        }
        Ok(())
    })
}

fn poll_timeout(ws: &WebSocket<TcpStream>) {
    let _ = ws.get_ref().set_read_timeout(Some(Duration::from_millis(5)));
}

fn is_timeout(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut))
}

fn session(
    id: u64,
    mut ws: WebSocket<TcpStream>,
    control: Sender<Control>,
    tick: Arc<AtomicUsize>,
    stop: Arc<AtomicBool>,
) {
    poll_timeout(&ws);
    let (tx, rx) = mpsc::channel();
    if control.send(Control::Join { id, tx }).is_err() {
        return;
    }
    while !stop.load(Ordering::SeqCst) {
        match ws.read() {
            Ok(Message::Text(text)) => match parse_inbound(text.as_str()) {
                Ok(inbound) => {
                    if control.send(Control::Request { id, inbound }).is_err() {
                        break;
                    }
                }
                Err(msg) => {
                    if !send_text(&mut ws, &WireMessage::error(tick.load(Ordering::SeqCst), msg).to_text()) {
                        break;
                    }
                }
            },
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(e) if is_timeout(&e) => {}
            Err(_) => break,
        }
        let mut alive = true;
        while let Ok(frame) = rx.try_recv() {
            if !send_text(&mut ws, &frame) {
                alive = false;
                break;
            }
        }
        if !alive {
            break;
        }
    }
    let _ = ws.close(None);
    let _ = control.send(Control::Leave { id });
}

struct Hub {
    sessions: Vec<(u64, Sender<Frame>)>,
    controller: Option<u64>,
}

impl Hub {
    fn to(&self, id: u64, msg: &WireMessage) {
        if let Some((_, tx)) = self.sessions.iter().find(|(sid, _)| *sid == id) {
            let _ = tx.send(msg.to_text().into());
        }
    }

    fn broadcast(&mut self, msg: &WireMessage) {
        let frame: Frame = msg.to_text().into();
        self.sessions.retain(|(_, tx)| tx.send(Arc::clone(&frame)).is_ok());
    }

    fn role(&self, id: u64) -> Role {
        if self.controller == Some(id) {
            Role::Controller
        } else {
            Role::Viewer
        }
    }
}

struct Live {
    engine: Engine,
    model: Arc<ModelCheckpoint>,
    hub: Hub,
    tick: Arc<AtomicUsize>,
    log: Option<BufWriter<File>>,
    states: Vec<RobotState>,
    outcomes: Vec<Outcome>,
}

impl Live {
    fn hello(&self, id: u64) -> WireMessage {
        let spec = self.model.model.latent();
        WireMessage::new(
            MessageType::Hello,
            self.engine.tick(),
            json!({
                "protocol_version": PROTOCOL_VERSION,
                "mode": "live",
                "session": id,
                "role": self.hub.role(id),
                "episode": self.engine.episode(),
                "task": self.model.scenario.task,
                "latent": {
                    "directive_names": spec.directive_names,
                    "constrained": spec.directive_names.len(),
                    "unconstrained": spec.unconstrained,
                    "range": [-2.0, 2.0],
                },
                "z": self.engine.z(),
                "scheme": self.engine.scheme().label(),
                "control_dt": self.engine.config().control_dt,
                "command_update_stride": self.engine.config().command_update_stride,
            }),
        )
    }

    fn state(&self) -> WireMessage {
        WireMessage::new(MessageType::State, self.engine.tick(), self.engine.state_payload())
    }

    fn flush_log(&mut self) -> Result<()> {
        let events: Vec<Event> = self.engine.take_events();
        if let Some(log) = &mut self.log {
            write_events(&mut *log, &events)?;
            log.flush()?;
        }
        Ok(())
    }

    fn end_episode(&mut self, outcome: Outcome) -> Result<()> {
        self.flush_log()?;
        self.outcomes.push(outcome.clone());
        let report = tsr(&self.outcomes)?;
        let msg = WireMessage::new(
            MessageType::Metrics,
            self.engine.tick(),
            json!({
                "episode": self.engine.episode(),
                "success": outcome.success,
                "reason": outcome.reason,
                "tsr": report.to_string(),
                "successes": report.successes,
                "episodes": report.total,
            }),
        );
        self.hub.broadcast(&msg);
        self.restart()
    }

    fn restart(&mut self) -> Result<()> {
        self.engine.reset()?;
        self.states = vec![self.engine.state().clone()];
        self.tick.store(0, Ordering::SeqCst);
        let state = self.state();
        self.hub.broadcast(&state);
        Ok(())
    }

    fn handle(&mut self, c: Control) -> Result<()> {
        match c {
            Control::Join { id, tx } => {
                self.hub.sessions.push((id, tx));
                if self.hub.controller.is_none() {
                    self.hub.controller = Some(id);
                }
                self.hub.to(id, &self.hello(id));
            }
            Control::Leave { id } => {
                self.hub.sessions.retain(|(sid, _)| *sid != id);
                if self.hub.controller == Some(id) {
                    self.hub.controller = self.hub.sessions.first().map(|(sid, _)| *sid);
                    if let Some(next) = self.hub.controller {
                        self.hub.to(next, &self.hello(next));
                    }
                }
            }
            Control::Request { id, inbound } => {
                let tick = self.engine.tick();
                if self.hub.controller != Some(id) {
                    let holder = self.hub.controller.map_or("none".to_string(), |c| c.to_string());
                    let msg = format!("viewer cannot control; controller lock held by session {holder}");
                    self.hub.to(id, &WireMessage::error(tick, msg));
                    return Ok(());
                }
                let mailbox = self.engine.mailbox();
                let written = match &inbound {
                    Inbound::SetDim { value, .. } if value.abs() > 2.0 => Err(format!("latent value {value} outside [-2, 2]")),
                    Inbound::SetAll(z) if z.iter().any(|v| v.abs() > 2.0) => Err("latent values must lie in [-2, 2]".to_string()),
                    Inbound::SetDim { dim, value } => mailbox.set_dim(*dim, *value).map(Some).map_err(|e| e.to_string()),
                    Inbound::SetAll(z) => mailbox.set_all(z).map(Some).map_err(|e| e.to_string()),
                    Inbound::SetScheme(s) => {
                        self.engine.set_scheme(*s);
                        Ok(None)
                    }
                    Inbound::Reset => Ok(None),
                };
                match written {
                    Err(msg) => self.hub.to(id, &WireMessage::error(tick, msg)),
                    Ok(Some(version)) => {
                        let stride = self.engine.config().command_update_stride;
                        let applies_at = tick.div_ceil(stride) * stride;
                        let msg = WireMessage::new(
                            MessageType::LatentUpdate,
                            tick,
                            json!({ "z": mailbox.read().0, "version": version, "applies_at": applies_at, "session": id }),
                        );
                        self.hub.broadcast(&msg);
                    }
                    Ok(None) if inbound == Inbound::Reset => {
                        self.flush_log()?;
                        self.restart()?;
                    }
                    Ok(None) => {
                        let state = self.state();
                        self.hub.broadcast(&state);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Starts the live service; returns once the socket is bound.
pub fn serve(model: Arc<ModelCheckpoint>, engine: EngineConfig, opts: ServeOptions) -> Result<Service> {
    let listener = TcpListener::bind(opts.addr).with_context(|| format!("cannot bind {}", opts.addr))?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let tick = Arc::new(AtomicUsize::new(0));
    let (ctl_tx, ctl_rx) = mpsc::channel::<Control>();
    let log = match &opts.log {
        Some(p) => Some(BufWriter::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?)),
        None => None,
    };
    let engine = Engine::new(Arc::clone(&model), engine)?;
    let states = vec![engine.state().clone()];
    let mut live = Live {
        engine,
        model,
        hub: Hub {
            sessions: Vec::new(),
            controller: None,
        },
        tick: Arc::clone(&tick),
        log,
        states,
        outcomes: Vec::new(),
    };
    let engine_stop = Arc::clone(&stop);
    let engine_thread = thread::spawn(move || engine_loop(&mut live, ctl_rx, &engine_stop, &opts));
    let (s_stop, s_tick) = (Arc::clone(&stop), Arc::clone(&tick));
    let acceptor = accept_loop(listener, Arc::clone(&stop), move |id, ws| {
        let (c, t, s) = (ctl_tx.clone(), Arc::clone(&s_tick), Arc::clone(&s_stop));
        thread::spawn(move || session(id, ws, c, t, s));
    });
    Ok(Service {
        addr,
        stop,
        threads: vec![engine_thread, acceptor],
    })
}

fn engine_loop(live: &mut Live, ctl: Receiver<Control>, stop: &AtomicBool, opts: &ServeOptions) -> Result<()> {
    let dt = live.engine.config().control_dt;
    let duration = live.engine.config().duration_ticks.max(1);
    let broadcast_every = if opts.rate_hz > 0.0 { Duration::from_secs_f64(1.0 / opts.rate_hz) } else { Duration::ZERO };
    let mut last_broadcast = Instant::now() - broadcast_every;
    let mut anchor = (Instant::now(), 0u64);
    let mut ticks_run = 0u64;
    while !stop.load(Ordering::SeqCst) {
        while let Ok(c) = ctl.try_recv() {
            live.handle(c)?;
        }
        match live.engine.step() {
            Ok(info) => {
                live.states.push(info.state);
                live.tick.store(info.tick, Ordering::SeqCst);
                if info.regenerated {
                    live.flush_log()?;
                }
                if info.tick >= duration {
                    let trace = Trace {
                        states: std::mem::take(&mut live.states),
                        dt,
                    };
                    let outcome = success_predicate(&trace, &live.model.scenario);
                    live.end_episode(outcome)?;
                }
            }
            Err(InferenceError::Divergence(reason)) => {
                let tick = live.engine.tick();
                live.hub.broadcast(&WireMessage::error(tick, format!("divergence: {reason}")));
                live.end_episode(Outcome::fail(modir_core::sim::predicate::DIVERGENCE))?;
            }
            Err(e) => return Err(e.into()),
        }
        ticks_run += 1;
        if last_broadcast.elapsed() >= broadcast_every {
            let state = live.state();
            live.hub.broadcast(&state);
            last_broadcast = Instant::now();
        }
        if opts.pace > 0.0 {
            let due = anchor.0 + Duration::from_secs_f64((ticks_run - anchor.1) as f64 * dt / opts.pace);
            let now = Instant::now();
            if due > now {
                thread::sleep(due - now);
            } else if now - due > Duration::from_millis(100) {
                // Too far behind to catch up; re-anchor rather than burst.
                anchor = (now, ticks_run);
            }
        }
    }
    live.flush_log()
}

/// Re-serves a recorded event log to every client that connects, paced by its ticks.
/// Clients are viewers; any request gets an error frame.
pub fn replay(events: Vec<Event>, control_dt: f64, opts: ServeOptions) -> Result<Service> {
    let listener = TcpListener::bind(opts.addr).with_context(|| format!("cannot bind {}", opts.addr))?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let events = Arc::new(events);
    let s_stop = Arc::clone(&stop);
    let pace = opts.pace;
    let acceptor = accept_loop(listener, Arc::clone(&stop), move |id, ws| {
        let (events, stop) = (Arc::clone(&events), Arc::clone(&s_stop));
        thread::spawn(move || replay_session(id, ws, &events, control_dt, pace, &stop));
    });
    Ok(Service {
        addr,
        stop,
        threads: vec![acceptor],
    })
}

fn replay_session(id: u64, mut ws: WebSocket<TcpStream>, events: &[Event], dt: f64, pace: f64, stop: &AtomicBool) {
    poll_timeout(&ws);
    let dim = events
        .iter()
        .find_map(|e| e.payload.get("z").and_then(|z| z.as_array()).map(|z| z.len()))
        .unwrap_or(0);
    let hello = WireMessage::new(
        MessageType::Hello,
        0,
        json!({
            "protocol_version": PROTOCOL_VERSION,
            "mode": "replay",
            "session": id,
            "role": Role::Viewer,
            "latent": { "dim": dim, "range": [-2.0, 2.0] },
            "events": events.len(),
        }),
    );
    if !send_text(&mut ws, &hello.to_text()) {
        return;
    }
    let start = Instant::now();
    // Model time keeps advancing across episode restarts in the log.
    let mut elapsed_ticks = 0usize;
    let mut last_tick = 0usize;
    for e in events {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        elapsed_ticks += e.tick.saturating_sub(last_tick);
        last_tick = e.tick;
        if pace > 0.0 {
            let due = start + Duration::from_secs_f64(elapsed_ticks as f64 * dt / pace);
            let now = Instant::now();
            if due > now {
                thread::sleep(due - now);
            }
        }
        match ws.read() {
            Ok(Message::Text(_)) => {
                if !send_text(&mut ws, &WireMessage::error(e.tick, "replay is read-only").to_text()) {
                    return;
                }
            }
            Ok(Message::Close(_)) => return,
            Err(err) if !is_timeout(&err) => return,
            _ => {}
        }
        if !send_text(&mut ws, &WireMessage::from(e).to_text()) {
            return;
        }
    }
    let done = WireMessage::new(MessageType::Metrics, last_tick, json!({ "replay_complete": true }));
    let _ = send_text(&mut ws, &done.to_text());
    let _ = ws.close(None);
    // Drain until the peer acknowledges the close.
    while ws.read().is_ok() {}
}
