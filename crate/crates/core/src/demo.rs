//! Real-time contact demo: the simulated limb, a self-sensing force estimate
//! and a three-colour LED, driven tick by tick.
//!
//! [`DemoEngine`] is the whole simulation and is fully deterministic. It is
//! driven either headless from a script ([`replay`]) or live behind a TCP
//! socket ([`spawn_server`]); the wire format is described in
//! `docs/protocol.md`.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::beam;
use crate::detector::{classify3, ContactLevel};
use crate::error::{domain, Error, Result};
use crate::estimators::SwitchingModel;
use crate::io::SCHEMA_VERSION;
use crate::plant::{Plant, PlantParams};
use crate::safety::{Babbler, BabblerGains};

pub const MAX_SETPOINT_DEG: f64 = 45.0;
const MAX_LINE_BYTES: u64 = 64 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    pub tick_s: f64,
    pub seed: u64,
    pub setpoint_deg: f64,
    /// Kept at the operational limit so the estimator stays inside the range
    /// its pose model was fitted on.
    pub t_max: f64,
    pub gamma: f64,
    /// Give of the pushing finger, mm/N. Also used by the estimator to turn
    /// a pose deficit into a force.
    pub human_compliance_mm_per_n: f64,
    pub contact_threshold_n: f64,
    pub high_threshold_n: f64,
    pub heartbeat_s: f64,
    pub port: u16,
    /// Unlogged ticks run at start and after a reset so tick 0 begins at a
    /// settled hold rather than a cold limb.
    pub warmup_ticks: u64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            tick_s: 0.1,
            seed: 7,
            setpoint_deg: 25.0,
            t_max: 95.0,
            gamma: 0.9,
            human_compliance_mm_per_n: 40.0,
            contact_threshold_n: 0.1,
            high_threshold_n: 0.5,
            heartbeat_s: 5.0,
            port: 8090,
            warmup_ticks: 300,
        }
    }
}

impl DemoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tick_s > 0.0 && self.heartbeat_s > 0.0) {
            return Err(domain("tick and heartbeat periods must be positive"));
        }
        if !(0.0..=MAX_SETPOINT_DEG).contains(&self.setpoint_deg) {
            return Err(domain(format!("setpoint must lie in [0, {MAX_SETPOINT_DEG}]°")));
        }
        if !(self.human_compliance_mm_per_n > 0.0) {
            return Err(domain("finger compliance must be positive"));
        }
        if !(0.0 <= self.contact_threshold_n && self.contact_threshold_n < self.high_threshold_n) {
            return Err(domain("LED thresholds must satisfy 0 ≤ contact < high"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Led {
    Green,
    Blue,
    Red,
}

impl From<ContactLevel> for Led {
    fn from(level: ContactLevel) -> Self {
        match level {
            ContactLevel::None => Led::Green,
            ContactLevel::Contact => Led::Blue,
            ContactLevel::High => Led::Red,
        }
    }
}

/// Snapshot broadcast once per tick. Angles in rad, forces in N.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemoState {
    pub tick: u64,
    /// Pose estimated from temperature and resistance alone.
    pub theta_hat: f64,
    /// Bend sensor reading.
    pub theta_meas: f64,
    pub theta_true: f64,
    pub f_ext_hat: f64,
    pub f_ext_true: f64,
    pub led: Led,
    pub temperature: f64,
    pub resistance: f64,
    pub voltage: f64,
    pub setpoint: f64,
    pub human_force: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Command {
    SetForce { force_n: f64 },
    SetSetpoint { theta_deg: f64 },
    Reset,
}

impl Command {
    pub fn verb(&self) -> &'static str {
        match self {
            Command::SetForce { .. } => "set_force",
            Command::SetSetpoint { .. } => "set_setpoint",
            Command::Reset => "reset",
        }
    }

    pub fn to_json(&self) -> String {
        match self {
            Command::SetForce { force_n } => {
                serde_json::json!({ "cmd": "set_force", "force_N": force_n }).to_string()
            }
            Command::SetSetpoint { theta_deg } => {
                serde_json::json!({ "cmd": "set_setpoint", "theta_deg": theta_deg }).to_string()
            }
            Command::Reset => serde_json::json!({ "cmd": "reset" }).to_string(),
        }
    }
}

/// Parse and range-check one client message.
pub fn parse_command(line: &str) -> Result<Command> {
    let value: Value = serde_json::from_str(line.trim())
        .map_err(|e| domain(format!("malformed message: {e}")))?;
    let Value::Object(mut obj) = value else {
        return Err(domain("message must be a JSON object"));
    };
    let verb = match obj.remove("cmd") {
        Some(Value::String(s)) => s,
        _ => return Err(domain("message needs a string \"cmd\" field")),
    };
    let cmd = match verb.as_str() {
        "set_force" => {
            let force_n = take_number(&mut obj, "force_N", &verb)?;
            if !(force_n >= 0.0) {
                return Err(domain(format!("set_force: force_N must be ≥ 0, got {force_n}")));
            }
            Command::SetForce { force_n }
        }
        "set_setpoint" => {
            let theta_deg = take_number(&mut obj, "theta_deg", &verb)?;
            if !(0.0..=MAX_SETPOINT_DEG).contains(&theta_deg) {
                return Err(domain(format!(
                    "set_setpoint: theta_deg must lie in [0, {MAX_SETPOINT_DEG}], got {theta_deg}"
                )));
            }
            Command::SetSetpoint { theta_deg }
        }
        "reset" => Command::Reset,
        other => return Err(domain(format!("unknown command {other:?}"))),
    };
    if let Some(extra) = obj.keys().next() {
        return Err(domain(format!("{verb}: unexpected field {extra:?}")));
    }
    Ok(cmd)
}

fn take_number(obj: &mut Map<String, Value>, key: &str, verb: &str) -> Result<f64> {
    obj.remove(key)
        .and_then(|v| v.as_f64())
        .ok_or_else(|| domain(format!("{verb}: needs a numeric {key:?} field")))
}

/// The authoritative demo simulation.
#[derive(Debug, Clone)]
pub struct DemoEngine {
    cfg: DemoConfig,
    gains: BabblerGains,
    pose: SwitchingModel,
    plant: Plant,
    babbler: Babbler,
    tick: u64,
    theta_meas: f64,
    human_force: f64,
}

impl DemoEngine {
    pub fn new(cfg: DemoConfig, params: PlantParams, gains: BabblerGains, pose: SwitchingModel) -> Result<Self> {
        cfg.validate()?;
        pose.validate()?;
        let safety = params.safety(cfg.t_max, cfg.gamma)?;
        let plant = Plant::new(params, safety, None, cfg.tick_s, cfg.seed)?;
        let babbler = Babbler::constant(gains, cfg.setpoint_deg.to_radians())?;
        let mut engine = DemoEngine { cfg, gains, pose, plant, babbler, tick: 0, theta_meas: 0.0, human_force: 0.0 };
        engine.warm_up()?;
        Ok(engine)
    }

    fn warm_up(&mut self) -> Result<()> {
        for _ in 0..self.cfg.warmup_ticks {
            let u_nom = self.babbler.step(self.theta_meas, self.cfg.tick_s);
            self.theta_meas = self.plant.step(u_nom)?.theta;
        }
        Ok(())
    }

    pub fn config(&self) -> &DemoConfig {
        &self.cfg
    }

    /// Ticks simulated so far.
    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// Takes effect on the next [`step`](Self::step).
    pub fn apply(&mut self, cmd: Command) -> Result<()> {
        match cmd {
            Command::SetForce { force_n } => {
                self.plant.set_human_load(force_n, self.cfg.human_compliance_mm_per_n)?;
                self.human_force = force_n;
            }
            Command::SetSetpoint { theta_deg } => {
                if !(0.0..=MAX_SETPOINT_DEG).contains(&theta_deg) {
                    return Err(domain(format!("setpoint {theta_deg}° outside [0, {MAX_SETPOINT_DEG}]")));
                }
                self.babbler.set_setpoint(theta_deg.to_radians());
            }
            Command::Reset => {
                self.plant.reset();
                self.babbler = Babbler::constant(self.gains, self.cfg.setpoint_deg.to_radians())?;
                self.theta_meas = 0.0;
                self.human_force = 0.0;
                self.warm_up()?;
            }
        }
        Ok(())
    }

    /// External force implied by the gap between the pose the muscle should
    /// produce and the pose the bend sensor reports.
    pub fn estimate_force(&self, temperature: f64, resistance: f64, theta_meas: f64) -> Result<f64> {
        let limb = &self.pose.limb;
        let f_sma = self
            .pose
            .predict_sma_force(temperature, resistance)
            .clamp(0.0, limb.max_reachable_force());
        let free = limb.length() / limb.zeta() * f_sma;
        let seen = beam::tip_displacement(theta_meas, limb.length())?;
        Ok(((free - seen) / self.cfg.human_compliance_mm_per_n).max(0.0))
    }

    pub fn step(&mut self) -> Result<DemoState> {
        let u_nom = self.babbler.step(self.theta_meas, self.cfg.tick_s);
        let frame = self.plant.step(u_nom)?;
        self.theta_meas = frame.theta;
        let f_ext_hat = self.estimate_force(frame.temperature, frame.resistance, frame.theta)?;
        let level = classify3(f_ext_hat, self.cfg.contact_threshold_n, self.cfg.high_threshold_n)?;
        let state = DemoState {
            tick: self.tick,
            theta_hat: self.pose.predict_pose(frame.temperature, frame.resistance),
            theta_meas: frame.theta,
            theta_true: self.plant.state().theta,
            f_ext_hat,
            f_ext_true: frame.f_ext,
            led: level.into(),
            temperature: frame.temperature,
            resistance: frame.resistance,
            voltage: frame.voltage,
            setpoint: self.babbler.setpoint(),
            human_force: self.human_force,
        };
        self.tick += 1;
        Ok(state)
    }
}

/// A command scheduled for a tick of a headless run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptEntry {
    pub tick: u64,
    pub command: Command,
}

/// Script lines are `<tick> <json command>`; blank lines and `#` comments are
/// skipped. Ticks must not decrease.
pub fn parse_script(text: &str, origin: &Path) -> Result<Vec<ScriptEntry>> {
    let err = |line: usize, message: String| Error::Parse { path: origin.to_path_buf(), line: line as u64 + 1, message };
    let mut out: Vec<ScriptEntry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (tick, json) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| err(i, "expected `<tick> <command>`".into()))?;
        let tick: u64 = tick.parse().map_err(|e| err(i, format!("tick {tick:?}: {e}")))?;
        if out.last().is_some_and(|prev| prev.tick > tick) {
            return Err(err(i, format!("tick {tick} is earlier than the previous command")));
        }
        let command = parse_command(json).map_err(|e| err(i, e.to_string()))?;
        out.push(ScriptEntry { tick, command });
    }
    Ok(out)
}

/// Run `ticks` ticks, applying each scripted command just before its tick.
pub fn replay(engine: &mut DemoEngine, script: &[ScriptEntry], ticks: u64) -> Result<Vec<DemoState>> {
    let mut pending = script.iter().peekable();
    let mut log = Vec::with_capacity(ticks as usize);
    for _ in 0..ticks {
        while let Some(entry) = pending.next_if(|e| e.tick <= engine.tick()) {
            engine.apply(entry.command)?;
        }
        log.push(engine.step()?);
    }
    Ok(log)
}

/// One JSON object per line.
pub fn states_to_jsonl(states: &[DemoState]) -> Result<String> {
    let mut out = String::new();
    for s in states {
        out.push_str(&serde_json::to_string(s)?);
        out.push('\n');
    }
    Ok(out)
}

/// Messages the server sends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        schema_version: u32,
        tick_s: f64,
        contact_threshold_n: f64,
        high_threshold_n: f64,
    },
    State {
        schema_version: u32,
        #[serde(flatten)]
        state: DemoState,
    },
    Ack {
        cmd: String,
    },
    Error {
        message: String,
    },
    Heartbeat {
        tick: u64,
    },
}

impl ServerMessage {
    fn line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("server messages always serialize");
        s.push('\n');
        s
    }
}

enum Event {
    Connected { id: u64, outbox: Sender<String>, stream: TcpStream },
    Line { id: u64, text: String },
    Dropped { id: u64 },
}

/// A server running on background threads.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    sim: Option<JoinHandle<Result<()>>>,
    acceptor: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stop_flag(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.stop)
    }

    /// Block until the server stops on its own or via the stop flag.
    pub fn join(mut self) -> Result<()> {
        self.wait()
    }

    pub fn shutdown(mut self) -> Result<()> {
        self.stop.store(true, Ordering::SeqCst);
        self.wait()
    }

    fn wait(&mut self) -> Result<()> {
        let sim = self.sim.take().map(|h| h.join());
        self.stop.store(true, Ordering::SeqCst);
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        match sim {
            Some(Ok(result)) => result,
            Some(Err(_)) => Err(Error::Validation("simulation thread panicked".into())),
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
    }
}

/// Bind `addr` and serve `engine` until the stop flag is raised.
///
/// One thread owns the engine and runs the tick loop; connections talk to it
/// only through channels.
pub fn spawn_server(engine: DemoEngine, addr: impl ToSocketAddrs) -> Result<ServerHandle> {
    let listener = TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let local = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let (events_tx, events_rx) = mpsc::channel();

    let acceptor = {
        let stop = Arc::clone(&stop);
        thread::spawn(move || accept_loop(listener, events_tx, stop))
    };
    let sim = {
        let stop = Arc::clone(&stop);
        thread::spawn(move || tick_loop(engine, events_rx, stop))
    };
    Ok(ServerHandle { addr: local, stop, sim: Some(sim), acceptor: Some(acceptor) })
}

fn accept_loop(listener: TcpListener, events: Sender<Event>, stop: Arc<AtomicBool>) {
    let mut next_id = 0u64;
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let id = next_id;
                next_id += 1;
                if start_connection(id, stream, events.clone()).is_err() {
                    continue;
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(10)),
            Err(_) => thread::sleep(Duration::from_millis(10)),
        }
    }
}

fn start_connection(id: u64, stream: TcpStream, events: Sender<Event>) -> std::io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let mut writer = stream.try_clone()?;
    let reader = stream.try_clone()?;
    let (outbox, inbox) = mpsc::channel::<String>();
    if events.send(Event::Connected { id, outbox, stream }).is_err() {
        return Ok(());
    }
    thread::spawn(move || {
        for line in inbox {
            if writer.write_all(line.as_bytes()).is_err() {
                break;
            }
        }
        let _ = writer.shutdown(Shutdown::Both);
    });
    thread::spawn(move || {
        let mut reader = BufReader::new(reader);
        loop {
            let mut buf = Vec::new();
            let read = (&mut reader).take(MAX_LINE_BYTES).read_until(b'\n', &mut buf);
            let ok = match read {
                Ok(0) => false,
                Ok(_) if !buf.ends_with(b"\n") && buf.len() as u64 >= MAX_LINE_BYTES => false,
                Ok(_) => match String::from_utf8(buf) {
                    Ok(text) => events.send(Event::Line { id, text }).is_ok(),
                    Err(_) => false,
                },
                Err(_) => false,
            };
            if !ok {
                let _ = events.send(Event::Dropped { id });
                break;
            }
        }
    });
    Ok(())
}

struct Client {
    outbox: Sender<String>,
    stream: TcpStream,
}

fn tick_loop(mut engine: DemoEngine, events: Receiver<Event>, stop: Arc<AtomicBool>) -> Result<()> {
    let cfg = *engine.config();
    let period = Duration::from_secs_f64(cfg.tick_s);
    let heartbeat = Duration::from_secs_f64(cfg.heartbeat_s);
    let hello = ServerMessage::Hello {
        schema_version: SCHEMA_VERSION,
        tick_s: cfg.tick_s,
        contact_threshold_n: cfg.contact_threshold_n,
        high_threshold_n: cfg.high_threshold_n,
    }
    .line();
    let mut clients: BTreeMap<u64, Client> = BTreeMap::new();
    let start = Instant::now();
    let mut last_heartbeat = start;
    let mut n: u32 = 0;

    let result = loop {
        if stop.load(Ordering::SeqCst) {
            break Ok(());
        }
        while let Ok(event) = events.try_recv() {
            match event {
                Event::Connected { id, outbox, stream } => {
                    let _ = outbox.send(hello.clone());
                    clients.insert(id, Client { outbox, stream });
                }
                Event::Line { id, text } => {
                    if text.trim().is_empty() {
                        continue;
                    }
                    let reply = match parse_command(&text).and_then(|cmd| engine.apply(cmd).map(|()| cmd)) {
                        Ok(cmd) => ServerMessage::Ack { cmd: cmd.verb().to_string() },
                        Err(e) => ServerMessage::Error { message: e.to_string() },
                    };
                    if let Some(c) = clients.get(&id) {
                        let _ = c.outbox.send(reply.line());
                    }
                }
                Event::Dropped { id } => {
                    if let Some(c) = clients.remove(&id) {
                        let _ = c.stream.shutdown(Shutdown::Both);
                    }
                }
            }
        }

        let state = match engine.step() {
            Ok(s) => s,
            Err(e) => break Err(e),
        };
        let line = ServerMessage::State { schema_version: SCHEMA_VERSION, state }.line();
        clients.retain(|_, c| c.outbox.send(line.clone()).is_ok());

        let now = Instant::now();
        if now.duration_since(last_heartbeat) >= heartbeat {
            last_heartbeat = now;
            let beat = ServerMessage::Heartbeat { tick: state.tick }.line();
            clients.retain(|_, c| c.outbox.send(beat.clone()).is_ok());
        }

        // Deadlines are absolute so sleep error does not accumulate.
        n = n.saturating_add(1);
        let deadline = start + period * n;
        if let Some(wait) = deadline.checked_duration_since(Instant::now()) {
            thread::sleep(wait);
        }
    };
    for (_, c) in clients {
        let _ = c.stream.shutdown(Shutdown::Both);
    }
    result
}
