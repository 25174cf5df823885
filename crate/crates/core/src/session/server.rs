//! Live session: input streams and reader connections funnel into one loop thread
//! that owns the [`Engine`].

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use tungstenite::Message;

use super::config::{InputSource, ReplaySpeed, SessionConfig};
use super::engine::{Engine, ReaderAction, ReaderLogEntry};
use super::estimator::{ConstructModel, Estimator};
use super::protocol::{ClientMessage, ServerMessage};
use super::{load_model, load_story, SessionError};
use crate::director::{Marker, MARKER_STREAM};
use crate::sensors::{BREATHING_STREAM, EDA_STREAM, GAZE_STREAM, HEAD_STREAM, STATE_STREAM};
use crate::simulator::live::{LiveOptions, LiveSimulator};
use crate::simulator::SubjectProfile;
use crate::transport::net::{list_streams, subscribe};
use crate::transport::{
    local_clock, wall_clock, Inlet, Outlet, Recording, RecordingSummary, RecordingWriter, Registry, Replay, Speed,
    StreamInfo, StreamKind, TransportError, DEFAULT_CAPACITY,
};

const SENSOR_STREAMS: [&str; 5] = [EDA_STREAM, BREATHING_STREAM, GAZE_STREAM, HEAD_STREAM, STATE_STREAM];
const CONNECT_TIMEOUT: Duration = Duration::from_secs(3);
/// Upper bound on `state` messages to the reader.
const STATE_MESSAGE_PERIOD_S: f64 = 0.1;

#[derive(Debug, Default)]
pub struct ServeOptions {
    /// Receives `(sample timestamp, local clock when visible to the story)` for every
    /// consumed sample that changed a `phys_*` variable.
    pub probe: Option<Sender<(f64, f64)>>,
    /// Registry where the marker outlet is published; a private one otherwise.
    pub registry: Option<Registry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionSummary {
    pub story_id: String,
    pub markers: Vec<(f64, Marker)>,
    pub branches: Vec<String>,
    pub variables: BTreeMap<String, f64>,
    pub finished: bool,
    pub samples_consumed: u64,
    pub recording: Option<RecordingSummary>,
}

enum Event {
    Connected(Sender<ServerMessage>),
    Client(f64, ClientMessage),
    Disconnected,
}

/// Keeps the input producers alive for the loop's lifetime.
enum InputHandle {
    Live,
    Replay(Option<JoinHandle<Result<u64, TransportError>>>),
    Simulator(LiveSimulator),
}

pub struct RunningSession {
    ui_addr: SocketAddr,
    registry: Registry,
    stop: Arc<AtomicBool>,
    finished: Arc<AtomicBool>,
    main: Option<JoinHandle<Result<SessionSummary, SessionError>>>,
    acceptor: Option<JoinHandle<()>>,
}

impl RunningSession {
    pub fn ui_addr(&self) -> SocketAddr {
        self.ui_addr
    }

    /// Registry carrying the session's marker outlet.
    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    /// Whether the story has reached its end.
    pub fn story_finished(&self) -> bool {
        self.finished.load(Ordering::SeqCst)
    }

    /// Whether the loop has stopped on its own (e.g. after an error).
    pub fn loop_exited(&self) -> bool {
        self.main.as_ref().is_none_or(|h| h.is_finished())
    }

    /// Stop, flush the recording and reader log, and report.
    pub fn shutdown(mut self) -> Result<SessionSummary, SessionError> {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        match self.main.take() {
            Some(h) => h.join().unwrap_or_else(|_| Err(SessionError::Config("session loop panicked".into()))),
            None => Err(SessionError::Config("session already shut down".into())),
        }
    }
}

impl Drop for RunningSession {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        if let Some(h) = self.main.take() {
            let _ = h.join();
        }
    }
}

pub fn serve(config: &SessionConfig) -> Result<RunningSession, SessionError> {
    serve_with(config, ServeOptions::default())
}

fn open_inputs(config: &SessionConfig) -> Result<(Vec<Inlet>, InputHandle), SessionError> {
    let known = |info: &StreamInfo| info.kind == StreamKind::Signal && SENSOR_STREAMS.contains(&info.name.as_str());
    match &config.input {
        InputSource::Live(addr) => {
            let inlets = list_streams(addr, CONNECT_TIMEOUT)?
                .into_iter()
                .filter(known)
                .map(|info| subscribe(addr, &info.source_id, DEFAULT_CAPACITY, CONNECT_TIMEOUT))
                .collect::<Result<Vec<_>, _>>()?;
            Ok((inlets, InputHandle::Live))
        }
        InputSource::Replay { path, speed } => {
            let recording = Recording::read(path)?;
            let registry = Registry::new();
            let replay = Replay::open(&registry, recording)?;
            let inlets = replay
                .infos()
                .iter()
                .filter(|i| known(i))
                .map(|i| registry.open_inlet(&i.source_id, DEFAULT_CAPACITY))
                .collect::<Result<Vec<_>, _>>()?;
            let speed = match speed {
                ReplaySpeed::Realtime => Speed::Realtime,
                ReplaySpeed::Max => Speed::Max,
            };
            let handle = std::thread::Builder::new()
                .name("pif-replay".into())
                .spawn(move || replay.run(speed))
                .expect("spawn replay thread");
            Ok((inlets, InputHandle::Replay(Some(handle))))
        }
        InputSource::Simulator(sim) => {
            let profile = match &sim.profile {
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(super::io_err(path))?;
                    let p: SubjectProfile =
                        serde_json::from_str(&text).map_err(|e| SessionError::Config(format!("{}: {e}", path.display())))?;
                    p.validate()?;
                    p
                }
                None => SubjectProfile::typical("sim", sim.seed),
            };
            let registry = Registry::new();
            let live = LiveSimulator::start(
                &registry,
                &profile,
                LiveOptions {
                    emit_state: sim.state_rate > 0.0,
                    state_rate: sim.state_rate.max(1e-9),
                    initial: sim.truth,
                    ..Default::default()
                },
            )?;
            let inlets = live
                .infos()
                .iter()
                .map(|i| registry.open_inlet(&i.source_id, DEFAULT_CAPACITY))
                .collect::<Result<Vec<_>, _>>()?;
            Ok((inlets, InputHandle::Simulator(live)))
        }
    }
}

/// Start a session: validates everything up front, then serves until shut down.
pub fn serve_with(config: &SessionConfig, opts: ServeOptions) -> Result<RunningSession, SessionError> {
    config.validate()?;
    let (graph, story_id) = load_story(&config.story)?;
    let models = config
        .models
        .iter()
        .map(|(key, path)| load_model(key, path).map(ConstructModel::new))
        .collect::<Result<Vec<_>, _>>()?;
    let listener = TcpListener::bind(&config.ui).map_err(|source| SessionError::Bind {
        addr: config.ui.clone(),
        source,
    })?;
    let ui_addr = listener.local_addr().map_err(|source| SessionError::Bind {
        addr: config.ui.clone(),
        source,
    })?;

    let (inlets, input) = open_inputs(config)?;
    let infos: Vec<StreamInfo> = inlets.iter().map(|i| i.info().clone()).collect();
    let registry = opts.registry.unwrap_or_default();
    let marker_outlet = registry.open_outlet(StreamInfo::marker(MARKER_STREAM, &format!("{story_id}-markers")))?;

    let writer = match &config.record {
        Some(path) => {
            let mut streams = infos.clone();
            streams.push(marker_outlet.info().clone());
            Some(RecordingWriter::create(path, wall_clock(), &streams)?)
        }
        None => None,
    };
    let reader_log = match &config.reader_log {
        Some(path) => Some(BufWriter::new(File::create(path).map_err(super::io_err(path))?)),
        None => None,
    };
    let estimator = (!models.is_empty()).then(|| Estimator::new(models, config.window_s, config.cadence_s));
    let engine = Engine::new(
        graph,
        config.director_config(),
        estimator,
        infos,
        config.debounce_s,
        local_clock(),
    );

    let stop = Arc::new(AtomicBool::new(false));
    let finished = Arc::new(AtomicBool::new(false));
    let (tx, rx) = channel();
    let hello = ServerMessage::Hello {
        policy: config.policy,
        simulator: config.is_simulator(),
        debounce_s: config.debounce_s,
    };
    let mut ctx = Loop {
        story_id,
        engine,
        inlets,
        input,
        writer,
        reader_log,
        marker_outlet,
        rx,
        client: None,
        hello,
        probe: opts.probe,
        stop: stop.clone(),
        finished: finished.clone(),
        last_state_sent: f64::NEG_INFINITY,
        inputs_open: Vec::new(),
    };
    ctx.inputs_open = vec![true; ctx.inlets.len()];
    let main = std::thread::Builder::new()
        .name("pif-session".into())
        .spawn(move || ctx.run())
        .expect("spawn session thread");
    let acceptor = {
        let stop = stop.clone();
        std::thread::Builder::new()
            .name("pif-ui-accept".into())
            .spawn(move || accept_loop(listener, tx, stop))
            .expect("spawn acceptor thread")
    };
    Ok(RunningSession {
        ui_addr,
        registry,
        stop,
        finished,
        main: Some(main),
        acceptor: Some(acceptor),
    })
}

struct Loop {
    story_id: String,
    engine: Engine,
    inlets: Vec<Inlet>,
    input: InputHandle,
    writer: Option<RecordingWriter<BufWriter<File>>>,
    reader_log: Option<BufWriter<File>>,
    marker_outlet: Outlet,
    rx: Receiver<Event>,
    client: Option<Sender<ServerMessage>>,
    hello: ServerMessage,
    probe: Option<Sender<(f64, f64)>>,
    stop: Arc<AtomicBool>,
    finished: Arc<AtomicBool>,
    last_state_sent: f64,
    inputs_open: Vec<bool>,
}

impl Loop {
    fn run(mut self) -> Result<SessionSummary, SessionError> {
        let result = self.pump();
        let recording = match self.writer.take() {
            Some(mut w) => {
                for inlet in &self.inlets {
                    w.note_overflow(&inlet.info().source_id, inlet.overflow());
                }
                Some(w.finish()?)
            }
            None => None,
        };
        if let Some(mut log) = self.reader_log.take() {
            log.flush().map_err(TransportError::from)?;
        }
        if let InputHandle::Simulator(sim) = self.input {
            sim.stop()?;
        } else if let InputHandle::Replay(Some(h)) = &mut self.input {
            // outlets close when the replay finishes; a stopped session just stops listening
            let _ = h;
        }
        result?;
        Ok(SessionSummary {
            story_id: self.story_id,
            markers: self.engine.markers().to_vec(),
            branches: self.engine.branches().to_vec(),
            variables: self.engine.variables().clone(),
            finished: self.engine.finished(),
            samples_consumed: self.engine.seq(),
            recording,
        })
    }

    fn pump(&mut self) -> Result<(), SessionError> {
        self.flush_markers()?;
        while !self.stop.load(Ordering::SeqCst) {
            self.drain_inputs()?;
            match self.rx.recv_timeout(Duration::from_millis(1)) {
                Ok(ev) => self.on_event(ev)?,
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => std::thread::sleep(Duration::from_millis(1)),
            }
            self.flush_markers()?;
            self.send_state();
        }
        Ok(())
    }

    fn drain_inputs(&mut self) -> Result<(), SessionError> {
        for k in 0..self.inlets.len() {
            if !self.inputs_open[k] {
                continue;
            }
            let batch = match self.inlets[k].pull(4096, Duration::ZERO) {
                Ok(b) => b,
                Err(TransportError::Disconnected) => {
                    self.inputs_open[k] = false;
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            for s in &batch {
                if let Some(w) = &mut self.writer {
                    w.write(&self.inlets[k].info().source_id, s)?;
                }
                if self.engine.on_sample(k, s) {
                    if let Some(p) = &self.probe {
                        let _ = p.send((s.t, local_clock()));
                    }
                }
            }
        }
        Ok(())
    }

    fn send(&mut self, msg: ServerMessage) {
        if let Some(c) = &self.client {
            if c.send(msg).is_err() {
                self.client = None;
            }
        }
    }

    fn send_state(&mut self) {
        let now = local_clock();
        if self.client.is_none() || now - self.last_state_sent < STATE_MESSAGE_PERIOD_S {
            return;
        }
        if let Some(msg) = self.engine.take_state() {
            self.last_state_sent = now;
            self.send(msg);
        }
    }

    fn on_event(&mut self, ev: Event) -> Result<(), SessionError> {
        match ev {
            Event::Connected(c) => {
                self.client = Some(c);
                self.send(self.hello.clone());
                let page = self.engine.page();
                self.send(page);
            }
            Event::Disconnected => self.client = None,
            Event::Client(t, msg) => {
                let action = match msg {
                    ClientMessage::Advance => ReaderAction::Advance,
                    ClientMessage::Choose { index } => ReaderAction::Choose { index },
                    ClientMessage::Sim { values } => {
                        self.on_sim(values);
                        return Ok(());
                    }
                };
                // consume everything that arrived before the action
                self.drain_inputs()?;
                if let Some(log) = &mut self.reader_log {
                    let entry = ReaderLogEntry {
                        seq: self.engine.seq(),
                        t,
                        action,
                    };
                    let line = serde_json::to_string(&entry).map_err(TransportError::from)?;
                    writeln!(log, "{line}").map_err(TransportError::from)?;
                }
                match self.engine.on_reader(t, action) {
                    Ok(page) => {
                        self.send(page);
                        self.finished.store(self.engine.finished(), Ordering::SeqCst);
                    }
                    Err(e) => self.send(ServerMessage::rejected(action.name(), e.to_string())),
                }
            }
        }
        Ok(())
    }

    fn on_sim(&mut self, values: BTreeMap<String, f64>) {
        let InputHandle::Simulator(sim) = &self.input else {
            self.send(ServerMessage::rejected("sim", "input source is not a simulator"));
            return;
        };
        let unknown: Vec<String> = values.iter().filter(|(k, v)| !sim.set(k, **v)).map(|(k, _)| k.clone()).collect();
        if !unknown.is_empty() {
            self.send(ServerMessage::rejected("sim", format!("ignored: {}", unknown.join(", "))));
        }
    }

    fn flush_markers(&mut self) -> Result<(), SessionError> {
        for (t, m) in self.engine.take_markers() {
            let sample = crate::transport::Sample::marker(t, m.label());
            if let Some(w) = &mut self.writer {
                w.write(&self.marker_outlet.info().source_id, &sample)?;
            }
            self.marker_outlet.push(sample)?;
        }
        Ok(())
    }
}

fn accept_loop(listener: TcpListener, tx: Sender<Event>, stop: Arc<AtomicBool>) {
    if listener.set_nonblocking(true).is_err() {
        return;
    }
    let busy = Arc::new(AtomicBool::new(false));
    let mut workers = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let (tx, busy, stop) = (tx.clone(), busy.clone(), stop.clone());
                workers.push(std::thread::spawn(move || connection(stream, tx, busy, stop)));
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                log::warn!("reader accept failed: {e}");
                std::thread::sleep(Duration::from_millis(5));
            }
        }
        workers.retain(|w: &JoinHandle<()>| !w.is_finished());
    }
    for w in workers {
        let _ = w.join();
    }
}

fn connection(stream: TcpStream, tx: Sender<Event>, busy: Arc<AtomicBool>, stop: Arc<AtomicBool>) {
    let _ = stream.set_nonblocking(false);
    let _ = stream.set_nodelay(true);
    let _ = stream.set_read_timeout(Some(CONNECT_TIMEOUT));
    let Ok(mut ws) = tungstenite::accept(stream) else {
        return;
    };
    if busy.swap(true, Ordering::SeqCst) {
        let msg = ServerMessage::rejected("connect", "this session already has a reader");
        let _ = ws.send(Message::text(msg.to_text()));
        let _ = ws.close(None);
        let _ = ws.flush();
        return;
    }
    let (out_tx, out_rx) = channel::<ServerMessage>();
    if tx.send(Event::Connected(out_tx)).is_err() {
        busy.store(false, Ordering::SeqCst);
        return;
    }
    let _ = ws.get_mut().set_read_timeout(Some(Duration::from_millis(5)));
    loop {
        if stop.load(Ordering::SeqCst) {
            let _ = ws.close(None);
            let _ = ws.flush();
            break;
        }
        let mut failed = false;
        while let Ok(m) = out_rx.try_recv() {
            if ws.send(Message::text(m.to_text())).is_err() {
                failed = true;
                break;
            }
        }
        if failed {
            break;
        }
        match ws.read() {
            Ok(Message::Text(text)) => match ClientMessage::parse(text.as_str()) {
                Ok(m) => {
                    if tx.send(Event::Client(local_clock(), m)).is_err() {
                        break;
                    }
                }
                Err(e) => {
                    let msg = ServerMessage::rejected("parse", e.to_string());
                    if ws.send(Message::text(msg.to_text())).is_err() {
                        break;
                    }
                }
            },
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
            Err(_) => break,
        }
    }
    let _ = tx.send(Event::Disconnected);
    busy.store(false, Ordering::SeqCst);
}
