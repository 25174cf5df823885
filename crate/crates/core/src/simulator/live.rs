//! Real-time simulation: a background thread advances a [`Generator`] against the
//! local clock and pushes samples through transport outlets. Ground truth can be
//! steered while it runs.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use super::{Generator, GroundTruth, SubjectProfile, PHYSIO_FS};
use crate::sensors::{BREATHING_STREAM, EDA_STREAM, GAZE_OFF, GAZE_STREAM, HEAD_STREAM, STATE_STREAM};
use crate::transport::{local_clock, Outlet, Registry, StreamInfo, TransportError};

#[derive(Debug, Clone, PartialEq)]
pub struct LiveOptions {
    /// Source-id prefix of the opened streams.
    pub source: String,
    /// How often the generator catches up with the clock.
    pub tick: Duration,
    /// Also publish the current ground truth on a `state` stream at `state_rate` Hz.
    pub emit_state: bool,
    pub state_rate: f64,
    /// Ground truth at start.
    pub initial: GroundTruth,
}

impl Default for LiveOptions {
    fn default() -> Self {
        LiveOptions {
            source: "sim".into(),
            tick: Duration::from_millis(10),
            emit_state: true,
            state_rate: 10.0,
            initial: GroundTruth::default(),
        }
    }
}

struct Outlets {
    eda: Outlet,
    breathing: Outlet,
    gaze: Outlet,
    head: Outlet,
    state: Option<Outlet>,
}

pub struct LiveSimulator {
    truth: Arc<Mutex<GroundTruth>>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<Result<(), TransportError>>>,
    infos: Vec<StreamInfo>,
}

impl LiveSimulator {
    /// Open the outlets and start streaming. Sample time 0 is the local clock at start.
    pub fn start(registry: &Registry, profile: &SubjectProfile, opts: LiveOptions) -> Result<Self, TransportError> {
        let src = &opts.source;
        let open = |info: StreamInfo| registry.open_outlet(info);
        let outlets = Outlets {
            eda: open(StreamInfo::signal(EDA_STREAM, &format!("{src}-eda"), &["eda_us"], PHYSIO_FS))?,
            breathing: open(StreamInfo::signal(BREATHING_STREAM, &format!("{src}-breathing"), &["resp"], PHYSIO_FS))?,
            gaze: open(StreamInfo::signal(GAZE_STREAM, &format!("{src}-gaze"), &["x", "y", "pupil"], super::GAZE_FS))?,
            head: open(StreamInfo::signal(HEAD_STREAM, &format!("{src}-head"), &["w", "x", "y", "z"], super::HEAD_FS))?,
            state: if opts.emit_state {
                Some(open(StreamInfo::signal(
                    STATE_STREAM,
                    &format!("{src}-state"),
                    &GroundTruth::KEYS,
                    opts.state_rate,
                ))?)
            } else {
                None
            },
        };
        let mut infos = vec![
            outlets.eda.info().clone(),
            outlets.breathing.info().clone(),
            outlets.gaze.info().clone(),
            outlets.head.info().clone(),
        ];
        infos.extend(outlets.state.as_ref().map(|o| o.info().clone()));

        let truth = Arc::new(Mutex::new(opts.initial));
        let stop = Arc::new(AtomicBool::new(false));
        let generator = Generator::new(profile);
        let handle = {
            let (truth, stop) = (truth.clone(), stop.clone());
            std::thread::Builder::new()
                .name("pif-live-sim".into())
                .spawn(move || run(generator, outlets, truth, stop, opts))
                .expect("spawn simulator thread")
        };
        Ok(LiveSimulator {
            truth,
            stop,
            handle: Some(handle),
            infos,
        })
    }

    pub fn infos(&self) -> &[StreamInfo] {
        &self.infos
    }

    pub fn truth(&self) -> GroundTruth {
        *self.truth.lock().expect("truth lock")
    }

    /// Steer one ground-truth dimension; false for unknown keys or non-finite values.
    pub fn set(&self, key: &str, value: f64) -> bool {
        self.truth.lock().expect("truth lock").set(key, value)
    }

    /// Stop streaming and close the outlets.
    pub fn stop(mut self) -> Result<(), TransportError> {
        self.shutdown()
    }

    fn shutdown(&mut self) -> Result<(), TransportError> {
        self.stop.store(true, Ordering::SeqCst);
        match self.handle.take() {
            Some(h) => h.join().unwrap_or(Err(TransportError::Disconnected)),
            None => Ok(()),
        }
    }
}

impl Drop for LiveSimulator {
    fn drop(&mut self) {
        let _ = self.shutdown();
    }
}

fn run(
    mut gen: Generator,
    out: Outlets,
    truth: Arc<Mutex<GroundTruth>>,
    stop: Arc<AtomicBool>,
    opts: LiveOptions,
) -> Result<(), TransportError> {
    let start = local_clock();
    let dt = 1.0 / PHYSIO_FS;
    let mut next_state = 0usize;
    while !stop.load(Ordering::SeqCst) {
        let now = local_clock() - start;
        let t_gen = gen.time();
        let current = *truth.lock().expect("truth lock");
        let chunk = gen.advance(now, &current);
        for (i, (&e, &b)) in chunk.eda.iter().zip(&chunk.breathing).enumerate() {
            let t = start + t_gen + i as f64 * dt;
            out.eda.push_values(t, &[e])?;
            out.breathing.push_values(t, &[b])?;
        }
        for g in &chunk.gaze {
            let v = match (g.pos, g.pupil) {
                (Some([x, y]), p) => [x, y, p.unwrap_or(0.0)],
                (None, p) => [GAZE_OFF, GAZE_OFF, p.unwrap_or(0.0)],
            };
            out.gaze.push_values(start + g.t, &v)?;
        }
        for h in &chunk.head {
            out.head.push_values(start + h.t, &h.q)?;
        }
        if let Some(state) = &out.state {
            while (next_state as f64) / opts.state_rate <= now {
                let t = next_state as f64 / opts.state_rate;
                state.push_values(start + t, &[current.arousal, current.valence, current.difficulty])?;
                next_state += 1;
            }
        }
        std::thread::sleep(opts.tick);
    }
    Ok(())
}
