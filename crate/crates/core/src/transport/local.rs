use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, Condvar, Mutex, MutexGuard, Weak};
use std::time::{Duration, Instant};

use super::{Sample, StreamInfo, TransportError};

/// Per-inlet buffer length: eight minutes of a 512 Hz stream.
pub const DEFAULT_CAPACITY: usize = 1 << 18;

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

#[derive(Debug, Default)]
struct QueueState {
    buf: VecDeque<Sample>,
    overflow: u64,
    closed: bool,
}

/// Bounded FIFO between one producer side and one inlet. When full, the incoming
/// sample is dropped and counted, so what is delivered is always a prefix-ordered
/// subsequence of what was pushed.
#[derive(Debug)]
pub(crate) struct Queue {
    state: Mutex<QueueState>,
    ready: Condvar,
    capacity: usize,
}

impl Queue {
    pub(crate) fn new(capacity: usize) -> Arc<Queue> {
        Arc::new(Queue {
            state: Mutex::new(QueueState::default()),
            ready: Condvar::new(),
            capacity: capacity.max(1),
        })
    }

    pub(crate) fn push(&self, s: Sample) {
        let mut st = lock(&self.state);
        if st.buf.len() >= self.capacity {
            st.overflow += 1;
        } else {
            st.buf.push_back(s);
            self.ready.notify_one();
        }
    }

    pub(crate) fn add_overflow(&self, n: u64) {
        lock(&self.state).overflow += n;
    }

    pub(crate) fn close(&self) {
        lock(&self.state).closed = true;
        self.ready.notify_all();
    }
}

#[derive(Debug)]
struct OutletState {
    last_t: Option<f64>,
    subscribers: Vec<Weak<Queue>>,
}

#[derive(Debug)]
struct StreamCore {
    info: StreamInfo,
    state: Mutex<OutletState>,
}

/// Local stream directory. Cloning shares the same directory.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    streams: Arc<Mutex<BTreeMap<String, Arc<StreamCore>>>>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn open_outlet(&self, info: StreamInfo) -> Result<Outlet, TransportError> {
        let info = info.normalized()?;
        let mut streams = lock(&self.streams);
        if streams.contains_key(&info.source_id) {
            return Err(TransportError::DuplicateSource(info.source_id));
        }
        let core = Arc::new(StreamCore {
            info: info.clone(),
            state: Mutex::new(OutletState {
                last_t: None,
                subscribers: Vec::new(),
            }),
        });
        streams.insert(info.source_id.clone(), core.clone());
        Ok(Outlet {
            core,
            registry: self.clone(),
        })
    }

    /// Every registered stream, ordered by source id.
    pub fn list(&self) -> Vec<StreamInfo> {
        lock(&self.streams).values().map(|c| c.info.clone()).collect()
    }

    /// Find a stream by source id, falling back to the first with that name.
    pub fn resolve(&self, key: &str) -> Option<StreamInfo> {
        let streams = lock(&self.streams);
        streams
            .get(key)
            .or_else(|| streams.values().find(|c| c.info.name == key))
            .map(|c| c.info.clone())
    }

    /// Subscribe to a stream; the inlet sees samples pushed from now on.
    pub fn open_inlet(&self, source_id: &str, capacity: usize) -> Result<Inlet, TransportError> {
        let core = lock(&self.streams)
            .get(source_id)
            .cloned()
            .ok_or_else(|| TransportError::UnknownStream(source_id.to_string()))?;
        let queue = Queue::new(capacity);
        lock(&core.state).subscribers.push(Arc::downgrade(&queue));
        Ok(Inlet {
            info: core.info.clone(),
            queue,
        })
    }
}

/// Producer end of a stream. Dropping it unregisters the stream and disconnects inlets.
#[derive(Debug)]
pub struct Outlet {
    core: Arc<StreamCore>,
    registry: Registry,
}

impl Outlet {
    pub fn info(&self) -> &StreamInfo {
        &self.core.info
    }

    /// Deliver to every inlet. Never blocks on a slow consumer.
    pub fn push(&self, sample: Sample) -> Result<(), TransportError> {
        self.core.info.check(&sample)?;
        let mut st = lock(&self.core.state);
        if let Some(prev) = st.last_t {
            if sample.t < prev {
                return Err(TransportError::TimestampRegression {
                    stream: self.core.info.source_id.clone(),
                    prev,
                    t: sample.t,
                });
            }
        }
        st.last_t = Some(sample.t);
        st.subscribers.retain(|w| w.strong_count() > 0);
        let live: Vec<Arc<Queue>> = st.subscribers.iter().filter_map(Weak::upgrade).collect();
        if let Some((last, rest)) = live.split_last() {
            for q in rest {
                q.push(sample.clone());
            }
            last.push(sample);
        }
        Ok(())
    }

    pub fn push_values(&self, t: f64, values: &[f64]) -> Result<(), TransportError> {
        self.push(Sample::values(t, values.to_vec()))
    }

    pub fn push_marker(&self, t: f64, label: impl Into<String>) -> Result<(), TransportError> {
        self.push(Sample::marker(t, label))
    }

    pub fn subscriber_count(&self) -> usize {
        lock(&self.core.state).subscribers.iter().filter(|w| w.strong_count() > 0).count()
    }
}

impl Drop for Outlet {
    fn drop(&mut self) {
        let mut streams = lock(&self.registry.streams);
        if streams.get(&self.core.info.source_id).is_some_and(|c| Arc::ptr_eq(c, &self.core)) {
            streams.remove(&self.core.info.source_id);
        }
        drop(streams);
        for q in lock(&self.core.state).subscribers.iter().filter_map(Weak::upgrade) {
            q.close();
        }
    }
}

/// Consumer end of one stream. Must not be pulled from two threads at once.
#[derive(Debug)]
pub struct Inlet {
    info: StreamInfo,
    queue: Arc<Queue>,
}

impl Inlet {
    pub(crate) fn from_queue(info: StreamInfo, queue: Arc<Queue>) -> Self {
        Inlet { info, queue }
    }

    pub fn info(&self) -> &StreamInfo {
        &self.info
    }

    /// Up to `max_n` samples in push order. Waits at most `timeout` for the first
    /// one; an empty result means nothing arrived in time. Once the producer is
    /// gone and the buffer is drained, returns [`TransportError::Disconnected`].
    pub fn pull(&self, max_n: usize, timeout: Duration) -> Result<Vec<Sample>, TransportError> {
        let deadline = Instant::now() + timeout;
        let mut st = lock(&self.queue.state);
        while st.buf.is_empty() && !st.closed {
            let now = Instant::now();
            if now >= deadline {
                return Ok(Vec::new());
            }
            st = self
                .queue
                .ready
                .wait_timeout(st, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
        if st.buf.is_empty() {
            return Err(TransportError::Disconnected);
        }
        let n = max_n.min(st.buf.len());
        Ok(st.buf.drain(..n).collect())
    }

    /// Samples dropped because this inlet's buffer was full.
    pub fn overflow(&self) -> u64 {
        lock(&self.queue.state).overflow
    }

    pub fn pending(&self) -> usize {
        lock(&self.queue.state).buf.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fifo_and_disconnect() {
        let reg = Registry::new();
        let out = reg.open_outlet(StreamInfo::signal("b", "b1", &["v"], 512.0)).unwrap();
        let inlet = reg.open_inlet("b1", 1024).unwrap();
        for i in 0..512 {
            out.push_values(i as f64 / 512.0, &[i as f64]).unwrap();
        }
        let got = inlet.pull(1024, Duration::from_millis(10)).unwrap();
        assert_eq!(got.len(), 512);
        assert!(got.iter().enumerate().all(|(i, s)| s.as_values() == Some(&[i as f64][..])));
        assert!(inlet.pull(1, Duration::from_millis(1)).unwrap().is_empty());
        drop(out);
        assert!(matches!(inlet.pull(1, Duration::from_millis(1)), Err(TransportError::Disconnected)));
        assert!(reg.list().is_empty());
    }

    #[test]
    fn push_rules() {
        let reg = Registry::new();
        let out = reg.open_outlet(StreamInfo::signal("b", "b1", &["v"], 512.0)).unwrap();
        assert!(matches!(reg.open_outlet(StreamInfo::marker("m", "b1")), Err(TransportError::DuplicateSource(_))));
        assert!(matches!(out.push_values(0.0, &[1.0, 2.0]), Err(TransportError::Arity { .. })));
        assert!(matches!(out.push_marker(0.0, "x"), Err(TransportError::Arity { .. })));
        out.push_values(1.0, &[1.0]).unwrap();
        assert!(matches!(out.push_values(0.5, &[1.0]), Err(TransportError::TimestampRegression { .. })));
        out.push_values(1.0, &[1.0]).unwrap();
        assert!(reg.resolve("b").is_some());
    }

    #[test]
    fn overflow_is_counted() {
        let reg = Registry::new();
        let out = reg.open_outlet(StreamInfo::signal("b", "b1", &["v"], 512.0)).unwrap();
        let inlet = reg.open_inlet("b1", 10).unwrap();
        for i in 0..25 {
            out.push_values(i as f64, &[i as f64]).unwrap();
        }
        assert_eq!(inlet.overflow(), 15);
        let got = inlet.pull(100, Duration::ZERO).unwrap();
        assert_eq!(got.len(), 10);
        assert_eq!(got[9].t, 9.0);
    }

    #[test]
    fn pull_times_out() {
        let reg = Registry::new();
        let _out = reg.open_outlet(StreamInfo::marker("m", "m1")).unwrap();
        let inlet = reg.open_inlet("m1", 4).unwrap();
        let t0 = Instant::now();
        assert!(inlet.pull(1, Duration::from_millis(30)).unwrap().is_empty());
        let waited = t0.elapsed();
        assert!(waited >= Duration::from_millis(30) && waited < Duration::from_millis(500));
    }
}
