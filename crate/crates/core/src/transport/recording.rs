//! `.pifrec` files: JSON Lines with one header, one record per stream, then data.
//!
//! ```text
//! {"pifrec":1,"session_start":1760000000.5}
//! {"stream":{"name":"breathing","kind":"signal",...}}
//! {"s":"breathing-1","t":12.001953,"v":[0.42]}
//! {"s":"markers-1","t":12.5,"v":"PAGE:0"}
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{local_clock, Inlet, Outlet, Payload, Registry, Sample, StreamInfo, TransportError};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum Line {
    Header { pifrec: u32, session_start: f64 },
    Stream { stream: StreamInfo },
    Data { s: String, t: f64, v: Payload },
}

#[derive(Serialize)]
struct DataRef<'a> {
    s: &'a str,
    t: f64,
    v: &'a Payload,
}

/// A whole recording in memory. Samples keep file order and refer to `streams` by index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Recording {
    /// Wall-clock seconds since the Unix epoch at session start.
    pub session_start: f64,
    pub streams: Vec<StreamInfo>,
    pub samples: Vec<(usize, Sample)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSummary {
    pub source_id: String,
    pub name: String,
    pub samples: u64,
    pub overflow: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingSummary {
    pub streams: Vec<StreamSummary>,
    pub total_samples: u64,
    pub total_overflow: u64,
}

impl Recording {
    pub fn read(path: impl AsRef<Path>) -> Result<Recording, TransportError> {
        Self::parse(BufReader::new(File::open(path)?))
    }

    /// Parse and validate. Damage anywhere yields [`TransportError::Corrupt`] carrying the
    /// byte offset of the bad line and every sample before it.
    pub fn parse(mut r: impl BufRead) -> Result<Recording, TransportError> {
        let mut rec = Recording::default();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut last_t: Vec<Option<f64>> = Vec::new();
        let mut seen_header = false;
        let mut offset = 0u64;
        let mut line_no = 0usize;
        let mut buf = Vec::new();
        loop {
            buf.clear();
            let n = r.read_until(b'\n', &mut buf)?;
            if n == 0 {
                break;
            }
            line_no += 1;
            let start = offset;
            offset += n as u64;
            let corrupt = |rec: &Recording, reason: String| TransportError::Corrupt {
                offset: start,
                line: line_no,
                reason,
                recovered: Box::new(rec.clone()),
            };
            if buf.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            let line: Line = match serde_json::from_slice(&buf) {
                Ok(l) => l,
                Err(e) => {
                    let what = if buf.last() != Some(&b'\n') { "truncated record" } else { "malformed record" };
                    return Err(corrupt(&rec, format!("{what}: {e}")));
                }
            };
            match line {
                Line::Header { pifrec, session_start } => {
                    if seen_header {
                        return Err(corrupt(&rec, "second header".into()));
                    }
                    if pifrec != FORMAT_VERSION {
                        return Err(corrupt(&rec, format!("unsupported version {pifrec}")));
                    }
                    seen_header = true;
                    rec.session_start = session_start;
                }
                _ if !seen_header => return Err(corrupt(&rec, "missing header".into())),
                Line::Stream { stream } => {
                    let stream = stream.normalized().map_err(|e| corrupt(&rec, e.to_string()))?;
                    if index.contains_key(&stream.source_id) {
                        return Err(corrupt(&rec, format!("duplicate stream `{}`", stream.source_id)));
                    }
                    index.insert(stream.source_id.clone(), rec.streams.len());
                    rec.streams.push(stream);
                    last_t.push(None);
                }
                Line::Data { s, t, v } => {
                    let Some(&i) = index.get(&s) else {
                        return Err(corrupt(&rec, format!("sample for undeclared stream `{s}`")));
                    };
                    let sample = Sample { t, v };
                    rec.streams[i].check(&sample).map_err(|e| corrupt(&rec, e.to_string()))?;
                    if last_t[i].is_some_and(|p| t < p) {
                        return Err(corrupt(&rec, format!("timestamp regression on `{s}`")));
                    }
                    last_t[i] = Some(t);
                    rec.samples.push((i, sample));
                }
            }
        }
        if !seen_header {
            return Err(TransportError::Corrupt {
                offset: 0,
                line: 0,
                reason: "missing header".into(),
                recovered: Box::new(rec),
            });
        }
        Ok(rec)
    }

    pub fn write_to(&self, w: impl Write) -> Result<RecordingSummary, TransportError> {
        let mut out = RecordingWriter::new(w, self.session_start, &self.streams)?;
        for (i, s) in &self.samples {
            out.write_at(*i, s)?;
        }
        out.finish()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<RecordingSummary, TransportError> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn stream(&self, key: &str) -> Option<usize> {
        self.streams
            .iter()
            .position(|s| s.source_id == key)
            .or_else(|| self.streams.iter().position(|s| s.name == key))
    }

    /// Samples of one stream in order.
    pub fn samples_of(&self, stream: usize) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |(i, _)| *i == stream).map(|(_, s)| s)
    }

    pub fn first_timestamp(&self) -> Option<f64> {
        self.samples.iter().map(|(_, s)| s.t).min_by(f64::total_cmp)
    }

    /// Shift every timestamp so the earliest sample lands on `base`; deltas are kept.
    pub fn rebased(&self, base: f64) -> Recording {
        let t0 = self.first_timestamp().unwrap_or(0.0);
        let mut out = self.clone();
        for (_, s) in &mut out.samples {
            s.t = base + (s.t - t0);
        }
        out
    }

    pub fn summary(&self) -> RecordingSummary {
        let mut counts = vec![0u64; self.streams.len()];
        for (i, _) in &self.samples {
            counts[*i] += 1;
        }
        summarize(&self.streams, &counts, &vec![0; self.streams.len()])
    }
}

fn summarize(streams: &[StreamInfo], counts: &[u64], overflow: &[u64]) -> RecordingSummary {
    let streams: Vec<StreamSummary> = streams
        .iter()
        .zip(counts)
        .zip(overflow)
        .map(|((info, &samples), &overflow)| StreamSummary {
            source_id: info.source_id.clone(),
            name: info.name.clone(),
            samples,
            overflow,
        })
        .collect();
    RecordingSummary {
        total_samples: streams.iter().map(|s| s.samples).sum(),
        total_overflow: streams.iter().map(|s| s.overflow).sum(),
        streams,
    }
}

/// Append-only `.pifrec` writer.
pub struct RecordingWriter<W: Write> {
    w: W,
    streams: Vec<StreamInfo>,
    index: HashMap<String, usize>,
    counts: Vec<u64>,
    overflow: Vec<u64>,
}

impl RecordingWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, session_start: f64, streams: &[StreamInfo]) -> Result<Self, TransportError> {
        Self::new(BufWriter::new(File::create(path)?), session_start, streams)
    }
}

impl<W: Write> RecordingWriter<W> {
    pub fn new(mut w: W, session_start: f64, streams: &[StreamInfo]) -> Result<Self, TransportError> {
        serde_json::to_writer(
            &mut w,
            &Line::Header {
                pifrec: FORMAT_VERSION,
                session_start,
            },
        )?;
        w.write_all(b"\n")?;
        let mut index = HashMap::new();
        for (i, s) in streams.iter().enumerate() {
            if index.insert(s.source_id.clone(), i).is_some() {
                return Err(TransportError::DuplicateSource(s.source_id.clone()));
            }
            serde_json::to_writer(&mut w, &Line::Stream { stream: s.clone() })?;
            w.write_all(b"\n")?;
        }
        Ok(RecordingWriter {
            w,
            streams: streams.to_vec(),
            index,
            counts: vec![0; streams.len()],
            overflow: vec![0; streams.len()],
        })
    }

    pub fn write(&mut self, source_id: &str, sample: &Sample) -> Result<(), TransportError> {
        let i = *self
            .index
            .get(source_id)
            .ok_or_else(|| TransportError::UnknownStream(source_id.to_string()))?;
        self.write_at(i, sample)
    }

    fn write_at(&mut self, i: usize, sample: &Sample) -> Result<(), TransportError> {
        serde_json::to_writer(
            &mut self.w,
            &DataRef {
                s: &self.streams[i].source_id,
                t: sample.t,
                v: &sample.v,
            },
        )?;
        self.w.write_all(b"\n")?;
        self.counts[i] += 1;
        Ok(())
    }

    pub fn note_overflow(&mut self, source_id: &str, n: u64) {
        if let Some(&i) = self.index.get(source_id) {
            self.overflow[i] = n;
        }
    }

    pub fn flush(&mut self) -> Result<(), TransportError> {
        Ok(self.w.flush()?)
    }

    pub fn finish(mut self) -> Result<RecordingSummary, TransportError> {
        self.w.flush()?;
        Ok(summarize(&self.streams, &self.counts, &self.overflow))
    }
}

/// Drain `inlets` into a writer until every producer disconnects or `stop` is set
/// (then whatever is already buffered is still written). Overflow per inlet is
/// reported in the summary.
pub fn record_to<W: Write>(
    inlets: &[Inlet],
    w: W,
    session_start: f64,
    stop: &AtomicBool,
) -> Result<RecordingSummary, TransportError> {
    let infos: Vec<StreamInfo> = inlets.iter().map(|i| i.info().clone()).collect();
    let mut out = RecordingWriter::new(w, session_start, &infos)?;
    let mut live = vec![true; inlets.len()];
    let wait = Duration::from_millis(5);
    loop {
        let stopping = stop.load(Ordering::Relaxed);
        let mut got_any = false;
        for (k, inlet) in inlets.iter().enumerate() {
            if !live[k] {
                continue;
            }
            let timeout = if stopping { Duration::ZERO } else { wait };
            match inlet.pull(4096, timeout) {
                Ok(batch) => {
                    got_any |= !batch.is_empty();
                    for s in &batch {
                        out.write_at(k, s)?;
                    }
                }
                Err(TransportError::Disconnected) => live[k] = false,
                Err(e) => return Err(e),
            }
        }
        out.flush()?;
        if !live.iter().any(|&l| l) || (stopping && !got_any) {
            break;
        }
    }
    for inlet in inlets {
        out.note_overflow(&inlet.info().source_id, inlet.overflow());
    }
    out.finish()
}

pub fn record(inlets: &[Inlet], sink: impl AsRef<Path>, stop: &AtomicBool) -> Result<RecordingSummary, TransportError> {
    record_to(inlets, BufWriter::new(File::create(sink)?), super::wall_clock(), stop)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Speed {
    /// Preserve the recorded inter-sample timing.
    Realtime,
    /// Push everything as fast as possible.
    Max,
}

/// Re-emit a recording through freshly registered outlets. Open inlets between
/// [`Replay::open`] and [`Replay::run`] to see every sample.
pub struct Replay {
    recording: Recording,
    outlets: Vec<Outlet>,
}

impl Replay {
    pub fn open(registry: &Registry, recording: Recording) -> Result<Replay, TransportError> {
        let outlets = recording
            .streams
            .iter()
            .map(|s| registry.open_outlet(s.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Replay { recording, outlets })
    }

    pub fn infos(&self) -> Vec<StreamInfo> {
        self.recording.streams.clone()
    }

    /// Push every sample with timestamps rebased onto the local clock, then close the
    /// outlets. Returns the number of samples pushed.
    pub fn run(self, speed: Speed) -> Result<u64, TransportError> {
        let base = local_clock();
        let started = Instant::now();
        let rebased = self.recording.rebased(base);
        let mut order: Vec<&(usize, Sample)> = rebased.samples.iter().collect();
        order.sort_by(|a, b| a.1.t.total_cmp(&b.1.t));
        for (i, s) in order {
            if speed == Speed::Realtime {
                let due = Duration::from_secs_f64((s.t - base).max(0.0));
                if let Some(wait) = due.checked_sub(started.elapsed()) {
                    std::thread::sleep(wait);
                }
            }
            self.outlets[*i].push(s.clone())?;
        }
        Ok(rebased.samples.len() as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Recording {
        Recording {
            session_start: 1.0e9,
            streams: vec![StreamInfo::signal("b", "b1", &["v"], 4.0), StreamInfo::marker("m", "m1")],
            samples: vec![
                (0, Sample::values(0.0, vec![0.1])),
                (1, Sample::marker(0.1, "PAGE:0")),
                (0, Sample::values(0.25, vec![-3.5e-7])),
            ],
        }
    }

    #[test]
    fn text_round_trip() {
        let mut buf = Vec::new();
        let summary = small().write_to(&mut buf).unwrap();
        assert_eq!(summary.total_samples, 3);
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert_eq!(Recording::parse(buf.as_slice()).unwrap(), small());
    }

    #[test]
    fn rejects_bad_records() {
        let mut buf = Vec::new();
        small().write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let bad = text.replace(r#""v":[0.1]"#, r#""v":[0.1,2]"#);
        assert!(matches!(Recording::parse(bad.as_bytes()), Err(TransportError::Corrupt { line: 4, .. })));
        let headless: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
        assert!(matches!(Recording::parse(headless.as_bytes()), Err(TransportError::Corrupt { offset: 0, .. })));
    }
}
