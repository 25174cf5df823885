//! Streams over TCP: 4-byte big-endian length prefix, then one JSON document.
//!
//! A connection starts in request/reply mode (`list`, `time`). A `subscribe`
//! request turns it into a one-way feed of sample batches; an empty batch is
//! sent as a heartbeat when the stream is idle.

use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::local::Queue;
use super::{local_clock, Inlet, Registry, Sample, StreamInfo, TransportError, DEFAULT_CAPACITY};

pub const DEFAULT_PORT: u16 = 16571;
const MAX_FRAME: usize = 64 << 20;
const HEARTBEAT: Duration = Duration::from_millis(200);
const BATCH: usize = 4096;

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum Request {
    List,
    Time,
    Subscribe { source_id: String, capacity: Option<usize> },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Response {
    Streams { streams: Vec<StreamInfo> },
    Time { t: f64 },
    Subscribed { info: StreamInfo },
    Batch { samples: Vec<Sample>, overflow: u64 },
    End,
    Error { message: String },
}

fn write_frame<T: Serialize>(w: &mut impl Write, msg: &T) -> Result<(), TransportError> {
    let body = serde_json::to_vec(msg)?;
    w.write_all(&(body.len() as u32).to_be_bytes())?;
    w.write_all(&body)?;
    w.flush()?;
    Ok(())
}

fn read_frame<T: for<'de> Deserialize<'de>>(r: &mut impl Read) -> Result<T, TransportError> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len).map_err(io_error)?;
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(TransportError::Protocol(format!("frame of {len} bytes exceeds limit")));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body).map_err(io_error)?;
    Ok(serde_json::from_slice(&body)?)
}

fn io_error(e: std::io::Error) -> TransportError {
    match e.kind() {
        ErrorKind::UnexpectedEof | ErrorKind::ConnectionReset | ErrorKind::BrokenPipe => TransportError::Disconnected,
        ErrorKind::WouldBlock | ErrorKind::TimedOut => TransportError::Timeout(Duration::ZERO),
        _ => TransportError::Io(e),
    }
}

/// Knobs for simulating a remote host.
#[derive(Debug, Clone, Copy, Default)]
pub struct ServerOptions {
    /// Added to the local clock when answering `time` requests.
    pub clock_shift: f64,
    /// One-way delay applied before and after stamping a `time` reply.
    pub latency: Duration,
}

/// Serves a [`Registry`] over TCP until dropped.
#[derive(Debug)]
pub struct TcpServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl TcpServer {
    pub fn bind(registry: Registry, addr: &str) -> Result<TcpServer, TransportError> {
        Self::bind_with(registry, addr, ServerOptions::default())
    }

    pub fn bind_with(registry: Registry, addr: &str, opts: ServerOptions) -> Result<TcpServer, TransportError> {
        let listener = TcpListener::bind(addr).map_err(|source| TransportError::Bind {
            addr: addr.to_string(),
            source,
        })?;
        listener.set_nonblocking(true)?;
        let local = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let accept = thread::spawn(move || {
            while !flag.load(Ordering::Relaxed) {
                match listener.accept() {
                    Ok((conn, _)) => {
                        let (reg, flag) = (registry.clone(), flag.clone());
                        thread::spawn(move || {
                            if let Err(e) = serve_connection(conn, &reg, opts, &flag) {
                                log::debug!("transport connection closed: {e}");
                            }
                        });
                    }
                    Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
                    Err(e) => {
                        log::warn!("transport accept failed: {e}");
                        thread::sleep(Duration::from_millis(50));
                    }
                }
            }
        });
        Ok(TcpServer {
            addr: local,
            stop,
            accept: Some(accept),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Drop for TcpServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

fn serve_connection(mut conn: TcpStream, reg: &Registry, opts: ServerOptions, stop: &AtomicBool) -> Result<(), TransportError> {
    conn.set_nonblocking(false)?;
    conn.set_nodelay(true)?;
    loop {
        let req: Request = match read_frame(&mut conn) {
            Ok(r) => r,
            Err(TransportError::Disconnected) => return Ok(()),
            Err(e) => return Err(e),
        };
        match req {
            Request::List => write_frame(&mut conn, &Response::Streams { streams: reg.list() })?,
            Request::Time => {
                thread::sleep(opts.latency);
                let t = local_clock() + opts.clock_shift;
                thread::sleep(opts.latency);
                write_frame(&mut conn, &Response::Time { t })?;
            }
            Request::Subscribe { source_id, capacity } => {
                let inlet = match reg.open_inlet(&source_id, capacity.unwrap_or(DEFAULT_CAPACITY)) {
                    Ok(i) => i,
                    Err(e) => {
                        write_frame(&mut conn, &Response::Error { message: e.to_string() })?;
                        continue;
                    }
                };
                write_frame(&mut conn, &Response::Subscribed { info: inlet.info().clone() })?;
                return feed(conn, inlet, stop);
            }
        }
    }
}

fn feed(mut conn: TcpStream, inlet: Inlet, stop: &AtomicBool) -> Result<(), TransportError> {
    while !stop.load(Ordering::Relaxed) {
        match inlet.pull(BATCH, HEARTBEAT) {
            Ok(samples) => write_frame(
                &mut conn,
                &Response::Batch {
                    samples,
                    overflow: inlet.overflow(),
                },
            )?,
            Err(TransportError::Disconnected) => break,
            Err(e) => return Err(e),
        }
    }
    write_frame(&mut conn, &Response::End)
}

fn connect(addr: &str, timeout: Duration) -> Result<TcpStream, TransportError> {
    let target = addr
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| TransportError::Protocol(format!("cannot resolve {addr}")))?;
    let conn = TcpStream::connect_timeout(&target, timeout)?;
    conn.set_read_timeout(Some(timeout))?;
    conn.set_write_timeout(Some(timeout))?;
    conn.set_nodelay(true)?;
    Ok(conn)
}

fn request(conn: &mut TcpStream, req: &Request, timeout: Duration) -> Result<Response, TransportError> {
    write_frame(conn, req)?;
    match read_frame(conn) {
        Err(TransportError::Timeout(_)) => Err(TransportError::Timeout(timeout)),
        Ok(Response::Error { message }) => Err(TransportError::Protocol(message)),
        other => other,
    }
}

/// The remote registry's streams.
pub fn list_streams(addr: &str, timeout: Duration) -> Result<Vec<StreamInfo>, TransportError> {
    let mut conn = connect(addr, timeout)?;
    match request(&mut conn, &Request::List, timeout)? {
        Response::Streams { streams } => Ok(streams),
        other => Err(TransportError::Protocol(format!("unexpected reply {other:?}"))),
    }
}

/// Subscribe to a remote stream. The returned inlet behaves like a local one;
/// its overflow count includes samples the server dropped for this connection.
pub fn subscribe(addr: &str, source_id: &str, capacity: usize, timeout: Duration) -> Result<Inlet, TransportError> {
    let mut conn = connect(addr, timeout)?;
    let req = Request::Subscribe {
        source_id: source_id.to_string(),
        capacity: Some(capacity),
    };
    let info = match request(&mut conn, &req, timeout)? {
        Response::Subscribed { info } => info,
        other => return Err(TransportError::Protocol(format!("unexpected reply {other:?}"))),
    };
    // heartbeats arrive every 200 ms; silence well beyond that means a dead peer
    conn.set_read_timeout(Some(timeout.max(HEARTBEAT * 10)))?;
    let queue = Queue::new(capacity);
    let feed = queue.clone();
    thread::spawn(move || {
        let mut remote_overflow = 0;
        // anything other than a batch (or a read error) ends the subscription
        while let Ok(Response::Batch { samples, overflow }) = read_frame::<Response>(&mut conn) {
            for s in samples {
                feed.push(s);
            }
            feed.add_overflow(overflow.saturating_sub(remote_overflow));
            remote_overflow = overflow;
            if Arc::strong_count(&feed) == 1 {
                break;
            }
        }
        let _ = conn.shutdown(std::net::Shutdown::Both);
        feed.close();
    });
    Ok(Inlet::from_queue(info, queue))
}

/// Offset of a remote clock relative to [`local_clock`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClockOffset {
    /// Address (or id) of the remote side the offset applies to.
    pub remote_stream: String,
    /// remote − local, seconds.
    pub offset: f64,
    pub uncertainty: f64,
    pub measured_at: f64,
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Combine ping-pong exchanges `(t_send_local, t_remote, t_reply_local)`: each gives
/// `t_remote − (t_send + t_reply)/2`; the result is their median with half the
/// interquartile range as uncertainty. Unbiased only when latency is symmetric.
pub fn offset_from_exchanges(remote: &str, exchanges: &[(f64, f64, f64)], measured_at: f64) -> Option<ClockOffset> {
    if exchanges.is_empty() {
        return None;
    }
    let mut d: Vec<f64> = exchanges.iter().map(|&(t0, tr, t1)| tr - 0.5 * (t0 + t1)).collect();
    d.sort_by(f64::total_cmp);
    Some(ClockOffset {
        remote_stream: remote.to_string(),
        offset: quantile(&d, 0.5),
        uncertainty: 0.5 * (quantile(&d, 0.75) - quantile(&d, 0.25)),
        measured_at,
    })
}

/// Ping the remote `exchanges` times (at least 5) and estimate its clock offset.
pub fn estimate_offset(addr: &str, exchanges: usize, timeout: Duration) -> Result<ClockOffset, TransportError> {
    let mut conn = connect(addr, timeout).map_err(|e| match e {
        TransportError::Io(io) if io.kind() == ErrorKind::TimedOut => TransportError::Timeout(timeout),
        other => other,
    })?;
    let mut done = Vec::new();
    for _ in 0..exchanges.max(5) {
        let t0 = local_clock();
        match request(&mut conn, &Request::Time, timeout) {
            Ok(Response::Time { t }) => done.push((t0, t, local_clock())),
            Ok(other) => return Err(TransportError::Protocol(format!("unexpected reply {other:?}"))),
            // a timed-out reply leaves the stream unsynchronized
            Err(_) => break,
        }
    }
    offset_from_exchanges(addr, &done, local_clock()).ok_or(TransportError::Timeout(timeout))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_match_linear_interpolation() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&x, 0.5), 2.5);
        assert_eq!(quantile(&x, 0.25), 1.75);
        assert_eq!(quantile(&x, 0.75), 3.25);
    }

    #[test]
    fn frames_round_trip() {
        let mut buf = Vec::new();
        write_frame(&mut buf, &Request::Time).unwrap();
        assert_eq!(&buf[..4], &(buf.len() as u32 - 4).to_be_bytes());
        let back: Request = read_frame(&mut buf.as_slice()).unwrap();
        assert!(matches!(back, Request::Time));
    }
}
