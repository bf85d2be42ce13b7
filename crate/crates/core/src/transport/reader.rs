use std::collections::HashSet;
use std::fs;
use std::io::{BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use super::frame::{read_frame, FrameHeader, FrameKind, RawFrame, HEADER_LEN};
use super::{Endpoint, TransportError};
use crate::node::{deserialize_node, DataNode};

const POLL_INTERVAL: Duration = Duration::from_millis(5);

/// One rank's data for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPart {
    pub step: u64,
    pub rank: u32,
    pub rank_count: u32,
    pub node: DataNode,
    pub payload_bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Received {
    Data(StepPart),
    EndOfStream { rank: u32, rank_count: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Handshake {
    pub version: u8,
    pub rank: u32,
    pub rank_count: u32,
    pub peer: String,
}

enum Event {
    Handshake(Handshake),
    Frame(Received),
    Failed(TransportError),
}

/// Receiving end. Frames from all connections (or staging files) are
/// delivered through one queue in arrival order.
pub struct Reader {
    rx: Receiver<Event>,
    handshakes: Vec<Handshake>,
    local_addr: Option<SocketAddr>,
    shutdown: Arc<AtomicBool>,
}

impl Reader {
    pub fn open(endpoint: &Endpoint) -> Result<Reader, TransportError> {
        match endpoint {
            Endpoint::Socket(addr) => Reader::listen(addr),
            Endpoint::Staging(dir) => Reader::staging(dir),
        }
    }

    /// Listens on `addr`; port 0 picks a free port, see [`Reader::local_addr`].
    pub fn listen(addr: &str) -> Result<Reader, TransportError> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let local_addr = listener.local_addr()?;
        let (tx, rx) = mpsc::channel();
        let shutdown = Arc::new(AtomicBool::new(false));
        let stop = shutdown.clone();
        thread::Builder::new()
            .name("hxit-accept".into())
            .spawn(move || accept_loop(listener, tx, stop))?;
        Ok(Reader {
            rx,
            handshakes: Vec::new(),
            local_addr: Some(local_addr),
            shutdown,
        })
    }

    /// Watches a staging directory for frame files.
    pub fn staging(dir: &Path) -> Result<Reader, TransportError> {
        fs::create_dir_all(dir)?;
        let (tx, rx) = mpsc::channel();
        let shutdown = Arc::new(AtomicBool::new(false));
        let stop = shutdown.clone();
        let dir = dir.to_path_buf();
        thread::Builder::new()
            .name("hxit-staging".into())
            .spawn(move || staging_loop(dir, tx, stop))?;
        Ok(Reader {
            rx,
            handshakes: Vec::new(),
            local_addr: None,
            shutdown,
        })
    }

    pub fn local_addr(&self) -> Option<SocketAddr> {
        self.local_addr
    }

    /// Handshakes observed so far.
    pub fn handshakes(&self) -> &[Handshake] {
        &self.handshakes
    }

    /// Blocks until a frame arrives.
    pub fn get_step(&mut self) -> Result<Received, TransportError> {
        loop {
            match self.rx.recv() {
                Ok(ev) => {
                    if let Some(r) = self.absorb(ev)? {
                        return Ok(r);
                    }
                }
                Err(_) => return Err(TransportError::Disconnected),
            }
        }
    }

    /// Like [`Reader::get_step`] with a deadline; `Ok(None)` on timeout.
    pub fn get_step_timeout(&mut self, timeout: Duration) -> Result<Option<Received>, TransportError> {
        let deadline = std::time::Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(std::time::Instant::now());
            match self.rx.recv_timeout(left) {
                Ok(ev) => {
                    if let Some(r) = self.absorb(ev)? {
                        return Ok(Some(r));
                    }
                }
                Err(RecvTimeoutError::Timeout) => return Ok(None),
                Err(RecvTimeoutError::Disconnected) => return Err(TransportError::Disconnected),
            }
        }
    }

    /// Waits until at least `count` handshakes have been seen. A data frame
    /// arriving first is an error, so call this before data is expected.
    pub fn wait_handshakes(&mut self, count: usize, timeout: Duration) -> Result<bool, TransportError> {
        let deadline = std::time::Instant::now() + timeout;
        while self.handshakes.len() < count {
            let left = deadline.saturating_duration_since(std::time::Instant::now());
            match self.rx.recv_timeout(left) {
                Ok(Event::Handshake(h)) => self.handshakes.push(h),
                Ok(Event::Failed(e)) => return Err(e),
                Ok(Event::Frame(_)) => {
                    return Err(TransportError::Protocol {
                        offset: 0,
                        reason: "data frame while waiting for handshakes".into(),
                    })
                }
                Err(_) => return Ok(false),
            }
        }
        Ok(true)
    }

    fn absorb(&mut self, ev: Event) -> Result<Option<Received>, TransportError> {
        match ev {
            Event::Handshake(h) => {
                log::debug!("handshake from {} rank {}/{}", h.peer, h.rank, h.rank_count);
                self.handshakes.push(h);
                Ok(None)
            }
            Event::Frame(r) => Ok(Some(r)),
            Event::Failed(e) => Err(e),
        }
    }
}

impl Drop for Reader {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::Relaxed);
    }
}

fn accept_loop(listener: TcpListener, tx: Sender<Event>, stop: Arc<AtomicBool>) {
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let tx = tx.clone();
                let _ = thread::Builder::new()
                    .name(format!("hxit-conn-{peer}"))
                    .spawn(move || {
                        if let Err(e) = serve_connection(stream, peer, &tx) {
                            let _ = tx.send(Event::Failed(e));
                        }
                    });
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(POLL_INTERVAL),
            Err(e) => {
                let _ = tx.send(Event::Failed(e.into()));
                return;
            }
        }
    }
}

fn serve_connection(stream: TcpStream, peer: SocketAddr, tx: &Sender<Event>) -> Result<(), TransportError> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let mut ack_stream = stream.try_clone()?;
    let mut input = BufReader::with_capacity(1 << 20, stream);
    let mut offset = 0u64;

    let hello = match read_frame(&mut input, &mut offset)? {
        Some(f) if f.header.kind == FrameKind::Handshake => f.header,
        Some(f) => {
            return Err(TransportError::Protocol {
                offset: f.offset,
                reason: format!("expected handshake, got {:?} frame", f.header.kind),
            })
        }
        None => {
            return Err(TransportError::Truncated {
                offset: 0,
                expected: HEADER_LEN as u64,
                got: 0,
            })
        }
    };
    ack_stream.write_all(&FrameHeader::control(FrameKind::Handshake, 0, hello.rank, hello.rank_count).encode())?;
    if tx
        .send(Event::Handshake(Handshake {
            version: super::VERSION,
            rank: hello.rank,
            rank_count: hello.rank_count,
            peer: peer.to_string(),
        }))
        .is_err()
    {
        return Ok(());
    }

    let mut saw_eos = false;
    loop {
        let frame = match read_frame(&mut input, &mut offset)? {
            Some(f) => f,
            None if saw_eos => return Ok(()),
            None => {
                return Err(TransportError::Truncated {
                    offset,
                    expected: HEADER_LEN as u64,
                    got: 0,
                })
            }
        };
        if frame.header.kind == FrameKind::EndOfStream {
            saw_eos = true;
        }
        if let Some(ev) = to_event(frame)? {
            if tx.send(ev).is_err() {
                return Ok(());
            }
        }
    }
}

fn to_event(frame: RawFrame) -> Result<Option<Event>, TransportError> {
    let h = frame.header;
    Ok(match h.kind {
        FrameKind::Handshake => None,
        FrameKind::EndOfStream => Some(Event::Frame(Received::EndOfStream {
            rank: h.rank,
            rank_count: h.rank_count,
        })),
        FrameKind::Data => {
            let node = if frame.payload.is_empty() {
                DataNode::object()
            } else {
                deserialize_node(&frame.payload).map_err(|source| TransportError::Decode {
                    offset: frame.offset + HEADER_LEN as u64,
                    source,
                })?
            };
            Some(Event::Frame(Received::Data(StepPart {
                step: h.step,
                rank: h.rank,
                rank_count: h.rank_count,
                node,
                payload_bytes: h.payload_len,
            })))
        }
    })
}

/// Sort key placing data files by (step, rank) and end-of-stream files last.
fn staging_key(name: &str) -> Option<(u8, u64, u32)> {
    let stem = name.strip_suffix(".hxit")?;
    if let Some(rank) = stem.strip_prefix("eos_rank") {
        return Some((1, 0, rank.parse().ok()?));
    }
    let (step, rank) = stem.strip_prefix("step")?.split_once("_rank")?;
    Some((0, step.parse().ok()?, rank.parse().ok()?))
}

fn staging_loop(dir: PathBuf, tx: Sender<Event>, stop: Arc<AtomicBool>) {
    let mut seen: HashSet<String> = HashSet::new();
    while !stop.load(Ordering::Relaxed) {
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) => {
                let _ = tx.send(Event::Failed(e.into()));
                return;
            }
        };
        let mut fresh: Vec<((u8, u64, u32), String)> = entries
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|n| !seen.contains(n))
            .filter_map(|n| staging_key(&n).map(|k| (k, n)))
            .collect();
        fresh.sort();
        for (_, name) in fresh {
            let result = read_staging_file(&dir.join(&name));
            seen.insert(name);
            let events = match result {
                Ok(ev) => ev,
                Err(e) => vec![Event::Failed(e)],
            };
            for ev in events {
                if tx.send(ev).is_err() {
                    return;
                }
            }
        }
        thread::sleep(POLL_INTERVAL);
    }
}

fn read_staging_file(path: &Path) -> Result<Vec<Event>, TransportError> {
    let bytes = fs::read(path)?;
    let mut src = &bytes[..];
    let mut offset = 0;
    let mut out = Vec::new();
    while let Some(frame) = read_frame(&mut src, &mut offset)? {
        out.extend(to_event(frame)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{open_writer, ThrottleConfig};

    #[test]
    fn staging_names_sort_data_before_eos() {
        assert_eq!(staging_key("step10_rank2.hxit"), Some((0, 10, 2)));
        assert_eq!(staging_key("eos_rank1.hxit"), Some((1, 0, 1)));
        assert_eq!(staging_key(".step1_rank0.hxit.part"), None);
        assert_eq!(staging_key("notes.txt"), None);
    }

    #[test]
    fn staging_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ep = Endpoint::Staging(dir.path().join("stage"));
        let mut w = open_writer(&ep, ThrottleConfig::Unlimited).unwrap();
        assert!(fs::read_dir(dir.path().join("stage")).unwrap().next().is_none());
        let mut node = DataNode::object();
        node.set_path("a/b", 7i64).unwrap();
        for step in 0..3 {
            w.put_step(step, 0, 1, &node).unwrap();
        }
        w.end_of_stream(0, 1).unwrap();
        assert!(dir.path().join("stage/step2_rank0.hxit").is_file());

        let mut r = Reader::open(&ep).unwrap();
        for step in 0..3 {
            match r.get_step().unwrap() {
                Received::Data(p) => {
                    assert_eq!(p.step, step);
                    assert_eq!(p.node, node);
                }
                other => panic!("unexpected {other:?}"),
            }
        }
        assert_eq!(r.get_step().unwrap(), Received::EndOfStream { rank: 0, rank_count: 1 });
    }

    #[test]
    fn socket_round_trip_and_handshake() {
        let mut r = Reader::listen("127.0.0.1:0").unwrap();
        let ep = Endpoint::Socket(r.local_addr().unwrap().to_string());
        let mut w = open_writer(&ep, ThrottleConfig::Unlimited).unwrap();
        assert!(r.wait_handshakes(1, Duration::from_secs(5)).unwrap());
        assert_eq!(r.handshakes()[0].version, 1);

        let node = DataNode::f64_array(vec![1.0, 2.0]);
        let stats = w.put_step(0, 0, 1, &node).unwrap();
        assert_eq!(stats.bytes, HEADER_LEN as u64 + stats.payload_bytes);
        assert!(matches!(
            w.put_step(0, 0, 1, &node),
            Err(TransportError::StepOrder { last: 0, step: 0, .. })
        ));
        w.end_of_stream(0, 1).unwrap();
        w.close().unwrap();
        match r.get_step().unwrap() {
            Received::Data(p) => {
                assert_eq!(p.node, node);
                assert_eq!(p.payload_bytes, stats.payload_bytes);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(r.get_step().unwrap(), Received::EndOfStream { .. }));
    }

    #[test]
    fn closed_port_refuses() {
        let port = {
            let l = TcpListener::bind("127.0.0.1:0").unwrap();
            l.local_addr().unwrap().port()
        };
        let ep = Endpoint::Socket(format!("127.0.0.1:{port}"));
        let err = open_writer(&ep, ThrottleConfig::Unlimited).err().unwrap();
        assert!(matches!(err, TransportError::Connect { .. }), "{err}");
    }

    #[test]
    fn garbage_connection_is_a_protocol_error() {
        let mut r = Reader::listen("127.0.0.1:0").unwrap();
        let mut s = TcpStream::connect(r.local_addr().unwrap()).unwrap();
        s.write_all(b"JUNKJUNKJUNKJUNKJUNKJUNKJUNKJUNK").unwrap();
        let err = r.get_step().unwrap_err();
        assert!(matches!(err, TransportError::BadMagic { offset: 0, .. }), "{err}");
        assert!(err.is_protocol());
    }

    #[test]
    fn dropped_writer_is_truncation() {
        let mut r = Reader::listen("127.0.0.1:0").unwrap();
        let ep = Endpoint::Socket(r.local_addr().unwrap().to_string());
        let mut w = open_writer(&ep, ThrottleConfig::Unlimited).unwrap();
        w.put_step(0, 0, 1, &DataNode::from(1i64)).unwrap();
        drop(w);
        assert!(matches!(r.get_step().unwrap(), Received::Data(_)));
        let err = r.get_step().unwrap_err();
        assert!(matches!(err, TransportError::Truncated { .. }), "{err}");
    }
}
