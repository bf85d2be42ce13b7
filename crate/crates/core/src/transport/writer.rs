use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{Read, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use super::frame::{FrameHeader, FrameKind, HEADER_LEN};
use super::throttle::{sleep_until, Throttle, ThrottleConfig, CHUNK_SIZE};
use super::{staging_eos_name, staging_file_name, Endpoint, TransportError};
use crate::node::{encoded_len, serialize_into, DataNode};

pub const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SendStats {
    /// Frame bytes, header included.
    pub bytes: u64,
    pub payload_bytes: u64,
    pub duration: Duration,
}

#[derive(Debug, Clone)]
pub struct WriterOptions {
    /// Rank and rank_count announced in the handshake. Zero rank_count means
    /// the writer does not know its partition yet.
    pub rank: u32,
    pub rank_count: u32,
    pub handshake_timeout: Duration,
}

impl Default for WriterOptions {
    fn default() -> Self {
        WriterOptions {
            rank: 0,
            rank_count: 0,
            handshake_timeout: HANDSHAKE_TIMEOUT,
        }
    }
}

enum Sink {
    Socket(TcpStream),
    Staging(PathBuf),
}

pub struct Writer {
    sink: Sink,
    throttle: Throttle,
    last_step: HashMap<u32, u64>,
    ended: HashSet<u32>,
}

pub fn open_writer(endpoint: &Endpoint, throttle: ThrottleConfig) -> Result<Writer, TransportError> {
    open_writer_with(endpoint, Throttle::new(throttle), WriterOptions::default())
}

/// Like [`open_writer`] but with a possibly shared throttle.
pub fn open_writer_with(
    endpoint: &Endpoint,
    throttle: Throttle,
    options: WriterOptions,
) -> Result<Writer, TransportError> {
    let sink = match endpoint {
        Endpoint::Socket(addr) => Sink::Socket(connect(addr, &options)?),
        Endpoint::Staging(dir) => {
            fs::create_dir_all(dir)?;
            if fs::metadata(dir)?.permissions().readonly() {
                return Err(TransportError::Io(std::io::Error::new(
                    std::io::ErrorKind::PermissionDenied,
                    format!("{} is read-only", dir.display()),
                )));
            }
            Sink::Staging(dir.clone())
        }
    };
    Ok(Writer {
        sink,
        throttle,
        last_step: HashMap::new(),
        ended: HashSet::new(),
    })
}

fn connect(addr: &str, options: &WriterOptions) -> Result<TcpStream, TransportError> {
    let conn_err = |source| TransportError::Connect {
        endpoint: addr.to_string(),
        source,
    };
    let mut last_err = None;
    let mut stream = None;
    for sa in addr.to_socket_addrs().map_err(conn_err)? {
        match TcpStream::connect_timeout(&sa, options.handshake_timeout) {
            Ok(s) => {
                stream = Some(s);
                break;
            }
            Err(e) => last_err = Some(e),
        }
    }
    let mut stream = match stream {
        Some(s) => s,
        None => {
            return Err(conn_err(last_err.unwrap_or_else(|| {
                std::io::Error::new(std::io::ErrorKind::NotFound, "no address")
            })))
        }
    };
    stream.set_nodelay(true)?;
    let hello = FrameHeader::control(FrameKind::Handshake, 0, options.rank, options.rank_count);
    stream.write_all(&hello.encode())?;
    stream.set_read_timeout(Some(options.handshake_timeout))?;
    let mut ack = [0u8; HEADER_LEN];
    stream
        .read_exact(&mut ack)
        .map_err(|e| TransportError::Handshake(format!("no acknowledgement from {addr}: {e}")))?;
    let ack = FrameHeader::decode(&ack, 0)?;
    if ack.kind != FrameKind::Handshake {
        return Err(TransportError::Handshake(format!(
            "expected handshake acknowledgement, got {:?}",
            ack.kind
        )));
    }
    stream.set_read_timeout(None)?;
    Ok(stream)
}

impl Writer {
    pub fn is_staging(&self) -> bool {
        matches!(self.sink, Sink::Staging(_))
    }

    pub fn put_step(
        &mut self,
        step: u64,
        rank: u32,
        rank_count: u32,
        node: &DataNode,
    ) -> Result<SendStats, TransportError> {
        if self.ended.contains(&rank) {
            return Err(TransportError::AfterEndOfStream { rank });
        }
        if let Some(&last) = self.last_step.get(&rank) {
            if step <= last {
                return Err(TransportError::StepOrder { rank, last, step });
            }
        }
        let payload_len = encoded_len(node);
        let mut buf = Vec::with_capacity(HEADER_LEN + payload_len);
        let header = FrameHeader {
            kind: FrameKind::Data,
            step,
            rank,
            rank_count,
            payload_len: payload_len as u64,
        };
        buf.extend_from_slice(&header.encode());
        serialize_into(node, &mut buf);
        debug_assert_eq!(buf.len(), HEADER_LEN + payload_len);

        let started = Instant::now();
        self.send(&buf, &staging_file_name(step, rank))?;
        let duration = started.elapsed();
        self.last_step.insert(rank, step);
        Ok(SendStats {
            bytes: buf.len() as u64,
            payload_bytes: payload_len as u64,
            duration,
        })
    }

    /// Sends `rank`'s end-of-stream frame. Later `put_step` calls for that
    /// rank fail.
    pub fn end_of_stream(&mut self, rank: u32, rank_count: u32) -> Result<(), TransportError> {
        if self.ended.contains(&rank) {
            return Err(TransportError::AfterEndOfStream { rank });
        }
        let step = self.last_step.get(&rank).copied().unwrap_or(0);
        let frame = FrameHeader::control(FrameKind::EndOfStream, step, rank, rank_count).encode();
        self.send(&frame, &staging_eos_name(rank))?;
        self.ended.insert(rank);
        Ok(())
    }

    /// Flushes and closes the connection.
    pub fn close(self) -> Result<(), TransportError> {
        if let Sink::Socket(mut s) = self.sink {
            s.flush()?;
            let _ = s.shutdown(Shutdown::Write);
        }
        Ok(())
    }

    fn send(&mut self, bytes: &[u8], file_name: &str) -> Result<(), TransportError> {
        match &mut self.sink {
            Sink::Socket(stream) => paced_write(stream, bytes, &self.throttle)?,
            Sink::Staging(dir) => {
                // written under a dot-name and renamed so readers never see a partial frame
                let tmp = dir.join(format!(".{file_name}.part"));
                let mut f = fs::File::create(&tmp)?;
                paced_write(&mut f, bytes, &self.throttle)?;
                drop(f);
                fs::rename(&tmp, dir.join(file_name))?;
            }
        }
        Ok(())
    }
}

fn paced_write(out: &mut impl Write, bytes: &[u8], throttle: &Throttle) -> std::io::Result<()> {
    if !throttle.is_limited() {
        return out.write_all(bytes);
    }
    for chunk in bytes.chunks(CHUNK_SIZE) {
        let deadline = throttle.reserve(chunk.len());
        out.write_all(chunk)?;
        if let Some(d) = deadline {
            sleep_until(d);
        }
    }
    out.flush()
}
