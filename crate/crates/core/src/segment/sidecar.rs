use std::io::{Read, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use super::protocol::{self, Kind, RESPONSE_HEADER_LEN, STATUS_ERROR, STATUS_OK, VERSION};
use super::LabelMask;
use crate::error::{Error, Result};
use crate::raster::{Plane, RasterRgb};

/// Error messages in ERROR frames longer than this are treated as garbage.
const MAX_ERROR_LEN: usize = 1 << 20;

struct Proc {
    child: Child,
    /// Request frames go through a writer thread so a stalled sidecar cannot
    /// block the caller past its deadline.
    tx: Option<mpsc::Sender<Vec<u8>>>,
    rx: Receiver<Vec<u8>>,
    pending: Vec<u8>,
}

enum Failure {
    /// Sidecar answered with an ERROR frame; the stream is still in sync.
    Reported(String),
    /// Timeout, crash or malformed frame; the process is discarded.
    Fatal(Error),
}

impl Proc {
    fn spawn(command: &str) -> Result<Proc> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::SidecarFailure(format!("spawning `{command}`: {e}")))?;
        let mut stdin: ChildStdin = child.stdin.take().expect("piped stdin");
        let mut stdout = child.stdout.take().expect("piped stdout");

        let (req_tx, req_rx) = mpsc::channel::<Vec<u8>>();
        thread::spawn(move || {
            for frame in req_rx {
                if stdin.write_all(&frame).and_then(|_| stdin.flush()).is_err() {
                    break;
                }
            }
        });
        let (out_tx, out_rx) = mpsc::channel();
        thread::spawn(move || {
            let mut buf = vec![0u8; 64 * 1024];
            loop {
                match stdout.read(&mut buf) {
                    Ok(0) | Err(_) => break,
                    Ok(n) => {
                        if out_tx.send(buf[..n].to_vec()).is_err() {
                            break;
                        }
                    }
                }
            }
        });
        Ok(Proc {
            child,
            tx: Some(req_tx),
            rx: out_rx,
            pending: Vec::new(),
        })
    }

    fn read_exact(&mut self, n: usize, deadline: Instant) -> Result<Vec<u8>, Error> {
        while self.pending.len() < n {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.rx.recv_timeout(left) {
                Ok(chunk) => self.pending.extend_from_slice(&chunk),
                Err(RecvTimeoutError::Timeout) => return Err(Error::SidecarFailure("timed out".into())),
                Err(RecvTimeoutError::Disconnected) => {
                    let status = self.child.try_wait().ok().flatten();
                    return Err(Error::SidecarFailure(match status {
                        Some(s) => format!("sidecar exited ({s})"),
                        None => "sidecar closed its output".into(),
                    }));
                }
            }
        }
        let rest = self.pending.split_off(n);
        Ok(std::mem::replace(&mut self.pending, rest))
    }

    fn call(&mut self, kind: Kind, tile_id: u64, tile: &RasterRgb, timeout: Duration) -> Result<Vec<u8>, Failure> {
        let deadline = Instant::now() + timeout;
        let mut frame = Vec::with_capacity(protocol::REQUEST_HEADER_LEN + tile.as_bytes().len());
        protocol::write_request(&mut frame, kind, tile_id, tile.width(), tile.height(), tile.as_bytes())
            .expect("writing to a Vec");
        let sent = self.tx.as_ref().is_some_and(|tx| tx.send(frame).is_ok());
        if !sent {
            return Err(Failure::Fatal(Error::SidecarFailure("sidecar input closed".into())));
        }

        let hb = self.read_exact(RESPONSE_HEADER_LEN, deadline).map_err(Failure::Fatal)?;
        let header = protocol::decode_response_header(hb.as_slice().try_into().unwrap())
            .ok_or_else(|| Failure::Fatal(Error::Protocol("bad magic in response".into())))?;
        if header.version != VERSION {
            return Err(Failure::Fatal(Error::Protocol(format!("response version {}", header.version))));
        }
        if header.tile_id != tile_id {
            return Err(Failure::Fatal(Error::Protocol(format!(
                "response for tile {} while waiting for {tile_id}",
                header.tile_id
            ))));
        }
        match header.status {
            STATUS_OK => {
                let n = tile.len_pixels() * kind.response_bpp();
                self.read_exact(n, deadline).map_err(Failure::Fatal)
            }
            STATUS_ERROR => {
                let lb = self.read_exact(4, deadline).map_err(Failure::Fatal)?;
                let len = u32::from_be_bytes(lb.as_slice().try_into().unwrap()) as usize;
                if len > MAX_ERROR_LEN {
                    return Err(Failure::Fatal(Error::Protocol(format!("error message of {len} bytes"))));
                }
                let msg = self.read_exact(len, deadline).map_err(Failure::Fatal)?;
                Err(Failure::Reported(String::from_utf8_lossy(&msg).into_owned()))
            }
            s => Err(Failure::Fatal(Error::Protocol(format!("unknown status {s}")))),
        }
    }
}

impl Drop for Proc {
    fn drop(&mut self) {
        self.tx.take();
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A pool of sidecar processes. Each process handles one request at a time;
/// processes are started on first use and restarted after a fatal failure.
pub struct SidecarPool {
    command: String,
    timeout: Duration,
    slots: Vec<Mutex<Option<Proc>>>,
    next: AtomicUsize,
}

impl SidecarPool {
    pub fn new(command: &str, processes: usize, timeout: Duration) -> SidecarPool {
        SidecarPool {
            command: command.to_string(),
            timeout,
            slots: (0..processes.max(1)).map(|_| Mutex::new(None)).collect(),
            next: AtomicUsize::new(0),
        }
    }

    pub fn size(&self) -> usize {
        self.slots.len()
    }

    /// Sends one request and returns the OK payload.
    pub fn request(&self, kind: Kind, tile_id: u64, tile: &RasterRgb) -> Result<Vec<u8>> {
        let start = self.next.fetch_add(1, Ordering::Relaxed);
        let n = self.slots.len();
        let mut guard = (0..n)
            .find_map(|i| self.slots[(start + i) % n].try_lock().ok())
            .unwrap_or_else(|| self.slots[start % n].lock().unwrap_or_else(|p| p.into_inner()));
        if guard.is_none() {
            *guard = Some(Proc::spawn(&self.command)?);
        }
        let proc = guard.as_mut().expect("spawned above");
        match proc.call(kind, tile_id, tile, self.timeout) {
            Ok(payload) => Ok(payload),
            Err(Failure::Reported(msg)) => Err(Error::SidecarFailure(format!("tile {tile_id}: {msg}"))),
            Err(Failure::Fatal(e)) => {
                *guard = None;
                Err(match e {
                    Error::SidecarFailure(m) => Error::SidecarFailure(format!("tile {tile_id}: {m}")),
                    other => other,
                })
            }
        }
    }

    pub fn segment(&self, tile: &RasterRgb, tile_id: u64) -> Result<LabelMask> {
        let labels = self.request(Kind::Segment, tile_id, tile)?;
        LabelMask::from_plane(Plane::new(tile.width(), tile.height(), labels)?)
    }

    pub fn clean(&self, tile: &RasterRgb, tile_id: u64) -> Result<RasterRgb> {
        let rgb = self.request(Kind::Clean, tile_id, tile)?;
        RasterRgb::new(tile.width(), tile.height(), rgb)
    }
}
