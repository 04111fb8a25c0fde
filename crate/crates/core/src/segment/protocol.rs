//! Framed binary protocol spoken with segmentation/cleaning sidecars over
//! stdin/stdout. All integers are big-endian.
//!
//! ```text
//! request : "WSST" | version u32 | kind u8 | tile_id u64 | width u32 | height u32 | w·h·3 RGB
//! response: "WSST" | version u32 | status u8 | tile_id u64 | payload
//!           SEGMENT ok → w·h labels, CLEAN ok → w·h·3 RGB, ERROR → u32 len + UTF-8
//! ```

use std::io::{self, Read, Write};

pub const MAGIC: &[u8; 4] = b"WSST";
pub const VERSION: u32 = 1;
pub const STATUS_OK: u8 = 0;
pub const STATUS_ERROR: u8 = 1;
pub const REQUEST_HEADER_LEN: usize = 25;
pub const RESPONSE_HEADER_LEN: usize = 17;
/// Largest tile side accepted on the wire.
pub const MAX_SIDE: u32 = 16_384;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Segment = 1,
    Clean = 2,
}

impl Kind {
    pub fn from_u8(v: u8) -> Option<Kind> {
        match v {
            1 => Some(Kind::Segment),
            2 => Some(Kind::Clean),
            _ => None,
        }
    }

    /// Bytes per pixel of a successful response payload.
    pub fn response_bpp(self) -> usize {
        match self {
            Kind::Segment => 1,
            Kind::Clean => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RequestHeader {
    pub version: u32,
    pub kind: u8,
    pub tile_id: u64,
    pub width: u32,
    pub height: u32,
}

impl RequestHeader {
    pub fn encode(&self) -> [u8; REQUEST_HEADER_LEN] {
        let mut b = [0u8; REQUEST_HEADER_LEN];
        b[0..4].copy_from_slice(MAGIC);
        b[4..8].copy_from_slice(&self.version.to_be_bytes());
        b[8] = self.kind;
        b[9..17].copy_from_slice(&self.tile_id.to_be_bytes());
        b[17..21].copy_from_slice(&self.width.to_be_bytes());
        b[21..25].copy_from_slice(&self.height.to_be_bytes());
        b
    }

    /// Parses a header; `None` when the magic does not match.
    pub fn decode(b: &[u8; REQUEST_HEADER_LEN]) -> Option<RequestHeader> {
        if &b[0..4] != MAGIC {
            return None;
        }
        Some(RequestHeader {
            version: u32::from_be_bytes(b[4..8].try_into().unwrap()),
            kind: b[8],
            tile_id: u64::from_be_bytes(b[9..17].try_into().unwrap()),
            width: u32::from_be_bytes(b[17..21].try_into().unwrap()),
            height: u32::from_be_bytes(b[21..25].try_into().unwrap()),
        })
    }

    pub fn payload_len(&self) -> usize {
        self.width as usize * self.height as usize * 3
    }
}

pub fn write_request<W: Write>(w: &mut W, kind: Kind, tile_id: u64, width: u32, height: u32, rgb: &[u8]) -> io::Result<()> {
    let header = RequestHeader {
        version: VERSION,
        kind: kind as u8,
        tile_id,
        width,
        height,
    };
    w.write_all(&header.encode())?;
    w.write_all(rgb)?;
    w.flush()
}

pub fn encode_response_header(status: u8, tile_id: u64) -> [u8; RESPONSE_HEADER_LEN] {
    let mut b = [0u8; RESPONSE_HEADER_LEN];
    b[0..4].copy_from_slice(MAGIC);
    b[4..8].copy_from_slice(&VERSION.to_be_bytes());
    b[8] = status;
    b[9..17].copy_from_slice(&tile_id.to_be_bytes());
    b
}

pub fn write_ok<W: Write>(w: &mut W, tile_id: u64, payload: &[u8]) -> io::Result<()> {
    w.write_all(&encode_response_header(STATUS_OK, tile_id))?;
    w.write_all(payload)?;
    w.flush()
}

pub fn write_error<W: Write>(w: &mut W, tile_id: u64, message: &str) -> io::Result<()> {
    w.write_all(&encode_response_header(STATUS_ERROR, tile_id))?;
    w.write_all(&(message.len() as u32).to_be_bytes())?;
    w.write_all(message.as_bytes())?;
    w.flush()
}

/// Parsed response header fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResponseHeader {
    pub version: u32,
    pub status: u8,
    pub tile_id: u64,
}

pub fn decode_response_header(b: &[u8; RESPONSE_HEADER_LEN]) -> Option<ResponseHeader> {
    if &b[0..4] != MAGIC {
        return None;
    }
    Some(ResponseHeader {
        version: u32::from_be_bytes(b[4..8].try_into().unwrap()),
        status: b[8],
        tile_id: u64::from_be_bytes(b[9..17].try_into().unwrap()),
    })
}

/// Handler for one request: SEGMENT returns w·h labels, CLEAN w·h·3 RGB.
pub type Handler<'a> = dyn Fn(Kind, u32, u32, &[u8]) -> Result<Vec<u8>, String> + 'a;

enum Next {
    Frame(RequestHeader),
    Eof,
}

/// Reads until a header with valid magic is found, skipping garbage.
/// Returns the number of skipped bytes alongside.
fn next_header<R: Read>(r: &mut R) -> io::Result<(Next, usize)> {
    let mut buf = [0u8; REQUEST_HEADER_LEN];
    let mut have = 0usize;
    let mut skipped = 0usize;
    loop {
        while have < REQUEST_HEADER_LEN {
            match r.read(&mut buf[have..])? {
                0 => return Ok((Next::Eof, skipped + have)),
                n => have += n,
            }
        }
        if let Some(h) = RequestHeader::decode(&buf) {
            return Ok((Next::Frame(h), skipped));
        }
        // Slide to the next possible magic start.
        let shift = (1..REQUEST_HEADER_LEN)
            .find(|&i| MAGIC.starts_with(&buf[i..(i + 4).min(REQUEST_HEADER_LEN)]))
            .unwrap_or(REQUEST_HEADER_LEN);
        buf.copy_within(shift.., 0);
        have -= shift;
        skipped += shift;
    }
}

/// Serves requests from `input` until EOF. Malformed frames are answered
/// with an ERROR frame and the loop continues.
pub fn serve<R: Read, W: Write>(input: &mut R, output: &mut W, handler: &Handler) -> io::Result<()> {
    loop {
        let (next, skipped) = next_header(input)?;
        if skipped > 0 {
            write_error(output, 0, &format!("bad magic: skipped {skipped} bytes"))?;
        }
        let header = match next {
            Next::Eof => return Ok(()),
            Next::Frame(h) => h,
        };
        if header.width > MAX_SIDE || header.height > MAX_SIDE {
            write_error(output, header.tile_id, &format!("tile {}x{} too large", header.width, header.height))?;
            continue;
        }
        let mut payload = vec![0u8; header.payload_len()];
        if let Err(e) = input.read_exact(&mut payload) {
            if e.kind() == io::ErrorKind::UnexpectedEof {
                write_error(output, header.tile_id, "truncated payload")?;
                return Ok(());
            }
            return Err(e);
        }
        if header.version != VERSION {
            write_error(output, header.tile_id, &format!("unsupported version {}", header.version))?;
            continue;
        }
        let Some(kind) = Kind::from_u8(header.kind) else {
            write_error(output, header.tile_id, &format!("unknown kind {}", header.kind))?;
            continue;
        };
        match handler(kind, header.width, header.height, &payload) {
            Ok(out) if out.len() == header.width as usize * header.height as usize * kind.response_bpp() => {
                write_ok(output, header.tile_id, &out)?
            }
            Ok(out) => write_error(output, header.tile_id, &format!("handler returned {} bytes", out.len()))?,
            Err(msg) => write_error(output, header.tile_id, &msg)?,
        }
    }
}
