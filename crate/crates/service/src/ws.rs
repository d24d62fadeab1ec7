//! Minimal server side of the browser WebSocket protocol: opening handshake
//! and text/ping/close frames.

use std::io::{self, BufRead, Read, Write};

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use sha1::{Digest, Sha1};

const GUID: &str = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
const MAX_PAYLOAD: u64 = 16 * 1024 * 1024;

pub fn accept_key(key: &str) -> String {
    let mut h = Sha1::new();
    h.update(key.trim().as_bytes());
    h.update(GUID.as_bytes());
    STANDARD.encode(h.finalize())
}

/// Read the HTTP upgrade request (request line already consumed into
/// `first_line`) and answer it.
pub fn handshake<R: BufRead, W: Write>(first_line: &str, reader: &mut R, writer: &mut W) -> io::Result<()> {
    if !first_line.starts_with("GET ") {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "not an upgrade request"));
    }
    let mut key = None;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Err(io::ErrorKind::UnexpectedEof.into());
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.trim().eq_ignore_ascii_case("sec-websocket-key") {
                key = Some(value.trim().to_string());
            }
        }
    }
    let Some(key) = key else {
        writer.write_all(b"HTTP/1.1 400 Bad Request\r\nContent-Length: 0\r\n\r\n")?;
        return Err(io::Error::new(io::ErrorKind::InvalidData, "missing Sec-WebSocket-Key"));
    };
    write!(
        writer,
        "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\nConnection: Upgrade\r\nSec-WebSocket-Accept: {}\r\n\r\n",
        accept_key(&key)
    )?;
    writer.flush()
}

#[derive(Debug, PartialEq, Eq)]
pub enum Message {
    Text(String),
    Close,
}

fn write_frame<W: Write>(w: &mut W, opcode: u8, payload: &[u8]) -> io::Result<()> {
    let mut head = vec![0x80 | opcode];
    let n = payload.len();
    if n < 126 {
        head.push(n as u8);
    } else if n <= u16::MAX as usize {
        head.push(126);
        head.extend((n as u16).to_be_bytes());
    } else {
        head.push(127);
        head.extend((n as u64).to_be_bytes());
    }
    w.write_all(&head)?;
    w.write_all(payload)?;
    w.flush()
}

pub fn write_text<W: Write>(w: &mut W, text: &str) -> io::Result<()> {
    write_frame(w, 0x1, text.as_bytes())
}

/// Client frames are masked; unmasked frames are tolerated.
fn read_frame<R: Read>(r: &mut R) -> io::Result<(bool, u8, Vec<u8>)> {
    let mut h = [0u8; 2];
    r.read_exact(&mut h)?;
    let fin = h[0] & 0x80 != 0;
    let opcode = h[0] & 0x0f;
    let masked = h[1] & 0x80 != 0;
    let len = match h[1] & 0x7f {
        126 => {
            let mut b = [0u8; 2];
            r.read_exact(&mut b)?;
            u16::from_be_bytes(b) as u64
        }
        127 => {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            u64::from_be_bytes(b)
        }
        n => n as u64,
    };
    if len > MAX_PAYLOAD {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "frame too large"));
    }
    let mut mask = [0u8; 4];
    if masked {
        r.read_exact(&mut mask)?;
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload)?;
    if masked {
        for (i, b) in payload.iter_mut().enumerate() {
            *b ^= mask[i % 4];
        }
    }
    Ok((fin, opcode, payload))
}

/// Next complete message; pings are answered on `w` transparently.
pub fn read_message<R: Read, W: Write>(r: &mut R, w: &mut W) -> io::Result<Message> {
    let mut data = Vec::new();
    loop {
        let (fin, opcode, payload) = read_frame(r)?;
        match opcode {
            0x0 | 0x1 | 0x2 => {
                data.extend(payload);
                if fin {
                    return String::from_utf8(data)
                        .map(Message::Text)
                        .map_err(|_| io::Error::new(io::ErrorKind::InvalidData, "text frame is not UTF-8"));
                }
            }
            0x8 => {
                write_frame(w, 0x8, &payload[..payload.len().min(2)])?;
                return Ok(Message::Close);
            }
            0x9 => write_frame(w, 0xA, &payload)?,
            0xA => {}
            _ => return Err(io::Error::new(io::ErrorKind::InvalidData, "unknown opcode")),
        }
    }
}

/// Client-side text frame (masked), for tests and tools.
pub fn write_client_text<W: Write>(w: &mut W, text: &str, mask: [u8; 4]) -> io::Result<()> {
    let n = text.len();
    let mut out = vec![0x81];
    if n < 126 {
        out.push(0x80 | n as u8);
    } else if n <= u16::MAX as usize {
        out.push(0x80 | 126);
        out.extend((n as u16).to_be_bytes());
    } else {
        out.push(0x80 | 127);
        out.extend((n as u64).to_be_bytes());
    }
    out.extend(mask);
    out.extend(text.bytes().enumerate().map(|(i, b)| b ^ mask[i % 4]));
    w.write_all(&out)?;
    w.flush()
}

/// Read one server frame as text (client side).
pub fn read_server_text<R: Read>(r: &mut R) -> io::Result<Option<String>> {
    let (_, opcode, payload) = read_frame(r)?;
    match opcode {
        0x1 => String::from_utf8(payload)
            .map(Some)
            .map_err(|_| io::Error::new(io::ErrorKind::InvalidData, "text frame is not UTF-8")),
        _ => Ok(None),
    }
}
