//! Framed stream protocol for out-of-process guidance providers.
//!
//! The client opens with the 4-byte magic `SKG1`. Every message after that is
//! a frame: a little-endian `u32` header length, a UTF-8 JSON header, and for
//! score messages `h * w * 3` little-endian `f32` values. The first frame is
//! `{"type":"hello","version":1}`, answered by the same hello from the server.
//! Score requests carry `h, w, timestep, guidance_scale, prompt, seed` and
//! optionally `camera`; responses carry `h, w, provider_info`. A server that
//! cannot handle a frame answers `{"type":"error","message":...}`.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{GuidanceError, GuidanceProvider, ScoreRequest, ScoreResponse};
use crate::render::Camera;

pub const MAGIC: &[u8; 4] = b"SKG1";
pub const VERSION: u64 = 1;
pub const MAX_HEADER_BYTES: u32 = 1 << 20;
pub const MAX_PIXELS: usize = 4096 * 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Header {
    Hello {
        version: u64,
    },
    ScoreRequest {
        h: usize,
        w: usize,
        timestep: usize,
        guidance_scale: f64,
        prompt: String,
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        camera: Option<Camera>,
    },
    ScoreResponse {
        h: usize,
        w: usize,
        #[serde(default)]
        provider_info: String,
    },
    Error {
        message: String,
    },
}

impl Header {
    fn payload_len(&self) -> Result<usize, GuidanceError> {
        match self {
            Header::ScoreRequest { h, w, .. } | Header::ScoreResponse { h, w, .. } => {
                let px = h.checked_mul(*w).filter(|&p| p <= MAX_PIXELS);
                px.map(|p| 3 * p).ok_or_else(|| GuidanceError::FrameTooLarge((*h as u64).saturating_mul(*w as u64)))
            }
            _ => Ok(0),
        }
    }
}

pub fn write_frame(w: &mut impl Write, header: &Header, payload: &[f32]) -> Result<(), GuidanceError> {
    let json = serde_json::to_vec(header).map_err(|e| GuidanceError::MalformedFrame(e.to_string()))?;
    let mut buf = Vec::with_capacity(4 + json.len() + 4 * payload.len());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for v in payload {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_frame(r: &mut impl Read) -> Result<(Header, Vec<f32>), GuidanceError> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_le_bytes(len);
    if len > MAX_HEADER_BYTES {
        return Err(GuidanceError::FrameTooLarge(len as u64));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| GuidanceError::MalformedFrame(e.to_string()))?;
    let n = header.payload_len()?;
    let mut raw = vec![0u8; 4 * n];
    r.read_exact(&mut raw)?;
    let payload = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((header, payload))
}

/// Client half of the opening exchange.
pub fn client_handshake(s: &mut (impl Read + Write)) -> Result<(), GuidanceError> {
    s.write_all(MAGIC)?;
    write_frame(s, &Header::Hello { version: VERSION }, &[])?;
    match read_frame(s)?.0 {
        Header::Hello { version: VERSION } => Ok(()),
        Header::Hello { version } => Err(GuidanceError::HandshakeVersionError(version)),
        Header::Error { message } => Err(GuidanceError::Remote(message)),
        other => Err(GuidanceError::MalformedFrame(format!("expected hello, got {other:?}"))),
    }
}

/// Sends one request and waits for its response.
pub fn client_score(s: &mut (impl Read + Write), req: &ScoreRequest) -> Result<ScoreResponse, GuidanceError> {
    let header = Header::ScoreRequest {
        h: req.height,
        w: req.width,
        timestep: req.timestep,
        guidance_scale: req.guidance_scale,
        prompt: req.prompt.clone(),
        seed: req.seed,
        camera: req.camera.clone(),
    };
    write_frame(s, &header, &req.image)?;
    match read_frame(s)? {
        (Header::ScoreResponse { h, w, provider_info }, payload) => {
            if (h, w) != (req.height, req.width) {
                return Err(GuidanceError::ShapeMismatch { expected: 3 * req.width * req.height, got: 3 * h * w });
            }
            Ok(ScoreResponse { pixel_gradient: payload, provider_info })
        }
        (Header::Error { message }, _) => Err(GuidanceError::Remote(message)),
        (other, _) => Err(GuidanceError::MalformedFrame(format!("expected score_response, got {other:?}"))),
    }
}

/// Serves one connection until the peer hangs up or sends something invalid.
pub fn serve_connection(s: &mut (impl Read + Write), provider: &dyn GuidanceProvider) -> Result<(), GuidanceError> {
    let mut magic = [0u8; 4];
    s.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(GuidanceError::BadMagic);
    }
    loop {
        let (header, payload) = match read_frame(s) {
            Ok(f) => f,
            Err(GuidanceError::Io(e)) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(()),
            Err(e) => {
                let _ = write_frame(s, &Header::Error { message: e.to_string() }, &[]);
                return Err(e);
            }
        };
        match header {
            Header::Hello { .. } => write_frame(s, &Header::Hello { version: VERSION }, &[])?,
            Header::ScoreRequest { h, w, timestep, guidance_scale, prompt, seed, camera } => {
                let req = ScoreRequest { width: w, height: h, image: payload, prompt, timestep, guidance_scale, seed, camera };
                match provider.score(&req) {
                    Ok(resp) => write_frame(s, &Header::ScoreResponse { h, w, provider_info: resp.provider_info }, &resp.pixel_gradient)?,
                    Err(e) => write_frame(s, &Header::Error { message: e.to_string() }, &[])?,
                }
            }
            other => {
                let msg = format!("unexpected frame {other:?}");
                write_frame(s, &Header::Error { message: msg.clone() }, &[])?;
                return Err(GuidanceError::MalformedFrame(msg));
            }
        }
    }
}

/// Accepts connections forever, one thread per connection.
pub fn serve(listener: TcpListener, provider: Arc<dyn GuidanceProvider>) -> std::thread::JoinHandle<()> {
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let provider = provider.clone();
            std::thread::spawn(move || {
                if let Err(e) = serve_connection(&mut stream, provider.as_ref()) {
                    log::warn!("guidance connection closed: {e}");
                }
            });
        }
    })
}

pub(crate) fn connect(addr: &str, timeout: std::time::Duration) -> Result<TcpStream, GuidanceError> {
    use std::net::ToSocketAddrs;
    let mut last = None;
    for a in addr.to_socket_addrs()? {
        match TcpStream::connect_timeout(&a, timeout) {
            Ok(s) => {
                s.set_read_timeout(Some(timeout))?;
                s.set_write_timeout(Some(timeout))?;
                s.set_nodelay(true)?;
                return Ok(s);
            }
            Err(e) => last = Some(e),
        }
    }
    Err(last.map_or_else(|| GuidanceError::Config(format!("{addr} resolves to nothing")), GuidanceError::Io))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn frame_round_trip() {
        let h = Header::ScoreRequest { h: 2, w: 1, timestep: 7, guidance_scale: 100.0, prompt: "p".into(), seed: 3, camera: None };
        let payload = vec![0.5f32, -1.0, 2.0, f32::MIN_POSITIVE, 3.25, 0.0];
        let mut buf = Vec::new();
        write_frame(&mut buf, &h, &payload).unwrap();
        let (h2, p2) = read_frame(&mut Cursor::new(buf)).unwrap();
        assert_eq!(h, h2);
        assert_eq!(payload.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), p2.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn malformed_frames_are_rejected() {
        let mut buf = Vec::new();
        buf.extend_from_slice(&5u32.to_le_bytes());
        buf.extend_from_slice(b"{nope");
        assert!(matches!(read_frame(&mut Cursor::new(buf)), Err(GuidanceError::MalformedFrame(_))));

        let mut buf = Vec::new();
        buf.extend_from_slice(&(MAX_HEADER_BYTES + 1).to_le_bytes());
        assert!(matches!(read_frame(&mut Cursor::new(buf)), Err(GuidanceError::FrameTooLarge(_))));

        let json = br#"{"type":"launch_missiles"}"#;
        let mut buf = (json.len() as u32).to_le_bytes().to_vec();
        buf.extend_from_slice(json);
        assert!(matches!(read_frame(&mut Cursor::new(buf)), Err(GuidanceError::MalformedFrame(_))));

        // header promises a payload that never arrives
        let mut buf = Vec::new();
        write_frame(&mut buf, &Header::ScoreResponse { h: 4, w: 4, provider_info: String::new() }, &[]).unwrap();
        assert!(matches!(read_frame(&mut Cursor::new(buf)), Err(GuidanceError::Io(_))));

        let json = br#"{"type":"score_request","h":100000,"w":100000,"timestep":1,"guidance_scale":1,"prompt":"","seed":0}"#;
        let mut buf = (json.len() as u32).to_le_bytes().to_vec();
        buf.extend_from_slice(json);
        assert!(matches!(read_frame(&mut Cursor::new(buf)), Err(GuidanceError::FrameTooLarge(_))));
    }

    #[test]
    fn server_rejects_bad_magic() {
        struct Duplex(Cursor<Vec<u8>>, Vec<u8>);
        impl Read for Duplex {
            fn read(&mut self, b: &mut [u8]) -> std::io::Result<usize> {
                self.0.read(b)
            }
        }
        impl Write for Duplex {
            fn write(&mut self, b: &[u8]) -> std::io::Result<usize> {
                self.1.write(b)
            }
            fn flush(&mut self) -> std::io::Result<()> {
                Ok(())
            }
        }
        let mut d = Duplex(Cursor::new(b"XXXX".to_vec()), Vec::new());
        let r = serve_connection(&mut d, &super::super::EchoProvider);
        assert!(matches!(r, Err(GuidanceError::BadMagic)));
    }
}
