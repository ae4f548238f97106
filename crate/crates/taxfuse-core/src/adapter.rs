//! TCP adapter for out-of-process encoders.
//!
//! Real text/vision models live behind a socket speaking a tiny framed
//! protocol; this side stays model-agnostic. Every message, both directions,
//! is one frame:
//!
//! ```text
//! u64 LE header length | header JSON | u64 LE payload length | payload bytes
//! ```
//!
//! Requests carry `{"op": ...}` plus op-specific fields; responses carry
//! `{"status": "ok"}` or `{"status": "error", "message": ...}`. Vector
//! payloads are f32 little-endian. Ops:
//!
//! - `handshake` -> `{name, dim}`: identifies the model and embedding width.
//! - `encode_text` with `{"text": ...}` -> payload = one vector.
//! - `encode_region` with `{"width", "height", "box": [x0,y0,x1,y1]}` and a
//!   raw RGB8 row-major crop payload -> payload = one vector.

use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::Mutex;

use image::RgbImage;
use serde_json::{json, Value};

use crate::encoder::{EmbeddingVector, EncoderBackend};
use crate::error::{Error, Result};
use crate::geometry::PixelBox;

/// Environment variable that overrides any configured adapter endpoint.
pub const ENDPOINT_ENV: &str = "TAXFUSE_ADAPTER_ENDPOINT";

const MAX_HEADER_BYTES: u64 = 1 << 20;
const MAX_PAYLOAD_BYTES: u64 = 1 << 28;
const PROTOCOL_VERSION: u64 = 1;

/// Endpoint resolution order: environment override, then the configured
/// value. Missing both is a config error.
pub fn resolve_endpoint(configured: Option<&str>) -> Result<String> {
    if let Ok(env) = std::env::var(ENDPOINT_ENV) {
        if !env.is_empty() {
            return Ok(env);
        }
    }
    configured
        .map(str::to_string)
        .ok_or_else(|| Error::Config(format!("no adapter endpoint; set {ENDPOINT_ENV} or pass one")))
}

fn write_frame(stream: &mut TcpStream, header: &Value, payload: &[u8]) -> Result<()> {
    let header_bytes = serde_json::to_vec(header)?;
    stream.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    stream.write_all(&header_bytes)?;
    stream.write_all(&(payload.len() as u64).to_le_bytes())?;
    stream.write_all(payload)?;
    stream.flush()?;
    Ok(())
}

fn read_frame(stream: &mut TcpStream) -> Result<(Value, Vec<u8>)> {
    let mut len8 = [0u8; 8];
    stream.read_exact(&mut len8)?;
    let header_len = u64::from_le_bytes(len8);
    if header_len > MAX_HEADER_BYTES {
        return Err(Error::Protocol(format!(
            "header of {header_len} bytes exceeds the {MAX_HEADER_BYTES} limit"
        )));
    }
    let mut header_bytes = vec![0u8; header_len as usize];
    stream.read_exact(&mut header_bytes)?;
    let header: Value = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Protocol(format!("unparseable frame header: {e}")))?;
    stream.read_exact(&mut len8)?;
    let payload_len = u64::from_le_bytes(len8);
    if payload_len > MAX_PAYLOAD_BYTES {
        return Err(Error::Protocol(format!(
            "payload of {payload_len} bytes exceeds the {MAX_PAYLOAD_BYTES} limit"
        )));
    }
    let mut payload = vec![0u8; payload_len as usize];
    stream.read_exact(&mut payload)?;
    Ok((header, payload))
}

fn vector_from_payload(payload: &[u8], dim: usize) -> Result<EmbeddingVector> {
    if payload.len() != dim * 4 {
        return Err(Error::Protocol(format!(
            "vector payload is {} bytes, expected {} for dim {dim}",
            payload.len(),
            dim * 4
        )));
    }
    EmbeddingVector::new(
        payload
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect(),
    )
}

/// Client side of the protocol. One connection, requests serialized through
/// a mutex; the request/response pairing is strict so no pipelining.
pub struct AdapterBackend {
    name: String,
    dim: usize,
    stream: Mutex<TcpStream>,
}

impl AdapterBackend {
    /// Connects and handshakes. `endpoint` is `host:port`.
    pub fn connect(endpoint: &str) -> Result<Self> {
        let mut stream = TcpStream::connect(endpoint)?;
        stream.set_nodelay(true)?;
        write_frame(
            &mut stream,
            &json!({"op": "handshake", "protocol": PROTOCOL_VERSION}),
            &[],
        )?;
        let (header, _) = read_frame(&mut stream)?;
        let header = check_status(endpoint, header)?;
        let name = header
            .get("name")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Protocol("handshake reply lacks a name".into()))?
            .to_string();
        let dim = header
            .get("dim")
            .and_then(Value::as_u64)
            .filter(|&d| d > 0)
            .ok_or_else(|| Error::Protocol("handshake reply lacks a positive dim".into()))?
            as usize;
        Ok(Self {
            name,
            dim,
            stream: Mutex::new(stream),
        })
    }

    fn round_trip(&self, header: &Value, payload: &[u8]) -> Result<(Value, Vec<u8>)> {
        let mut stream = self.stream.lock().map_err(|_| Error::Backend {
            backend: self.name.clone(),
            reason: "connection poisoned by an earlier panic".into(),
        })?;
        write_frame(&mut stream, header, payload)?;
        let (reply, reply_payload) = read_frame(&mut stream)?;
        Ok((check_status(&self.name, reply)?, reply_payload))
    }
}

fn check_status(backend: &str, header: Value) -> Result<Value> {
    match header.get("status").and_then(Value::as_str) {
        Some("ok") => Ok(header),
        Some("error") => Err(Error::Backend {
            backend: backend.to_string(),
            reason: header
                .get("message")
                .and_then(Value::as_str)
                .unwrap_or("adapter reported an error without a message")
                .to_string(),
        }),
        _ => Err(Error::Protocol("reply header lacks a status".into())),
    }
}

impl EncoderBackend for AdapterBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn batch_safe(&self) -> bool {
        // The mutex serializes requests, so concurrent callers are safe,
        // they just will not overlap on the wire.
        true
    }

    fn encode_text_raw(&self, text: &str) -> Result<EmbeddingVector> {
        let (_, payload) = self.round_trip(&json!({"op": "encode_text", "text": text}), &[])?;
        vector_from_payload(&payload, self.dim)
    }

    fn encode_region_raw(&self, image: &RgbImage, bbox: PixelBox) -> Result<EmbeddingVector> {
        bbox.ensure_fits(image.width(), image.height())?;
        let mut crop = Vec::with_capacity((bbox.area() * 3) as usize);
        for y in bbox.y0..bbox.y1 {
            for x in bbox.x0..bbox.x1 {
                crop.extend_from_slice(&image.get_pixel(x, y).0);
            }
        }
        let header = json!({
            "op": "encode_region",
            "width": bbox.width(),
            "height": bbox.height(),
            "box": [bbox.x0, bbox.y0, bbox.x1, bbox.y1],
        });
        let (_, payload) = self.round_trip(&header, &crop)?;
        vector_from_payload(&payload, self.dim)
    }
}
