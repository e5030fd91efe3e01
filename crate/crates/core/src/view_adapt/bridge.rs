//! Client side of the external adapter protocol.
//!
//! Every message is a frame: `u32` length of the rest of the frame, `u8`
//! message type, body. All integers and floats are little-endian.
//!
//! | type | body |
//! |------|------|
//! | 0 hello | `u16` version, `u32` n, n × `f32` supported azimuths (radians) |
//! | 1 request | `u32` D, `u32` 21, `f32` az_src, `f32` az_tgt, D·21 × `f32` |
//! | 2 response | `u8` status (0 ok), `u32` D, `u32` 21, D·21 × `f32` |
//!
//! Payloads are Doppler-major: row `d` holds the 21 range cells of Doppler
//! bin `d`. The client opens with a hello carrying no azimuths; the server
//! answers with its own hello listing the azimuth grid it supports.

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::{Duration, Instant};

use ndarray::Array2;

use super::{AdaptedSignature, ViewAdapter};
use crate::error::{Error, Result};
use crate::signatures::{Normalization, RDSignature, PATCH_ROWS};

pub const PROTOCOL_VERSION: u16 = 1;
pub const MSG_HELLO: u8 = 0;
pub const MSG_REQUEST: u8 = 1;
pub const MSG_RESPONSE: u8 = 2;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_millis(100);
/// Allowance for a freshly spawned model process to load.
pub const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(10);
const MAX_FRAME_BYTES: u32 = 64 << 20;

/// Where the adapter lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BridgeAddr {
    /// `tcp://host:port` or bare `host:port`.
    Tcp(String),
    /// `exec:<program> [args...]`, speaking the protocol on stdin/stdout.
    Exec(Vec<String>),
}

impl FromStr for BridgeAddr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(cmd) = s.strip_prefix("exec:") {
            let argv: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
            if argv.is_empty() {
                return Err(Error::Config("exec bridge needs a command".into()));
            }
            return Ok(BridgeAddr::Exec(argv));
        }
        let hostport = s.strip_prefix("tcp://").unwrap_or(s);
        if hostport.rsplit_once(':').is_none_or(|(h, p)| h.is_empty() || p.parse::<u16>().is_err()) {
            return Err(Error::Config(format!("bridge address {s:?} is not host:port or exec:<cmd>")));
        }
        Ok(BridgeAddr::Tcp(hostport.to_string()))
    }
}

/// Decoded protocol message.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello { version: u16, azimuths: Vec<f32> },
    Request { az_src: f32, az_tgt: f32, payload: Array2<f32> },
    Response { status: u8, payload: Array2<f32> },
}

fn push_dims(out: &mut Vec<u8>, payload: &Array2<f32>) {
    out.extend((payload.nrows() as u32).to_le_bytes());
    out.extend((payload.ncols() as u32).to_le_bytes());
}

fn push_values(out: &mut Vec<u8>, payload: &Array2<f32>) {
    for v in payload.iter() {
        out.extend(v.to_le_bytes());
    }
}

impl Message {
    /// Full frame including the length prefix.
    pub fn encode(&self) -> Vec<u8> {
        let mut body = Vec::new();
        match self {
            Message::Hello { version, azimuths } => {
                body.push(MSG_HELLO);
                body.extend(version.to_le_bytes());
                body.extend((azimuths.len() as u32).to_le_bytes());
                for a in azimuths {
                    body.extend(a.to_le_bytes());
                }
            }
            Message::Request { az_src, az_tgt, payload } => {
                body.push(MSG_REQUEST);
                push_dims(&mut body, payload);
                body.extend(az_src.to_le_bytes());
                body.extend(az_tgt.to_le_bytes());
                push_values(&mut body, payload);
            }
            Message::Response { status, payload } => {
                body.push(MSG_RESPONSE);
                body.push(*status);
                push_dims(&mut body, payload);
                push_values(&mut body, payload);
            }
        }
        let mut frame = (body.len() as u32).to_le_bytes().to_vec();
        frame.extend(body);
        frame
    }

    /// Parses a frame body (everything after the length prefix).
    pub fn decode(body: &[u8]) -> Result<Self> {
        let mut cur = Cursor { buf: body, pos: 0 };
        let kind = cur.u8()?;
        let msg = match kind {
            MSG_HELLO => {
                let version = cur.u16()?;
                let n = cur.u32()? as usize;
                let azimuths = (0..n).map(|_| cur.f32()).collect::<Result<_>>()?;
                Message::Hello { version, azimuths }
            }
            MSG_REQUEST => {
                let (d, r) = (cur.u32()? as usize, cur.u32()? as usize);
                let az_src = cur.f32()?;
                let az_tgt = cur.f32()?;
                let payload = cur.matrix(d, r)?;
                Message::Request { az_src, az_tgt, payload }
            }
            MSG_RESPONSE => {
                let status = cur.u8()?;
                if status != 0 && cur.remaining() == 0 {
                    return Ok(Message::Response { status, payload: Array2::zeros((0, 0)) });
                }
                let (d, r) = (cur.u32()? as usize, cur.u32()? as usize);
                let payload = cur.matrix(d, r)?;
                Message::Response { status, payload }
            }
            other => return Err(Error::Protocol(format!("unknown message type {other}"))),
        };
        if cur.remaining() != 0 {
            return Err(Error::Protocol(format!("{} trailing bytes in frame", cur.remaining())));
        }
        Ok(msg)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let bytes = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| Error::Protocol("truncated frame".into()))?;
        self.pos = end;
        Ok(bytes.try_into().expect("slice of length N"))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take()?))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f32>> {
        let n = rows.checked_mul(cols).filter(|n| n * 4 <= self.remaining());
        let n = n.ok_or_else(|| Error::Protocol(format!("payload shorter than {rows}×{cols}")))?;
        let values = (0..n).map(|_| self.f32()).collect::<Result<Vec<_>>>()?;
        Ok(Array2::from_shape_vec((rows, cols), values).expect("length checked"))
    }
}

/// Reads one frame body. `Ok(None)` on a clean end of stream.
pub fn read_frame(r: &mut impl Read) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_le_bytes(len);
    if len > MAX_FRAME_BYTES {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {len} bytes")));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}

/// A connected, handshaken adapter.
pub struct AdapterBridge {
    writer: Box<dyn Write + Send>,
    frames: Receiver<io::Result<Vec<u8>>>,
    child: Option<Child>,
    timeout: Duration,
    azimuths: Vec<f64>,
    latencies: Vec<Duration>,
    /// Set after a timeout or transport failure: a late reply could be taken
    /// for the answer to the next request, so the connection is abandoned.
    broken: bool,
}

impl std::fmt::Debug for AdapterBridge {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AdapterBridge")
            .field("timeout", &self.timeout)
            .field("azimuths", &self.azimuths)
            .field("calls", &self.latencies.len())
            .field("broken", &self.broken)
            .finish()
    }
}

impl AdapterBridge {
    pub fn connect(addr: &BridgeAddr, timeout: Duration) -> Result<Self> {
        match addr {
            BridgeAddr::Tcp(hostport) => {
                let unavailable = |e: io::Error| Error::BridgeUnavailable(format!("{hostport}: {e}"));
                let sock = hostport
                    .to_socket_addrs()
                    .map_err(unavailable)?
                    .next()
                    .ok_or_else(|| Error::BridgeUnavailable(format!("{hostport}: no address")))?;
                let stream = TcpStream::connect_timeout(&sock, HANDSHAKE_TIMEOUT).map_err(unavailable)?;
                stream.set_nodelay(true).map_err(unavailable)?;
                let reader = stream.try_clone().map_err(unavailable)?;
                Self::from_streams(reader, stream, timeout, None)
            }
            BridgeAddr::Exec(argv) => {
                let mut child = Command::new(&argv[0])
                    .args(&argv[1..])
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| Error::BridgeUnavailable(format!("{}: {e}", argv[0])))?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Self::from_streams(stdout, stdin, timeout, Some(child))
            }
        }
    }

    /// Handshakes over an arbitrary byte stream pair.
    pub fn from_streams(
        reader: impl Read + Send + 'static,
        writer: impl Write + Send + 'static,
        timeout: Duration,
        child: Option<Child>,
    ) -> Result<Self> {
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let mut reader = BufReader::new(reader);
            loop {
                match read_frame(&mut reader) {
                    Ok(Some(frame)) => {
                        if tx.send(Ok(frame)).is_err() {
                            break;
                        }
                    }
                    Ok(None) => break,
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        break;
                    }
                }
            }
        });
        let mut bridge = Self {
            writer: Box::new(BufWriter::new(writer)),
            frames: rx,
            child,
            timeout,
            azimuths: Vec::new(),
            latencies: Vec::new(),
            broken: false,
        };
        bridge.send(&Message::Hello {
            version: PROTOCOL_VERSION,
            azimuths: vec![],
        })?;
        match bridge.receive(HANDSHAKE_TIMEOUT.max(timeout))? {
            Message::Hello { version, azimuths } => {
                if version != PROTOCOL_VERSION {
                    return Err(Error::Protocol(format!(
                        "adapter speaks protocol version {version}, expected {PROTOCOL_VERSION}"
                    )));
                }
                bridge.azimuths = azimuths.into_iter().map(f64::from).collect();
            }
            other => return Err(Error::Protocol(format!("expected hello, got {other:?}"))),
        }
        Ok(bridge)
    }

    fn send(&mut self, msg: &Message) -> Result<()> {
        let frame = msg.encode();
        let res = self.writer.write_all(&frame).and_then(|_| self.writer.flush());
        res.map_err(|e| {
            self.broken = true;
            Error::BridgeUnavailable(format!("write failed: {e}"))
        })
    }

    fn receive(&mut self, timeout: Duration) -> Result<Message> {
        match self.frames.recv_timeout(timeout) {
            Ok(Ok(body)) => Message::decode(&body).inspect_err(|_| self.broken = true),
            Ok(Err(e)) => {
                self.broken = true;
                Err(Error::Protocol(format!("bad frame: {e}")))
            }
            Err(RecvTimeoutError::Timeout) => {
                self.broken = true;
                Err(Error::BridgeTimeout(timeout.as_millis() as u64))
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.broken = true;
                Err(Error::BridgeUnavailable("adapter closed the connection".into()))
            }
        }
    }

    /// Azimuth grid advertised in the handshake (radians); empty when the
    /// adapter accepts any azimuth.
    pub fn supported_azimuths(&self) -> &[f64] {
        &self.azimuths
    }

    /// Round-trip time of every completed call.
    pub fn latencies(&self) -> &[Duration] {
        &self.latencies
    }

    /// Sends one Doppler-major payload and returns the adapter's answer.
    pub fn transform(&mut self, payload: &Array2<f32>, az_src: f32, az_tgt: f32) -> Result<Array2<f32>> {
        if self.broken {
            return Err(Error::BridgeUnavailable("connection abandoned after an earlier failure".into()));
        }
        let start = Instant::now();
        self.send(&Message::Request {
            az_src,
            az_tgt,
            payload: payload.clone(),
        })?;
        let reply = self.receive(self.timeout)?;
        self.latencies.push(start.elapsed());
        match reply {
            Message::Response { status: 0, payload: out } => {
                if out.dim() != payload.dim() {
                    return Err(Error::Protocol(format!(
                        "response is {:?}, request was {:?}",
                        out.dim(),
                        payload.dim()
                    )));
                }
                Ok(out)
            }
            Message::Response { status, .. } => Err(Error::Protocol(format!("adapter returned status {status}"))),
            other => {
                self.broken = true;
                Err(Error::Protocol(format!("expected response, got {other:?}")))
            }
        }
    }
}

impl Drop for AdapterBridge {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Sends `sig` through the bridge. Negative cells in the answer are clamped
/// to zero; non-finite cells are a protocol error.
pub fn adapt_external(sig: &RDSignature, az_src: f64, az_tgt: f64, bridge: &mut AdapterBridge) -> Result<AdaptedSignature> {
    let payload = sig.doppler_major().mapv(|v| v as f32);
    let out = bridge.transform(&payload, az_src as f32, az_tgt as f32)?;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Protocol("adapter returned non-finite values".into()));
    }
    let negative = out.iter().filter(|v| **v < 0.0).count();
    if negative > 0 {
        log::warn!("adapter returned {negative} negative cells, clamped to 0");
    }
    let mut meta = sig.meta();
    meta.normalization = Normalization::Raw;
    let adapted = RDSignature::from_doppler_major(meta, out.mapv(|v| v.max(0.0) as f64))?;
    Ok(AdaptedSignature::new(adapted, az_src, az_tgt, "bridge", false))
}

/// [`adapt_external`] as a [`ViewAdapter`].
#[derive(Debug)]
pub struct BridgeAdapter {
    pub bridge: AdapterBridge,
}

impl ViewAdapter for BridgeAdapter {
    fn id(&self) -> &str {
        "bridge"
    }

    fn supported_azimuths(&self) -> Option<&[f64]> {
        let a = self.bridge.supported_azimuths();
        (!a.is_empty()).then_some(a)
    }

    fn adapt(&mut self, sig: &RDSignature, az_src: f64, az_tgt: f64, _axis: Option<f64>) -> Result<AdaptedSignature> {
        adapt_external(sig, az_src, az_tgt, &mut self.bridge)
    }
}

/// Serves the protocol on a byte stream until it closes. `model` maps
/// `(az_src, az_tgt, payload)` to the output payload; malformed requests get
/// a status-1 response.
pub fn serve<R, W, F>(reader: R, writer: W, azimuths: &[f32], mut model: F) -> Result<()>
where
    R: Read,
    W: Write,
    F: FnMut(f32, f32, Array2<f32>) -> Array2<f32>,
{
    let mut reader = BufReader::new(reader);
    let mut writer = BufWriter::new(writer);
    let io_err = |e: io::Error| Error::BridgeUnavailable(e.to_string());
    while let Some(body) = read_frame(&mut reader).map_err(io_err)? {
        let reply = match Message::decode(&body) {
            Ok(Message::Hello { .. }) => Message::Hello {
                version: PROTOCOL_VERSION,
                azimuths: azimuths.to_vec(),
            },
            Ok(Message::Request { az_src, az_tgt, payload }) if payload.ncols() == PATCH_ROWS => {
                Message::Response {
                    status: 0,
                    payload: model(az_src, az_tgt, payload),
                }
            }
            _ => Message::Response {
                status: 1,
                payload: Array2::zeros((0, 0)),
            },
        };
        writer.write_all(&reply.encode()).map_err(io_err)?;
        writer.flush().map_err(io_err)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn payload() -> Array2<f32> {
        Array2::from_shape_fn((182, 21), |(d, r)| (d * 21 + r) as f32 * 0.001)
    }

    #[test]
    fn request_layout_is_exact() {
        let p = Array2::from_shape_vec((2, 21), (0..42).map(|v| v as f32).collect()).unwrap();
        let frame = Message::Request { az_src: 0.5, az_tgt: 1.5, payload: p }.encode();
        let body_len = 1 + 4 + 4 + 4 + 4 + 42 * 4;
        assert_eq!(frame.len(), 4 + body_len);
        assert_eq!(&frame[..4], &(body_len as u32).to_le_bytes());
        assert_eq!(frame[4], 1);
        assert_eq!(&frame[5..9], &2u32.to_le_bytes());
        assert_eq!(&frame[9..13], &21u32.to_le_bytes());
        assert_eq!(&frame[13..17], &0.5f32.to_le_bytes());
        assert_eq!(&frame[17..21], &1.5f32.to_le_bytes());
        assert_eq!(&frame[21..25], &0.0f32.to_le_bytes());
        assert_eq!(&frame[25..29], &1.0f32.to_le_bytes());
    }

    #[test]
    fn messages_round_trip() {
        let msgs = [
            Message::Hello { version: 1, azimuths: vec![0.0, 0.26] },
            Message::Request { az_src: 0.1, az_tgt: 2.0, payload: payload() },
            Message::Response { status: 0, payload: payload() },
        ];
        for m in msgs {
            let frame = m.encode();
            let body = read_frame(&mut &frame[..]).unwrap().unwrap();
            assert_eq!(Message::decode(&body).unwrap(), m);
        }
    }

    #[test]
    fn malformed_frames_are_rejected() {
        assert!(Message::decode(&[9]).is_err());
        assert!(Message::decode(&[]).is_err());
        let mut frame = Message::Response { status: 0, payload: payload() }.encode();
        frame.truncate(frame.len() - 2);
        assert!(Message::decode(&frame[4..]).is_err());
        let mut frame = Message::Hello { version: 1, azimuths: vec![] }.encode();
        frame.push(0);
        assert!(Message::decode(&frame[4..]).is_err());
        let error_reply = [MSG_RESPONSE, 1];
        assert!(matches!(
            Message::decode(&error_reply).unwrap(),
            Message::Response { status: 1, .. }
        ));
    }

    #[test]
    fn addresses_parse() {
        assert_eq!("127.0.0.1:9000".parse::<BridgeAddr>().unwrap(), BridgeAddr::Tcp("127.0.0.1:9000".into()));
        assert_eq!("tcp://localhost:1".parse::<BridgeAddr>().unwrap(), BridgeAddr::Tcp("localhost:1".into()));
        assert_eq!(
            "exec:python3 serve.py --x".parse::<BridgeAddr>().unwrap(),
            BridgeAddr::Exec(vec!["python3".into(), "serve.py".into(), "--x".into()])
        );
        assert!("exec:".parse::<BridgeAddr>().is_err());
        assert!("nohost".parse::<BridgeAddr>().is_err());
    }
}
