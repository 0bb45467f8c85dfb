//! E2-lite framing: `"ORAN"`, version, message type, big-endian payload
//! length, payload.

use std::io::{ErrorKind, Read, Write};

use crate::crypt::KeyId;
use crate::error::{Error, Result};
use crate::signal::{Class, Complex, IqBuffer, Spectrogram};

pub const MAGIC: [u8; 4] = *b"ORAN";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 10;
pub const MAX_PAYLOAD: usize = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MsgType {
    IqReport = 1,
    SpectrogramBlob = 2,
    Control = 3,
}

impl MsgType {
    pub fn from_byte(b: u8) -> Result<Self> {
        match b {
            1 => Ok(MsgType::IqReport),
            2 => Ok(MsgType::SpectrogramBlob),
            3 => Ok(MsgType::Control),
            other => Err(Error::Protocol(format!("unknown message type {other}"))),
        }
    }
}

/// A frame whose payload has not been interpreted yet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct E2Frame {
    pub msg_type: MsgType,
    pub payload: Vec<u8>,
}

impl E2Frame {
    pub fn encode(&self) -> Result<Vec<u8>> {
        if self.payload.len() > MAX_PAYLOAD {
            return Err(Error::Protocol(format!(
                "payload of {} bytes exceeds the {MAX_PAYLOAD}-byte limit",
                self.payload.len()
            )));
        }
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.msg_type as u8);
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    /// Parses one frame at the start of `bytes`, returning it and the
    /// number of bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut cursor = bytes;
        match read_frame(&mut cursor)? {
            Some(f) => Ok((f, bytes.len() - cursor.len())),
            None => Err(Error::TruncatedFrame {
                expected: HEADER_LEN,
                got: 0,
            }),
        }
    }
}

/// Reads as many bytes as available up to `buf.len()`.
fn read_full<R: Read + ?Sized>(r: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(got)
}

/// Reads the next frame. A stream that ends cleanly before any header
/// byte yields `None`.
pub fn read_frame<R: Read + ?Sized>(r: &mut R) -> Result<Option<E2Frame>> {
    let mut header = [0u8; HEADER_LEN];
    let got = read_full(r, &mut header)?;
    if got == 0 {
        return Ok(None);
    }
    if header[..got.min(4)] != MAGIC[..got.min(4)] {
        return Err(Error::Protocol("bad magic".into()));
    }
    if got < HEADER_LEN {
        return Err(Error::TruncatedFrame {
            expected: HEADER_LEN,
            got,
        });
    }
    if header[4] != VERSION {
        return Err(Error::Protocol(format!("unsupported version {}", header[4])));
    }
    let msg_type = MsgType::from_byte(header[5])?;
    let len = u32::from_be_bytes([header[6], header[7], header[8], header[9]]) as usize;
    if len > MAX_PAYLOAD {
        return Err(Error::Protocol(format!("announced payload of {len} bytes is too large")));
    }
    let mut payload = vec![0u8; len];
    let got = read_full(r, &mut payload)?;
    if got < len {
        return Err(Error::TruncatedFrame { expected: len, got });
    }
    Ok(Some(E2Frame { msg_type, payload }))
}

pub fn write_frame<W: Write + ?Sized>(w: &mut W, frame: &E2Frame) -> Result<()> {
    w.write_all(&frame.encode()?)?;
    w.flush()?;
    Ok(())
}

/// RAN-side link adaptation chosen by the xApp.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum McsAction {
    Adaptive = 0,
    Fixed = 1,
}

/// Classification outcome returned to the RAN. Only interference-free
/// captures keep adaptive MCS.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlDecision {
    pub predicted_class: Class,
    pub action: McsAction,
    pub confidence: f32,
}

impl ControlDecision {
    pub fn new(predicted_class: Class, confidence: f32) -> Self {
        let action = match predicted_class {
            Class::Soi => McsAction::Adaptive,
            Class::Cwi | Class::Ci => McsAction::Fixed,
        };
        Self {
            predicted_class,
            action,
            confidence,
        }
    }
}

/// Interpreted frame payloads.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    IqReport(IqBuffer),
    SpectrogramBlob { key_id: KeyId, image: Spectrogram },
    Control(ControlDecision),
}

impl Message {
    pub fn to_frame(&self) -> Result<E2Frame> {
        let (msg_type, payload) = match self {
            Message::IqReport(iq) => {
                let n = u32::try_from(iq.len())
                    .map_err(|_| Error::Protocol("capture too long for one report".into()))?;
                let mut p = Vec::with_capacity(12 + 8 * iq.len());
                p.extend_from_slice(&n.to_be_bytes());
                p.extend_from_slice(&iq.sample_rate_hz().to_be_bytes());
                for s in iq.samples() {
                    p.extend_from_slice(&(s.re as f32).to_be_bytes());
                    p.extend_from_slice(&(s.im as f32).to_be_bytes());
                }
                (MsgType::IqReport, p)
            }
            Message::SpectrogramBlob { key_id, image } => {
                let mut p = key_id.0.to_vec();
                p.extend_from_slice(&image.to_sgrm_bytes());
                (MsgType::SpectrogramBlob, p)
            }
            Message::Control(c) => {
                let mut p = vec![c.predicted_class.index() as u8, c.action as u8];
                p.extend_from_slice(&c.confidence.to_be_bytes());
                (MsgType::Control, p)
            }
        };
        Ok(E2Frame { msg_type, payload })
    }

    pub fn from_frame(frame: &E2Frame) -> Result<Self> {
        let p = &frame.payload;
        match frame.msg_type {
            MsgType::IqReport => {
                if p.len() < 12 {
                    return Err(Error::Protocol("IQ report shorter than its header".into()));
                }
                let n = u32::from_be_bytes([p[0], p[1], p[2], p[3]]) as usize;
                let rate = f64::from_be_bytes(p[4..12].try_into().expect("8 bytes"));
                if p.len() != 12 + 8 * n {
                    return Err(Error::Protocol(format!(
                        "IQ report announces {n} samples but carries {} bytes",
                        p.len() - 12
                    )));
                }
                let f = |i: usize| f32::from_be_bytes(p[i..i + 4].try_into().expect("4 bytes"));
                let samples = (0..n)
                    .map(|k| {
                        let o = 12 + 8 * k;
                        Complex::new(f64::from(f(o)), f64::from(f(o + 4)))
                    })
                    .collect();
                IqBuffer::new(samples, rate)
                    .map(Message::IqReport)
                    .map_err(|e| Error::Protocol(format!("invalid IQ report: {e}")))
            }
            MsgType::SpectrogramBlob => {
                if p.len() < 16 {
                    return Err(Error::Protocol("blob shorter than its key id".into()));
                }
                let key_id = KeyId(p[..16].try_into().expect("16 bytes"));
                let image = Spectrogram::from_sgrm_bytes(&p[16..])
                    .map_err(|e| Error::Protocol(format!("invalid blob image: {e}")))?;
                Ok(Message::SpectrogramBlob { key_id, image })
            }
            MsgType::Control => {
                if p.len() != 6 {
                    return Err(Error::Protocol(format!(
                        "control payload must be 6 bytes, got {}",
                        p.len()
                    )));
                }
                let class = Class::from_index(p[0] as usize)
                    .ok_or_else(|| Error::Protocol(format!("unknown class byte {}", p[0])))?;
                let confidence = f32::from_be_bytes([p[2], p[3], p[4], p[5]]);
                let decision = ControlDecision::new(class, confidence);
                if p[1] != decision.action as u8 {
                    return Err(Error::Protocol(format!(
                        "action byte {} contradicts class {class}",
                        p[1]
                    )));
                }
                Ok(Message::Control(decision))
            }
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        self.to_frame()?.encode()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (frame, used) = E2Frame::decode(bytes)?;
        if used != bytes.len() {
            return Err(Error::Protocol(format!("{} trailing bytes", bytes.len() - used)));
        }
        Self::from_frame(&frame)
    }
}

/// Reads and interprets the next message, `None` at clean end of stream.
pub fn read_message<R: Read + ?Sized>(r: &mut R) -> Result<Option<Message>> {
    match read_frame(r)? {
        Some(f) => Message::from_frame(&f).map(Some),
        None => Ok(None),
    }
}

pub fn write_message<W: Write + ?Sized>(w: &mut W, msg: &Message) -> Result<()> {
    write_frame(w, &msg.to_frame()?)
}
