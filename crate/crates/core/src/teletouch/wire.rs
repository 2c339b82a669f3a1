//! Length-prefixed binary frames exchanged through the relay.
//!
//! Layout: `u32 payload_len | u8 type | payload`, little-endian throughout.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::scene::UNITS;

pub const POSE: u8 = 0x01;
pub const TACTILE: u8 = 0x02;
pub const PING: u8 = 0x03;
pub const PONG: u8 = 0x04;
/// First frame on every relay connection; names the sender's site.
pub const HELLO: u8 = 0x05;

pub const POSE_LEN: usize = 4 + 8 + 3 * 4;
pub const TACTILE_LEN: usize = 4 + 8 + 4 + 2 * UNITS * 4 + 4 + 4 + 1;
pub const TIME_LEN: usize = 8;
pub const HELLO_LEN: usize = 1;

/// Tactile flag: the probe pose fell outside the phantom.
pub const FLAG_BOUNDARY: u8 = 0x01;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("peer closed the connection")]
    Closed,
    #[error("frame type {msg_type:#04x} with bad length {len}")]
    BadLength { msg_type: u8, len: u32 },
    #[error("unknown frame type {0:#04x}")]
    UnknownType(u8),
    #[error("unknown site role {0}")]
    UnknownRole(u8),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Local,
    Remote,
}

impl Role {
    pub fn peer(self) -> Role {
        match self {
            Role::Local => Role::Remote,
            Role::Remote => Role::Local,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseFrame {
    pub seq: u32,
    pub t_us: u64,
    pub x: f32,
    pub y: f32,
    pub z: f32,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TactileFrame {
    pub seq: u32,
    pub t_us: u64,
    /// Sequence number of the pose this frame answers.
    pub echo_seq: u32,
    pub heights: [f32; UNITS],
    pub k: [f32; UNITS],
    pub normal_force: f32,
    pub indentation: f32,
    pub flags: u8,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Frame {
    Hello(Role),
    Pose(PoseFrame),
    Tactile(TactileFrame),
    Ping { t_us: u64 },
    Pong { t_us: u64 },
}

/// Payload length for a frame type, if the type is known.
pub fn payload_len(msg_type: u8) -> Option<usize> {
    match msg_type {
        POSE => Some(POSE_LEN),
        TACTILE => Some(TACTILE_LEN),
        PING | PONG => Some(TIME_LEN),
        HELLO => Some(HELLO_LEN),
        _ => None,
    }
}

struct Cursor<'a>(&'a [u8]);

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let (head, rest) = self.0.split_at(N);
        self.0 = rest;
        head.try_into().expect("length checked before decoding")
    }
    fn u8(&mut self) -> u8 {
        self.take::<1>()[0]
    }
    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }
    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }
    fn f32(&mut self) -> f32 {
        f32::from_le_bytes(self.take())
    }
    fn f32s(&mut self) -> [f32; UNITS] {
        std::array::from_fn(|_| self.f32())
    }
}

impl Frame {
    pub fn msg_type(&self) -> u8 {
        match self {
            Frame::Hello(_) => HELLO,
            Frame::Pose(_) => POSE,
            Frame::Tactile(_) => TACTILE,
            Frame::Ping { .. } => PING,
            Frame::Pong { .. } => PONG,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let t = self.msg_type();
        let len = payload_len(t).expect("known type");
        let mut b = Vec::with_capacity(5 + len);
        b.extend_from_slice(&(len as u32).to_le_bytes());
        b.push(t);
        match self {
            Frame::Hello(role) => b.push(match role {
                Role::Local => 0,
                Role::Remote => 1,
            }),
            Frame::Pose(p) => {
                b.extend_from_slice(&p.seq.to_le_bytes());
                b.extend_from_slice(&p.t_us.to_le_bytes());
                for v in [p.x, p.y, p.z] {
                    b.extend_from_slice(&v.to_le_bytes());
                }
            }
            Frame::Tactile(f) => {
                b.extend_from_slice(&f.seq.to_le_bytes());
                b.extend_from_slice(&f.t_us.to_le_bytes());
                b.extend_from_slice(&f.echo_seq.to_le_bytes());
                for v in f.heights.iter().chain(&f.k).chain([&f.normal_force, &f.indentation]) {
                    b.extend_from_slice(&v.to_le_bytes());
                }
                b.push(f.flags);
            }
            Frame::Ping { t_us } | Frame::Pong { t_us } => b.extend_from_slice(&t_us.to_le_bytes()),
        }
        debug_assert_eq!(b.len(), 5 + len);
        b
    }

    /// Decode a payload whose type and length have already been read.
    pub fn decode(msg_type: u8, payload: &[u8]) -> Result<Frame, WireError> {
        let want = payload_len(msg_type).ok_or(WireError::UnknownType(msg_type))?;
        if payload.len() != want {
            return Err(WireError::BadLength {
                msg_type,
                len: payload.len() as u32,
            });
        }
        let mut c = Cursor(payload);
        Ok(match msg_type {
            HELLO => Frame::Hello(match c.u8() {
                0 => Role::Local,
                1 => Role::Remote,
                r => return Err(WireError::UnknownRole(r)),
            }),
            POSE => Frame::Pose(PoseFrame {
                seq: c.u32(),
                t_us: c.u64(),
                x: c.f32(),
                y: c.f32(),
                z: c.f32(),
            }),
            TACTILE => Frame::Tactile(TactileFrame {
                seq: c.u32(),
                t_us: c.u64(),
                echo_seq: c.u32(),
                heights: c.f32s(),
                k: c.f32s(),
                normal_force: c.f32(),
                indentation: c.f32(),
                flags: c.u8(),
            }),
            PING => Frame::Ping { t_us: c.u64() },
            PONG => Frame::Pong { t_us: c.u64() },
            _ => unreachable!("payload_len accepted the type"),
        })
    }

    /// Decode one complete frame from the front of `bytes`, returning it and
    /// the number of bytes consumed.
    pub fn decode_prefix(bytes: &[u8]) -> Result<(Frame, usize), WireError> {
        let mut r = bytes;
        let (t, payload) = read_raw(&mut r)?;
        Ok((Frame::decode(t, &payload)?, bytes.len() - r.len()))
    }
}

/// Read the header and payload of the next frame, validating the length
/// against the type before reading the body.
pub fn read_raw<R: Read>(r: &mut R) -> Result<(u8, Vec<u8>), WireError> {
    let mut header = [0u8; 5];
    if let Err(e) = r.read_exact(&mut header) {
        return Err(match e.kind() {
            io::ErrorKind::UnexpectedEof => WireError::Closed,
            _ => WireError::Io(e),
        });
    }
    let len = u32::from_le_bytes(header[..4].try_into().expect("4 bytes"));
    let msg_type = header[4];
    let want = payload_len(msg_type).ok_or(WireError::UnknownType(msg_type))?;
    if len as usize != want {
        return Err(WireError::BadLength { msg_type, len });
    }
    let mut payload = vec![0u8; want];
    r.read_exact(&mut payload)?;
    Ok((msg_type, payload))
}

pub fn read_frame<R: Read>(r: &mut R) -> Result<Frame, WireError> {
    let (t, payload) = read_raw(r)?;
    Frame::decode(t, &payload)
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> Result<(), WireError> {
    w.write_all(&frame.encode())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_match_layout() {
        let t = Frame::Tactile(TactileFrame {
            seq: 1,
            t_us: 2,
            echo_seq: 3,
            heights: [0.5; UNITS],
            k: [1.0; UNITS],
            normal_force: 0.25,
            indentation: 0.1,
            flags: FLAG_BOUNDARY,
        });
        assert_eq!(t.encode().len(), 5 + 153);
        let p = Frame::Pose(PoseFrame { seq: 9, t_us: 1 << 40, x: 1.0, y: 2.0, z: 3.0 });
        let b = p.encode();
        assert_eq!(&b[..5], &[24, 0, 0, 0, POSE]);
        assert_eq!(&b[5..9], &9u32.to_le_bytes());
        assert_eq!(Frame::decode_prefix(&b).unwrap(), (p, b.len()));
    }

    #[test]
    fn bad_length_rejected_before_body() {
        let mut b = Frame::Ping { t_us: 7 }.encode();
        b[0] = 200;
        assert!(matches!(read_frame(&mut &b[..]), Err(WireError::BadLength { msg_type: PING, len: 200 })));
        let junk = [8u8, 0, 0, 0, 0x7f, 0, 0, 0, 0, 0, 0, 0, 0];
        assert!(matches!(read_frame(&mut &junk[..]), Err(WireError::UnknownType(0x7f))));
        assert!(matches!(read_frame(&mut &[][..]), Err(WireError::Closed)));
    }

    #[test]
    fn hello_roles() {
        for role in [Role::Local, Role::Remote] {
            let b = Frame::Hello(role).encode();
            assert_eq!(read_frame(&mut &b[..]).unwrap(), Frame::Hello(role));
        }
        let bad = [1u8, 0, 0, 0, HELLO, 9];
        assert!(matches!(read_frame(&mut &bad[..]), Err(WireError::UnknownRole(9))));
    }
}
