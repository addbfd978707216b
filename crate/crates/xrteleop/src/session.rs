//! Session files: a magic header followed by framed tracking-packet JSON.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;
use xrteleop_core::TrackingPacket;

use crate::codec::{decode_packet, encode_packet, CodecError};
use crate::framing::{read_frame, write_frame, FrameError};

pub const MAGIC: &[u8; 8] = b"XRTSES01";

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("not a session file")]
    BadMagic,
    #[error("packet {index}: {source}")]
    Packet { index: usize, source: CodecError },
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub struct SessionWriter<W: Write> {
    out: W,
}

impl SessionWriter<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self, SessionError> {
        Self::new(BufWriter::new(File::create(path)?))
    }
}

impl<W: Write> SessionWriter<W> {
    pub fn new(mut out: W) -> Result<Self, SessionError> {
        out.write_all(MAGIC)?;
        Ok(Self { out })
    }

    pub fn write(&mut self, p: &TrackingPacket) -> Result<(), SessionError> {
        let bytes = encode_packet(p).map_err(|source| SessionError::Packet { index: 0, source })?;
        write_frame(&mut self.out, &bytes)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, SessionError> {
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn read_session(r: impl Read) -> Result<Vec<TrackingPacket>, SessionError> {
    let mut r = BufReader::new(r);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| SessionError::BadMagic)?;
    if &magic != MAGIC {
        return Err(SessionError::BadMagic);
    }
    let mut out = Vec::new();
    while let Some(frame) = read_frame(&mut r)? {
        out.push(decode_packet(&frame).map_err(|source| SessionError::Packet { index: out.len(), source })?);
    }
    Ok(out)
}

pub fn load_session(path: &Path) -> Result<Vec<TrackingPacket>, SessionError> {
    read_session(File::open(path)?)
}

pub fn save_session(path: &Path, packets: &[TrackingPacket]) -> Result<(), SessionError> {
    let mut w = SessionWriter::create(path)?;
    for p in packets {
        w.write(p)?;
    }
    w.finish()?;
    Ok(())
}
