//! Binary patch cache.
//!
//! Header: magic `WVC1`, version, frames, bands (u32 LE each). Each record:
//! clip id (u32 length + UTF-8), patch index (u32), label count (u32) and
//! label ids (u32 each), then `frames * bands` f32 LE values row-major.

use std::collections::BTreeSet;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::frontend::{LabelId, LogMelPatch, NUM_BANDS, PATCH_FRAMES, PATCH_SECONDS};

pub const MAGIC: &[u8; 4] = b"WVC1";
pub const VERSION: u32 = 1;

pub struct PatchCacheWriter<W: Write> {
    out: W,
    written: usize,
}

fn put_u32(out: &mut impl Write, v: u32) -> Result<()> {
    out.write_all(&v.to_le_bytes())?;
    Ok(())
}

impl<W: Write> PatchCacheWriter<W> {
    pub fn new(mut out: W) -> Result<Self> {
        out.write_all(MAGIC)?;
        for v in [VERSION, PATCH_FRAMES as u32, NUM_BANDS as u32] {
            put_u32(&mut out, v)?;
        }
        Ok(Self { out, written: 0 })
    }

    pub fn write(&mut self, patch: &LogMelPatch) -> Result<()> {
        if patch.values.len() != PATCH_FRAMES * NUM_BANDS {
            return Err(Error::Data(format!("patch of {} values", patch.values.len())));
        }
        let id = patch.clip_id.as_bytes();
        put_u32(&mut self.out, id.len() as u32)?;
        self.out.write_all(id)?;
        put_u32(&mut self.out, patch.patch_index as u32)?;
        put_u32(&mut self.out, patch.labels.len() as u32)?;
        for l in &patch.labels {
            put_u32(&mut self.out, l.0)?;
        }
        let mut bytes = Vec::with_capacity(patch.values.len() * 4);
        for v in &patch.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        self.out.write_all(&bytes)?;
        self.written += 1;
        Ok(())
    }

    pub fn written(&self) -> usize {
        self.written
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads the next clip-id length, or `None` at a clean end of file.
fn next_record(r: &mut impl Read) -> Result<Option<u32>> {
    let mut b = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        match r.read(&mut b[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(Error::Data("truncated patch record".into())),
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(Some(u32::from_le_bytes(b)))
}

pub fn read_patches_from(mut r: impl Read) -> Result<Vec<LogMelPatch>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::Data("patch cache too short".into()))?;
    if &magic != MAGIC {
        return Err(Error::Data("not a patch cache (bad magic)".into()));
    }
    let version = get_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Data(format!("patch cache version {version}, expected {VERSION}")));
    }
    let (frames, bands) = (get_u32(&mut r)? as usize, get_u32(&mut r)? as usize);
    if (frames, bands) != (PATCH_FRAMES, NUM_BANDS) {
        return Err(Error::Data(format!("patch cache holds {frames}x{bands} patches, expected 96x64")));
    }
    let mut patches = Vec::new();
    let truncated = |e: Error| match e {
        Error::Io(io) if io.kind() == ErrorKind::UnexpectedEof => Error::Data("truncated patch record".into()),
        other => other,
    };
    while let Some(id_len) = next_record(&mut r)? {
        let mut id = vec![0u8; id_len as usize];
        r.read_exact(&mut id).map_err(|e| truncated(e.into()))?;
        let clip_id = String::from_utf8(id).map_err(|_| Error::Data("clip id is not UTF-8".into()))?;
        let patch_index = get_u32(&mut r).map_err(truncated)? as usize;
        let n_labels = get_u32(&mut r).map_err(truncated)?;
        let mut labels = BTreeSet::new();
        for _ in 0..n_labels {
            labels.insert(LabelId(get_u32(&mut r).map_err(truncated)?));
        }
        let mut bytes = vec![0u8; frames * bands * 4];
        r.read_exact(&mut bytes).map_err(|e| truncated(e.into()))?;
        let values =
            bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        patches.push(LogMelPatch {
            clip_id,
            patch_index,
            start_time_s: patch_index as f64 * PATCH_SECONDS,
            values,
            labels,
        });
    }
    Ok(patches)
}

pub fn write_patches(path: &Path, patches: &[LogMelPatch]) -> Result<()> {
    let mut w = PatchCacheWriter::new(BufWriter::new(std::fs::File::create(path)?))?;
    for p in patches {
        w.write(p)?;
    }
    w.finish()?;
    Ok(())
}

pub fn read_patches(path: &Path) -> Result<Vec<LogMelPatch>> {
    read_patches_from(BufReader::new(std::fs::File::open(path)?))
}
