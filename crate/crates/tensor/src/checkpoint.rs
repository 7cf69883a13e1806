//! `WCK1` checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "WCK1" | version u32 | architecture digest [u8; 32] | param count u32
//! per parameter: name len u32 | name utf-8 | trainable u8 | rank u32 | dims u32 * rank | f32 * numel
//! sections, each introduced by a tag byte:
//!   1 = optimizer: step u64 | lr f64 | beta1 f64 | beta2 f64 | epsilon f64 | (m f32*, v f32*) per parameter
//!   2 = opaque trailer: len u32 | bytes
//!   0 = end
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::adam::{AdamConfig, AdamState};
use crate::error::{Result, TensorError};
use crate::param::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"WCK1";
pub const VERSION: u32 = 1;

const TAG_END: u8 = 0;
const TAG_OPTIMIZER: u8 = 1;
const TAG_TRAILER: u8 = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub digest: [u8; 32],
    pub params: ParamStore<T>,
    pub optimizer: Option<AdamState<T>>,
    pub trailer: Option<Vec<u8>>,
}

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_floats<T: Scalar>(w: &mut impl Write, t: &Tensor<T>) -> Result<()> {
    let mut buf = Vec::with_capacity(t.len() * 4);
    for v in t.data() {
        buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn write_checkpoint<T: Scalar>(
    w: &mut impl Write,
    digest: &[u8; 32],
    params: &ParamStore<T>,
    optimizer: Option<&AdamState<T>>,
    trailer: Option<&[u8]>,
) -> Result<()> {
    w.write_all(MAGIC)?;
    put_u32(w, VERSION)?;
    w.write_all(digest)?;
    put_u32(w, params.len() as u32)?;
    for p in params.iter() {
        put_u32(w, p.name.len() as u32)?;
        w.write_all(p.name.as_bytes())?;
        w.write_all(&[p.trainable as u8])?;
        put_u32(w, p.value.shape().len() as u32)?;
        for &d in p.value.shape() {
            put_u32(w, d as u32)?;
        }
        put_floats(w, &p.value)?;
    }
    if let Some(adam) = optimizer {
        w.write_all(&[TAG_OPTIMIZER])?;
        w.write_all(&adam.step_count.to_le_bytes())?;
        for v in [adam.learning_rate, adam.config.beta1, adam.config.beta2, adam.config.epsilon] {
            w.write_all(&v.to_le_bytes())?;
        }
        for (m, v) in adam.first_moment.iter().zip(&adam.second_moment) {
            put_floats(w, m)?;
            put_floats(w, v)?;
        }
    }
    if let Some(bytes) = trailer {
        w.write_all(&[TAG_TRAILER])?;
        put_u32(w, bytes.len() as u32)?;
        w.write_all(bytes)?;
    }
    w.write_all(&[TAG_END])?;
    Ok(())
}

struct Cursor<R> {
    inner: R,
}

impl<R: Read> Cursor<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b).map_err(|e| TensorError::Checkpoint(format!("truncated file: {e}")))?;
        Ok(b)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn vec(&mut self, len: usize) -> Result<Vec<u8>> {
        let mut b = vec![0u8; len];
        self.inner.read_exact(&mut b).map_err(|e| TensorError::Checkpoint(format!("truncated file: {e}")))?;
        Ok(b)
    }
    fn floats<T: Scalar>(&mut self, shape: &[usize]) -> Result<Tensor<T>> {
        let n: usize = shape.iter().product();
        let raw = self.vec(n * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| T::from_f64(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        Tensor::new(shape.to_vec(), data)
    }
}

pub fn read_checkpoint<T: Scalar>(r: impl Read) -> Result<Checkpoint<T>> {
    let mut c = Cursor { inner: r };
    if &c.bytes::<4>()? != MAGIC {
        return Err(TensorError::Checkpoint("bad magic, not a WCK1 file".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(TensorError::Checkpoint(format!("unsupported version {version}")));
    }
    let digest = c.bytes::<32>()?;
    let count = c.u32()? as usize;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name_len = c.u32()? as usize;
        let name = String::from_utf8(c.vec(name_len)?)
            .map_err(|_| TensorError::Checkpoint("parameter name is not utf-8".into()))?;
        let trainable = c.u8()? != 0;
        let rank = c.u32()? as usize;
        let shape = (0..rank).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let value = c.floats(&shape)?;
        params.insert(name, value, trainable)?;
    }
    let mut optimizer = None;
    let mut trailer = None;
    loop {
        match c.u8()? {
            TAG_END => break,
            TAG_OPTIMIZER => {
                let step_count = c.u64()?;
                let learning_rate = c.f64()?;
                let config = AdamConfig { beta1: c.f64()?, beta2: c.f64()?, epsilon: c.f64()? };
                let mut state = AdamState::new(&params, learning_rate, config);
                state.step_count = step_count;
                for i in 0..params.len() {
                    let shape = params.iter().nth(i).map(|p| p.value.shape().to_vec()).unwrap_or_default();
                    state.first_moment[i] = c.floats(&shape)?;
                    state.second_moment[i] = c.floats(&shape)?;
                }
                optimizer = Some(state);
            }
            TAG_TRAILER => {
                let len = c.u32()? as usize;
                trailer = Some(c.vec(len)?);
            }
            other => return Err(TensorError::Checkpoint(format!("unknown section tag {other}"))),
        }
    }
    Ok(Checkpoint { digest, params, optimizer, trailer })
}

pub fn save<T: Scalar>(
    path: &Path,
    digest: &[u8; 32],
    params: &ParamStore<T>,
    optimizer: Option<&AdamState<T>>,
    trailer: Option<&[u8]>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, digest, params, optimizer, trailer)?;
    w.flush()?;
    Ok(())
}

pub fn load<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
