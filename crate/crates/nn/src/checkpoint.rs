//! Versioned binary checkpoint format.
//!
//! ```text
//! magic "IOTM" | version u16 | tag_len u16 | tag (utf-8)
//! tensor_count u32
//! per tensor: name_len u16 | name | rank u16 | dims u32 × rank | values f64 × Π dims
//! ```
//! All integers and floats are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::{NnError, Result, Tensor};

pub const MAGIC: &[u8; 4] = b"IOTM";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Free-form architecture description, interpreted by the model owner.
    pub architecture: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| NnError::CorruptFile(format!("missing tensor {name}")))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        write_str(&mut w, &self.architecture)?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            write_str(&mut w, name)?;
            w.write_all(&(t.shape().len() as u16).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(NnError::CorruptFile(format!("bad magic {magic:?}")));
        }
        let version = read_u16(&mut r)?;
        if version != VERSION {
            return Err(NnError::VersionMismatch {
                expected: VERSION,
                found: version,
            });
        }
        let architecture = read_str(&mut r)?;
        let count = read_u32(&mut r)?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name = read_str(&mut r)?;
            let rank = read_u16(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u32(&mut r)? as usize);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|&n| n <= 1 << 32)
                .ok_or_else(|| NnError::CorruptFile(format!("implausible shape {shape:?}")))?;
            let mut bytes = vec![0u8; len * 8];
            read_exact(&mut r, &mut bytes)?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| NnError::CorruptFile(e.to_string()))?;
            tensors.push((name, t));
        }
        Ok(Self {
            architecture,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    let len = u16::try_from(s.len())
        .map_err(|_| NnError::CorruptFile(format!("string too long: {} bytes", s.len())))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => NnError::CorruptFile("unexpected end of file".into()),
        _ => NnError::Io(e),
    })
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u16(r)? as usize;
    let mut b = vec![0u8; len];
    read_exact(r, &mut b)?;
    String::from_utf8(b).map_err(|_| NnError::CorruptFile("non-utf8 string".into()))
}
