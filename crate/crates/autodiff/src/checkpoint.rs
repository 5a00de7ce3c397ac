//! Named-tensor checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"CGCK" | version: u32 | header_len: u32 | header: utf-8 `key=value` lines
//! count: u32
//! count × { name_len: u32 | name | rank: u32 | rank × extent: u64 | values: f64 }
//! ```

use std::io::{Read, Write};

use crate::error::{AutodiffError, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    /// Free-form description, echoed as ordered `key=value` pairs.
    pub header: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn header_value(&self, key: &str) -> Option<&str> {
        self.header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let mut header = String::new();
        for (k, v) in &self.header {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(AutodiffError::CheckpointFormat(format!(
                    "header entry {k:?} cannot be encoded"
                )));
            }
            header.push_str(k);
            header.push('=');
            header.push_str(v);
            header.push('\n');
        }
        write_len(&mut out, header.len())?;
        out.write_all(header.as_bytes())?;
        write_len(&mut out, self.tensors.len())?;
        for (name, tensor) in &self.tensors {
            write_len(&mut out, name.len())?;
            out.write_all(name.as_bytes())?;
            write_len(&mut out, tensor.shape().len())?;
            for &extent in tensor.shape() {
                out.write_all(&(extent as u64).to_le_bytes())?;
            }
            for v in tensor.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(AutodiffError::CheckpointFormat("bad magic".into()));
        }
        let version = read_u32(&mut input)?;
        if version != CHECKPOINT_VERSION {
            return Err(AutodiffError::CheckpointFormat(format!(
                "unsupported version {version}"
            )));
        }
        let header_len = read_u32(&mut input)? as usize;
        let header_text = read_string(&mut input, header_len)?;
        let mut header = Vec::new();
        for line in header_text.lines() {
            let (k, v) = line.split_once('=').ok_or_else(|| {
                AutodiffError::CheckpointFormat(format!("malformed header line {line:?}"))
            })?;
            header.push((k.to_string(), v.to_string()));
        }
        let count = read_u32(&mut input)?;
        let mut tensors = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name_len = read_u32(&mut input)? as usize;
            let name = read_string(&mut input, name_len)?;
            let rank = read_u32(&mut input)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut buf = [0u8; 8];
                input.read_exact(&mut buf)?;
                shape.push(u64::from_le_bytes(buf) as usize);
            }
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                let mut buf = [0u8; 8];
                input.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            let tensor = Tensor::new(&shape, data)
                .map_err(|e| AutodiffError::CheckpointFormat(format!("tensor {name}: {e}")))?;
            tensors.push((name, tensor));
        }
        Ok(Checkpoint { header, tensors })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

fn write_len<W: Write>(out: &mut W, len: usize) -> Result<()> {
    let len = u32::try_from(len)
        .map_err(|_| AutodiffError::CheckpointFormat(format!("length {len} exceeds u32")))?;
    out.write_all(&len.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_string<R: Read>(input: &mut R, len: usize) -> Result<String> {
    let mut buf = vec![0u8; len];
    input.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| AutodiffError::CheckpointFormat(e.to_string()))
}
