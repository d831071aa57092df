//! Binary container for named f64 tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "CBTC"
//! version u32      currently 1
//! count   u32      number of tensors
//! entry   repeated count times:
//!   name_len u16, name utf-8 bytes
//!   dtype    u8   (0 = f64)
//!   ndim     u8
//!   dims     ndim x u64
//!   payload  product(dims) x f64, row-major
//! ```
//!
//! Used for model checkpoints and for exported seed/affinity/attention
//! tensors.

use ndarray::{ArrayD, IxDyn};
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CBTC";
const VERSION: u32 = 1;
const DTYPE_F64: u8 = 0;

#[derive(Debug, Clone, Default)]
pub struct TensorContainer {
    entries: Vec<(String, ArrayD<f64>)>,
}

impl TensorContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: ArrayD<f64>) {
        self.entries.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, tensor) in &self.entries {
            let bytes = name.as_bytes();
            if bytes.len() > u16::MAX as usize {
                return Err(Error::Checkpoint { name: name.clone(), reason: "name too long".into() });
            }
            w.write_all(&(bytes.len() as u16).to_le_bytes())?;
            w.write_all(bytes)?;
            w.write_all(&[DTYPE_F64, tensor.ndim() as u8])?;
            for &d in tensor.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            let standard = tensor.as_standard_layout();
            for &v in standard.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint { name: "<header>".into(), reason: "bad magic".into() });
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != VERSION {
            return Err(Error::Checkpoint {
                name: "<header>".into(),
                reason: format!("unsupported version {version}"),
            });
        }
        r.read_exact(&mut u32buf)?;
        let count = u32::from_le_bytes(u32buf);

        let mut entries = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let mut u16buf = [0u8; 2];
            r.read_exact(&mut u16buf)?;
            let name_len = u16::from_le_bytes(u16buf) as usize;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes).map_err(|_| Error::Checkpoint {
                name: "<entry>".into(),
                reason: "name is not utf-8".into(),
            })?;
            let mut two = [0u8; 2];
            r.read_exact(&mut two)?;
            let (dtype, ndim) = (two[0], two[1] as usize);
            if dtype != DTYPE_F64 {
                return Err(Error::Checkpoint { name, reason: format!("unsupported dtype {dtype}") });
            }
            let mut dims = Vec::with_capacity(ndim);
            let mut u64buf = [0u8; 8];
            for _ in 0..ndim {
                r.read_exact(&mut u64buf)?;
                dims.push(u64::from_le_bytes(u64buf) as usize);
            }
            let len: usize = dims.iter().product();
            let mut data = vec![0f64; len];
            for v in &mut data {
                r.read_exact(&mut u64buf)?;
                *v = f64::from_le_bytes(u64buf);
            }
            let tensor = ArrayD::from_shape_vec(IxDyn(&dims), data).map_err(|e| Error::Checkpoint {
                name: name.clone(),
                reason: format!("shape error: {e}"),
            })?;
            entries.push((name, tensor));
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}
