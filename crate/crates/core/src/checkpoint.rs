//! Binary checkpoint format.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "CYG1"
//! 4       4     N       (u32 LE, entities)
//! 8       4     R_aug   (u32 LE, relations seen by the model)
//! 12      4     T       (u32 LE, snapshots in the dataset)
//! 16      4     d       (u32 LE, embedding dimension)
//! 20      4     M       (f32 LE, copy mask magnitude)
//! 24      4     alpha   (f32 LE)
//! 28      ...   f32 LE arrays, row-major, in order:
//!               entity_emb  N x d
//!               relation_emb R_aug x d
//!               time_unit   d
//!               copy_weight N x 3d
//!               copy_bias   N
//!               gen_weight  N x 3d
//!               gen_bias    N
//! ```
//!
//! Nothing follows the last array. The resolved run configuration lives in a
//! sidecar `<checkpoint>.cfg` file.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::model::ModelParams;

pub const MAGIC: &[u8; 4] = b"CYG1";
const HEADER_LEN: usize = 28;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    pub num_snapshots: u32,
    pub mask_magnitude: f32,
    pub alpha: f32,
}

impl Checkpoint {
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + 4 * self.params.tensors().iter().map(|t| t.len()).sum::<usize>()
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let p = &self.params;
        let mut buf = Vec::with_capacity(self.encoded_len());
        buf.extend_from_slice(MAGIC);
        for v in [
            p.num_entities(),
            p.num_relations(),
            self.num_snapshots as usize,
            p.dim(),
        ] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        buf.extend_from_slice(&self.mask_magnitude.to_le_bytes());
        buf.extend_from_slice(&self.alpha.to_le_bytes());
        for t in p.tensors() {
            for x in t {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        out.write_all(&buf)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.encoded_len());
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(Error::Checkpoint("missing CYG1 header".into()));
        }
        let word = |i: usize| -> [u8; 4] { bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap() };
        let n = u32::from_le_bytes(word(0)) as usize;
        let r = u32::from_le_bytes(word(1)) as usize;
        let num_snapshots = u32::from_le_bytes(word(2));
        let d = u32::from_le_bytes(word(3)) as usize;
        let mask_magnitude = f32::from_le_bytes(word(4));
        let alpha = f32::from_le_bytes(word(5));

        let mut params = ModelParams::<f32>::zeros(n, r, d);
        let expected = HEADER_LEN + 4 * params.tensors().iter().map(|t| t.len()).sum::<usize>();
        if bytes.len() != expected {
            return Err(Error::Checkpoint(format!(
                "expected {expected} bytes for N={n} R={r} d={d}, found {}",
                bytes.len()
            )));
        }
        let mut floats = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        for t in params.tensors_mut() {
            for (x, v) in t.iter_mut().zip(&mut floats) {
                *x = v;
            }
        }
        if !params.is_finite() {
            return Err(Error::Checkpoint("non-finite parameter values".into()));
        }
        Ok(Checkpoint {
            params,
            num_snapshots,
            mask_magnitude,
            alpha,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        self.write_to(&mut out)
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

/// `<path>.cfg`, where artifacts keep their resolved configuration.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".cfg");
    PathBuf::from(name)
}

pub fn write_sidecar(path: &Path, config: &KeyValues) -> Result<()> {
    let side = sidecar_path(path);
    fs::write(&side, config.to_string()).map_err(|e| Error::io(&side, e))
}

/// Reads the sidecar if it exists.
pub fn read_sidecar(path: &Path) -> Result<Option<KeyValues>> {
    let side = sidecar_path(path);
    match fs::read_to_string(&side) {
        Ok(text) => KeyValues::parse(&text).map(Some),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(&side, e)),
    }
}
