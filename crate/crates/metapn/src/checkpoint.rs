//! Binary parameter checkpoints.
//!
//! Layout: the magic bytes `MPN1`, then one record per tensor until end of
//! file. A record is a `u32` name length, the UTF-8 name, a `u32` rank, `rank`
//! `u64` dimensions and the `f64` payload. All integers and floats are
//! little-endian.

use std::fs;
use std::io;
use std::path::Path;

use metapn_core::mlp::{Layer, MlpParams};
use metapn_core::propagation::PropagatorParams;
use metapn_core::DenseMatrix;

pub const MAGIC: &[u8; 4] = b"MPN1";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,

    #[error("truncated checkpoint at byte {0}")]
    Truncated(usize),

    #[error("tensor name is not UTF-8")]
    BadName,

    #[error("missing tensor {0}")]
    MissingTensor(String),

    #[error("tensor {name} has shape {dims:?}, expected rank {rank}")]
    BadShape {
        name: String,
        dims: Vec<usize>,
        rank: usize,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Core(#[from] metapn_core::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn push(&mut self, name: impl Into<String>, dims: Vec<usize>, data: Vec<f64>) {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        self.tensors.push(Tensor {
            name: name.into(),
            dims,
            data,
        });
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, CheckpointError> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| CheckpointError::MissingTensor(name.into()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for &d in &t.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let rest = bytes.strip_prefix(MAGIC).ok_or(CheckpointError::BadMagic)?;
        let mut reader = Reader { bytes: rest, pos: 0 };
        let mut ckpt = Checkpoint::default();
        while !reader.done() {
            let name_len = reader.u32()? as usize;
            let name = std::str::from_utf8(reader.take(name_len)?)
                .map_err(|_| CheckpointError::BadName)?
                .to_owned();
            let rank = reader.u32()? as usize;
            let dims = (0..rank)
                .map(|_| reader.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let len: usize = dims.iter().product();
            let data = reader
                .take(len.checked_mul(8).ok_or(CheckpointError::Truncated(reader.offset()))?)?
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
                .collect();
            ckpt.tensors.push(Tensor { name, dims, data });
        }
        Ok(ckpt)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        Ok(fs::write(path, self.to_bytes())?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Names: `theta.layer{i}.weight`, `theta.layer{i}.bias`, `phi.attn`, `phi.weight`.
    pub fn from_params(theta: &MlpParams, phi: &PropagatorParams) -> Self {
        let mut ckpt = Checkpoint::default();
        for (i, layer) in theta.layers.iter().enumerate() {
            let w = &layer.weight;
            ckpt.push(
                format!("theta.layer{i}.weight"),
                vec![w.n_rows(), w.n_cols()],
                w.data().to_vec(),
            );
            ckpt.push(
                format!("theta.layer{i}.bias"),
                vec![layer.bias.len()],
                layer.bias.clone(),
            );
        }
        ckpt.push("phi.attn", vec![phi.attn.len()], phi.attn.clone());
        ckpt.push(
            "phi.weight",
            vec![phi.weight.n_rows(), phi.weight.n_cols()],
            phi.weight.data().to_vec(),
        );
        ckpt
    }

    /// Inverse of [`Checkpoint::from_params`]; dropout is not stored.
    pub fn to_params(&self, dropout_rate: f64) -> Result<(MlpParams, PropagatorParams), CheckpointError> {
        let mut layers = Vec::new();
        while let Ok(w) = self.get(&format!("theta.layer{}.weight", layers.len())) {
            let b = self.get(&format!("theta.layer{}.bias", layers.len()))?;
            layers.push(Layer {
                weight: matrix(w)?,
                bias: vector(b)?,
            });
        }
        if layers.is_empty() {
            return Err(CheckpointError::MissingTensor("theta.layer0.weight".into()));
        }
        let phi = PropagatorParams {
            attn: vector(self.get("phi.attn")?)?,
            weight: matrix(self.get("phi.weight")?)?,
        };
        Ok((
            MlpParams {
                layers,
                dropout_rate,
            },
            phi,
        ))
    }
}

fn bad_shape(t: &Tensor, rank: usize) -> CheckpointError {
    CheckpointError::BadShape {
        name: t.name.clone(),
        dims: t.dims.clone(),
        rank,
    }
}

fn matrix(t: &Tensor) -> Result<DenseMatrix, CheckpointError> {
    match t.dims[..] {
        [r, c] => Ok(DenseMatrix::from_vec(r, c, t.data.clone())?),
        _ => Err(bad_shape(t, 2)),
    }
}

fn vector(t: &Tensor) -> Result<Vec<f64>, CheckpointError> {
    match t.dims[..] {
        [_] => Ok(t.data.clone()),
        _ => Err(bad_shape(t, 1)),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }

    fn offset(&self) -> usize {
        MAGIC.len() + self.pos
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(CheckpointError::Truncated(self.offset()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
