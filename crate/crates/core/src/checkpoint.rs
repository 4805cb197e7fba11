//! Binary checkpoint format (all integers and floats little-endian):
//!
//! ```text
//! "RDIV"                      magic, 4 bytes
//! u32 version                 currently 1
//! u32 input_size, u32 channels, u32 S, u32 B, u32 C
//! u32 layer_count, then per layer:
//!     u8 tag = 0  conv2d     u32 out_channels, u32 kernel, u32 stride, u32 padding
//!     u8 tag = 1  maxpool2
//!     u8 tag = 2  activation u8 kind (0 identity, 1 sigmoid, 2 leaky_relu), f64 slope
//! u64 steps, f64 final_loss, u64 seed
//! u32 tensor_count, then per tensor: u64 offset, u64 len   (in values)
//! u64 param_count
//! f64 × param_count           flat parameters, tensor after tensor
//! ```
//!
//! Nothing may follow the parameter block.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::geometry::GridSpec;
use crate::model::{LayerSpec, Model, ModelError, NetworkConfig};
use crate::tensor::{Activation, Tensor};

pub const MAGIC: &[u8; 4] = b"RDIV";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access checkpoint {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("corrupt checkpoint at byte {offset}: {detail}")]
    Corrupt { offset: usize, detail: String },
    #[error("unsupported checkpoint version {found} (this build reads version {FORMAT_VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("checkpoint does not describe a valid network: {0}")]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainingMetadata {
    pub steps: u64,
    pub final_loss: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub meta: TrainingMetadata,
}

impl Checkpoint {
    pub fn new(model: Model, meta: TrainingMetadata) -> Self {
        Checkpoint { model, meta }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let cfg = self.model.config();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        for v in [cfg.input_size, cfg.channels, cfg.grid.s, cfg.grid.b, cfg.grid.c] {
            put_u32(&mut out, v as u32);
        }
        put_u32(&mut out, cfg.backbone.len() as u32);
        for layer in &cfg.backbone {
            match *layer {
                LayerSpec::Conv2d {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    out.push(0);
                    for v in [out_channels, kernel, stride, padding] {
                        put_u32(&mut out, v as u32);
                    }
                }
                LayerSpec::MaxPool2 => out.push(1),
                LayerSpec::Activation(kind) => {
                    out.push(2);
                    let (tag, slope) = match kind {
                        Activation::Identity => (0, 0.0),
                        Activation::Sigmoid => (1, 0.0),
                        Activation::LeakyRelu(a) => (2, a),
                    };
                    out.push(tag);
                    out.extend_from_slice(&slope.to_le_bytes());
                }
            }
        }
        out.extend_from_slice(&self.meta.steps.to_le_bytes());
        out.extend_from_slice(&self.meta.final_loss.to_le_bytes());
        out.extend_from_slice(&self.meta.seed.to_le_bytes());

        let params = self.model.params();
        put_u32(&mut out, params.len() as u32);
        let mut offset = 0u64;
        for p in params {
            out.extend_from_slice(&offset.to_le_bytes());
            out.extend_from_slice(&(p.len() as u64).to_le_bytes());
            offset += p.len() as u64;
        }
        out.extend_from_slice(&offset.to_le_bytes());
        for p in params {
            for v in p.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(CheckpointError::Corrupt {
                offset: 0,
                detail: "bad magic, not an RDIV checkpoint".into(),
            });
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion { found: version });
        }
        let input_size = r.u32("input size")? as usize;
        let channels = r.u32("channels")? as usize;
        let grid = GridSpec {
            s: r.u32("grid S")? as usize,
            b: r.u32("grid B")? as usize,
            c: r.u32("grid C")? as usize,
        };
        let layer_count = r.u32("layer count")? as usize;
        let mut backbone = Vec::new();
        for _ in 0..layer_count {
            let at = r.pos;
            let layer = match r.u8("layer tag")? {
                0 => LayerSpec::Conv2d {
                    out_channels: r.u32("conv channels")? as usize,
                    kernel: r.u32("conv kernel")? as usize,
                    stride: r.u32("conv stride")? as usize,
                    padding: r.u32("conv padding")? as usize,
                },
                1 => LayerSpec::MaxPool2,
                2 => {
                    let kind_at = r.pos;
                    let kind = r.u8("activation kind")?;
                    let slope = r.f64("activation slope")?;
                    LayerSpec::Activation(match kind {
                        0 => Activation::Identity,
                        1 => Activation::Sigmoid,
                        2 => Activation::LeakyRelu(slope),
                        other => return Err(r.corrupt_at(kind_at, format!("activation kind {other}"))),
                    })
                }
                other => return Err(r.corrupt_at(at, format!("unknown layer tag {other}"))),
            };
            backbone.push(layer);
        }
        let meta = TrainingMetadata {
            steps: r.u64("steps")?,
            final_loss: r.f64("final loss")?,
            seed: r.u64("seed")?,
        };
        let config = NetworkConfig {
            input_size,
            channels,
            backbone,
            grid,
        };
        let plan = config.plan()?;

        let table_at = r.pos;
        let tensor_count = r.u32("tensor count")? as usize;
        if tensor_count != plan.param_shapes.len() {
            return Err(r.corrupt_at(
                table_at,
                format!(
                    "{tensor_count} tensors listed, config needs {}",
                    plan.param_shapes.len()
                ),
            ));
        }
        let mut expected_offset = 0u64;
        for shape in &plan.param_shapes {
            let at = r.pos;
            let offset = r.u64("tensor offset")?;
            let len = r.u64("tensor length")?;
            let want = shape.iter().product::<usize>() as u64;
            if offset != expected_offset || len != want {
                return Err(r.corrupt_at(
                    at,
                    format!("tensor entry ({offset}, {len}) expected ({expected_offset}, {want})"),
                ));
            }
            expected_offset += len;
        }
        let count_at = r.pos;
        let count = r.u64("parameter count")?;
        if count != plan.param_count() as u64 {
            return Err(r.corrupt_at(
                count_at,
                format!("{count} parameters stored, config needs {}", plan.param_count()),
            ));
        }
        let mut params = Vec::with_capacity(plan.param_shapes.len());
        for shape in &plan.param_shapes {
            let n: usize = shape.iter().product();
            let raw = r.take(8 * n, "parameter block")?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            params.push(Tensor::new(shape, data).expect("planned shape"));
        }
        if r.pos != bytes.len() {
            return Err(r.corrupt_at(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let model = Model::from_parts(config, params)?;
        Ok(Checkpoint { model, meta })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

pub fn save_checkpoint(model: &Model, meta: TrainingMetadata, path: &Path) -> Result<(), CheckpointError> {
    Checkpoint::new(model.clone(), meta).save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    Checkpoint::load(path)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn corrupt_at(&self, offset: usize, detail: String) -> CheckpointError {
        CheckpointError::Corrupt { offset, detail }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(self.corrupt_at(
                self.pos,
                format!(
                    "truncated while reading {what}: need {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}
