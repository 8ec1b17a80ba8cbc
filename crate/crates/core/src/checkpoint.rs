//! Binary checkpoint format.
//!
//! Layout (little endian): magic `SGDNCKPT`, `u32` schema version, `u8` dtype
//! code, the model config, ablation flag bits, `u64` step, the named
//! parameter tensors, optional Adam moments, and a trailing FNV-1a 64 checksum
//! of every preceding byte.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::backbone::{Ablation, ModelConfig, SgdnModel};
use crate::error::{Result, SgdnError};
use crate::optim::Adam;
use crate::params::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SGDNCKPT";
pub const SCHEMA_VERSION: u32 = 1;

/// Everything needed to rebuild a model and resume its training.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub config: ModelConfig,
    pub ablation: Ablation,
    pub step: u64,
    pub params: ParamStore<T>,
    pub optimizer: Option<Adam<T>>,
}

/// FNV-1a 64-bit hash.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn ablation_bits(a: Ablation) -> u8 {
    a.use_bgb as u8 | (a.use_pim as u8) << 1 | (a.use_iam as u8) << 2 | (a.use_cem as u8) << 3
}

fn ablation_from_bits(b: u8) -> Result<Ablation> {
    if b >> 4 != 0 {
        return Err(SgdnError::Checkpoint(format!("unknown ablation bits {b:#04x}")));
    }
    Ok(Ablation {
        use_bgb: b & 1 != 0,
        use_pim: b & 2 != 0,
        use_iam: b & 4 != 0,
        use_cem: b & 8 != 0,
    })
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn values<T: Real>(&mut self, t: &Tensor<T>) {
        for &v in t.data() {
            v.write_le(&mut self.0);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| SgdnError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn values<T: Real>(&mut self, shape: &[usize]) -> Result<Tensor<T>> {
        let n: usize = shape.iter().product();
        let size = core::mem::size_of::<T>();
        let raw = self.take(n.checked_mul(size).ok_or_else(|| SgdnError::Checkpoint("tensor too large".to_string()))?)?;
        Ok(Tensor::from_vec(shape, raw.chunks_exact(size).map(T::read_le).collect()))
    }
}

impl<T: Real> Checkpoint<T> {
    pub fn from_model(model: &SgdnModel<T>, step: u64, optimizer: Option<&Adam<T>>) -> Self {
        Self {
            config: model.config().clone(),
            ablation: model.ablation(),
            step,
            params: model.params().clone(),
            optimizer: optimizer.cloned(),
        }
    }

    pub fn model(&self) -> Result<SgdnModel<T>> {
        SgdnModel::from_params(self.config.clone(), self.ablation, self.params.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.0.extend_from_slice(&SCHEMA_VERSION.to_le_bytes());
        w.u8(T::DTYPE.code());
        let c = &self.config;
        w.u32(c.base_channels);
        w.u32(c.stages);
        w.u32(c.blocks_per_stage.len());
        for &b in &c.blocks_per_stage {
            w.u32(b);
        }
        w.u32(c.attn_heads);
        w.u32(c.large_kernel_size);
        w.u8(ablation_bits(self.ablation));
        w.u64(self.step);
        w.u32(self.params.len());
        for (name, t) in self.params.iter() {
            w.u32(name.len());
            w.0.extend_from_slice(name.as_bytes());
            w.u32(t.ndim());
            for &d in t.shape() {
                w.u32(d);
            }
            w.values(t);
        }
        match &self.optimizer {
            None => w.u8(0),
            Some(opt) => {
                w.u8(1);
                w.u64(opt.step);
                for t in opt.m.iter().chain(&opt.v) {
                    w.values(t);
                }
            }
        }
        let sum = fnv1a(&w.0);
        w.u64(sum);
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(SgdnError::Checkpoint("not a checkpoint file".to_string()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != SCHEMA_VERSION {
            return Err(SgdnError::SchemaVersion {
                found: version,
                expected: SCHEMA_VERSION,
            });
        }
        if bytes.len() < 20 {
            return Err(SgdnError::Checkpoint("truncated".to_string()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        if fnv1a(body) != u64::from_le_bytes(tail.try_into().unwrap()) {
            return Err(SgdnError::Checkpoint("checksum mismatch".to_string()));
        }
        let mut r = Reader { bytes: body, pos: 12 };
        let dtype = r.u8()?;
        if dtype != T::DTYPE.code() {
            return Err(SgdnError::Checkpoint(format!(
                "stored dtype code {dtype} does not match requested {:?}",
                T::DTYPE
            )));
        }
        let base_channels = r.u32()?;
        let stages = r.u32()?;
        let nb = r.u32()?;
        if nb > 64 {
            return Err(SgdnError::Checkpoint(format!("implausible stage count {nb}")));
        }
        let blocks_per_stage = (0..nb).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let config = ModelConfig {
            base_channels,
            stages,
            blocks_per_stage,
            attn_heads: r.u32()?,
            large_kernel_size: r.u32()?,
        };
        let ablation = ablation_from_bits(r.u8()?)?;
        let step = r.u64()?;
        let count = r.u32()?;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let len = r.u32()?;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| SgdnError::Checkpoint("parameter name is not UTF-8".to_string()))?;
            let ndim = r.u32()?;
            if ndim > 8 {
                return Err(SgdnError::Checkpoint(format!("parameter `{name}` has rank {ndim}")));
            }
            let shape = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let t = r.values(&shape)?;
            params.add(name, t);
        }
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let opt_step = r.u64()?;
                let shapes: Vec<Vec<usize>> = params.iter().map(|(_, t)| t.shape().to_vec()).collect();
                let m = shapes.iter().map(|s| r.values(s)).collect::<Result<Vec<_>>>()?;
                let v = shapes.iter().map(|s| r.values(s)).collect::<Result<Vec<_>>>()?;
                Some(Adam { step: opt_step, m, v })
            }
            other => return Err(SgdnError::Checkpoint(format!("bad optimizer marker {other}"))),
        };
        if r.pos != body.len() {
            return Err(SgdnError::Checkpoint(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(Self {
            config,
            ablation,
            step,
            params,
            optimizer,
        })
    }
}
