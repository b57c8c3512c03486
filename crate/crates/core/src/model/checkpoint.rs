//! `HHCK` checkpoint files.
//!
//! ```text
//! "HHCK"  u32 version = 1
//! u32 config length, config bytes (`model.*` key = value lines, UTF-8)
//! u32 parameter count, then per parameter:
//!     u32 name length, name bytes, u32 rank, rank × u32 extents, f32 data
//! u64 training step
//! u32 channels C (0 = no statistics), C × f32 mean, C × f32 std
//! u8 optimizer flag; if 1, one f32 array per parameter (same extents)
//! ```
//!
//! All integers and floats little-endian.

use std::path::Path;

use super::config::ModelConfig;
use crate::binio::{read_file, write_file, Reader, WriteLe};
use crate::config::KvConfig;
use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"HHCK";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamStore<f32>,
    /// Optimizer steps completed when the checkpoint was taken.
    pub step: u64,
    pub norm: Option<NormStats>,
    /// RMSProp running averages, in parameter order.
    pub optimizer: Option<Vec<Tensor<f32>>>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.put_u32(VERSION);
        let cfg = self.config.to_kv("model.");
        out.put_u32(cfg.len() as u32);
        out.extend_from_slice(cfg.as_bytes());
        out.put_u32(self.params.len() as u32);
        for (name, t) in self.params.iter() {
            out.put_u32(name.len() as u32);
            out.extend_from_slice(name.as_bytes());
            out.put_u32(t.rank() as u32);
            for &e in t.shape() {
                out.put_u32(e as u32);
            }
            out.put_f32s(t.data());
        }
        out.put_u64(self.step);
        match &self.norm {
            Some(n) => {
                out.put_u32(n.mean.len() as u32);
                out.put_f32s(&n.mean);
                out.put_f32s(&n.std);
            }
            None => out.put_u32(0),
        }
        match &self.optimizer {
            Some(state) => {
                out.put_u8(1);
                for t in state {
                    out.put_f32s(t.data());
                }
            }
            None => out.put_u8(0),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(r.error(format!("unsupported checkpoint version {version}")));
        }
        let len = r.u32("config length")? as usize;
        let at = r.offset();
        let text = std::str::from_utf8(r.bytes(len, "config")?).map_err(|_| Error::Parse {
            offset: at,
            message: "config is not UTF-8".into(),
        })?;
        let kv = KvConfig::parse(text)?;
        let config = ModelConfig::from_kv(&kv, "model.")?;
        kv.reject_unused()?;

        let count = r.u32("parameter count")? as usize;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name_len = r.u32("parameter name length")? as usize;
            let at = r.offset();
            let name = std::str::from_utf8(r.bytes(name_len, "parameter name")?)
                .map_err(|_| Error::Parse {
                    offset: at,
                    message: "parameter name is not UTF-8".into(),
                })?
                .to_string();
            let rank = r.u32("parameter rank")? as usize;
            let shape = (0..rank)
                .map(|_| r.u32("parameter extent").map(|e| e as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().product::<usize>();
            let data = r.f32s(numel, &format!("data of parameter `{name}`"))?;
            let t = Tensor::new(&shape, data).map_err(|e| r.error(e.to_string()))?;
            params.register(name, t).map_err(|e| r.error(e.to_string()))?;
        }

        let step = r.u64("training step")?;
        let channels = r.u32("normalization channel count")? as usize;
        let norm = if channels == 0 {
            None
        } else {
            let mean = r.f32s(channels, "normalization mean")?;
            let std = r.f32s(channels, "normalization std")?;
            Some(NormStats { mean, std })
        };
        let optimizer = match r.u8("optimizer flag")? {
            0 => None,
            1 => Some(
                params
                    .values()
                    .map(|p| {
                        let d = r.f32s(p.len(), "optimizer state")?;
                        Tensor::new(p.shape(), d)
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
            f => return Err(r.error(format!("bad optimizer flag {f}"))),
        };
        r.finish()?;
        Ok(Self {
            config,
            params,
            step,
            norm,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HybridHashModel;

    fn sample() -> Checkpoint {
        let model = HybridHashModel::<f32>::new(&ModelConfig::reduced(), 5).unwrap();
        let opt = model.params.values().map(|p| p.map(|x| x * x)).collect();
        Checkpoint {
            config: model.config().clone(),
            params: model.params.clone(),
            step: 17,
            norm: Some(NormStats {
                mean: vec![0.25, 0.5, 0.75],
                std: vec![0.1, 0.2, 0.3],
            }),
            optimizer: Some(opt),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn header_and_truncation_errors() {
        let bytes = sample().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Parse { offset: 0, .. })));
        let err = Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(err.to_string().contains("optimizer state"), "{err}");
        let err = Checkpoint::from_bytes(&bytes[..40]).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }
}
