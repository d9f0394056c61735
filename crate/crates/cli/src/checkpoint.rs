//! `SGCK` checkpoint archive: resolved configuration, step counter, named
//! parameters (running statistics included), Adam moments and the loss trace.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic "SGCK", u16 version (1)
//! u32 length + UTF-8 configuration text
//! u64 completed steps
//! u32 parameter count, then per parameter: u32 name length, name, tensor
//! u32 moment count, then per entry: u32 name length, name, first, second
//! tensor holding the loss trace
//! ```
//!
//! Every tensor is an embedded `SGSE` block with its own checksum. Trace
//! values are `f32` losses widened to `f64`, so storing them as `f32` is exact.

use std::fs;
use std::path::Path;

use segse_core::params::ParamId;
use segse_core::train::Trainer;
use segse_core::Tensor;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult, FormatError};
use crate::tensorfile::{decode_from, encode_into, Reader, TensorData};

pub const MAGIC: [u8; 4] = *b"SGCK";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_text: String,
    pub step: u64,
    pub params: Vec<(String, Tensor<f32>)>,
    /// (name, first moment, second moment); empty for non-trainable entries.
    pub moments: Vec<(String, Vec<f32>, Vec<f32>)>,
    pub trace: Vec<f64>,
}

fn put_name(out: &mut Vec<u8>, name: &str) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
}

fn get_name(r: &mut Reader<'_>) -> Result<String, FormatError> {
    let len = r.u32()? as usize;
    let bytes = r.take(len)?;
    String::from_utf8(bytes.to_vec()).map_err(|_| FormatError::Malformed("name is not UTF-8".into()))
}

fn vector(t: TensorData) -> Result<Vec<f32>, FormatError> {
    Ok(t.into_f32()?.data().to_vec())
}

fn flat(v: &[f32]) -> TensorData {
    TensorData::F32(Tensor::new(&[v.len()], v.to_vec()).expect("1-D length matches"))
}

impl Checkpoint {
    pub fn from_trainer(trainer: &Trainer, config: &RunConfig) -> Self {
        let store = &trainer.store;
        let params = store
            .ids()
            .map(|id| (store.name(id).to_string(), store.value(id).clone()))
            .collect();
        let moments = store
            .ids()
            .map(|id| {
                let (m, v) = trainer.adam.moments(id);
                (store.name(id).to_string(), m.to_vec(), v.to_vec())
            })
            .collect();
        Self {
            config_text: config.to_text(),
            step: trainer.step(),
            params,
            moments,
            trace: trainer.trace.clone(),
        }
    }

    pub fn config(&self) -> CliResult<RunConfig> {
        RunConfig::parse(&self.config_text).map_err(|e| CliError::validation(format!("checkpoint configuration: {}", e.message)))
    }

    /// Rebuilds the trainer, loading parameters, moments and trace by name.
    pub fn restore(&self) -> CliResult<(RunConfig, Trainer)> {
        let config = self.config()?;
        let mut trainer = Trainer::new(config.network.clone(), config.train.clone())?;
        self.restore_into(&mut trainer)?;
        Ok((config, trainer))
    }

    pub fn restore_into(&self, trainer: &mut Trainer) -> CliResult<()> {
        trainer.store.load_named(self.params.clone())?;
        let ids: Vec<ParamId> = trainer.store.ids().collect();
        let mut first = vec![Vec::new(); ids.len()];
        let mut second = vec![Vec::new(); ids.len()];
        let mut unknown = Vec::new();
        for (name, m, v) in &self.moments {
            match trainer.store.find(name) {
                Some(id) => {
                    first[id.index()] = m.clone();
                    second[id.index()] = v.clone();
                }
                None => unknown.push(name.clone()),
            }
        }
        if !unknown.is_empty() {
            return Err(segse_core::Error::UnknownParams(unknown).into());
        }
        trainer.adam.restore(self.step, first, second)?;
        if self.trace.len() as u64 != self.step {
            return Err(CliError::validation(format!(
                "checkpoint trace has {} entries for step {}",
                self.trace.len(),
                self.step
            )));
        }
        trainer.trace = self.trace.clone();
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_name(&mut out, &self.config_text);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in &self.params {
            put_name(&mut out, name);
            encode_into(&TensorData::F32(t.clone()), &mut out);
        }
        out.extend_from_slice(&(self.moments.len() as u32).to_le_bytes());
        for (name, m, v) in &self.moments {
            put_name(&mut out, name);
            encode_into(&flat(m), &mut out);
            encode_into(&flat(v), &mut out);
        }
        let trace: Vec<f32> = self.trace.iter().map(|&v| v as f32).collect();
        encode_into(&flat(&trace), &mut out);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::new(bytes);
        let magic = r.array::<4>()?;
        if magic != MAGIC {
            return Err(FormatError::BadMagic {
                expected: MAGIC,
                found: magic,
            });
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(FormatError::Version {
                expected: VERSION,
                found: version,
            });
        }
        let config_text = get_name(&mut r)?;
        let step = r.u64()?;
        let n = r.u32()? as usize;
        let mut params = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            let name = get_name(&mut r)?;
            params.push((name, decode_from(&mut r)?.into_f32()?));
        }
        let n = r.u32()? as usize;
        let mut moments = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            let name = get_name(&mut r)?;
            let m = vector(decode_from(&mut r)?)?;
            let v = vector(decode_from(&mut r)?)?;
            moments.push((name, m, v));
        }
        let trace = vector(decode_from(&mut r)?)?.into_iter().map(f64::from).collect();
        if r.remaining() > 0 {
            return Err(FormatError::Trailing(r.remaining()));
        }
        Ok(Self {
            config_text,
            step,
            params,
            moments,
            trace,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), FormatError> {
        fs::write(path, self.encode()).map_err(|e| FormatError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self, FormatError> {
        let bytes = fs::read(path).map_err(|e| FormatError::io(path, e))?;
        Self::decode(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use segse_core::net::NetworkConfig;

    fn small_config() -> RunConfig {
        let mut c = RunConfig::default();
        c.network = NetworkConfig {
            base_width: 3,
            ..NetworkConfig::default()
        };
        c
    }

    #[test]
    fn encode_decode_identity() {
        let c = small_config();
        let trainer = Trainer::new(c.network.clone(), c.train.clone()).unwrap();
        let ck = Checkpoint::from_trainer(&trainer, &c);
        assert_eq!(Checkpoint::decode(&ck.encode()).unwrap(), ck);
        let bytes = ck.encode();
        assert!(matches!(Checkpoint::decode(&bytes[..bytes.len() - 3]), Err(FormatError::Truncated { .. })));
    }

    #[test]
    fn mismatched_config_lists_missing_names() {
        let c = small_config();
        let trainer = Trainer::new(c.network.clone(), c.train.clone()).unwrap();
        let mut ck = Checkpoint::from_trainer(&trainer, &c);
        ck.params.retain(|(n, _)| !n.starts_with("rr1."));
        let err = ck.restore().unwrap_err();
        assert!(err.message.contains("rr1.expand.weight"), "{}", err.message);
    }
}
