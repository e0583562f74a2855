//! Binary checkpoints.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "GSTC" | version u32 = 1
//! | config_len u32 | training config as JSON (utf-8)
//! | epoch u32
//! | mos y_min f64 | mos y_max f64
//! | refreshes u32 | last refresh epoch u32 (0 when never refreshed)
//! | sampler seed [u8; 32] | sampler stream u64 | word position u128
//! | block_count u32
//! | block_count × ( name_len u32 | name | rows u32 | cols u32 | rows·cols f32, row-major )
//! ```
//!
//! Blocks appear in a fixed order: `attention.{fc1_w, fc1_b, fc2_w, fc2_b}`
//! (omitted for the concatenation variant), `encoder.{fc3_w, fc3_b, w_r, w_z,
//! w_h, u_r, u_z, u_h, b_r, b_z, b_h}`, `pyramid.{conv1_k, conv1_b, conv2_k,
//! conv2_b, fc4_w, fc4_b, fc5_w, fc5_b}`, `prior.{mu, rho}`,
//! `discriminator.{w1, b1, w2, b2, w3, b3}`, then the reference prior as
//! `reference.mu` and `reference.sigma` (`1 × 32` each).

use std::fs;
use std::path::Path;

use crate::autograd::Matrix;
use crate::error::{Error, Result};
use crate::features::{ByteReader, MosScaler};
use crate::params::ModelParams;
use crate::regularizer::{GaussianPrior, SamplerState};
use crate::trainer::{TrainConfig, Trainer};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GSTC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to evaluate, or inspect, a trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub epoch: usize,
    pub scaler: MosScaler,
    pub params: ModelParams,
    pub prior: GaussianPrior,
}

fn quantize(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x as f32 as f64).collect()
}

impl Checkpoint {
    /// Snapshot of a trainer with every tensor rounded to `f32`, so that the
    /// in-memory model and its reloaded file evaluate identically.
    pub fn from_trainer(trainer: &Trainer, scaler: MosScaler) -> Self {
        let mut params = trainer.params.clone();
        params.quantize_f32();
        let mut prior = trainer.prior.clone();
        prior.mu = quantize(&prior.mu);
        prior.sigma = quantize(&prior.sigma);
        Checkpoint {
            config: trainer.config.clone(),
            epoch: trainer.epoch,
            scaler,
            params,
            prior,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let config = serde_json::to_vec(&self.config).map_err(|e| Error::Config(e.to_string()))?;
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(&config);
        out.extend_from_slice(&(self.epoch as u32).to_le_bytes());
        out.extend_from_slice(&self.scaler.y_min.to_le_bytes());
        out.extend_from_slice(&self.scaler.y_max.to_le_bytes());
        out.extend_from_slice(&(self.prior.refreshes as u32).to_le_bytes());
        out.extend_from_slice(&(self.prior.last_refresh_epoch.unwrap_or(0) as u32).to_le_bytes());
        let state = self.prior.sampler_state();
        out.extend_from_slice(&state.seed);
        out.extend_from_slice(&state.stream.to_le_bytes());
        out.extend_from_slice(&state.word_pos.to_le_bytes());

        let reference_mu = Matrix::from_shape_vec((1, self.prior.dim()), self.prior.mu.clone())
            .expect("vector shape");
        let reference_sigma =
            Matrix::from_shape_vec((1, self.prior.dim()), self.prior.sigma.clone())
                .expect("vector shape");
        let mut blocks = self.params.tensors();
        blocks.push(("reference.mu".into(), &reference_mu));
        blocks.push(("reference.sigma".into(), &reference_sigma));

        out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
        for (name, m) in blocks {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
            out.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
            for &v in m.iter() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(r.error_at(0, "bad checkpoint magic".into()));
        }
        let at = r.pos;
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(r.error_at(at, format!("unsupported checkpoint version {version}")));
        }
        let len = r.u32()? as usize;
        let at = r.pos;
        let config: TrainConfig = serde_json::from_slice(r.take(len)?)
            .map_err(|e| r.error_at(at, format!("config: {e}")))?;
        config.validate()?;
        let epoch = r.u32()? as usize;
        let at = r.pos;
        let scaler = MosScaler::new(r.f64()?, r.f64()?)
            .map_err(|e| r.error_at(at, e.to_string()))?;
        let refreshes = r.u32()? as usize;
        let last = r.u32()? as usize;
        let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());

        // A freshly initialized model supplies the expected names and shapes.
        let mut params = ModelParams::init(config.layout(), &mut rand::SeedableRng::seed_from_u64(0));
        let expected: Vec<(String, (usize, usize))> = params
            .tensors()
            .into_iter()
            .map(|(n, m)| (n, m.dim()))
            .collect();
        let at = r.pos;
        let count = r.u32()? as usize;
        if count != expected.len() + 2 {
            return Err(r.error_at(
                at,
                format!("{count} parameter blocks, expected {}", expected.len() + 2),
            ));
        }
        let read_block = |r: &mut ByteReader<'_>, name: &str, dim: (usize, usize)| -> Result<Matrix> {
            let at = r.pos;
            let len = r.u32()? as usize;
            let got = r.take(len)?;
            if got != name.as_bytes() {
                return Err(r.error_at(
                    at,
                    format!("block {:?}, expected {name}", String::from_utf8_lossy(got)),
                ));
            }
            let at = r.pos;
            let shape = (r.u32()? as usize, r.u32()? as usize);
            if shape != dim {
                return Err(r.error_at(at, format!("{name} is {shape:?}, expected {dim:?}")));
            }
            let at = r.pos;
            let m = r.f32_matrix(dim.0, dim.1)?;
            if m.iter().any(|v| !v.is_finite()) {
                return Err(r.error_at(at, format!("{name} holds non-finite values")));
            }
            Ok(m)
        };
        let mut loaded = Vec::with_capacity(expected.len());
        for (name, dim) in &expected {
            loaded.push(read_block(&mut r, name, *dim)?);
        }
        for (slot, m) in params.tensors_mut().into_iter().zip(loaded) {
            *slot = m;
        }
        let dim = params.prior.mu.ncols();
        let at = r.pos;
        let mu = read_block(&mut r, "reference.mu", (1, dim))?;
        let sigma = read_block(&mut r, "reference.sigma", (1, dim))?;
        let mut prior = GaussianPrior::with_params(mu.iter().copied().collect(), sigma.iter().copied().collect(), 0)
            .map_err(|e| r.error_at(at, e.to_string()))?;
        prior.refreshes = refreshes;
        prior.last_refresh_epoch = (last > 0).then_some(last);
        prior.restore_sampler(SamplerState {
            seed,
            stream,
            word_pos,
        });
        if r.pos != bytes.len() {
            return Err(r.error_at(r.pos, "trailing bytes".into()));
        }
        Ok(Checkpoint {
            config,
            epoch,
            scaler,
            params,
            prior,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
