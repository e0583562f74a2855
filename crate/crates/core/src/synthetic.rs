//! Synthetic feature datasets with a known quality signal.
//!
//! Every video gets a latent quality `q ~ U[0, 1]` and `MOS = 100·q`. The
//! first `signal_channels` channels of both the mean and the std features
//! follow a per-channel affine function of `q` plus per-frame Gaussian noise;
//! every other channel is pure noise. Std channels store the absolute value
//! of their draw.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autograd::Matrix;
use crate::error::{Error, Result};
use crate::features::{DatasetManifest, FeatureSequence, ManifestRecord, write_feature_file};
use crate::params::FEATURE_DIM;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub videos: usize,
    pub t_min: usize,
    pub t_max: usize,
    pub signal_channels: usize,
    pub noise: f64,
    pub seed: u64,
    /// Videos placed in `test.csv`; the rest go to `train.csv`.
    pub holdout: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            videos: 200,
            t_min: 8,
            t_max: 64,
            signal_channels: 16,
            noise: 0.1,
            seed: 0,
            holdout: 50,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.videos == 0 {
            return bad("at least one video is required".into());
        }
        if self.t_min < 1 || self.t_max < self.t_min {
            return bad(format!("frame range [{}, {}] is invalid", self.t_min, self.t_max));
        }
        if self.signal_channels > FEATURE_DIM {
            return bad(format!(
                "{} signal channels exceed the {FEATURE_DIM} available",
                self.signal_channels
            ));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return bad(format!("noise scale {} must be finite and ≥ 0", self.noise));
        }
        if self.holdout >= self.videos {
            return bad(format!(
                "holdout {} leaves no training videos out of {}",
                self.holdout, self.videos
            ));
        }
        Ok(())
    }
}

/// Per-channel response `offset + slope·(q − 1/2)` of one signal channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelResponse {
    pub offset: f64,
    pub slope: f64,
}

impl ChannelResponse {
    pub fn at(&self, q: f64) -> f64 {
        self.offset + self.slope * (q - 0.5)
    }
}

/// In-memory synthetic dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub videos: Vec<FeatureSequence>,
    pub quality: Vec<f64>,
    pub mean_response: Vec<ChannelResponse>,
    pub std_response: Vec<ChannelResponse>,
}

impl SyntheticData {
    pub fn mos(&self) -> Vec<f64> {
        self.quality.iter().map(|q| 100.0 * q).collect()
    }
}

/// Paths written by [`write_synthetic`].
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticFiles {
    pub manifest: PathBuf,
    pub train: PathBuf,
    pub test: PathBuf,
}

fn slope(rng: &mut ChaCha8Rng) -> f64 {
    let magnitude = rng.random_range(0.5..1.5);
    if rng.random_bool(0.5) { magnitude } else { -magnitude }
}

/// Generate a dataset in memory.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.signal_channels;
    let mean_response: Vec<ChannelResponse> = (0..k)
        .map(|_| ChannelResponse {
            offset: rng.random_range(-0.5..0.5),
            slope: slope(&mut rng),
        })
        .collect();
    // offsets keep std responses positive over q ∈ [0, 1]
    let std_response: Vec<ChannelResponse> = (0..k)
        .map(|_| ChannelResponse {
            offset: 1.0,
            slope: slope(&mut rng),
        })
        .collect();

    let mut videos = Vec::with_capacity(spec.videos);
    let mut quality = Vec::with_capacity(spec.videos);
    for i in 0..spec.videos {
        let q: f64 = rng.random_range(0.0..=1.0);
        let t = rng.random_range(spec.t_min..=spec.t_max);
        let noise = |rng: &mut ChaCha8Rng| spec.noise * rng.sample::<f64, _>(StandardNormal);
        let mut mean = Matrix::zeros((t, FEATURE_DIM));
        let mut std = Matrix::zeros((t, FEATURE_DIM));
        for f in 0..t {
            for c in 0..FEATURE_DIM {
                let (m, s) = if c < k {
                    (mean_response[c].at(q), std_response[c].at(q))
                } else {
                    (0.0, 0.0)
                };
                mean[[f, c]] = m + noise(&mut rng);
                std[[f, c]] = (s + noise(&mut rng)).abs();
            }
        }
        videos.push(FeatureSequence::new(format!("vid_{i:04}"), mean, std)?);
        quality.push(q);
    }
    Ok(SyntheticData {
        videos,
        quality,
        mean_response,
        std_response,
    })
}

/// Generate a dataset and write `features/*.gstf`, `manifest.csv` (all
/// videos), `train.csv` and `test.csv` under `out`. The last
/// `spec.holdout` videos form the test split.
pub fn write_synthetic(spec: &SyntheticSpec, out: impl AsRef<Path>) -> Result<SyntheticFiles> {
    let out = out.as_ref();
    let data = generate(spec)?;
    let features = out.join("features");
    fs::create_dir_all(&features).map_err(|e| Error::io(&features, e))?;

    let mut records = Vec::with_capacity(data.videos.len());
    for (seq, mos) in data.videos.iter().zip(data.mos()) {
        let rel = PathBuf::from("features").join(format!("{}.gstf", seq.video_id));
        write_feature_file(out.join(&rel), seq)?;
        records.push(ManifestRecord {
            video_id: seq.video_id.clone(),
            feature_path: rel,
            mos,
        });
    }

    let split = records.len() - spec.holdout;
    let files = SyntheticFiles {
        manifest: out.join("manifest.csv"),
        train: out.join("train.csv"),
        test: out.join("test.csv"),
    };
    for (path, recs) in [
        (&files.manifest, &records[..]),
        (&files.train, &records[..split]),
        (&files.test, &records[split..]),
    ] {
        DatasetManifest {
            root: out.to_path_buf(),
            records: recs.to_vec(),
        }
        .save(path)?;
    }
    Ok(files)
}
