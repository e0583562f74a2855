//! Per-video feature files and the dataset manifests that index them.
//!
//! Feature file layout, all little-endian:
//!
//! ```text
//! "GSTF" | version u32 = 1 | id_len u32 | id (utf-8) | T u32 | dim u32 = 1472
//!        | T·dim f32 spatial means | T·dim f32 spatial stds
//! ```
//!
//! Manifests are UTF-8 CSV with the header `video_id,feature_path,mos`.
//! Relative feature paths resolve against the manifest's directory.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autograd::Matrix;
use crate::error::{Error, Result};
use crate::params::FEATURE_DIM;

pub const FEATURE_MAGIC: &[u8; 4] = b"GSTF";
pub const FEATURE_VERSION: u32 = 1;

/// Spatially pooled backbone features of one video, one row per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub video_id: String,
    pub mean_feats: Matrix,
    pub std_feats: Matrix,
}

impl FeatureSequence {
    pub fn new(video_id: impl Into<String>, mean_feats: Matrix, std_feats: Matrix) -> Result<Self> {
        let seq = FeatureSequence {
            video_id: video_id.into(),
            mean_feats,
            std_feats,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn frames(&self) -> usize {
        self.mean_feats.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let (t, d) = self.mean_feats.dim();
        if t == 0 {
            return Err(Error::InvalidArgument("feature sequence has no frames".into()));
        }
        if d != FEATURE_DIM || self.std_feats.dim() != (t, d) {
            return Err(Error::InvalidArgument(format!(
                "feature matrices {:?} and {:?}, expected {t}×{FEATURE_DIM}",
                self.mean_feats.dim(),
                self.std_feats.dim()
            )));
        }
        if self.std_feats.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::InvalidArgument("negative std feature".into()));
        }
        if self.mean_feats.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite mean feature".into()));
        }
        Ok(())
    }

    /// Serialize to the binary feature format. Values are stored as `f32`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let id = self.video_id.as_bytes();
        let (t, d) = self.mean_feats.dim();
        let mut out = Vec::with_capacity(24 + id.len() + 8 * t * d);
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id);
        out.extend_from_slice(&(t as u32).to_le_bytes());
        out.extend_from_slice(&(d as u32).to_le_bytes());
        for m in [&self.mean_feats, &self.std_feats] {
            for &v in m.iter() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let magic = r.take(4)?;
        if magic != FEATURE_MAGIC {
            return Err(r.error_at(0, format!("bad magic {magic:?}")));
        }
        let at = r.pos;
        let version = r.u32()?;
        if version != FEATURE_VERSION {
            return Err(r.error_at(at, format!("unsupported version {version}")));
        }
        let id_len = r.u32()? as usize;
        let at = r.pos;
        let video_id = std::str::from_utf8(r.take(id_len)?)
            .map_err(|e| r.error_at(at, format!("video id is not utf-8: {e}")))?
            .to_owned();
        let at = r.pos;
        let frames = r.u32()? as usize;
        if frames == 0 {
            return Err(r.error_at(at, "frame count is zero".into()));
        }
        let at = r.pos;
        let dim = r.u32()? as usize;
        if dim != FEATURE_DIM {
            return Err(r.error_at(at, format!("dim {dim}, expected {FEATURE_DIM}")));
        }
        let mean_feats = r.f32_matrix(frames, dim)?;
        let std_start = r.pos;
        let std_feats = r.f32_matrix(frames, dim)?;
        if let Some(i) = std_feats.iter().position(|&v| !(v >= 0.0)) {
            return Err(r.error_at(std_start + 4 * i, "negative std entry".into()));
        }
        if let Some(i) = mean_feats.iter().position(|v| !v.is_finite()) {
            return Err(r.error_at(std_start - 4 * frames * dim + 4 * i, "non-finite mean".into()));
        }
        if r.pos != bytes.len() {
            return Err(r.error_at(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(FeatureSequence {
            video_id,
            mean_feats,
            std_feats,
        })
    }
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub(crate) fn error_at(&self, offset: usize, msg: String) -> Error {
        Error::Format { offset, msg }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(self.error_at(
                self.pos,
                format!("truncated: need {n} bytes, {} left", self.bytes.len() - self.pos),
            )),
        }
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32_matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| self.error_at(self.pos, "matrix size overflows".into()))?;
        let raw = self.take(n)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok(Matrix::from_shape_vec((rows, cols), data).expect("length checked"))
    }
}

pub fn write_feature_file(path: impl AsRef<Path>, seq: &FeatureSequence) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, seq.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureSequence::from_bytes(&bytes)
}

/// One manifest row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub video_id: String,
    pub feature_path: PathBuf,
    pub mos: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    /// Directory relative feature paths are resolved against.
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::Reader::from_reader(file);
        let headers = reader.headers().map_err(|e| manifest_err(path, e))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["video_id", "feature_path", "mos"] {
            return Err(Error::Manifest {
                path: path.into(),
                msg: format!("header must be video_id,feature_path,mos, got {headers:?}"),
            });
        }
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for row in reader.deserialize() {
            let rec: ManifestRecord = row.map_err(|e| manifest_err(path, e))?;
            if !seen.insert(rec.video_id.clone()) {
                return Err(Error::Manifest {
                    path: path.into(),
                    msg: format!("duplicate video_id {}", rec.video_id),
                });
            }
            records.push(rec);
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(DatasetManifest { root, records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        for rec in &self.records {
            w.serialize(rec).map_err(|e| manifest_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, rec: &ManifestRecord) -> PathBuf {
        if rec.feature_path.is_absolute() {
            rec.feature_path.clone()
        } else {
            self.root.join(&rec.feature_path)
        }
    }

    /// Read every feature file, in manifest order, paired with its raw MOS.
    pub fn load_features(&self) -> Result<Vec<(FeatureSequence, f64)>> {
        use rayon::prelude::*;
        self.records
            .par_iter()
            .map(|rec| Ok((read_feature_file(self.resolve(rec))?, rec.mos)))
            .collect()
    }

    pub fn mos(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.mos).collect()
    }
}

fn manifest_err(path: &Path, e: csv::Error) -> Error {
    Error::Manifest {
        path: path.into(),
        msg: e.to_string(),
    }
}

/// Affine map of raw MOS onto `[0, 1]` using the training split's range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MosScaler {
    pub y_min: f64,
    pub y_max: f64,
}

impl MosScaler {
    pub fn new(y_min: f64, y_max: f64) -> Result<Self> {
        if !(y_max > y_min) || !y_min.is_finite() || !y_max.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "MOS range [{y_min}, {y_max}] is empty"
            )));
        }
        Ok(MosScaler { y_min, y_max })
    }

    pub fn fit(scores: &[f64]) -> Result<Self> {
        let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self::new(lo, hi)
    }

    /// Clamped to `[0, 1]` for scores outside the training range.
    pub fn normalize(&self, raw: f64) -> f64 {
        ((raw - self.y_min) / (self.y_max - self.y_min)).clamp(0.0, 1.0)
    }

    pub fn denormalize(&self, pred: f64) -> f64 {
        self.y_min + pred * (self.y_max - self.y_min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(t: usize, seed: u64) -> FeatureSequence {
        let mut s = seed;
        let mut next = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 33) as f64 / (1u64 << 31) as f64) as f32 as f64
        };
        let mean = Matrix::from_shape_fn((t, FEATURE_DIM), |_| (next() - 0.5) as f32 as f64);
        let std = Matrix::from_shape_fn((t, FEATURE_DIM), |_| next());
        FeatureSequence::new(format!("vid-{seed}"), mean, std).unwrap()
    }

    #[test]
    fn single_frame_round_trip() {
        let seq = sample(1, 7);
        let back = FeatureSequence::from_bytes(&seq.to_bytes()).unwrap();
        assert_eq!(back, seq);
        assert_eq!(back.frames(), 1);
    }

    #[test]
    fn rejects_wrong_dim() {
        let mut bytes = sample(2, 1).to_bytes();
        let id_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let dim_at = 12 + id_len + 4;
        bytes[dim_at..dim_at + 4].copy_from_slice(&1471u32.to_le_bytes());
        match FeatureSequence::from_bytes(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, dim_at),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_magic_truncation_and_negative_std() {
        let seq = sample(2, 3);
        let mut bytes = seq.to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            FeatureSequence::from_bytes(&bytes),
            Err(Error::Format { offset: 0, .. })
        ));

        let bytes = seq.to_bytes();
        assert!(matches!(
            FeatureSequence::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Format { .. })
        ));

        let mut bytes = seq.to_bytes();
        let last = bytes.len() - 4;
        bytes[last..].copy_from_slice(&(-1.0f32).to_le_bytes());
        match FeatureSequence::from_bytes(&bytes) {
            Err(Error::Format { offset, msg }) => {
                assert_eq!(offset, last);
                assert!(msg.contains("negative"));
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn mos_scaling() {
        let s = MosScaler::new(20.0, 80.0).unwrap();
        assert_eq!(s.normalize(20.0), 0.0);
        assert_eq!(s.normalize(80.0), 1.0);
        assert_eq!(s.normalize(50.0), 0.5);
        assert_eq!(s.normalize(95.0), 1.0);
        assert_eq!(s.normalize(-5.0), 0.0);
        assert_eq!(s.denormalize(0.0), 20.0);
        assert_eq!(s.denormalize(1.0), 80.0);
        for raw in [20.0, 33.3, 61.7, 80.0] {
            assert!((s.denormalize(s.normalize(raw)) - raw).abs() < 1e-12);
        }
        assert!(MosScaler::new(3.0, 3.0).is_err());
    }

    #[test]
    fn manifest_keeps_file_order_and_rejects_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "video_id,feature_path,mos\nb,b.gstf,2.5\na,a.gstf,1\nc,/abs/c.gstf,3\n").unwrap();
        let m = DatasetManifest::load(&path).unwrap();
        let ids: Vec<_> = m.records.iter().map(|r| r.video_id.as_str()).collect();
        assert_eq!(ids, ["b", "a", "c"]);
        assert_eq!(m.resolve(&m.records[0]), dir.path().join("b.gstf"));
        assert_eq!(m.resolve(&m.records[2]), PathBuf::from("/abs/c.gstf"));

        fs::write(&path, "video_id,feature_path,mos\na,a.gstf,1\na,b.gstf,2\n").unwrap();
        assert!(matches!(DatasetManifest::load(&path), Err(Error::Manifest { .. })));
        fs::write(&path, "id,path,score\na,a.gstf,1\n").unwrap();
        assert!(matches!(DatasetManifest::load(&path), Err(Error::Manifest { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn write_read_is_bit_identical(t in 1usize..3, seed in any::<u64>(), id in "[a-z0-9_]{0,12}") {
            let mut seq = sample(t, seed);
            seq.video_id = id;
            let bytes = seq.to_bytes();
            let back = FeatureSequence::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
            prop_assert_eq!(back, seq);
        }
    }
}
