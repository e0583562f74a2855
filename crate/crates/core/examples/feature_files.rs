//! Writing and reading per-video feature files and a dataset manifest.
//!
//! cargo run --example feature_files

use gstvqa::autograd::Matrix;
use gstvqa::features::{
    DatasetManifest, FeatureSequence, ManifestRecord, read_feature_file, write_feature_file,
};
use gstvqa::params::FEATURE_DIM;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("gstvqa_feature_files");
    std::fs::create_dir_all(&dir)?;

    let mut records = Vec::new();
    for (k, frames) in [1usize, 5, 12].into_iter().enumerate() {
        let mean = Matrix::from_shape_fn((frames, FEATURE_DIM), |(t, c)| (((t * 7 + c) % 11) as f64 / 10.0) as f32 as f64);
        let std = mean.mapv(|v| (v * 0.5) as f32 as f64);
        let seq = FeatureSequence::new(format!("clip_{k}"), mean, std)?;
        let rel = format!("clip_{k}.gstf");
        write_feature_file(dir.join(&rel), &seq)?;

        let back = read_feature_file(dir.join(&rel))?;
        assert_eq!(back, seq);
        println!("{rel}: {} frames × {} channels, {} bytes", back.frames(), FEATURE_DIM, seq.to_bytes().len());
        records.push(ManifestRecord {
            video_id: seq.video_id,
            feature_path: rel.into(),
            mos: 20.0 + 30.0 * k as f64,
        });
    }

    let manifest = DatasetManifest { root: dir.clone(), records };
    let path = dir.join("manifest.csv");
    manifest.save(&path)?;
    let loaded = DatasetManifest::load(&path)?;
    for (seq, mos) in loaded.load_features()? {
        println!("{} → MOS {mos}", seq.video_id);
    }
    println!("manifest written to {}", path.display());
    Ok(())
}
