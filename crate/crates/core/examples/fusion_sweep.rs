//! Fusing the video-head and distribution-head scores with weights
//! λ = 0.0, 0.2, …, 1.8.
//!
//! cargo run --release --example fusion_sweep -- [epochs]

use gstvqa::harness::{RunConfig, cmd_eval, cmd_train};
use gstvqa::synthetic::{SyntheticSpec, write_synthetic};
use gstvqa::trainer::TrainConfig;

fn main() -> gstvqa::Result<()> {
    let epochs = std::env::args().nth(1).map_or(50, |a| a.parse().expect("epoch count"));
    let root = std::env::temp_dir().join("gstvqa_fusion_sweep");
    let files = write_synthetic(&SyntheticSpec::default(), root.join("data"))?;
    let run = RunConfig {
        train: TrainConfig {
            epochs,
            batch_size: 16,
            ..TrainConfig::default()
        },
        manifest: Some(files.train.clone()),
        eval_manifest: None,
        out: root.join("run"),
    };
    let trained = cmd_train(&run, |_| {})?;

    let eval = cmd_eval(&trained.checkpoint_path, &files.test, 0.0, true, Some(&root.join("eval")))?;
    println!("  λ    SROCC   KROCC   PLCC    RMSE");
    for r in eval.sweep.as_deref().unwrap_or_default() {
        println!("{:.1}  {:.4}  {:.4}  {:.4}  {:.3}", r.lambda, r.srocc, r.krocc, r.plcc, r.rmse);
    }
    println!("sweep.csv written to {}", root.join("eval").display());
    Ok(())
}
