//! End-to-end training on a synthetic dataset with held-out evaluation.
//!
//! cargo run --release --example synthetic_training -- [epochs] [ablation]

use gstvqa::harness::{RunConfig, cmd_eval, cmd_train};
use gstvqa::synthetic::{SyntheticSpec, write_synthetic};
use gstvqa::trainer::TrainConfig;

fn main() -> gstvqa::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(50, |a| a.parse().expect("epoch count"));
    let ablation = args.next();

    let root = std::env::temp_dir().join("gstvqa_synthetic_training");
    let files = write_synthetic(&SyntheticSpec::default(), root.join("data"))?;

    let mut train = TrainConfig {
        epochs,
        batch_size: 16,
        ..TrainConfig::default()
    };
    if let Some(name) = &ablation {
        train.ablation.enable(name)?;
    }
    let run = RunConfig {
        train,
        manifest: Some(files.train.clone()),
        eval_manifest: Some(files.test.clone()),
        out: root.join("run"),
    };
    let outcome = cmd_train(&run, |e| {
        if e.epoch % 5 == 0 || e.epoch == 1 {
            println!(
                "epoch {:>3}  l_vid {:.4}  l_reg {:.4}  r_gan {:+.4}  d_loss {:.4}",
                e.epoch, e.l_vid, e.l_reg, e.r_gan, e.d_loss
            );
        }
    })?;
    println!("checkpoint {}", outcome.checkpoint_path.display());

    for (split, manifest) in [("train", &files.train), ("test", &files.test)] {
        let eval = cmd_eval(&outcome.checkpoint_path, manifest, 0.0, false, None)?;
        let r = eval.report;
        println!(
            "{split:>5}: {} videos  SROCC {:.4}  KROCC {:.4}  PLCC {:.4}  RMSE {:.3}",
            r.count, r.srocc, r.krocc, r.plcc, r.rmse
        );
    }
    Ok(())
}
