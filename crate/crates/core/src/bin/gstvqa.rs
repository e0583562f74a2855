use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gstvqa::harness::{RunConfig, cmd_eval, cmd_predict, cmd_train, exit_code, sweep_csv};
use gstvqa::synthetic::{SyntheticSpec, write_synthetic};
use gstvqa::Result;

#[derive(Parser)]
#[command(name = "gstvqa", version, about = "No-reference video quality model on frame features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic feature dataset with known quality scores.
    GenSynthetic(GenArgs),
    /// Train a model on a manifest.
    Train(TrainArgs),
    /// Score a manifest and report agreement with its MOS.
    Eval(EvalArgs),
    /// Score a single feature file.
    Predict(PredictArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    videos: usize,
    #[arg(long, default_value_t = 8)]
    t_min: usize,
    #[arg(long, default_value_t = 64)]
    t_max: usize,
    #[arg(long, default_value_t = 16)]
    signal_channels: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Videos held out into test.csv.
    #[arg(long, default_value_t = 50)]
    holdout: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Held-out manifest evaluated after training.
    #[arg(long)]
    eval_manifest: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// One of concat, no_distribution, no_pyramid. Repeatable.
    #[arg(long)]
    ablation: Vec<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    fusion_lambda: Option<f64>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    fusion_lambda: f64,
    /// Also report every fusion weight 0.0, 0.2, …, 1.8.
    #[arg(long)]
    sweep: bool,
    /// Directory receiving the CSV outputs.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Feature file to score.
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    fusion_lambda: Option<f64>,
}

fn gen_synthetic(a: GenArgs) -> Result<()> {
    let spec = SyntheticSpec {
        videos: a.videos,
        t_min: a.t_min,
        t_max: a.t_max,
        signal_channels: a.signal_channels,
        noise: a.noise,
        seed: a.seed,
        holdout: a.holdout,
    };
    let files = write_synthetic(&spec, &a.out)?;
    println!("{}", files.manifest.display());
    println!("{}", files.train.display());
    println!("{}", files.test.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut run = match &a.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(m) = a.manifest {
        run.manifest = Some(m);
    }
    if let Some(o) = a.out {
        run.out = o;
    }
    if let Some(m) = a.eval_manifest {
        run.eval_manifest = Some(m);
    }
    if let Some(s) = a.seed {
        run.train.seed = s;
    }
    for name in &a.ablation {
        run.train.ablation.enable(name)?;
    }
    if let Some(e) = a.epochs {
        run.train.epochs = e;
    }
    if let Some(b) = a.batch_size {
        run.train.batch_size = b;
    }
    if let Some(lr) = a.learning_rate {
        run.train.learning_rate = lr;
    }
    if let Some(l) = a.fusion_lambda {
        run.train.fusion_lambda = l;
    }
    let quiet = a.quiet;
    let outcome = cmd_train(&run, |e| {
        if !quiet {
            eprintln!(
                "epoch {:>4}  l_vid {:.5}  l_reg {:.5}  r_gan {:.5}  d_loss {:.5}",
                e.epoch, e.l_vid, e.l_reg, e.r_gan, e.d_loss
            );
        }
    })?;
    println!("checkpoint {}", outcome.checkpoint_path.display());
    println!("log {}", outcome.log_path.display());
    if let Some(report) = outcome.eval {
        print!("{}", report.to_csv());
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let outcome = cmd_eval(&a.checkpoint, &a.manifest, a.fusion_lambda, a.sweep, a.out.as_deref())?;
    print!("{}", outcome.report.to_csv());
    if let Some(rows) = &outcome.sweep {
        println!();
        print!("{}", sweep_csv(rows));
    }
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let score = cmd_predict(&a.checkpoint, &a.features, a.fusion_lambda)?;
    println!("{score}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenSynthetic(a) => gen_synthetic(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
