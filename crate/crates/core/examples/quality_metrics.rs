//! Rank and linear agreement between predicted and subjective scores, with
//! the five-parameter logistic mapping.
//!
//! cargo run --example quality_metrics

use gstvqa::EvalReport;
use gstvqa::metrics::{krocc, logistic_fit, plcc_rmse, srocc};

fn main() -> gstvqa::Result<()> {
    let predicted: Vec<f64> = (0..40).map(|i| -2.0 + i as f64 * 0.1).collect();
    let mos: Vec<f64> = predicted
        .iter()
        .enumerate()
        .map(|(i, &s)| 50.0 + 40.0 * (s * 1.5).tanh() + if i % 3 == 0 { 2.0 } else { -1.0 })
        .collect();

    println!("SROCC {:.4}", srocc(&predicted, &mos)?);
    println!("KROCC {:.4}", krocc(&predicted, &mos)?);

    let fit = logistic_fit(&predicted, &mos)?;
    let (plcc, rmse) = plcc_rmse(&predicted, &mos, &fit)?;
    println!("logistic β = {:?} (converged {})", fit.beta.map(|b| (b * 1e4).round() / 1e4), fit.converged);
    println!("PLCC {plcc:.4}, RMSE {rmse:.4}");

    println!();
    print!("{}", EvalReport::from_scores(&predicted, &mos, 0.0)?.to_csv());
    Ok(())
}
