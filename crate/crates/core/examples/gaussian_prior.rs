//! The learnable Gaussian prior: sampling, refresh from learned parameters
//! and the regression score it induces.
//!
//! cargo run --example gaussian_prior

use gstvqa::params::HIDDEN_DIM;
use gstvqa::regularizer::{GaussianPrior, q_reg_value};

fn main() -> gstvqa::Result<()> {
    let mut prior = GaussianPrior::standard(HIDDEN_DIM, 7);
    let mu: Vec<f64> = (0..HIDDEN_DIM).map(|l| (l as f64 / 8.0).sin()).collect();
    let sigma: Vec<f64> = (0..HIDDEN_DIM).map(|l| 0.2 + 0.02 * l as f64).collect();

    for epoch in [20, 40, 60] {
        prior.refresh(epoch, 20, &mu, &sigma)?;
    }
    println!("refreshed {} times, last at epoch {:?}", prior.refreshes, prior.last_refresh_epoch);

    let draws = prior.sample(20_000);
    for l in [0, 15, 31] {
        let col = draws.column(l);
        println!(
            "dim {l:>2}: sample mean {:+.3} (μ {:+.3}), sample std {:.3} (σ {:.3})",
            col.mean().unwrap(),
            mu[l],
            col.std(1.0),
            sigma[l]
        );
    }

    for shift in [0.0, 0.1, 0.5, 2.0] {
        let f_avg: Vec<f64> = mu.iter().map(|m| m + shift).collect();
        println!("F^avg = μ + {shift}: Q^reg = {:.4}", q_reg_value(&f_avg, &mu, &sigma)?);
    }
    Ok(())
}
