//! Gaussian regularization of the video-level feature. The frame-averaged
//! hidden state is scored against a learnable Gaussian as `Q^reg`, and a
//! discriminator matches its distribution to a sampled reference prior.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autograd::{Graph, Matrix, Reduce, Var};
use crate::error::{Error, Result};
use crate::params::{DiscriminatorVars, HIDDEN_DIM, SIGMA_FLOOR};

/// Mean over frames of a `T × L` matrix, as `1 × L`.
pub fn average_features(g: &mut Graph, frames: Var) -> Result<Var> {
    if g.shape(frames).0 == 0 {
        return Err(Error::shape("average_features", "no frames"));
    }
    g.mean(frames, Reduce::Rows)
}

/// `σ = softplus(ρ) + 1e-3`.
pub fn sigma_from_rho(g: &mut Graph, rho: Var) -> Result<Var> {
    let sp = g.softplus(rho)?;
    g.affine(sp, 1.0, SIGMA_FLOOR)
}

/// `Q^reg = mean_l exp(−(F^avg(l) − μ(l))² / σ(l)²)`, in `(0, 1]`.
pub fn q_reg(g: &mut Graph, f_avg: Var, mu: Var, sigma: Var) -> Result<Var> {
    if g.value(sigma).iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidArgument("q_reg: σ must be positive".into()));
    }
    let d = g.sub(f_avg, mu)?;
    let d2 = g.square(d)?;
    let s2 = g.square(sigma)?;
    let e = g.div(d2, s2)?;
    let e = g.neg(e)?;
    let k = g.exp(e)?;
    g.mean(k, Reduce::All)
}

/// Discriminator on `n × 32` inputs. Returns `(logits, probabilities)`,
/// both `n × 1`.
pub fn discriminate(g: &mut Graph, x: Var, p: &DiscriminatorVars) -> Result<(Var, Var)> {
    let h = g.matmul(x, p.w1)?;
    let h = g.add(h, p.b1)?;
    let h = g.relu(h)?;
    let h = g.matmul(h, p.w2)?;
    let h = g.add(h, p.b2)?;
    let h = g.relu(h)?;
    let logit = g.matmul(h, p.w3)?;
    let logit = g.add(logit, p.b3)?;
    let prob = g.sigmoid(logit)?;
    Ok((logit, prob))
}

/// `log D` from the discriminator logit, computed as `−softplus(−a)`.
pub fn log_d(g: &mut Graph, logit: Var) -> Result<Var> {
    let n = g.neg(logit)?;
    let sp = g.softplus(n)?;
    g.neg(sp)
}

/// `log(1 − D)` from the discriminator logit, computed as `−softplus(a)`.
pub fn log_one_minus_d(g: &mut Graph, logit: Var) -> Result<Var> {
    let sp = g.softplus(logit)?;
    g.neg(sp)
}

/// Plain-value `Q^reg`.
pub fn q_reg_value(f_avg: &[f64], mu: &[f64], sigma: &[f64]) -> Result<f64> {
    if f_avg.len() != mu.len() || mu.len() != sigma.len() || mu.is_empty() {
        return Err(Error::shape("q_reg", "vector lengths differ"));
    }
    if sigma.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidArgument("q_reg: σ must be positive".into()));
    }
    let total: f64 = f_avg
        .iter()
        .zip(mu)
        .zip(sigma)
        .map(|((f, m), s)| (-(f - m).powi(2) / (s * s)).exp())
        .sum();
    Ok(total / mu.len() as f64)
}

/// Serializable position of the prior's sampler.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SamplerState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

/// Per-dimension reference Gaussian `g(z)` used by the adversarial term.
#[derive(Clone, Debug)]
pub struct GaussianPrior {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub refreshes: usize,
    pub last_refresh_epoch: Option<usize>,
    rng: ChaCha8Rng,
}

impl PartialEq for GaussianPrior {
    fn eq(&self, other: &Self) -> bool {
        self.mu == other.mu
            && self.sigma == other.sigma
            && self.refreshes == other.refreshes
            && self.last_refresh_epoch == other.last_refresh_epoch
            && self.sampler_state() == other.sampler_state()
    }
}

impl GaussianPrior {
    /// Standard normal in every dimension.
    pub fn standard(dim: usize, seed: u64) -> Self {
        GaussianPrior {
            mu: vec![0.0; dim],
            sigma: vec![1.0; dim],
            refreshes: 0,
            last_refresh_epoch: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn with_params(mu: Vec<f64>, sigma: Vec<f64>, seed: u64) -> Result<Self> {
        check_params(&mu, &sigma)?;
        Ok(GaussianPrior {
            mu,
            sigma,
            ..Self::standard(0, seed)
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn sampler_state(&self) -> SamplerState {
        SamplerState {
            seed: self.rng.get_seed(),
            stream: self.rng.get_stream(),
            word_pos: self.rng.get_word_pos(),
        }
    }

    pub fn restore_sampler(&mut self, state: SamplerState) {
        let mut rng = ChaCha8Rng::from_seed(state.seed);
        rng.set_stream(state.stream);
        rng.set_word_pos(state.word_pos);
        self.rng = rng;
    }

    /// `count × dim` independent draws, row `i` is one `F^gaus`.
    pub fn sample(&mut self, count: usize) -> Matrix {
        let dim = self.dim();
        let mut out = Matrix::zeros((count, dim));
        for i in 0..count {
            for l in 0..dim {
                let e: f64 = StandardNormal.sample(&mut self.rng);
                out[[i, l]] = self.mu[l] + self.sigma[l] * e;
            }
        }
        out
    }

    /// Replace `μ, σ` with the learned values. Only valid at positive epoch
    /// multiples of `period`.
    pub fn refresh(&mut self, epoch: usize, period: usize, mu: &[f64], sigma: &[f64]) -> Result<()> {
        if period == 0 || epoch == 0 || epoch % period != 0 {
            return Err(Error::Schedule { epoch, period });
        }
        if mu.len() != self.dim() {
            return Err(Error::shape("refresh", format!("{} vs {}", mu.len(), self.dim())));
        }
        check_params(mu, sigma)?;
        self.mu = mu.to_vec();
        self.sigma = sigma.to_vec();
        self.refreshes += 1;
        self.last_refresh_epoch = Some(epoch);
        Ok(())
    }
}

impl Default for GaussianPrior {
    fn default() -> Self {
        Self::standard(HIDDEN_DIM, 0)
    }
}

fn check_params(mu: &[f64], sigma: &[f64]) -> Result<()> {
    if mu.len() != sigma.len() {
        return Err(Error::shape("prior", "μ and σ lengths differ"));
    }
    if sigma.iter().any(|&s| !(s > 0.0) || !s.is_finite()) || mu.iter().any(|m| !m.is_finite()) {
        return Err(Error::InvalidArgument("prior needs finite μ and σ > 0".into()));
    }
    Ok(())
}
