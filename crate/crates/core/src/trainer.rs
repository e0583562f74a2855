//! Alternating adversarial training.
//!
//! Each batch first updates the discriminator on `F^avg` (detached) versus
//! samples of the reference prior, then updates every other parameter on
//! `L^vid + λ1·L^reg + λ2·R^gan` with the discriminator frozen. Videos in a
//! batch run one at a time through their own tape; gradients are summed in
//! batch order before a single optimizer step.

use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adam::Adam;
use crate::autograd::{Graph, Matrix, Reduce};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::features::{FeatureSequence, MosScaler};
use crate::model::forward_video;
use crate::params::{HIDDEN_DIM, Layout, ModelParams};
use crate::regularizer::{GaussianPrior, discriminate, log_d, log_one_minus_d};

/// Architecture variants for ablation runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    /// Concatenate mean and std features instead of attending.
    pub concat_no_attention: bool,
    /// Drop the discriminator and the `Q^reg` head.
    pub no_distribution: bool,
    /// Global average pooling instead of the 7-level pyramid.
    pub no_pyramid: bool,
}

impl Ablation {
    pub const NAMES: [&'static str; 3] = ["concat", "no_distribution", "no_pyramid"];

    pub fn enable(&mut self, name: &str) -> Result<()> {
        match name {
            "concat" | "concat_no_attention" => self.concat_no_attention = true,
            "no_distribution" => self.no_distribution = true,
            "no_pyramid" => self.no_pyramid = true,
            other => {
                return Err(Error::Config(format!(
                    "unknown ablation {other:?}, expected one of {:?}",
                    Self::NAMES
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Prior refresh period `N`, in epochs.
    pub refresh_period: usize,
    pub seed: u64,
    pub ablation: Ablation,
    /// Fusion weight used when evaluating.
    pub fusion_lambda: f64,
    /// Generator minimizes `−log D(G(x))` instead of `log(1 − D(G(x)))`.
    pub non_saturating: bool,
    pub disc_hidden: [usize; 2],
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda1: 0.5,
            lambda2: 0.05,
            learning_rate: 1e-4,
            batch_size: 128,
            epochs: 200,
            refresh_period: 20,
            seed: 0,
            ablation: Ablation::default(),
            fusion_lambda: 0.0,
            non_saturating: false,
            disc_hidden: [16, 8],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lambda1 >= 0.0) || !(self.lambda2 >= 0.0) {
            return bad(format!("λ1 = {}, λ2 = {} must be ≥ 0", self.lambda1, self.lambda2));
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning rate {} must be > 0", self.learning_rate));
        }
        if self.batch_size == 0 || self.refresh_period == 0 {
            return bad("batch size and refresh period must be ≥ 1".into());
        }
        if !(self.fusion_lambda >= 0.0) {
            return bad(format!("fusion λ {} must be ≥ 0", self.fusion_lambda));
        }
        if self.disc_hidden.contains(&0) {
            return bad("discriminator hidden widths must be ≥ 1".into());
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout {
            concat: self.ablation.concat_no_attention,
            single_level: self.ablation.no_pyramid,
            disc_hidden: self.disc_hidden,
        }
    }

    pub fn uses_distribution(&self) -> bool {
        !self.ablation.no_distribution
    }
}

/// Loss components of a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub l_vid: f64,
    pub l_reg: f64,
    pub r_gan: f64,
    pub generator: f64,
    pub discriminator: f64,
}

/// Batch losses from plain scores. `d_real[i] = D(F^gaus_i)` and
/// `d_fake[i] = D(F^avg_i)` are discriminator probabilities.
#[allow(clippy::too_many_arguments)]
pub fn composite_loss(
    q_vid: &[f64],
    q_reg: &[f64],
    d_real: &[f64],
    d_fake: &[f64],
    mos: &[f64],
    lambda1: f64,
    lambda2: f64,
    non_saturating: bool,
) -> Result<LossTerms> {
    let n = mos.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if [q_vid.len(), q_reg.len(), d_real.len(), d_fake.len()].iter().any(|&l| l != n) {
        return Err(Error::shape("composite_loss", "batch lengths differ"));
    }
    let mean = |it: &mut dyn Iterator<Item = f64>| it.sum::<f64>() / n as f64;
    let l_vid = mean(&mut q_vid.iter().zip(mos).map(|(q, y)| (q - y).abs()));
    let l_reg = mean(&mut q_reg.iter().zip(mos).map(|(q, y)| (q - y).abs()));
    let real = mean(&mut d_real.iter().map(|d| d.ln()));
    let fake = mean(&mut d_fake.iter().map(|d| (1.0 - d).ln()));
    let r_gan = real + fake;
    let adversarial = if non_saturating {
        real - mean(&mut d_fake.iter().map(|d| d.ln()))
    } else {
        r_gan
    };
    let terms = LossTerms {
        l_vid,
        l_reg,
        r_gan,
        generator: l_vid + lambda1 * l_reg + lambda2 * adversarial,
        discriminator: -r_gan,
    };
    let all = [terms.l_vid, terms.l_reg, terms.r_gan, terms.generator, terms.discriminator];
    if all.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "composite_loss" });
    }
    Ok(terms)
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_vid: f64,
    pub l_reg: f64,
    pub r_gan: f64,
    pub d_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub refresh_epochs: Vec<usize>,
}

impl TrainLog {
    /// CSV with header `epoch,l_vid,l_reg,r_gan,d_loss`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,l_vid,l_reg,r_gan,d_loss\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch, e.l_vid, e.l_reg, e.r_gan, e.d_loss
            ));
        }
        out
    }
}

/// One training example: features and normalized MOS.
pub type Example<'a> = (&'a FeatureSequence, f64);

pub struct Trainer {
    pub config: TrainConfig,
    pub params: ModelParams,
    pub prior: GaussianPrior,
    pub epoch: usize,
    /// Discriminator forward evaluations so far.
    pub discriminator_calls: usize,
    gen_opt: Adam,
    disc_opt: Adam,
    shuffle_rng: ChaCha8Rng,
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(config.layout(), &mut rng_stream(config.seed, 0));
        let mut prior = GaussianPrior::standard(HIDDEN_DIM, 0);
        prior.restore_sampler(crate::regularizer::SamplerState {
            seed: rng_stream(config.seed, 1).get_seed(),
            stream: 1,
            word_pos: 0,
        });
        let shapes = |ts: Vec<(String, &Matrix)>| ts.iter().map(|(_, m)| m.dim()).collect::<Vec<_>>();
        let gen_opt = Adam::new(config.learning_rate, &shapes(params.generator_tensors()));
        let disc_opt = Adam::new(config.learning_rate, &shapes(params.discriminator_tensors()));
        Ok(Trainer {
            shuffle_rng: rng_stream(config.seed, 2),
            config,
            params,
            prior,
            epoch: 0,
            discriminator_calls: 0,
            gen_opt,
            disc_opt,
        })
    }

    /// Discriminator step then generator step on one batch.
    pub fn train_step(&mut self, batch: &[Example<'_>]) -> Result<LossTerms> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        if self.config.uses_distribution() {
            let real = self.prior.sample(batch.len());
            let fake = self.video_features(batch)?;
            let d_loss = self.discriminator_step(&real, &fake)?;
            let mut terms = self.generator_step(batch, Some(&real))?;
            terms.discriminator = d_loss;
            Ok(terms)
        } else {
            self.generator_step(batch, None)
        }
    }

    fn video_features(&self, batch: &[Example<'_>]) -> Result<Matrix> {
        let rows = batch
            .par_iter()
            .map(|(seq, _)| self.params.video_feature(seq))
            .collect::<Result<Vec<_>>>()?;
        let mut out = Matrix::zeros((batch.len(), HIDDEN_DIM));
        for (i, r) in rows.iter().enumerate() {
            out.row_mut(i).assign(&r.row(0));
        }
        Ok(out)
    }

    /// Maximize `R^gan` over the discriminator only. Returns `−R^gan`.
    pub fn discriminator_step(&mut self, real: &Matrix, fake: &Matrix) -> Result<f64> {
        let mut g = Graph::new();
        let d = self.params.bind_discriminator(&mut g, true)?;
        let z = g.constant(real.clone())?;
        let f = g.constant(fake.clone())?;
        let (real_logit, _) = discriminate(&mut g, z, &d)?;
        let (fake_logit, _) = discriminate(&mut g, f, &d)?;
        self.discriminator_calls += 2;
        let a = log_d(&mut g, real_logit)?;
        let a = g.mean(a, Reduce::All)?;
        let b = log_one_minus_d(&mut g, fake_logit)?;
        let b = g.mean(b, Reduce::All)?;
        let r_gan = g.add(a, b)?;
        let loss = g.neg(r_gan)?;
        let d_loss = g.scalar(loss);
        let grads = g.backward(loss)?;
        let grads = d.gradients(&grads);
        self.disc_opt
            .update(&mut self.params.discriminator_tensors_mut(), &grads)?;
        Ok(d_loss)
    }

    /// Minimize the composite objective over everything but the
    /// discriminator. `real` is `None` when the distribution branch is off.
    pub fn generator_step(&mut self, batch: &[Example<'_>], real: Option<&Matrix>) -> Result<LossTerms> {
        let n = batch.len() as f64;
        let cfg = &self.config;
        let levels = self.params.layout.levels();
        let params = &self.params;

        let per_video = batch
            .par_iter()
            .enumerate()
            .map(|(i, (seq, mos))| -> Result<(Vec<Matrix>, [f64; 3])> {
                let mut g = Graph::new();
                let gv = params.bind_generator(&mut g, true)?;
                let out = forward_video(&mut g, &gv, seq, levels)?;
                let y = g.scalar_constant(*mos)?;
                let e = g.sub(out.q_vid, y)?;
                let l_vid = g.abs(e)?;
                let mut loss = l_vid;
                let mut terms = [g.scalar(l_vid), 0.0, 0.0];
                if let Some(real) = real {
                    let e = g.sub(out.q_reg, y)?;
                    let l_reg = g.abs(e)?;
                    let weighted = g.affine(l_reg, cfg.lambda1, 0.0)?;
                    loss = g.add(loss, weighted)?;

                    let dv = params.bind_discriminator(&mut g, false)?;
                    let z = g.constant(real.slice(ndarray::s![i..i + 1, ..]).to_owned())?;
                    let (real_logit, _) = discriminate(&mut g, z, &dv)?;
                    let (fake_logit, _) = discriminate(&mut g, out.f_avg, &dv)?;
                    let real_term = log_d(&mut g, real_logit)?;
                    let fake_term = log_one_minus_d(&mut g, fake_logit)?;
                    let r_gan = g.add(real_term, fake_term)?;
                    let adversarial = if cfg.non_saturating {
                        let ld = log_d(&mut g, fake_logit)?;
                        g.sub(real_term, ld)?
                    } else {
                        r_gan
                    };
                    let weighted = g.affine(adversarial, cfg.lambda2, 0.0)?;
                    loss = g.add(loss, weighted)?;
                    terms[1] = g.scalar(l_reg);
                    terms[2] = g.scalar(r_gan);
                }
                let loss = g.affine(loss, 1.0 / n, 0.0)?;
                let grads = g.backward(loss)?;
                Ok((gv.gradients(&grads), terms))
            })
            .collect::<Result<Vec<_>>>()?;

        if real.is_some() {
            self.discriminator_calls += 2 * batch.len();
        }

        let mut sum = LossTerms::default();
        let mut total: Option<Vec<Matrix>> = None;
        for (grads, [l_vid, l_reg, r_gan]) in per_video {
            sum.l_vid += l_vid / n;
            sum.l_reg += l_reg / n;
            sum.r_gan += r_gan / n;
            match &mut total {
                None => total = Some(grads),
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(&grads) {
                        *a += g;
                    }
                }
            }
        }
        sum.generator = if real.is_some() {
            sum.l_vid + cfg.lambda1 * sum.l_reg + cfg.lambda2 * sum.r_gan
        } else {
            sum.l_vid
        };
        let grads = total.expect("non-empty batch");
        self.gen_opt
            .update(&mut self.params.generator_tensors_mut(), &grads)?;
        Ok(sum)
    }

    /// One pass over `data` in a seed-determined order. Refreshes the prior
    /// when the finished epoch is a multiple of the refresh period.
    pub fn train_epoch(&mut self, data: &[Example<'_>]) -> Result<EpochLog> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("no training examples".into()));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.shuffle_rng);
        let mut log = EpochLog::default();
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<Example<'_>> = chunk.iter().map(|&i| data[i]).collect();
            let t = self.train_step(&batch)?;
            let w = batch.len() as f64 / data.len() as f64;
            log.l_vid += w * t.l_vid;
            log.l_reg += w * t.l_reg;
            log.r_gan += w * t.r_gan;
            log.d_loss += w * t.discriminator;
        }
        self.epoch += 1;
        log.epoch = self.epoch;
        if self.config.uses_distribution() && self.epoch % self.config.refresh_period == 0 {
            let mu = self.params.learned_mu();
            let sigma = self.params.learned_sigma();
            self.prior
                .refresh(self.epoch, self.config.refresh_period, &mu, &sigma)?;
        }
        Ok(log)
    }

    /// Batch shuffle order for the next epoch, without consuming it.
    pub fn peek_order(&self, len: usize) -> Vec<usize> {
        let mut rng = self.shuffle_rng.clone();
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        order
    }
}

/// Train for `config.epochs` epochs on `(features, raw MOS)` pairs. Labels
/// are scaled with the training split's range; the final epoch's model is
/// returned.
pub fn train(dataset: &[(FeatureSequence, f64)], config: &TrainConfig) -> Result<(Checkpoint, TrainLog)> {
    train_with(dataset, config, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    dataset: &[(FeatureSequence, f64)],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(Checkpoint, TrainLog)> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let raw: Vec<f64> = dataset.iter().map(|(_, y)| *y).collect();
    let scaler = MosScaler::fit(&raw)?;
    let examples: Vec<Example<'_>> = dataset
        .iter()
        .map(|(seq, y)| (seq, scaler.normalize(*y)))
        .collect();

    let mut trainer = Trainer::new(config.clone())?;
    let mut log = TrainLog::default();
    for _ in 0..config.epochs {
        let refreshes = trainer.prior.refreshes;
        let row = trainer.train_epoch(&examples)?;
        if trainer.prior.refreshes != refreshes {
            log.refresh_epochs.push(row.epoch);
        }
        on_epoch(&row);
        log.epochs.push(row);
    }
    Ok((Checkpoint::from_trainer(&trainer, scaler), log))
}
