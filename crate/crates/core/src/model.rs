//! Full per-video forward pass.

use crate::attention::{apply_attention, attention_weights, temporal_variance_descriptor};
use crate::autograd::{Graph, Gradients, Matrix, Var};
use crate::encoder::encode;
use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::params::{
    AttentionVars, DiscriminatorVars, EncoderVars, ModelParams, PriorVars, PyramidVars,
};
use crate::pyramid::{aggregate_pyramid, frame_weights, q_vid, weight_frames};
use crate::regularizer::{average_features, q_reg, sigma_from_rho};

/// Generator-side parameters placed on a graph.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorVars {
    pub attention: Option<AttentionVars>,
    pub encoder: EncoderVars,
    pub pyramid: PyramidVars,
    pub prior: PriorVars,
}

impl GeneratorVars {
    /// Graph handles in the order of [`ModelParams::generator_tensors`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        if let Some(a) = &self.attention {
            out.extend(a.vars());
        }
        out.extend(self.encoder.vars());
        out.extend(self.pyramid.vars());
        out.extend(self.prior.vars());
        out
    }

    pub fn gradients(&self, grads: &Gradients) -> Vec<Matrix> {
        self.vars()
            .into_iter()
            .map(|v| grads.get(v).expect("generator bound as variables"))
            .collect()
    }
}

impl ModelParams {
    pub fn bind_generator<'a>(&'a self, g: &mut Graph<'a>, tracked: bool) -> Result<GeneratorVars> {
        Ok(GeneratorVars {
            attention: match &self.attention {
                Some(a) => Some(a.bind(g, tracked)?),
                None => None,
            },
            encoder: self.encoder.bind(g, tracked)?,
            pyramid: self.pyramid.bind(g, tracked)?,
            prior: self.prior.bind(g, tracked)?,
        })
    }

    pub fn bind_discriminator<'a>(&'a self, g: &mut Graph<'a>, tracked: bool) -> Result<DiscriminatorVars> {
        self.discriminator.bind(g, tracked)
    }
}

/// Graph nodes of one video's forward pass.
#[derive(Clone, Copy, Debug)]
pub struct VideoForward {
    /// `1 × 1472`, absent in the concatenation variant.
    pub attention: Option<Var>,
    /// `T × 32`.
    pub f_gru: Var,
    /// `1 × 32`.
    pub f_avg: Var,
    /// `T × 1`.
    pub w_gru: Var,
    /// `slots × 32`.
    pub f_vid: Var,
    pub q_vid: Var,
    pub q_reg: Var,
}

/// Attention (or concatenation), FC3 and GRU: the `T × 32` frame features.
pub fn encode_video(g: &mut Graph, p: &GeneratorVars, seq: &FeatureSequence) -> Result<(Option<Var>, Var)> {
    seq.validate()?;
    let mean = g.constant(seq.mean_feats.clone())?;
    let std = g.constant(seq.std_feats.clone())?;
    let (frames, w_att) = match &p.attention {
        Some(att) => {
            let desc = temporal_variance_descriptor(g, mean)?;
            let w = attention_weights(g, desc, att)?;
            (apply_attention(g, std, w)?, Some(w))
        }
        None => (g.concat_cols(mean, std)?, None),
    };
    let expected = g.shape(p.encoder.fc3_w).0;
    if g.shape(frames).1 != expected {
        return Err(Error::shape(
            "encode_video",
            format!("{} input channels, FC3 expects {expected}", g.shape(frames).1),
        ));
    }
    Ok((w_att, encode(g, frames, &p.encoder)?))
}

/// Both quality heads for one video.
pub fn forward_video(
    g: &mut Graph,
    p: &GeneratorVars,
    seq: &FeatureSequence,
    levels: usize,
) -> Result<VideoForward> {
    let (attention, f_gru) = encode_video(g, p, seq)?;
    let f_avg = average_features(g, f_gru)?;
    let sigma = sigma_from_rho(g, p.prior.rho)?;
    let q_reg = q_reg(g, f_avg, p.prior.mu, sigma)?;
    let w_gru = frame_weights(g, f_gru, &p.pyramid)?;
    let f_wt = weight_frames(g, f_gru, w_gru)?;
    let f_vid = aggregate_pyramid(g, f_wt, levels)?;
    let q_vid = q_vid(g, f_vid, &p.pyramid)?;
    Ok(VideoForward {
        attention,
        f_gru,
        f_avg,
        w_gru,
        f_vid,
        q_vid,
        q_reg,
    })
}

/// Scores of one video on the normalized MOS scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VideoScores {
    pub q_vid: f64,
    pub q_reg: f64,
}

impl ModelParams {
    pub fn predict(&self, seq: &FeatureSequence) -> Result<VideoScores> {
        let mut g = Graph::new();
        let p = self.bind_generator(&mut g, false)?;
        let out = forward_video(&mut g, &p, seq, self.layout.levels())?;
        Ok(VideoScores {
            q_vid: g.scalar(out.q_vid),
            q_reg: g.scalar(out.q_reg),
        })
    }

    /// `F^avg` of one video.
    pub fn video_feature(&self, seq: &FeatureSequence) -> Result<Matrix> {
        let mut g = Graph::new();
        let p = self.bind_generator(&mut g, false)?;
        let (_, f_gru) = encode_video(&mut g, &p, seq)?;
        let f_avg = average_features(&mut g, f_gru)?;
        Ok(g.value(f_avg).clone())
    }
}
