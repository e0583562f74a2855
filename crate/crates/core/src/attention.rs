//! Video-level channel attention driven by the temporal variation of the
//! mean-pooled features, applied to the std-pooled features.

use crate::autograd::{Graph, Matrix, Var};
use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::params::{AttentionParams, AttentionVars};

/// Per-channel std of `mean_feats` (rows are frames) with denominator
/// `T − 1`. A single frame has no temporal variation, so `T = 1` yields the
/// zero vector.
pub fn temporal_variance_descriptor(g: &mut Graph, mean_feats: Var) -> Result<Var> {
    let (t, c) = g.shape(mean_feats);
    if t == 1 {
        return g.constant(Matrix::zeros((1, c)));
    }
    g.std_bessel(mean_feats)
}

/// `sigmoid(FC2(relu(FC1(descriptor))))`, one weight per channel.
pub fn attention_weights(g: &mut Graph, descriptor: Var, p: &AttentionVars) -> Result<Var> {
    let h = g.matmul(descriptor, p.fc1_w)?;
    let h = g.add(h, p.fc1_b)?;
    let h = g.relu(h)?;
    let h = g.matmul(h, p.fc2_w)?;
    let h = g.add(h, p.fc2_b)?;
    g.sigmoid(h)
}

/// Scale every frame of `std_feats` channelwise by the `1 × C` weights.
pub fn apply_attention(g: &mut Graph, std_feats: Var, weights: Var) -> Result<Var> {
    let (_, c) = g.shape(std_feats);
    if g.shape(weights) != (1, c) {
        return Err(Error::shape(
            "apply_attention",
            format!("weights {:?} for {c} channels", g.shape(weights)),
        ));
    }
    g.mul(std_feats, weights)
}

/// Attended frame features and the video's channel weights.
#[derive(Clone, Debug, PartialEq)]
pub struct AttendedSequence {
    /// `T × 1472`.
    pub features: Matrix,
    /// `1 × 1472`, each entry in `(0, 1)`.
    pub weights: Matrix,
}

impl AttentionParams {
    /// Evaluate the attention stage for one video outside of training.
    pub fn attend(&self, seq: &FeatureSequence) -> Result<AttendedSequence> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false)?;
        let mean = g.constant(seq.mean_feats.clone())?;
        let std = g.constant(seq.std_feats.clone())?;
        let desc = temporal_variance_descriptor(&mut g, mean)?;
        let w = attention_weights(&mut g, desc, &p)?;
        let f = apply_attention(&mut g, std, w)?;
        Ok(AttendedSequence {
            features: g.value(f).clone(),
            weights: g.value(w).clone(),
        })
    }
}
