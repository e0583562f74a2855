//! Pyramid temporal pooling and the video-level quality head built on it.

use std::ops::Range;

use crate::autograd::{Graph, Matrix, Var};
use crate::error::{Error, Result};
use crate::params::{CONV_WIDTH, PyramidParams, PyramidVars};

/// `tanh(Conv2(relu(Conv1(F^gru))))` as a `T × 1` column, one weight per frame.
pub fn frame_weights(g: &mut Graph, f_gru: Var, p: &PyramidVars) -> Result<Var> {
    let x = g.transpose(f_gru)?;
    let h = g.conv1d(x, p.conv1_k, CONV_WIDTH)?;
    let h = g.add(h, p.conv1_b)?;
    let h = g.relu(h)?;
    let h = g.conv1d(h, p.conv2_k, CONV_WIDTH)?;
    let h = g.add(h, p.conv2_b)?;
    let w = g.tanh(h)?;
    g.transpose(w)
}

/// Row `i` of `f_gru` scaled by `weights[i]`.
pub fn weight_frames(g: &mut Graph, f_gru: Var, weights: Var) -> Result<Var> {
    let t = g.shape(f_gru).0;
    if g.shape(weights) != (t, 1) {
        return Err(Error::shape(
            "weight_frames",
            format!("{:?} weights for {t} frames", g.shape(weights)),
        ));
    }
    g.mul(f_gru, weights)
}

/// Frame ranges feeding each slot, levels `1..=levels` in order, slots
/// left to right (`2^levels − 1` entries).
///
/// At level `m` frame `i` lands in slot `⌊i·2^(m−1)/T⌋`. A slot left empty
/// (only when `T < 2^(m−1)`) takes the range of the nearest non-empty slot
/// of its level, preferring the earlier one on a tie.
pub fn pyramid_segments(frames: usize, levels: usize) -> Vec<Range<usize>> {
    assert!(frames > 0, "pyramid over an empty sequence");
    let mut out = Vec::with_capacity((1 << levels) - 1);
    for m in 0..levels {
        let slots = 1usize << m;
        let mut ranges: Vec<Option<Range<usize>>> = vec![None; slots];
        for i in 0..frames {
            let s = i * slots / frames;
            match &mut ranges[s] {
                Some(r) => r.end = i + 1,
                slot @ None => *slot = Some(i..i + 1),
            }
        }
        for s in 0..slots {
            let range = match &ranges[s] {
                Some(r) => r.clone(),
                None => nearest_filled(&ranges, s),
            };
            out.push(range);
        }
    }
    out
}

fn nearest_filled(ranges: &[Option<Range<usize>>], s: usize) -> Range<usize> {
    (1..ranges.len())
        .find_map(|d| {
            let before = s.checked_sub(d).and_then(|j| ranges[j].clone());
            before.or_else(|| ranges.get(s + d).cloned().flatten())
        })
        .expect("at least one slot holds a frame")
}

/// Pyramid-pooled features: one row per slot (`127 × 32` with 7 levels).
/// Row `k` is column `k` of the `h × 127` descriptor.
pub fn aggregate_pyramid(g: &mut Graph, f_wt: Var, levels: usize) -> Result<Var> {
    let t = g.shape(f_wt).0;
    if t == 0 {
        return Err(Error::shape("aggregate_pyramid", "no frames"));
    }
    g.segment_mean(f_wt, pyramid_segments(t, levels))
}

/// `FC5(FC4(F^vid))`: FC4 maps each slot to a scalar with shared weights,
/// FC5 maps the slot scores to the prediction.
pub fn q_vid(g: &mut Graph, f_vid: Var, p: &PyramidVars) -> Result<Var> {
    let slots = g.shape(f_vid).0;
    if g.shape(p.fc5_w) != (slots, 1) {
        return Err(Error::shape(
            "q_vid",
            format!("{slots} slots, FC5 weights {:?}", g.shape(p.fc5_w)),
        ));
    }
    let s = g.matmul(f_vid, p.fc4_w)?;
    let s = g.add(s, p.fc4_b)?;
    let s = g.transpose(s)?;
    let q = g.matmul(s, p.fc5_w)?;
    g.add(q, p.fc5_b)
}

/// `(Q^vid + λ·Q^reg) / (1 + λ)`.
pub fn fuse_scores(q_vid: f64, q_reg: f64, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "fusion weight must be non-negative, got {lambda}"
        )));
    }
    Ok((q_vid + lambda * q_reg) / (1.0 + lambda))
}

/// Slot-major pooled descriptor.
#[derive(Clone, Debug, PartialEq)]
pub struct PyramidFeature {
    /// `slots × h`.
    pub slots: Matrix,
}

impl PyramidFeature {
    /// The descriptor in `h × slots` orientation.
    pub fn as_columns(&self) -> Matrix {
        self.slots.t().to_owned()
    }

    pub fn columns(&self) -> usize {
        self.slots.nrows()
    }
}

impl PyramidParams {
    /// `(W^gru, F^vid, Q^vid)` for `T × 32` hidden states.
    pub fn evaluate(&self, f_gru: &Matrix, levels: usize) -> Result<(Matrix, PyramidFeature, f64)> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false)?;
        let x = g.constant(f_gru.clone())?;
        let w = frame_weights(&mut g, x, &p)?;
        let wt = weight_frames(&mut g, x, w)?;
        let vid = aggregate_pyramid(&mut g, wt, levels)?;
        let q = q_vid(&mut g, vid, &p)?;
        Ok((
            g.value(w).clone(),
            PyramidFeature {
                slots: g.value(vid).clone(),
            },
            g.scalar(q),
        ))
    }
}
