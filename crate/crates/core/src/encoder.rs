//! FC3 dimension reduction followed by a GRU over frames.

use crate::autograd::{Graph, Matrix, Var};
use crate::error::{Error, Result};
use crate::params::{EncoderParams, EncoderVars, HIDDEN_DIM};

/// Encode `T × D` frame features into `T × 32` hidden states, starting from
/// `h₀ = 0`:
///
/// ```text
/// r  = σ(x·W_r + h·U_r + b_r)
/// z  = σ(x·W_z + h·U_z + b_z)
/// h̃  = tanh(x·W_h + (r ⊙ h)·U_h + b_h)
/// h' = (1 − z) ⊙ h + z ⊙ h̃
/// ```
pub fn encode(g: &mut Graph, frames: Var, p: &EncoderVars) -> Result<Var> {
    let (t_len, _) = g.shape(frames);
    if t_len == 0 {
        return Err(Error::shape("encode", "no frames"));
    }
    let x = g.matmul(frames, p.fc3_w)?;
    let x = g.add(x, p.fc3_b)?;

    // input projections for every frame at once
    let xr = g.matmul(x, p.w_r)?;
    let xr = g.add(xr, p.b_r)?;
    let xz = g.matmul(x, p.w_z)?;
    let xz = g.add(xz, p.b_z)?;
    let xh = g.matmul(x, p.w_h)?;
    let xh = g.add(xh, p.b_h)?;

    let mut h = g.constant(Matrix::zeros((1, HIDDEN_DIM)))?;
    let mut states = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let r_in = g.row(xr, t)?;
        let hr = g.matmul(h, p.u_r)?;
        let r = g.add(r_in, hr)?;
        let r = g.sigmoid(r)?;

        let z_in = g.row(xz, t)?;
        let hz = g.matmul(h, p.u_z)?;
        let z = g.add(z_in, hz)?;
        let z = g.sigmoid(z)?;

        let c_in = g.row(xh, t)?;
        let rh = g.mul(r, h)?;
        let rh = g.matmul(rh, p.u_h)?;
        let cand = g.add(c_in, rh)?;
        let cand = g.tanh(cand)?;

        // h + z ⊙ (h̃ − h)
        let delta = g.sub(cand, h)?;
        let step = g.mul(z, delta)?;
        h = g.add(h, step)?;
        states.push(h);
    }
    g.stack_rows(&states)
}

impl EncoderParams {
    /// Hidden states for already attended (or concatenated) frame features.
    pub fn encode(&self, frames: &Matrix) -> Result<Matrix> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false)?;
        let x = g.constant(frames.clone())?;
        let out = encode(&mut g, x, &p)?;
        Ok(g.value(out).clone())
    }
}
