//! Learnable parameter blocks and their initialization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Gradients, Matrix, Var};
use crate::error::Result;

/// Channel count of the concatenated stage features (64+128+256+512+512).
pub const FEATURE_DIM: usize = 1472;
pub const ATTENTION_HIDDEN: usize = 320;
pub const REDUCED_DIM: usize = 256;
pub const HIDDEN_DIM: usize = 32;
pub const CONV_WIDTH: usize = 15;
pub const PYRAMID_LEVELS: usize = 7;
/// `2^7 − 1`.
pub const PYRAMID_SLOTS: usize = (1 << PYRAMID_LEVELS) - 1;
/// Lower bound added to `softplus(ρ)` so the prior scale stays positive.
pub const SIGMA_FLOOR: f64 = 1e-3;

macro_rules! param_block {
    ($(#[$meta:meta])* $name:ident => $vars:ident { $($field:ident),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name {
            $(pub $field: Matrix,)+
        }

        /// Graph handles for the matching parameter block.
        #[derive(Clone, Copy, Debug)]
        pub struct $vars {
            $(pub $field: Var,)+
        }

        impl $name {
            /// Put every tensor on `g`, as variables when `tracked`.
            pub fn bind<'a>(&'a self, g: &mut Graph<'a>, tracked: bool) -> Result<$vars> {
                Ok($vars {
                    $($field: g.parameter(&self.$field, tracked),)+
                })
            }

            pub fn tensors(&self) -> Vec<(&'static str, &Matrix)> {
                vec![$((stringify!($field), &self.$field)),+]
            }

            pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
                vec![$((stringify!($field), &mut self.$field)),+]
            }
        }

        impl $vars {
            pub fn vars(&self) -> Vec<Var> {
                vec![$(self.$field),+]
            }

            pub fn gradients(&self, grads: &Gradients) -> Vec<Matrix> {
                self.vars()
                    .into_iter()
                    .map(|v| grads.get(v).expect("parameter bound as variable"))
                    .collect()
            }
        }
    };
}

param_block! {
    /// FC1 (1472→320) and FC2 (320→1472) of the channel attention.
    AttentionParams => AttentionVars { fc1_w, fc1_b, fc2_w, fc2_b }
}

param_block! {
    /// FC3 followed by a single-layer GRU (256→32).
    EncoderParams => EncoderVars {
        fc3_w, fc3_b,
        w_r, w_z, w_h,
        u_r, u_z, u_h,
        b_r, b_z, b_h,
    }
}

param_block! {
    /// Frame-weighting convolutions and the FC4/FC5 quality head.
    PyramidParams => PyramidVars {
        conv1_k, conv1_b, conv2_k, conv2_b,
        fc4_w, fc4_b, fc5_w, fc5_b,
    }
}

param_block! {
    /// Learnable mean and pre-softplus scale of the Gaussian quality kernel.
    PriorParams => PriorVars { mu, rho }
}

param_block! {
    /// 32→h1→h2→1 MLP with ReLU hidden layers and a sigmoid head.
    DiscriminatorParams => DiscriminatorVars { w1, b1, w2, b2, w3, b3 }
}

/// Architecture switches that change parameter shapes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    /// Feed `[F^m | F^d]` to FC3 instead of the attended std features.
    pub concat: bool,
    /// Global average only; FC5 becomes 1→1.
    pub single_level: bool,
    pub disc_hidden: [usize; 2],
}

impl Default for Layout {
    fn default() -> Self {
        Layout {
            concat: false,
            single_level: false,
            disc_hidden: [16, 8],
        }
    }
}

impl Layout {
    pub fn fc3_input(&self) -> usize {
        if self.concat { 2 * FEATURE_DIM } else { FEATURE_DIM }
    }

    pub fn slots(&self) -> usize {
        if self.single_level { 1 } else { PYRAMID_SLOTS }
    }

    pub fn levels(&self) -> usize {
        if self.single_level { 1 } else { PYRAMID_LEVELS }
    }
}

/// Every learnable tensor of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub layout: Layout,
    /// Absent in the concatenation variant.
    pub attention: Option<AttentionParams>,
    pub encoder: EncoderParams,
    pub pyramid: PyramidParams,
    pub prior: PriorParams,
    pub discriminator: DiscriminatorParams,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Matrix {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Matrix::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

/// `softplus⁻¹(σ − floor)`, the `ρ` that yields scale `σ`.
pub fn rho_for_sigma(sigma: f64) -> f64 {
    let s = sigma - SIGMA_FLOOR;
    s + (-(-s).exp_m1()).ln()
}

pub fn sigma_from_rho(rho: f64) -> f64 {
    rho.max(0.0) + (-rho.abs()).exp().ln_1p() + SIGMA_FLOOR
}

impl ModelParams {
    /// Weights uniform in `±1/√fan_in`; conv biases zero; prior at `μ = 0, σ = 1`.
    pub fn init(layout: Layout, rng: &mut ChaCha8Rng) -> Self {
        let attention = (!layout.concat).then(|| AttentionParams {
            fc1_w: uniform(rng, FEATURE_DIM, ATTENTION_HIDDEN, FEATURE_DIM),
            fc1_b: uniform(rng, 1, ATTENTION_HIDDEN, FEATURE_DIM),
            fc2_w: uniform(rng, ATTENTION_HIDDEN, FEATURE_DIM, ATTENTION_HIDDEN),
            fc2_b: uniform(rng, 1, FEATURE_DIM, ATTENTION_HIDDEN),
        });
        let fc3_in = layout.fc3_input();
        let h = HIDDEN_DIM;
        let encoder = EncoderParams {
            fc3_w: uniform(rng, fc3_in, REDUCED_DIM, fc3_in),
            fc3_b: uniform(rng, 1, REDUCED_DIM, fc3_in),
            w_r: uniform(rng, REDUCED_DIM, h, h),
            w_z: uniform(rng, REDUCED_DIM, h, h),
            w_h: uniform(rng, REDUCED_DIM, h, h),
            u_r: uniform(rng, h, h, h),
            u_z: uniform(rng, h, h, h),
            u_h: uniform(rng, h, h, h),
            b_r: uniform(rng, 1, h, h),
            b_z: uniform(rng, 1, h, h),
            b_h: uniform(rng, 1, h, h),
        };
        let slots = layout.slots();
        let pyramid = PyramidParams {
            conv1_k: uniform(rng, 1, h * CONV_WIDTH, h * CONV_WIDTH),
            conv1_b: Matrix::zeros((1, 1)),
            conv2_k: uniform(rng, 1, CONV_WIDTH, CONV_WIDTH),
            conv2_b: Matrix::zeros((1, 1)),
            fc4_w: uniform(rng, h, 1, h),
            fc4_b: uniform(rng, 1, 1, h),
            fc5_w: uniform(rng, slots, 1, slots),
            fc5_b: uniform(rng, 1, 1, slots),
        };
        let prior = PriorParams {
            mu: Matrix::zeros((1, h)),
            rho: Matrix::from_elem((1, h), rho_for_sigma(1.0)),
        };
        let [d1, d2] = layout.disc_hidden;
        let discriminator = DiscriminatorParams {
            w1: uniform(rng, h, d1, h),
            b1: uniform(rng, 1, d1, h),
            w2: uniform(rng, d1, d2, d1),
            b2: uniform(rng, 1, d2, d1),
            w3: uniform(rng, d2, 1, d2),
            b3: uniform(rng, 1, 1, d2),
        };
        ModelParams {
            layout,
            attention,
            encoder,
            pyramid,
            prior,
            discriminator,
        }
    }

    /// Generator-side tensors in checkpoint order: attention, encoder,
    /// pyramid, prior.
    pub fn generator_tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        if let Some(att) = &self.attention {
            out.extend(att.tensors().into_iter().map(|(n, m)| (format!("attention.{n}"), m)));
        }
        out.extend(self.encoder.tensors().into_iter().map(|(n, m)| (format!("encoder.{n}"), m)));
        out.extend(self.pyramid.tensors().into_iter().map(|(n, m)| (format!("pyramid.{n}"), m)));
        out.extend(self.prior.tensors().into_iter().map(|(n, m)| (format!("prior.{n}"), m)));
        out
    }

    pub fn generator_tensors_mut(&mut self) -> Vec<&mut Matrix> {
        Self::generator_parts(
            &mut self.attention,
            &mut self.encoder,
            &mut self.pyramid,
            &mut self.prior,
        )
    }

    fn generator_parts<'a>(
        attention: &'a mut Option<AttentionParams>,
        encoder: &'a mut EncoderParams,
        pyramid: &'a mut PyramidParams,
        prior: &'a mut PriorParams,
    ) -> Vec<&'a mut Matrix> {
        let mut out = Vec::new();
        if let Some(att) = attention {
            out.extend(att.tensors_mut().into_iter().map(|(_, m)| m));
        }
        out.extend(encoder.tensors_mut().into_iter().map(|(_, m)| m));
        out.extend(pyramid.tensors_mut().into_iter().map(|(_, m)| m));
        out.extend(prior.tensors_mut().into_iter().map(|(_, m)| m));
        out
    }

    pub fn discriminator_tensors(&self) -> Vec<(String, &Matrix)> {
        self.discriminator
            .tensors()
            .into_iter()
            .map(|(n, m)| (format!("discriminator.{n}"), m))
            .collect()
    }

    pub fn discriminator_tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.discriminator.tensors_mut().into_iter().map(|(_, m)| m).collect()
    }

    /// All tensors in checkpoint order.
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = self.generator_tensors();
        out.extend(self.discriminator_tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Self::generator_parts(
            &mut self.attention,
            &mut self.encoder,
            &mut self.pyramid,
            &mut self.prior,
        );
        out.extend(self.discriminator.tensors_mut().into_iter().map(|(_, m)| m));
        out
    }

    /// Current `σ = softplus(ρ) + floor` of the learnable prior.
    pub fn learned_sigma(&self) -> Vec<f64> {
        self.prior.rho.iter().map(|&r| sigma_from_rho(r)).collect()
    }

    pub fn learned_mu(&self) -> Vec<f64> {
        self.prior.mu.iter().copied().collect()
    }

    /// Round every tensor to the nearest `f32`.
    pub fn quantize_f32(&mut self) {
        for m in self.tensors_mut() {
            m.mapv_inplace(|v| v as f32 as f64);
        }
    }
}
