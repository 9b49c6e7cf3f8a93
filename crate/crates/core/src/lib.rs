//! Adaptive per-token prompt weighting for diffusion inference.
//!
//! The crate runs the whole loop against a small deterministic denoiser:
//! cross-attention objectives over object and modifier tokens, online
//! gradient updates of bounded token weights, latent selection, and an
//! experiment harness for batch runs and ablations.
//!
//! ```
//! use frap::prelude::*;
//!
//! let prompt = parse_annotated("a [m1:red] [o1:apple] and a [o2:dog]", 16).unwrap();
//! let denoiser = ToyDenoiser::new(0);
//! let emb = ToyTextEncoder::new(0, denoiser.embed_dim()).encode(&prompt);
//! let record = run(&denoiser, &emb, &prompt, &ObjectiveConfig::default(), &LoopConfig::default()).unwrap();
//! assert_eq!(record.call_count, 65);
//! ```

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod denoiser;
pub mod error;
pub mod grad;
pub mod grid;
pub mod harness;
mod linalg;
pub mod objective;
pub mod pipeline;
pub mod prompt;
pub mod tape;
pub mod template;

pub use error::{FrapError, Result};

/// The names most programs need.
pub mod prelude {
    pub use crate::attention::AttentionMap;
    pub use crate::denoiser::{cfg_noise, Denoiser, Image, Latent, Schedule, ToyDenoiser, ToyTextEncoder};
    pub use crate::error::{FrapError, Result};
    pub use crate::grad::{grad_check, loss_and_grad, GradCheckConfig, GradCheckReport};
    pub use crate::grid::{align_to, grid_max, pixel_softmax, smooth, GaussianKernel, Grid2D, PixelDistribution};
    pub use crate::objective::{
        binding_loss, presence_loss, total_loss, BindingVariant, LossBreakdown, ObjectiveConfig, PresenceVariant,
    };
    pub use crate::pipeline::{line_search_probe, run, run_from, select_latent, LoopConfig, RunRecord, Variant};
    pub use crate::prompt::{
        parse_annotated, weighted_embedding, weights_from_alpha, EmbeddingPair, PromptSpec, TokenWeights,
    };
    pub use crate::template::{default_vocabulary, expand_template, TemplateId, Vocabulary};
}
