//! The denoiser contract the generation loop depends on, and a toy backend.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::attention::AttentionMap;
use crate::error::{FrapError, Result};
use crate::tape::{Tape, Var};

mod schedule;
mod toy;

pub use schedule::{ddim_update, Schedule, DEFAULT_STEPS};
pub use toy::{ToyDenoiser, ToyDims, ToyTextEncoder};

/// A `P x P x C` latent grid, cell-major with the channel index fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    p: usize,
    channels: usize,
    values: Vec<f64>,
}

impl Latent {
    pub fn new(p: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if p == 0 || channels == 0 {
            return Err(FrapError::shape("latent dimensions must be positive"));
        }
        if values.len() != p * p * channels {
            return Err(FrapError::shape(format!(
                "latent {p}x{p}x{channels} needs {} values, got {}",
                p * p * channels,
                values.len()
            )));
        }
        Ok(Self { p, channels, values })
    }

    pub fn zeros(p: usize, channels: usize) -> Self {
        Self {
            p,
            channels,
            values: vec![0.0; p * p * channels],
        }
    }

    /// Standard normal entries drawn from `rng`.
    pub fn gaussian(p: usize, channels: usize, rng: &mut impl Rng) -> Self {
        let values = (0..p * p * channels)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self { p, channels, values }
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self {
            p: self.p,
            channels: self.channels,
            values,
        }
    }

    pub(crate) fn require_same_shape(&self, other: &Latent) -> Result<()> {
        if self.p != other.p || self.channels != other.channels {
            return Err(FrapError::shape(format!(
                "latent shapes differ: {}x{}x{} vs {}x{}x{}",
                self.p, self.p, self.channels, other.p, other.p, other.channels
            )));
        }
        Ok(())
    }
}

/// An RGB image with channel values in `[0, 1]`, row-major, `(P, P, 3)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, 3)
    }

    /// Binary PPM (P6, 8-bit).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.pixels.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        out
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_ppm()).map_err(|e| FrapError::io(path, e))
    }
}

/// Everything the generation loop needs from a denoising backend.
///
/// `emb` is an `N x H` row-major embedding matrix. Implementations must be
/// pure: identical inputs give bit-identical outputs, and no call counting
/// happens here.
pub trait Denoiser: Send + Sync {
    fn latent_size(&self) -> usize;
    fn channels(&self) -> usize;
    fn embed_dim(&self) -> usize;
    fn schedule(&self) -> &Schedule;

    /// Predicted noise and the cross-attention map for one branch.
    fn forward(&self, z: &Latent, t: usize, emb: &[f64]) -> Result<(Latent, AttentionMap)>;

    /// Records the attention computation on `tape` with the embedding as a
    /// tape variable; returns the `P^2 x N` attention node. Its value must
    /// match the attention from [`Denoiser::forward`] bit for bit.
    fn attention_on_tape(&self, tape: &mut Tape, z: &Latent, t: usize, emb: Var) -> Result<Var>;

    fn decode(&self, z0: &Latent) -> Image;

    fn step(&self, z: &Latent, t: usize, noise: &Latent) -> Result<Latent> {
        self.schedule().step(z, t, noise)
    }

    fn steps(&self) -> usize {
        self.schedule().steps()
    }
}

/// `beta * cond + (1 - beta) * uncond`, element-wise.
pub fn cfg_noise(cond: &Latent, uncond: &Latent, beta: f64) -> Result<Latent> {
    cond.require_same_shape(uncond)?;
    let values = cond
        .values
        .iter()
        .zip(&uncond.values)
        .map(|(&c, &u)| beta * c + (1.0 - beta) * u)
        .collect();
    Ok(cond.with_values(values))
}

/// Latent, step index and evaluation count of one generation.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserState {
    pub z: Latent,
    pub t: usize,
    call_counter: u64,
}

impl DenoiserState {
    pub fn new(z: Latent, t: usize) -> Self {
        Self { z, t, call_counter: 0 }
    }

    pub fn calls(&self) -> u64 {
        self.call_counter
    }

    /// One (possibly batched) denoiser evaluation.
    pub fn record_call(&mut self) {
        self.call_counter += 1;
    }
}
