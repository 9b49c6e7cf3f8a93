use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attention::AttentionMap;
use crate::denoiser::{Denoiser, Image, Latent, Schedule};
use crate::error::{FrapError, Result};
use crate::linalg;
use crate::prompt::{EmbeddingPair, PromptSpec};
use crate::tape::{Tape, Var};

/// Scale of the attention features in the predicted noise.
const FEATURE_GAIN: f64 = 0.1;
/// Spread of the key projection; larger values sharpen attention.
const KEY_GAIN: f64 = 1.0;
/// Amplitude of the step-dependent noise offset.
const TIME_NOISE_GAIN: f64 = 0.1;

/// Seeded hash table from token strings to embedding rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTextEncoder {
    seed: u64,
    embed_dim: usize,
}

impl ToyTextEncoder {
    pub fn new(seed: u64, embed_dim: usize) -> Self {
        Self { seed, embed_dim }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    fn row(&self, tag: u8, key: &str) -> Vec<f64> {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update([tag]);
        hasher.update(key.as_bytes());
        let digest: [u8; 32] = hasher.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(digest);
        (0..self.embed_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// Embedding row for a token string.
    pub fn token_row(&self, token: &str) -> Vec<f64> {
        self.row(0, token)
    }

    /// Embedding row of the null text.
    pub fn null_row(&self) -> Vec<f64> {
        self.row(1, "")
    }

    pub fn encode(&self, prompt: &PromptSpec) -> EmbeddingPair {
        let n = prompt.len();
        let conditional = prompt.tokens().iter().flat_map(|t| self.token_row(t)).collect();
        let unconditional = self.null_row().repeat(n);
        EmbeddingPair::new(n, self.embed_dim, conditional, unconditional)
            .expect("encoder rows are finite and correctly sized")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyDims {
    pub latent_size: usize,
    pub channels: usize,
    pub head_dim: usize,
    pub embed_dim: usize,
}

impl Default for ToyDims {
    fn default() -> Self {
        Self {
            latent_size: 16,
            channels: 4,
            head_dim: 8,
            embed_dim: 8,
        }
    }
}

/// Seeded sinusoids `amp * sin(TAU * freq * t / T + phase)`.
#[derive(Debug, Clone)]
struct Waves {
    amp: Vec<f64>,
    freq: Vec<f64>,
    phase: Vec<f64>,
}

impl Waves {
    fn sample(rng: &mut ChaCha8Rng, n: usize, gain: f64) -> Self {
        Self {
            amp: (0..n).map(|_| gain * rng.random_range(0.2..0.6)).collect(),
            freq: (0..n).map(|_| rng.random_range(0.5..3.0)).collect(),
            phase: (0..n).map(|_| rng.random_range(0.0..TAU)).collect(),
        }
    }

    fn at(&self, t: usize, steps: usize) -> Vec<f64> {
        let x = t as f64 / steps as f64;
        self.amp
            .iter()
            .zip(&self.freq)
            .zip(&self.phase)
            .map(|((a, f), ph)| a * (TAU * f * x + ph).sin())
            .collect()
    }
}

/// A single cross-attention site with fixed random projections.
#[derive(Debug, Clone)]
pub struct ToyDenoiser {
    seed: u64,
    dims: ToyDims,
    schedule: Schedule,
    w_q: Vec<f64>,
    pos: Vec<f64>,
    time_bias: Waves,
    w_k: Vec<f64>,
    w_v: Vec<f64>,
    w_o: Vec<f64>,
    time_noise: Waves,
    w_dec: Vec<f64>,
    dec_bias: Vec<f64>,
}

fn normals(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
}

impl ToyDenoiser {
    pub fn new(seed: u64) -> Self {
        Self::with_dims(seed, ToyDims::default(), Schedule::default()).expect("default dimensions are valid")
    }

    pub fn with_dims(seed: u64, dims: ToyDims, schedule: Schedule) -> Result<Self> {
        let ToyDims {
            latent_size: p,
            channels: c,
            head_dim: d,
            embed_dim: h,
        } = dims;
        if p == 0 || c == 0 || d == 0 || h == 0 {
            return Err(FrapError::config("toy denoiser dimensions must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w_q = normals(&mut rng, c * d, (1.0 / c as f64).sqrt());
        let pos = normals(&mut rng, p * p * d, 1.0);
        let time_bias = Waves::sample(&mut rng, d, 1.0);
        let w_k = normals(&mut rng, h * d, KEY_GAIN * (1.0 / h as f64).sqrt());
        let w_v = normals(&mut rng, h * d, (1.0 / h as f64).sqrt());
        let w_o = normals(&mut rng, d * c, (1.0 / d as f64).sqrt());
        let time_noise = Waves::sample(&mut rng, c, TIME_NOISE_GAIN);
        let w_dec = normals(&mut rng, c * 3, 0.25 / (c as f64).sqrt());
        let dec_bias = (0..3).map(|_| rng.random_range(0.35..0.65)).collect();
        Ok(Self {
            seed,
            dims,
            schedule,
            w_q,
            pos,
            time_bias,
            w_k,
            w_v,
            w_o,
            time_noise,
            w_dec,
            dec_bias,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dims(&self) -> ToyDims {
        self.dims
    }

    fn cells(&self) -> usize {
        self.dims.latent_size * self.dims.latent_size
    }

    fn check_latent(&self, z: &Latent) -> Result<()> {
        if z.p() != self.dims.latent_size || z.channels() != self.dims.channels {
            return Err(FrapError::shape(format!(
                "latent {}x{}x{} does not match denoiser {}x{}x{}",
                z.p(),
                z.p(),
                z.channels(),
                self.dims.latent_size,
                self.dims.latent_size,
                self.dims.channels
            )));
        }
        Ok(())
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t > self.schedule.steps() {
            return Err(FrapError::StepOutOfRange {
                t,
                steps: self.schedule.steps(),
            });
        }
        Ok(())
    }

    fn tokens_of(&self, emb_len: usize) -> Result<usize> {
        let h = self.dims.embed_dim;
        if emb_len == 0 || !emb_len.is_multiple_of(h) {
            return Err(FrapError::shape(format!(
                "embedding of {emb_len} values is not N x {h}"
            )));
        }
        Ok(emb_len / h)
    }

    /// `Q = (z / rms(z)) W_q + pos + bias(t)`, `P^2 x d`.
    fn queries(&self, z: &Latent, t: usize) -> Vec<f64> {
        let (c, d) = (self.dims.channels, self.dims.head_dim);
        let n = z.values().len() as f64;
        let rms = (z.values().iter().map(|v| v * v).sum::<f64>() / n).sqrt();
        let unit = linalg::scale(z.values(), 1.0 / rms.max(1e-12));
        let mut q = linalg::matmul(&unit, &self.w_q, self.cells(), c, d);
        let bias = self.time_bias.at(t, self.schedule.steps());
        for (cell, row) in q.chunks_mut(d).enumerate() {
            let pos = &self.pos[cell * d..(cell + 1) * d];
            for k in 0..d {
                row[k] += pos[k] + bias[k];
            }
        }
        q
    }

    fn attention_values(&self, q: &[f64], emb: &[f64], n: usize) -> Vec<f64> {
        let (h, d) = (self.dims.embed_dim, self.dims.head_dim);
        let k = linalg::matmul(emb, &self.w_k, n, h, d);
        let scores = linalg::matmul_nt(q, &k, self.cells(), d, n);
        let scaled = linalg::scale(&scores, 1.0 / (d as f64).sqrt());
        linalg::row_softmax(&scaled, n)
    }
}

impl Denoiser for ToyDenoiser {
    fn latent_size(&self) -> usize {
        self.dims.latent_size
    }

    fn channels(&self) -> usize {
        self.dims.channels
    }

    fn embed_dim(&self) -> usize {
        self.dims.embed_dim
    }

    fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    fn forward(&self, z: &Latent, t: usize, emb: &[f64]) -> Result<(Latent, AttentionMap)> {
        self.check_latent(z)?;
        self.check_step(t)?;
        let n = self.tokens_of(emb.len())?;
        let (c, d, h) = (self.dims.channels, self.dims.head_dim, self.dims.embed_dim);
        let q = self.queries(z, t);
        let a = self.attention_values(&q, emb, n);
        let v = linalg::matmul(emb, &self.w_v, n, h, d);
        let features = linalg::matmul(&a, &v, self.cells(), n, d);
        let out = linalg::matmul(&features, &self.w_o, self.cells(), d, c);
        let offset = self.time_noise.at(t, self.schedule.steps());
        let noise = z
            .values()
            .iter()
            .zip(&out)
            .enumerate()
            .map(|(i, (&zi, &fi))| zi + FEATURE_GAIN * fi + offset[i % c])
            .collect();
        let attn = AttentionMap::new(self.dims.latent_size, n, a)?;
        Ok((z.with_values(noise), attn))
    }

    fn attention_on_tape(&self, tape: &mut Tape, z: &Latent, t: usize, emb: Var) -> Result<Var> {
        self.check_latent(z)?;
        self.check_step(t)?;
        let n = self.tokens_of(tape.value(emb).len())?;
        let (d, h) = (self.dims.head_dim, self.dims.embed_dim);
        let q = tape.constant(self.queries(z, t));
        let w_k = tape.constant(self.w_k.clone());
        let k = tape.matmul(emb, w_k, n, h, d)?;
        let scores = tape.matmul_nt(q, k, self.cells(), d, n)?;
        let scaled = tape.scale(scores, 1.0 / (d as f64).sqrt());
        tape.row_softmax(scaled, n)
    }

    fn decode(&self, z0: &Latent) -> Image {
        let p = z0.p();
        let c = z0.channels().min(self.dims.channels);
        let mut pixels = Vec::with_capacity(p * p * 3);
        for cell in z0.values().chunks(z0.channels()) {
            for o in 0..3 {
                let v: f64 = self.dec_bias[o] + (0..c).map(|k| cell[k] * self.w_dec[k * 3 + o]).sum::<f64>();
                pixels.push(v.clamp(0.0, 1.0));
            }
        }
        Image {
            height: p,
            width: p,
            pixels,
        }
    }
}
