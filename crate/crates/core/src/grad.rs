//! Gradients of the step objective with respect to the token weight
//! parameters, and a finite-difference checker.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::denoiser::{Denoiser, Latent, ToyDenoiser, ToyTextEncoder};
use crate::error::{FrapError, Result};
use crate::objective::{self, BindingVariant, LossBreakdown, ObjectTerm, ObjectiveConfig, PairTerm, PresenceVariant};
use crate::prompt::{weighted_embedding, weights_from_alpha, EmbeddingPair, PromptSpec, TokenWeights};
use crate::tape::{Tape, Var};
use crate::template::{default_vocabulary, expand_template, TemplateId};

/// Objective nodes recorded on a tape.
#[derive(Debug, Clone)]
pub struct TapedObjective {
    pub total: Var,
    pub presence: Var,
    pub binding: Var,
    pub objects: Vec<(usize, Var)>,
    pub pairs: Vec<((usize, usize), Var)>,
}

impl TapedObjective {
    pub fn breakdown(&self, tape: &Tape) -> LossBreakdown {
        LossBreakdown {
            total: tape.scalar(self.total),
            presence: tape.scalar(self.presence),
            binding: tape.scalar(self.binding),
            per_object_presence: self
                .objects
                .iter()
                .map(|&(object, v)| ObjectTerm {
                    object,
                    value: tape.scalar(v),
                })
                .collect(),
            per_pair_binding: self
                .pairs
                .iter()
                .map(|&((object, modifier), v)| PairTerm {
                    object,
                    modifier,
                    value: tape.scalar(v),
                })
                .collect(),
        }
    }
}

/// Records the objective over a `P^2 x N` attention node, op for op the
/// same as [`objective::total_loss`].
pub fn objective_on_tape(
    tape: &mut Tape,
    attn: Var,
    p: usize,
    prompt: &PromptSpec,
    cfg: &ObjectiveConfig,
) -> Result<TapedObjective> {
    cfg.validate()?;
    if prompt.objects().is_empty() {
        return Err(FrapError::NoObjects);
    }
    let n = prompt.len();
    if tape.value(attn).len() != p * p * n {
        return Err(FrapError::shape("attention node does not match P x P x N"));
    }

    let mut objects = Vec::new();
    if cfg.presence_variant != PresenceVariant::None {
        for &s in prompt.objects() {
            let col = tape.column(attn, s, n)?;
            let smoothed = tape.smooth(col, &cfg.kernel)?;
            let max = tape.max(smoothed);
            let term = match cfg.presence_variant {
                PresenceVariant::TotalVariation => {
                    if p < 2 {
                        return Err(FrapError::shape("total variation needs P >= 2"));
                    }
                    let tv = tape.total_variation(smoothed)?;
                    tape.tv_presence(tv, max, p)?
                }
                _ => tape.presence_from_max(max)?,
            };
            objects.push((s, term));
        }
    }

    let mut pairs = Vec::new();
    if cfg.binding_variant != BindingVariant::None {
        for &(s, r) in prompt.pairs() {
            let cs = tape.column(attn, s, n)?;
            let cr = tape.column(attn, r, n)?;
            let gs = tape.smooth(cs, &cfg.kernel)?;
            let gr = tape.smooth(cr, &cfg.kernel)?;
            let aligned = tape.align_to(gr, gs)?;
            let ps = tape.pixel_softmax(gs);
            let pr = tape.pixel_softmax(aligned);
            let term = match cfg.binding_variant {
                BindingVariant::Jsd => tape.jsd(ps, pr)?,
                BindingVariant::Kld => tape.sym_kl(ps, pr)?,
                _ => tape.overlap(ps, pr)?,
            };
            pairs.push(((s, r), term));
        }
    }

    let presence_terms: Vec<Var> = objects.iter().map(|&(_, v)| v).collect();
    let presence = match cfg.presence_variant {
        PresenceVariant::MaxOnly => tape.max_of(presence_terms)?,
        _ => tape.mean_of(presence_terms)?,
    };
    let binding = tape.mean_of(pairs.iter().map(|&(_, v)| v).collect())?;
    let total = tape.combine(presence, binding, cfg.lambda, cfg.binding_variant)?;
    Ok(TapedObjective {
        total,
        presence,
        binding,
        objects,
        pairs,
    })
}

/// A recorded step: `alpha -> phi -> embedding -> attention -> objective`.
#[derive(Debug, Clone)]
pub struct StepTape {
    pub tape: Tape,
    pub alpha: Var,
    pub objective: TapedObjective,
}

pub fn record_step(
    denoiser: &dyn Denoiser,
    emb: &EmbeddingPair,
    z: &Latent,
    t: usize,
    prompt: &PromptSpec,
    weights: &TokenWeights,
    cfg: &ObjectiveConfig,
) -> Result<StepTape> {
    if weights.alpha.len() != prompt.len() || emb.tokens != prompt.len() {
        return Err(FrapError::shape(format!(
            "{} weights and {} embedding rows for {} tokens",
            weights.alpha.len(),
            emb.tokens,
            prompt.len()
        )));
    }
    let mut tape = Tape::new();
    let alpha = tape.input(weights.alpha.clone());
    let phi = tape.bounded_weight(alpha, weights.phi_lb, weights.phi_ub, weights.frozen.clone())?;
    let e = tape.interpolate(phi, emb.conditional.clone(), emb.unconditional.clone(), emb.dim)?;
    let attn = denoiser.attention_on_tape(&mut tape, z, t, e)?;
    let objective = objective_on_tape(&mut tape, attn, denoiser.latent_size(), prompt, cfg)?;
    Ok(StepTape { tape, alpha, objective })
}

/// Step objective and its gradient with respect to `alpha`. The latent is
/// held constant.
pub fn loss_and_grad(
    denoiser: &dyn Denoiser,
    emb: &EmbeddingPair,
    z: &Latent,
    t: usize,
    prompt: &PromptSpec,
    weights: &TokenWeights,
    cfg: &ObjectiveConfig,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let step = record_step(denoiser, emb, z, t, prompt, weights, cfg)?;
    let grads = step.tape.gradient(step.objective.total)?;
    Ok((step.objective.breakdown(&step.tape), grads.wrt(step.alpha)))
}

/// The same objective through the plain (untaped) path.
pub fn loss_at(
    denoiser: &dyn Denoiser,
    emb: &EmbeddingPair,
    z: &Latent,
    t: usize,
    prompt: &PromptSpec,
    weights: &TokenWeights,
    cfg: &ObjectiveConfig,
) -> Result<LossBreakdown> {
    let e = weighted_embedding(emb, &weights_from_alpha(weights))?;
    let (_, attn) = denoiser.forward(z, t, &e)?;
    objective::total_loss(&attn, prompt, cfg)
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Setup for randomized gradient checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCheckConfig {
    pub seed: u64,
    pub denoiser_seed: u64,
    pub encoder_seed: u64,
    /// Standard deviation of the random `alpha`.
    pub alpha_scale: f64,
    pub objective: ObjectiveConfig,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            denoiser_seed: 0,
            encoder_seed: 0,
            alpha_scale: 1.0,
            objective: ObjectiveConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckTrial {
    pub trial: usize,
    pub prompt: String,
    pub t: usize,
    pub max_abs_error: f64,
    /// `max_i |analytic_i - numeric_i| / max(max_i |numeric_i|, 1e-8)`.
    pub max_rel_error: f64,
    pub frozen_exact_zero: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub h: f64,
    pub tol: f64,
    pub trials: Vec<GradCheckTrial>,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub passed: usize,
}

impl GradCheckReport {
    pub fn all_passed(&self) -> bool {
        self.passed == self.trials.len()
    }
}

const REL_FLOOR: f64 = 1e-8;

/// Compares analytic and central-difference gradients on seeded random
/// prompts, latents, steps and weights. Failures are report entries.
pub fn grad_check(config: &GradCheckConfig, trials: usize, h: f64, tol: f64) -> Result<GradCheckReport> {
    if !(tol > 0.0) || !(h > 0.0) {
        return Err(FrapError::config("grad_check needs h > 0 and tol > 0"));
    }
    let denoiser = ToyDenoiser::new(config.denoiser_seed);
    let encoder = ToyTextEncoder::new(config.encoder_seed, denoiser.embed_dim());
    let vocab = default_vocabulary();
    let mut prompts = Vec::new();
    for template in TemplateId::ALL {
        prompts.extend(expand_template(template, &vocab, config.seed)?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::with_capacity(trials);
    for trial in 0..trials {
        let prompt = &prompts[rng.random_range(0..prompts.len())];
        let t = rng.random_range(1..=denoiser.steps());
        let z = Latent::gaussian(denoiser.latent_size(), denoiser.channels(), &mut rng);
        let alpha: Vec<f64> = (0..prompt.len())
            .map(|_| config.alpha_scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let emb = encoder.encode(prompt);
        let weights = TokenWeights::neutral(prompt).with_alpha(alpha.clone())?;
        let (_, analytic) = loss_and_grad(&denoiser, &emb, &z, t, prompt, &weights, &config.objective)?;
        let numeric = central_difference(&alpha, h, |a| {
            let w = weights.clone().with_alpha(a.to_vec())?;
            Ok(loss_at(&denoiser, &emb, &z, t, prompt, &w, &config.objective)?.total)
        })?;
        let max_abs_error = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).abs())
            .fold(0.0, f64::max);
        let scale = numeric.iter().map(|n| n.abs()).fold(0.0, f64::max).max(REL_FLOOR);
        let max_rel_error = max_abs_error / scale;
        let frozen_exact_zero = weights.frozen.iter().zip(&analytic).all(|(&f, &g)| !f || g == 0.0);
        out.push(GradCheckTrial {
            trial,
            prompt: prompt.text().to_string(),
            t,
            max_abs_error,
            max_rel_error,
            frozen_exact_zero,
            passed: max_rel_error <= tol && frozen_exact_zero,
        });
    }
    Ok(GradCheckReport {
        h,
        tol,
        max_abs_error: out.iter().map(|r| r.max_abs_error).fold(0.0, f64::max),
        max_rel_error: out.iter().map(|r| r.max_rel_error).fold(0.0, f64::max),
        passed: out.iter().filter(|r| r.passed).count(),
        trials: out,
    })
}
