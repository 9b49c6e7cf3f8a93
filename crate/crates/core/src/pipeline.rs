//! Latent selection, the adaptive weighting phase, the plain phase, and
//! call accounting.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::AttentionMap;
use crate::denoiser::{cfg_noise, Denoiser, DenoiserState, Image, Latent};
use crate::error::{FrapError, Result};
use crate::grad::{loss_and_grad, loss_at};
use crate::harness::ProxyMetrics;
use crate::objective::{total_loss, LossBreakdown, ObjectiveConfig};
use crate::prompt::{
    weighted_embedding, weights_from_alpha, EmbeddingPair, PromptSpec, TokenWeights, DEFAULT_PHI_LB, DEFAULT_PHI_UB,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Frap,
    Vanilla,
    StaticWeighting,
    RedoTimestep,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Frap,
        Variant::Vanilla,
        Variant::StaticWeighting,
        Variant::RedoTimestep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Frap => "frap",
            Variant::Vanilla => "vanilla",
            Variant::StaticWeighting => "static_weighting",
            Variant::RedoTimestep => "redo_timestep",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = FrapError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| FrapError::UnknownVariant(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    pub steps: usize,
    /// Last step (inclusive) of the weighting phase.
    pub t_end: usize,
    /// Step at which the selection batch is scored.
    pub t_select: usize,
    pub batch: usize,
    pub eta: f64,
    pub beta: f64,
    pub variant: Variant,
    pub static_phi: f64,
    pub phi_lb: f64,
    pub phi_ub: f64,
    pub seed: u64,
    /// `None` uses the variant default: on for everything except vanilla.
    pub selection: Option<bool>,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            t_end: 26,
            t_select: 36,
            batch: 4,
            eta: 1.0,
            beta: 7.5,
            variant: Variant::Frap,
            static_phi: 1.4,
            phi_lb: DEFAULT_PHI_LB,
            phi_ub: DEFAULT_PHI_UB,
            seed: 0,
            selection: None,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(FrapError::config("steps must be positive"));
        }
        if self.t_end < 1 || self.t_end > self.steps {
            return Err(FrapError::config(format!(
                "t_end {} outside 1..={}",
                self.t_end, self.steps
            )));
        }
        if self.t_select < 1 || self.t_select > self.steps {
            return Err(FrapError::config(format!(
                "t_select {} outside 1..={}",
                self.t_select, self.steps
            )));
        }
        if self.batch == 0 {
            return Err(FrapError::config("selection batch must be at least 1"));
        }
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(FrapError::config("eta must be finite and non-negative"));
        }
        if !self.beta.is_finite() || !self.static_phi.is_finite() {
            return Err(FrapError::config("beta and static_phi must be finite"));
        }
        if !(self.phi_lb < self.phi_ub) || !self.phi_lb.is_finite() || !self.phi_ub.is_finite() {
            return Err(FrapError::config("phi bounds must satisfy lb < ub"));
        }
        Ok(())
    }

    pub fn selection_enabled(&self) -> bool {
        self.selection.unwrap_or(self.variant != Variant::Vanilla)
    }

    /// `T - t_end + 1`.
    pub fn weighting_steps(&self) -> usize {
        self.steps - self.t_end + 1
    }

    /// `T - t_select + 1`.
    pub fn selection_steps(&self) -> usize {
        self.steps - self.t_select + 1
    }

    /// Denoiser calls a successful run makes.
    pub fn expected_calls(&self) -> u64 {
        let selection = if self.selection_enabled() {
            self.selection_steps()
        } else {
            0
        };
        let redo = if self.variant == Variant::RedoTimestep {
            self.weighting_steps()
        } else {
            0
        };
        (selection + self.steps + redo) as u64
    }
}

/// Context for an aborted run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub step: usize,
    pub message: String,
    pub alpha: Vec<f64>,
    pub loss: Option<LossBreakdown>,
}

/// Outcome of latent selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// The winner's original starting latent.
    pub z_t: Latent,
    /// 1-based index of the winner.
    pub b_star: usize,
    pub losses: Vec<f64>,
    /// Every candidate's starting latent, in batch order.
    pub candidates: Vec<Latent>,
    pub calls: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub prompt: PromptSpec,
    pub seed: u64,
    pub config: LoopConfig,
    pub objective: ObjectiveConfig,
    /// 1-based selected candidate, absent without selection.
    pub b_star: Option<usize>,
    pub selection_losses: Vec<f64>,
    /// Step index of each monitored step, from `T` down to `t_end`.
    pub steps: Vec<usize>,
    pub losses: Vec<LossBreakdown>,
    pub phi: Vec<Vec<f64>>,
    /// `alpha` before the first step and after each monitored step.
    pub alpha: Vec<Vec<f64>>,
    pub call_count: u64,
    pub wall_ms: f64,
    pub initial_latent: Latent,
    pub final_latent: Latent,
    pub image: Image,
    pub proxy: ProxyMetrics,
}

impl RunRecord {
    pub fn final_loss(&self) -> Option<&LossBreakdown> {
        self.losses.last()
    }
}

fn check_setup(denoiser: &dyn Denoiser, emb: &EmbeddingPair, prompt: &PromptSpec, cfg: &LoopConfig) -> Result<()> {
    cfg.validate()?;
    if cfg.steps != denoiser.steps() {
        return Err(FrapError::config(format!(
            "loop has {} steps but the denoiser schedule has {}",
            cfg.steps,
            denoiser.steps()
        )));
    }
    if emb.tokens != prompt.len() || emb.dim != denoiser.embed_dim() {
        return Err(FrapError::shape(format!(
            "embedding {}x{} does not fit {} tokens of width {}",
            emb.tokens,
            emb.dim,
            prompt.len(),
            denoiser.embed_dim()
        )));
    }
    if prompt.objects().is_empty() {
        return Err(FrapError::NoObjects);
    }
    Ok(())
}

/// Candidate starting latents drawn from the loop seed.
pub fn initial_latents(denoiser: &dyn Denoiser, cfg: &LoopConfig) -> Vec<Latent> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.batch)
        .map(|_| Latent::gaussian(denoiser.latent_size(), denoiser.channels(), &mut rng))
        .collect()
}

/// One guided evaluation: conditional and unconditional branches together.
fn guided(
    denoiser: &dyn Denoiser,
    z: &Latent,
    t: usize,
    cond: &[f64],
    uncond: &[f64],
    beta: f64,
) -> Result<(Latent, AttentionMap)> {
    let (noise_c, attn) = denoiser.forward(z, t, cond)?;
    let (noise_u, _) = denoiser.forward(z, t, uncond)?;
    Ok((cfg_noise(&noise_c, &noise_u, beta)?, attn))
}

/// Denoises `batch` seeded latents with the plain embedding from `T` down to
/// `t_select`, scores each on the attention at `t_select`, and returns the
/// winner's original latent.
pub fn select_latent(
    denoiser: &dyn Denoiser,
    emb: &EmbeddingPair,
    prompt: &PromptSpec,
    objective: &ObjectiveConfig,
    cfg: &LoopConfig,
) -> Result<Selection> {
    check_setup(denoiser, emb, prompt, cfg)?;
    let candidates = initial_latents(denoiser, cfg);
    let mut state: Vec<Latent> = candidates.clone();
    let mut losses = vec![0.0; cfg.batch];
    let mut calls = 0;
    for t in (cfg.t_select..=cfg.steps).rev() {
        calls += 1;
        for (b, z) in state.iter_mut().enumerate() {
            let (noise, attn) = guided(denoiser, z, t, &emb.conditional, &emb.unconditional, cfg.beta)?;
            if t == cfg.t_select {
                losses[b] = total_loss(&attn, prompt, objective)?.total;
            } else {
                *z = denoiser.step(z, t, &noise)?;
            }
        }
    }
    let b = argmin(&losses);
    Ok(Selection {
        z_t: candidates[b].clone(),
        b_star: b + 1,
        losses,
        candidates,
        calls,
    })
}

/// First index of the smallest value.
fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

fn non_finite(step: usize, message: &str, alpha: &[f64], loss: Option<LossBreakdown>) -> FrapError {
    FrapError::NonFinite(Box::new(Diagnostic {
        step,
        message: message.to_string(),
        alpha: alpha.to_vec(),
        loss,
    }))
}

/// Full generation: selection (when enabled) followed by [`run_from`].
pub fn run(
    denoiser: &dyn Denoiser,
    emb: &EmbeddingPair,
    prompt: &PromptSpec,
    objective: &ObjectiveConfig,
    cfg: &LoopConfig,
) -> Result<RunRecord> {
    let started = Instant::now();
    check_setup(denoiser, emb, prompt, cfg)?;
    let (z_t, selection) = if cfg.selection_enabled() {
        let sel = select_latent(denoiser, emb, prompt, objective, cfg)?;
        (sel.z_t.clone(), Some(sel))
    } else {
        let first = initial_latents(
            denoiser,
            &LoopConfig {
                batch: 1,
                ..cfg.clone()
            },
        );
        (first.into_iter().next().expect("one latent"), None)
    };
    let mut record = run_from(denoiser, emb, prompt, objective, cfg, z_t)?;
    if let Some(sel) = selection {
        record.call_count += sel.calls;
        record.b_star = Some(sel.b_star);
        record.selection_losses = sel.losses;
    }
    record.wall_ms = started.elapsed().as_secs_f64() * 1e3;
    Ok(record)
}

/// Generation from a given starting latent, without selection.
pub fn run_from(
    denoiser: &dyn Denoiser,
    emb: &EmbeddingPair,
    prompt: &PromptSpec,
    objective: &ObjectiveConfig,
    cfg: &LoopConfig,
    z_t: Latent,
) -> Result<RunRecord> {
    let started = Instant::now();
    check_setup(denoiser, emb, prompt, cfg)?;
    let mut weights = TokenWeights::neutral(prompt).with_bounds(cfg.phi_lb, cfg.phi_ub)?;
    let static_phi: Vec<f64> = {
        let annotated = prompt.annotated_positions();
        (0..prompt.len())
            .map(|i| if annotated.contains(&i) { cfg.static_phi } else { 1.0 })
            .collect()
    };

    let mut state = DenoiserState::new(z_t.clone(), cfg.steps);
    let mut steps = Vec::with_capacity(cfg.weighting_steps());
    let mut losses = Vec::with_capacity(cfg.weighting_steps());
    let mut phis = Vec::with_capacity(cfg.weighting_steps());
    let mut alphas = vec![weights.alpha.clone()];
    let mut last_attention = None;

    for t in (cfg.t_end..=cfg.steps).rev() {
        state.t = t;
        let phi = match cfg.variant {
            Variant::Frap | Variant::RedoTimestep => weights_from_alpha(&weights),
            Variant::StaticWeighting => static_phi.clone(),
            Variant::Vanilla => vec![1.0; prompt.len()],
        };
        let cond = match cfg.variant {
            Variant::Vanilla => emb.conditional.clone(),
            _ => weighted_embedding(emb, &phi)?,
        };
        let (mut noise, attn) = guided(denoiser, &state.z, t, &cond, &emb.unconditional, cfg.beta)?;
        state.record_call();

        let loss = match cfg.variant {
            Variant::Frap | Variant::RedoTimestep => {
                let (loss, grad) = loss_and_grad(denoiser, emb, &state.z, t, prompt, &weights, objective)?;
                if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(non_finite(
                        t,
                        "objective or gradient is not finite",
                        &weights.alpha,
                        Some(loss),
                    ));
                }
                for (a, g) in weights.alpha.iter_mut().zip(&grad) {
                    *a -= cfg.eta * g;
                }
                if cfg.variant == Variant::RedoTimestep {
                    let redo = weighted_embedding(emb, &weights_from_alpha(&weights))?;
                    noise = guided(denoiser, &state.z, t, &redo, &emb.unconditional, cfg.beta)?.0;
                    state.record_call();
                }
                loss
            }
            Variant::StaticWeighting | Variant::Vanilla => {
                let loss = total_loss(&attn, prompt, objective)?;
                if !loss.is_finite() {
                    return Err(non_finite(t, "objective is not finite", &weights.alpha, Some(loss)));
                }
                loss
            }
        };
        state.z = denoiser.step(&state.z, t, &noise)?;
        if !state.z.is_finite() {
            return Err(non_finite(t, "latent is not finite", &weights.alpha, Some(loss)));
        }
        steps.push(t);
        losses.push(loss);
        phis.push(phi);
        alphas.push(weights.alpha.clone());
        last_attention = Some(attn);
    }

    for t in (1..cfg.t_end).rev() {
        state.t = t;
        let (noise, _) = guided(denoiser, &state.z, t, &emb.conditional, &emb.unconditional, cfg.beta)?;
        state.record_call();
        state.z = denoiser.step(&state.z, t, &noise)?;
        if !state.z.is_finite() {
            return Err(non_finite(t, "latent is not finite", &weights.alpha, None));
        }
    }

    let final_loss = losses.last().map_or(f64::NAN, |l: &LossBreakdown| l.total);
    let proxy = ProxyMetrics::from_attention(
        last_attention.as_ref().expect("at least one monitored step"),
        prompt,
        &objective.kernel,
        final_loss,
    )?;
    Ok(RunRecord {
        prompt: prompt.clone(),
        seed: cfg.seed,
        config: cfg.clone(),
        objective: objective.clone(),
        b_star: None,
        selection_losses: Vec::new(),
        steps,
        losses,
        phi: phis,
        alpha: alphas,
        call_count: state.calls(),
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
        image: denoiser.decode(&state.z),
        initial_latent: z_t,
        final_latent: state.z,
        proxy,
    })
}

/// One row of a line search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbePoint {
    pub eta: f64,
    pub loss: f64,
}

/// Objective at `alpha - eta * grad` for each `eta`, with `z` and `t` held
/// fixed. A zero-step baseline is always the first row.
#[allow(clippy::too_many_arguments)]
pub fn line_search_probe(
    denoiser: &dyn Denoiser,
    emb: &EmbeddingPair,
    z: &Latent,
    t: usize,
    prompt: &PromptSpec,
    weights: &TokenWeights,
    objective: &ObjectiveConfig,
    etas: &[f64],
) -> Result<Vec<ProbePoint>> {
    if etas.is_empty() || etas.iter().any(|e| !(*e >= 0.0)) {
        return Err(FrapError::config("probe step sizes must be non-empty and non-negative"));
    }
    let (base, grad) = loss_and_grad(denoiser, emb, z, t, prompt, weights, objective)?;
    let mut out = vec![ProbePoint {
        eta: 0.0,
        loss: base.total,
    }];
    for &eta in etas.iter().filter(|&&e| e != 0.0) {
        let alpha = weights.alpha.iter().zip(&grad).map(|(a, g)| a - eta * g).collect();
        let w = weights.clone().with_alpha(alpha)?;
        out.push(ProbePoint {
            eta,
            loss: loss_at(denoiser, emb, z, t, prompt, &w, objective)?.total,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{ToyDenoiser, ToyTextEncoder};
    use crate::prompt::parse_annotated;

    fn fixture() -> (ToyDenoiser, PromptSpec, EmbeddingPair) {
        let prompt = parse_annotated("a [m1:pink] [o1:crown] and a [m2:green] [o2:apple]", 16).unwrap();
        let emb = ToyTextEncoder::new(2, 8).encode(&prompt);
        (ToyDenoiser::new(2), prompt, emb)
    }

    #[test]
    fn default_run_counts() {
        let (den, prompt, emb) = fixture();
        let rec = run(&den, &emb, &prompt, &ObjectiveConfig::default(), &LoopConfig::default()).unwrap();
        assert_eq!(rec.call_count, 65);
        assert_eq!(rec.losses.len(), 25);
        assert_eq!(rec.alpha.len(), 26);
        assert_eq!(rec.steps.first(), Some(&50));
        assert_eq!(rec.steps.last(), Some(&26));
        assert!(rec.b_star.is_some());
    }

    #[test]
    fn redo_and_vanilla_counts() {
        let (den, prompt, emb) = fixture();
        let obj = ObjectiveConfig::default();
        let redo = LoopConfig {
            variant: Variant::RedoTimestep,
            ..LoopConfig::default()
        };
        assert_eq!(run(&den, &emb, &prompt, &obj, &redo).unwrap().call_count, 90);
        let vanilla = LoopConfig {
            variant: Variant::Vanilla,
            ..LoopConfig::default()
        };
        let rec = run(&den, &emb, &prompt, &obj, &vanilla).unwrap();
        assert_eq!(rec.call_count, 50);
        assert_eq!(rec.b_star, None);
    }

    #[test]
    fn argmin_first_wins() {
        assert_eq!(argmin(&[0.5, 0.3, 0.9, 0.4]), 1);
        assert_eq!(argmin(&[0.2, 0.2]), 0);
        assert_eq!(argmin(&[7.0]), 0);
    }

    #[test]
    fn config_validation() {
        assert!(LoopConfig {
            t_end: 0,
            ..LoopConfig::default()
        }
        .validate()
        .is_err());
        assert!(LoopConfig {
            batch: 0,
            ..LoopConfig::default()
        }
        .validate()
        .is_err());
        assert!(LoopConfig {
            eta: -1.0,
            ..LoopConfig::default()
        }
        .validate()
        .is_err());
        assert!("warp".parse::<Variant>().is_err());
        assert_eq!("redo_timestep".parse::<Variant>().unwrap(), Variant::RedoTimestep);
    }

    #[test]
    fn probe_baseline_is_exact() {
        let (den, prompt, emb) = fixture();
        let z = initial_latents(&den, &LoopConfig::default()).remove(0);
        let w = TokenWeights::neutral(&prompt);
        let obj = ObjectiveConfig::default();
        let rows = line_search_probe(&den, &emb, &z, 50, &prompt, &w, &obj, &[1e-3]).unwrap();
        assert_eq!(
            rows[0].loss,
            loss_at(&den, &emb, &z, 50, &prompt, &w, &obj).unwrap().total
        );
        assert!(rows[1].loss < rows[0].loss);
    }
}
