//! The unified attention objective and its ablation variants.
//!
//! For object tokens `S` and object-modifier pairs `(s, r)`:
//!
//! * presence of `s` is `1 - max(G(A^s))`, averaged over `S`;
//! * binding of `(s, r)` is `sum(min(Pr(G(A^s)), Pr(align(G(A^r)))) / P^2`,
//!   averaged over pairs;
//! * total is `presence - lambda * binding`.
//!
//! `G` is Gaussian smoothing and `Pr` a softmax over all pixels. The
//! divergence variants enter the total with the opposite sign so that lower
//! is always better.

use serde::{Deserialize, Serialize};

use crate::attention::AttentionMap;
use crate::error::{FrapError, Result};
use crate::grid::{self, GaussianKernel, Grid2D, PixelDistribution};
use crate::prompt::PromptSpec;

/// Probability floor used by the symmetric KL variant.
pub const KL_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresenceVariant {
    /// Mean over objects of `1 - max(G(A^s))`.
    #[default]
    MeanMax,
    /// Only the most neglected object counts.
    MaxOnly,
    /// Negated normalized total variation of the smoothed map.
    TotalVariation,
    /// Presence term removed.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BindingVariant {
    #[default]
    MinOverlap,
    /// Jensen-Shannon divergence.
    Jsd,
    /// Symmetric KL divergence with a probability floor.
    Kld,
    /// Binding term removed.
    None,
}

impl BindingVariant {
    pub fn is_divergence(self) -> bool {
        matches!(self, BindingVariant::Jsd | BindingVariant::Kld)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveConfig {
    pub lambda: f64,
    pub presence_variant: PresenceVariant,
    pub binding_variant: BindingVariant,
    pub kernel: GaussianKernel,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            presence_variant: PresenceVariant::default(),
            binding_variant: BindingVariant::default(),
            kernel: GaussianKernel::default(),
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(FrapError::config(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectTerm {
    pub object: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTerm {
    pub object: usize,
    pub modifier: usize,
    pub value: f64,
}

/// Objective value at one step with its per-token and per-pair terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub presence: f64,
    pub binding: f64,
    pub per_object_presence: Vec<ObjectTerm>,
    pub per_pair_binding: Vec<PairTerm>,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.presence.is_finite() && self.binding.is_finite()
    }
}

// ---------------------------------------------------------------------------
// Scalar helpers shared with the gradient tape.

pub(crate) fn presence_from_max(max: f64) -> f64 {
    1.0 - max
}

fn tv_norm(p: usize) -> f64 {
    (2 * p * (p - 1)) as f64
}

/// Sum of absolute forward differences along rows and columns.
pub(crate) fn total_variation(values: &[f64], p: usize) -> f64 {
    let mut tv = 0.0;
    for r in 0..p {
        for c in 0..p {
            let v = values[r * p + c];
            if r + 1 < p {
                tv += (values[(r + 1) * p + c] - v).abs();
            }
            if c + 1 < p {
                tv += (values[r * p + c + 1] - v).abs();
            }
        }
    }
    tv
}

/// Subgradient of [`total_variation`], using `sign(0) = 0`.
pub(crate) fn total_variation_grad(values: &[f64], p: usize) -> Vec<f64> {
    let mut g = vec![0.0; p * p];
    let sign = |d: f64| {
        if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    for r in 0..p {
        for c in 0..p {
            let i = r * p + c;
            if r + 1 < p {
                let s = sign(values[i + p] - values[i]);
                g[i + p] += s;
                g[i] -= s;
            }
            if c + 1 < p {
                let s = sign(values[i + 1] - values[i]);
                g[i + 1] += s;
                g[i] -= s;
            }
        }
    }
    g
}

pub(crate) fn tv_presence(tv: f64, max: f64, p: usize) -> f64 {
    -(tv / (tv_norm(p) * max))
}

/// Partial derivatives of [`tv_presence`] with respect to `tv` and `max`.
pub(crate) fn tv_presence_grad(tv: f64, max: f64, p: usize) -> (f64, f64) {
    let n = tv_norm(p);
    (-1.0 / (n * max), tv / (n * max * max))
}

/// Sum of cell-wise minima over the mass of `p`. The mass is 1 up to
/// rounding; dividing by it makes `min_overlap(p, p)` exactly 1.
pub(crate) fn min_overlap(p: &[f64], q: &[f64]) -> f64 {
    let shared: f64 = p.iter().zip(q).map(|(a, b)| a.min(*b)).sum();
    shared / p.iter().sum::<f64>()
}

pub(crate) fn overlap_loss(p: &[f64], q: &[f64], cells: usize) -> f64 {
    min_overlap(p, q) / cells as f64
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * (x / y).ln()
    }
}

pub(crate) fn jsd(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        acc += 0.5 * xlogy(a, m) + 0.5 * xlogy(b, m);
    }
    acc
}

/// Gradient of [`jsd`]: `d/dp_i = 0.5 * ln(p_i / m_i)` (and symmetrically for q).
pub(crate) fn jsd_grad(p: &[f64], q: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut gp = Vec::with_capacity(p.len());
    let mut gq = Vec::with_capacity(q.len());
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        gp.push(0.5 * (a.max(KL_EPS) / m.max(KL_EPS)).ln());
        gq.push(0.5 * (b.max(KL_EPS) / m.max(KL_EPS)).ln());
    }
    (gp, gq)
}

/// `0.5 * (KL(p||q) + KL(q||p)) = 0.5 * sum((p - q)(ln p - ln q))` with floored
/// probabilities.
pub(crate) fn sym_kl(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let (a, b) = (a.max(KL_EPS), b.max(KL_EPS));
        acc += (a - b) * (a.ln() - b.ln());
    }
    0.5 * acc
}

pub(crate) fn sym_kl_grad(p: &[f64], q: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut gp = Vec::with_capacity(p.len());
    let mut gq = Vec::with_capacity(q.len());
    for (&a0, &b0) in p.iter().zip(q) {
        let (a, b) = (a0.max(KL_EPS), b0.max(KL_EPS));
        let log_ratio = a.ln() - b.ln();
        gp.push(if a0 >= KL_EPS {
            0.5 * (log_ratio + (a - b) / a)
        } else {
            0.0
        });
        gq.push(if b0 >= KL_EPS {
            0.5 * (-log_ratio + (b - a) / b)
        } else {
            0.0
        });
    }
    (gp, gq)
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// First maximal value.
pub(crate) fn max_first(values: &[f64]) -> f64 {
    values[grid::argmax(values)]
}

pub(crate) fn combine(presence: f64, binding: f64, lambda: f64, variant: BindingVariant) -> f64 {
    if variant.is_divergence() {
        presence + lambda * binding
    } else {
        presence - lambda * binding
    }
}

// ---------------------------------------------------------------------------
// Plain evaluation.

/// Per-object presence term for a raw attention slice.
pub fn presence_loss(map_s: &Grid2D, cfg: &ObjectiveConfig) -> Result<f64> {
    let smoothed = grid::smooth(map_s, &cfg.kernel)?;
    Ok(match cfg.presence_variant {
        PresenceVariant::MeanMax | PresenceVariant::MaxOnly => presence_from_max(grid::grid_max(&smoothed)),
        PresenceVariant::TotalVariation => {
            let p = smoothed.height();
            if p < 2 {
                return Err(FrapError::shape("total variation needs P >= 2"));
            }
            tv_presence(total_variation(smoothed.values(), p), grid::grid_max(&smoothed), p)
        }
        PresenceVariant::None => 0.0,
    })
}

/// The two distributions compared by the binding term: the object's and the
/// modifier's after alignment onto the object.
pub fn binding_distributions(
    map_s: &Grid2D,
    map_r: &Grid2D,
    kernel: &GaussianKernel,
) -> Result<(PixelDistribution, PixelDistribution)> {
    if map_s.height() != map_r.height() || map_s.width() != map_r.width() {
        return Err(FrapError::shape(format!(
            "binding maps differ in shape: {}x{} vs {}x{}",
            map_s.height(),
            map_s.width(),
            map_r.height(),
            map_r.width()
        )));
    }
    let gs = grid::smooth(map_s, kernel)?;
    let gr = grid::smooth(map_r, kernel)?;
    let aligned = grid::align_to(&gr, &gs)?;
    Ok((grid::pixel_softmax(&gs), grid::pixel_softmax(&aligned)))
}

/// Per-pair binding term for raw slices of an object and one of its modifiers.
pub fn binding_loss(map_s: &Grid2D, map_r: &Grid2D, cfg: &ObjectiveConfig) -> Result<f64> {
    if cfg.binding_variant == BindingVariant::None {
        return Ok(0.0);
    }
    let (ps, pr) = binding_distributions(map_s, map_r, &cfg.kernel)?;
    Ok(divergence_or_overlap(&ps, &pr, cfg.binding_variant))
}

/// Binding term between two distributions that are already aligned.
pub fn divergence_or_overlap(ps: &PixelDistribution, pr: &PixelDistribution, variant: BindingVariant) -> f64 {
    match variant {
        BindingVariant::MinOverlap => overlap_loss(ps.values(), pr.values(), ps.values().len()),
        BindingVariant::Jsd => jsd(ps.values(), pr.values()),
        BindingVariant::Kld => sym_kl(ps.values(), pr.values()),
        BindingVariant::None => 0.0,
    }
}

/// Sum of cell-wise minima, in `[0, 1]` for two distributions.
pub fn overlap(p: &PixelDistribution, q: &PixelDistribution) -> f64 {
    min_overlap(p.values(), q.values())
}

fn check_indices(maps: &AttentionMap, prompt: &PromptSpec) -> Result<()> {
    if prompt.objects().is_empty() {
        return Err(FrapError::NoObjects);
    }
    let n = maps.tokens();
    let bad = prompt
        .objects()
        .iter()
        .chain(prompt.pairs().iter().flat_map(|(s, r)| [s, r]))
        .find(|&&i| i >= n);
    if let Some(i) = bad {
        return Err(FrapError::shape(format!(
            "prompt token {i} outside attention map with {n} tokens"
        )));
    }
    Ok(())
}

/// Aggregates the per-object and per-pair terms into the step objective.
pub fn total_loss(maps: &AttentionMap, prompt: &PromptSpec, cfg: &ObjectiveConfig) -> Result<LossBreakdown> {
    cfg.validate()?;
    check_indices(maps, prompt)?;

    let mut per_object_presence = Vec::new();
    if cfg.presence_variant != PresenceVariant::None {
        for &s in prompt.objects() {
            per_object_presence.push(ObjectTerm {
                object: s,
                value: presence_loss(&maps.token_map(s)?, cfg)?,
            });
        }
    }
    let mut per_pair_binding = Vec::new();
    if cfg.binding_variant != BindingVariant::None {
        for &(s, r) in prompt.pairs() {
            per_pair_binding.push(PairTerm {
                object: s,
                modifier: r,
                value: binding_loss(&maps.token_map(s)?, &maps.token_map(r)?, cfg)?,
            });
        }
    }

    let presence_terms: Vec<f64> = per_object_presence.iter().map(|t| t.value).collect();
    let presence = match cfg.presence_variant {
        PresenceVariant::MaxOnly => max_first(&presence_terms),
        _ => mean(&presence_terms),
    };
    let binding_terms: Vec<f64> = per_pair_binding.iter().map(|t| t.value).collect();
    let binding = mean(&binding_terms);
    Ok(LossBreakdown {
        total: combine(presence, binding, cfg.lambda, cfg.binding_variant),
        presence,
        binding,
        per_object_presence,
        per_pair_binding,
    })
}
