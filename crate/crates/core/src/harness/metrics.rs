use serde::{Deserialize, Serialize};

use crate::attention::AttentionMap;
use crate::error::Result;
use crate::grid::{self, GaussianKernel};
use crate::objective::{self, ObjectTerm, PairTerm};
use crate::prompt::PromptSpec;

/// Desk-scale stand-ins for image-text evaluation, read off the attention
/// map of the last monitored step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyMetrics {
    /// Max of the smoothed map, per object.
    pub presence_score: Vec<ObjectTerm>,
    /// Sum of cell-wise minima of the object and aligned modifier
    /// distributions, per pair (not divided by `P^2`).
    pub binding_overlap: Vec<PairTerm>,
    pub final_total_loss: f64,
}

impl ProxyMetrics {
    pub fn from_attention(
        attn: &AttentionMap,
        prompt: &PromptSpec,
        kernel: &GaussianKernel,
        final_total_loss: f64,
    ) -> Result<Self> {
        let mut presence_score = Vec::new();
        for &s in prompt.objects() {
            let smoothed = grid::smooth(&attn.token_map(s)?, kernel)?;
            presence_score.push(ObjectTerm {
                object: s,
                value: grid::grid_max(&smoothed),
            });
        }
        let mut binding_overlap = Vec::new();
        for &(s, r) in prompt.pairs() {
            let (ps, pr) = objective::binding_distributions(&attn.token_map(s)?, &attn.token_map(r)?, kernel)?;
            binding_overlap.push(PairTerm {
                object: s,
                modifier: r,
                value: objective::overlap(&ps, &pr),
            });
        }
        Ok(Self {
            presence_score,
            binding_overlap,
            final_total_loss,
        })
    }

    pub fn mean_presence(&self) -> Option<f64> {
        mean(self.presence_score.iter().map(|t| t.value))
    }

    /// Score of the most neglected object.
    pub fn min_presence(&self) -> Option<f64> {
        self.presence_score.iter().map(|t| t.value).reduce(f64::min)
    }

    pub fn mean_binding(&self) -> Option<f64> {
        mean(self.binding_overlap.iter().map(|t| t.value))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid2D;
    use crate::prompt::parse_annotated;

    #[test]
    fn uniform_attention_scores() {
        let prompt = parse_annotated("[m1:red] [o1:cup]", 4).unwrap();
        let maps: Vec<Grid2D> = (0..4).map(|_| Grid2D::uniform(4, 0.25)).collect();
        let attn = AttentionMap::from_token_maps(&maps).unwrap();
        let m = ProxyMetrics::from_attention(&attn, &prompt, &GaussianKernel::default(), 0.75).unwrap();
        assert_eq!(m.mean_presence(), Some(0.25));
        assert_eq!(m.min_presence(), Some(0.25));
        assert!((m.mean_binding().unwrap() - 1.0).abs() < 1e-12);
    }
}
