use serde::{Deserialize, Serialize};

use crate::error::{FrapError, Result};
use crate::grid::Grid2D;

/// A `P x P x N` cross-attention tensor. Each spatial cell holds a
/// distribution over the `N` prompt tokens; values are stored cell-major
/// with the token index fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMap {
    p: usize,
    tokens: usize,
    values: Vec<f64>,
}

impl AttentionMap {
    pub fn new(p: usize, tokens: usize, values: Vec<f64>) -> Result<Self> {
        if p == 0 || tokens == 0 {
            return Err(FrapError::shape("attention map dimensions must be positive"));
        }
        if values.len() != p * p * tokens {
            return Err(FrapError::shape(format!(
                "attention map {p}x{p}x{tokens} needs {} values, got {}",
                p * p * tokens,
                values.len()
            )));
        }
        Ok(Self { p, tokens, values })
    }

    /// Builds a map from one `P x P` slice per token.
    pub fn from_token_maps(maps: &[Grid2D]) -> Result<Self> {
        let first = maps.first().ok_or_else(|| FrapError::shape("no token maps given"))?;
        let p = first.height();
        if maps.iter().any(|m| m.height() != p || m.width() != p) {
            return Err(FrapError::shape("token maps must share one square shape"));
        }
        let tokens = maps.len();
        let mut values = vec![0.0; p * p * tokens];
        for (n, m) in maps.iter().enumerate() {
            for (cell, v) in m.values().iter().enumerate() {
                values[cell * tokens + n] = *v;
            }
        }
        Ok(Self { p, tokens, values })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The `(P, P, N)` shape.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.p, self.p, self.tokens)
    }

    /// Token distribution at one spatial cell.
    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.p + col) * self.tokens;
        &self.values[start..start + self.tokens]
    }

    /// The `P x P` slice for token `n`.
    pub fn token_map(&self, n: usize) -> Result<Grid2D> {
        if n >= self.tokens {
            return Err(FrapError::shape(format!(
                "token {n} out of range for {} tokens",
                self.tokens
            )));
        }
        Grid2D::square(self.p, column(&self.values, n, self.tokens))
    }
}

pub(crate) fn column(values: &[f64], col: usize, cols: usize) -> Vec<f64> {
    values.iter().skip(col).step_by(cols).copied().collect()
}
