//! Prompt structure, token weights and weighted text embeddings.
//!
//! Prompts are tokenized on whitespace with `<sot>` prepended, `<eot>`
//! appended and `<pad>` filling up to a fixed length. Those three kinds of
//! token are frozen: their weight is always one.

use serde::{Deserialize, Serialize};

use crate::error::{FrapError, Result};

pub const SOT: &str = "<sot>";
pub const EOT: &str = "<eot>";
pub const PAD: &str = "<pad>";

/// Token count used when none is given.
pub const DEFAULT_TOKENS: usize = 16;

fn is_special(token: &str) -> bool {
    token == SOT || token == EOT || token == PAD
}

/// A tokenized prompt annotated with object tokens and object-modifier pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PromptSpecRaw", into = "PromptSpecRaw")]
pub struct PromptSpec {
    text: String,
    tokens: Vec<String>,
    objects: Vec<usize>,
    pairs: Vec<(usize, usize)>,
    frozen: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PromptSpecRaw {
    text: String,
    tokens: Vec<String>,
    objects: Vec<usize>,
    pairs: Vec<(usize, usize)>,
    frozen: Vec<usize>,
}

impl TryFrom<PromptSpecRaw> for PromptSpec {
    type Error = FrapError;

    fn try_from(raw: PromptSpecRaw) -> Result<Self> {
        PromptSpec::from_parts(raw.text, raw.tokens, raw.objects, raw.pairs, raw.frozen)
    }
}

impl From<PromptSpec> for PromptSpecRaw {
    fn from(p: PromptSpec) -> Self {
        PromptSpecRaw {
            text: p.text,
            tokens: p.tokens,
            objects: p.objects,
            pairs: p.pairs,
            frozen: p.frozen,
        }
    }
}

impl PromptSpec {
    /// Builds a prompt from explicit parts, validating every structural
    /// invariant. Object and pair lists are stored sorted and deduplicated.
    pub fn from_parts(
        text: String,
        tokens: Vec<String>,
        mut objects: Vec<usize>,
        mut pairs: Vec<(usize, usize)>,
        mut frozen: Vec<usize>,
    ) -> Result<Self> {
        let n = tokens.len();
        objects.sort_unstable();
        objects.dedup();
        pairs.sort_unstable();
        pairs.dedup();
        frozen.sort_unstable();
        frozen.dedup();
        if objects.is_empty() {
            return Err(FrapError::prompt("prompt has no object tokens"));
        }
        if let Some(&i) = objects
            .iter()
            .chain(frozen.iter())
            .chain(pairs.iter().flat_map(|(s, r)| [s, r]))
            .find(|&&i| i >= n)
        {
            return Err(FrapError::prompt(format!(
                "token index {i} out of range for {n} tokens"
            )));
        }
        if let Some(&s) = objects.iter().find(|s| frozen.binary_search(s).is_ok()) {
            return Err(FrapError::prompt(format!(
                "object token {s} (`{}`) is frozen",
                tokens[s]
            )));
        }
        for &(s, r) in &pairs {
            if objects.binary_search(&s).is_err() {
                return Err(FrapError::prompt(format!(
                    "pair ({s}, {r}) references non-object token {s}"
                )));
            }
            if frozen.binary_search(&r).is_ok() {
                return Err(FrapError::prompt(format!("modifier token {r} is frozen")));
            }
            if s == r {
                return Err(FrapError::prompt(format!("token {s} paired with itself")));
            }
        }
        Ok(Self {
            text,
            tokens,
            objects,
            pairs,
            frozen,
        })
    }

    /// Tokenizes `text` and attaches annotations given as word positions
    /// (0-based, before `<sot>` is prepended).
    pub fn from_words(
        text: &str,
        max_tokens: usize,
        object_words: &[usize],
        pair_words: &[(usize, usize)],
    ) -> Result<Self> {
        let tokens = tokenize(text, max_tokens)?;
        let frozen = frozen_positions(&tokens);
        Self::from_parts(
            text.split_whitespace().collect::<Vec<_>>().join(" "),
            tokens,
            object_words.iter().map(|w| w + 1).collect(),
            pair_words.iter().map(|(s, r)| (s + 1, r + 1)).collect(),
            frozen,
        )
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Object token positions, ascending.
    pub fn objects(&self) -> &[usize] {
        &self.objects
    }

    /// `(object, modifier)` position pairs, ascending.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn frozen(&self) -> &[usize] {
        &self.frozen
    }

    pub fn frozen_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.tokens.len()];
        for &i in &self.frozen {
            mask[i] = true;
        }
        mask
    }

    /// Positions that are an object or a modifier of some object.
    pub fn annotated_positions(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .objects
            .iter()
            .copied()
            .chain(self.pairs.iter().map(|&(_, r)| r))
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Whitespace tokenization padded to `max_tokens`.
pub fn tokenize(text: &str, max_tokens: usize) -> Result<Vec<String>> {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() + 2 > max_tokens {
        return Err(FrapError::prompt(format!(
            "{} words do not fit in {max_tokens} tokens",
            words.len()
        )));
    }
    if let Some(w) = words.iter().find(|w| is_special(w)) {
        return Err(FrapError::prompt(format!("reserved token `{w}` in prompt text")));
    }
    let mut tokens = Vec::with_capacity(max_tokens);
    tokens.push(SOT.to_string());
    tokens.extend(words.iter().map(|w| w.to_string()));
    tokens.push(EOT.to_string());
    tokens.resize(max_tokens, PAD.to_string());
    Ok(tokens)
}

fn frozen_positions(tokens: &[String]) -> Vec<usize> {
    tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| is_special(t))
        .map(|(i, _)| i)
        .collect()
}

/// Parses explicit markup such as `a [m1:pink] [o1:crown] and a [o2:apple]`.
///
/// `[oK:...]` marks an object with link id `K`; `[mK:...]` marks a modifier
/// of object `K`. A multi-word span resolves to its last word.
pub fn parse_annotated(markup: &str, max_tokens: usize) -> Result<PromptSpec> {
    enum Kind {
        Object,
        Modifier,
    }
    let mut words: Vec<String> = Vec::new();
    let mut marks: Vec<(Kind, String, usize)> = Vec::new();
    let mut rest = markup;
    while !rest.is_empty() {
        match rest.find('[') {
            None => {
                words.extend(rest.split_whitespace().map(str::to_string));
                break;
            }
            Some(open) => {
                words.extend(rest[..open].split_whitespace().map(str::to_string));
                let close = rest[open..]
                    .find(']')
                    .map(|c| open + c)
                    .ok_or_else(|| FrapError::prompt("unterminated `[` in markup"))?;
                let body = &rest[open + 1..close];
                let (tag, span) = body
                    .split_once(':')
                    .ok_or_else(|| FrapError::prompt(format!("missing `:` in `[{body}]`")))?;
                let kind = match tag.chars().next() {
                    Some('o') => Kind::Object,
                    Some('m') => Kind::Modifier,
                    _ => return Err(FrapError::prompt(format!("unknown tag `{tag}`"))),
                };
                let id = tag[1..].to_string();
                if id.is_empty() {
                    return Err(FrapError::prompt(format!("tag `{tag}` has no link id")));
                }
                let span_words: Vec<&str> = span.split_whitespace().collect();
                if span_words.is_empty() {
                    return Err(FrapError::prompt(format!("empty span in `[{body}]`")));
                }
                if let Some(w) = span_words.iter().find(|w| is_special(w)) {
                    return Err(FrapError::prompt(format!("cannot annotate frozen token `{w}`")));
                }
                words.extend(span_words.iter().map(|w| w.to_string()));
                marks.push((kind, id, words.len() - 1));
                rest = &rest[close + 1..];
            }
        }
    }

    let mut objects: Vec<(String, usize)> = Vec::new();
    for (kind, id, w) in &marks {
        if let Kind::Object = kind {
            if objects.iter().any(|(o, _)| o == id) {
                return Err(FrapError::prompt(format!("duplicate object id `o{id}`")));
            }
            objects.push((id.clone(), *w));
        }
    }
    if objects.is_empty() {
        return Err(FrapError::prompt("markup marks no objects"));
    }
    let mut pairs = Vec::new();
    for (kind, id, w) in &marks {
        if let Kind::Modifier = kind {
            let (_, s) = objects
                .iter()
                .find(|(o, _)| o == id)
                .ok_or_else(|| FrapError::prompt(format!("modifier `m{id}` links to no object")))?;
            pairs.push((*s, *w));
        }
    }
    let text = words.join(" ");
    let object_words: Vec<usize> = objects.iter().map(|(_, w)| *w).collect();
    PromptSpec::from_words(&text, max_tokens, &object_words, &pairs)
}

/// Learnable per-token parameters and the bounds of the derived weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenWeights {
    pub alpha: Vec<f64>,
    pub frozen: Vec<bool>,
    pub phi_lb: f64,
    pub phi_ub: f64,
}

pub const DEFAULT_PHI_LB: f64 = 0.6;
pub const DEFAULT_PHI_UB: f64 = 1.4;

impl TokenWeights {
    /// `alpha = 0` everywhere, default bounds.
    pub fn neutral(prompt: &PromptSpec) -> Self {
        Self {
            alpha: vec![0.0; prompt.len()],
            frozen: prompt.frozen_mask(),
            phi_lb: DEFAULT_PHI_LB,
            phi_ub: DEFAULT_PHI_UB,
        }
    }

    pub fn with_bounds(mut self, lb: f64, ub: f64) -> Result<Self> {
        if !(lb < ub) || !lb.is_finite() || !ub.is_finite() {
            return Err(FrapError::config(format!("weight bounds [{lb}, {ub}] invalid")));
        }
        self.phi_lb = lb;
        self.phi_ub = ub;
        Ok(self)
    }

    pub fn with_alpha(mut self, alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() != self.frozen.len() {
            return Err(FrapError::shape(format!(
                "{} alpha values for {} tokens",
                alpha.len(),
                self.frozen.len()
            )));
        }
        self.alpha = alpha;
        Ok(self)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn bounded_weight(alpha: f64, lb: f64, ub: f64) -> f64 {
    lb + (ub - lb) * sigmoid(alpha)
}

/// d(bounded_weight)/d(alpha).
pub(crate) fn bounded_weight_slope(alpha: f64, lb: f64, ub: f64) -> f64 {
    let s = sigmoid(alpha);
    (ub - lb) * s * (1.0 - s)
}

/// `phi_i = lb + (ub - lb) * sigmoid(alpha_i)`, or exactly 1 on frozen tokens.
pub fn weights_from_alpha(w: &TokenWeights) -> Vec<f64> {
    w.alpha
        .iter()
        .zip(&w.frozen)
        .map(|(&a, &frozen)| {
            if frozen {
                1.0
            } else {
                bounded_weight(a, w.phi_lb, w.phi_ub)
            }
        })
        .collect()
}

/// Conditional and unconditional embeddings, each `N x H` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingPair {
    pub tokens: usize,
    pub dim: usize,
    pub conditional: Vec<f64>,
    pub unconditional: Vec<f64>,
}

impl EmbeddingPair {
    pub fn new(tokens: usize, dim: usize, conditional: Vec<f64>, unconditional: Vec<f64>) -> Result<Self> {
        if conditional.len() != tokens * dim || unconditional.len() != tokens * dim {
            return Err(FrapError::shape(format!(
                "embeddings must be {tokens}x{dim}, got {} and {}",
                conditional.len(),
                unconditional.len()
            )));
        }
        if conditional.iter().chain(&unconditional).any(|v| !v.is_finite()) {
            return Err(FrapError::shape("embeddings must be finite"));
        }
        Ok(Self {
            tokens,
            dim,
            conditional,
            unconditional,
        })
    }
}

#[inline]
pub(crate) fn interpolate(phi: f64, cond: f64, uncond: f64) -> f64 {
    phi * cond + (1.0 - phi) * uncond
}

/// Row `i` becomes `phi_i * c^y_i + (1 - phi_i) * c^0_i`.
pub fn weighted_embedding(e: &EmbeddingPair, phi: &[f64]) -> Result<Vec<f64>> {
    if phi.len() != e.tokens {
        return Err(FrapError::shape(format!(
            "{} weights for {} tokens",
            phi.len(),
            e.tokens
        )));
    }
    let mut out = Vec::with_capacity(e.tokens * e.dim);
    for (i, &w) in phi.iter().enumerate() {
        let row = i * e.dim..(i + 1) * e.dim;
        out.extend(
            e.conditional[row.clone()]
                .iter()
                .zip(&e.unconditional[row])
                .map(|(&c, &u)| interpolate(w, c, u)),
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn markup_example() {
        let p = parse_annotated("a [m1:pink] [o1:crown] and a [m2:green] [o2:apple]", 16).unwrap();
        assert_eq!(p.text(), "a pink crown and a green apple");
        assert_eq!(p.tokens()[3], "crown");
        assert_eq!(p.tokens()[7], "apple");
        assert_eq!(p.objects(), &[3, 7]);
        assert_eq!(p.pairs(), &[(3, 2), (7, 6)]);
        assert_eq!(p.frozen(), &[0, 8, 9, 10, 11, 12, 13, 14, 15]);
    }

    #[test]
    fn markup_errors() {
        assert!(parse_annotated("a dog and a cat", 16).is_err());
        assert!(parse_annotated("a [m3:red] [o1:ball]", 16).is_err());
        assert!(parse_annotated("a [o1:<pad>]", 16).is_err());
        assert!(parse_annotated("a [o1:dog", 16).is_err());
        let p = parse_annotated("a [o1:dog] and a [o2:cat]", 16).unwrap();
        assert!(p.pairs().is_empty());
    }

    #[test]
    fn multi_word_span_uses_head() {
        let p = parse_annotated("a [m1:bright red] [o1:sports car]", 16).unwrap();
        assert_eq!(p.tokens()[5], "car");
        assert_eq!(p.objects(), &[5]);
        assert_eq!(p.pairs(), &[(5, 3)]);
    }

    #[test]
    fn overlong_prompt_rejected() {
        let text = vec!["w"; 15].join(" ");
        assert!(tokenize(&text, 16).is_err());
        assert_eq!(tokenize(&vec!["w"; 14].join(" "), 16).unwrap().len(), 16);
    }

    #[test]
    fn json_schema_fields() {
        let p = parse_annotated("a [o1:dog]", 8).unwrap();
        let v: serde_json::Value = serde_json::to_value(&p).unwrap();
        for key in ["text", "tokens", "objects", "pairs", "frozen"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        let back: PromptSpec = serde_json::from_value(v).unwrap();
        assert_eq!(back, p);
        let bad = serde_json::json!({"text": "x", "tokens": ["<sot>", "x"], "objects": [0],
            "pairs": [], "frozen": [0]});
        assert!(serde_json::from_value::<PromptSpec>(bad).is_err());
    }

    #[test]
    fn weight_examples() {
        let p = parse_annotated("a [o1:dog]", 8).unwrap();
        let w = TokenWeights::neutral(&p);
        assert!(weights_from_alpha(&w).iter().all(|&f| f == 1.0));

        let mut alpha = vec![0.0; 8];
        alpha[2] = 3f64.ln();
        alpha[1] = 60.0;
        alpha[0] = 5.0; // frozen
        let phi = weights_from_alpha(&w.clone().with_alpha(alpha).unwrap());
        assert!((phi[2] - 1.2).abs() < 1e-15);
        assert!((phi[1] - 1.4).abs() < 1e-15);
        assert_eq!(phi[0], 1.0);
        assert!((bounded_weight(-60.0, 0.6, 1.4) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn weighted_embedding_endpoints() {
        let e = EmbeddingPair::new(2, 2, vec![1.0, -2.0, 3.0, 0.5], vec![0.5, 0.5, -1.0, 2.0]).unwrap();
        assert_eq!(weighted_embedding(&e, &[1.0, 1.0]).unwrap(), e.conditional);
        assert_eq!(weighted_embedding(&e, &[0.0, 0.0]).unwrap(), e.unconditional);
        assert_eq!(
            weighted_embedding(&e, &[0.5, 0.5]).unwrap(),
            vec![0.75, -0.75, 1.0, 1.25]
        );
        assert!(weighted_embedding(&e, &[1.0]).is_err());
    }
}
