//! Tensor-level reverse-mode differentiation.
//!
//! A [`Tape`] records dense operations as they are evaluated. Every node
//! keeps its value; [`Tape::gradient`] walks the record backwards
//! accumulating adjoints, and [`Tape::replay`] re-evaluates the whole record
//! from new input values. Forward evaluation of every op goes through the
//! same kernels as the plain (non-taped) code paths, so a taped objective
//! reproduces the plain objective bit for bit.
//!
//! Non-differentiable points use deterministic subgradients: `max` routes
//! to the first row-major maximum, element-wise `min` routes to the first
//! argument on ties, alignment shifts are treated as constants.

use crate::attention;
use crate::error::{FrapError, Result};
use crate::grid::{self, GaussianKernel};
use crate::linalg;
use crate::objective::{self, BindingVariant};
use crate::prompt;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Sigmoid(Var),
    BoundedWeight {
        alpha: Var,
        lb: f64,
        ub: f64,
        frozen: Vec<bool>,
    },
    Interpolate {
        phi: Var,
        cond: Vec<f64>,
        uncond: Vec<f64>,
        dim: usize,
    },
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    MatMulNt {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    RowSoftmax {
        x: Var,
        cols: usize,
    },
    Column {
        x: Var,
        col: usize,
        cols: usize,
    },
    Smooth {
        x: Var,
        p: usize,
        kernel: GaussianKernel,
    },
    PixelSoftmax(Var),
    Max(Var),
    AlignTo {
        source: Var,
        target: Var,
        p: usize,
    },
    PresenceFromMax(Var),
    TotalVariation {
        x: Var,
        p: usize,
    },
    TvPresence {
        tv: Var,
        max: Var,
        p: usize,
    },
    Overlap {
        p: Var,
        q: Var,
        cells: usize,
    },
    Jsd(Var, Var),
    SymKl(Var, Var),
    MeanOf(Vec<Var>),
    MaxOf(Vec<Var>),
    Combine {
        presence: Var,
        binding: Var,
        lambda: f64,
        variant: BindingVariant,
    },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Vec<f64>,
    needs_grad: bool,
}

/// A record of dense operations and their values.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints of the leaves (and the output) with respect to one scalar output.
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<Option<Vec<f64>>>,
    lens: Vec<usize>,
}

impl Gradients {
    /// Adjoint of `v`; zeros when nothing flowed into it.
    pub fn wrt(&self, v: Var) -> Vec<f64> {
        self.adjoints[v.0].clone().unwrap_or_else(|| vec![0.0; self.lens[v.0]])
    }
}

fn axpy(dst: &mut [f64], scale: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable leaf.
    pub fn input(&mut self, values: Vec<f64>) -> Var {
        self.nodes.push(Node {
            op: Op::Input,
            value: values,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that is never differentiated.
    pub fn constant(&mut self, values: Vec<f64>) -> Var {
        self.nodes.push(Node {
            op: Op::Constant,
            value: values,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn parents(op: &Op) -> Vec<Var> {
        match op {
            Op::Input | Op::Constant => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Jsd(a, b) | Op::SymKl(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(x, _)
            | Op::Sum(x)
            | Op::Sigmoid(x)
            | Op::PixelSoftmax(x)
            | Op::Max(x)
            | Op::PresenceFromMax(x) => vec![*x],
            Op::BoundedWeight { alpha, .. } => vec![*alpha],
            Op::Interpolate { phi, .. } => vec![*phi],
            Op::MatMul { a, b, .. } | Op::MatMulNt { a, b, .. } => vec![*a, *b],
            Op::RowSoftmax { x, .. } | Op::Column { x, .. } | Op::Smooth { x, .. } | Op::TotalVariation { x, .. } => {
                vec![*x]
            }
            Op::AlignTo { source, target, .. } => vec![*source, *target],
            Op::TvPresence { tv, max, .. } => vec![*tv, *max],
            Op::Overlap { p, q, .. } => vec![*p, *q],
            Op::MeanOf(vs) | Op::MaxOf(vs) => vs.clone(),
            Op::Combine { presence, binding, .. } => vec![*presence, *binding],
        }
    }

    fn eval(&self, op: &Op) -> Vec<f64> {
        let v = |x: &Var| self.nodes[x.0].value.as_slice();
        match op {
            Op::Input | Op::Constant => unreachable!("leaves are not evaluated"),
            Op::Add(a, b) => v(a).iter().zip(v(b)).map(|(x, y)| x + y).collect(),
            Op::Sub(a, b) => v(a).iter().zip(v(b)).map(|(x, y)| x - y).collect(),
            Op::Mul(a, b) => v(a).iter().zip(v(b)).map(|(x, y)| x * y).collect(),
            Op::Scale(x, f) => linalg::scale(v(x), *f),
            Op::Sum(x) => vec![v(x).iter().sum()],
            Op::Sigmoid(x) => v(x).iter().map(|&a| prompt::sigmoid(a)).collect(),
            Op::BoundedWeight { alpha, lb, ub, frozen } => v(alpha)
                .iter()
                .zip(frozen)
                .map(|(&a, &f)| if f { 1.0 } else { prompt::bounded_weight(a, *lb, *ub) })
                .collect(),
            Op::Interpolate { phi, cond, uncond, dim } => {
                let phi = v(phi);
                let mut out = Vec::with_capacity(cond.len());
                for (i, &w) in phi.iter().enumerate() {
                    let row = i * dim..(i + 1) * dim;
                    out.extend(
                        cond[row.clone()]
                            .iter()
                            .zip(&uncond[row])
                            .map(|(&c, &u)| prompt::interpolate(w, c, u)),
                    );
                }
                out
            }
            Op::MatMul { a, b, m, k, n } => linalg::matmul(v(a), v(b), *m, *k, *n),
            Op::MatMulNt { a, b, m, k, n } => linalg::matmul_nt(v(a), v(b), *m, *k, *n),
            Op::RowSoftmax { x, cols } => linalg::row_softmax(v(x), *cols),
            Op::Column { x, col, cols } => attention::column(v(x), *col, *cols),
            Op::Smooth { x, p, kernel } => grid::smooth_slice(v(x), *p, kernel),
            Op::PixelSoftmax(x) => grid::softmax(v(x)),
            Op::Max(x) => vec![objective::max_first(v(x))],
            Op::AlignTo { source, target, p } => {
                let (dr, dc) = grid::alignment_shift(v(source), v(target), *p);
                grid::shift(v(source), *p, dr, dc)
            }
            Op::PresenceFromMax(x) => vec![objective::presence_from_max(v(x)[0])],
            Op::TotalVariation { x, p } => vec![objective::total_variation(v(x), *p)],
            Op::TvPresence { tv, max, p } => {
                vec![objective::tv_presence(v(tv)[0], v(max)[0], *p)]
            }
            Op::Overlap { p, q, cells } => vec![objective::overlap_loss(v(p), v(q), *cells)],
            Op::Jsd(p, q) => vec![objective::jsd(v(p), v(q))],
            Op::SymKl(p, q) => vec![objective::sym_kl(v(p), v(q))],
            Op::MeanOf(vs) => {
                let xs: Vec<f64> = vs.iter().map(|x| v(x)[0]).collect();
                vec![objective::mean(&xs)]
            }
            Op::MaxOf(vs) => {
                let xs: Vec<f64> = vs.iter().map(|x| v(x)[0]).collect();
                vec![objective::max_first(&xs)]
            }
            Op::Combine {
                presence,
                binding,
                lambda,
                variant,
            } => vec![objective::combine(v(presence)[0], v(binding)[0], *lambda, *variant)],
        }
    }

    fn push(&mut self, op: Op) -> Var {
        let value = self.eval(&op);
        let needs_grad = Self::parents(&op).iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node { op, value, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn len_of(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    fn same_len(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.len_of(a) != self.len_of(b) {
            return Err(FrapError::shape(format!(
                "{what}: operand lengths {} and {}",
                self.len_of(a),
                self.len_of(b)
            )));
        }
        Ok(())
    }

    fn square_side(&self, x: Var, what: &str) -> Result<usize> {
        let len = self.len_of(x);
        let p = (len as f64).sqrt().round() as usize;
        if p * p != len || p == 0 {
            return Err(FrapError::shape(format!("{what}: {len} values is not a square grid")));
        }
        Ok(p)
    }

    fn require_scalar(&self, x: Var, what: &str) -> Result<()> {
        if self.len_of(x) != 1 {
            return Err(FrapError::shape(format!("{what}: operand is not a scalar")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "add")?;
        Ok(self.push(Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "sub")?;
        Ok(self.push(Op::Sub(a, b)))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "mul")?;
        Ok(self.push(Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.push(Op::Scale(x, factor))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        self.push(Op::Sum(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.push(Op::Sigmoid(x))
    }

    /// `lb + (ub - lb) * sigmoid(alpha)` with frozen entries pinned to 1.
    pub fn bounded_weight(&mut self, alpha: Var, lb: f64, ub: f64, frozen: Vec<bool>) -> Result<Var> {
        if frozen.len() != self.len_of(alpha) {
            return Err(FrapError::shape("bounded_weight: mask length mismatch"));
        }
        Ok(self.push(Op::BoundedWeight { alpha, lb, ub, frozen }))
    }

    /// Row-wise `phi_i * cond_i + (1 - phi_i) * uncond_i`.
    pub fn interpolate(&mut self, phi: Var, cond: Vec<f64>, uncond: Vec<f64>, dim: usize) -> Result<Var> {
        if cond.len() != uncond.len() || cond.len() != self.len_of(phi) * dim {
            return Err(FrapError::shape("interpolate: embedding shape mismatch"));
        }
        Ok(self.push(Op::Interpolate { phi, cond, uncond, dim }))
    }

    /// `a (m x k) * b (k x n)`.
    pub fn matmul(&mut self, a: Var, b: Var, m: usize, k: usize, n: usize) -> Result<Var> {
        if self.len_of(a) != m * k || self.len_of(b) != k * n {
            return Err(FrapError::shape("matmul: operand shapes"));
        }
        Ok(self.push(Op::MatMul { a, b, m, k, n }))
    }

    /// `a (m x k) * b^T` with `b` stored `n x k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var, m: usize, k: usize, n: usize) -> Result<Var> {
        if self.len_of(a) != m * k || self.len_of(b) != n * k {
            return Err(FrapError::shape("matmul_nt: operand shapes"));
        }
        Ok(self.push(Op::MatMulNt { a, b, m, k, n }))
    }

    pub fn row_softmax(&mut self, x: Var, cols: usize) -> Result<Var> {
        if cols == 0 || !self.len_of(x).is_multiple_of(cols) {
            return Err(FrapError::shape("row_softmax: width does not divide length"));
        }
        Ok(self.push(Op::RowSoftmax { x, cols }))
    }

    /// Column `col` of a row-major matrix with `cols` columns.
    pub fn column(&mut self, x: Var, col: usize, cols: usize) -> Result<Var> {
        if col >= cols || !self.len_of(x).is_multiple_of(cols) {
            return Err(FrapError::shape("column: index out of range"));
        }
        Ok(self.push(Op::Column { x, col, cols }))
    }

    pub fn smooth(&mut self, x: Var, kernel: &GaussianKernel) -> Result<Var> {
        let p = self.square_side(x, "smooth")?;
        Ok(self.push(Op::Smooth {
            x,
            p,
            kernel: kernel.clone(),
        }))
    }

    pub fn pixel_softmax(&mut self, x: Var) -> Var {
        self.push(Op::PixelSoftmax(x))
    }

    pub fn max(&mut self, x: Var) -> Var {
        self.push(Op::Max(x))
    }

    pub fn align_to(&mut self, source: Var, target: Var) -> Result<Var> {
        self.same_len(source, target, "align_to")?;
        let p = self.square_side(source, "align_to")?;
        Ok(self.push(Op::AlignTo { source, target, p }))
    }

    pub fn presence_from_max(&mut self, max: Var) -> Result<Var> {
        self.require_scalar(max, "presence_from_max")?;
        Ok(self.push(Op::PresenceFromMax(max)))
    }

    pub fn total_variation(&mut self, x: Var) -> Result<Var> {
        let p = self.square_side(x, "total_variation")?;
        Ok(self.push(Op::TotalVariation { x, p }))
    }

    pub fn tv_presence(&mut self, tv: Var, max: Var, p: usize) -> Result<Var> {
        self.require_scalar(tv, "tv_presence")?;
        self.require_scalar(max, "tv_presence")?;
        Ok(self.push(Op::TvPresence { tv, max, p }))
    }

    /// `sum(min(p, q)) / cells`.
    pub fn overlap(&mut self, p: Var, q: Var) -> Result<Var> {
        self.same_len(p, q, "overlap")?;
        let cells = self.len_of(p);
        Ok(self.push(Op::Overlap { p, q, cells }))
    }

    pub fn jsd(&mut self, p: Var, q: Var) -> Result<Var> {
        self.same_len(p, q, "jsd")?;
        Ok(self.push(Op::Jsd(p, q)))
    }

    pub fn sym_kl(&mut self, p: Var, q: Var) -> Result<Var> {
        self.same_len(p, q, "sym_kl")?;
        Ok(self.push(Op::SymKl(p, q)))
    }

    /// Mean of scalar nodes; zero when empty.
    pub fn mean_of(&mut self, xs: Vec<Var>) -> Result<Var> {
        for &x in &xs {
            self.require_scalar(x, "mean_of")?;
        }
        Ok(self.push(Op::MeanOf(xs)))
    }

    /// Largest of non-empty scalar nodes, first on ties.
    pub fn max_of(&mut self, xs: Vec<Var>) -> Result<Var> {
        if xs.is_empty() {
            return Err(FrapError::shape("max_of: no operands"));
        }
        for &x in &xs {
            self.require_scalar(x, "max_of")?;
        }
        Ok(self.push(Op::MaxOf(xs)))
    }

    pub fn combine(&mut self, presence: Var, binding: Var, lambda: f64, variant: BindingVariant) -> Result<Var> {
        self.require_scalar(presence, "combine")?;
        self.require_scalar(binding, "combine")?;
        Ok(self.push(Op::Combine {
            presence,
            binding,
            lambda,
            variant,
        }))
    }

    /// Re-evaluates every recorded op after replacing the given leaf values.
    pub fn replay(&mut self, inputs: &[(Var, Vec<f64>)]) -> Result<()> {
        for (v, values) in inputs {
            let node = &mut self.nodes[v.0];
            if !matches!(node.op, Op::Input | Op::Constant) {
                return Err(FrapError::shape("replay: only leaves can be replaced"));
            }
            if node.value.len() != values.len() {
                return Err(FrapError::shape("replay: leaf length changed"));
            }
            node.value.clone_from(values);
        }
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Input | Op::Constant) {
                continue;
            }
            let value = self.eval(&self.nodes[i].op);
            self.nodes[i].value = value;
        }
        Ok(())
    }

    /// Reverse pass from the scalar `output`. Intermediate adjoints are
    /// released as soon as they have been propagated.
    pub fn gradient(&self, output: Var) -> Result<Gradients> {
        self.require_scalar(output, "gradient")?;
        let lens: Vec<usize> = self.nodes.iter().map(|n| n.value.len()).collect();
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[output.0] = Some(vec![1.0]);

        for i in (0..=output.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            let val = |v: &Var| self.nodes[v.0].value.as_slice();
            let mut contributions: Vec<(Var, Vec<f64>)> = Vec::new();
            let wants = |v: &Var| self.nodes[v.0].needs_grad;
            match &node.op {
                Op::Input | Op::Constant => {}
                Op::Add(a, b) => {
                    contributions.push((*a, g.clone()));
                    contributions.push((*b, g.clone()));
                }
                Op::Sub(a, b) => {
                    contributions.push((*a, g.clone()));
                    contributions.push((*b, g.iter().map(|x| -x).collect()));
                }
                Op::Mul(a, b) => {
                    contributions.push((*a, g.iter().zip(val(b)).map(|(x, y)| x * y).collect()));
                    contributions.push((*b, g.iter().zip(val(a)).map(|(x, y)| x * y).collect()));
                }
                Op::Scale(x, f) => contributions.push((*x, linalg::scale(&g, *f))),
                Op::Sum(x) => contributions.push((*x, vec![g[0]; lens[x.0]])),
                Op::Sigmoid(x) => contributions.push((
                    *x,
                    g.iter().zip(&node.value).map(|(gi, s)| gi * s * (1.0 - s)).collect(),
                )),
                Op::BoundedWeight { alpha, lb, ub, frozen } => contributions.push((
                    *alpha,
                    g.iter()
                        .zip(val(alpha))
                        .zip(frozen)
                        .map(|((gi, &a), &f)| {
                            if f {
                                0.0
                            } else {
                                gi * prompt::bounded_weight_slope(a, *lb, *ub)
                            }
                        })
                        .collect(),
                )),
                Op::Interpolate { phi, cond, uncond, dim } => {
                    let rows = lens[phi.0];
                    let mut gphi = vec![0.0; rows];
                    for (i, gp) in gphi.iter_mut().enumerate() {
                        for j in i * dim..(i + 1) * dim {
                            *gp += g[j] * (cond[j] - uncond[j]);
                        }
                    }
                    contributions.push((*phi, gphi));
                }
                Op::MatMul { a, b, m, k, n } => {
                    if wants(a) {
                        contributions.push((*a, linalg::matmul_nt(&g, val(b), *m, *n, *k)));
                    }
                    if wants(b) {
                        contributions.push((*b, linalg::matmul_tn(val(a), &g, *m, *k, *n)));
                    }
                }
                Op::MatMulNt { a, b, m, k, n } => {
                    if wants(a) {
                        contributions.push((*a, linalg::matmul(&g, val(b), *m, *n, *k)));
                    }
                    if wants(b) {
                        contributions.push((*b, linalg::matmul_tn(&g, val(a), *m, *n, *k)));
                    }
                }
                Op::RowSoftmax { x, cols } => {
                    let gx: Vec<f64> = node
                        .value
                        .chunks(*cols)
                        .zip(g.chunks(*cols))
                        .flat_map(|(p, gr)| grid::softmax_vjp(p, gr))
                        .collect();
                    contributions.push((*x, gx));
                }
                Op::Column { x, col, cols } => {
                    let mut gx = vec![0.0; lens[x.0]];
                    for (r, gr) in g.iter().enumerate() {
                        gx[r * cols + col] = *gr;
                    }
                    contributions.push((*x, gx));
                }
                Op::Smooth { x, p, kernel } => contributions.push((*x, grid::smooth_adjoint(&g, *p, kernel))),
                Op::PixelSoftmax(x) => contributions.push((*x, grid::softmax_vjp(&node.value, &g))),
                Op::Max(x) => {
                    let mut gx = vec![0.0; lens[x.0]];
                    gx[grid::argmax(val(x))] = g[0];
                    contributions.push((*x, gx));
                }
                Op::AlignTo { source, target, p } => {
                    let (dr, dc) = grid::alignment_shift(val(source), val(target), *p);
                    contributions.push((*source, grid::shift(&g, *p, -dr, -dc)));
                }
                Op::PresenceFromMax(x) => contributions.push((*x, vec![-g[0]])),
                Op::TotalVariation { x, p } => {
                    contributions.push((*x, linalg::scale(&objective::total_variation_grad(val(x), *p), g[0])))
                }
                Op::TvPresence { tv, max, p } => {
                    let (dtv, dmax) = objective::tv_presence_grad(val(tv)[0], val(max)[0], *p);
                    contributions.push((*tv, vec![g[0] * dtv]));
                    contributions.push((*max, vec![g[0] * dmax]));
                }
                Op::Overlap { p, q, cells } => {
                    let (pv, qv) = (val(p), val(q));
                    let mass: f64 = pv.iter().sum();
                    let shared: f64 = pv.iter().zip(qv).map(|(a, b)| a.min(*b)).sum();
                    let share = g[0] / (*cells as f64 * mass);
                    let mut gp = vec![-share * shared / mass; pv.len()];
                    let mut gq = vec![0.0; qv.len()];
                    for i in 0..pv.len() {
                        if pv[i] <= qv[i] {
                            gp[i] += share;
                        } else {
                            gq[i] = share;
                        }
                    }
                    contributions.push((*p, gp));
                    contributions.push((*q, gq));
                }
                Op::Jsd(p, q) => {
                    let (gp, gq) = objective::jsd_grad(val(p), val(q));
                    contributions.push((*p, linalg::scale(&gp, g[0])));
                    contributions.push((*q, linalg::scale(&gq, g[0])));
                }
                Op::SymKl(p, q) => {
                    let (gp, gq) = objective::sym_kl_grad(val(p), val(q));
                    contributions.push((*p, linalg::scale(&gp, g[0])));
                    contributions.push((*q, linalg::scale(&gq, g[0])));
                }
                Op::MeanOf(vs) => {
                    let share = g[0] / vs.len() as f64;
                    for v in vs {
                        contributions.push((*v, vec![share]));
                    }
                }
                Op::MaxOf(vs) => {
                    let xs: Vec<f64> = vs.iter().map(|v| val(v)[0]).collect();
                    contributions.push((vs[grid::argmax(&xs)], vec![g[0]]));
                }
                Op::Combine {
                    presence,
                    binding,
                    lambda,
                    variant,
                } => {
                    let sign = if variant.is_divergence() { 1.0 } else { -1.0 };
                    contributions.push((*presence, vec![g[0]]));
                    contributions.push((*binding, vec![sign * lambda * g[0]]));
                }
            }
            for (v, c) in contributions {
                if !self.nodes[v.0].needs_grad {
                    continue;
                }
                match &mut adj[v.0] {
                    Some(existing) => axpy(existing, 1.0, &c),
                    slot @ None => *slot = Some(c),
                }
            }
            // keep the output's own adjoint and leaf adjoints readable
            if matches!(node.op, Op::Input) || i == output.0 {
                adj[i] = Some(g);
            }
        }
        Ok(Gradients { adjoints: adj, lens })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_slope_at_zero() {
        let mut t = Tape::new();
        let a = t.input(vec![0.0]);
        let s = t.sigmoid(a);
        let g = t.gradient(s).unwrap();
        assert_eq!(g.wrt(a), vec![0.25]);
    }

    #[test]
    fn half_squared_norm_gradient_is_identity() {
        let alpha = vec![0.3, -1.7, 2.25, 0.0, 1e-3];
        let mut t = Tape::new();
        let a = t.input(alpha.clone());
        let sq = t.mul(a, a).unwrap();
        let s = t.sum(sq);
        let half = t.scale(s, 0.5);
        let g = t.gradient(half).unwrap();
        assert_eq!(g.wrt(a), alpha);
    }

    #[test]
    fn max_routes_to_first_argmax() {
        let mut t = Tape::new();
        let x = t.input(vec![0.2, 0.7, 0.7, 0.1]);
        let m = t.max(x);
        let y = t.scale(m, 3.0);
        let g = t.gradient(y).unwrap();
        assert_eq!(g.wrt(x), vec![0.0, 3.0, 0.0, 0.0]);
    }

    #[test]
    fn overlap_ties_route_to_first_argument() {
        let mut t = Tape::new();
        let p = t.input(vec![0.5, 0.2, 0.3, 0.0]);
        let q = t.input(vec![0.5, 0.1, 0.1, 0.3]);
        let o = t.overlap(p, q).unwrap();
        let g = t.gradient(o).unwrap();
        // The mass of p enters the normalization: -0.25 * 0.7 on every cell.
        let expected = [0.075, -0.175, -0.175, 0.075];
        for (a, b) in g.wrt(p).iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(g.wrt(q), vec![0.0, 0.25, 0.25, 0.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let a = t.input(vec![1.0, 2.0]);
        let c = t.constant(vec![3.0, 4.0]);
        let p = t.mul(a, c).unwrap();
        let s = t.sum(p);
        let g = t.gradient(s).unwrap();
        assert_eq!(g.wrt(a), vec![3.0, 4.0]);
        assert_eq!(g.wrt(c), vec![0.0, 0.0]);
    }

    #[test]
    fn replay_reproduces_value() {
        let mut t = Tape::new();
        let a = t.input(vec![0.1, -0.4, 0.9, 0.2]);
        let s = t.row_softmax(a, 2).unwrap();
        let sm = t.smooth(s, &GaussianKernel::default()).unwrap();
        let m = t.max(sm);
        let before = t.scalar(m);
        t.replay(&[(a, vec![0.1, -0.4, 0.9, 0.2])]).unwrap();
        assert_eq!(t.scalar(m).to_bits(), before.to_bits());
        t.replay(&[(a, vec![5.0, -0.4, 0.9, 0.2])]).unwrap();
        assert_ne!(t.scalar(m), before);
    }

    #[test]
    fn shape_errors() {
        let mut t = Tape::new();
        let a = t.input(vec![1.0, 2.0, 3.0]);
        let b = t.input(vec![1.0]);
        assert!(t.add(a, b).is_err());
        assert!(t.smooth(a, &GaussianKernel::default()).is_err());
        assert!(t.gradient(a).is_err());
    }
}
