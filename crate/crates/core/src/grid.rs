//! Dense square-grid arithmetic used on per-token attention maps.
//!
//! Every operation has a plain `Grid2D` entry point and a slice kernel that
//! the gradient tape calls directly, so both paths produce identical bits.

use serde::{Deserialize, Serialize};

use crate::error::{FrapError, Result};

/// A row-major grid of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Grid2D {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(FrapError::shape("grid dimensions must be positive"));
        }
        if values.len() != height * width {
            return Err(FrapError::shape(format!(
                "grid {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FrapError::shape("grid values must be finite"));
        }
        Ok(Self { height, width, values })
    }

    pub fn square(p: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(p, p, values)
    }

    pub fn uniform(p: usize, value: f64) -> Self {
        Self {
            height: p,
            width: p,
            values: vec![value; p * p],
        }
    }

    pub fn from_fn(p: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(p * p);
        for r in 0..p {
            for c in 0..p {
                values.push(f(r, c));
            }
        }
        Self {
            height: p,
            width: p,
            values,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn is_square(&self) -> bool {
        self.height == self.width
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Row-major position of the first maximal cell.
    pub fn argmax(&self) -> (usize, usize) {
        let i = argmax(&self.values);
        (i / self.width, i % self.width)
    }

    fn require_square(&self, what: &str) -> Result<usize> {
        if !self.is_square() {
            return Err(FrapError::shape(format!(
                "{what} needs a square map, got {}x{}",
                self.height, self.width
            )));
        }
        Ok(self.height)
    }
}

/// Normalized, symmetric Gaussian taps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelSpec", into = "KernelSpec")]
pub struct GaussianKernel {
    size: usize,
    sigma: f64,
    weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct KernelSpec {
    size: usize,
    sigma: f64,
}

impl TryFrom<KernelSpec> for GaussianKernel {
    type Error = FrapError;

    fn try_from(spec: KernelSpec) -> Result<Self> {
        GaussianKernel::new(spec.size, spec.sigma)
    }
}

impl From<GaussianKernel> for KernelSpec {
    fn from(k: GaussianKernel) -> Self {
        KernelSpec {
            size: k.size,
            sigma: k.sigma,
        }
    }
}

impl Default for GaussianKernel {
    fn default() -> Self {
        Self::new(3, 0.5).expect("default kernel is valid")
    }
}

impl GaussianKernel {
    pub fn new(size: usize, sigma: f64) -> Result<Self> {
        if size == 0 || size.is_multiple_of(2) {
            return Err(FrapError::config(format!(
                "kernel size must be odd and positive, got {size}"
            )));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(FrapError::config(format!("kernel sigma must be positive, got {sigma}")));
        }
        let radius = (size / 2) as isize;
        let raw: Vec<f64> = (-radius..=radius)
            .map(|x| (-((x * x) as f64) / (2.0 * sigma * sigma)).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights = raw.into_iter().map(|w| w / total).collect();
        Ok(Self { size, sigma, weights })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    /// All taps, left to right.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Tap at signed offset `k` from the center.
    pub fn tap(&self, k: isize) -> f64 {
        self.weights[(self.radius() as isize + k) as usize]
    }
}

/// A grid of non-negative cells summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelDistribution {
    grid: Grid2D,
}

impl PixelDistribution {
    /// Wraps explicit probabilities, checking non-negativity and unit mass.
    pub fn from_probabilities(grid: Grid2D) -> Result<Self> {
        if grid.values().iter().any(|&v| v < 0.0) {
            return Err(FrapError::shape("probabilities must be non-negative"));
        }
        let total = grid.sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(FrapError::shape(format!("probabilities must sum to 1, got {total}")));
        }
        Ok(Self { grid })
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        self.grid.values()
    }
}

/// Separable Gaussian smoothing with reflect padding.
pub fn smooth(map: &Grid2D, kernel: &GaussianKernel) -> Result<Grid2D> {
    let p = map.require_square("smooth")?;
    Ok(Grid2D {
        height: p,
        width: p,
        values: smooth_slice(map.values(), p, kernel),
    })
}

/// Softmax over every cell of the map.
pub fn pixel_softmax(map: &Grid2D) -> PixelDistribution {
    PixelDistribution {
        grid: Grid2D {
            height: map.height,
            width: map.width,
            values: softmax(map.values()),
        },
    }
}

/// Translates `source` so its argmax lands on the argmax of `target`.
/// Cells shifted in from outside the grid are zero.
pub fn align_to(source: &Grid2D, target: &Grid2D) -> Result<Grid2D> {
    if source.height != target.height || source.width != target.width {
        return Err(FrapError::shape(format!(
            "align_to: {}x{} vs {}x{}",
            source.height, source.width, target.height, target.width
        )));
    }
    let p = source.require_square("align_to")?;
    let (dr, dc) = alignment_shift(source.values(), target.values(), p);
    Ok(Grid2D {
        height: p,
        width: p,
        values: shift(source.values(), p, dr, dc),
    })
}

/// Largest cell value.
pub fn grid_max(map: &Grid2D) -> f64 {
    map.values[argmax(&map.values)]
}

// ---------------------------------------------------------------------------
// Slice kernels shared with the gradient tape.

/// Index of the first maximal value.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values[argmax(values)];
    let exps: Vec<f64> = values.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Vector-Jacobian product of softmax given its output.
pub(crate) fn softmax_vjp(probs: &[f64], grad_out: &[f64]) -> Vec<f64> {
    let dot: f64 = probs.iter().zip(grad_out).map(|(p, g)| p * g).sum();
    probs.iter().zip(grad_out).map(|(p, g)| p * (g - dot)).collect()
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

// Each 1-D pass is written as x_c + sum_k w_k * ((x_{c+k} - x_c) + (x_{c-k} - x_c)),
// which equals the weighted sum for a unit-sum kernel and leaves constant
// lines exactly unchanged.
fn pass(src: &[f64], p: usize, kernel: &GaussianKernel, along_rows: bool) -> Vec<f64> {
    let radius = kernel.radius() as isize;
    let at = |line: usize, pos: usize| {
        if along_rows {
            line * p + pos
        } else {
            pos * p + line
        }
    };
    let mut out = vec![0.0; p * p];
    for line in 0..p {
        for pos in 0..p {
            let center = src[at(line, pos)];
            let mut acc = 0.0;
            for k in 1..=radius {
                let fwd = src[at(line, reflect(pos as isize + k, p))];
                let back = src[at(line, reflect(pos as isize - k, p))];
                acc += kernel.tap(k) * ((fwd - center) + (back - center));
            }
            out[at(line, pos)] = center + acc;
        }
    }
    out
}

fn pass_adjoint(grad: &[f64], p: usize, kernel: &GaussianKernel, along_rows: bool) -> Vec<f64> {
    let radius = kernel.radius() as isize;
    let at = |line: usize, pos: usize| {
        if along_rows {
            line * p + pos
        } else {
            pos * p + line
        }
    };
    let side: f64 = (1..=radius).map(|k| 2.0 * kernel.tap(k)).sum();
    let mut out = vec![0.0; p * p];
    for line in 0..p {
        for pos in 0..p {
            let g = grad[at(line, pos)];
            out[at(line, pos)] += g * (1.0 - side);
            for k in 1..=radius {
                let w = kernel.tap(k);
                out[at(line, reflect(pos as isize + k, p))] += g * w;
                out[at(line, reflect(pos as isize - k, p))] += g * w;
            }
        }
    }
    out
}

pub(crate) fn smooth_slice(values: &[f64], p: usize, kernel: &GaussianKernel) -> Vec<f64> {
    let rows = pass(values, p, kernel, true);
    pass(&rows, p, kernel, false)
}

pub(crate) fn smooth_adjoint(grad: &[f64], p: usize, kernel: &GaussianKernel) -> Vec<f64> {
    let cols = pass_adjoint(grad, p, kernel, false);
    pass_adjoint(&cols, p, kernel, true)
}

/// Row/column offset moving the source argmax onto the target argmax.
pub(crate) fn alignment_shift(source: &[f64], target: &[f64], p: usize) -> (isize, isize) {
    let s = argmax(source);
    let t = argmax(target);
    ((t / p) as isize - (s / p) as isize, (t % p) as isize - (s % p) as isize)
}

/// `out[r][c] = src[r - dr][c - dc]`, zero where the source is out of range.
pub(crate) fn shift(src: &[f64], p: usize, dr: isize, dc: isize) -> Vec<f64> {
    let mut out = vec![0.0; p * p];
    for r in 0..p {
        let sr = r as isize - dr;
        if sr < 0 || sr >= p as isize {
            continue;
        }
        for c in 0..p {
            let sc = c as isize - dc;
            if sc < 0 || sc >= p as isize {
                continue;
            }
            out[r * p + c] = src[sr as usize * p + sc as usize];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_kernel_taps() {
        // w = e^-2 / (1 + 2e^-2), evaluated at 40 digits.
        let k = GaussianKernel::default();
        assert!((k.tap(-1) - 0.106_506_978_919_200_75).abs() < 1e-15);
        assert!((k.tap(0) - 0.786_986_042_161_598_5).abs() < 1e-15);
        assert_eq!(k.tap(-1), k.tap(1));
        assert!((k.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kernel_rejects_bad_parameters() {
        assert!(GaussianKernel::new(4, 0.5).is_err());
        assert!(GaussianKernel::new(0, 0.5).is_err());
        assert!(GaussianKernel::new(3, 0.0).is_err());
    }

    #[test]
    fn uniform_map_is_fixed_point() {
        let g = Grid2D::uniform(16, 0.123_456_789);
        let s = smooth(&g, &GaussianKernel::default()).unwrap();
        assert_eq!(s, g);
    }

    #[test]
    fn hot_interior_pixel_conserves_mass() {
        let g = Grid2D::from_fn(16, |r, c| if (r, c) == (8, 7) { 1.0 } else { 0.0 });
        let s = smooth(&g, &GaussianKernel::default()).unwrap();
        assert!((s.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn smooth_rejects_non_square() {
        let g = Grid2D::new(2, 3, vec![0.0; 6]).unwrap();
        assert!(matches!(
            smooth(&g, &GaussianKernel::default()),
            Err(FrapError::Shape(_))
        ));
    }

    #[test]
    fn softmax_examples() {
        let d = pixel_softmax(&Grid2D::uniform(4, 3.0));
        assert!(d.values().iter().all(|&v| (v - 1.0 / 16.0).abs() < 1e-15));
        let d = pixel_softmax(&Grid2D::new(1, 2, vec![0.0, 3f64.ln()]).unwrap());
        assert!((d.values()[0] - 0.25).abs() < 1e-15);
        assert!((d.values()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn align_shifts_and_zero_fills() {
        let source = Grid2D::square(2, vec![0.9, 0.1, 0.2, 0.3]).unwrap();
        let target = Grid2D::square(2, vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        let a = align_to(&source, &target).unwrap();
        assert_eq!(a.values(), &[0.0, 0.0, 0.0, 0.9]);
        assert_eq!(align_to(&source, &source).unwrap(), source);
    }

    #[test]
    fn argmax_ties_pick_first_row_major() {
        let g = Grid2D::square(2, vec![0.1, 0.5, 0.5, 0.2]).unwrap();
        assert_eq!(g.argmax(), (0, 1));
        let target = Grid2D::square(2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        // target argmax is (0,0), source argmax is (0,1): shift left by one
        let a = align_to(&g, &target).unwrap();
        assert_eq!(a.values(), &[0.5, 0.0, 0.2, 0.0]);
    }

    #[test]
    fn grid_max_examples() {
        let g = Grid2D::square(2, vec![0.1, 0.9, 0.3, 0.2]).unwrap();
        assert_eq!(grid_max(&g), 0.9);
        assert_eq!(grid_max(&Grid2D::uniform(3, 0.4)), 0.4);
        let d = pixel_softmax(&Grid2D::uniform(16, -2.0));
        assert!((grid_max(d.grid()) - 1.0 / 256.0).abs() < 1e-15);
    }

    #[test]
    fn smooth_adjoint_matches_dot_product_identity() {
        let k = GaussianKernel::new(5, 0.9).unwrap();
        let p = 6;
        let x: Vec<f64> = (0..p * p).map(|i| ((i * 7919) % 31) as f64 / 31.0).collect();
        let y: Vec<f64> = (0..p * p).map(|i| ((i * 104_729) % 17) as f64 / 17.0).collect();
        let lhs: f64 = smooth_slice(&x, p, &k).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(smooth_adjoint(&y, p, &k)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 4), 1);
        assert_eq!(reflect(4, 4), 2);
        assert_eq!(reflect(-2, 4), 2);
        assert_eq!(reflect(-1, 1), 0);
    }
}
