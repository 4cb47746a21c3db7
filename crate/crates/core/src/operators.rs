//! Forward measurement operators `A`, their relaxed extensions, and
//! vector-Jacobian products for likelihood gradients.
//!
//! Images are flat vectors in channel-major, then row-major order. Linear
//! operators share one code path for hard and relaxed inputs; the pairwise
//! boolean operators use their multilinear extensions when relaxed.

use ndarray::Array2;
use rand::seq::index::sample;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::StreamKey;

/// Shape of a channel-major image `C × H × W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ImageGrid {
    /// Rows per channel.
    pub height: usize,
    /// Columns per channel.
    pub width: usize,
    /// Number of channels.
    pub channels: usize,
}

impl ImageGrid {
    /// Grid with positive dimensions.
    pub fn new(height: usize, width: usize, channels: usize) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Shape(format!(
                "grid dimensions must be positive, got {height}×{width}×{channels}"
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
        })
    }

    /// Number of tokens `H·W·C`.
    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    /// Whether the grid holds no pixels; never true for a validated grid.
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pixels per channel `H·W`.
    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    /// Flat index of `(channel, row, col)`.
    #[inline]
    pub fn index(&self, channel: usize, row: usize, col: usize) -> usize {
        channel * self.plane() + row * self.width + col
    }
}

/// Weights of the data-fit `λ1‖r‖₁ + λ2‖r‖²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataFit {
    /// Weight of the ℓ1 term.
    pub l1: f64,
    /// Weight of the squared ℓ2 term.
    pub l2: f64,
}

impl DataFit {
    /// Pure Gaussian negative log-likelihood weights, `λ2 = 1 / (2σ²)`.
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "Gaussian data-fit needs σ > 0, got {sigma}"
            )));
        }
        Ok(Self {
            l1: 0.0,
            l2: 1.0 / (2.0 * sigma * sigma),
        })
    }

    /// Rejects negative weights and the all-zero fit.
    pub fn validate(&self) -> Result<()> {
        if !(self.l1 >= 0.0 && self.l2 >= 0.0) || (self.l1 == 0.0 && self.l2 == 0.0) {
            return Err(Error::Config(format!(
                "data-fit weights must be nonnegative and not both zero, got ({}, {})",
                self.l1, self.l2
            )));
        }
        Ok(())
    }

    /// `D(r) = λ1‖r‖₁ + λ2‖r‖²`.
    pub fn value(&self, residual: &[f64]) -> f64 {
        residual
            .iter()
            .map(|&r| self.l1 * r.abs() + self.l2 * r * r)
            .sum()
    }

    /// `∂D/∂r`, with `sign(0) = 0`.
    pub fn residual_derivative(&self, residual: &[f64]) -> Vec<f64> {
        residual
            .iter()
            .map(|&r| {
                let sign = if r > 0.0 {
                    1.0
                } else if r < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                self.l1 * sign + 2.0 * self.l2 * r
            })
            .collect()
    }
}

/// Forward measurement operators on an [`ImageGrid`].
#[derive(Debug, Clone, PartialEq)]
pub enum OperatorKind {
    /// `A(x) = x`.
    Identity,
    /// Observes pixels where `mask` is true; shared across channels.
    Inpaint {
        /// Per-pixel observation flags in row-major order.
        mask: Vec<bool>,
    },
    /// Hides the rectangle with top-left `(x, y)` and size `w × h`.
    Box {
        /// Left column.
        x: usize,
        /// Top row.
        y: usize,
        /// Width in pixels.
        w: usize,
        /// Height in pixels.
        h: usize,
    },
    /// Exclusive or of each listed pixel pair on a binary image.
    XorPairs(Vec<(usize, usize)>),
    /// Conjunction of each listed pixel pair on a binary image.
    AndPairs(Vec<(usize, usize)>),
    /// Per-channel convolution with a normalised Gaussian kernel.
    GaussianBlur {
        /// Odd kernel side.
        size: usize,
        /// Kernel standard deviation in pixels.
        sigma: f64,
    },
    /// Per-channel convolution with a user kernel, normalised to sum 1.
    MotionBlur {
        /// Kernel weights.
        kernel: Array2<f64>,
    },
    /// Average pooling over `factor × factor` blocks.
    Downsample {
        /// Pooling factor; must divide both image sides.
        factor: usize,
    },
    /// `clip(2x − 0.5, 0, 1)` per coordinate.
    Hdr,
}

#[derive(Debug, Clone, PartialEq)]
enum Plan {
    Identity,
    Select(Vec<usize>),
    Pairs { pairs: Vec<(usize, usize)>, xor: bool },
    Convolve(Array2<f64>),
    Downsample(usize),
    Hdr,
}

/// A forward operator bound to an image grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOperator {
    kind: OperatorKind,
    grid: ImageGrid,
    plan: Plan,
}

impl ForwardOperator {
    /// Operator of `kind` on `grid`; checks masks, pairs and kernels against the grid.
    pub fn new(kind: OperatorKind, grid: ImageGrid) -> Result<Self> {
        let plan = match &kind {
            OperatorKind::Identity => Plan::Identity,
            OperatorKind::Inpaint { mask } => {
                if mask.len() != grid.plane() {
                    return Err(Error::Shape(format!(
                        "mask has {} entries, grid plane has {}",
                        mask.len(),
                        grid.plane()
                    )));
                }
                Plan::Select(retained(&grid, |p| mask[p]))
            }
            &OperatorKind::Box { x, y, w, h } => {
                if x + w > grid.width || y + h > grid.height {
                    return Err(Error::Shape(format!(
                        "box ({x}, {y}, {w}, {h}) exceeds {}×{} grid",
                        grid.width, grid.height
                    )));
                }
                Plan::Select(retained(&grid, |p| {
                    let (row, col) = (p / grid.width, p % grid.width);
                    !(row >= y && row < y + h && col >= x && col < x + w)
                }))
            }
            OperatorKind::XorPairs(pairs) | OperatorKind::AndPairs(pairs) => {
                for &(i, j) in pairs {
                    if i == j || i >= grid.len() || j >= grid.len() {
                        return Err(Error::Config(format!(
                            "invalid pair ({i}, {j}) for length {}",
                            grid.len()
                        )));
                    }
                }
                Plan::Pairs {
                    pairs: pairs.clone(),
                    xor: matches!(kind, OperatorKind::XorPairs(_)),
                }
            }
            &OperatorKind::GaussianBlur { size, sigma } => Plan::Convolve(gaussian_kernel(size, sigma)?),
            OperatorKind::MotionBlur { kernel } => Plan::Convolve(normalize_kernel(kernel.clone())?),
            &OperatorKind::Downsample { factor } => {
                if factor == 0 || grid.height % factor != 0 || grid.width % factor != 0 {
                    return Err(Error::Config(format!(
                        "downsample factor {factor} must divide {}×{}",
                        grid.height, grid.width
                    )));
                }
                Plan::Downsample(factor)
            }
            OperatorKind::Hdr => Plan::Hdr,
        };
        Ok(Self { kind, grid, plan })
    }

    /// Operator description.
    pub fn kind(&self) -> &OperatorKind {
        &self.kind
    }

    /// Input grid.
    pub fn grid(&self) -> &ImageGrid {
        &self.grid
    }

    /// Pairwise boolean operators only make sense on binary vocabularies.
    pub fn requires_binary(&self) -> bool {
        matches!(self.plan, Plan::Pairs { .. })
    }

    /// Whether `A` is linear, so that its vector-Jacobian product is the adjoint.
    pub fn is_linear(&self) -> bool {
        !matches!(self.plan, Plan::Pairs { .. } | Plan::Hdr)
    }

    /// Length of `A(x)`.
    pub fn output_dim(&self) -> usize {
        match &self.plan {
            Plan::Identity | Plan::Convolve(_) | Plan::Hdr => self.grid.len(),
            Plan::Select(idx) => idx.len(),
            Plan::Pairs { pairs, .. } => pairs.len(),
            Plan::Downsample(f) => self.grid.len() / (f * f),
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.grid.len() {
            return Err(Error::Shape(format!(
                "input has length {}, grid expects {}",
                x.len(),
                self.grid.len()
            )));
        }
        Ok(())
    }

    /// Exact operator on a hard image; boolean pairs threshold at 0.5.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if let Plan::Pairs { pairs, xor } = &self.plan {
            return Ok(pairs
                .iter()
                .map(|&(i, j)| {
                    let (a, b) = (x[i] >= 0.5, x[j] >= 0.5);
                    let v = if *xor { a ^ b } else { a && b };
                    f64::from(u8::from(v))
                })
                .collect());
        }
        self.apply_relaxed(x)
    }

    /// Differentiable extension of [`apply`](Self::apply).
    pub fn apply_relaxed(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let g = &self.grid;
        Ok(match &self.plan {
            Plan::Identity => x.to_vec(),
            Plan::Select(idx) => idx.iter().map(|&i| x[i]).collect(),
            Plan::Pairs { pairs, xor } => pairs
                .iter()
                .map(|&(i, j)| {
                    let (p, q) = (x[i], x[j]);
                    if *xor {
                        p + q - 2.0 * p * q
                    } else {
                        p * q
                    }
                })
                .collect(),
            Plan::Convolve(kernel) => convolve(g, kernel, x),
            Plan::Downsample(f) => downsample(g, *f, x),
            Plan::Hdr => x.iter().map(|&v| (2.0 * v - 0.5).clamp(0.0, 1.0)).collect(),
        })
    }

    /// Transpose of a linear operator.
    pub fn adjoint(&self, u: &[f64]) -> Result<Vec<f64>> {
        if !self.is_linear() {
            return Err(Error::Unsupported(format!(
                "{:?} has no adjoint; use vjp",
                self.kind
            )));
        }
        self.vjp(&vec![0.0; self.grid.len()], u)
    }

    /// `J(x)ᵀ u` for the relaxed operator at `x`.
    pub fn vjp(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if u.len() != self.output_dim() {
            return Err(Error::Shape(format!(
                "cotangent has length {}, operator output is {}",
                u.len(),
                self.output_dim()
            )));
        }
        let g = &self.grid;
        let mut out = vec![0.0; g.len()];
        match &self.plan {
            Plan::Identity => out.copy_from_slice(u),
            Plan::Select(idx) => {
                for (&i, &v) in idx.iter().zip(u) {
                    out[i] += v;
                }
            }
            Plan::Pairs { pairs, xor } => {
                for (&(i, j), &v) in pairs.iter().zip(u) {
                    let (p, q) = (x[i], x[j]);
                    if *xor {
                        out[i] += v * (1.0 - 2.0 * q);
                        out[j] += v * (1.0 - 2.0 * p);
                    } else {
                        out[i] += v * q;
                        out[j] += v * p;
                    }
                }
            }
            Plan::Convolve(kernel) => convolve_adjoint(g, kernel, u, &mut out),
            Plan::Downsample(f) => downsample_adjoint(g, *f, u, &mut out),
            Plan::Hdr => {
                for ((o, &xi), &v) in out.iter_mut().zip(x).zip(u) {
                    let pre = 2.0 * xi - 0.5;
                    if pre > 0.0 && pre < 1.0 {
                        *o = 2.0 * v;
                    }
                }
            }
        }
        Ok(out)
    }

    /// `r = A(x) − y` using the relaxed operator.
    pub fn residual(&self, x: &[f64], y: &Measurement) -> Result<Vec<f64>> {
        let ax = self.apply_relaxed(x)?;
        if ax.len() != y.values.len() {
            return Err(Error::Shape(format!(
                "measurement has length {}, operator output is {}",
                y.values.len(),
                ax.len()
            )));
        }
        Ok(ax.iter().zip(&y.values).map(|(a, b)| a - b).collect())
    }

    /// `D(x) = λ1‖r‖₁ + λ2‖r‖²` with `r = A(x) − y`.
    pub fn data_fit(&self, x: &[f64], y: &Measurement, fit: &DataFit) -> Result<f64> {
        Ok(fit.value(&self.residual(x, y)?))
    }

    /// `∇ₓ[−D(x)]`.
    pub fn residual_gradient(&self, x: &[f64], y: &Measurement, fit: &DataFit) -> Result<Vec<f64>> {
        let r = self.residual(x, y)?;
        let d = fit.residual_derivative(&r);
        let mut grad = self.vjp(x, &d)?;
        grad.iter_mut().for_each(|v| *v = -*v);
        Ok(grad)
    }

    /// `A(x)` plus i.i.d. `N(0, σ²)` noise.
    pub fn simulate_measurement(&self, x: &[f64], sigma: f64, key: &StreamKey) -> Result<Measurement> {
        let mut values = self.apply(x)?;
        if sigma > 0.0 {
            let normal = Normal::new(0.0, sigma)
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            let mut rng = key.rng();
            values.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
        }
        Measurement::new(values, sigma)
    }
}

/// Observed values `y` and their noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    /// Observed values.
    pub values: Vec<f64>,
    /// Noise standard deviation used to simulate them.
    pub sigma: f64,
}

impl Measurement {
    /// Measurement with finite values and `σ ≥ 0`.
    pub fn new(values: Vec<f64>, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidArgument(format!("invalid σ_y {sigma}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("measurement has non-finite values".into()));
        }
        Ok(Self { values, sigma })
    }

    /// Number of observed values.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// Whether nothing is observed.
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn retained(grid: &ImageGrid, keep: impl Fn(usize) -> bool) -> Vec<usize> {
    (0..grid.channels)
        .flat_map(|c| (0..grid.plane()).filter(|&p| keep(p)).map(move |p| (c, p)))
        .map(|(c, p)| c * grid.plane() + p)
        .collect()
}

/// Sampled Gaussian on an odd `size × size` window, normalised to sum 1.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<Array2<f64>> {
    if size % 2 == 0 || !(sigma > 0.0) {
        return Err(Error::Config(format!(
            "Gaussian blur needs an odd window and σ > 0, got {size} and {sigma}"
        )));
    }
    let c = (size / 2) as f64;
    let taps: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let kernel = Array2::from_shape_fn((size, size), |(i, j)| taps[i] * taps[j]);
    normalize_kernel(kernel)
}

fn normalize_kernel(kernel: Array2<f64>) -> Result<Array2<f64>> {
    if kernel.is_empty() || kernel.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Config("blur kernel must be non-empty, finite and nonnegative".into()));
    }
    let sum = kernel.sum();
    if sum <= 0.0 {
        return Err(Error::Config("blur kernel sums to zero".into()));
    }
    Ok(kernel / sum)
}

/// Half-sample symmetric reflection: `… b a | a b c … | c b …`.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

fn convolve(g: &ImageGrid, kernel: &Array2<f64>, x: &[f64]) -> Vec<f64> {
    let (kh, kw) = kernel.dim();
    let (ch, cw) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut out = vec![0.0; g.len()];
    for c in 0..g.channels {
        for row in 0..g.height {
            for col in 0..g.width {
                let mut acc = 0.0;
                for dy in 0..kh {
                    let sr = reflect(row as isize + dy as isize - ch, g.height);
                    for dx in 0..kw {
                        let sc = reflect(col as isize + dx as isize - cw, g.width);
                        acc += kernel[[dy, dx]] * x[g.index(c, sr, sc)];
                    }
                }
                out[g.index(c, row, col)] = acc;
            }
        }
    }
    out
}

fn convolve_adjoint(g: &ImageGrid, kernel: &Array2<f64>, u: &[f64], out: &mut [f64]) {
    let (kh, kw) = kernel.dim();
    let (ch, cw) = ((kh / 2) as isize, (kw / 2) as isize);
    for c in 0..g.channels {
        for row in 0..g.height {
            for col in 0..g.width {
                let v = u[g.index(c, row, col)];
                for dy in 0..kh {
                    let sr = reflect(row as isize + dy as isize - ch, g.height);
                    for dx in 0..kw {
                        let sc = reflect(col as isize + dx as isize - cw, g.width);
                        out[g.index(c, sr, sc)] += kernel[[dy, dx]] * v;
                    }
                }
            }
        }
    }
}

fn downsample(g: &ImageGrid, f: usize, x: &[f64]) -> Vec<f64> {
    let (oh, ow) = (g.height / f, g.width / f);
    let scale = 1.0 / (f * f) as f64;
    let mut out = Vec::with_capacity(g.channels * oh * ow);
    for c in 0..g.channels {
        for r in 0..oh {
            for q in 0..ow {
                let mut acc = 0.0;
                for dy in 0..f {
                    for dx in 0..f {
                        acc += x[g.index(c, r * f + dy, q * f + dx)];
                    }
                }
                out.push(acc * scale);
            }
        }
    }
    out
}

fn downsample_adjoint(g: &ImageGrid, f: usize, u: &[f64], out: &mut [f64]) {
    let (oh, ow) = (g.height / f, g.width / f);
    let scale = 1.0 / (f * f) as f64;
    for c in 0..g.channels {
        for r in 0..oh {
            for q in 0..ow {
                let v = u[c * oh * ow + r * ow + q] * scale;
                for dy in 0..f {
                    for dx in 0..f {
                        out[g.index(c, r * f + dy, q * f + dx)] += v;
                    }
                }
            }
        }
    }
}

/// Random inpainting mask hiding exactly `round(fraction · H·W)` pixels.
pub fn random_mask(grid: &ImageGrid, hidden_fraction: f64, key: &StreamKey) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&hidden_fraction) {
        return Err(Error::InvalidArgument(format!(
            "hidden fraction {hidden_fraction} outside [0, 1]"
        )));
    }
    let n = grid.plane();
    let hidden = (hidden_fraction * n as f64).round() as usize;
    let mut mask = vec![true; n];
    for i in sample(&mut key.rng(), n, hidden) {
        mask[i] = false;
    }
    Ok(mask)
}

/// Parses a 0/1 grid: one image row per line, digits either separated by
/// whitespace or written contiguously.
pub fn parse_mask(text: &str, grid: &ImageGrid) -> Result<Vec<bool>> {
    let mut mask = Vec::with_capacity(grid.plane());
    let mut rows = 0;
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<bool> = line
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Format(format!("line {}: unexpected {other:?} in mask", n + 1))),
            })
            .collect::<Result<_>>()?;
        if row.len() != grid.width {
            return Err(Error::Format(format!(
                "line {}: mask row has {} entries, expected {}",
                n + 1,
                row.len(),
                grid.width
            )));
        }
        mask.extend(row);
        rows += 1;
    }
    if rows != grid.height {
        return Err(Error::Format(format!("mask has {rows} rows, expected {}", grid.height)));
    }
    Ok(mask)
}

/// Writes a mask as `H` lines of `0` and `1` characters.
pub fn format_mask(mask: &[bool], grid: &ImageGrid) -> String {
    let mut s = String::with_capacity(mask.len() + grid.height);
    for row in mask.chunks(grid.width) {
        s.extend(row.iter().map(|&b| if b { '1' } else { '0' }));
        s.push('\n');
    }
    s
}

/// Parses `h w` followed by `h·w` reals, normalising the result to sum 1.
pub fn parse_motion_kernel(text: &str) -> Result<Array2<f64>> {
    let mut tokens = text.split_whitespace();
    let mut dim = |name: &str| -> Result<usize> {
        tokens
            .next()
            .ok_or_else(|| Error::Format(format!("missing kernel {name}")))?
            .parse()
            .map_err(|e| Error::Format(format!("kernel {name}: {e}")))
    };
    let h = dim("height")?;
    let w = dim("width")?;
    let values: Vec<f64> = tokens
        .map(|t| t.parse::<f64>().map_err(|e| Error::Format(format!("kernel value {t:?}: {e}"))))
        .collect::<Result<_>>()?;
    if values.len() != h * w {
        return Err(Error::Format(format!(
            "kernel declares {h}×{w} but has {} values",
            values.len()
        )));
    }
    let kernel = Array2::from_shape_vec((h, w), values).map_err(|e| Error::Format(e.to_string()))?;
    normalize_kernel(kernel)
}

/// Measurement difficulty bundles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tier {
    /// Half the pixels hidden, noiseless.
    Easy,
    /// 70% hidden, `σ_y = 0.05`.
    Medium,
    /// 85% hidden, `σ_y = 0.1`.
    Hard,
}

impl Tier {
    /// `(hidden fraction, σ_y)` for random inpainting.
    pub fn inpaint(self) -> (f64, f64) {
        match self {
            Tier::Easy => (0.5, 0.0),
            Tier::Medium => (0.7, 0.05),
            Tier::Hard => (0.85, 0.1),
        }
    }

    /// Side of the hidden square for box inpainting on 32×32 images.
    pub fn box_side(self) -> usize {
        match self {
            Tier::Easy => 8,
            Tier::Medium => 12,
            Tier::Hard => 16,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn random_vec(n: usize, key: StreamKey) -> Vec<f64> {
        let mut rng = key.rng();
        (0..n).map(|_| rng.random::<f64>()).collect()
    }

    fn all_operators(grid: ImageGrid) -> Vec<ForwardOperator> {
        let key = StreamKey::new(99);
        let n = grid.len();
        let kinds = vec![
            OperatorKind::Identity,
            OperatorKind::Inpaint { mask: random_mask(&grid, 0.6, &key).unwrap() },
            OperatorKind::Box { x: 1, y: 2, w: 3, h: 2 },
            OperatorKind::XorPairs(vec![(0, 1), (2, n - 1), (5, 3)]),
            OperatorKind::AndPairs(vec![(0, 2), (4, 1), (n - 2, 3)]),
            OperatorKind::GaussianBlur { size: 5, sigma: 1.2 },
            OperatorKind::MotionBlur {
                kernel: array![[0.0, 1.0, 0.0], [0.5, 2.0, 0.0], [0.0, 0.0, 1.5]],
            },
            OperatorKind::Downsample { factor: 2 },
            OperatorKind::Hdr,
        ];
        kinds
            .into_iter()
            .map(|k| ForwardOperator::new(k, grid).unwrap())
            .collect()
    }

    #[test]
    fn hdr_examples() {
        let g = ImageGrid::new(1, 2, 1).unwrap();
        let op = ForwardOperator::new(OperatorKind::Hdr, g).unwrap();
        assert_eq!(op.apply(&[0.5, 0.9]).unwrap(), vec![0.5, 1.0]);
        assert_eq!(op.vjp(&[0.5, 0.9], &[1.0, 1.0]).unwrap(), vec![2.0, 0.0]);
    }

    #[test]
    fn boolean_pairs_and_extensions() {
        let g = ImageGrid::new(1, 2, 1).unwrap();
        let xor = ForwardOperator::new(OperatorKind::XorPairs(vec![(0, 1)]), g).unwrap();
        let and = ForwardOperator::new(OperatorKind::AndPairs(vec![(0, 1)]), g).unwrap();
        assert_eq!(xor.apply(&[1.0, 1.0]).unwrap(), vec![0.0]);
        assert_eq!(xor.apply(&[1.0, 0.0]).unwrap(), vec![1.0]);
        assert_eq!(xor.apply_relaxed(&[0.5, 0.5]).unwrap(), vec![0.5]);
        assert_eq!(and.apply_relaxed(&[1.0, 1.0]).unwrap(), vec![1.0]);
        for a in [0.0, 1.0] {
            for b in [0.0, 1.0] {
                assert_eq!(xor.apply(&[a, b]).unwrap(), xor.apply_relaxed(&[a, b]).unwrap());
                assert_eq!(and.apply(&[a, b]).unwrap(), and.apply_relaxed(&[a, b]).unwrap());
            }
        }
        assert!(ForwardOperator::new(OperatorKind::AndPairs(vec![(1, 1)]), g).is_err());
        assert!(xor.requires_binary());
    }

    #[test]
    fn downsample_preserves_constants() {
        let g = ImageGrid::new(8, 8, 3).unwrap();
        let op = ForwardOperator::new(OperatorKind::Downsample { factor: 4 }, g).unwrap();
        let y = op.apply(&vec![0.37; g.len()]).unwrap();
        assert_eq!(y.len(), 12);
        assert!(y.iter().all(|&v| (v - 0.37).abs() < 1e-15));
    }

    #[test]
    fn inpaint_shares_mask_across_channels() {
        let g = ImageGrid::new(2, 2, 2).unwrap();
        let op = ForwardOperator::new(
            OperatorKind::Inpaint { mask: vec![true, false, false, true] },
            g,
        )
        .unwrap();
        let x: Vec<f64> = (0..8).map(f64::from).collect();
        assert_eq!(op.apply(&x).unwrap(), vec![0.0, 3.0, 4.0, 7.0]);
    }

    #[test]
    fn shape_errors() {
        let g = ImageGrid::new(2, 2, 1).unwrap();
        let op = ForwardOperator::new(OperatorKind::Identity, g).unwrap();
        assert!(matches!(op.apply(&[0.0; 3]), Err(Error::Shape(_))));
    }

    #[test]
    fn adjoint_consistency() {
        let g = ImageGrid::new(6, 6, 2).unwrap();
        for (i, op) in all_operators(g).into_iter().filter(|o| o.is_linear()).enumerate() {
            let x = random_vec(g.len(), StreamKey::new(i as u64));
            let u = random_vec(op.output_dim(), StreamKey::new(100 + i as u64));
            let ax = op.apply(&x).unwrap();
            let atu = op.adjoint(&u).unwrap();
            let lhs: f64 = ax.iter().zip(&u).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&atu).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10, "{:?}", op.kind());
        }
    }

    #[test]
    fn blur_preserves_mean() {
        let g = ImageGrid::new(7, 9, 1).unwrap();
        let x = random_vec(g.len(), StreamKey::new(3));
        for size in [3, 5, 61] {
            let op = ForwardOperator::new(OperatorKind::GaussianBlur { size, sigma: 3.0 }, g).unwrap();
            let y = op.apply(&x).unwrap();
            let mx = x.iter().sum::<f64>() / x.len() as f64;
            let my = y.iter().sum::<f64>() / y.len() as f64;
            assert!((mx - my).abs() < 1e-10, "size {size}");
        }
    }

    #[test]
    fn reflect_indexing() {
        let idx: Vec<usize> = (-4..8).map(|i| reflect(i, 4)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 0, 1, 2, 3, 3, 2, 1, 0]);
    }

    #[test]
    fn residual_gradient_examples() {
        let g = ImageGrid::new(1, 3, 1).unwrap();
        let op = ForwardOperator::new(OperatorKind::Identity, g).unwrap();
        let y = Measurement::new(vec![0.2, 0.4, 0.6], 1.0).unwrap();
        let fit = DataFit::gaussian(1.0).unwrap();
        assert_eq!(op.residual_gradient(&[0.2, 0.4, 0.6], &y, &fit).unwrap(), vec![0.0; 3]);
        let fit = DataFit { l1: 0.0, l2: 0.5 };
        let grad = op.residual_gradient(&[0.3, 0.4, 0.6], &y, &fit).unwrap();
        assert!((grad[0] + 0.1).abs() < 1e-12);
    }

    #[test]
    fn residual_gradient_matches_finite_differences() {
        let g = ImageGrid::new(4, 4, 2).unwrap();
        let h = 1e-4;
        for (i, op) in all_operators(g).into_iter().enumerate() {
            let key = StreamKey::new(7).child(i as u64);
            // Keep HDR pre-activations away from the clip kinks.
            let x: Vec<f64> = random_vec(g.len(), key.child(0))
                .into_iter()
                .map(|v| 0.3 + 0.4 * v)
                .collect();
            let y = Measurement::new(random_vec(op.output_dim(), key.child(1)), 0.1).unwrap();
            let fit = DataFit { l1: 0.0, l2: 3.0 };
            let grad = op.residual_gradient(&x, &y, &fit).unwrap();
            for j in 0..g.len() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let fd = -(op.data_fit(&xp, &y, &fit).unwrap() - op.data_fit(&xm, &y, &fit).unwrap()) / (2.0 * h);
                let scale = fd.abs().max(grad[j].abs()).max(1e-8);
                assert!((fd - grad[j]).abs() / scale < 1e-5 || (fd - grad[j]).abs() < 1e-9,
                    "{:?} coordinate {j}: fd {fd} vs {}", op.kind(), grad[j]);
            }
        }
    }

    #[test]
    fn simulate_noise_levels() {
        let g = ImageGrid::new(1, 100_000, 1).unwrap();
        let op = ForwardOperator::new(OperatorKind::Identity, g).unwrap();
        let x = vec![0.5; g.len()];
        let exact = op.simulate_measurement(&x, 0.0, &StreamKey::new(1)).unwrap();
        assert_eq!(exact.values, x);
        let noisy = op.simulate_measurement(&x, 0.05, &StreamKey::new(1)).unwrap();
        let n = noisy.len() as f64;
        let mean = noisy.values.iter().sum::<f64>() / n;
        let var = noisy.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((0.0495..=0.0505).contains(&var.sqrt()), "{}", var.sqrt());
    }

    #[test]
    fn mask_and_kernel_files() {
        let g = ImageGrid::new(2, 3, 1).unwrap();
        let mask = parse_mask("1 0 1\n011\n", &g).unwrap();
        assert_eq!(mask, vec![true, false, true, false, true, true]);
        assert_eq!(parse_mask(&format_mask(&mask, &g), &g).unwrap(), mask);
        assert!(parse_mask("1 0\n011\n", &g).is_err());

        let k = parse_motion_kernel("2 2\n1 1\n2 0\n").unwrap();
        assert_eq!(k, array![[0.25, 0.25], [0.5, 0.0]]);
        assert!(parse_motion_kernel("2 2\n1 1 1").is_err());
    }

    #[test]
    fn random_mask_counts() {
        let g = ImageGrid::new(8, 8, 1).unwrap();
        let (frac, sigma) = Tier::Medium.inpaint();
        assert_eq!(sigma, 0.05);
        let mask = random_mask(&g, frac, &StreamKey::new(2)).unwrap();
        assert_eq!(mask.iter().filter(|&&m| !m).count(), 45);
        assert_eq!(Tier::Hard.box_side(), 16);
    }
}
