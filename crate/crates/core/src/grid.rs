//! Heatmap numerics. Keypoints are read off normalized heatmaps as an
//! expectation with its spread, and Gaussian-like heatmaps are rebuilt from them.
//!
//! Coordinates follow image scanline order: `x` is the column, `y` the row,
//! both 0-based integer cell centers with the origin at the top-left.

use crate::error::{Error, Result};

/// Default normalization constant of the regenerated heatmaps.
pub const DEFAULT_ALPHA: f64 = 0.5;

/// Default number of keypoints per frame.
pub const DEFAULT_POINTS: usize = 16;

/// Eigenvalue floor (pixels²) below which a covariance is regularized before inversion.
pub const COV_EPSILON: f64 = 1e-4;

const HEATMAP_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Grid2D {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "grid dims must be positive, got {height}x{width}"
            )));
        }
        if values.len() != height * width {
            return Err(Error::invalid(format!(
                "grid {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite grid value at index {i}"
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![0.0; height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                values.push(f(y, x));
            }
        }
        Self::new(height, width, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Iterates `(x, y, value)` in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let w = self.width;
        self.values
            .iter()
            .enumerate()
            .map(move |(i, &v)| ((i % w) as f64, (i / w) as f64, v))
    }
}

/// A nonnegative grid whose values sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap(Grid2D);

impl Heatmap {
    pub fn new(grid: Grid2D) -> Result<Self> {
        if grid.values.iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("heatmap values must be nonnegative"));
        }
        let sum = grid.sum();
        if (sum - 1.0).abs() > HEATMAP_SUM_TOL {
            return Err(Error::invalid(format!("heatmap sums to {sum}, expected 1")));
        }
        Ok(Self(grid))
    }

    pub fn grid(&self) -> &Grid2D {
        &self.0
    }

    pub fn into_grid(self) -> Grid2D {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn translate(self, dx: f64, dy: f64) -> Self {
        Self::new(self.x + dx, self.y + dy)
    }
}

/// 2×2 matrix in pixels², stored as `(xx, xy, yx, yy)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cov2 {
    pub xx: f64,
    pub xy: f64,
    pub yx: f64,
    pub yy: f64,
}

impl Cov2 {
    pub const fn new(xx: f64, xy: f64, yx: f64, yy: f64) -> Self {
        Self { xx, xy, yx, yy }
    }

    pub const fn symmetric(xx: f64, xy: f64, yy: f64) -> Self {
        Self::new(xx, xy, xy, yy)
    }

    pub const fn isotropic(variance: f64) -> Self {
        Self::symmetric(variance, 0.0, variance)
    }

    pub const fn zero() -> Self {
        Self::isotropic(0.0)
    }

    pub fn entries(&self) -> [f64; 4] {
        [self.xx, self.xy, self.yx, self.yy]
    }

    pub fn is_finite(&self) -> bool {
        self.entries().iter().all(|v| v.is_finite())
    }

    pub fn determinant(&self) -> f64 {
        self.xx * self.yy - self.xy * self.yx
    }

    /// Eigenvalues `(min, max)` of the symmetric part.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let off = 0.5 * (self.xy + self.yx);
        let mean = 0.5 * (self.xx + self.yy);
        let half_diff = 0.5 * (self.xx - self.yy);
        let r = half_diff.hypot(off);
        (mean - r, mean + r)
    }

    /// Adds `COV_EPSILON·I` when the smaller eigenvalue is below `COV_EPSILON`.
    pub fn regularized(&self) -> Self {
        let (min, _) = self.eigenvalues();
        if min < COV_EPSILON {
            Self::new(
                self.xx + COV_EPSILON,
                self.xy,
                self.yx,
                self.yy + COV_EPSILON,
            )
        } else {
            *self
        }
    }

    pub fn inverse(&self) -> Result<Self> {
        let det = self.determinant();
        if !det.is_finite() || det == 0.0 {
            return Err(Error::invalid(format!("singular 2x2 matrix (det = {det})")));
        }
        Ok(Self::new(
            self.yy / det,
            -self.xy / det,
            -self.yx / det,
            self.xx / det,
        ))
    }

    /// Inverse after regularization; fails unless the matrix is positive definite.
    pub fn regularized_inverse(&self) -> Result<Self> {
        if !self.is_finite() {
            return Err(Error::invalid("non-finite covariance"));
        }
        let reg = self.regularized();
        let (min, _) = reg.eigenvalues();
        if min <= 0.0 {
            return Err(Error::invalid(format!(
                "covariance is not positive definite after regularization (min eigenvalue {min})"
            )));
        }
        reg.inverse()
    }

    /// `dᵀ M d` for the offset `d = (dx, dy)`.
    pub fn quadratic_form(&self, dx: f64, dy: f64) -> f64 {
        dx * (self.xx * dx + self.xy * dy) + dy * (self.yx * dx + self.yy * dy)
    }
}

/// Regenerated heatmap with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedHeatmap(Grid2D);

impl GeneratedHeatmap {
    pub fn new(grid: Grid2D) -> Result<Self> {
        if grid.values.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::invalid(
                "generated heatmap values must lie in [0, 1]",
            ));
        }
        Ok(Self(grid))
    }

    pub fn grid(&self) -> &Grid2D {
        &self.0
    }
}

pub fn normalize_softmax(raw: &Grid2D) -> Result<Heatmap> {
    // Grid2D already rejects non-finite values at construction.
    let max = raw.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = raw.values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let values = exps.into_iter().map(|e| e / total).collect();
    Heatmap::new(Grid2D::new(raw.height, raw.width, values)?)
}

/// Expected lattice position under the heatmap.
pub fn point_from_heatmap(h: &Heatmap) -> Point2 {
    let (mut x, mut y) = (0.0, 0.0);
    for (cx, cy, v) in h.grid().cells() {
        x += v * cx;
        y += v * cy;
    }
    let (rows, cols) = h.grid().dims();
    // Rounding in the weighted sum can push a boundary mass a hair outside the lattice.
    Point2::new(
        x.clamp(0.0, (cols - 1) as f64),
        y.clamp(0.0, (rows - 1) as f64),
    )
}

/// Second central moment of the heatmap about `p`.
pub fn covariance_from_heatmap(h: &Heatmap, p: Point2) -> Cov2 {
    let (mut xx, mut xy, mut yy) = (0.0, 0.0, 0.0);
    for (cx, cy, v) in h.grid().cells() {
        let dx = cx - p.x;
        let dy = cy - p.y;
        xx += v * dx * dx;
        xy += v * dx * dy;
        yy += v * dy * dy;
    }
    Cov2::symmetric(xx, xy, yy)
}

pub fn gaussian_heatmap(
    p: Point2,
    sigma: Cov2,
    alpha: f64,
    height: usize,
    width: usize,
) -> Result<GeneratedHeatmap> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    if !p.is_finite() {
        return Err(Error::invalid("non-finite keypoint position"));
    }
    let precision = sigma.regularized_inverse()?;
    let grid = Grid2D::from_fn(height, width, |row, col| {
        let q = precision.quadratic_form(col as f64 - p.x, row as f64 - p.y);
        (-alpha * q).exp().min(1.0)
    })?;
    GeneratedHeatmap::new(grid)
}

/// Per-channel `target − key`.
pub fn diff_heatmaps(target: &[GeneratedHeatmap], key: &[GeneratedHeatmap]) -> Result<Vec<Grid2D>> {
    if target.len() != key.len() {
        return Err(Error::invalid(format!(
            "heatmap count mismatch: {} target vs {} key",
            target.len(),
            key.len()
        )));
    }
    target
        .iter()
        .zip(key)
        .map(|(t, k)| {
            if t.grid().dims() != k.grid().dims() {
                return Err(Error::invalid(format!(
                    "heatmap dims mismatch: {:?} vs {:?}",
                    t.grid().dims(),
                    k.grid().dims()
                )));
            }
            let values = t
                .grid()
                .values
                .iter()
                .zip(&k.grid().values)
                .map(|(a, b)| a - b)
                .collect();
            Grid2D::new(t.grid().height, t.grid().width, values)
        })
        .collect()
}
