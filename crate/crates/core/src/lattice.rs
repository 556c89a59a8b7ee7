//! Grid geometry on the unit cube: interior lattices, index flattening, the
//! grid projection `kappa_n` and multilinear interpolation of lattice fields.
//!
//! Dirichlet lattices hold the `(n-1)^d` interior nodes `k/n`, `k = 1..n-1`,
//! and are extended by zero on the boundary. Neumann lattices hold the `n^d`
//! cell centres `(2k-1)/(2n)`, `k = 1..n`, and are extended outward by the
//! nearest lattice value.
//!
//! Flat indices follow the first-axis-fastest order
//! `(k_d - 1)(p)^{d-1} + ... + (k_2 - 1) p + k_1` with `p` points per axis.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryCondition {
    Dirichlet,
    Neumann,
}

/// Space-time mesh on `[0, T] x [0, 1]^d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    dim: usize,
    n: usize,
    m: usize,
    horizon: f64,
    bc: BoundaryCondition,
}

impl GridSpec {
    pub fn new(dim: usize, n: usize, m: usize, horizon: f64, bc: BoundaryCondition) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidGrid("dimension must be at least 1".into()));
        }
        if n < 2 {
            return Err(Error::InvalidGrid(format!("n = {n}: need at least 2 space subdivisions")));
        }
        if m == 0 {
            return Err(Error::InvalidGrid("m = 0: need at least one time step".into()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGrid(format!("T = {horizon}: horizon must be positive")));
        }
        let grid = Self { dim, n, m, horizon, bc };
        // Guard against index overflow for absurd dimensions.
        grid.axis_len()
            .checked_pow(dim as u32)
            .ok_or_else(|| Error::InvalidGrid("lattice size overflows usize".into()))?;
        Ok(grid)
    }

    /// Dirichlet grid with `T = 1`, the most common test configuration.
    pub fn unit(dim: usize, n: usize, m: usize) -> Result<Self> {
        Self::new(dim, n, m, 1.0, BoundaryCondition::Dirichlet)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn bc(&self) -> BoundaryCondition {
        self.bc
    }

    /// Same geometry with a different space mesh.
    pub fn with_n(&self, n: usize) -> Result<Self> {
        Self::new(self.dim, n, self.m, self.horizon, self.bc)
    }

    /// Same geometry with a different time mesh.
    pub fn with_m(&self, m: usize) -> Result<Self> {
        Self::new(self.dim, self.n, m, self.horizon, self.bc)
    }

    /// Lattice points per axis: `n - 1` (Dirichlet) or `n` (Neumann).
    pub fn axis_len(&self) -> usize {
        match self.bc {
            BoundaryCondition::Dirichlet => self.n - 1,
            BoundaryCondition::Neumann => self.n,
        }
    }

    pub fn lattice_size(&self) -> usize {
        self.axis_len().pow(self.dim as u32)
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.m as f64
    }

    pub fn time(&self, level: usize) -> f64 {
        level as f64 * self.horizon / self.m as f64
    }

    /// `n^2 T / m`, the explicit-scheme stability ratio.
    pub fn parabolic_ratio(&self) -> f64 {
        (self.n * self.n) as f64 * self.dt()
    }

    /// Coordinate of the 1-based axis index `k`.
    pub fn node(&self, k: usize) -> f64 {
        let n = self.n as f64;
        match self.bc {
            BoundaryCondition::Dirichlet => k as f64 / n,
            BoundaryCondition::Neumann => (2 * k - 1) as f64 / (2.0 * n),
        }
    }

    /// Left end of the noise cell attached to the 1-based axis index `k`,
    /// in units of the cell side `1/n`.
    pub fn cell_origin(&self, k: usize) -> usize {
        match self.bc {
            BoundaryCondition::Dirichlet => k,
            BoundaryCondition::Neumann => k - 1,
        }
    }

    /// Maps 1-based per-axis indices to the 1-based flat index.
    pub fn flatten_index(&self, ks: &[usize]) -> Result<usize> {
        if ks.len() != self.dim {
            return Err(Error::ShapeMismatch { expected: self.dim, got: ks.len() });
        }
        let p = self.axis_len();
        let mut flat = 0;
        for (axis, &k) in ks.iter().enumerate().rev() {
            if k == 0 || k > p {
                return Err(Error::IndexOutOfRange { axis, index: k, max: p });
            }
            flat = flat * p + (k - 1);
        }
        Ok(flat + 1)
    }

    /// Inverse of [`GridSpec::flatten_index`].
    pub fn unflatten_index(&self, flat: usize) -> Result<Vec<usize>> {
        let size = self.lattice_size();
        if flat == 0 || flat > size {
            return Err(Error::IndexOutOfRange { axis: 0, index: flat, max: size });
        }
        let p = self.axis_len();
        let mut rest = flat - 1;
        let mut ks = Vec::with_capacity(self.dim);
        for _ in 0..self.dim {
            ks.push(rest % p + 1);
            rest /= p;
        }
        Ok(ks)
    }

    /// Coordinates of the lattice point stored at 0-based `offset`.
    pub fn point(&self, offset: usize) -> Vec<f64> {
        let p = self.axis_len();
        let mut rest = offset;
        (0..self.dim)
            .map(|_| {
                let k = rest % p + 1;
                rest /= p;
                self.node(k)
            })
            .collect()
    }

    /// All lattice points, in storage order.
    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.lattice_size()).map(|i| self.point(i)).collect()
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::ShapeMismatch { expected: self.dim, got: x.len() });
        }
        if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::PointOutsideDomain(x.to_vec()));
        }
        Ok(())
    }

    /// Two-point linear stencil along one axis at coordinate `x`.
    pub(crate) fn axis_stencil(&self, x: f64) -> AxisStencil {
        let n = self.n;
        match self.bc {
            BoundaryCondition::Dirichlet => {
                // nodes j/n for j = 0..=n; j = 0 and j = n carry the zero boundary value
                let s = x * n as f64;
                let j = (s.floor() as usize).min(n - 1);
                let w = s - j as f64;
                let slot = |j: usize| (1..n).contains(&j).then(|| j - 1);
                AxisStencil { lo: slot(j), hi: slot(j + 1), w }
            }
            BoundaryCondition::Neumann => {
                let s = x * n as f64 - 0.5;
                if s <= 0.0 {
                    AxisStencil { lo: Some(0), hi: Some(0), w: 0.0 }
                } else if s >= (n - 1) as f64 {
                    AxisStencil { lo: Some(n - 1), hi: Some(n - 1), w: 0.0 }
                } else {
                    let j = s.floor() as usize;
                    AxisStencil { lo: Some(j), hi: Some(j + 1), w: s - j as f64 }
                }
            }
        }
    }
}

/// Linear interpolation weights along one axis; `None` marks a zero boundary node.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AxisStencil {
    pub lo: Option<usize>,
    pub hi: Option<usize>,
    pub w: f64,
}

impl AxisStencil {
    /// Interpolates a per-axis table (one value per lattice point on the axis).
    pub fn apply(&self, table: &[f64]) -> f64 {
        let lo = self.lo.map_or(0.0, |i| table[i]);
        let hi = self.hi.map_or(0.0, |i| table[i]);
        (1.0 - self.w) * lo + self.w * hi
    }
}

/// Grid projection `floor(n y) / n`, clamped to the last cell start so that
/// `y = 1` belongs to the cell `[(n-1)/n, 1]`.
pub fn kappa(y: f64, n: usize) -> f64 {
    let nf = n as f64;
    ((nf * y).floor().clamp(0.0, nf - 1.0)) / nf
}

/// Componentwise [`kappa`].
pub fn kappa_point(y: &[f64], n: usize) -> Vec<f64> {
    y.iter().map(|&v| kappa(v, n)).collect()
}

/// Solution values on the interior lattice at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeField {
    grid: GridSpec,
    level: usize,
    values: Vec<f64>,
}

impl LatticeField {
    pub fn new(grid: GridSpec, level: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.lattice_size() {
            return Err(Error::ShapeMismatch { expected: grid.lattice_size(), got: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { grid, level, values })
    }

    pub fn zeros(grid: GridSpec, level: usize) -> Self {
        Self { grid, level, values: vec![0.0; grid.lattice_size()] }
    }

    /// Samples `f` at every lattice point.
    pub fn from_fn(grid: GridSpec, level: usize, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..grid.lattice_size()).map(|i| f(&grid.point(i))).collect();
        Self::new(grid, level, values)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn time(&self) -> f64 {
        self.grid.time(self.level)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Multilinear interpolation at `x`, using the boundary extension of the grid.
    pub fn interpolate(&self, x: &[f64]) -> Result<f64> {
        self.grid.check_point(x)?;
        Ok(multilinear(&self.grid, &self.values, x))
    }
}

/// Multilinear interpolation of a flat lattice table; `x` must already be validated.
pub(crate) fn multilinear(grid: &GridSpec, values: &[f64], x: &[f64]) -> f64 {
    let d = grid.dim();
    let p = grid.axis_len();
    let stencils: Vec<AxisStencil> = x.iter().map(|&xi| grid.axis_stencil(xi)).collect();
    let mut total = 0.0;
    'corner: for corner in 0..(1usize << d) {
        let mut weight = 1.0;
        let mut offset = 0;
        let mut stride = 1;
        for (axis, st) in stencils.iter().enumerate() {
            let (slot, w) = if corner >> axis & 1 == 0 { (st.lo, 1.0 - st.w) } else { (st.hi, st.w) };
            if w == 0.0 {
                continue 'corner;
            }
            match slot {
                Some(i) => offset += i * stride,
                None => continue 'corner,
            }
            weight *= w;
            stride *= p;
        }
        total += weight * values[offset];
    }
    total
}
