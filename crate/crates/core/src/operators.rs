//! The discrete Laplacian `n^2 D_n^(d)`, its closed-form spectrum and the
//! per-step linear algebra of the implicit and explicit schemes.
//!
//! `D_n^(d)` is the Kronecker sum of the one-dimensional second-difference
//! matrices, so its eigenvectors are tensor products of the 1-D ones and its
//! eigenvalues are sums `lambda_k = sum_i lambda_{k_i}` with
//! `lambda_j = -4 n^2 sin^2(j pi / 2n)`.

use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};
use crate::lattice::{BoundaryCondition, GridSpec, LatticeField};

/// Largest lattice for which [`Laplacian::dense`] materializes the matrix.
pub const DENSE_LIMIT: usize = 4096;

/// Matrix-free `n^2 D_n^(d)`.
#[derive(Debug, Clone)]
pub struct Laplacian {
    grid: GridSpec,
}

pub fn build_laplacian(grid: &GridSpec) -> Laplacian {
    Laplacian { grid: *grid }
}

impl Laplacian {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.apply_into(x, &mut out);
        out
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let g = &self.grid;
        let p = g.axis_len();
        let n2 = (g.n() * g.n()) as f64;
        let neumann = g.bc() == BoundaryCondition::Neumann;
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut stride = 1;
        for _axis in 0..g.dim() {
            for (i, o) in out.iter_mut().enumerate() {
                let k = (i / stride) % p;
                let center = x[i];
                let left = if k > 0 { x[i - stride] } else if neumann { center } else { 0.0 };
                let right = if k + 1 < p { x[i + stride] } else if neumann { center } else { 0.0 };
                *o += n2 * (left - 2.0 * center + right);
            }
            stride *= p;
        }
    }

    /// Row-major dense matrix, `None` above [`DENSE_LIMIT`] lattice points.
    pub fn dense(&self) -> Option<Vec<f64>> {
        let size = self.grid.lattice_size();
        if size > DENSE_LIMIT {
            return None;
        }
        let mut a = vec![0.0; size * size];
        let mut e = vec![0.0; size];
        let mut col = vec![0.0; size];
        for j in 0..size {
            e[j] = 1.0;
            self.apply_into(&e, &mut col);
            for i in 0..size {
                a[i * size + j] = col[i];
            }
            e[j] = 0.0;
        }
        Some(a)
    }
}

/// Closed-form eigen-decomposition of `n^2 D_n^(d)`.
#[derive(Debug, Clone)]
pub struct SpectralData {
    grid: GridSpec,
    /// 1-D eigenvalues, one per active mode.
    axis_eigenvalues: Vec<f64>,
    /// Row `s` holds the orthonormal eigenvector of mode `s` on the axis lattice.
    axis_vectors: Vec<f64>,
}

pub fn spectral_data(grid: &GridSpec) -> SpectralData {
    SpectralData::new(grid)
}

impl SpectralData {
    pub fn new(grid: &GridSpec) -> Self {
        let p = grid.axis_len();
        let n = grid.n() as f64;
        let modes: Vec<usize> = (0..p).map(|s| mode_number(grid.bc(), s)).collect();
        let axis_eigenvalues = modes.iter().map(|&j| axis_eigenvalue(grid.n(), j)).collect();
        let mut axis_vectors = vec![0.0; p * p];
        for (s, &j) in modes.iter().enumerate() {
            for k in 1..=p {
                axis_vectors[s * p + k - 1] = eigenfunction(grid.bc(), j, grid.node(k)) / n.sqrt();
            }
        }
        Self { grid: *grid, axis_eigenvalues, axis_vectors }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn axis_eigenvalues(&self) -> &[f64] {
        &self.axis_eigenvalues
    }

    /// Orthonormal axis eigenvectors, row-major `p x p` (row = mode).
    pub fn axis_vectors(&self) -> &[f64] {
        &self.axis_vectors
    }

    /// Mode number `j` of the 0-based mode slot `s`.
    pub fn mode(&self, slot: usize) -> usize {
        mode_number(self.grid.bc(), slot)
    }

    /// Eigenvalues of the full operator, flattened like the lattice.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let p = self.grid.axis_len();
        (0..self.grid.lattice_size())
            .map(|mut rest| {
                (0..self.grid.dim())
                    .map(|_| {
                        let s = rest % p;
                        rest /= p;
                        self.axis_eigenvalues[s]
                    })
                    .sum()
            })
            .collect()
    }

    /// `sum_k f(lambda_k) <e_k, x> e_k`.
    pub fn apply_function(&self, x: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
        let mut coeffs = x.to_vec();
        self.forward(&mut coeffs);
        for (c, lam) in coeffs.iter_mut().zip(self.eigenvalues()) {
            *c *= f(lam);
        }
        self.inverse(&mut coeffs);
        coeffs
    }

    /// Lattice values to eigen-coefficients.
    pub fn forward(&self, data: &mut [f64]) {
        for axis in 0..self.grid.dim() {
            self.transform_axis(data, axis, false);
        }
    }

    /// Eigen-coefficients to lattice values.
    pub fn inverse(&self, data: &mut [f64]) {
        for axis in 0..self.grid.dim() {
            self.transform_axis(data, axis, true);
        }
    }

    fn transform_axis(&self, data: &mut [f64], axis: usize, inverse: bool) {
        let p = self.grid.axis_len();
        let stride = p.pow(axis as u32);
        let block = stride * p;
        let e = &self.axis_vectors;
        let mut line = vec![0.0; p];
        for base in (0..data.len()).step_by(block) {
            for inner in 0..stride {
                let start = base + inner;
                for (k, v) in line.iter_mut().enumerate() {
                    *v = data[start + k * stride];
                }
                for out in 0..p {
                    let mut s = 0.0;
                    for (k, v) in line.iter().enumerate() {
                        let w = if inverse { e[k * p + out] } else { e[out * p + k] };
                        s += w * v;
                    }
                    data[start + out * stride] = s;
                }
            }
        }
    }
}

fn mode_number(bc: BoundaryCondition, slot: usize) -> usize {
    match bc {
        BoundaryCondition::Dirichlet => slot + 1,
        BoundaryCondition::Neumann => slot,
    }
}

/// `lambda_j^n = -4 n^2 sin^2(j pi / 2n)`.
pub fn axis_eigenvalue(n: usize, j: usize) -> f64 {
    let nf = n as f64;
    let s = (j as f64 * PI / (2.0 * nf)).sin();
    -4.0 * nf * nf * s * s
}

/// `c_n^j = sin^2(j pi / 2n) (j pi / 2n)^{-2}`, so that `lambda_j^n = -j^2 pi^2 c_n^j`.
pub fn eigenvalue_ratio(n: usize, j: usize) -> f64 {
    let a = j as f64 * PI / (2.0 * n as f64);
    let s = a.sin();
    s * s / (a * a)
}

/// Continuum eigenfunction: `sqrt(2) sin(j pi x)` (Dirichlet) or
/// `1`, `sqrt(2) cos(j pi x)` (Neumann).
pub fn eigenfunction(bc: BoundaryCondition, j: usize, x: f64) -> f64 {
    match bc {
        BoundaryCondition::Dirichlet => SQRT_2 * (j as f64 * PI * x).sin(),
        BoundaryCondition::Neumann if j == 0 => 1.0,
        BoundaryCondition::Neumann => SQRT_2 * (j as f64 * PI * x).cos(),
    }
}

/// Precomputed solvers for `(Id - dt n^2 D) x = b` and the forward map
/// `(Id + dt n^2 D) x`.
///
/// In one dimension the implicit system is tridiagonal and strictly
/// diagonally dominant, so elimination runs without pivoting; in higher
/// dimensions it is diagonal in the tensor eigenbasis.
#[derive(Debug, Clone)]
pub struct StepOperator {
    grid: GridSpec,
    laplacian: Laplacian,
    spectral: SpectralData,
    /// Eigenvalues of `Id - dt n^2 D`, inverted.
    inverse_symbols: Vec<f64>,
    thomas: Option<Thomas>,
}

#[derive(Debug, Clone)]
struct Thomas {
    off: f64,
    /// Modified super-diagonal `c'_i`.
    upper: Vec<f64>,
    /// `1 / (b_i - a_i c'_{i-1})`.
    pivots: Vec<f64>,
}

impl Thomas {
    fn new(grid: &GridSpec) -> Self {
        let p = grid.axis_len();
        let r = grid.parabolic_ratio();
        let neumann = grid.bc() == BoundaryCondition::Neumann;
        let diag = |i: usize| {
            if neumann && (i == 0 || i + 1 == p) {
                1.0 + r
            } else {
                1.0 + 2.0 * r
            }
        };
        let off = -r;
        let mut upper = vec![0.0; p];
        let mut pivots = vec![0.0; p];
        for i in 0..p {
            let denom = if i == 0 { diag(0) } else { diag(i) - off * upper[i - 1] };
            pivots[i] = 1.0 / denom;
            upper[i] = off * pivots[i];
        }
        Self { off, upper, pivots }
    }

    fn solve(&self, rhs: &[f64], out: &mut [f64]) {
        let p = rhs.len();
        out[0] = rhs[0] * self.pivots[0];
        for i in 1..p {
            out[i] = (rhs[i] - self.off * out[i - 1]) * self.pivots[i];
        }
        for i in (0..p.saturating_sub(1)).rev() {
            out[i] -= self.upper[i] * out[i + 1];
        }
    }
}

impl StepOperator {
    pub fn new(grid: &GridSpec) -> Self {
        let spectral = SpectralData::new(grid);
        let dt = grid.dt();
        let inverse_symbols = spectral.eigenvalues().iter().map(|lam| 1.0 / (1.0 - dt * lam)).collect();
        let thomas = (grid.dim() == 1).then(|| Thomas::new(grid));
        Self { grid: *grid, laplacian: build_laplacian(grid), spectral, inverse_symbols, thomas }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn spectral(&self) -> &SpectralData {
        &self.spectral
    }

    pub fn laplacian(&self) -> &Laplacian {
        &self.laplacian
    }

    /// Solves `(Id - dt n^2 D) x = rhs` into `out`.
    pub fn implicit_into(&self, rhs: &[f64], out: &mut [f64]) {
        match &self.thomas {
            Some(t) => t.solve(rhs, out),
            None => {
                out.copy_from_slice(rhs);
                self.spectral.forward(out);
                for (c, s) in out.iter_mut().zip(&self.inverse_symbols) {
                    *c *= s;
                }
                self.spectral.inverse(out);
            }
        }
    }

    pub fn implicit(&self, rhs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; rhs.len()];
        self.implicit_into(rhs, &mut out);
        out
    }

    /// `x + dt n^2 D x` into `out`.
    pub fn explicit_into(&self, x: &[f64], out: &mut [f64]) {
        self.laplacian.apply_into(x, out);
        let dt = self.grid.dt();
        for (o, v) in out.iter_mut().zip(x) {
            *o = v + dt * *o;
        }
    }

    pub fn explicit(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.explicit_into(x, &mut out);
        out
    }
}

fn check_len(field: &LatticeField) -> Result<()> {
    if field.values().len() != field.grid().lattice_size() {
        return Err(Error::ShapeMismatch { expected: field.grid().lattice_size(), got: field.values().len() });
    }
    Ok(())
}

/// One backward-Euler solve; builds a [`StepOperator`] for the field's grid.
pub fn implicit_step(rhs: &LatticeField) -> Result<LatticeField> {
    check_len(rhs)?;
    let op = StepOperator::new(rhs.grid());
    LatticeField::new(*rhs.grid(), rhs.level() + 1, op.implicit(rhs.values()))
}

/// One forward-Euler application; stability is the caller's responsibility.
pub fn explicit_step(field: &LatticeField) -> Result<LatticeField> {
    check_len(field)?;
    let op = StepOperator::new(field.grid());
    LatticeField::new(*field.grid(), field.level() + 1, op.explicit(field.values()))
}
