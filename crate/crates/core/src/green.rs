//! Green kernels of the heat equation on the unit cube and of its lattice
//! approximations, the Riesz-weighted norm `||.||_(alpha)`, and numerical
//! checks of the kernel approximation rates.
//!
//! Kernels:
//! - exact: `sum_k exp(-|k|^2 pi^2 t) phi_k(x) phi_k(y)` (product of 1-d series);
//! - space-discrete: `sum_j exp(lambda_j t) phi_j^n(x) phi_j(kappa_n(y))`;
//! - implicit: weights `(1 - dt lambda_j)^{-[t/dt]}`;
//! - explicit: weights `(1 + dt lambda_j)^{[t/dt]}`.
//!
//! `phi_j^n` interpolates the eigenfunction linearly between lattice points.
//! With Neumann conditions the `y` argument is the centre of the cell holding
//! `y`, matching the cell-centred lattice.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::lattice::{kappa, BoundaryCondition, GridSpec, LatticeField};
use crate::noise::{check_alpha, riesz_cell_integral, riesz_interval_integral};
use crate::operators::{axis_eigenvalue, eigenfunction};
use crate::quadrature::adaptive_simpson;
use crate::schemes::SchemeKind;
use crate::study::fit_line;

/// Tail bound below which the exact series is truncated.
pub const SERIES_TAIL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Exact,
    SpaceDiscrete,
    Implicit,
    Explicit,
}

/// A kernel together with the grid it lives on. The exact kernel uses only
/// the dimension and boundary condition of the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    kind: KernelKind,
    grid: GridSpec,
    k_max: Option<usize>,
}

impl KernelSpec {
    pub fn new(kind: KernelKind, grid: GridSpec) -> Self {
        Self { kind, grid, k_max: None }
    }

    pub fn exact(grid: GridSpec) -> Self {
        Self::new(KernelKind::Exact, grid)
    }

    pub fn space_discrete(grid: GridSpec) -> Self {
        Self::new(KernelKind::SpaceDiscrete, grid)
    }

    pub fn implicit(grid: GridSpec) -> Self {
        Self::new(KernelKind::Implicit, grid)
    }

    pub fn explicit(grid: GridSpec) -> Self {
        Self::new(KernelKind::Explicit, grid)
    }

    /// Fixes the per-axis truncation of the exact series.
    pub fn with_k_max(mut self, k_max: usize) -> Self {
        self.k_max = Some(k_max);
        self
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn k_max(&self) -> Option<usize> {
        self.k_max
    }
}

/// Smallest `K` with `sum_{k > K} exp(-k^2 pi^2 t) < tol`, using
/// `sum_{k > K} e^{-a k^2} <= e^{-a (K+1)^2} (1 + 1 / (2 a (K+1)))`.
pub fn series_truncation(t: f64, tol: f64) -> usize {
    let a = PI * PI * t;
    let mut k = 1usize;
    loop {
        let k1 = (k + 1) as f64;
        if (-a * k1 * k1).exp() * (1.0 + 1.0 / (2.0 * a * k1)) < tol {
            return k;
        }
        k += 1;
    }
}

fn exact_1d(bc: BoundaryCondition, t: f64, x: f64, y: f64, k_max: usize) -> f64 {
    let mut sum = match bc {
        BoundaryCondition::Dirichlet => 0.0,
        BoundaryCondition::Neumann => 1.0,
    };
    for k in 1..=k_max {
        let w = (-((k * k) as f64) * PI * PI * t).exp();
        sum += w * eigenfunction(bc, k, x) * eigenfunction(bc, k, y);
    }
    sum
}

/// Axis modes of the lattice: `1..n-1` (Dirichlet) or `0..n-1` (Neumann).
fn axis_modes(grid: &GridSpec) -> Vec<usize> {
    match grid.bc() {
        BoundaryCondition::Dirichlet => (1..grid.n()).collect(),
        BoundaryCondition::Neumann => (0..grid.n()).collect(),
    }
}

/// Point at which the discrete kernels evaluate their `y` argument.
fn y_anchor(grid: &GridSpec, y: f64) -> f64 {
    let n = grid.n();
    match grid.bc() {
        BoundaryCondition::Dirichlet => kappa(y, n),
        BoundaryCondition::Neumann => kappa(y, n) + 0.5 / n as f64,
    }
}

/// Per-axis eigenvector tables: `table[j][slot] = phi_j(node slot+1)`.
fn axis_tables(grid: &GridSpec, modes: &[usize]) -> Vec<Vec<f64>> {
    let len = grid.axis_len();
    modes
        .iter()
        .map(|&j| (1..=len).map(|k| eigenfunction(grid.bc(), j, grid.node(k))).collect())
        .collect()
}

/// `phi_j^n(x)` for every mode.
fn interpolated_modes(grid: &GridSpec, tables: &[Vec<f64>], x: f64) -> Vec<f64> {
    let stencil = grid.axis_stencil(x);
    tables.iter().map(|t| stencil.apply(t)).collect()
}

/// Number of completed steps at time `t`, robust to rounding of `i T / m`.
fn completed_steps(grid: &GridSpec, t: f64) -> i32 {
    (t / grid.dt() + 1e-9).floor() as i32
}

fn check_points(grid: &GridSpec, x: &[f64], y: &[f64]) -> Result<()> {
    for p in [x, y] {
        if p.len() != grid.dim() {
            return Err(Error::ShapeMismatch { expected: grid.dim(), got: p.len() });
        }
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::PointOutsideDomain(p.to_vec()));
        }
    }
    Ok(())
}

/// Evaluates the kernel at `(t, x, y)`.
pub fn eval_kernel(spec: &KernelSpec, t: f64, x: &[f64], y: &[f64]) -> Result<f64> {
    let grid = &spec.grid;
    check_points(grid, x, y)?;
    if !t.is_finite() || t < 0.0 || (spec.kind == KernelKind::Exact && t == 0.0) {
        return Err(Error::InvalidParameter(format!("kernel time {t} out of range")));
    }
    if spec.kind == KernelKind::Exact {
        let k_max = spec.k_max.unwrap_or_else(|| series_truncation(t, SERIES_TAIL));
        return Ok(x.iter().zip(y).map(|(&a, &b)| exact_1d(grid.bc(), t, a, b, k_max)).product());
    }
    let modes = axis_modes(grid);
    let tables = axis_tables(grid, &modes);
    let lambdas: Vec<f64> = modes.iter().map(|&j| axis_eigenvalue(grid.n(), j)).collect();
    // per-axis products phi_j^n(x_a) phi_j(anchor(y_a))
    let factors: Vec<Vec<f64>> = x
        .iter()
        .zip(y)
        .map(|(&xa, &ya)| {
            let px = interpolated_modes(grid, &tables, xa);
            let anchor = y_anchor(grid, ya);
            modes.iter().zip(px).map(|(&j, p)| p * eigenfunction(grid.bc(), j, anchor)).collect()
        })
        .collect();
    if spec.kind == KernelKind::SpaceDiscrete {
        // exp(sum lambda t) factorizes over axes
        return Ok(factors
            .iter()
            .map(|f| f.iter().zip(&lambdas).map(|(v, l)| v * (l * t).exp()).sum::<f64>())
            .product());
    }
    let steps = completed_steps(grid, t);
    let dt = grid.dt();
    let weight = |lambda: f64| match spec.kind {
        KernelKind::Implicit => (1.0 - dt * lambda).powi(-steps),
        _ => (1.0 + dt * lambda).powi(steps),
    };
    let d = grid.dim();
    let count = modes.len();
    let mut idx = vec![0usize; d];
    let mut total = 0.0;
    loop {
        let lambda: f64 = idx.iter().map(|&i| lambdas[i]).sum();
        let prod: f64 = idx.iter().enumerate().map(|(a, &i)| factors[a][i]).product();
        total += weight(lambda) * prod;
        let mut axis = 0;
        loop {
            if axis == d {
                return Ok(total);
            }
            idx[axis] += 1;
            if idx[axis] < count {
                break;
            }
            idx[axis] = 0;
            axis += 1;
        }
    }
}

/// `int_Q G(t, x, y) u(kappa_n(y)) dy` for a lattice field `u`, evaluated
/// with the kernel's own grid. For the implicit kernel at `t = i T/m` and a
/// lattice point `x` this reproduces `i` noiseless implicit steps.
pub fn evolve(spec: &KernelSpec, t: f64, x: &[f64], u: &LatticeField) -> Result<f64> {
    let grid = &spec.grid;
    if u.grid().n() != grid.n() || u.grid().dim() != grid.dim() || u.grid().bc() != grid.bc() {
        return Err(Error::InvalidGrid("field and kernel grids differ".into()));
    }
    let volume = (grid.n() as f64).powi(-(grid.dim() as i32));
    let mut total = 0.0;
    for (offset, value) in u.values().iter().enumerate() {
        // midpoint of the cell attached to the lattice point
        let shift = match grid.bc() {
            BoundaryCondition::Dirichlet => 0.5 / grid.n() as f64,
            BoundaryCondition::Neumann => 0.0,
        };
        let y: Vec<f64> = grid.point(offset).iter().map(|v| v + shift).collect();
        total += volume * value * eval_kernel(spec, t, x, &y)?;
    }
    Ok(total)
}

/// Which form of `||phi||^2_(alpha)` to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormVariant {
    /// `int int phi(y) |y - z|^{-alpha} phi(z) dy dz`.
    Bilinear,
    /// `int int |phi(y)| |y - z|^{-alpha} |phi(z)| dy dz`.
    Absolute,
}

/// Squared Riesz norm of a function that is constant on each of the `M^d`
/// cells of side `1/M` (values in first-axis-fastest order).
pub fn h_alpha_norm(samples: &[f64], alpha: f64, dim: usize, variant: NormVariant) -> Result<f64> {
    check_alpha(alpha, dim)?;
    let cells_per_axis = (samples.len() as f64).powf(1.0 / dim as f64).round() as usize;
    if cells_per_axis == 0 || cells_per_axis.pow(dim as u32) != samples.len() {
        return Err(Error::InvalidParameter(format!(
            "{} samples do not form a {dim}-dimensional cube",
            samples.len()
        )));
    }
    if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let values: Vec<f64> = match variant {
        NormVariant::Bilinear => samples.to_vec(),
        NormVariant::Absolute => samples.iter().map(|v| v.abs()).collect(),
    };
    if dim == 1 {
        return Ok(RieszForm::new(alpha, cells_per_axis).quadratic(&values));
    }
    let h = 1.0 / cells_per_axis as f64;
    let digits = |mut i: usize| {
        let mut out = vec![0i64; dim];
        for o in out.iter_mut() {
            *o = (i % cells_per_axis) as i64;
            i /= cells_per_axis;
        }
        out
    };
    let mut cache = std::collections::HashMap::new();
    let mut total = 0.0;
    for (a, va) in values.iter().enumerate() {
        if *va == 0.0 {
            continue;
        }
        let da = digits(a);
        for (b, vb) in values.iter().enumerate() {
            let mut key: Vec<i64> = digits(b).iter().zip(&da).map(|(x, y)| (x - y).abs()).collect();
            key.sort_unstable();
            let gamma = *cache.entry(key.clone()).or_insert_with(|| riesz_cell_integral(alpha, &key, h));
            total += va * gamma * vb;
        }
    }
    Ok(total)
}

/// Riesz quadratic form on `cells` equal cells of `[0, 1]`, applied through
/// a circulant embedding of its symmetric Toeplitz matrix.
pub struct RieszForm {
    cells: usize,
    spectrum: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    backward: Arc<dyn Fft<f64>>,
}

impl RieszForm {
    pub fn new(alpha: f64, cells: usize) -> Self {
        let h = 1.0 / cells as f64;
        let size = 2 * cells;
        let mut column = vec![Complex::new(0.0, 0.0); size];
        for k in 0..cells {
            let g = riesz_interval_integral(alpha, k as i64, h);
            column[k].re = g;
            if k > 0 {
                column[size - k].re = g;
            }
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(size);
        let backward = planner.plan_fft_inverse(size);
        forward.process(&mut column);
        // symmetric real column: real spectrum; fold in the inverse scaling
        let spectrum = column.iter().map(|c| c.re / size as f64).collect();
        Self { cells, spectrum, forward, backward }
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    /// `(a^T G a, b^T G b)` from one complex transform pair.
    pub fn quadratic_pair(&self, a: &[f64], b: &[f64]) -> (f64, f64) {
        let size = 2 * self.cells;
        let mut buf = vec![Complex::new(0.0, 0.0); size];
        for i in 0..self.cells {
            buf[i] = Complex::new(a[i], b[i]);
        }
        self.forward.process(&mut buf);
        for (z, s) in buf.iter_mut().zip(&self.spectrum) {
            *z *= *s;
        }
        self.backward.process(&mut buf);
        let mut qa = 0.0;
        let mut qb = 0.0;
        for i in 0..self.cells {
            qa += a[i] * buf[i].re;
            qb += b[i] * buf[i].im;
        }
        (qa, qb)
    }

    pub fn quadratic(&self, a: &[f64]) -> f64 {
        let zeros = vec![0.0; self.cells];
        self.quadratic_pair(a, &zeros).0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateKind {
    Space,
    TimeImplicit,
    TimeExplicit,
}

impl RateKind {
    pub fn label(&self) -> &'static str {
        match self {
            RateKind::Space => "space",
            RateKind::TimeImplicit => "time_implicit",
            RateKind::TimeExplicit => "time_explicit",
        }
    }
}

/// Kernel-distance integrals along a mesh ladder with their fitted log-log
/// slope (raw least-squares slope of `ln value` against `ln mesh`).
#[derive(Debug, Clone, PartialEq)]
pub struct RateCheck {
    pub kind: RateKind,
    pub alpha: f64,
    pub meshes: Vec<usize>,
    pub values: Vec<f64>,
    pub slope: f64,
    pub target_slope: f64,
}

impl RateCheck {
    fn from_values(kind: RateKind, alpha: f64, meshes: Vec<usize>, values: Vec<f64>, target: f64) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Regression(format!("distance at mesh {} is {}", meshes[i], values[i])));
        }
        let xs: Vec<f64> = meshes.iter().map(|&m| (m as f64).ln()).collect();
        let ys: Vec<f64> = values.iter().map(|v| v.ln()).collect();
        let fit = fit_line(&xs, &ys)?;
        Ok(Self { kind, alpha, meshes, values, slope: fit.slope, target_slope: target })
    }

    pub fn within(&self, tolerance: f64) -> bool {
        (self.slope - self.target_slope).abs() <= tolerance
    }

    /// CSV with columns `kind,alpha,mesh,integral_value,slope,target_slope`.
    pub fn write_csv(&self, mut w: impl Write, header: bool) -> Result<()> {
        if header {
            writeln!(w, "kind,alpha,mesh,integral_value,slope,target_slope")?;
        }
        for (m, v) in self.meshes.iter().zip(&self.values) {
            writeln!(w, "{},{},{},{:.12e},{:.6},{:.6}", self.kind.label(), self.alpha, m, v, self.slope, self.target_slope)?;
        }
        Ok(())
    }
}

fn check_ladder(ladder: &[usize], min: usize) -> Result<()> {
    if ladder.len() < 2 {
        return Err(Error::InvalidParameter("a rate check needs at least two meshes".into()));
    }
    if ladder.iter().any(|&m| m < min) || ladder.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter(format!("mesh ladder {ladder:?} must increase from at least {min}")));
    }
    Ok(())
}

/// Options of [`rate_check_space`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceCheckOptions {
    /// Quadrature cells per lattice cell in `y`.
    pub refine: usize,
    /// The sup over `x` is a max over `i / x_resolution`, `0 < i < x_resolution`;
    /// `None` uses eight points per cell of the finest mesh.
    pub x_resolution: Option<usize>,
    /// Relative tolerance of the time integral.
    pub rel_tol: f64,
}

impl Default for SpaceCheckOptions {
    fn default() -> Self {
        Self { refine: 16, x_resolution: None, rel_tol: 1e-4 }
    }
}

/// Below this time the exact kernel is summed by images, above by its series.
const IMAGE_SWITCH: f64 = 0.05;

/// Cell averages of the exact Dirichlet kernel `G_1(t, x, .)` on `cells`
/// equal cells; `cos_table[k-1][b] = cos(k pi b / cells)` serves the series branch.
fn exact_cell_averages(t: f64, x: f64, cells: usize, cos_table: &[Vec<f64>], out: &mut [f64]) {
    let h = 1.0 / cells as f64;
    if t < IMAGE_SWITCH {
        // G = sum_j g(x - y + 2j) - g(x + y + 2j) with the free heat kernel g;
        // antiderivative in y is -1/2 sum_j erf((x - y + 2j)/s) + erf((x + y + 2j)/s)
        let s = (4.0 * t).sqrt();
        let erf = |z: f64| {
            if z > 6.0 {
                1.0
            } else if z < -6.0 {
                -1.0
            } else {
                libm::erf(z)
            }
        };
        let anti = |e: f64| {
            let mut v = 0.0;
            for j in -3i32..=3 {
                let shift = 2.0 * j as f64;
                v -= 0.5 * (erf((x - e + shift) / s) + erf((x + e + shift) / s));
            }
            v
        };
        let mut left = anti(0.0);
        for (b, o) in out.iter_mut().enumerate() {
            let right = anti((b + 1) as f64 * h);
            *o = (right - left) / h;
            left = right;
        }
    } else {
        out.iter_mut().for_each(|o| *o = 0.0);
        let k_max = series_truncation(t, SERIES_TAIL).min(cos_table.len());
        for k in 1..=k_max {
            let kpi = k as f64 * PI;
            // sqrt2 sin(k pi x) e^{-k^2 pi^2 t} times sqrt2 (cos a0 - cos a1) / (k pi h)
            let c = 2.0 * (kpi * x).sin() * (-kpi * kpi * t).exp() / (kpi * h);
            let row = &cos_table[k - 1];
            for (b, o) in out.iter_mut().enumerate() {
                *o += c * (row[b] - row[b + 1]);
            }
        }
    }
}

/// Integrates `f` over `(0, inf)` in logarithmic time. Starts at `t_lo`
/// (adding `f(t_lo) t_lo` for `[0, t_lo]`) and stops once `f` falls below
/// `1e-12` of its sampled peak.
fn log_time_integral(f: &(dyn Fn(f64) -> f64 + Sync), t_lo: f64, rel_tol: f64) -> Result<f64> {
    let mut ts = vec![t_lo];
    let mut fs = vec![f(t_lo)];
    let mut peak = fs[0];
    loop {
        let t = ts.last().unwrap() * 2.0;
        let v = f(t);
        peak = peak.max(v);
        ts.push(t);
        fs.push(v);
        if t >= 1.0 && v < 1e-12 * peak {
            break;
        }
        if t > 1e6 {
            return Err(Error::Quadrature { achieved: v / peak });
        }
    }
    // trapezoid in ln t for the tolerance scale
    let ln2 = 2f64.ln();
    let rough: f64 = ts.windows(2).zip(fs.windows(2)).map(|(t, v)| 0.5 * ln2 * (t[0] * v[0] + t[1] * v[1])).sum();
    let tol = rel_tol * rough.max(f64::MIN_POSITIVE);
    let (s_lo, s_hi) = (t_lo.ln(), ts.last().unwrap().ln());
    let g = |s: f64| {
        let t = s.exp();
        t * f(t)
    };
    let (value, err) = adaptive_simpson(&g, s_lo, s_hi, tol, 40);
    if err > tol {
        return Err(Error::Quadrature { achieved: err / value.abs().max(f64::MIN_POSITIVE) });
    }
    Ok(value + fs[0] * t_lo)
}

/// `int_0^inf max_x ||G_1(t, x, .) - G_1^n(t, x, .)||^2_(alpha) dt` for one
/// Dirichlet mesh `n`, with the max over `xs`.
pub fn space_distance(alpha: f64, n: usize, xs: &[f64], opts: &SpaceCheckOptions) -> Result<f64> {
    check_alpha(alpha, 1)?;
    let grid = GridSpec::new(1, n, 1, 1.0, BoundaryCondition::Dirichlet)?;
    let cells = opts.refine * n;
    let form = RieszForm::new(alpha, cells);
    let k_table = series_truncation(IMAGE_SWITCH, SERIES_TAIL);
    let cos_table: Vec<Vec<f64>> = (1..=k_table)
        .map(|k| (0..=cells).map(|b| (k as f64 * PI * b as f64 / cells as f64).cos()).collect())
        .collect();
    let modes = axis_modes(&grid);
    let tables = axis_tables(&grid, &modes);
    let lambdas: Vec<f64> = modes.iter().map(|&j| axis_eigenvalue(n, j)).collect();
    // phi_j(k/n) on the coarse cells k = 0..n-1
    let coarse: Vec<Vec<f64>> = modes
        .iter()
        .map(|&j| (0..n).map(|k| eigenfunction(grid.bc(), j, k as f64 / n as f64)).collect())
        .collect();
    let px: Vec<Vec<f64>> = xs.iter().map(|&x| interpolated_modes(&grid, &tables, x)).collect();

    let difference = |t: f64, i: usize, out: &mut [f64]| {
        exact_cell_averages(t, xs[i], cells, &cos_table, out);
        let weights: Vec<f64> = px[i].iter().zip(&lambdas).map(|(p, l)| p * (l * t).exp()).collect();
        for k in 0..n {
            let g: f64 = weights.iter().zip(&coarse).map(|(w, c)| w * c[k]).sum();
            for o in &mut out[k * opts.refine..(k + 1) * opts.refine] {
                *o -= g;
            }
        }
    };
    let integrand = |t: f64| -> f64 {
        (0..xs.len().div_ceil(2))
            .into_par_iter()
            .map(|p| {
                let i = 2 * p;
                let mut a = vec![0.0; cells];
                let mut b = vec![0.0; cells];
                difference(t, i, &mut a);
                if i + 1 < xs.len() {
                    difference(t, i + 1, &mut b);
                }
                let (qa, qb) = form.quadratic_pair(&a, &b);
                qa.max(qb)
            })
            .reduce(|| 0.0, f64::max)
    };
    let h = 1.0 / cells as f64;
    log_time_integral(&integrand, 1e-3 * h * h, opts.rel_tol)
}

/// Interior points `i / resolution`.
fn x_grid(resolution: usize) -> Vec<f64> {
    (1..resolution).map(|i| i as f64 / resolution as f64).collect()
}

/// Fits the decay of [`space_distance`] along a Dirichlet `n`-ladder in
/// `d = 1`; the target slope is `-(2 - alpha)`.
pub fn rate_check_space(alpha: f64, ladder: &[usize], opts: &SpaceCheckOptions) -> Result<RateCheck> {
    check_alpha(alpha, 1)?;
    check_ladder(ladder, 2)?;
    if opts.refine == 0 || opts.rel_tol.is_nan() || opts.rel_tol <= 0.0 {
        return Err(Error::InvalidParameter("refine must be positive and rel_tol > 0".into()));
    }
    let resolution = opts.x_resolution.unwrap_or(8 * ladder[ladder.len() - 1]);
    let xs = x_grid(resolution);
    let mut values = Vec::with_capacity(ladder.len());
    for &n in ladder {
        let v = space_distance(alpha, n, &xs, opts)?;
        log::debug!("space distance alpha={alpha} n={n}: {v:.6e}");
        values.push(v);
    }
    RateCheck::from_values(RateKind::Space, alpha, ladder.to_vec(), values, -(2.0 - alpha))
}

/// Time dependence of a lattice kernel, for [`time_distance`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeKernel {
    /// `exp(lambda t)`.
    SpaceDiscrete,
    /// `(1 - dt lambda)^{-([t/dt] + 1)}`, the implicit kernel shifted by one step.
    Implicit(usize),
    /// `(1 + dt lambda)^{[t/dt]}`.
    Explicit(usize),
}

impl TimeKernel {
    fn steps(&self) -> usize {
        match self {
            TimeKernel::SpaceDiscrete => 1,
            TimeKernel::Implicit(m) | TimeKernel::Explicit(m) => *m,
        }
    }

    /// Coefficient `A e^{lambda t} + B` on a step-aligned interval.
    fn coefficient(&self, lambda: f64, horizon: f64, step: usize) -> (f64, f64) {
        match *self {
            TimeKernel::SpaceDiscrete => (1.0, 0.0),
            TimeKernel::Implicit(m) => (0.0, (1.0 - horizon / m as f64 * lambda).powi(-(step as i32 + 1))),
            TimeKernel::Explicit(m) => (0.0, (1.0 + horizon / m as f64 * lambda).powi(step as i32)),
        }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// `int_u^{u+w} e^{nu t} dt`.
fn exp_integral(nu: f64, u: f64, w: f64) -> f64 {
    if nu == 0.0 {
        w
    } else {
        (nu * u).exp() * (nu * w).exp_m1() / nu
    }
}

/// `int_0^T ||K_a(t, x, .) - K_b(t, x, .)||^2_(alpha) dt` for each `x` in
/// `xs`, where both kernels share the space lattice of `grid` (`d = 1`).
///
/// Both kernels are constant in `y` on the cells of side `1/n`, so the norm
/// reduces to the cell matrix `Gamma`, and the time integral is evaluated in
/// closed form on the common refinement of the two step grids.
pub fn time_distance(alpha: f64, grid: &GridSpec, a: TimeKernel, b: TimeKernel, xs: &[f64]) -> Result<Vec<f64>> {
    check_alpha(alpha, 1)?;
    if grid.dim() != 1 {
        return Err(Error::InvalidGrid("time distances are implemented for d = 1".into()));
    }
    if a.steps() == 0 || b.steps() == 0 {
        return Err(Error::InvalidParameter("step counts must be positive".into()));
    }
    if let Some(x) = xs.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::PointOutsideDomain(vec![*x]));
    }
    let n = grid.n();
    let horizon = grid.horizon();
    let modes = axis_modes(grid);
    let r = modes.len();
    let lambdas: Vec<f64> = modes.iter().map(|&j| axis_eigenvalue(n, j)).collect();
    // E = Phi^T Gamma Phi with Phi[k][j] = phi_j(anchor of cell k)
    let phi: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            let anchor = y_anchor(grid, (k as f64 + 0.5) / n as f64);
            modes.iter().map(|&j| eigenfunction(grid.bc(), j, anchor)).collect()
        })
        .collect();
    let h = 1.0 / n as f64;
    let gamma: Vec<f64> = (0..n).map(|k| riesz_interval_integral(alpha, k as i64, h)).collect();
    let mut gphi = vec![vec![0.0; r]; n];
    for k in 0..n {
        for l in 0..n {
            let g = gamma[k.abs_diff(l)];
            for j in 0..r {
                gphi[k][j] += g * phi[l][j];
            }
        }
    }
    let mut e = vec![vec![0.0; r]; r];
    for j in 0..r {
        for jj in 0..r {
            e[j][jj] = (0..n).map(|k| phi[k][j] * gphi[k][jj]).sum();
        }
    }
    // closed-form time integrals I[j][jj] of the coefficient differences
    let (ma, mb) = (a.steps(), b.steps());
    let lcm = ma / gcd(ma, mb) * mb;
    let width = horizon / lcm as f64;
    let mut integral = vec![vec![0.0; r]; r];
    let mut ca = vec![(0.0, 0.0); r];
    for s in 0..lcm {
        let u = s as f64 * width;
        let (sa, sb) = (s * ma / lcm, s * mb / lcm);
        for j in 0..r {
            let (a1, b1) = a.coefficient(lambdas[j], horizon, sa);
            let (a2, b2) = b.coefficient(lambdas[j], horizon, sb);
            ca[j] = (a1 - a2, b1 - b2);
        }
        let single: Vec<f64> = lambdas.iter().map(|&l| exp_integral(l, u, width)).collect();
        for j in 0..r {
            let (aj, bj) = ca[j];
            for jj in j..r {
                let (ak, bk) = ca[jj];
                let mut v = bj * bk * width + aj * bk * single[j] + bj * ak * single[jj];
                if aj != 0.0 && ak != 0.0 {
                    v += aj * ak * exp_integral(lambdas[j] + lambdas[jj], u, width);
                }
                integral[j][jj] += v;
            }
        }
    }
    for j in 0..r {
        for jj in 0..j {
            integral[j][jj] = integral[jj][j];
        }
    }
    let tables = axis_tables(grid, &modes);
    Ok(xs
        .iter()
        .map(|&x| {
            let p = interpolated_modes(grid, &tables, x);
            let mut v = 0.0;
            for j in 0..r {
                for jj in 0..r {
                    v += p[j] * p[jj] * e[j][jj] * integral[j][jj];
                }
            }
            v
        })
        .collect())
}

/// Fits the decay of `max_x int_0^T ||G^n - G^{n,m}||^2_(alpha) dt` along an
/// `m`-ladder for the lattice of `grid` (its `m` is ignored); the target
/// slope is `-(1 - alpha/2)`. The implicit kernel carries the one-step shift.
pub fn rate_check_time(alpha: f64, grid: &GridSpec, ladder: &[usize], scheme: SchemeKind) -> Result<RateCheck> {
    check_ladder(ladder, 1)?;
    let xs = x_grid(2 * grid.n());
    let mut values = Vec::with_capacity(ladder.len());
    for &m in ladder {
        let kernel = match scheme {
            SchemeKind::Implicit => TimeKernel::Implicit(m),
            SchemeKind::Explicit => TimeKernel::Explicit(m),
        };
        let per_x = time_distance(alpha, grid, TimeKernel::SpaceDiscrete, kernel, &xs)?;
        let v = per_x.into_iter().fold(0.0, f64::max);
        log::debug!("time distance alpha={alpha} n={} m={m}: {v:.6e}", grid.n());
        values.push(v);
    }
    let kind = match scheme {
        SchemeKind::Implicit => RateKind::TimeImplicit,
        SchemeKind::Explicit => RateKind::TimeExplicit,
    };
    RateCheck::from_values(kind, alpha, ladder.to_vec(), values, -(1.0 - alpha / 2.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::SQRT_2;
    use crate::operators::StepOperator;
    use crate::quadrature::gauss_legendre;

    fn dirichlet(n: usize, m: usize) -> GridSpec {
        GridSpec::new(1, n, m, 1.0, BoundaryCondition::Dirichlet).unwrap()
    }

    /// Composite Gauss rule on [0, 1].
    fn integrate01(f: impl Fn(f64) -> f64, panels: usize) -> f64 {
        let (x, w) = gauss_legendre(8);
        let h = 1.0 / panels as f64;
        let mut total = 0.0;
        for p in 0..panels {
            let mid = (p as f64 + 0.5) * h;
            for (xi, wi) in x.iter().zip(&w) {
                total += 0.5 * h * wi * f(mid + 0.5 * h * xi);
            }
        }
        total
    }

    #[test]
    fn exact_kernel_is_symmetric() {
        let spec = KernelSpec::exact(dirichlet(4, 1));
        for &(t, x, y) in &[(0.01, 0.2, 0.7), (0.3, 0.9, 0.15), (1e-3, 0.5, 0.52)] {
            let a = eval_kernel(&spec, t, &[x], &[y]).unwrap();
            let b = eval_kernel(&spec, t, &[y], &[x]).unwrap();
            assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        }
        assert!(eval_kernel(&spec, 0.0, &[0.5], &[0.5]).is_err());
        assert!(eval_kernel(&spec, 0.1, &[1.5], &[0.5]).is_err());
    }

    #[test]
    fn first_mode_is_an_eigenfunction() {
        let spec = KernelSpec::exact(dirichlet(4, 1));
        let t = 0.05;
        for &x in &[0.1, 0.37, 0.8] {
            let v = integrate01(|y| eval_kernel(&spec, t, &[x], &[y]).unwrap() * SQRT_2 * (PI * y).sin(), 64);
            let expected = (-PI * PI * t).exp() * SQRT_2 * (PI * x).sin();
            assert!((v - expected).abs() < 1e-8, "{v} vs {expected}");
        }
    }

    #[test]
    fn chapman_kolmogorov() {
        for bc in [BoundaryCondition::Dirichlet, BoundaryCondition::Neumann] {
            let spec = KernelSpec::exact(GridSpec::new(1, 4, 1, 1.0, bc).unwrap());
            let (s, t, x, y) = (0.02, 0.03, 0.3, 0.6);
            let lhs = integrate01(
                |z| eval_kernel(&spec, s, &[x], &[z]).unwrap() * eval_kernel(&spec, t, &[z], &[y]).unwrap(),
                128,
            );
            let rhs = eval_kernel(&spec, s + t, &[x], &[y]).unwrap();
            assert!((lhs - rhs).abs() < 1e-6, "{bc:?}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn gaussian_bound_ratio_stays_bounded() {
        let spec = KernelSpec::exact(dirichlet(4, 1));
        let mut worst: f64 = 0.0;
        for ti in 0..12 {
            let t = 1e-4 * 3f64.powi(ti);
            for xi in 0..=10 {
                for yi in 0..=10 {
                    let (x, y) = (xi as f64 / 10.0, yi as f64 / 10.0);
                    let g = eval_kernel(&spec, t, &[x], &[y]).unwrap().abs();
                    let bound = t.powf(-0.5) * (-(x - y).powi(2) / (8.0 * t)).exp();
                    if bound < 1e-8 {
                        // below the absolute accuracy of the truncated series
                        assert!(g < 1e-8);
                    } else {
                        worst = worst.max(g / bound);
                    }
                }
            }
        }
        assert!(worst.is_finite() && worst < 10.0, "ratio {worst}");
    }

    #[test]
    fn truncation_meets_tail_bound() {
        for &t in &[1e-4, 1e-2, 1.0] {
            let k = series_truncation(t, 1e-12);
            let tail: f64 = (k + 1..k + 2000).map(|j| (-((j * j) as f64) * PI * PI * t).exp()).sum();
            assert!(tail < 1e-12);
        }
    }

    #[test]
    fn implicit_kernel_reproduces_implicit_steps() {
        for dim in [1, 2] {
            let n = 6;
            let m = 5;
            let grid = GridSpec::new(dim, n, m, 1.0, BoundaryCondition::Dirichlet).unwrap();
            let u0 = LatticeField::from_fn(grid, 0, |x| x.iter().map(|v| v * (1.0 - v) * (1.0 + v)).product()).unwrap();
            let op = StepOperator::new(&grid);
            let mut u = u0.values().to_vec();
            for i in 1..=3 {
                u = op.implicit(&u);
                let spec = KernelSpec::implicit(grid);
                for offset in 0..grid.lattice_size() {
                    let x = grid.point(offset);
                    let v = evolve(&spec, grid.time(i), &x, &u0).unwrap();
                    assert!((v - u[offset]).abs() < 1e-10, "dim {dim} level {i}");
                }
            }
        }
    }

    #[test]
    fn explicit_and_space_kernels_at_time_zero_reproduce_data() {
        let grid = dirichlet(8, 64);
        let u0 = LatticeField::from_fn(grid, 0, |x| (3.0 * x[0]).sin() * x[0] * (1.0 - x[0])).unwrap();
        for spec in [KernelSpec::explicit(grid), KernelSpec::space_discrete(grid)] {
            for offset in 0..grid.lattice_size() {
                let v = evolve(&spec, 0.0, &grid.point(offset), &u0).unwrap();
                assert!((v - u0.values()[offset]).abs() < 1e-12);
            }
        }
        let op = StepOperator::new(&grid);
        let u1 = op.explicit(u0.values());
        let spec = KernelSpec::explicit(grid);
        for offset in 0..grid.lattice_size() {
            let v = evolve(&spec, grid.dt(), &grid.point(offset), &u0).unwrap();
            assert!((v - u1[offset]).abs() < 1e-12);
        }
    }

    #[test]
    fn space_discrete_kernel_approaches_exact() {
        let (t, x, y) = (0.05, 0.5, 0.31);
        let errs: Vec<f64> = [16, 64, 256]
            .iter()
            .map(|&n| {
                let avg_y = (kappa(y, n) + 0.5 / n as f64).min(1.0);
                let exact_avg = eval_kernel(&KernelSpec::exact(dirichlet(4, 1)), t, &[x], &[avg_y]).unwrap();
                let v = eval_kernel(&KernelSpec::space_discrete(dirichlet(n, 1)), t, &[x], &[y]).unwrap();
                (v - exact_avg).abs()
            })
            .collect();
        assert!(errs[1] < errs[0] && errs[2] < errs[1], "{errs:?}");
    }

    #[test]
    fn norm_examples() {
        let ones = vec![1.0; 16];
        let v = h_alpha_norm(&ones, 0.5, 1, NormVariant::Bilinear).unwrap();
        assert!((v - 8.0 / 3.0).abs() < 1e-12);
        let mut half = vec![0.0; 16];
        half[..8].iter_mut().for_each(|v| *v = 1.0);
        let v = h_alpha_norm(&half, 0.5, 1, NormVariant::Bilinear).unwrap();
        assert!((v - 2.0 / 0.75 * 0.5f64.powf(1.5)).abs() < 1e-12);
        assert!((v - 0.94281).abs() < 1e-5);
        assert_eq!(h_alpha_norm(&[0.0; 8], 0.5, 1, NormVariant::Bilinear).unwrap(), 0.0);
        assert!(h_alpha_norm(&ones, 1.0, 1, NormVariant::Bilinear).is_err());
        assert!(h_alpha_norm(&[1.0; 15], 0.5, 2, NormVariant::Bilinear).is_err());
    }

    #[test]
    fn norm_variants_and_positivity() {
        let signed: Vec<f64> = (0..32).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect();
        let bil = h_alpha_norm(&signed, 0.7, 1, NormVariant::Bilinear).unwrap();
        let abs = h_alpha_norm(&signed, 0.7, 1, NormVariant::Absolute).unwrap();
        assert!(bil > 0.0 && abs >= bil);
        let two_d: Vec<f64> = (0..16).map(|i| ((i * 5 % 7) as f64 - 3.0) / 2.0).collect();
        assert!(h_alpha_norm(&two_d, 1.2, 2, NormVariant::Bilinear).unwrap() > 0.0);
    }

    #[test]
    fn norm_of_constant_is_refinement_invariant_in_2d() {
        let coarse = h_alpha_norm(&[1.0], 1.0, 2, NormVariant::Bilinear).unwrap();
        let fine = h_alpha_norm(&[1.0; 4], 1.0, 2, NormVariant::Bilinear).unwrap();
        assert!((coarse - fine).abs() < 1e-6 * coarse, "{coarse} vs {fine}");
    }

    #[test]
    fn toeplitz_form_matches_dense_sum() {
        let cells = 13;
        let form = RieszForm::new(0.4, cells);
        let a: Vec<f64> = (0..cells).map(|i| (i as f64 * 0.7).sin()).collect();
        let b: Vec<f64> = (0..cells).map(|i| (i as f64 * 1.3).cos()).collect();
        let dense = |v: &[f64]| {
            let mut s = 0.0;
            for i in 0..cells {
                for j in 0..cells {
                    s += v[i] * v[j] * riesz_interval_integral(0.4, i as i64 - j as i64, 1.0 / cells as f64);
                }
            }
            s
        };
        let (qa, qb) = form.quadratic_pair(&a, &b);
        assert!((qa - dense(&a)).abs() < 1e-12);
        assert!((qb - dense(&b)).abs() < 1e-12);
    }

    #[test]
    fn image_and_series_cell_averages_agree() {
        let cells = 40;
        let k_table = series_truncation(1e-3, 1e-14);
        let cos_table: Vec<Vec<f64>> = (1..=k_table)
            .map(|k| (0..=cells).map(|b| (k as f64 * PI * b as f64 / cells as f64).cos()).collect())
            .collect();
        let mut a = vec![0.0; cells];
        let mut b = vec![0.0; cells];
        for &t in &[0.01, 0.04] {
            exact_cell_averages(t, 0.3, cells, &cos_table, &mut a);
            // force the series branch
            let h = 1.0 / cells as f64;
            for (i, o) in b.iter_mut().enumerate() {
                *o = 0.0;
                for k in 1..=k_table {
                    let kpi = k as f64 * PI;
                    *o += 2.0 * (kpi * 0.3).sin() * (-kpi * kpi * t).exp() / (kpi * h)
                        * (cos_table[k - 1][i] - cos_table[k - 1][i + 1]);
                }
            }
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-10, "t={t}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn identical_time_kernels_have_zero_distance() {
        let grid = dirichlet(8, 1);
        let xs = [0.25, 0.5, 0.8];
        for k in [TimeKernel::Implicit(16), TimeKernel::Explicit(200), TimeKernel::SpaceDiscrete] {
            let d = time_distance(0.5, &grid, k, k, &xs).unwrap();
            assert!(d.iter().all(|v| v.abs() < 1e-14), "{d:?}");
        }
        let d = time_distance(0.5, &grid, TimeKernel::Implicit(16), TimeKernel::Implicit(32), &xs).unwrap();
        assert!(d.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn time_distance_matches_direct_quadrature() {
        let grid = dirichlet(4, 1);
        let (alpha, m, x) = (0.5, 6, 0.4);
        let closed = time_distance(alpha, &grid, TimeKernel::SpaceDiscrete, TimeKernel::Implicit(m), &[x]).unwrap()[0];
        // sample both kernels on fine y cells and integrate t by a fine midpoint rule
        let spec_n = KernelSpec::space_discrete(grid);
        let spec_m = KernelSpec::implicit(grid.with_m(m).unwrap());
        let cells = 64;
        let steps = 6000;
        let mut total = 0.0;
        for s in 0..steps {
            let t = (s as f64 + 0.5) / steps as f64;
            let diff: Vec<f64> = (0..cells)
                .map(|c| {
                    let y = (c as f64 + 0.5) / cells as f64;
                    eval_kernel(&spec_n, t, &[x], &[y]).unwrap()
                        - eval_kernel(&spec_m, t + 1.0 / m as f64, &[x], &[y]).unwrap()
                })
                .collect();
            total += h_alpha_norm(&diff, alpha, 1, NormVariant::Bilinear).unwrap() / steps as f64;
        }
        assert!((closed - total).abs() < 1e-4 * closed, "{closed} vs {total}");
    }

    #[test]
    fn implicit_and_explicit_time_distances_are_comparable() {
        let grid = dirichlet(8, 1);
        let ladder = [320, 640, 1280, 2560];
        let a = rate_check_time(0.5, &grid, &ladder, SchemeKind::Implicit).unwrap();
        let b = rate_check_time(0.5, &grid, &ladder, SchemeKind::Explicit).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            let r = x / y;
            assert!((0.25..=4.0).contains(&r), "ratio {r}");
        }
    }

    #[test]
    fn space_distances_decrease_and_are_grid_stable() {
        let opts = SpaceCheckOptions { refine: 8, x_resolution: None, rel_tol: 1e-4 };
        let check = rate_check_space(0.5, &[4, 8], &opts).unwrap();
        assert!(check.values[1] < check.values[0]);
        let a = space_distance(0.5, 8, &x_grid(64), &opts).unwrap();
        let b = space_distance(0.5, 8, &x_grid(128), &opts).unwrap();
        assert!((a - b).abs() < 0.02 * a, "{a} vs {b}");
        assert_eq!(check.values[1], a);
    }

    #[test]
    fn rate_check_csv_and_validation() {
        let grid = dirichlet(8, 1);
        let check = rate_check_time(0.5, &grid, &[8, 16, 32], SchemeKind::Implicit).unwrap();
        let mut out = Vec::new();
        check.write_csv(&mut out, true).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("kind,alpha,mesh,integral_value,slope,target_slope\n"));
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().nth(1).unwrap().starts_with("time_implicit,0.5,8,"));
        assert!(rate_check_time(0.5, &grid, &[8], SchemeKind::Implicit).is_err());
        assert!(rate_check_time(0.5, &grid, &[16, 8], SchemeKind::Implicit).is_err());
        assert!(rate_check_space(1.0, &[4, 8], &SpaceCheckOptions::default()).is_err());
    }
}
