//! Gaussian noise white in time and Riesz-correlated in space.
//!
//! The driving term of both schemes is the scaled box increment
//! `n^d (m/T) F([t_i, t_{i+1}] x cell)`, one value per lattice cell and time
//! step. Cell `k` of a Dirichlet lattice is `prod_j [k_j/n, (k_j+1)/n]`, the
//! cell whose grid projection is the lattice point `k/n`; Neumann cells are
//! the `n^d` cells centred on the lattice points.
//!
//! Increments at different time steps are independent. Within a step their
//! covariance is `n^{2d} (m/T) gamma_ab` with
//! `gamma_ab = int_{cell a} int_{cell b} |y - z|^{-alpha} dy dz` (Riesz) or
//! `n^{-d} delta_ab` (white).

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::lattice::{BoundaryCondition, GridSpec};
use crate::quadrature::BoxRule;

/// Largest cell count accepted by [`CovarianceFactor::build`]; the dense
/// covariance and factor then take about 1 GiB.
pub const MAX_CELLS: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    SpaceTimeWhite,
    RieszCorrelated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    kind: NoiseKind,
    alpha: f64,
    dim: usize,
}

impl NoiseModel {
    /// Riesz kernel `|z|^{-alpha}`, requires `0 < alpha < min(2, d)`.
    pub fn riesz(alpha: f64, dim: usize) -> Result<Self> {
        check_alpha(alpha, dim)?;
        Ok(Self { kind: NoiseKind::RieszCorrelated, alpha, dim })
    }

    /// Space-time white noise, only function-valued solutions in `d = 1`.
    pub fn white(dim: usize) -> Result<Self> {
        if dim != 1 {
            return Err(Error::WhiteNoiseDimension(dim));
        }
        Ok(Self { kind: NoiseKind::SpaceTimeWhite, alpha: 0.0, dim })
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    /// Riesz exponent, `None` for white noise.
    pub fn alpha(&self) -> Option<f64> {
        match self.kind {
            NoiseKind::RieszCorrelated => Some(self.alpha),
            NoiseKind::SpaceTimeWhite => None,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Short label used in reports: `white` or the alpha value.
    pub fn label(&self) -> String {
        match self.alpha() {
            Some(a) => format!("{a}"),
            None => "white".to_string(),
        }
    }
}

/// Validates `0 < alpha < min(2, d)`.
pub fn check_alpha(alpha: f64, dim: usize) -> Result<()> {
    let bound = (dim as f64).min(2.0);
    if !(alpha > 0.0 && alpha < bound) || dim == 0 {
        return Err(Error::InvalidAlpha { alpha, dim, bound });
    }
    Ok(())
}

/// Second antiderivative of `r^{-alpha}` on the line, even in `r`.
fn riesz_antiderivative(r: f64, alpha: f64) -> f64 {
    let r = r.abs();
    if r == 0.0 {
        return 0.0;
    }
    if (alpha - 1.0).abs() < 1e-12 {
        r * r.ln()
    } else {
        r.powf(2.0 - alpha) / ((1.0 - alpha) * (2.0 - alpha))
    }
}

/// `int_{[0,h]} int_{[k h, (k+1) h]} |y - z|^{-alpha} dz dy` in closed form.
pub fn riesz_interval_integral(alpha: f64, offset: i64, h: f64) -> f64 {
    let k = offset.unsigned_abs() as f64;
    let f = |r: f64| riesz_antiderivative(r, alpha);
    h.powf(2.0 - alpha) * (f(k + 1.0) - 2.0 * f(k) + f(k - 1.0))
}

/// Double integral of `|y - z|^{-alpha}` over two cubes of side `h` whose
/// lower corners differ by `offsets * h`.
///
/// `d = 1` uses the closed form; higher dimensions integrate the difference
/// variable against the triangular weight `prod_j (1 - |u_j|)` by adaptive
/// cubature, with the singular corner handled by homogeneous scaling.
pub fn riesz_cell_integral(alpha: f64, offsets: &[i64], h: f64) -> f64 {
    let d = offsets.len();
    if d == 1 {
        return riesz_interval_integral(alpha, offsets[0], h);
    }
    h.powf(2.0 * d as f64 - alpha) * unit_cell_integral(alpha, offsets)
}

/// Cubature path for any dimension (including `d = 1`, where it serves as an
/// independent check of the closed form).
pub fn unit_cell_integral(alpha: f64, offsets: &[i64]) -> f64 {
    let d = offsets.len();
    // After reflection every axis contributes two unit intervals [a, a+1],
    // a >= 0, with linear weight c0 + c1 v.
    let pieces: Vec<[(f64, f64, f64); 2]> = offsets
        .iter()
        .map(|&k| {
            let k = k.unsigned_abs() as f64;
            if k == 0.0 {
                [(0.0, 1.0, -1.0), (0.0, 1.0, -1.0)]
            } else {
                // [k-1, k] with weight v - k + 1 and [k, k+1] with weight k + 1 - v
                [(k - 1.0, 1.0 - k, 1.0), (k, k + 1.0, -1.0)]
            }
        })
        .collect();
    let rule = BoxRule::new(8);
    let mut total = 0.0;
    for choice in 0..(1usize << d) {
        let sel: Vec<(f64, f64, f64)> = (0..d).map(|j| pieces[j][choice >> j & 1]).collect();
        let lo: Vec<f64> = sel.iter().map(|p| p.0).collect();
        if lo.iter().all(|&a| a == 0.0) {
            total += singular_corner_integral(alpha, &sel, &rule);
        } else {
            let hi: Vec<f64> = lo.iter().map(|a| a + 1.0).collect();
            let f = |v: &[f64]| {
                let r2: f64 = v.iter().map(|x| x * x).sum();
                let w: f64 = sel.iter().zip(v).map(|(p, x)| p.1 + p.2 * x).product();
                w * r2.powf(-0.5 * alpha)
            };
            total += rule.integrate_adaptive(&lo, &hi, &f, 1e-12, 0.0, 8).0;
        }
    }
    total
}

/// `int_{[0,1]^d} prod_j (c0_j + c1_j v_j) |v|^{-alpha} dv`: each monomial
/// `v^S |v|^{-alpha}` is homogeneous of degree `|S| - alpha`, so the integral
/// over the unit cube is the integral over the shell `[0,1]^d \ [0,1/2]^d`
/// divided by `1 - 2^{-(d + |S| - alpha)}`.
fn singular_corner_integral(alpha: f64, sel: &[(f64, f64, f64)], rule: &BoxRule) -> f64 {
    let d = sel.len();
    let mut total = 0.0;
    for subset in 0..(1usize << d) {
        let coeff: f64 = (0..d).map(|j| if subset >> j & 1 == 1 { sel[j].2 } else { sel[j].1 }).product();
        if coeff == 0.0 {
            continue;
        }
        let degree = subset.count_ones() as f64 - alpha;
        let g = |v: &[f64]| {
            let r2: f64 = v.iter().map(|x| x * x).sum();
            let mono: f64 = (0..d).filter(|j| subset >> j & 1 == 1).map(|j| v[j]).product();
            mono * r2.powf(-0.5 * alpha)
        };
        let mut shell = 0.0;
        for child in 1..(1usize << d) {
            let lo: Vec<f64> = (0..d).map(|j| if child >> j & 1 == 1 { 0.5 } else { 0.0 }).collect();
            let hi: Vec<f64> = lo.iter().map(|a| a + 0.5).collect();
            shell += rule.integrate_adaptive(&lo, &hi, &g, 1e-12, 0.0, 8).0;
        }
        total += coeff * shell / (1.0 - 2f64.powf(-(d as f64 + degree)));
    }
    total
}

/// Per-axis cell origins (in units of `1/n`) of every lattice cell.
fn cell_origins(grid: &GridSpec) -> Vec<Vec<i64>> {
    let p = grid.axis_len();
    (0..grid.lattice_size())
        .map(|mut rest| {
            (0..grid.dim())
                .map(|_| {
                    let k = rest % p + 1;
                    rest /= p;
                    grid.cell_origin(k) as i64
                })
                .collect()
        })
        .collect()
}

/// Unscaled covariance `gamma_ab` of the noise measure over two lattice cells
/// (per unit time). Cells are 0-based lattice offsets.
pub fn cell_covariance(model: &NoiseModel, grid: &GridSpec, cell_a: usize, cell_b: usize) -> Result<f64> {
    if model.dim() != grid.dim() {
        return Err(Error::ShapeMismatch { expected: grid.dim(), got: model.dim() });
    }
    let size = grid.lattice_size();
    for c in [cell_a, cell_b] {
        if c >= size {
            return Err(Error::IndexOutOfRange { axis: 0, index: c + 1, max: size });
        }
    }
    let h = 1.0 / grid.n() as f64;
    match model.kind() {
        NoiseKind::SpaceTimeWhite => Ok(if cell_a == cell_b { h.powi(grid.dim() as i32) } else { 0.0 }),
        NoiseKind::RieszCorrelated => {
            let a = grid.point(cell_a);
            let b = grid.point(cell_b);
            let offsets: Vec<i64> = a.iter().zip(&b).map(|(x, y)| ((x - y) * grid.n() as f64).round() as i64).collect();
            Ok(riesz_cell_integral(model.alpha, &offsets, h))
        }
    }
}

/// Covariance of the scaled box increments and a low-rank factor `L` with
/// `L L^T = C`, obtained by pivoted Cholesky.
#[derive(Debug, Clone)]
pub struct CovarianceFactor {
    grid: GridSpec,
    model: NoiseModel,
    cells: usize,
    rank: usize,
    /// Row-major `cells x cells`.
    covariance: Vec<f64>,
    /// Row-major `cells x rank`; rows in lattice order, columns in pivot order.
    factor: Vec<f64>,
}

impl CovarianceFactor {
    pub fn build(model: &NoiseModel, grid: &GridSpec) -> Result<Self> {
        if model.dim() != grid.dim() {
            return Err(Error::ShapeMismatch { expected: grid.dim(), got: model.dim() });
        }
        let cells = grid.lattice_size();
        if cells > MAX_CELLS {
            return Err(Error::InvalidParameter(format!(
                "{cells} noise cells exceed the dense covariance limit of {MAX_CELLS}"
            )));
        }
        let n = grid.n() as f64;
        let d = grid.dim() as i32;
        let time_scale = grid.m() as f64 / grid.horizon();
        let mut covariance = vec![0.0; cells * cells];
        match model.kind() {
            NoiseKind::SpaceTimeWhite => {
                let v = n.powi(d) * time_scale;
                for i in 0..cells {
                    covariance[i * cells + i] = v;
                }
            }
            NoiseKind::RieszCorrelated => {
                let scale = n.powi(2 * d) * time_scale;
                let h = 1.0 / n;
                let origins = cell_origins(grid);
                // gamma depends only on |offset| per axis, up to permutation
                let mut cache: HashMap<Vec<i64>, f64> = HashMap::new();
                for a in 0..cells {
                    for b in 0..=a {
                        let mut key: Vec<i64> =
                            origins[a].iter().zip(&origins[b]).map(|(x, y)| (x - y).abs()).collect();
                        key.sort_unstable();
                        let gamma =
                            *cache.entry(key).or_insert_with_key(|k| riesz_cell_integral(model.alpha, k, h));
                        covariance[a * cells + b] = scale * gamma;
                        covariance[b * cells + a] = scale * gamma;
                    }
                }
            }
        }
        let (factor, rank) = pivoted_cholesky(&covariance, cells)?;
        Ok(Self { grid: *grid, model: *model, cells, rank, covariance, factor })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn model(&self) -> &NoiseModel {
        &self.model
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn covariance(&self) -> &[f64] {
        &self.covariance
    }

    pub fn factor(&self) -> &[f64] {
        &self.factor
    }

    /// `max |L L^T - C|`.
    pub fn reconstruction_error(&self) -> f64 {
        let (k, r) = (self.cells, self.rank);
        let mut worst: f64 = 0.0;
        for i in 0..k {
            for j in 0..k {
                let s: f64 = (0..r).map(|c| self.factor[i * r + c] * self.factor[j * r + c]).sum();
                worst = worst.max((s - self.covariance[i * k + j]).abs());
            }
        }
        worst
    }

    /// Writes the covariance and factor: an 8-byte magic, the key
    /// `(d, bc, n, m, T, kind, alpha)`, the dimensions `(cells, rank)`, then
    /// `C` and `L` row-major, all little-endian.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&(self.grid.dim() as u32).to_le_bytes())?;
        w.write_all(&bc_code(self.grid.bc()).to_le_bytes())?;
        w.write_all(&(self.grid.n() as u64).to_le_bytes())?;
        w.write_all(&(self.grid.m() as u64).to_le_bytes())?;
        w.write_all(&self.grid.horizon().to_le_bytes())?;
        w.write_all(&kind_code(self.model.kind()).to_le_bytes())?;
        w.write_all(&self.model.alpha.to_le_bytes())?;
        w.write_all(&(self.cells as u64).to_le_bytes())?;
        w.write_all(&(self.rank as u64).to_le_bytes())?;
        for v in self.covariance.iter().chain(&self.factor) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let dim = read_u32(&mut r)? as usize;
        let bc = match read_u32(&mut r)? {
            0 => BoundaryCondition::Dirichlet,
            1 => BoundaryCondition::Neumann,
            other => return Err(Error::Format(format!("unknown boundary code {other}"))),
        };
        let n = read_u64(&mut r)? as usize;
        let m = read_u64(&mut r)? as usize;
        let horizon = read_f64(&mut r)?;
        let kind = read_u32(&mut r)?;
        let alpha = read_f64(&mut r)?;
        let grid = GridSpec::new(dim, n, m, horizon, bc).map_err(|e| Error::Format(e.to_string()))?;
        let model = match kind {
            0 => NoiseModel::white(dim),
            1 => NoiseModel::riesz(alpha, dim),
            other => return Err(Error::Format(format!("unknown noise code {other}"))),
        }
        .map_err(|e| Error::Format(e.to_string()))?;
        let cells = read_u64(&mut r)? as usize;
        let rank = read_u64(&mut r)? as usize;
        if cells != grid.lattice_size() || rank > cells {
            return Err(Error::Format(format!("inconsistent sizes cells={cells} rank={rank}")));
        }
        let covariance = (0..cells * cells).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        let factor = (0..cells * rank).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        Ok(Self { grid, model, cells, rank, covariance, factor })
    }

    /// Loads a cached factor when its key matches, otherwise builds and stores it.
    pub fn load_or_build(path: impl AsRef<Path>, model: &NoiseModel, grid: &GridSpec) -> Result<Self> {
        let path = path.as_ref();
        if let Ok(cached) = Self::load(path) {
            if cached.grid == *grid && cached.model == *model {
                return Ok(cached);
            }
        }
        let built = Self::build(model, grid)?;
        built.save(path)?;
        Ok(built)
    }
}

const MAGIC: &[u8; 8] = b"SPDECOV1";

fn bc_code(bc: BoundaryCondition) -> u32 {
    match bc {
        BoundaryCondition::Dirichlet => 0,
        BoundaryCondition::Neumann => 1,
    }
}

fn kind_code(kind: NoiseKind) -> u32 {
    match kind {
        NoiseKind::SpaceTimeWhite => 0,
        NoiseKind::RieszCorrelated => 1,
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Pivoted Cholesky of a symmetric PSD matrix. Pivots below `1e-10 * trace`
/// end the factorization; a remaining diagonal below `-1e-10 * trace`
/// reports indefiniteness.
fn pivoted_cholesky(c: &[f64], k: usize) -> Result<(Vec<f64>, usize)> {
    let trace: f64 = (0..k).map(|i| c[i * k + i]).sum();
    let tol = 1e-10 * trace.abs();
    let mut diag: Vec<f64> = (0..k).map(|i| c[i * k + i]).collect();
    let mut used = vec![false; k];
    // columns stored column-major while building
    let mut cols: Vec<Vec<f64>> = Vec::new();
    loop {
        let (pivot, best) = diag
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .fold((usize::MAX, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        if pivot == usize::MAX || best <= tol {
            if let Some((cell, &v)) =
                diag.iter().enumerate().filter(|(i, _)| !used[*i]).min_by(|a, b| a.1.total_cmp(b.1))
            {
                if v < -tol {
                    return Err(Error::Indefinite { pivot: v, cell });
                }
            }
            break;
        }
        used[pivot] = true;
        let root = best.sqrt();
        let mut col = vec![0.0; k];
        col[pivot] = root;
        for i in 0..k {
            if used[i] {
                continue;
            }
            let mut s = c[i * k + pivot];
            for prev in &cols {
                s -= prev[i] * prev[pivot];
            }
            col[i] = s / root;
            diag[i] -= col[i] * col[i];
        }
        cols.push(col);
    }
    let rank = cols.len();
    let mut factor = vec![0.0; k * rank];
    for (j, col) in cols.iter().enumerate() {
        for i in 0..k {
            factor[i * rank + j] = col[i];
        }
    }
    Ok((factor, rank))
}

/// One time level of realized scaled increments, one value per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSlab {
    pub level: usize,
    pub values: Vec<f64>,
}

/// Private stream for one Monte-Carlo replica, derived from the master seed.
pub fn replica_rng(master_seed: u64, replica: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(replica);
    rng
}

/// Draws `L xi` with `xi` standard normal.
pub fn sample_slab<R: Rng + ?Sized>(factor: &CovarianceFactor, level: usize, rng: &mut R) -> NoiseSlab {
    let (k, r) = (factor.cells, factor.rank);
    let xi: Vec<f64> = (0..r).map(|_| rng.sample(StandardNormal)).collect();
    let values = (0..k)
        .map(|i| factor.factor[i * r..(i + 1) * r].iter().zip(&xi).map(|(l, x)| l * x).sum())
        .collect();
    NoiseSlab { level, values }
}

/// All `m` slabs of one noise path.
pub fn sample_path<R: Rng + ?Sized>(factor: &CovarianceFactor, rng: &mut R) -> Vec<NoiseSlab> {
    (0..factor.grid.m()).map(|i| sample_slab(factor, i, rng)).collect()
}

/// One covariance entry compared with its Monte-Carlo estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceEntry {
    pub a: usize,
    pub b: usize,
    pub analytic: f64,
    pub empirical: f64,
    /// Monte-Carlo standard error of `empirical`.
    pub stderr: f64,
}

impl CovarianceEntry {
    /// `|empirical - analytic|` in standard errors.
    pub fn deviation(&self) -> f64 {
        (self.empirical - self.analytic).abs() / self.stderr
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceCheck {
    pub samples: usize,
    /// Entries with `a <= b` (0-based cells).
    pub entries: Vec<CovarianceEntry>,
}

impl CovarianceCheck {
    pub fn max_deviation(&self) -> f64 {
        self.entries.iter().map(|e| e.deviation()).fold(0.0, f64::max)
    }

    /// CSV `cell_a,cell_b,analytic,empirical,stderr,deviation_se` with 1-based cells.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "cell_a,cell_b,analytic,empirical,stderr,deviation_se")?;
        for e in &self.entries {
            writeln!(
                w,
                "{},{},{:.10e},{:.10e},{:.6e},{:.4}",
                e.a + 1,
                e.b + 1,
                e.analytic,
                e.empirical,
                e.stderr,
                e.deviation()
            )?;
        }
        Ok(())
    }
}

/// Estimates every covariance entry from `samples` independent slabs drawn
/// from the stream `replica_rng(seed, 0)`; the mean is known to be zero.
pub fn empirical_covariance(factor: &CovarianceFactor, samples: usize, seed: u64) -> Result<CovarianceCheck> {
    if samples < 2 {
        return Err(Error::InvalidParameter("need at least two samples".into()));
    }
    let k = factor.cells;
    let pairs = k * (k + 1) / 2;
    let mut sum = vec![0.0; pairs];
    let mut sum_sq = vec![0.0; pairs];
    let mut rng = replica_rng(seed, 0);
    for i in 0..samples {
        let x = sample_slab(factor, i, &mut rng).values;
        let mut p = 0;
        for a in 0..k {
            for b in a..k {
                let v = x[a] * x[b];
                sum[p] += v;
                sum_sq[p] += v * v;
                p += 1;
            }
        }
    }
    let s = samples as f64;
    let mut entries = Vec::with_capacity(pairs);
    let mut p = 0;
    for a in 0..k {
        for b in a..k {
            let mean = sum[p] / s;
            let var = (sum_sq[p] - s * mean * mean) / (s - 1.0);
            entries.push(CovarianceEntry {
                a,
                b,
                analytic: factor.covariance[a * k + b],
                empirical: mean,
                stderr: (var.max(0.0) / s).sqrt(),
            });
            p += 1;
        }
    }
    Ok(CovarianceCheck { samples, entries })
}

/// Exact coarsening of scaled increments from a fine mesh to a coarser one.
///
/// Unscaled measure increments add over merged cells and merged time steps;
/// the result is rescaled by the coarse factor `n_c^d m_c / T`.
#[derive(Debug, Clone)]
pub struct Aggregator {
    fine: GridSpec,
    coarse: GridSpec,
    cell_map: Vec<Option<usize>>,
    steps_per_coarse: usize,
    weight: f64,
}

impl Aggregator {
    pub fn new(fine: &GridSpec, coarse: &GridSpec) -> Result<Self> {
        if fine.dim() != coarse.dim() || fine.bc() != coarse.bc() || fine.horizon() != coarse.horizon() {
            return Err(Error::InvalidParameter("fine and coarse grids differ in geometry".into()));
        }
        if !fine.n().is_multiple_of(coarse.n()) {
            return Err(Error::NonDivisibleMesh { fine: fine.n(), coarse: coarse.n() });
        }
        if !fine.m().is_multiple_of(coarse.m()) {
            return Err(Error::NonDivisibleMesh { fine: fine.m(), coarse: coarse.m() });
        }
        let ratio = (fine.n() / coarse.n()) as i64;
        let pc = coarse.axis_len();
        let origins = cell_origins(fine);
        let coarse_origin_to_index = |o: i64| -> Option<usize> {
            // inverse of GridSpec::cell_origin on the coarse axis
            let k = match coarse.bc() {
                BoundaryCondition::Dirichlet => o,
                BoundaryCondition::Neumann => o + 1,
            };
            (k >= 1 && (k as usize) <= pc).then(|| k as usize - 1)
        };
        let cell_map = origins
            .iter()
            .map(|org| {
                let mut offset = 0;
                let mut stride = 1;
                for &o in org {
                    offset += coarse_origin_to_index(o.div_euclid(ratio))? * stride;
                    stride *= pc;
                }
                Some(offset)
            })
            .collect();
        let steps_per_coarse = fine.m() / coarse.m();
        let d = fine.dim() as i32;
        let fine_scale = (fine.n() as f64).powi(d) * fine.m() as f64;
        let coarse_scale = (coarse.n() as f64).powi(d) * coarse.m() as f64;
        Ok(Self { fine: *fine, coarse: *coarse, cell_map, steps_per_coarse, weight: coarse_scale / fine_scale })
    }

    pub fn fine(&self) -> &GridSpec {
        &self.fine
    }

    pub fn coarse(&self) -> &GridSpec {
        &self.coarse
    }

    pub fn steps_per_coarse(&self) -> usize {
        self.steps_per_coarse
    }

    /// Adds one fine slab into a coarse accumulator.
    pub fn accumulate(&self, fine: &NoiseSlab, acc: &mut [f64]) {
        for (v, target) in fine.values.iter().zip(&self.cell_map) {
            if let Some(c) = target {
                acc[*c] += self.weight * v;
            }
        }
    }

    pub fn apply(&self, fine: &[NoiseSlab]) -> Result<Vec<NoiseSlab>> {
        if fine.len() != self.fine.m() {
            return Err(Error::ShapeMismatch { expected: self.fine.m(), got: fine.len() });
        }
        let kc = self.coarse.lattice_size();
        Ok(fine
            .chunks(self.steps_per_coarse)
            .enumerate()
            .map(|(level, block)| {
                let mut values = vec![0.0; kc];
                for slab in block {
                    self.accumulate(slab, &mut values);
                }
                NoiseSlab { level, values }
            })
            .collect())
    }

    /// Dense matrix of the map on stacked slabs, `(m_c K_c) x (m_f K_f)`,
    /// row-major. Intended for small meshes.
    pub fn matrix(&self) -> (usize, usize, Vec<f64>) {
        let (kf, kc) = (self.fine.lattice_size(), self.coarse.lattice_size());
        let rows = self.coarse.m() * kc;
        let cols = self.fine.m() * kf;
        let mut a = vec![0.0; rows * cols];
        for step in 0..self.fine.m() {
            let block = step / self.steps_per_coarse;
            for (cell, target) in self.cell_map.iter().enumerate() {
                if let Some(c) = target {
                    a[(block * kc + c) * cols + step * kf + cell] = self.weight;
                }
            }
        }
        (rows, cols, a)
    }
}

/// Free-function form of [`Aggregator::apply`].
pub fn aggregate(fine: &[NoiseSlab], fine_grid: &GridSpec, coarse_grid: &GridSpec) -> Result<Vec<NoiseSlab>> {
    Aggregator::new(fine_grid, coarse_grid)?.apply(fine)
}
