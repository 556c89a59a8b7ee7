//! Time stepping of the implicit (backward Euler) and explicit (forward
//! Euler) finite-difference schemes.
//!
//! With `dt = T/m`, `A = n^2 D_n^(d)` and the noise slab `F_i` of step `i`:
//!
//! ```text
//! implicit: u_{i+1} = (Id - dt A)^{-1} (u_i + dt [sigma(t_i, x, u_i) F_i + b(t_i, x, u_i)])
//! explicit: u_{i+1} = u_i + dt A u_i + dt [sigma(t_i, x, u_i) F_i + b(t_i, x, u_i)]
//! ```
//!
//! Coefficients are evaluated pointwise at the lattice sites. The explicit
//! scheme is only accepted when `n^2 T / m <= q < 1/2`.

use std::f64::consts::PI;
use std::io::Write;

use crate::error::{Error, Result};
use crate::lattice::{BoundaryCondition, GridSpec, LatticeField};
use crate::noise::{NoiseModel, NoiseSlab};
use crate::operators::StepOperator;

/// Default explicit-scheme stability margin.
pub const DEFAULT_Q: f64 = 0.45;

/// A coefficient `g(t, x, u)`; all supported families depend on `u` only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Coefficient {
    Constant(f64),
    /// `a u + b`
    Affine { a: f64, b: f64 },
    /// `a + b cos(u)`
    Cosine { a: f64, b: f64 },
}

impl Coefficient {
    pub fn eval(&self, _t: f64, _x: &[f64], u: f64) -> f64 {
        match *self {
            Coefficient::Constant(c) => c,
            Coefficient::Affine { a, b } => a * u + b,
            Coefficient::Cosine { a, b } => a + b * u.cos(),
        }
    }

    /// A global Lipschitz constant in `u`.
    pub fn lipschitz_bound(&self) -> f64 {
        match *self {
            Coefficient::Constant(_) => 0.0,
            Coefficient::Affine { a, b } | Coefficient::Cosine { a, b } => a.abs().max(b.abs()),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(*self, Coefficient::Constant(c) if c == 0.0)
            || matches!(*self, Coefficient::Affine { a, b } if a == 0.0 && b == 0.0)
    }
}

/// Diffusion `sigma` and drift `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientSet {
    pub sigma: Coefficient,
    pub drift: Coefficient,
}

impl CoefficientSet {
    pub fn new(sigma: Coefficient, drift: Coefficient) -> Self {
        Self { sigma, drift }
    }

    /// `sigma = b = 0`: the deterministic heat equation.
    pub fn zero() -> Self {
        Self::new(Coefficient::Constant(0.0), Coefficient::Constant(0.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    Zero,
    /// `amplitude * prod_j sin(pi x_j)`
    SineProduct { amplitude: f64 },
    /// `prod_j x_j (1 - x_j)`
    Bump,
    /// Explicit lattice values in storage order.
    Table(Vec<f64>),
}

impl InitialCondition {
    /// Value at a point of the closed cube; `None` for tables.
    pub fn eval(&self, x: &[f64]) -> Option<f64> {
        match self {
            InitialCondition::Zero => Some(0.0),
            InitialCondition::SineProduct { amplitude } => {
                Some(amplitude * x.iter().map(|v| (PI * v).sin()).product::<f64>())
            }
            InitialCondition::Bump => Some(x.iter().map(|v| v * (1.0 - v)).product()),
            InitialCondition::Table(_) => None,
        }
    }

    pub fn sample(&self, grid: &GridSpec) -> Result<LatticeField> {
        match self {
            InitialCondition::Table(values) => LatticeField::new(*grid, 0, values.clone()),
            other => LatticeField::from_fn(*grid, 0, |x| other.eval(x).unwrap_or(0.0)),
        }
    }

    /// Largest absolute value on the boundary nodes of the grid.
    pub fn boundary_max(&self, grid: &GridSpec) -> f64 {
        if matches!(self, InitialCondition::Table(_)) {
            return 0.0;
        }
        let n = grid.n();
        let d = grid.dim();
        let mut worst: f64 = 0.0;
        let mut idx = vec![0usize; d];
        loop {
            if idx.iter().any(|&k| k == 0 || k == n) {
                let x: Vec<f64> = idx.iter().map(|&k| k as f64 / n as f64).collect();
                worst = worst.max(self.eval(&x).unwrap_or(0.0).abs());
            }
            let mut axis = 0;
            loop {
                if axis == d {
                    return worst;
                }
                idx[axis] += 1;
                if idx[axis] <= n {
                    break;
                }
                idx[axis] = 0;
                axis += 1;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeKind {
    Implicit,
    Explicit,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RecordLevels {
    All,
    Final,
    Levels(Vec<usize>),
}

impl RecordLevels {
    fn contains(&self, level: usize, m: usize) -> bool {
        match self {
            RecordLevels::All => true,
            RecordLevels::Final => level == m,
            RecordLevels::Levels(ls) => ls.contains(&level),
        }
    }
}

/// Rejects explicit configurations outside `n^2 T/m <= q < 1/2`.
pub fn check_stability(grid: &GridSpec, q: f64) -> Result<()> {
    if !(q > 0.0 && q < 0.5) {
        return Err(Error::InvalidParameter(format!("stability margin q = {q} must lie in (0, 1/2)")));
    }
    let ratio = grid.parabolic_ratio();
    if ratio > q {
        return Err(Error::Stability { ratio, q });
    }
    Ok(())
}

/// Everything that defines one trajectory except the noise realization.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeRun {
    grid: GridSpec,
    coefficients: CoefficientSet,
    initial: InitialCondition,
    noise: NoiseModel,
    kind: SchemeKind,
    seed: u64,
    record: RecordLevels,
    q: f64,
}

impl SchemeRun {
    pub fn new(
        grid: GridSpec,
        coefficients: CoefficientSet,
        initial: InitialCondition,
        noise: NoiseModel,
        kind: SchemeKind,
    ) -> Result<Self> {
        Self::with_margin(grid, coefficients, initial, noise, kind, DEFAULT_Q)
    }

    /// As [`SchemeRun::new`] with the explicit stability margin `q`.
    pub fn with_margin(
        grid: GridSpec,
        coefficients: CoefficientSet,
        initial: InitialCondition,
        noise: NoiseModel,
        kind: SchemeKind,
        q: f64,
    ) -> Result<Self> {
        let run = Self { grid, coefficients, initial, noise, kind, seed: 0, record: RecordLevels::All, q };
        run.validate()?;
        Ok(run)
    }

    fn validate(&self) -> Result<()> {
        if self.noise.dim() != self.grid.dim() {
            return Err(Error::ShapeMismatch { expected: self.grid.dim(), got: self.noise.dim() });
        }
        if self.kind == SchemeKind::Explicit {
            check_stability(&self.grid, self.q)?;
        }
        if let InitialCondition::Table(v) = &self.initial {
            if v.len() != self.grid.lattice_size() {
                return Err(Error::ShapeMismatch { expected: self.grid.lattice_size(), got: v.len() });
            }
        }
        if self.grid.bc() == BoundaryCondition::Dirichlet && self.initial.boundary_max(&self.grid) > 1e-12 {
            return Err(Error::InvalidParameter("initial condition must vanish on the boundary".into()));
        }
        if let RecordLevels::Levels(ls) = &self.record {
            if let Some(&bad) = ls.iter().find(|&&l| l > self.grid.m()) {
                return Err(Error::InvalidParameter(format!("recorded level {bad} exceeds m = {}", self.grid.m())));
            }
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_record(mut self, record: RecordLevels) -> Result<Self> {
        self.record = record;
        self.validate()?;
        Ok(self)
    }

    pub fn with_q(mut self, q: f64) -> Result<Self> {
        self.q = q;
        self.validate()?;
        Ok(self)
    }

    /// Same run on another grid (used for mesh ladders).
    pub fn with_grid(mut self, grid: GridSpec) -> Result<Self> {
        self.grid = grid;
        self.validate()?;
        Ok(self)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn coefficients(&self) -> &CoefficientSet {
        &self.coefficients
    }

    pub fn initial(&self) -> &InitialCondition {
        &self.initial
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn kind(&self) -> SchemeKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn record(&self) -> &RecordLevels {
        &self.record
    }

    pub fn q(&self) -> f64 {
        self.q
    }
}

/// A run with its precomputed step operator and lattice coordinates.
#[derive(Debug, Clone)]
pub struct Stepper {
    run: SchemeRun,
    op: StepOperator,
    points: Vec<Vec<f64>>,
}

impl Stepper {
    pub fn new(run: SchemeRun) -> Self {
        let op = StepOperator::new(run.grid());
        let points = run.grid().points();
        Self { run, op, points }
    }

    pub fn run(&self) -> &SchemeRun {
        &self.run
    }

    pub fn initial(&self) -> Result<Vec<f64>> {
        Ok(self.run.initial.sample(&self.run.grid)?.into_values())
    }

    /// Advances `u` from `level` to `level + 1` in place; `scratch` must
    /// have the lattice size.
    pub fn advance(&self, u: &mut [f64], slab: &[f64], level: usize, scratch: &mut [f64]) -> Result<()> {
        let grid = &self.run.grid;
        let dt = grid.dt();
        let t = grid.time(level);
        let CoefficientSet { sigma, drift } = self.run.coefficients;
        match self.run.kind {
            SchemeKind::Implicit => {
                for (k, v) in u.iter_mut().enumerate() {
                    let x = &self.points[k];
                    *v += dt * (sigma.eval(t, x, *v) * slab[k] + drift.eval(t, x, *v));
                }
                self.op.implicit_into(u, scratch);
                u.copy_from_slice(scratch);
            }
            SchemeKind::Explicit => {
                self.op.explicit_into(u, scratch);
                for (k, (v, s)) in u.iter_mut().zip(scratch.iter()).enumerate() {
                    let x = &self.points[k];
                    *v = s + dt * (sigma.eval(t, x, *v) * slab[k] + drift.eval(t, x, *v));
                }
            }
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalAbort { level: level + 1 });
        }
        Ok(())
    }

    fn check_slab(&self, slab: &NoiseSlab) -> Result<()> {
        let k = self.run.grid.lattice_size();
        if slab.values.len() != k {
            return Err(Error::ShapeMismatch { expected: k, got: slab.values.len() });
        }
        Ok(())
    }

    /// One step from a field; the field's level is the step index.
    pub fn step(&self, u: &LatticeField, slab: &NoiseSlab) -> Result<LatticeField> {
        if u.grid() != self.run.grid() {
            return Err(Error::InvalidParameter("field grid differs from run grid".into()));
        }
        self.check_slab(slab)?;
        let mut values = u.values().to_vec();
        let mut scratch = vec![0.0; values.len()];
        self.advance(&mut values, &slab.values, u.level(), &mut scratch)?;
        LatticeField::new(*u.grid(), u.level() + 1, values)
    }

    /// Iterates all `m` steps, recording the requested levels.
    pub fn trajectory(&self, slabs: &[NoiseSlab]) -> Result<Trajectory> {
        let grid = self.run.grid;
        if slabs.len() != grid.m() {
            return Err(Error::ShapeMismatch { expected: grid.m(), got: slabs.len() });
        }
        let mut u = self.initial()?;
        let mut scratch = vec![0.0; u.len()];
        let mut levels = Vec::new();
        if self.run.record.contains(0, grid.m()) {
            levels.push(LatticeField::new(grid, 0, u.clone())?);
        }
        for (i, slab) in slabs.iter().enumerate() {
            self.check_slab(slab)?;
            self.advance(&mut u, &slab.values, i, &mut scratch)?;
            if self.run.record.contains(i + 1, grid.m()) {
                levels.push(LatticeField::new(grid, i + 1, u.clone())?);
            }
        }
        Ok(Trajectory { grid, levels })
    }

    /// Solution at level `m` only.
    pub fn final_values(&self, slabs: &[NoiseSlab]) -> Result<Vec<f64>> {
        let grid = self.run.grid;
        if slabs.len() != grid.m() {
            return Err(Error::ShapeMismatch { expected: grid.m(), got: slabs.len() });
        }
        let mut u = self.initial()?;
        let mut scratch = vec![0.0; u.len()];
        for (i, slab) in slabs.iter().enumerate() {
            self.check_slab(slab)?;
            self.advance(&mut u, &slab.values, i, &mut scratch)?;
        }
        Ok(u)
    }
}

pub fn step_implicit(u: &LatticeField, slab: &NoiseSlab, run: &SchemeRun) -> Result<LatticeField> {
    if run.kind() != SchemeKind::Implicit {
        return Err(Error::InvalidParameter("run is not implicit".into()));
    }
    Stepper::new(run.clone()).step(u, slab)
}

pub fn step_explicit(u: &LatticeField, slab: &NoiseSlab, run: &SchemeRun) -> Result<LatticeField> {
    if run.kind() != SchemeKind::Explicit {
        return Err(Error::InvalidParameter("run is not explicit".into()));
    }
    Stepper::new(run.clone()).step(u, slab)
}

/// Runs the scheme over a full noise path.
pub fn run(run: &SchemeRun, slabs: &[NoiseSlab]) -> Result<Trajectory> {
    Stepper::new(run.clone()).trajectory(slabs)
}

/// Recorded time levels of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: GridSpec,
    levels: Vec<LatticeField>,
}

impl Trajectory {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn levels(&self) -> &[LatticeField] {
        &self.levels
    }

    pub fn level(&self, level: usize) -> Option<&LatticeField> {
        self.levels.iter().find(|f| f.level() == level)
    }

    pub fn last(&self) -> Option<&LatticeField> {
        self.levels.last()
    }

    /// Space-multilinear, time-linear interpolation; the two time levels
    /// bracketing `t` must have been recorded.
    pub fn value_at(&self, t: f64, x: &[f64]) -> Result<f64> {
        let g = &self.grid;
        if !(0.0..=g.horizon()).contains(&t) {
            return Err(Error::InvalidParameter(format!("t = {t} outside [0, {}]", g.horizon())));
        }
        let s = t / g.dt();
        let lo = (s.floor() as usize).min(g.m());
        let w = s - lo as f64;
        let missing = |l| Error::InvalidParameter(format!("level {l} was not recorded"));
        let a = self.level(lo).ok_or_else(|| missing(lo))?.interpolate(x)?;
        if w == 0.0 {
            return Ok(a);
        }
        let b = self.level(lo + 1).ok_or_else(|| missing(lo + 1))?.interpolate(x)?;
        Ok((1.0 - w) * a + w * b)
    }

    /// CSV with columns `level,t,flat_index,value` (1-based flat index).
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "level,t,flat_index,value")?;
        for f in &self.levels {
            let t = f.time();
            for (i, v) in f.values().iter().enumerate() {
                writeln!(w, "{},{},{},{}", f.level(), t, i + 1, v)?;
            }
        }
        Ok(())
    }

    /// Binary dump: magic `SPDETRJ1`, `dim:u32 bc:u32 n:u64 m:u64 T:f64
    /// levels:u64 size:u64`, then per level `level:u64` and `size` values,
    /// all little-endian.
    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        let g = &self.grid;
        w.write_all(b"SPDETRJ1")?;
        w.write_all(&(g.dim() as u32).to_le_bytes())?;
        let bc: u32 = match g.bc() {
            BoundaryCondition::Dirichlet => 0,
            BoundaryCondition::Neumann => 1,
        };
        w.write_all(&bc.to_le_bytes())?;
        w.write_all(&(g.n() as u64).to_le_bytes())?;
        w.write_all(&(g.m() as u64).to_le_bytes())?;
        w.write_all(&g.horizon().to_le_bytes())?;
        w.write_all(&(self.levels.len() as u64).to_le_bytes())?;
        w.write_all(&(g.lattice_size() as u64).to_le_bytes())?;
        for f in &self.levels {
            w.write_all(&(f.level() as u64).to_le_bytes())?;
            for v in f.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }
}
