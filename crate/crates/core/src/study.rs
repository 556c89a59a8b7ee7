//! Monte-Carlo convergence studies on coupled mesh ladders and log-log
//! regression against the theoretical exponents.
//!
//! Each replica draws one noise path on the finest grid and aggregates it to
//! every ladder mesh, so all meshes see the same realization. The error of
//! mesh `h` is `E |u_ref(t*, x) - u_h(t*, x)|^2`, estimated at the evaluation
//! point (`mid`) and as the max over the points shared by every ladder
//! lattice of the per-point Monte-Carlo mean (`sup`).
//!
//! Slopes use the convention `ln e = intercept - slope ln mesh`, so a positive
//! slope means the error decreases as the mesh is refined.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{multilinear, GridSpec};
use crate::noise::{check_alpha, replica_rng, sample_path, Aggregator, CovarianceFactor, NoiseModel};
use crate::schemes::{CoefficientSet, InitialCondition, SchemeKind, SchemeRun, Stepper, DEFAULT_Q};

/// Largest acceptable fraction of aborted replicas.
pub const MAX_ABORT_FRACTION: f64 = 0.01;

/// Which mesh a study refines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Vary `m` at fixed `n`.
    Time,
    /// Vary `n` at fixed `m`.
    Space,
}

impl Axis {
    pub fn label(&self) -> &'static str {
        match self {
            Axis::Time => "time",
            Axis::Space => "space",
        }
    }
}

/// `1 - alpha/2` (time) or `2 - alpha` (space) for Riesz noise; `1/2` and `1`
/// for space-time white noise (`alpha = None`, `d = 1` only).
pub fn theoretical_exponent(alpha: Option<f64>, axis: Axis, dim: usize) -> Result<f64> {
    match alpha {
        Some(a) => {
            check_alpha(a, dim)?;
            Ok(match axis {
                Axis::Time => 1.0 - a / 2.0,
                Axis::Space => 2.0 - a,
            })
        }
        None if dim != 1 => Err(Error::WhiteNoiseDimension(dim)),
        None => Ok(match axis {
            Axis::Time => 0.5,
            Axis::Space => 1.0,
        }),
    }
}

/// Ordinary least-squares line `y = intercept + slope x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope; `NaN` for two points.
    pub slope_stddev: f64,
}

/// Least-squares fit through `(xs, ys)`; needs at least two distinct abscissae.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    if xs.len() != ys.len() {
        return Err(Error::ShapeMismatch { expected: xs.len(), got: ys.len() });
    }
    if xs.len() < 2 {
        return Err(Error::Regression(format!("need at least 2 points, got {}", xs.len())));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Regression("non-finite input".into()));
    }
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::Regression("abscissae are all equal".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_stddev = if xs.len() > 2 {
        let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
        (rss / (k - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Ok(LineFit { slope, intercept, slope_stddev })
}

/// Regresses `ln error` on `-ln mesh`: the slope is the observed decay order.
pub fn loglog_regression(points: &[(f64, f64)]) -> Result<LineFit> {
    if let Some(&(m, e)) = points.iter().find(|(m, e)| !(*m > 0.0 && *e > 0.0)) {
        return Err(Error::Regression(format!("mesh {m} and error {e} must be positive")));
    }
    let xs: Vec<f64> = points.iter().map(|(m, _)| -m.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, e)| e.ln()).collect();
    fit_line(&xs, &ys)
}

/// A coupled-mesh convergence experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyPlan {
    pub axis: Axis,
    /// Reference grid: finest `m` (time axis) or finest `n` (space axis).
    pub grid: GridSpec,
    /// Coarser meshes; each divides the reference mesh of the axis.
    pub ladder: Vec<usize>,
    pub replicas: usize,
    /// Evaluation time; must lie on every ladder time grid.
    pub t_star: f64,
    /// Evaluation point, interpolated on each lattice.
    pub x_star: Vec<f64>,
    pub noise: NoiseModel,
    pub coefficients: CoefficientSet,
    pub initial: InitialCondition,
    pub scheme: SchemeKind,
    pub seed: u64,
    /// Explicit-scheme stability margin.
    pub q: f64,
    /// Run replicas on the rayon pool.
    pub parallel: bool,
}

impl StudyPlan {
    /// Plan with `t* = T`, `x*` the centre of the cube, the default stability
    /// margin and parallel replicas.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        axis: Axis,
        grid: GridSpec,
        ladder: Vec<usize>,
        replicas: usize,
        noise: NoiseModel,
        coefficients: CoefficientSet,
        initial: InitialCondition,
        scheme: SchemeKind,
        seed: u64,
    ) -> Self {
        Self {
            axis,
            grid,
            ladder,
            replicas,
            t_star: grid.horizon(),
            x_star: vec![0.5; grid.dim()],
            noise,
            coefficients,
            initial,
            scheme,
            seed,
            q: DEFAULT_Q,
            parallel: true,
        }
    }

    pub fn reference_mesh(&self) -> usize {
        match self.axis {
            Axis::Time => self.grid.m(),
            Axis::Space => self.grid.n(),
        }
    }

    /// Grid of one ladder mesh.
    pub fn mesh_grid(&self, mesh: usize) -> Result<GridSpec> {
        match self.axis {
            Axis::Time => self.grid.with_m(mesh),
            Axis::Space => self.grid.with_n(mesh),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.ladder.is_empty() {
            return Err(Error::Study("empty mesh ladder".into()));
        }
        if self.replicas == 0 {
            return Err(Error::Study("need at least one replica".into()));
        }
        let reference = self.reference_mesh();
        let mut seen = self.ladder.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.ladder.len() {
            return Err(Error::Study(format!("repeated meshes in ladder {:?}", self.ladder)));
        }
        for &mesh in &self.ladder {
            if mesh == 0 || !reference.is_multiple_of(mesh) {
                return Err(Error::NonDivisibleMesh { fine: reference, coarse: mesh });
            }
        }
        let fitted = self.ladder.iter().filter(|&&m| m != reference).count();
        if fitted < 2 {
            return Err(Error::Regression(format!("need at least 2 meshes coarser than {reference}, got {fitted}")));
        }
        if self.noise.dim() != self.grid.dim() {
            return Err(Error::ShapeMismatch { expected: self.grid.dim(), got: self.noise.dim() });
        }
        if self.x_star.len() != self.grid.dim() {
            return Err(Error::ShapeMismatch { expected: self.grid.dim(), got: self.x_star.len() });
        }
        if self.x_star.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::PointOutsideDomain(self.x_star.clone()));
        }
        if !(self.t_star > 0.0 && self.t_star <= self.grid.horizon() * (1.0 + 1e-12)) {
            return Err(Error::Study(format!("evaluation time {} outside (0, T]", self.t_star)));
        }
        for grid in self.grids()? {
            self.target_level(&grid)?;
        }
        Ok(())
    }

    /// Reference grid followed by the ladder grids.
    fn grids(&self) -> Result<Vec<GridSpec>> {
        std::iter::once(Ok(self.grid)).chain(self.ladder.iter().map(|&m| self.mesh_grid(m))).collect()
    }

    fn target_level(&self, grid: &GridSpec) -> Result<usize> {
        let steps = self.t_star / grid.dt();
        let level = steps.round();
        if (steps - level).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::Study(format!("t* = {} is not on the time grid with m = {}", self.t_star, grid.m())));
        }
        Ok(level as usize)
    }

    fn run_for(&self, grid: GridSpec) -> Result<SchemeRun> {
        SchemeRun::with_margin(grid, self.coefficients, self.initial.clone(), self.noise, self.scheme, self.q)
    }

    /// Points shared by every lattice of the ladder: `j/g` with `g` the gcd of
    /// all `n`, falling back to `x*` when there are none.
    pub fn sup_points(&self) -> Vec<Vec<f64>> {
        let g = match self.axis {
            Axis::Time => self.grid.n(),
            Axis::Space => self.ladder.iter().fold(self.grid.n(), |a, &b| gcd(a, b)),
        };
        if g < 2 {
            return vec![self.x_star.clone()];
        }
        let d = self.grid.dim();
        let per_axis = g - 1;
        (0..per_axis.pow(d as u32))
            .map(|mut i| {
                (0..d)
                    .map(|_| {
                        let k = i % per_axis + 1;
                        i /= per_axis;
                        k as f64 / g as f64
                    })
                    .collect()
            })
            .collect()
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Estimates for one ladder mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct LadderEntry {
    pub mesh: usize,
    pub error_mid: f64,
    pub stderr_mid: f64,
    pub error_sup: f64,
    pub stderr_sup: f64,
    /// `max_x E |u_h(t*, x)|^2` over the sup points.
    pub second_moment_sup: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub axis: Axis,
    pub noise_label: String,
    pub reference_mesh: usize,
    pub entries: Vec<LadderEntry>,
    /// `max_x E |u_ref(t*, x)|^2`.
    pub reference_second_moment_sup: f64,
    pub fit_mid: LineFit,
    pub fit_sup: LineFit,
    pub theory_exponent: f64,
    /// Replicas that entered the estimates.
    pub replicas: usize,
    pub aborted: usize,
    pub seed: u64,
}

impl ConvergenceReport {
    /// CSV with one row per ladder mesh (error columns) followed by a row
    /// with `mesh = summary` (slope columns); `slope_stddev` belongs to the
    /// midpoint fit.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(
            w,
            "axis,alpha_or_white,mesh,error_mid,stderr_mid,error_sup,stderr_sup,slope_mid,slope_sup,slope_stddev,theory_exponent,replicas,aborted,seed"
        )?;
        let (axis, noise) = (self.axis.label(), &self.noise_label);
        let tail = format!("{},{},{},{}", self.theory_exponent, self.replicas, self.aborted, self.seed);
        for e in &self.entries {
            writeln!(
                w,
                "{axis},{noise},{},{:.10e},{:.10e},{:.10e},{:.10e},,,,{tail}",
                e.mesh, e.error_mid, e.stderr_mid, e.error_sup, e.stderr_sup
            )?;
        }
        writeln!(
            w,
            "{axis},{noise},summary,,,,,{:.6},{:.6},{:.6},{tail}",
            self.fit_mid.slope, self.fit_sup.slope, self.fit_mid.slope_stddev
        )?;
        Ok(())
    }

    /// Whitespace-separated columns for plotting: `ln_mesh ln_error_mid
    /// ln_error_sup fit_mid fit_sup`. Meshes with zero error are skipped.
    pub fn write_plot_data(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "# ln_mesh ln_error_mid ln_error_sup fit_mid fit_sup")?;
        for e in self.entries.iter().filter(|e| e.error_mid > 0.0 && e.error_sup > 0.0) {
            let x = (e.mesh as f64).ln();
            let fit = |f: &LineFit| f.intercept - f.slope * x;
            writeln!(w, "{x:.8} {:.8} {:.8} {:.8} {:.8}", e.error_mid.ln(), e.error_sup.ln(), fit(&self.fit_mid), fit(&self.fit_sup))?;
        }
        Ok(())
    }

    /// CSV `mesh,second_moment_sup`, reference mesh first.
    pub fn write_moments_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "mesh,second_moment_sup")?;
        writeln!(w, "{},{:.10e}", self.reference_mesh, self.reference_second_moment_sup)?;
        for e in &self.entries {
            writeln!(w, "{},{:.10e}", e.mesh, e.second_moment_sup)?;
        }
        Ok(())
    }

    /// `(max - min) / min` of the sup second moments over reference and ladder.
    pub fn moment_spread(&self) -> f64 {
        let all = std::iter::once(self.reference_second_moment_sup).chain(self.entries.iter().map(|e| e.second_moment_sup));
        let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        (hi - lo) / lo
    }
}

/// Values of one replica: per grid (reference first) the solution at `x*`
/// and at the sup points.
struct ReplicaValues {
    mid: Vec<f64>,
    sup: Vec<Vec<f64>>,
}

struct Workspace {
    stepper: Stepper,
    aggregator: Aggregator,
    level: usize,
}

fn simulate(plan: &StudyPlan, factor: &CovarianceFactor, work: &[Workspace], points: &[Vec<f64>], replica: usize) -> Result<ReplicaValues> {
    let mut rng = replica_rng(plan.seed, replica as u64);
    let fine = sample_path(factor, &mut rng);
    let mut mid = Vec::with_capacity(work.len());
    let mut sup = Vec::with_capacity(work.len());
    for w in work {
        let slabs = w.aggregator.apply(&fine)?;
        let grid = w.stepper.run().grid();
        let mut u = w.stepper.initial()?;
        let mut scratch = vec![0.0; u.len()];
        for (i, slab) in slabs.iter().take(w.level).enumerate() {
            w.stepper.advance(&mut u, &slab.values, i, &mut scratch)?;
        }
        mid.push(multilinear(grid, &u, &plan.x_star));
        sup.push(points.iter().map(|x| multilinear(grid, &u, x)).collect());
    }
    Ok(ReplicaValues { mid, sup })
}

fn mean_and_stderr(samples: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let k = samples.clone().count() as f64;
    let mean = samples.clone().sum::<f64>() / k;
    if k < 2.0 {
        return (mean, f64::NAN);
    }
    let var = samples.map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Runs the study. Replicas whose scheme produces non-finite values are
/// excluded and counted; more than 1% of them aborts the study.
pub fn run_study(plan: &StudyPlan) -> Result<ConvergenceReport> {
    plan.validate()?;
    let theory_exponent = theoretical_exponent(plan.noise.alpha(), plan.axis, plan.grid.dim())?;
    let factor = CovarianceFactor::build(&plan.noise, &plan.grid)?;
    let work = plan
        .grids()?
        .into_iter()
        .map(|grid| {
            Ok(Workspace {
                stepper: Stepper::new(plan.run_for(grid)?),
                aggregator: Aggregator::new(&plan.grid, &grid)?,
                level: plan.target_level(&grid)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let points = plan.sup_points();
    log::info!(
        "study: axis={} reference={} ladder={:?} replicas={} sup points={}",
        plan.axis.label(),
        plan.reference_mesh(),
        plan.ladder,
        plan.replicas,
        points.len()
    );

    let one = |r: usize| simulate(plan, &factor, &work, &points, r);
    let outcomes: Vec<Result<ReplicaValues>> = if plan.parallel {
        (0..plan.replicas).into_par_iter().map(one).collect()
    } else {
        (0..plan.replicas).map(one).collect()
    };
    let mut kept = Vec::with_capacity(outcomes.len());
    let mut aborted = 0;
    for (r, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(v) => kept.push(v),
            Err(Error::NumericalAbort { level }) => {
                log::warn!("replica {r} aborted at level {level}");
                aborted += 1;
            }
            Err(e) => return Err(e),
        }
    }
    if aborted as f64 > MAX_ABORT_FRACTION * plan.replicas as f64 {
        return Err(Error::TooManyAborts { aborted, replicas: plan.replicas });
    }
    if kept.is_empty() {
        return Err(Error::Study("no replica completed".into()));
    }

    let sup_moment = |g: usize| {
        (0..points.len())
            .map(|p| kept.iter().map(|v| v.sup[g][p].powi(2)).sum::<f64>() / kept.len() as f64)
            .fold(0.0, f64::max)
    };
    let entries: Vec<LadderEntry> = plan
        .ladder
        .iter()
        .enumerate()
        .map(|(i, &mesh)| {
            let g = i + 1;
            let (error_mid, stderr_mid) = mean_and_stderr(kept.iter().map(|v| (v.mid[0] - v.mid[g]).powi(2)));
            let mut best = (f64::NEG_INFINITY, f64::NAN);
            for p in 0..points.len() {
                let est = mean_and_stderr(kept.iter().map(|v| (v.sup[0][p] - v.sup[g][p]).powi(2)));
                if est.0 > best.0 {
                    best = est;
                }
            }
            LadderEntry {
                mesh,
                error_mid,
                stderr_mid,
                error_sup: best.0,
                stderr_sup: best.1,
                second_moment_sup: sup_moment(g),
            }
        })
        .collect();

    // the reference mesh itself has zero error and stays out of the fit
    let fit = |f: fn(&LadderEntry) -> f64| {
        let pts: Vec<(f64, f64)> = entries
            .iter()
            .filter(|e| e.mesh != plan.reference_mesh())
            .map(|e| (e.mesh as f64, f(e)))
            .collect();
        loglog_regression(&pts)
    };
    let fit_mid = fit(|e| e.error_mid)?;
    let fit_sup = fit(|e| e.error_sup)?;
    Ok(ConvergenceReport {
        axis: plan.axis,
        noise_label: plan.noise.label(),
        reference_mesh: plan.reference_mesh(),
        entries,
        reference_second_moment_sup: sup_moment(0),
        fit_mid,
        fit_sup,
        theory_exponent,
        replicas: kept.len(),
        aborted,
        seed: plan.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::BoundaryCondition;
    use crate::schemes::Coefficient;

    fn plan(axis: Axis, grid: GridSpec, ladder: Vec<usize>, replicas: usize, coefficients: CoefficientSet) -> StudyPlan {
        StudyPlan::new(
            axis,
            grid,
            ladder,
            replicas,
            NoiseModel::riesz(0.5, 1).unwrap(),
            coefficients,
            InitialCondition::SineProduct { amplitude: 1.0 },
            SchemeKind::Implicit,
            7,
        )
    }

    fn noisy() -> CoefficientSet {
        CoefficientSet::new(Coefficient::Affine { a: 0.2, b: 1.0 }, Coefficient::Affine { a: 1.0, b: 2.0 })
    }

    #[test]
    fn exponents() {
        assert_eq!(theoretical_exponent(Some(0.8), Axis::Time, 1).unwrap(), 0.6);
        assert_eq!(theoretical_exponent(Some(0.5), Axis::Space, 1).unwrap(), 1.5);
        assert_eq!(theoretical_exponent(None, Axis::Time, 1).unwrap(), 0.5);
        assert_eq!(theoretical_exponent(None, Axis::Space, 1).unwrap(), 1.0);
        assert!(matches!(theoretical_exponent(None, Axis::Time, 2), Err(Error::WhiteNoiseDimension(2))));
        assert!(theoretical_exponent(Some(1.0), Axis::Time, 1).is_err());
        assert_eq!(theoretical_exponent(Some(1.5), Axis::Space, 2).unwrap(), 0.5);
    }

    #[test]
    fn regression_of_exact_power_law() {
        let pts: Vec<(f64, f64)> = [8.0, 16.0, 32.0, 64.0].iter().map(|&m: &f64| (m, 3.0 * m.powf(-0.75))).collect();
        let fit = loglog_regression(&pts).unwrap();
        assert!((fit.slope - 0.75).abs() < 1e-12);
        assert!(fit.slope_stddev.abs() < 1e-12);
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-12);
        let flat = loglog_regression(&[(2.0, 1.0), (4.0, 1.0), (8.0, 1.0)]).unwrap();
        assert_eq!(flat.slope, 0.0);
        assert!(loglog_regression(&[(2.0, 1.0)]).is_err());
        assert!(loglog_regression(&[(2.0, 1.0), (4.0, 0.0)]).is_err());
        assert!(fit_line(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(fit_line(&[1.0, 2.0], &[1.0, 2.0]).unwrap().slope_stddev.is_nan());
    }

    #[test]
    fn deterministic_time_study_has_order_two() {
        let grid = GridSpec::unit(1, 16, 32768).unwrap();
        let p = plan(Axis::Time, grid, vec![512, 1024, 2048, 4096], 2, CoefficientSet::zero());
        let report = run_study(&p).unwrap();
        assert!((report.fit_mid.slope - 2.0).abs() < 0.3, "slope {}", report.fit_mid.slope);
        assert!((report.fit_sup.slope - 2.0).abs() < 0.3);
        assert!(report.entries.iter().all(|e| e.stderr_mid.abs() < 1e-14));
    }

    #[test]
    fn single_entry_ladder_cannot_be_fitted() {
        let grid = GridSpec::unit(1, 8, 64).unwrap();
        let p = plan(Axis::Time, grid, vec![16], 2, noisy());
        assert!(matches!(run_study(&p), Err(Error::Regression(_))));
    }

    #[test]
    fn reference_mesh_has_zero_error() {
        let grid = GridSpec::unit(1, 8, 64).unwrap();
        let p = plan(Axis::Time, grid, vec![16, 32, 64], 8, noisy());
        let report = run_study(&p).unwrap();
        let last = report.entries.last().unwrap();
        assert_eq!(last.mesh, 64);
        assert_eq!(last.error_mid, 0.0);
        assert_eq!(last.error_sup, 0.0);
        assert!(report.entries[0].error_mid > 0.0);
    }

    #[test]
    fn parallel_equals_serial_and_reruns_match() {
        let grid = GridSpec::unit(1, 16, 64).unwrap();
        let mut p = plan(Axis::Space, grid, vec![4, 8], 12, noisy());
        let a = run_study(&p).unwrap();
        let b = run_study(&p).unwrap();
        p.parallel = false;
        let c = run_study(&p).unwrap();
        // Debug output compares NaN slope deviations as equal
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
        assert_eq!(format!("{a:?}"), format!("{c:?}"));
        let mut x = Vec::new();
        let mut y = Vec::new();
        a.write_csv(&mut x).unwrap();
        c.write_csv(&mut y).unwrap();
        assert_eq!(x, y);
        p.seed = 8;
        assert_ne!(run_study(&p).unwrap().entries, a.entries);
    }

    #[test]
    fn sup_points_are_common_lattice_points() {
        let grid = GridSpec::unit(1, 96, 16).unwrap();
        let p = plan(Axis::Space, grid, vec![12, 16, 24, 32, 48], 1, noisy());
        let pts: Vec<f64> = p.sup_points().into_iter().map(|x| x[0]).collect();
        assert_eq!(pts, vec![0.25, 0.5, 0.75]);
        let time = plan(Axis::Time, GridSpec::unit(2, 4, 16).unwrap(), vec![4], 1, noisy());
        assert_eq!(time.sup_points().len(), 9);
    }

    #[test]
    fn invalid_plans_are_rejected() {
        let grid = GridSpec::unit(1, 8, 64).unwrap();
        assert!(matches!(run_study(&plan(Axis::Time, grid, vec![24], 2, noisy())), Err(Error::NonDivisibleMesh { .. })));
        assert!(run_study(&plan(Axis::Time, grid, vec![], 2, noisy())).is_err());
        assert!(run_study(&plan(Axis::Time, grid, vec![16, 16], 2, noisy())).is_err());
        assert!(run_study(&plan(Axis::Time, grid, vec![16], 0, noisy())).is_err());
        let mut p = plan(Axis::Time, grid, vec![16, 32], 2, noisy());
        p.t_star = 0.3;
        assert!(matches!(run_study(&p), Err(Error::Study(_))));
        let mut explicit = plan(Axis::Time, grid, vec![16, 32], 2, noisy());
        explicit.scheme = SchemeKind::Explicit;
        assert!(matches!(run_study(&explicit), Err(Error::Stability { .. })));
        let neumann = GridSpec::new(1, 8, 64, 1.0, BoundaryCondition::Neumann).unwrap();
        let mut p = plan(Axis::Time, neumann, vec![16, 32], 2, noisy());
        p.initial = InitialCondition::Bump;
        assert!(run_study(&p).is_ok());
    }

    #[test]
    fn too_many_aborts_fail_the_study() {
        let grid = GridSpec::unit(1, 8, 64).unwrap();
        let blowup = CoefficientSet::new(Coefficient::Constant(1.0), Coefficient::Affine { a: 1e300, b: 1e300 });
        let p = plan(Axis::Time, grid, vec![16, 32], 4, blowup);
        assert!(matches!(run_study(&p), Err(Error::TooManyAborts { aborted: 4, replicas: 4 })));
    }

    #[test]
    fn report_exports() {
        let grid = GridSpec::unit(1, 8, 64).unwrap();
        let report = run_study(&plan(Axis::Time, grid, vec![8, 16, 32], 6, noisy())).unwrap();
        let mut csv = Vec::new();
        report.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().nth(1).unwrap().starts_with("time,0.5,8,"));
        let summary: Vec<&str> = text.lines().last().unwrap().split(',').collect();
        assert_eq!(summary.len(), 14);
        assert_eq!(summary[2], "summary");
        assert!(summary[3].is_empty() && summary[7].parse::<f64>().is_ok());
        let mut plot = Vec::new();
        report.write_plot_data(&mut plot).unwrap();
        assert_eq!(String::from_utf8(plot).unwrap().lines().count(), 4);
        let mut moments = Vec::new();
        report.write_moments_csv(&mut moments).unwrap();
        assert!(String::from_utf8(moments).unwrap().starts_with("mesh,second_moment_sup\n64,"));
        assert!(report.moment_spread() >= 0.0);
    }
}
