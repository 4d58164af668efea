//! Key-rate maximisation over post-selection thresholds (and optionally the
//! modulation variance).
//!
//! Thresholds are searched in units of each party's unconditional standard
//! deviation: `sqrt(V_A)` for Alice, `sqrt(T V_A / 2 + 1 + xi / 2)` for Bob's
//! record. A coarse grid over the lower thresholds (upper thresholds at
//! infinity) seeds Nelder-Mead refinements, first with infinite and then with
//! finite upper thresholds. Everything is deterministic; parallel evaluation
//! only changes wall-clock time.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{record_covariance, ChannelParams, ProtocolParams};
use crate::error::{check, Error, Result};
use crate::gaussian::two_mode_symplectic_eigenvalues;
use crate::keyrate::{holevo_dr, keyrate, mutual_information_sign, KeyRateReport};
use crate::postselection::{build_gamma_ab, postselected_stats, EffectiveParams, PostSelectionRegion};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizationSpec {
    /// Largest lower threshold, in standard deviations.
    pub lower_max: f64,
    /// Range of finite band widths `U - L`, in standard deviations.
    pub band_min: f64,
    pub band_max: f64,
    /// Whether finite upper thresholds are explored at all.
    pub finite_upper: bool,
    /// Optimise `V_A` within these bounds; `None` keeps the protocol value.
    pub va_bounds: Option<(f64, f64)>,
    /// Grid points per threshold axis.
    pub grid: usize,
    /// Grid points on the (log) `V_A` axis.
    pub va_grid: usize,
    /// Number of best seeds refined locally.
    pub refine_seeds: usize,
    /// Absolute convergence tolerance on the key rate, bits.
    pub tol: f64,
    /// Evaluation budget per local refinement.
    pub max_evals: usize,
}

impl Default for OptimizationSpec {
    fn default() -> Self {
        Self {
            lower_max: 5.0,
            band_min: 0.02,
            band_max: 20.0,
            finite_upper: true,
            va_bounds: None,
            grid: 9,
            va_grid: 7,
            refine_seeds: 16,
            tol: 1e-8,
            max_evals: 3000,
        }
    }
}

impl OptimizationSpec {
    pub fn validate(&self) -> Result<()> {
        check(self.lower_max > 0.0, "lower_max", self.lower_max, "must be > 0")?;
        check(self.band_min > 0.0, "band_min", self.band_min, "must be > 0")?;
        check(
            self.band_max > self.band_min,
            "band_max",
            self.band_max,
            "must exceed band_min",
        )?;
        check(
            self.grid >= 2,
            "grid",
            self.grid as f64,
            "need at least 2 points per axis",
        )?;
        check(self.tol > 0.0, "tol", self.tol, "must be > 0")?;
        check(
            self.refine_seeds >= 1,
            "refine_seeds",
            self.refine_seeds as f64,
            "must be >= 1",
        )?;
        check(
            self.max_evals >= 10,
            "max_evals",
            self.max_evals as f64,
            "must be >= 10",
        )?;
        if let Some((lo, hi)) = self.va_bounds {
            check(lo > 0.0, "va_min", lo, "must be > 0")?;
            check(hi > lo, "va_max", hi, "must exceed va_min")?;
            check(
                self.va_grid >= 2,
                "va_grid",
                self.va_grid as f64,
                "need at least 2 points",
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub va: f64,
    pub region: PostSelectionRegion,
    pub report: KeyRateReport,
    pub evaluations: usize,
    pub audit: SearchAudit,
}

/// Extremes over every `gamma_AB` whose Holevo term was computed during a search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchAudit {
    pub states: usize,
    pub min_symplectic_eigenvalue: f64,
    pub min_chi: f64,
}

impl Default for SearchAudit {
    fn default() -> Self {
        Self {
            states: 0,
            min_symplectic_eigenvalue: f64::INFINITY,
            min_chi: f64::INFINITY,
        }
    }
}

impl SearchAudit {
    fn record(&mut self, nu_min: f64, chi: f64) {
        self.states += 1;
        self.min_symplectic_eigenvalue = self.min_symplectic_eigenvalue.min(nu_min);
        self.min_chi = self.min_chi.min(chi);
    }

    pub fn merge(&mut self, other: &SearchAudit) {
        self.states += other.states;
        self.min_symplectic_eigenvalue = self.min_symplectic_eigenvalue.min(other.min_symplectic_eigenvalue);
        self.min_chi = self.min_chi.min(other.min_chi);
    }
}

/// A candidate operating point in search coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Point {
    ln_va: f64,
    /// Square roots of the lower thresholds in standard deviations. Feasible
    /// regions at high transmission are thin slivers near `L_B = 0`, which
    /// this scaling resolves.
    la: f64,
    lb: f64,
    /// `ln((U - L) / sigma)`, or `None` for an infinite upper threshold.
    ln_wa: Option<f64>,
    ln_wb: Option<f64>,
}

struct Problem<'a> {
    p: &'a ProtocolParams,
    ch: &'a ChannelParams,
    spec: &'a OptimizationSpec,
    /// Objective evaluations so far; the total is independent of scheduling.
    evaluations: AtomicUsize,
    audit: Mutex<SearchAudit>,
}

impl<'a> Problem<'a> {
    fn new(p: &'a ProtocolParams, ch: &'a ChannelParams, spec: &'a OptimizationSpec) -> Self {
        Self {
            p,
            ch,
            spec,
            evaluations: AtomicUsize::new(0),
            audit: Mutex::new(SearchAudit::default()),
        }
    }
}

impl Problem<'_> {
    fn clamp(&self, mut x: Point) -> Point {
        let (lw_lo, lw_hi) = (self.spec.band_min.ln(), self.spec.band_max.ln());
        let root_max = self.spec.lower_max.sqrt();
        x.la = x.la.clamp(0.0, root_max);
        x.lb = x.lb.clamp(0.0, root_max);
        x.ln_wa = x.ln_wa.map(|w| w.clamp(lw_lo, lw_hi));
        x.ln_wb = x.ln_wb.map(|w| w.clamp(lw_lo, lw_hi));
        x.ln_va = match self.spec.va_bounds {
            Some((lo, hi)) => x.ln_va.clamp(lo.ln(), hi.ln()),
            None => self.p.va.ln(),
        };
        x
    }

    fn decode(&self, x: Point) -> Result<(ProtocolParams, PostSelectionRegion)> {
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        let x = self.clamp(x);
        let p = ProtocolParams::new(x.ln_va.exp(), self.p.beta)?;
        let sigma = record_covariance(&p, self.ch);
        let (sa, sb) = (sigma.var_a.sqrt(), sigma.var_b.sqrt());
        let la = x.la * x.la * sa;
        let lb = x.lb * x.lb * sb;
        let ua = x.ln_wa.map_or(f64::INFINITY, |w| la + w.exp() * sa);
        let ub = x.ln_wb.map_or(f64::INFINITY, |w| lb + w.exp() * sb);
        Ok((p, PostSelectionRegion::new(la, ua, lb, ub)?))
    }

    fn evaluate(&self, x: Point) -> Result<Optimum> {
        let (p, region) = self.decode(x)?;
        let report = keyrate(&p, self.ch, &region)?;
        if self.ch.t < 1.0 {
            self.note(report.physicality_margin + 1.0, report.chi_ea_bits);
        }
        if !report.key_rate.is_finite() {
            return Err(Error::Infeasible(format!("non-finite key rate {}", report.key_rate)));
        }
        Ok(Optimum {
            va: p.va,
            region,
            report,
            evaluations: 1,
            audit: SearchAudit::default(),
        })
    }

    fn note(&self, nu_min: f64, chi: f64) {
        self.audit.lock().expect("audit lock").record(nu_min, chi);
    }

    /// Search merit, continuous across the feasibility boundary.
    ///
    /// Feasible effective states satisfy `eta <= 1` and `delta >= 0`. Outside,
    /// the Holevo term is taken at the clamped parameters and the violation is
    /// penalised, so the boundary is a kink rather than a cliff. Strict
    /// feasibility is enforced again on the returned optimum.
    fn objective(&self, x: Point) -> f64 {
        if self.ch.t >= 1.0 {
            return self
                .evaluate(x)
                .map_or(f64::NEG_INFINITY, |o| merit(o.report.key_rate, o.report.p_ps));
        }
        let Ok((p, region)) = self.decode(x) else {
            return f64::NEG_INFINITY;
        };
        let Ok(stats) = postselected_stats(&record_covariance(&p, self.ch), &region) else {
            return f64::NEG_INFINITY;
        };
        let e = EffectiveParams::from_moments(stats.var_a, stats.var_b, stats.cov);
        if !(e.eta > 0.0 && e.delta.is_finite()) {
            return f64::NEG_INFINITY;
        }
        let violation = (e.eta - 1.0).max(0.0) + (-e.delta).max(0.0);
        let clamped = EffectiveParams {
            eta: e.eta.min(1.0),
            delta: e.delta.max(0.0),
            ..e
        };
        let Ok(gamma) = build_gamma_ab(&clamped) else {
            return f64::NEG_INFINITY;
        };
        let (Ok(chi), Ok(nu)) = (holevo_dr(&gamma), two_mode_symplectic_eigenvalues(&gamma)) else {
            return f64::NEG_INFINITY;
        };
        self.note(nu[1], chi);
        let Ok(i_quad) = mutual_information_sign(stats.p_e.min(0.5)) else {
            return f64::NEG_INFINITY;
        };
        let k = stats.p_ps * (p.beta * 2.0 * i_quad - chi);
        merit(k, stats.p_ps) - VIOLATION_PENALTY * violation
    }

    fn seeds(&self) -> Vec<Point> {
        let s = self.spec;
        let axis: Vec<f64> = (0..s.grid)
            .map(|i| s.lower_max.sqrt() * i as f64 / (s.grid - 1) as f64)
            .collect();
        let va_axis: Vec<f64> = match s.va_bounds {
            Some((lo, hi)) => (0..s.va_grid)
                .map(|i| lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (s.va_grid - 1) as f64)
                .collect(),
            None => vec![self.p.va.ln()],
        };
        let bands: Vec<Option<f64>> = if s.finite_upper {
            [None, Some(0.5f64), Some(1.0), Some(2.0)]
                .into_iter()
                .map(|w| w.map(f64::ln))
                .collect()
        } else {
            vec![None]
        };
        let mut out = Vec::new();
        for &ln_va in &va_axis {
            for &ln_wa in &bands {
                for &ln_wb in &bands {
                    for &la in &axis {
                        for &lb in &axis {
                            out.push(Point {
                                ln_va,
                                la,
                                lb,
                                ln_wa,
                                ln_wb,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// Pack the free coordinates of `x` into a vector; `template` fixes which are free.
fn pack(x: &Point, vary_va: bool) -> Vec<f64> {
    let mut v = vec![x.la, x.lb];
    v.extend(x.ln_wa);
    v.extend(x.ln_wb);
    if vary_va {
        v.push(x.ln_va);
    }
    v
}

fn unpack(v: &[f64], template: &Point, vary_va: bool) -> Point {
    let mut it = v.iter().copied();
    let la = it.next().unwrap();
    let lb = it.next().unwrap();
    let ln_wa = template.ln_wa.map(|_| it.next().unwrap());
    let ln_wb = template.ln_wb.map(|_| it.next().unwrap());
    let ln_va = if vary_va { it.next().unwrap() } else { template.ln_va };
    Point {
        ln_va,
        la,
        lb,
        ln_wa,
        ln_wb,
    }
}

const MAX_RESTARTS: usize = 25;
const REPAIR_STEPS: usize = 12;

/// Result of a Nelder-Mead run (maximisation).
#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

/// Maximise `f` with the Nelder-Mead simplex method, restarting from the best
/// vertex until a restart improves the value by less than `tol`.
///
/// Non-finite values mark infeasible points. A trial point that lands in an
/// infeasible area is pulled back by bisection towards the best vertex, so
/// the simplex slides along constraint boundaries instead of collapsing
/// against them.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], step: &[f64], tol: f64, max_evals: usize) -> SimplexResult {
    let n = x0.len();
    let score = |v: f64| if v.is_nan() { f64::NEG_INFINITY } else { v };
    let evals = std::cell::Cell::new(0usize);
    let eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        score(f(x))
    };
    let repair = |x: Vec<f64>, fx: f64, anchor: &[f64], fa: f64| -> (Vec<f64>, f64) {
        if fx > f64::NEG_INFINITY || fa == f64::NEG_INFINITY {
            return (x, fx);
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        let mut found = None;
        for _ in 0..REPAIR_STEPS {
            let m = 0.5 * (lo + hi);
            let y: Vec<f64> = anchor.iter().zip(&x).map(|(a, b)| a + m * (b - a)).collect();
            let fy = eval(&y);
            if fy > f64::NEG_INFINITY {
                lo = m;
                found = Some((y, fy));
            } else {
                hi = m;
            }
        }
        found.unwrap_or((x, fx))
    };
    let mut best_x = x0.to_vec();
    let mut best_f = eval(x0);
    let mut restarts = 0;
    loop {
        let start_f = best_f;
        let mut simplex: Vec<(Vec<f64>, f64)> = vec![(best_x.clone(), best_f)];
        for i in 0..n {
            let mut x = best_x.clone();
            x[i] += step[i];
            let fx = eval(&x);
            simplex.push(repair(x, fx, &best_x, best_f));
        }
        while evals.get() < max_evals {
            // Descending by value; ties keep insertion order.
            simplex.sort_by(|a, b| b.1.total_cmp(&a.1));
            let (hi, lo) = (simplex[0].1, simplex[n].1);
            let spread = hi - lo;
            let size = simplex[1..]
                .iter()
                .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max);
            if (hi.is_finite() && spread.is_finite() && spread <= tol) || size < 1e-12 {
                break;
            }
            let centroid: Vec<f64> = (0..n)
                .map(|k| simplex[..n].iter().map(|(x, _)| x[k]).sum::<f64>() / n as f64)
                .collect();
            let worst = simplex[n].clone();
            let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&worst.0).map(|(c, w)| c + t * (c - w)).collect() };
            let (anchor, fa) = (simplex[0].0.clone(), simplex[0].1);
            let xr = along(1.0);
            let fr = eval(&xr);
            let (xr, fr) = repair(xr, fr, &anchor, fa);
            if fr > simplex[0].1 {
                let xe = along(2.0);
                let fe = eval(&xe);
                simplex[n] = if fe > fr { (xe, fe) } else { (xr, fr) };
            } else if fr > simplex[n - 1].1 {
                simplex[n] = (xr, fr);
            } else {
                let (xc, fc) = if fr > worst.1 {
                    let xc = along(0.5);
                    let fc = eval(&xc);
                    (xc, fc)
                } else {
                    let xc = along(-0.5);
                    let fc = eval(&xc);
                    (xc, fc)
                };
                if fc > worst.1.max(fr) || (fc > worst.1 && !fr.is_finite()) {
                    simplex[n] = (xc, fc);
                } else {
                    for v in simplex.iter_mut().skip(1) {
                        let x: Vec<f64> = anchor.iter().zip(&v.0).map(|(a, b)| a + 0.5 * (b - a)).collect();
                        let fx = eval(&x);
                        *v = (x, fx);
                    }
                }
            }
        }
        simplex.sort_by(|a, b| b.1.total_cmp(&a.1));
        if simplex[0].1 > best_f {
            best_x = simplex[0].0.clone();
            best_f = simplex[0].1;
        }
        restarts += 1;
        let improved = best_f - start_f;
        if evals.get() >= max_evals || restarts >= MAX_RESTARTS || !(improved > tol) && restarts > 1 {
            break;
        }
    }
    SimplexResult {
        x: best_x,
        value: best_f,
        evaluations: evals.get(),
    }
}

fn refine(problem: &Problem, start: Point) -> (Point, f64) {
    let vary_va = problem.spec.va_bounds.is_some();
    let x0 = pack(&start, vary_va);
    let mut step = vec![0.3, 0.3];
    step.extend(start.ln_wa.map(|_| 0.5));
    step.extend(start.ln_wb.map(|_| 0.5));
    if vary_va {
        step.push(0.4);
    }
    let res = nelder_mead(
        |v| problem.objective(unpack(v, &start, vary_va)),
        &x0,
        &step,
        problem.spec.tol,
        problem.spec.max_evals,
    );
    let end = problem.clamp(unpack(&res.x, &start, vary_va));
    let end = if problem.evaluate(end).is_err() && problem.evaluate(start).is_ok() {
        // Converged just outside the feasible set: step back towards the start.
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..BACKOFF_STEPS {
            let m = 0.5 * (lo + hi);
            if problem.evaluate(blend(&start, &end, 1.0 - m)).is_ok() {
                hi = m;
            } else {
                lo = m;
            }
        }
        blend(&start, &end, 1.0 - hi)
    } else {
        end
    };
    (end, res.value)
}

const BACKOFF_STEPS: usize = 50;

/// `a + t (b - a)` coordinate-wise; `a` and `b` share the same free bands.
fn blend(a: &Point, b: &Point, t: f64) -> Point {
    let mix = |u: f64, v: f64| u + t * (v - u);
    Point {
        ln_va: mix(a.ln_va, b.ln_va),
        la: mix(a.la, b.la),
        lb: mix(a.lb, b.lb),
        ln_wa: a.ln_wa.zip(b.ln_wa).map(|(u, v)| mix(u, v)),
        ln_wb: a.ln_wb.zip(b.ln_wb).map(|(u, v)| mix(u, v)),
    }
}

/// Root of `f` on `[lo, hi]` given values of opposite sign at the ends
/// (Illinois variant of regula falsi). `None` if `f` fails along the way.
fn find_root(f: impl Fn(f64) -> Option<f64>, mut lo: f64, mut hi: f64, mut flo: f64, mut fhi: f64) -> Option<f64> {
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    let mut side = 0;
    for _ in 0..ROOT_ITERATIONS {
        let x = (lo * fhi - hi * flo) / (fhi - flo);
        let x = if x > lo.min(hi) && x < lo.max(hi) {
            x
        } else {
            0.5 * (lo + hi)
        };
        let fx = f(x)?;
        if fx == 0.0 || (hi - lo).abs() <= ROOT_XTOL * (1.0 + x.abs()) {
            return Some(x);
        }
        if (fx < 0.0) == (flo < 0.0) {
            lo = x;
            flo = fx;
            if side == -1 {
                fhi *= 0.5;
            }
            side = -1;
        } else {
            hi = x;
            fhi = fx;
            if side == 1 {
                flo *= 0.5;
            }
            side = 1;
        }
    }
    Some(0.5 * (lo + hi))
}

const ROOT_ITERATIONS: usize = 100;
const ROOT_XTOL: f64 = 1e-13;

/// Corner targets, a hair inside the feasible set so round-off cannot push
/// the solution outside.
const ETA_TARGET: f64 = 1.0 - 1e-10;
const DELTA_TARGET: f64 = 1e-10;
/// Samples when bracketing the `delta = 0` crossing along a line.
const CORNER_SAMPLES: usize = 24;

impl Problem<'_> {
    fn eta_delta(&self, x: Point) -> Option<(f64, f64)> {
        let (p, region) = self.decode(x).ok()?;
        let stats = postselected_stats(&record_covariance(&p, self.ch), &region).ok()?;
        let e = EffectiveParams::from_moments(stats.var_a, stats.var_b, stats.cov);
        (e.eta.is_finite() && e.delta.is_finite()).then_some((e.eta, e.delta))
    }

    /// Bob's lower threshold (band width kept) that brings the effective
    /// transmission to one. Raising Bob's threshold raises `eta` from `T` at
    /// `L_B = 0`.
    fn unit_transmission(&self, x: Point) -> Option<(Point, f64)> {
        let at = |u: f64| Point { lb: u, ..x };
        let g = |u: f64| self.eta_delta(at(u)).map(|(eta, _)| eta - ETA_TARGET);
        let hi = self.spec.lower_max.sqrt();
        let (g0, g1) = (g(0.0)?, g(hi)?);
        if !(g0 < 0.0 && g1 > 0.0) {
            return None;
        }
        let u = find_root(g, 0.0, hi, g0, g1)?;
        let point = at(u);
        Some((point, self.eta_delta(point)?.1 - DELTA_TARGET))
    }

    /// Regions with `eta = 1` and `delta = 0` along a line through the space
    /// of Alice's lower threshold and one finite band width (Alice's, or
    /// Bob's when `line.bob_band`), where Eve's information vanishes.
    fn corner_points(&self, line: Line, fixed: f64, ln_va: f64) -> Vec<Point> {
        let axis = line.axis;
        let make = |t: f64| {
            let (la, w) = match axis {
                Axis::Lower => (fixed, t),
                Axis::Band => (t, fixed),
            };
            let (ln_wa, ln_wb) = if line.bob_band {
                (None, Some(w))
            } else {
                (Some(w), None)
            };
            Point {
                ln_va,
                la,
                lb: 0.0,
                ln_wa,
                ln_wb,
            }
        };
        let (lo, hi) = self.range(axis.other());
        let samples: Vec<(f64, Option<f64>)> = (0..CORNER_SAMPLES)
            .map(|i| {
                let t = lo + (hi - lo) * i as f64 / (CORNER_SAMPLES - 1) as f64;
                (t, self.unit_transmission(make(t)).map(|(_, d)| d))
            })
            .collect();
        let mut out = Vec::new();
        for pair in samples.windows(2) {
            let ((t0, Some(d0)), (t1, Some(d1))) = (pair[0], pair[1]) else {
                continue;
            };
            if (d0 < 0.0) == (d1 < 0.0) {
                continue;
            }
            let h = |t: f64| self.unit_transmission(make(t)).map(|(_, d)| d);
            if let Some((point, _)) = find_root(h, t0, t1, d0, d1).and_then(|t| self.unit_transmission(make(t))) {
                out.push(point);
            }
        }
        out
    }

    /// Best merit over the corner regions on one line.
    fn corner_value(&self, line: Line, fixed: f64, ln_va: f64) -> (f64, Option<Point>) {
        self.corner_points(line, fixed, ln_va)
            .into_iter()
            .filter_map(|x| {
                self.evaluate(x)
                    .ok()
                    .map(|o| (merit(o.report.key_rate, o.report.p_ps), Some(x)))
            })
            .fold((f64::NEG_INFINITY, None), |acc, c| if c.0 > acc.0 { c } else { acc })
    }

    /// Search range of an Alice coordinate.
    fn range(&self, axis: Axis) -> (f64, f64) {
        match axis {
            Axis::Lower => (0.0, self.spec.lower_max.sqrt()),
            Axis::Band => (self.spec.band_min.ln(), self.spec.band_max.ln()),
        }
    }

    fn va_axis(&self) -> Vec<f64> {
        match self.spec.va_bounds {
            Some((lo, hi)) => (0..self.spec.va_grid)
                .map(|i| lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (self.spec.va_grid - 1) as f64)
                .collect(),
            None => vec![self.p.va.ln()],
        }
    }

    fn clamp_va(&self, ln_va: f64) -> f64 {
        match self.spec.va_bounds {
            Some((lo, hi)) => ln_va.clamp(lo.ln(), hi.ln()),
            None => self.p.va.ln(),
        }
    }
}

/// Alice coordinate held fixed while the corner condition is solved along
/// the other. The corner curve folds in either parametrisation, so both are
/// searched.
#[derive(Debug, Clone, Copy)]
enum Axis {
    Lower,
    Band,
}

#[derive(Debug, Clone, Copy)]
struct Line {
    axis: Axis,
    bob_band: bool,
}

impl Axis {
    fn other(self) -> Axis {
        match self {
            Axis::Lower => Axis::Band,
            Axis::Band => Axis::Lower,
        }
    }
}

/// Search along the `eta = 1`, `delta = 0` corner, where optima of the
/// post-selected protocol tend to sit and where Eve's information has a
/// logarithmic cusp that stalls a plain simplex search.
fn corner_search(problem: &Problem) -> Vec<(Point, f64)> {
    if problem.ch.t >= 1.0 {
        return Vec::new();
    }
    let s = problem.spec;
    let vary_va = s.va_bounds.is_some();
    let n = 2 * s.grid;
    let mut grid = Vec::new();
    for axis in [Axis::Lower, Axis::Band] {
        for bob_band in [false, true] {
            let (lo, hi) = problem.range(axis);
            for &v in &problem.va_axis() {
                for i in 0..n {
                    grid.push((Line { axis, bob_band }, lo + (hi - lo) * i as f64 / (n - 1) as f64, v));
                }
            }
        }
    }
    let scored: Vec<((Line, f64, f64), f64)> = grid
        .par_iter()
        .map(|&(l, t, v)| ((l, t, v), problem.corner_value(l, t, v).0))
        .collect();
    let mut starts: Vec<((Line, f64, f64), f64)> = scored.into_iter().filter(|(_, m)| m.is_finite()).collect();
    starts.sort_by(|a, b| b.1.total_cmp(&a.1));
    starts.truncate(CORNER_STARTS);
    starts
        .par_iter()
        .filter_map(|&((line, t, v), _)| {
            let (lo, hi) = problem.range(line.axis);
            let decode = |x: &[f64]| {
                let ln_va = if vary_va { problem.clamp_va(x[1]) } else { v };
                (x[0].clamp(lo, hi), ln_va)
            };
            let f = |x: &[f64]| {
                let (t, ln_va) = decode(x);
                problem.corner_value(line, t, ln_va).0
            };
            let step_t = (hi - lo) / (n - 1) as f64;
            let (x0, step) = if vary_va {
                (vec![t, v], vec![step_t, 0.2])
            } else {
                (vec![t], vec![step_t])
            };
            let res = nelder_mead(f, &x0, &step, s.tol, s.max_evals / CORNER_SAMPLES);
            let (t, ln_va) = decode(&res.x);
            let (value, point) = problem.corner_value(line, t, ln_va);
            point.map(|p| (p, value))
        })
        .collect()
}

const CORNER_STARTS: usize = 4;

const POLISH: usize = 4;

/// Bits of merit lost per unit of constraint violation.
const VIOLATION_PENALTY: f64 = 1.0;

/// The key rate where it is positive, otherwise the rate per kept symbol.
/// Both vanish at `K = 0`, so the merit is continuous, and it stops the search
/// from shrinking `P_ps` towards zero to approach `K = 0` from below.
fn merit(k: f64, p_ps: f64) -> f64 {
    if k >= 0.0 {
        k
    } else {
        k / p_ps
    }
}

fn top_k(mut scored: Vec<(Point, f64)>, k: usize) -> Vec<(Point, f64)> {
    scored.retain(|(_, v)| v.is_finite());
    // Stable sort keeps grid order among ties.
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    scored.truncate(k);
    scored
}

fn optimize_from(problem: &Problem, extra_seeds: &[Point]) -> Result<Optimum> {
    problem.spec.validate()?;
    let k = problem.spec.refine_seeds;
    let mut seeds = problem.seeds();
    seeds.extend(extra_seeds.iter().map(|&s| problem.clamp(s)));
    let scored: Vec<(Point, f64)> = seeds.par_iter().map(|&s| (s, problem.objective(s))).collect();
    let run = |starts: Vec<Point>| -> Vec<(Point, f64)> { starts.par_iter().map(|&s| refine(problem, s)).collect() };

    // Local refinement of the best seeds, each in its own set of free bands.
    let starts = top_k(scored.clone(), k).into_iter().map(|(s, _)| s).collect();
    let mut pool = run(starts);
    pool.extend(corner_search(problem));

    // Open up the infinite upper thresholds of the best refinements.
    if problem.spec.finite_upper {
        let wide = problem.spec.band_max.ln() - 1.0;
        let mut starts = Vec::new();
        for (s, _) in top_k(pool.clone(), k) {
            if s.ln_wa.is_some() && s.ln_wb.is_some() {
                continue;
            }
            for w in [wide, 1.0, 0.0] {
                starts.push(Point {
                    ln_wa: s.ln_wa.or(Some(w)),
                    ln_wb: s.ln_wb.or(Some(w)),
                    ..s
                });
            }
        }
        let more = run(starts);
        pool.extend(more);
    }

    // Polish the leaders with fresh simplices.
    let leaders = top_k(pool.clone(), POLISH).into_iter().map(|(s, _)| s).collect();
    let more = run(leaders);
    pool.extend(more);

    // Final choice by the key rate itself, so no grid seed can beat the result.
    let mut opt = pool
        .iter()
        .chain(scored.iter())
        .filter_map(|&(s, _)| problem.evaluate(s).ok())
        .fold(None, |acc: Option<Optimum>, o| match acc {
            Some(a) if a.report.key_rate >= o.report.key_rate => Some(a),
            _ => Some(o),
        })
        .ok_or_else(|| Error::Infeasible("no feasible post-selection region among the seeds and refinements".into()))?;
    opt.evaluations = problem.evaluations.load(Ordering::Relaxed);
    opt.audit = *problem.audit.lock().expect("audit lock");
    Ok(opt)
}

/// Best post-selection region (and `V_A`, if enabled) for one channel.
pub fn optimize_thresholds(p: &ProtocolParams, ch: &ChannelParams, spec: &OptimizationSpec) -> Result<Optimum> {
    let problem = Problem::new(p, ch, spec);
    optimize_from(&problem, &[])
}

/// Same as [`optimize_thresholds`], with an extra starting region (and `V_A`).
pub fn optimize_thresholds_warm(
    p: &ProtocolParams,
    ch: &ChannelParams,
    spec: &OptimizationSpec,
    warm: &Optimum,
) -> Result<Optimum> {
    let problem = Problem::new(p, ch, spec);
    let seed = warm_point(&problem, warm);
    optimize_from(&problem, &[seed])
}

/// Express a previous optimum in this problem's search coordinates.
fn warm_point(problem: &Problem, warm: &Optimum) -> Point {
    let p = ProtocolParams {
        va: warm.va,
        ..*problem.p
    };
    let sigma = record_covariance(&p, problem.ch);
    let (sa, sb) = (sigma.var_a.sqrt(), sigma.var_b.sqrt());
    let r = warm.region;
    let band = |l: f64, u: f64, s: f64| u.is_finite().then(|| ((u - l) / s).ln());
    Point {
        ln_va: warm.va.ln(),
        la: (r.la / sa).sqrt(),
        lb: (r.lb / sb).sqrt(),
        ln_wa: band(r.la, r.ua, sa),
        ln_wb: band(r.lb, r.ub, sb),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub t: f64,
    pub xi: f64,
    pub outcome: std::result::Result<Optimum, String>,
}

/// Optimised key rate over a `(xi, T)` grid. Rows are ordered by `xi` then `T`;
/// each `T` is warm-started from the previous optimum on the same curve.
pub fn sweep(p: &ProtocolParams, xi_list: &[f64], t_grid: &[f64], spec: &OptimizationSpec) -> Result<Vec<SweepRow>> {
    check(!xi_list.is_empty(), "xi_list", 0.0, "must not be empty")?;
    check(!t_grid.is_empty(), "t_grid", 0.0, "must not be empty")?;
    spec.validate()?;
    let curves: Vec<Vec<SweepRow>> = xi_list
        .par_iter()
        .map(|&xi| {
            let mut rows = Vec::with_capacity(t_grid.len());
            let mut warm: Option<Optimum> = None;
            for &t in t_grid {
                let outcome = ChannelParams::new(t, xi).and_then(|ch| match &warm {
                    Some(w) => optimize_thresholds_warm(p, &ch, spec, w),
                    None => optimize_thresholds(p, &ch, spec),
                });
                if let Ok(o) = &outcome {
                    warm = Some(*o);
                }
                rows.push(SweepRow {
                    t,
                    xi,
                    outcome: outcome.map_err(|e| e.to_string()),
                });
            }
            rows
        })
        .collect();
    Ok(curves.into_iter().flatten().collect())
}
