//! Pseudo-arclength continuation of the characteristic curves of the R
//! problem, detection and refinement of the periodic orbits on them, and
//! family bookkeeping.
//!
//! A curve lives in `(u, w, τ0)` where `(u, w)` is the active pair of the
//! seed. Continuation runs in `z = (u, w, τ0 / tau_scale)` so that the three
//! coordinates have comparable size.

use std::fmt;
use std::io::{self, Write};

use nalgebra::{DMatrix, DVector, Vector3};
use rayon::prelude::*;

use crate::bvp::{
    kepler_seed, newton_step, reg_state_at, residual_from_state, seed_to_regularized, shoot,
    solve_periodic, solve_periodic_reverse, solve_reg, tau_for_time, Apsis, BvpKind, KeplerSeed,
    NewtonOptions, Problem, RegSeed, Rep, Sense, Side, SolutionRecord,
};
use crate::error::{Error, Result};
use crate::integrate;
use crate::regularization::{regularized_to_cartesian, RegState};
use crate::symmetry::{
    relative_diff, verify_symmetric_periodic_with, SymmetryReport, DEFAULT_SAMPLES,
};

/// A solution of the R problem with its characteristic time and energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilyPoint {
    pub seed: RegSeed,
    pub tau0: f64,
    /// Natural time `t(τ0)`.
    pub t0: f64,
    /// Binding energy at τ = 0.
    pub h0: f64,
    /// Max-norm of the R residual at `tau0`.
    pub residual: f64,
}

impl FamilyPoint {
    pub fn evaluate(seed: &RegSeed, tau0: f64, p: &Problem) -> Result<Self> {
        let h0 = seed.initial_state(&p.consts, &p.masses)?.h;
        let end = reg_state_at(seed, tau0, p)?;
        let [a, b] = residual_from_state(BvpKind::R, &end, p);
        Ok(Self {
            seed: *seed,
            tau0,
            t0: end.t,
            h0,
            residual: a.abs().max(b.abs()),
        })
    }

    /// Corrects `(w, τ0)` at fixed `u` onto the R curve.
    pub fn solve(guess: &RegSeed, tau0: f64, p: &Problem, opts: &NewtonOptions) -> Result<Self> {
        let sol = solve_reg(BvpKind::R, guess, tau0, 0, p, opts)?;
        Self::evaluate(&sol.seed, sol.tau0, p)
    }

    pub fn active(&self) -> (Rep, f64, f64) {
        // every constructor goes through a validated seed
        self.seed
            .active()
            .expect("family points carry seeds on Fix(R̃)")
    }

    /// `g = T0 - 6 T̄`; its zeros are periodic orbits.
    pub fn period_defect(&self, p: &Problem) -> f64 {
        self.t0 - p.target_time()
    }

    /// Semimajor axis of the osculating ellipse about body 1, `-μ / (2 h0)`.
    /// It stays nearly constant along a curve. `None` for unbound points.
    pub fn semimajor_axis(&self, p: &Problem) -> Option<f64> {
        (self.h0 < 0.0).then(|| -p.masses.pair_mass() / (2.0 * self.h0))
    }

    fn x(&self) -> Vector3<f64> {
        let (_, u, w) = self.active();
        Vector3::new(u, w, self.tau0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuationSettings {
    /// Initial arclength step in scaled coordinates.
    pub step: f64,
    pub min_step: f64,
    pub max_step: f64,
    /// Points per direction.
    pub max_points: usize,
    /// A branch ends once `|u|` of the active pair drops below this.
    pub collision_threshold: f64,
    pub tau_scale: f64,
    /// Corrector tolerance on the R residual divided by `|u(τ0)|`. Points
    /// whose unscaled residual is already 100 times smaller are accepted too:
    /// when τ0 falls next to a collision the scaled form has a noise floor
    /// above this tolerance.
    pub corrector_tol: f64,
    pub max_corrector_iter: usize,
    /// Explored window of crossing `u` values. Curves crossing inside it are
    /// labeled first; others follow from 7 on.
    pub family_window: (f64, f64),
}

impl Default for ContinuationSettings {
    fn default() -> Self {
        Self {
            step: 1e-3,
            min_step: 1e-7,
            max_step: 1e-2,
            max_points: 4000,
            collision_threshold: 3e-3,
            tau_scale: 30.0,
            corrector_tol: 1e-10,
            max_corrector_iter: 8,
            family_window: FAMILY_WINDOW,
        }
    }
}

impl ContinuationSettings {
    pub fn validate(&self) -> Result<()> {
        let ok = self.min_step > 0.0
            && self.min_step <= self.step
            && self.step <= self.max_step
            && self.max_step.is_finite()
            && self.tau_scale > 0.0
            && self.corrector_tol > 0.0
            && self.collision_threshold >= 0.0
            && self.max_corrector_iter > 0
            && self.family_window.0 < self.family_window.1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidSettings(format!(
                "inconsistent continuation settings {self:?}"
            )))
        }
    }
}

/// Default explored window of crossing `u` values. It brackets six
/// neighbouring curves; the next ones out cross near 0.450 and 0.490.
pub const FAMILY_WINDOW: (f64, f64) = (0.453, 0.487);

/// Why one end of a traced curve stopped.
#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    Collision,
    PointBudget,
    CorrectorFailure(String),
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Termination::Collision => f.write_str("collision"),
            Termination::PointBudget => f.write_str("point budget exhausted"),
            Termination::CorrectorFailure(m) => write!(f, "corrector failure: {m}"),
        }
    }
}

/// Ordered points of one characteristic curve, with signed arclength.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyCurve {
    pub points: Vec<FamilyPoint>,
    pub arclength: Vec<f64>,
    pub family_index: Option<usize>,
    /// Active `u` where the active `w` vanishes, once located.
    pub crossing: Option<f64>,
    /// Terminations at the low-s and high-s ends.
    pub ends: (Termination, Termination),
}

impl FamilyCurve {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Truncated curves carry a corrector diagnostic at one end.
    pub fn is_truncated(&self) -> bool {
        matches!(self.ends.0, Termination::CorrectorFailure(_))
            || matches!(self.ends.1, Termination::CorrectorFailure(_))
    }

    /// Distance in scaled coordinates from `x = (u, w, τ0)` to the polyline.
    fn distance(&self, x: &Vector3<f64>, tau_scale: f64) -> f64 {
        let z = scale(x, tau_scale);
        let zs: Vec<_> = self
            .points
            .iter()
            .map(|q| scale(&q.x(), tau_scale))
            .collect();
        if zs.len() == 1 {
            return (z - zs[0]).norm();
        }
        zs.windows(2)
            .map(|w| {
                let d = w[1] - w[0];
                let t = if d.norm_squared() > 0.0 {
                    ((z - w[0]).dot(&d) / d.norm_squared()).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                (z - (w[0] + t * d)).norm()
            })
            .fold(f64::INFINITY, f64::min)
    }
}

fn scale(x: &Vector3<f64>, tau_scale: f64) -> Vector3<f64> {
    Vector3::new(x[0], x[1], x[2] / tau_scale)
}

/// Scaled R residual and time defect with their Jacobian over `z`.
struct Eval {
    f: [f64; 2],
    jz: DMatrix<f64>,
    /// Printed R residual.
    printed: f64,
}

impl Eval {
    fn converged(&self, cfg: &ContinuationSettings) -> bool {
        self.f[0].abs().max(self.f[1].abs()) < cfg.corrector_tol
            || self.printed < 1e-1 * cfg.corrector_tol
    }
}

fn eval_at(rep: Rep, z: &Vector3<f64>, cfg: &ContinuationSettings, p: &Problem) -> Result<Eval> {
    let tau = z[2] * cfg.tau_scale;
    if !(tau > 0.0) {
        return Err(Error::Domain(format!(
            "continuation left the domain τ0 > 0 (τ0 = {tau})"
        )));
    }
    let seed = RegSeed::from_active(rep, z[0], z[1]);
    let shot = shoot(&seed, tau, p)?;
    let (r, j) = shot.periodic_system(p);
    let mut jz = j.rows(0, 2).into_owned();
    jz.column_mut(2).scale_mut(cfg.tau_scale);
    let [a, b] = residual_from_state(BvpKind::R, &shot.end, p);
    Ok(Eval {
        f: [r[0], r[1]],
        jz,
        printed: a.abs().max(b.abs()),
    })
}

/// Unit null vector of a 2×3 Jacobian.
fn tangent(jz: &DMatrix<f64>) -> Result<Vector3<f64>> {
    let r0 = Vector3::new(jz[(0, 0)], jz[(0, 1)], jz[(0, 2)]);
    let r1 = Vector3::new(jz[(1, 0)], jz[(1, 1)], jz[(1, 2)]);
    let (n0, n1) = (r0.norm(), r1.norm());
    if !(n0 > 0.0 && n1 > 0.0) || !n0.is_finite() || !n1.is_finite() {
        return Err(Error::RankDeficient);
    }
    let t = (r0 / n0).cross(&(r1 / n1));
    let n = t.norm();
    if n < 1e-14 {
        return Err(Error::RankDeficient);
    }
    Ok(t / n)
}

/// Newton corrector on `[F(z), t·(z - z_pred)] = 0`; returns the point and
/// the iteration count.
fn correct(
    rep: Rep,
    z_pred: Vector3<f64>,
    t: &Vector3<f64>,
    reach: f64,
    cfg: &ContinuationSettings,
    p: &Problem,
) -> Result<(Vector3<f64>, Eval, usize)> {
    let mut z = z_pred;
    for it in 0..cfg.max_corrector_iter {
        let e = eval_at(rep, &z, cfg, p)?;
        if e.converged(cfg) {
            return Ok((z, e, it));
        }
        let mut a = DMatrix::zeros(3, 3);
        a.rows_mut(0, 2).copy_from(&e.jz);
        a.set_row(2, &t.transpose());
        let r = DVector::from_column_slice(&[e.f[0], e.f[1], t.dot(&(z - z_pred))]);
        let dz = newton_step(&a, &r)?;
        z += Vector3::new(dz[0], dz[1], dz[2]);
        // wandering off along the hyperplane lands on other branches
        if (z - z_pred).norm() > reach {
            return Err(Error::NewtonDiverged {
                iterations: it + 1,
                residual: e.f[0].abs().max(e.f[1].abs()),
            });
        }
    }
    let e = eval_at(rep, &z, cfg, p)?;
    let res = e.f[0].abs().max(e.f[1].abs());
    if e.converged(cfg) {
        Ok((z, e, cfg.max_corrector_iter))
    } else {
        Err(Error::NewtonDiverged {
            iterations: cfg.max_corrector_iter,
            residual: res,
        })
    }
}

/// One direction of [`trace_family`]; `dir` is ±1 relative to the tangent
/// oriented towards increasing active `w`.
fn trace_branch(
    start: &FamilyPoint,
    dir: f64,
    cfg: &ContinuationSettings,
    p: &Problem,
) -> Result<(Vec<(f64, FamilyPoint)>, Termination)> {
    let (rep, u0, _) = start.active();
    let mut z = scale(&start.x(), cfg.tau_scale);
    let mut t = tangent(&eval_at(rep, &z, cfg, p)?.jz)?;
    let lead = if t[1] != 0.0 { t[1] } else { t[0] };
    t *= dir * lead.signum();
    let mut ds = cfg.step;
    let mut s = 0.0;
    let mut out = Vec::new();
    while out.len() < cfg.max_points {
        let step = correct(rep, z + ds * t, &t, ds, cfg, p)
            .and_then(|(zn, e, it)| Ok((zn, tangent(&e.jz)?, e, it)));
        let (zn, tn, e, it) = match step {
            Ok(v) => v,
            Err(err) if err.is_numerical() => {
                ds *= 0.5;
                if ds < cfg.min_step {
                    return Ok((out, Termination::CorrectorFailure(err.to_string())));
                }
                continue;
            }
            Err(err) => return Err(err),
        };
        s += dir * (zn - z).norm();
        let tau0 = zn[2] * cfg.tau_scale;
        let seed = RegSeed::from_active(rep, zn[0], zn[1]);
        let end_t = reg_state_at(&seed, tau0, p)?.t;
        out.push((
            s,
            FamilyPoint {
                seed,
                tau0,
                t0: end_t,
                h0: seed.initial_state(&p.consts, &p.masses)?.h,
                residual: e.printed,
            },
        ));
        if zn[0].abs() < cfg.collision_threshold || zn[0].signum() != u0.signum() {
            return Ok((out, Termination::Collision));
        }
        z = zn;
        t = if tn.dot(&t) < 0.0 { -tn } else { tn };
        if it <= 2 {
            ds = (2.0 * ds).min(cfg.max_step);
        } else if it >= 5 {
            ds = (0.5 * ds).max(cfg.min_step);
        }
    }
    Ok((out, Termination::PointBudget))
}

/// Traces the characteristic curve through `start` in both directions.
pub fn trace_family(
    start: &FamilyPoint,
    cfg: &ContinuationSettings,
    p: &Problem,
) -> Result<FamilyCurve> {
    cfg.validate()?;
    start.seed.rep()?;
    if !(start.residual < 10.0 * cfg.corrector_tol) {
        return Err(Error::Domain(format!(
            "start point is not on the curve (R residual {:e})",
            start.residual
        )));
    }
    let (down, up) = rayon::join(
        || trace_branch(start, -1.0, cfg, p),
        || trace_branch(start, 1.0, cfg, p),
    );
    let ((down, end_lo), (up, end_hi)) = (down?, up?);
    let mut points = Vec::with_capacity(down.len() + up.len() + 1);
    let mut arclength = Vec::with_capacity(points.capacity());
    for (s, q) in down.into_iter().rev() {
        arclength.push(s);
        points.push(q);
    }
    arclength.push(0.0);
    points.push(*start);
    for (s, q) in up {
        arclength.push(s);
        points.push(q);
    }
    Ok(FamilyCurve {
        points,
        arclength,
        family_index: None,
        crossing: None,
        ends: (end_lo, end_hi),
    })
}

/// Sign changes of `T0 - 6T̄` along the curve, interpolated linearly in
/// arclength. The candidates are close to, not on, the curve.
pub fn detect_periodic(curve: &FamilyCurve, p: &Problem) -> Vec<(f64, FamilyPoint)> {
    let g: Vec<f64> = curve.points.iter().map(|q| q.period_defect(p)).collect();
    let mut out = Vec::new();
    for i in 1..g.len() {
        let (ga, gb) = (g[i - 1], g[i]);
        if ga == 0.0 {
            out.push((curve.arclength[i - 1], curve.points[i - 1]));
            continue;
        }
        if ga.signum() == gb.signum() || gb == 0.0 {
            continue;
        }
        let th = ga / (ga - gb);
        let (a, b) = (curve.points[i - 1], curve.points[i]);
        let (rep, _, _) = a.active();
        let x = a.x() + th * (b.x() - a.x());
        let lerp = |p: f64, q: f64| p + th * (q - p);
        out.push((
            lerp(curve.arclength[i - 1], curve.arclength[i]),
            FamilyPoint {
                seed: RegSeed::from_active(rep, x[0], x[1]),
                tau0: x[2],
                t0: p.target_time(),
                h0: lerp(a.h0, b.h0),
                residual: lerp(a.residual, b.residual),
            },
        ));
    }
    if let Some(&last) = g.last() {
        if last == 0.0 {
            out.push((
                *curve.arclength.last().unwrap(),
                *curve.points.last().unwrap(),
            ));
        }
    }
    out
}

/// Terminal points of ends where the corrector gave up.
///
/// Curves whose orbits reach t = 6T̄ near collision lose the forward
/// corrector right where `T0 - 6T̄` flattens out to 10⁻⁹ or less, so the sign
/// change of the periodicity defect may lie past the truncation. These points
/// are handed to [`refine_periodic`], whose reverse shooting does not suffer
/// from that conditioning.
pub fn end_candidates(curve: &FamilyCurve) -> Vec<(f64, FamilyPoint)> {
    let mut out = Vec::new();
    if let (Termination::CorrectorFailure(_), Some(q)) = (&curve.ends.0, curve.points.first()) {
        out.push((curve.arclength[0], *q));
    }
    if let (Termination::CorrectorFailure(_), Some(q)) = (&curve.ends.1, curve.points.last()) {
        if curve.points.len() > 1 || out.is_empty() {
            out.push((*curve.arclength.last().unwrap(), *q));
        }
    }
    out
}

/// Which formulation produced a periodic record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shooting {
    /// From `Fix(R̃)` at t = 0 to t = 6T̄.
    Forward,
    /// Backwards from `Fix(R̃)` at t = 6T̄; used when the forward map is too
    /// ill-conditioned, typically because the orbit reaches t = 6T̄ almost in
    /// collision.
    Reverse,
}

impl fmt::Display for Shooting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Shooting::Forward => "forward",
            Shooting::Reverse => "reverse",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicOrbitRecord {
    /// Canonical seed; `residual` is re-evaluated by forward integration.
    pub point: FamilyPoint,
    /// Arclength of the candidate on its curve, when it came from one.
    pub s: f64,
    pub family_index: Option<usize>,
    pub motion: Sense,
    pub shooting: Shooting,
    /// Residual the solver converged to, `[R scaled, t - 6T̄]` forward or
    /// `[Fix, t]` reversed.
    pub solver_residual: f64,
    pub report: SymmetryReport,
}

/// Square Newton solve of `[R, T0 - 6T̄]` from a candidate, then symmetry
/// verification at `verify_tol`.
pub fn refine_periodic(
    candidate: &FamilyPoint,
    p: &Problem,
    opts: &NewtonOptions,
    samples: usize,
    verify_tol: f64,
) -> Result<PeriodicOrbitRecord> {
    let reverse = || -> Result<PeriodicOrbitRecord> {
        let r = solve_periodic_reverse(&candidate.seed, candidate.tau0, p, opts)?;
        finish(
            r.record,
            r.anchor,
            Shooting::Reverse,
            p,
            samples,
            verify_tol,
        )
    };
    let can_reverse = p.masses.is_restricted();
    match solve_periodic(&candidate.seed, candidate.tau0, p, opts) {
        Ok(r) => {
            let fwd = finish(
                r,
                r.seed.initial_state(&p.consts, &p.masses)?,
                Shooting::Forward,
                p,
                samples,
                verify_tol,
            )?;
            // forward Newton can stop on a point of tiny unscaled residual
            // that is not the orbit when τ0 lands next to a collision
            if fwd.report.success() || !can_reverse {
                return Ok(fwd);
            }
            match reverse() {
                Ok(rev) if rev.report.success() => Ok(rev),
                _ => Ok(fwd),
            }
        }
        Err(e) if e.is_numerical() && can_reverse => reverse(),
        Err(e) => Err(e),
    }
}

fn finish(
    rec: SolutionRecord,
    anchor: RegState,
    shooting: Shooting,
    p: &Problem,
    samples: usize,
    verify_tol: f64,
) -> Result<PeriodicOrbitRecord> {
    let seed = rec.seed.canonical();
    let point = FamilyPoint::evaluate(&seed, rec.tau0, p)?;
    let traj = integrate::propagate(
        &p.system(),
        anchor.to_vector(),
        (0.0, 2.0 * rec.tau0),
        &p.cfg,
    )?;
    let report = verify_anchor(&traj, rec.tau0, p, samples, verify_tol);
    Ok(PeriodicOrbitRecord {
        point,
        s: 0.0,
        family_index: None,
        motion: motion_tag(&traj)?,
        shooting,
        solver_residual: rec.residual_norm,
        report,
    })
}

/// Symmetry and closure of a full orbit given over `τ ∈ [0, 2τ0]` from a
/// point on `Fix(R̃)`, measured with [`relative_diff`].
fn verify_anchor(
    traj: &integrate::Trajectory<18>,
    tau0: f64,
    p: &Problem,
    samples: usize,
    tol: f64,
) -> SymmetryReport {
    let orbit = |s: f64| -> Result<_> {
        let st = RegState::from_vector(&traj.eval(s)?);
        Ok(regularized_to_cartesian(&st, &p.masses)?.bodies[3])
    };
    verify_symmetric_periodic_with(orbit, 2.0 * tau0, samples, tol, relative_diff)
}

/// Full-period verification of a seed, in the chart and metric used for
/// periodic records.
pub fn verify_seed(
    seed: &RegSeed,
    tau0: f64,
    p: &Problem,
    samples: usize,
    tol: f64,
) -> Result<SymmetryReport> {
    let y0 = seed.initial_state(&p.consts, &p.masses)?.to_vector();
    let traj = integrate::propagate(&p.system(), y0, (0.0, 2.0 * tau0), &p.cfg)?;
    Ok(verify_anchor(&traj, tau0, p, samples, tol))
}

/// Sense of revolution about body 1 from the sign of the time-averaged
/// relative angular momentum `2 (u × w)`, weighted by `dt = |u|² dτ`.
pub fn motion_tag(traj: &integrate::Trajectory<18>) -> Result<Sense> {
    const N: usize = 4096;
    let (a, b) = traj.span();
    let mut acc = 0.0;
    for k in 0..N {
        let tau = a + (b - a) * (k as f64 + 0.5) / N as f64;
        let s = RegState::from_vector(&traj.eval(tau)?);
        acc += s.relative_angular_momentum() * s.separation();
    }
    Ok(if acc >= 0.0 {
        Sense::Prograde
    } else {
        Sense::Retrograde
    })
}

/// Locates where the active `w` of the curve changes sign and solves for the
/// exact crossing with `w = 0` held fixed.
pub fn locate_crossing(curve: &FamilyCurve, p: &Problem, opts: &NewtonOptions) -> Option<f64> {
    let pts = &curve.points;
    (1..pts.len()).find_map(|i| {
        let (rep, ua, wa) = pts[i - 1].active();
        let (_, ub, wb) = pts[i].active();
        if wa == 0.0 {
            return Some(ua);
        }
        if wa.signum() == wb.signum() {
            return None;
        }
        let th = wa / (wa - wb);
        let u = ua + th * (ub - ua);
        let tau = pts[i - 1].tau0 + th * (pts[i].tau0 - pts[i - 1].tau0);
        let guess = RegSeed::from_active(rep, u, 0.0);
        // a zero velocity is a valid Fix point, `rep` only needs u ≠ 0
        solve_reg(BvpKind::R, &guess, tau, 1, p, opts)
            .ok()
            .and_then(|s| s.seed.active().ok().map(|(_, u, _)| u))
            .or(Some(u))
    })
}

/// Labels curves by descending crossing `u`: 1 is the largest inside
/// `window`, curves crossing outside it come after. Curves without a crossing
/// stay unlabeled. Returns the labels in input order.
pub fn label_families(
    curves: &mut [FamilyCurve],
    window: (f64, f64),
    p: &Problem,
    opts: &NewtonOptions,
) -> Vec<Option<usize>> {
    let found: Vec<Option<f64>> = curves
        .par_iter()
        .map(|c| c.crossing.or_else(|| locate_crossing(c, p, opts)))
        .collect();
    let labels = labels_from_crossings(&found, window);
    for ((c, x), l) in curves.iter_mut().zip(found).zip(&labels) {
        c.crossing = x;
        c.family_index = *l;
    }
    labels
}

/// Rank of each crossing in descending order, starting at 1, with crossings
/// inside `window` ranked before the rest.
pub fn labels_from_crossings(crossings: &[Option<f64>], window: (f64, f64)) -> Vec<Option<usize>> {
    let mut order: Vec<(usize, f64)> = crossings
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.map(|v| (i, v)))
        .collect();
    let outside = |v: f64| !(window.0..=window.1).contains(&v);
    order.sort_by(|a, b| {
        outside(a.1)
            .cmp(&outside(b.1))
            .then(b.1.total_cmp(&a.1))
            .then(a.0.cmp(&b.0))
    });
    let mut labels = vec![None; crossings.len()];
    for (rank, (i, _)) in order.into_iter().enumerate() {
        labels[i] = Some(rank + 1);
    }
    labels
}

/// The four seeds of a quadruple: both velocity signs in the point's own
/// representation and in the mirrored one.
pub fn quadruple_variants(p: &FamilyPoint) -> [RegSeed; 4] {
    let (rep, u, w) = p.active();
    let (u, w) = (u.abs(), if u < 0.0 { -w } else { w });
    let other = match rep {
        Rep::U1 => Rep::U2,
        Rep::U2 => Rep::U1,
    };
    [
        RegSeed::from_active(rep, u, w),
        RegSeed::from_active(rep, u, -w),
        RegSeed::from_active(other, u, w),
        RegSeed::from_active(other, u, -w),
    ]
}

/// Semimajor axis of the next lap-count family,
/// `a0 (1 - 1/(2 (n_l + 1/2)))^(2/3)`.
pub fn lap_spacing_estimate(a0: f64, n_l: u32) -> Result<f64> {
    if !(a0 > 0.0 && a0.is_finite()) || n_l == 0 {
        return Err(Error::Domain(format!(
            "need a0 > 0 and n_l ≥ 1, got a0 = {a0}, n_l = {n_l}"
        )));
    }
    let n = f64::from(n_l);
    Ok(a0 * (1.0 - 1.0 / (2.0 * (n + 0.5))).powf(2.0 / 3.0))
}

/// Kepler seeds used to discover curves.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedGrid {
    pub a: Vec<f64>,
    pub e: Vec<f64>,
    pub senses: Vec<Sense>,
    pub apsides: Vec<Apsis>,
}

impl Default for SeedGrid {
    /// Neighbouring curves differ by half a lap, about 2.5 % in `a` near 0.11,
    /// so the spacing has to be well below that.
    fn default() -> Self {
        let n = 31;
        Self {
            a: (0..n).map(|k| 0.095 + 0.001 * k as f64).collect(),
            e: vec![0.0, 0.3, 0.6],
            senses: vec![Sense::Prograde, Sense::Retrograde],
            apsides: vec![Apsis::Periapsis],
        }
    }
}

impl SeedGrid {
    pub fn seeds(&self) -> Vec<KeplerSeed> {
        let mut out = Vec::new();
        for &a in &self.a {
            for &e in &self.e {
                for &apsis in &self.apsides {
                    for &sense in &self.senses {
                        out.push(KeplerSeed {
                            a,
                            e,
                            apsis,
                            sense,
                            side: Side::PlusX,
                        });
                    }
                }
            }
        }
        out
    }
}

/// Solves the R problem from every seed of the grid with the position held
/// fixed, starting at the fictitious time where t reaches 6T̄.
pub fn discover_points(grid: &SeedGrid, p: &Problem, opts: &NewtonOptions) -> Vec<FamilyPoint> {
    grid.seeds()
        .par_iter()
        .filter_map(|k| {
            let c = kepler_seed(k, &p.consts).ok()?;
            let s = seed_to_regularized(&c, &p.consts).ok()?;
            let tau = tau_for_time(&s, p.target_time(), p).ok()?;
            FamilyPoint::solve(&s, tau, p, opts).ok()
        })
        .collect()
}

/// Traces every distinct curve reached from the seed grid and labels them.
pub fn discover_families(
    grid: &SeedGrid,
    cfg: &ContinuationSettings,
    p: &Problem,
    opts: &NewtonOptions,
) -> Result<Vec<FamilyCurve>> {
    let mut points = discover_points(grid, p, opts);
    // the crossing of a curve sits near the apoapsis of a radial ellipse, u² ≈ 2a
    let (lo, hi) = cfg.family_window;
    points.retain(|q| {
        q.residual < 10.0 * cfg.corrector_tol
            && q.semimajor_axis(p)
                .is_some_and(|a| (0.99 * lo..=1.01 * hi).contains(&(2.0 * a).sqrt()))
    });
    // canonical representation, largest u first so the bulk of each curve comes early
    for q in &mut points {
        q.seed = q.seed.canonical();
    }
    points.sort_by(|a, b| b.active().1.total_cmp(&a.active().1));
    let mut curves: Vec<FamilyCurve> = Vec::new();
    for q in points {
        if curves
            .iter()
            .any(|c| c.distance(&q.x(), cfg.tau_scale) < 2e-3)
        {
            continue;
        }
        curves.push(trace_family(&q, cfg, p)?);
    }
    label_families(&mut curves, cfg.family_window, p, opts);
    curves.sort_by_key(|c| c.family_index.unwrap_or(usize::MAX));
    Ok(curves)
}

/// Outcome of [`census`].
#[derive(Debug, Clone, Default)]
pub struct Census {
    /// Distinct refined orbits, ordered by family and arclength.
    pub records: Vec<PeriodicOrbitRecord>,
    /// Candidates that failed to refine, with the reason.
    pub rejected: Vec<(Option<usize>, f64, String)>,
}

/// Detects and refines the periodic orbits of every curve. Candidates that
/// refine to an orbit already found on the same curve are merged.
pub fn census(
    curves: &[FamilyCurve],
    p: &Problem,
    opts: &NewtonOptions,
    samples: usize,
    verify_tol: f64,
) -> Census {
    let jobs: Vec<(usize, Option<usize>, f64, FamilyPoint)> = curves
        .iter()
        .enumerate()
        .flat_map(|(k, c)| {
            let mut v = detect_periodic(c, p);
            v.extend(end_candidates(c));
            v.into_iter().map(move |(s, q)| (k, c.family_index, s, q))
        })
        .collect();
    let refined: Vec<_> = jobs
        .par_iter()
        .map(|(k, fam, s, q)| {
            let r = refine_periodic(q, p, opts, samples, verify_tol).map(|mut r| {
                r.family_index = *fam;
                r.s = *s;
                r
            });
            (*k, *fam, *s, r)
        })
        .collect();
    let mut out = Census::default();
    let mut seen: Vec<(usize, PeriodicOrbitRecord)> = Vec::new();
    for (k, fam, s, r) in refined {
        match r {
            Ok(r) => match seen
                .iter_mut()
                .find(|(k2, o)| *k2 == k && same_orbit(&o.point, &r.point))
            {
                Some((_, o)) if quality(&r) < quality(o) => *o = r,
                Some(_) => {}
                None => seen.push((k, r)),
            },
            Err(e) => out.rejected.push((fam, s, e.to_string())),
        }
    }
    out.records = seen.into_iter().map(|(_, r)| r).collect();
    out.records.sort_by(|a, b| {
        a.family_index
            .unwrap_or(usize::MAX)
            .cmp(&b.family_index.unwrap_or(usize::MAX))
            .then(a.s.total_cmp(&b.s))
    });
    out
}

/// Distinct periodic points of one curve lie at least 0.1 apart; refinements
/// of the same one can differ by 10⁻⁴ near collision.
fn same_orbit(a: &FamilyPoint, b: &FamilyPoint) -> bool {
    let (ra, ua, wa) = a.active();
    let (rb, ub, wb) = b.active();
    ra == rb && (ua - ub).abs() < 1e-2 && (wa - wb).abs() < 1e-2 && (a.tau0 - b.tau0).abs() < 1e-2
}

fn quality(r: &PeriodicOrbitRecord) -> (bool, f64) {
    (!r.report.success(), r.report.symmetry.max(r.report.closure))
}

/// Default verification setting for periodic records.
pub const VERIFY_TOL: f64 = 1e-5;
pub const VERIFY_SAMPLES: usize = DEFAULT_SAMPLES;

pub const CURVE_CSV_HEADER: &str = "# choreo4 family-curve v1";
pub const RECORD_CSV_HEADER: &str = "# choreo4 periodic-orbit v1";
const COLUMNS: &str = "family,s,u10,u20,w10,w20,tau0,T0,h0";

fn family_field(f: Option<usize>) -> String {
    f.map(|i| i.to_string()).unwrap_or_default()
}

fn point_fields(q: &FamilyPoint) -> String {
    format!(
        "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
        q.seed.u10, q.seed.u20, q.seed.w10, q.seed.w20, q.tau0, q.t0, q.h0
    )
}

pub fn write_curves_csv<W: Write>(mut out: W, curves: &[FamilyCurve]) -> io::Result<()> {
    writeln!(out, "{CURVE_CSV_HEADER}")?;
    writeln!(out, "{COLUMNS}")?;
    for c in curves {
        let fam = family_field(c.family_index);
        for (s, q) in c.arclength.iter().zip(&c.points) {
            writeln!(out, "{fam},{s:.16e},{}", point_fields(q))?;
        }
    }
    Ok(())
}

pub fn write_records_csv<W: Write>(mut out: W, records: &[PeriodicOrbitRecord]) -> io::Result<()> {
    writeln!(out, "{RECORD_CSV_HEADER}")?;
    writeln!(out, "{COLUMNS},motion,shooting,residual,symmetry,closure")?;
    for r in records {
        writeln!(
            out,
            "{},{:.16e},{},{},{},{:.3e},{:.3e},{:.3e}",
            family_field(r.family_index),
            r.s,
            point_fields(&r.point),
            r.motion,
            r.shooting,
            r.point.residual,
            r.report.symmetry,
            r.report.closure
        )?;
    }
    Ok(())
}
