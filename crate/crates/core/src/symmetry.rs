//! Reversing symmetry `R̃(x, y, vx, vy) = (x, -y, -vx, vy)` and checks of
//! doubly symmetric periodicity.

use std::fmt;

use crate::dynamics::{BodyState, SystemState};
use crate::error::Result;

/// Uniform interior samples used by [`verify_symmetric_periodic`].
pub const DEFAULT_SAMPLES: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointResidual {
    pub y_res: f64,
    pub vx_res: f64,
}

impl FixedPointResidual {
    pub fn norm(&self) -> f64 {
        self.y_res.abs().max(self.vx_res.abs())
    }
}

pub fn rtilde_fixed_residual(z: &BodyState) -> FixedPointResidual {
    FixedPointResidual {
        y_res: z.r.y,
        vx_res: z.v.x,
    }
}

pub fn rtilde_reflect(z: &BodyState) -> BodyState {
    BodyState::new(z.r.x, -z.r.y, -z.v.x, z.v.y)
}

/// How far the primaries are from an isosceles epoch: the best permutation
/// `p` of the primaries with `R̃ body_i ≈ body_{p(i)}` and its max-norm defect.
pub fn isosceles_defect(s: &SystemState) -> ([usize; 3], f64) {
    const PERMS: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    PERMS
        .iter()
        .map(|p| {
            let d = (0..3)
                .map(|i| rtilde_reflect(&s.bodies[i]).max_abs_diff(&s.bodies[p[i]]))
                .fold(0.0, f64::max);
            (*p, d)
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryReport {
    pub tol: f64,
    pub period: f64,
    pub samples: usize,
    /// `rtilde_fixed_residual` at t = 0 and at half the period.
    pub start_fixed: f64,
    pub half_fixed: f64,
    /// max over samples of `|z(P - t) - R̃ z(t)|∞`.
    pub symmetry: f64,
    /// Where the symmetry maximum was attained.
    pub symmetry_worst_t: f64,
    /// `|z(P) - z(0)|∞`.
    pub closure: f64,
    pub error: Option<String>,
}

impl SymmetryReport {
    pub fn success(&self) -> bool {
        self.error.is_none()
            && self.start_fixed < self.tol
            && self.symmetry < self.tol
            && self.closure < self.tol
    }
}

impl fmt::Display for SymmetryReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "success={}", self.success())?;
        writeln!(f, "tol={:e}", self.tol)?;
        writeln!(f, "period={}", self.period)?;
        writeln!(f, "samples={}", self.samples)?;
        writeln!(f, "start_fixed={:e}", self.start_fixed)?;
        writeln!(f, "half_fixed={:e}", self.half_fixed)?;
        writeln!(f, "symmetry={:e}", self.symmetry)?;
        writeln!(f, "symmetry_worst_t={}", self.symmetry_worst_t)?;
        writeln!(f, "closure={:e}", self.closure)?;
        if let Some(e) = &self.error {
            writeln!(f, "error={e}")?;
        }
        Ok(())
    }
}

/// Checks `z(P - t) = R̃ z(t)` on `samples` interior points plus both ends and
/// the closure `z(P) = z(0)`, where `orbit(t)` returns the test particle at
/// natural time `t ∈ [0, P]`.
pub fn verify_symmetric_periodic<F>(
    orbit: F,
    period: f64,
    samples: usize,
    tol: f64,
) -> SymmetryReport
where
    F: Fn(f64) -> Result<BodyState>,
{
    verify_symmetric_periodic_with(orbit, period, samples, tol, |a, b| a.max_abs_diff(b))
}

/// Max-norm difference with positions measured relative to `max(1, |r|)` and
/// velocities relative to `max(1, |v|)`.
///
/// Near collision the particle moves at speeds of order 10³, and absolute
/// velocity differences mostly measure the timing of the periapsis passage.
pub fn relative_diff(a: &BodyState, b: &BodyState) -> f64 {
    let dr = (a.r - b.r).amax() / 1f64.max(a.r.norm()).max(b.r.norm());
    let dv = (a.v - b.v).amax() / 1f64.max(a.v.norm()).max(b.v.norm());
    dr.max(dv)
}

/// [`verify_symmetric_periodic`] with a caller-chosen distance. `orbit` may be
/// parametrized by any variable in which the symmetry reads `s ↦ P - s`, such
/// as fictitious time over a regularized orbit.
pub fn verify_symmetric_periodic_with<F, D>(
    orbit: F,
    period: f64,
    samples: usize,
    tol: f64,
    dist: D,
) -> SymmetryReport
where
    F: Fn(f64) -> Result<BodyState>,
    D: Fn(&BodyState, &BodyState) -> f64,
{
    let mut rep = SymmetryReport {
        tol,
        period,
        samples,
        start_fixed: f64::NAN,
        half_fixed: f64::NAN,
        symmetry: 0.0,
        symmetry_worst_t: 0.0,
        closure: f64::NAN,
        error: None,
    };
    let run = |rep: &mut SymmetryReport| -> Result<()> {
        let z0 = orbit(0.0)?;
        let zp = orbit(period)?;
        rep.start_fixed = rtilde_fixed_residual(&z0).norm();
        rep.half_fixed = rtilde_fixed_residual(&orbit(period / 2.0)?).norm();
        rep.closure = dist(&zp, &z0);
        let n = samples + 1;
        // by symmetry of the check only half of the grid is needed
        for k in 0..=n / 2 {
            let t = period * k as f64 / n as f64;
            let a = orbit(t)?;
            let b = if k == 0 { zp } else { orbit(period - t)? };
            let d = dist(&b, &rtilde_reflect(&a));
            if d > rep.symmetry {
                rep.symmetry = d;
                rep.symmetry_worst_t = t;
            }
        }
        Ok(())
    };
    if let Err(e) = run(&mut rep) {
        rep.error = Some(e.to_string());
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::eight_initial_conditions;

    #[test]
    fn fixed_residual_examples() {
        let r = rtilde_fixed_residual(&BodyState::new(0.7, 0.0, 0.0, 3.0));
        assert_eq!((r.y_res, r.vx_res), (0.0, 0.0));
        let r = rtilde_fixed_residual(&BodyState::new(0.7, 1e-3, 0.0, 3.0));
        assert_eq!((r.y_res, r.vx_res), (1e-3, 0.0));
        let r = rtilde_fixed_residual(&BodyState::new(0.7, 0.0, -2.0, 3.0));
        assert_eq!((r.y_res, r.vx_res), (0.0, -2.0));
    }

    #[test]
    fn reflect_examples() {
        let z = BodyState::new(1.0, 2.0, 3.0, 4.0);
        assert_eq!(rtilde_reflect(&z), BodyState::new(1.0, -2.0, -3.0, 4.0));
        assert_eq!(rtilde_reflect(&rtilde_reflect(&z)), z);
        let f = BodyState::new(0.3, 0.0, 0.0, -1.0);
        assert_eq!(rtilde_reflect(&f), f);
    }

    #[test]
    fn initial_primaries_are_isosceles() {
        let (p, d) = isosceles_defect(&eight_initial_conditions().ic);
        assert_eq!(p, [0, 2, 1]);
        assert_eq!(d, 0.0);
    }

    #[test]
    fn analytic_symmetric_orbit_passes_and_generic_fails() {
        // circular motion started on the x-axis is R̃-symmetric
        let p = 2.0 * std::f64::consts::PI;
        let circle = |t: f64| Ok(BodyState::new(t.cos(), t.sin(), -t.sin(), t.cos()));
        let rep = verify_symmetric_periodic(circle, p, DEFAULT_SAMPLES, 1e-12);
        assert!(rep.success(), "{rep}");
        let shifted = |t: f64| {
            let s = t + 0.1;
            Ok(BodyState::new(s.cos(), s.sin(), -s.sin(), s.cos()))
        };
        let rep = verify_symmetric_periodic(shifted, p, DEFAULT_SAMPLES, 1e-5);
        assert!(!rep.success());
        assert!(rep.to_string().contains("success=false"));
    }

    #[test]
    fn relative_diff_examples() {
        let a = BodyState::new(0.0, 0.0, 1000.0, 0.0);
        let b = BodyState::new(0.0, 0.0, 1001.0, 0.0);
        assert!((relative_diff(&a, &b) - 1.0 / 1001.0).abs() < 1e-15);
        // a small component of a fast velocity is judged against the speed
        let c = BodyState::new(0.0, 0.0, 1.0, 1000.0);
        let d = BodyState::new(0.0, 0.0, 2.0, 1000.0);
        assert!(relative_diff(&c, &d) < 1.1e-3);
        let c = BodyState::new(1e-3, 0.0, 0.0, 0.0);
        assert_eq!(relative_diff(&c, &BodyState::new(0.0, 0.0, 0.0, 0.0)), 1e-3);
    }
}
