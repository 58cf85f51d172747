//! Shooting formulation of the symmetric boundary problems, Kepler seeds and a
//! damped Newton solver.
//!
//! An orbit starting on `Fix(R̃)` at t = 0 and reaching `Fix(R̃)` again at the
//! next isosceles epoch t = 6 T̄ closes after 12 T̄. Three residual families
//! are provided: `Y` (position), `VX` (velocity), both at the fixed epoch, and
//! `R` (position and velocity at a free characteristic time).

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dynamics::{
    eight_initial_conditions, BodyState, EightConstants, FourBody, MassConfig, SystemState, Vec2,
};
use crate::error::{Error, Result};
use crate::integrate::{self, IntegratorSettings, OdeSystem, State, Trajectory};
use crate::regularization::{lc_matrix, regularized_to_cartesian, RegState, Regularized};

/// Column holding natural time in the regularized layout.
pub const T_COL: usize = 9;

/// Fixed data of the restricted problem: primaries, masses and integrator settings.
#[derive(Debug, Clone, Copy)]
pub struct Problem {
    pub consts: EightConstants,
    pub masses: MassConfig,
    pub cfg: IntegratorSettings,
}

impl Default for Problem {
    fn default() -> Self {
        Self {
            consts: eight_initial_conditions(),
            masses: MassConfig::restricted(),
            cfg: IntegratorSettings::default(),
        }
    }
}

impl Problem {
    pub fn with_tolerance(tol: f64) -> Self {
        Self {
            cfg: IntegratorSettings::with_tolerance(tol),
            ..Self::default()
        }
    }

    /// Natural time of the second boundary epoch, 6 T̄.
    pub fn target_time(&self) -> f64 {
        self.consts.half_period()
    }

    /// Full period of a symmetric orbit, 12 T̄.
    pub fn orbit_period(&self) -> f64 {
        12.0 * self.consts.tbar
    }

    pub fn system(&self) -> Regularized {
        Regularized::new(self.masses)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BvpKind {
    Y,
    VX,
    R,
}

impl fmt::Display for BvpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BvpKind::Y => "Y",
            BvpKind::VX => "VX",
            BvpKind::R => "R",
        })
    }
}

impl FromStr for BvpKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "Y" => Ok(BvpKind::Y),
            "VX" => Ok(BvpKind::VX),
            "R" => Ok(BvpKind::R),
            other => Err(Error::Parse(format!("unknown BVP kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Apsis {
    Periapsis,
    Apoapsis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Prograde,
    Retrograde,
}

impl Sense {
    pub fn flip(self) -> Self {
        match self {
            Sense::Prograde => Sense::Retrograde,
            Sense::Retrograde => Sense::Prograde,
        }
    }
}

impl fmt::Display for Sense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sense::Prograde => "prograde",
            Sense::Retrograde => "retrograde",
        })
    }
}

/// Side of body 1 on which the test particle starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Side {
    #[default]
    PlusX,
    MinusX,
}

/// Two-body ellipse about body 1 used to seed the test particle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeplerSeed {
    pub a: f64,
    pub e: f64,
    pub apsis: Apsis,
    pub sense: Sense,
    pub side: Side,
}

impl KeplerSeed {
    pub fn new(a: f64, e: f64, apsis: Apsis, sense: Sense) -> Self {
        Self {
            a,
            e,
            apsis,
            sense,
            side: Side::PlusX,
        }
    }

    /// Relative distance and speed at the chosen apsis (unit pair mass).
    pub fn apsis_state(&self) -> (f64, f64) {
        let (a, e) = (self.a, self.e);
        match self.apsis {
            Apsis::Periapsis => (a * (1.0 - e), ((1.0 + e) / (a * (1.0 - e))).sqrt()),
            Apsis::Apoapsis => (a * (1.0 + e), ((1.0 - e) / (a * (1.0 + e))).sqrt()),
        }
    }

    pub fn validate(&self, max_radius: f64) -> Result<()> {
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(Error::Domain(format!(
                "semimajor axis must be positive, got {}",
                self.a
            )));
        }
        if !(self.e >= 0.0 && self.e < 1.0) {
            return Err(Error::Domain(format!(
                "eccentricity must lie in [0, 1), got {}",
                self.e
            )));
        }
        let apo = self.a * (1.0 + self.e);
        if apo > max_radius {
            return Err(Error::Domain(format!(
                "apoapsis distance {apo} exceeds the near-collision bound {max_radius}"
            )));
        }
        Ok(())
    }
}

/// Default bound on `a (1 + e)` for Kepler seeds.
pub const KEPLER_MAX_RADIUS: f64 = 0.5;

/// Test particle at `(x0, 0)` with velocity `(0, vy0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartSeed {
    pub x0: f64,
    pub vy0: f64,
}

impl CartSeed {
    pub fn body(&self) -> BodyState {
        BodyState::new(self.x0, 0.0, 0.0, self.vy0)
    }
}

/// Which coordinate pair of a [`RegSeed`] carries the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rep {
    /// `(u10, w20)`: the particle starts right of body 1.
    U1,
    /// `(u20, w10)`: the particle starts left of body 1.
    U2,
}

impl fmt::Display for Rep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rep::U1 => "u1",
            Rep::U2 => "u2",
        })
    }
}

/// Regularized initial condition on `Fix(R̃)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RegSeed {
    pub u10: f64,
    pub u20: f64,
    pub w10: f64,
    pub w20: f64,
}

impl RegSeed {
    pub fn u1(u10: f64, w20: f64) -> Self {
        Self {
            u10,
            w20,
            ..Self::default()
        }
    }

    pub fn u2(u20: f64, w10: f64) -> Self {
        Self {
            u20,
            w10,
            ..Self::default()
        }
    }

    pub fn from_active(rep: Rep, u: f64, w: f64) -> Self {
        match rep {
            Rep::U1 => Self::u1(u, w),
            Rep::U2 => Self::u2(u, w),
        }
    }

    /// The representation in use; a seed with both or neither position
    /// coordinate set is rejected.
    pub fn rep(&self) -> Result<Rep> {
        match (self.u10 != 0.0, self.u20 != 0.0) {
            (true, false) if self.w10 == 0.0 => Ok(Rep::U1),
            (false, true) if self.w20 == 0.0 => Ok(Rep::U2),
            (false, false) => Err(Error::CollisionSeed),
            _ => Err(Error::Domain(format!("seed {self:?} is not on Fix(R̃)"))),
        }
    }

    /// `(u, w)` of the active pair.
    pub fn active(&self) -> Result<(Rep, f64, f64)> {
        Ok(match self.rep()? {
            Rep::U1 => (Rep::U1, self.u10, self.w20),
            Rep::U2 => (Rep::U2, self.u20, self.w10),
        })
    }

    /// The other preimage of the same physical state.
    pub fn negated(&self) -> Self {
        Self {
            u10: -self.u10,
            u20: -self.u20,
            w10: -self.w10,
            w20: -self.w20,
        }
    }

    /// Positive branch of the same physical state.
    pub fn canonical(&self) -> Self {
        if self.u10 < 0.0 || self.u20 < 0.0 {
            self.negated()
        } else {
            *self
        }
    }

    pub fn to_cartesian(&self, consts: &EightConstants) -> Result<CartSeed> {
        let (rep, u, w) = self.active()?;
        Ok(match rep {
            Rep::U1 => CartSeed {
                x0: consts.x10() + u * u,
                vy0: consts.vy10() + 2.0 * w / u,
            },
            Rep::U2 => CartSeed {
                x0: consts.x10() - u * u,
                vy0: consts.vy10() + 2.0 * w / u,
            },
        })
    }

    /// Regularized state at τ = 0 with the primaries at epoch 0.
    pub fn initial_state(&self, consts: &EightConstants, m: &MassConfig) -> Result<RegState> {
        self.rep()?;
        let u = Vec2::new(self.u10, self.u20);
        let w = Vec2::new(self.w10, self.w20);
        let uu = u.norm_squared();
        let mu = m.pair_mass();
        let b1 = consts.ic.bodies[0];
        let rel = crate::regularization::levi_civita_map(&u);
        let vrel = lc_matrix(&u) * w * (2.0 / uu);
        Ok(RegState {
            u,
            w,
            q: b1.r + rel * (m.m4 / mu),
            vq: b1.v + vrel * (m.m4 / mu),
            h: (2.0 * w.norm_squared() - mu) / uu,
            t: 0.0,
            body2: consts.ic.bodies[1],
            body3: consts.ic.bodies[2],
        })
    }
}

/// Places the test particle on the apsis of `k` about body 1 at epoch 0.
pub fn kepler_seed(k: &KeplerSeed, consts: &EightConstants) -> Result<CartSeed> {
    k.validate(KEPLER_MAX_RADIUS)?;
    let (r, v) = k.apsis_state();
    let side = match k.side {
        Side::PlusX => 1.0,
        Side::MinusX => -1.0,
    };
    let sense = match k.sense {
        Sense::Prograde => 1.0,
        Sense::Retrograde => -1.0,
    };
    Ok(CartSeed {
        x0: consts.x10() + side * r,
        vy0: consts.vy10() + side * sense * v,
    })
}

/// Canonical (positive branch) regularized seed of a Cartesian one.
pub fn seed_to_regularized(c: &CartSeed, consts: &EightConstants) -> Result<RegSeed> {
    let dx = c.x0 - consts.x10();
    let dv = c.vy0 - consts.vy10();
    if dx > 0.0 {
        let u = dx.sqrt();
        Ok(RegSeed::u1(u, 0.5 * u * dv))
    } else if dx < 0.0 {
        let u = (-dx).sqrt();
        Ok(RegSeed::u2(u, 0.5 * u * dv))
    } else {
        Err(Error::CollisionSeed)
    }
}

/// Position and scaled velocity boundary conditions at a regularized state:
/// `[2 u1 u2 + y1, 2 (u1 w1 - u2 w2) + |u|² vx1]`, i.e. the test particle's
/// `y` and `|u|² vx`.
pub fn boundary_terms(s: &RegState, m: &MassConfig) -> [f64; 2] {
    let mu = m.pair_mass();
    let uu = s.separation();
    let (r1, _) = s.pair_positions(m);
    let lw = lc_matrix(&s.u) * s.w;
    // |u|² vx1 stays finite at u = 0
    let uu_vx1 = uu * s.vq.x - (m.m4 / mu) * 2.0 * lw.x;
    [
        2.0 * s.u.x * s.u.y + r1.y,
        2.0 * (s.u.x * s.w.x - s.u.y * s.w.y) + uu_vx1,
    ]
}

fn check_tau0(tau0: f64) -> Result<()> {
    if !(tau0 >= 0.0 && tau0.is_finite()) {
        return Err(Error::Domain(format!(
            "characteristic fictitious time must be non-negative, got {tau0}"
        )));
    }
    Ok(())
}

/// Regularized state reached at fictitious time `tau0`.
pub fn reg_state_at(s: &RegSeed, tau0: f64, p: &Problem) -> Result<RegState> {
    check_tau0(tau0)?;
    let y0 = s.initial_state(&p.consts, &p.masses)?.to_vector();
    let y = integrate::propagate_final(&p.system(), y0, (0.0, tau0), &p.cfg)?;
    Ok(RegState::from_vector(&y))
}

/// Residual of the regularized boundary problem. `Y` and `VX` carry the time
/// condition `t(τ0) - 6 T̄` as their second component.
pub fn bvp_residual_reg(kind: BvpKind, s: &RegSeed, tau0: f64, p: &Problem) -> Result<[f64; 2]> {
    let end = reg_state_at(s, tau0, p)?;
    Ok(residual_from_state(kind, &end, p))
}

pub fn residual_from_state(kind: BvpKind, end: &RegState, p: &Problem) -> [f64; 2] {
    let [pos, vel] = boundary_terms(end, &p.masses);
    let dt = end.t - p.target_time();
    match kind {
        BvpKind::Y => [pos, dt],
        BvpKind::VX => [vel, dt],
        BvpKind::R => [pos, vel],
    }
}

/// [`boundary_terms`] divided by `|u|`. Same zero set, but it stays well
/// conditioned when the boundary state is close to collision: for `u ≈ (u1, 0)`
/// it reduces to `(2 u2 + y1/u1, 2 w1 + u1 vx1)`.
pub fn scaled_boundary_terms(s: &RegState, m: &MassConfig) -> [f64; 2] {
    let [a, b] = boundary_terms(s, m);
    let n = s.u.norm().max(f64::MIN_POSITIVE);
    [a / n, b / n]
}

/// Cartesian state of the restricted problem after natural time `t_end`.
pub fn cart_state_at(c: &CartSeed, t_end: f64, p: &Problem) -> Result<SystemState> {
    let s0 = p.consts.with_test_particle(c.body());
    let y = integrate::propagate_final(
        &FourBody::new(p.masses),
        s0.to_vector(),
        (0.0, t_end),
        &p.cfg,
    )
    .map_err(explain_cartesian)?;
    Ok(SystemState::from_vector(t_end, &y))
}

fn explain_cartesian(e: Error) -> Error {
    match e {
        Error::StepUnderflow { at, step } => Error::Domain(format!(
            "Cartesian integration stalled at t = {at} (h = {step:e}) near a close approach; \
             use the regularized chart"
        )),
        other => other,
    }
}

/// Residual of the Cartesian boundary problem: `[y(6T̄)]`, `[vx(6T̄)]` or
/// `[y(T0), vx(T0)]`.
pub fn bvp_residual_cart(kind: BvpKind, c: &CartSeed, t0: f64, p: &Problem) -> Result<Vec<f64>> {
    let t_end = match kind {
        BvpKind::R => {
            check_tau0(t0)?;
            t0
        }
        _ => p.target_time(),
    };
    let z = cart_state_at(c, t_end, p)?.bodies[3];
    Ok(match kind {
        BvpKind::Y => vec![z.r.y],
        BvpKind::VX => vec![z.v.x],
        BvpKind::R => vec![z.r.y, z.v.x],
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Relative central-difference step, scaled by `max(1, |x|)`.
    pub fd_step: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 50,
            max_halvings: 8,
            fd_step: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonResult {
    pub x: DVector<f64>,
    pub residual: DVector<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
}

/// Central-difference Jacobian over the coordinates in `free`.
pub fn fd_jacobian<F>(
    f: &F,
    x: &DVector<f64>,
    free: &[usize],
    rel_step: f64,
) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Sync,
{
    let cols: Vec<DVector<f64>> = free
        .par_iter()
        .map(|&j| {
            let h = rel_step * x[j].abs().max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            Ok((f(&xp)? - f(&xm)?) / (xp[j] - xm[j]))
        })
        .collect::<Result<_>>()?;
    let rows = cols.first().map_or(0, |c| c.len());
    Ok(DMatrix::from_fn(rows, free.len(), |i, j| cols[j][i]))
}

/// Least-squares (minimum norm when underdetermined) solution of `J d = -r`.
/// Columns are equilibrated first, since the unknowns can differ in
/// sensitivity by many orders of magnitude near collision.
pub(crate) fn newton_step(j: &DMatrix<f64>, r: &DVector<f64>) -> Result<DVector<f64>> {
    if j.iter().any(|v| !v.is_finite()) {
        return Err(Error::RankDeficient);
    }
    let scales: Vec<f64> = j.column_iter().map(|c| c.norm()).collect();
    if scales.contains(&0.0) {
        return Err(Error::RankDeficient);
    }
    let mut js = j.clone();
    for (k, mut c) in js.column_iter_mut().enumerate() {
        c /= scales[k];
    }
    let svd = js.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= smax * 1e-14 {
        return Err(Error::RankDeficient);
    }
    let mut d = svd.solve(&(-r), 0.0).map_err(|_| Error::RankDeficient)?;
    for (k, v) in d.iter_mut().enumerate() {
        *v /= scales[k];
    }
    Ok(d)
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| {
        if x.is_nan() {
            f64::INFINITY
        } else {
            m.max(x.abs())
        }
    })
}

/// Damped Newton (Gauss-Newton for non-square systems) on `f`, keeping the
/// coordinates listed in `fixed` at their initial values. The Jacobian comes
/// from central differences.
pub fn newton_solve<F>(
    f: F,
    x0: DVector<f64>,
    fixed: &[usize],
    opts: &NewtonOptions,
) -> Result<NewtonResult>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Sync,
{
    let free: Vec<usize> = (0..x0.len()).filter(|i| !fixed.contains(i)).collect();
    let jac = |x: &DVector<f64>| fd_jacobian(&f, x, &free, opts.fd_step);
    let out = newton_core(&f, jac, x0, &free, opts, |_, _| false)?;
    if out.residual_norm < opts.tol {
        Ok(out)
    } else {
        Err(Error::NewtonDiverged {
            iterations: out.iterations,
            residual: out.residual_norm,
        })
    }
}

/// Newton iteration with a caller-supplied Jacobian over the `free`
/// coordinates. Stops when the residual drops below `opts.tol`, when
/// `accept(x, r)` holds, or when the line search can no longer reduce the
/// residual (the returned point is then the best one seen).
pub(crate) fn newton_core<F, J, A>(
    f: &F,
    jac: J,
    x0: DVector<f64>,
    free: &[usize],
    opts: &NewtonOptions,
    accept: A,
) -> Result<NewtonResult>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
    J: Fn(&DVector<f64>) -> Result<DMatrix<f64>>,
    A: Fn(&DVector<f64>, &DVector<f64>) -> bool,
{
    let mut x = x0;
    let mut r = f(&x)?;
    let mut norm = inf_norm(&r);
    let done = |x: &DVector<f64>, r: &DVector<f64>, n: f64, it: usize| NewtonResult {
        x: x.clone(),
        residual: r.clone(),
        residual_norm: n,
        iterations: it,
    };
    for it in 0..opts.max_iter {
        if norm < opts.tol || accept(&x, &r) {
            return Ok(done(&x, &r, norm, it));
        }
        let d = newton_step(&jac(&x)?, &r)?;
        let mut lambda = 1.0;
        let mut improved = None;
        for _ in 0..=opts.max_halvings {
            let mut trial = x.clone();
            for (k, &i) in free.iter().enumerate() {
                trial[i] += lambda * d[k];
            }
            if let Ok(rt) = f(&trial) {
                let nt = inf_norm(&rt);
                if nt < norm {
                    improved = Some((trial, rt, nt));
                    break;
                }
            }
            lambda *= 0.5;
        }
        match improved {
            Some((bx, br, bn)) => {
                x = bx;
                r = br;
                norm = bn;
            }
            // stalled at the noise floor of the residual
            None => return Ok(done(&x, &r, norm, it + 1)),
        }
    }
    Ok(done(&x, &r, norm, opts.max_iter))
}

/// Regularized flow together with two tangent vectors, 54 components.
/// Directional derivatives of the field are taken by central differences on
/// the field itself, so the tangents share the integrator's error control.
#[derive(Debug, Clone, Copy)]
struct TangentFlow {
    base: Regularized,
}

impl TangentFlow {
    fn directional(&self, tau: f64, y: &State<18>, d: &State<18>) -> Result<State<18>> {
        let nd = d.norm();
        if nd == 0.0 {
            return Ok(State::<18>::zeros());
        }
        let eps = 1e-7 * y.norm().max(1.0) / nd;
        let fp = self.base.rhs(tau, &(y + d * eps))?;
        let fm = self.base.rhs(tau, &(y - d * eps))?;
        Ok((fp - fm) / (2.0 * eps))
    }
}

impl OdeSystem<54> for TangentFlow {
    fn rhs(&self, tau: f64, z: &State<54>) -> Result<State<54>> {
        let y: State<18> = z.fixed_rows::<18>(0).into_owned();
        let a: State<18> = z.fixed_rows::<18>(18).into_owned();
        let b: State<18> = z.fixed_rows::<18>(36).into_owned();
        let mut out = State::<54>::zeros();
        out.fixed_rows_mut::<18>(0)
            .copy_from(&self.base.rhs(tau, &y)?);
        out.fixed_rows_mut::<18>(18)
            .copy_from(&self.directional(tau, &y, &a)?);
        out.fixed_rows_mut::<18>(36)
            .copy_from(&self.directional(tau, &y, &b)?);
        Ok(out)
    }

    fn controlled(&self) -> usize {
        18
    }
}

/// End state of a shot with its derivatives with respect to the active seed
/// coordinates and to the final fictitious time.
#[derive(Debug, Clone, Copy)]
pub struct Shot {
    pub end: RegState,
    pub d_du: RegState,
    pub d_dw: RegState,
    pub d_dtau: RegState,
}

/// Derivatives of the initial state with respect to the active `(u, w)`.
fn initial_tangents(s: &RegSeed, p: &Problem) -> Result<(State<18>, State<18>)> {
    let (rep, u, w) = s.active()?;
    let y0 = s.initial_state(&p.consts, &p.masses)?;
    let mut du = RegState::default();
    let mut dw = RegState::default();
    match rep {
        Rep::U1 => {
            du.u.x = 1.0;
            dw.w.y = 1.0;
        }
        Rep::U2 => {
            du.u.y = 1.0;
            dw.w.x = 1.0;
        }
    }
    du.h = -2.0 * y0.h / u;
    dw.h = 4.0 * w / (u * u);
    if p.masses.m4 != 0.0 {
        // the pair's mass center moves with the seed only for a massive fourth body
        let hu = 1e-6 * u.abs();
        let hw = 1e-6 * w.abs().max(1e-3);
        let q = |uu: f64, ww: f64| -> Result<RegState> {
            RegSeed::from_active(rep, uu, ww).initial_state(&p.consts, &p.masses)
        };
        let (up, um) = (q(u + hu, w)?, q(u - hu, w)?);
        let (wp, wm) = (q(u, w + hw)?, q(u, w - hw)?);
        du.q = (up.q - um.q) / (2.0 * hu);
        du.vq = (up.vq - um.vq) / (2.0 * hu);
        dw.q = (wp.q - wm.q) / (2.0 * hw);
        dw.vq = (wp.vq - wm.vq) / (2.0 * hw);
    }
    Ok((du.to_vector(), dw.to_vector()))
}

/// Integrates from `s` to fictitious time `tau0` carrying the sensitivities.
pub fn shoot(s: &RegSeed, tau0: f64, p: &Problem) -> Result<Shot> {
    check_tau0(tau0)?;
    let y0 = s.initial_state(&p.consts, &p.masses)?.to_vector();
    let (a0, b0) = initial_tangents(s, p)?;
    let mut z0 = State::<54>::zeros();
    z0.fixed_rows_mut::<18>(0).copy_from(&y0);
    z0.fixed_rows_mut::<18>(18).copy_from(&a0);
    z0.fixed_rows_mut::<18>(36).copy_from(&b0);
    let sys = TangentFlow { base: p.system() };
    let z = integrate::propagate_final(&sys, z0, (0.0, tau0), &p.cfg)?;
    let y: State<18> = z.fixed_rows::<18>(0).into_owned();
    Ok(Shot {
        end: RegState::from_vector(&y),
        d_du: RegState::from_slice(z.fixed_rows::<18>(18).as_slice()),
        d_dw: RegState::from_slice(z.fixed_rows::<18>(36).as_slice()),
        d_dtau: RegState::from_vector(&p.system().rhs(tau0, &y)?),
    })
}

/// Directional derivative of [`boundary_terms`] at `s` along `d`.
pub fn boundary_terms_derivative(s: &RegState, d: &RegState, m: &MassConfig) -> [f64; 2] {
    let c = 2.0 * m.m1 / m.pair_mass();
    [
        c * (d.u.x * s.u.y + s.u.x * d.u.y) + d.q.y,
        c * (d.u.x * s.w.x + s.u.x * d.w.x - d.u.y * s.w.y - s.u.y * d.w.y)
            + 2.0 * s.u.dot(&d.u) * s.vq.x
            + s.separation() * d.vq.x,
    ]
}

/// Directional derivative of [`scaled_boundary_terms`].
pub fn scaled_boundary_terms_derivative(s: &RegState, d: &RegState, m: &MassConfig) -> [f64; 2] {
    let r = boundary_terms(s, m);
    let dr = boundary_terms_derivative(s, d, m);
    let n = s.u.norm().max(f64::MIN_POSITIVE);
    let dn = s.u.dot(&d.u) / n;
    [
        dr[0] / n - r[0] * dn / (n * n),
        dr[1] / n - r[1] * dn / (n * n),
    ]
}

impl Shot {
    /// Scaled R residual plus the time defect, and its 3×3 Jacobian over
    /// `(u, w, τ0)`.
    pub fn periodic_system(&self, p: &Problem) -> (DVector<f64>, DMatrix<f64>) {
        let m = &p.masses;
        let [a, b] = scaled_boundary_terms(&self.end, m);
        let r = DVector::from_column_slice(&[a, b, self.end.t - p.target_time()]);
        let mut j = DMatrix::zeros(3, 3);
        for (c, d) in [self.d_du, self.d_dw, self.d_dtau].iter().enumerate() {
            let [da, db] = scaled_boundary_terms_derivative(&self.end, d, m);
            j[(0, c)] = da;
            j[(1, c)] = db;
            j[(2, c)] = d.t;
        }
        (r, j)
    }

    /// Residual of `kind` in printed form and its 2×3 Jacobian over `(u, w, τ0)`.
    pub fn kind_system(&self, kind: BvpKind, p: &Problem) -> (DVector<f64>, DMatrix<f64>) {
        let m = &p.masses;
        let r = residual_from_state(kind, &self.end, p);
        let mut j = DMatrix::zeros(2, 3);
        for (c, d) in [self.d_du, self.d_dw, self.d_dtau].iter().enumerate() {
            let [dp, dv] = boundary_terms_derivative(&self.end, d, m);
            let col = match kind {
                BvpKind::Y => [dp, d.t],
                BvpKind::VX => [dv, d.t],
                BvpKind::R => [dp, dv],
            };
            j[(0, c)] = col[0];
            j[(1, c)] = col[1];
        }
        (DVector::from_column_slice(&r), j)
    }
}

/// A solved point of a regularized boundary problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolutionRecord {
    pub kind: BvpKind,
    pub seed: RegSeed,
    pub tau0: f64,
    /// Natural time reached at `tau0`.
    pub t0: f64,
    pub residual_norm: f64,
}

impl SolutionRecord {
    pub fn to_text(&self) -> String {
        format!(
            "kind={}\nu10={:e}\nu20={:e}\nw10={:e}\nw20={:e}\ntau0={:e}\nT0={:e}\nresidual_norm={:e}\n",
            self.kind,
            self.seed.u10,
            self.seed.u20,
            self.seed.w10,
            self.seed.w20,
            self.tau0,
            self.t0,
            self.residual_norm
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut kind = None;
        let mut vals = [None::<f64>; 7];
        const KEYS: [&str; 7] = ["u10", "u20", "w10", "w20", "tau0", "T0", "residual_norm"];
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("expected key=value, got '{line}'")))?;
            let (k, v) = (k.trim(), v.trim());
            if k == "kind" {
                kind = Some(v.parse::<BvpKind>()?);
            } else if let Some(i) = KEYS.iter().position(|x| *x == k) {
                vals[i] = Some(
                    v.parse()
                        .map_err(|_| Error::Parse(format!("bad number for {k}: '{v}'")))?,
                );
            } else {
                return Err(Error::Parse(format!("unknown key '{k}'")));
            }
        }
        let get =
            |i: usize| vals[i].ok_or_else(|| Error::Parse(format!("missing key '{}'", KEYS[i])));
        Ok(Self {
            kind: kind.ok_or_else(|| Error::Parse("missing key 'kind'".into()))?,
            seed: RegSeed {
                u10: get(0)?,
                u20: get(1)?,
                w10: get(2)?,
                w20: get(3)?,
            },
            tau0: get(4)?,
            t0: get(5)?,
            residual_norm: get(6)?,
        })
    }
}

/// Solves a regularized boundary problem from an initial guess.
///
/// Unknowns are `(u, w, τ0)` of the seed's active pair. Every kind has two
/// equations in three unknowns, so `fix` selects the unknown held constant
/// (0 = u, 1 = w, 2 = τ0).
pub fn solve_reg(
    kind: BvpKind,
    guess: &RegSeed,
    tau0: f64,
    fix: usize,
    p: &Problem,
    opts: &NewtonOptions,
) -> Result<SolutionRecord> {
    if fix > 2 {
        return Err(Error::InvalidSettings(format!(
            "fixed unknown index must be 0, 1 or 2, got {fix}"
        )));
    }
    let (rep, u, w) = guess.active()?;
    let seed_of = |x: &DVector<f64>| RegSeed::from_active(rep, x[0], x[1]);
    let free: Vec<usize> = (0..3).filter(|i| *i != fix).collect();
    let f = |x: &DVector<f64>| -> Result<DVector<f64>> {
        Ok(DVector::from_column_slice(&bvp_residual_reg(
            kind,
            &seed_of(x),
            x[2],
            p,
        )?))
    };
    let jac = |x: &DVector<f64>| -> Result<DMatrix<f64>> {
        let (_, j) = shoot(&seed_of(x), x[2], p)?.kind_system(kind, p);
        Ok(j.select_columns(free.iter()))
    };
    let sol = newton_core(
        &f,
        jac,
        DVector::from_column_slice(&[u, w, tau0]),
        &free,
        opts,
        |_, _| false,
    )?;
    if sol.residual_norm >= opts.tol {
        return Err(Error::NewtonDiverged {
            iterations: sol.iterations,
            residual: sol.residual_norm,
        });
    }
    let seed = seed_of(&sol.x);
    let end = reg_state_at(&seed, sol.x[2], p)?;
    Ok(SolutionRecord {
        kind,
        seed,
        tau0: sol.x[2],
        t0: end.t,
        residual_norm: sol.residual_norm,
    })
}

/// Newton solve of `[R residual, t(τ0) - 6 T̄]` over `(u, w, τ0)`.
///
/// The boundary part is iterated in its [`scaled_boundary_terms`] form so that
/// orbits ending next to collision stay well conditioned. Convergence is
/// declared on the printed residual; the record carries its max-norm.
pub fn solve_periodic(
    guess: &RegSeed,
    tau0: f64,
    p: &Problem,
    opts: &NewtonOptions,
) -> Result<SolutionRecord> {
    let (rep, u, w) = guess.active()?;
    let seed_of = |x: &DVector<f64>| RegSeed::from_active(rep, x[0], x[1]);
    let f = |x: &DVector<f64>| -> Result<DVector<f64>> {
        let end = reg_state_at(&seed_of(x), x[2], p)?;
        let [a, b] = scaled_boundary_terms(&end, &p.masses);
        Ok(DVector::from_column_slice(&[a, b, end.t - p.target_time()]))
    };
    let jac = |x: &DVector<f64>| -> Result<DMatrix<f64>> {
        Ok(shoot(&seed_of(x), x[2], p)?.periodic_system(p).1)
    };
    let printed = |x: &DVector<f64>| -> Result<f64> {
        let end = reg_state_at(&seed_of(x), x[2], p)?;
        let r = residual_from_state(BvpKind::R, &end, p);
        Ok(r[0]
            .abs()
            .max(r[1].abs())
            .max((end.t - p.target_time()).abs()))
    };
    let sol = newton_core(
        &f,
        jac,
        DVector::from_column_slice(&[u, w, tau0]),
        &[0, 1, 2],
        opts,
        |_, _| false,
    )?;
    let norm = printed(&sol.x)?;
    if norm >= opts.tol {
        return Err(Error::NewtonDiverged {
            iterations: sol.iterations,
            residual: norm,
        });
    }
    let seed = seed_of(&sol.x);
    Ok(SolutionRecord {
        kind: BvpKind::R,
        seed,
        tau0: sol.x[2],
        t0: sol.residual[2] + p.target_time(),
        residual_norm: norm,
    })
}

/// Same problem as [`solve_periodic`], shot backwards from the second fixed
/// point.
///
/// When the orbit reaches `Fix(R̃)` at t = 6T̄ almost in collision, the forward
/// map is extremely sensitive (condition numbers near 10¹³ are typical) while
/// the reversed one is not. The unknowns become the active coordinate and the
/// binding energy at the far end plus `τ0`; the residual is the Fix condition
/// and natural time back at t = 0. Restricted masses only.
pub fn solve_periodic_reverse(
    guess: &RegSeed,
    tau0: f64,
    p: &Problem,
    opts: &NewtonOptions,
) -> Result<ReverseSolution> {
    if !p.masses.is_restricted() {
        return Err(Error::InvalidSettings(
            "reverse shooting needs the restricted mass setting".into(),
        ));
    }
    let rep = guess.rep()?;
    let end = reg_state_at(guess, tau0, p)?;
    let t6 = p.target_time();
    let y = integrate::propagate_final(
        &FourBody::primaries_only(),
        p.consts.ic.to_vector(),
        (0.0, t6),
        &p.cfg,
    )?;
    let prim = SystemState::from_vector(t6, &y);
    let mu = p.masses.pair_mass();
    // which axis of the u plane the far end lies on
    let on_u1 = end.u.x.abs() >= end.u.y.abs();
    let (uc, wc) = if on_u1 {
        (end.u.x, end.w.y)
    } else {
        (end.u.y, end.w.x)
    };
    // near collision w is pinned near 1/√2 and h is the informative unknown
    let by_energy = uc.abs() < 0.1;
    let back = |x: &DVector<f64>| -> Result<RegState> {
        let (u, tau) = (x[0], x[2]);
        check_tau0(tau)?;
        let (w, h) = if by_energy {
            let h = x[1];
            let ww = (mu + h * u * u) / 2.0;
            if ww < 0.0 {
                return Err(Error::Domain(format!(
                    "no real velocity for u = {u}, h = {h}"
                )));
            }
            (wc.signum() * ww.sqrt(), h)
        } else {
            (x[1], (2.0 * x[1] * x[1] - mu) / (u * u))
        };
        let (u, w) = if on_u1 {
            (Vec2::new(u, 0.0), Vec2::new(0.0, w))
        } else {
            (Vec2::new(0.0, u), Vec2::new(w, 0.0))
        };
        let s = RegState {
            u,
            w,
            q: prim.bodies[0].r,
            vq: prim.bodies[0].v,
            h,
            t: t6,
            body2: prim.bodies[1],
            body3: prim.bodies[2],
        };
        let y = integrate::propagate_final(&p.system(), s.to_vector(), (0.0, -tau), &p.cfg)?;
        Ok(RegState::from_vector(&y))
    };
    let f = |x: &DVector<f64>| -> Result<DVector<f64>> {
        let s = back(x)?;
        let fix = match rep {
            Rep::U1 => [s.u.y, s.w.x],
            Rep::U2 => [s.u.x, s.w.y],
        };
        Ok(DVector::from_column_slice(&[fix[0], fix[1], s.t]))
    };
    let x0 = DVector::from_column_slice(&[uc, if by_energy { end.h } else { wc }, tau0]);
    let sol = newton_solve(f, x0, &[], opts)?;
    let anchor = back(&DVector::from_column_slice(&[sol.x[0], sol.x[1], 0.0]))?;
    let start = back(&sol.x)?;
    let seed = match rep {
        Rep::U1 => RegSeed::u1(start.u.x, start.w.y),
        Rep::U2 => RegSeed::u2(start.u.y, start.w.x),
    };
    Ok(ReverseSolution {
        record: SolutionRecord {
            kind: BvpKind::R,
            seed: seed.canonical(),
            tau0: sol.x[2],
            t0: t6 - sol.residual[2],
            residual_norm: sol.residual_norm,
        },
        anchor,
    })
}

/// Result of [`solve_periodic_reverse`]: the record in the usual t = 0 form and
/// the state on `Fix(R̃)` at t = 6T̄ the shot was anchored at.
#[derive(Debug, Clone, Copy)]
pub struct ReverseSolution {
    pub record: SolutionRecord,
    pub anchor: RegState,
}

/// Fictitious time at which the flow from `s` reaches natural time `t_target`.
pub fn tau_for_time(s: &RegSeed, t_target: f64, p: &Problem) -> Result<f64> {
    let tr = propagate_to_time(s, t_target, p)?;
    tr.locate_monotone(T_COL, t_target)
}

/// Regularized trajectory from `s` continued until natural time passes `t_target`.
pub fn propagate_to_time(s: &RegSeed, t_target: f64, p: &Problem) -> Result<Trajectory<18>> {
    let y0 = s.initial_state(&p.consts, &p.masses)?.to_vector();
    // t grows like τ·|u|² on average; the bound only needs to be generous
    let tr =
        integrate::propagate_until(&p.system(), y0, (0.0, 1e6), &p.cfg, |_, y: &State<18>| {
            y[T_COL] >= t_target
        })?;
    if tr.terminal().1[T_COL] < t_target {
        let (lo, hi) = (tr.start().1[T_COL], tr.terminal().1[T_COL]);
        return Err(Error::NotBracketed {
            target: t_target,
            lo,
            hi,
        });
    }
    Ok(tr)
}

/// A regularized trajectory read in natural time.
#[derive(Debug, Clone)]
pub struct RegOrbit {
    pub traj: Trajectory<18>,
    pub masses: MassConfig,
}

impl RegOrbit {
    pub fn new(s: &RegSeed, t_end: f64, p: &Problem) -> Result<Self> {
        Ok(Self {
            traj: propagate_to_time(s, t_end, p)?,
            masses: p.masses,
        })
    }

    pub fn reg_at(&self, t: f64) -> Result<RegState> {
        let tau = if t == 0.0 {
            self.traj.start().0
        } else {
            self.traj.locate_monotone(T_COL, t)?
        };
        let mut s = RegState::from_vector(&self.traj.eval(tau)?);
        s.t = t;
        Ok(s)
    }

    pub fn system_at(&self, t: f64) -> Result<SystemState> {
        regularized_to_cartesian(&self.reg_at(t)?, &self.masses)
    }

    pub fn particle_at(&self, t: f64) -> Result<BodyState> {
        Ok(self.system_at(t)?.bodies[3])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kepler_seed_examples() {
        let c = eight_initial_conditions();
        let k = KeplerSeed::new(0.05, 0.0, Apsis::Periapsis, Sense::Prograde);
        let s = kepler_seed(&k, &c).unwrap();
        assert!((s.x0 - 1.131017082650648).abs() < 1e-15);
        assert!((s.vy0 - (0.467209527201224 + 20f64.sqrt())).abs() < 1e-14);
        assert!((s.vy0 - 4.939345482201).abs() < 1e-11);
        let r = kepler_seed(
            &KeplerSeed {
                sense: Sense::Retrograde,
                ..k
            },
            &c,
        )
        .unwrap();
        assert!((r.vy0 - (0.467209527201224 - 20f64.sqrt())).abs() < 1e-14);
        let a = kepler_seed(
            &KeplerSeed {
                apsis: Apsis::Apoapsis,
                ..k
            },
            &c,
        )
        .unwrap();
        assert_eq!(a, s);
        assert!(KeplerSeed::new(0.4, 0.5, Apsis::Periapsis, Sense::Prograde)
            .validate(0.5)
            .is_err());
        assert!(KeplerSeed::new(0.1, 1.0, Apsis::Periapsis, Sense::Prograde)
            .validate(0.5)
            .is_err());
    }

    #[test]
    fn kepler_seed_energy_matches_ellipse() {
        let c = eight_initial_conditions();
        for apsis in [Apsis::Periapsis, Apsis::Apoapsis] {
            let k = KeplerSeed::new(0.08, 0.4, apsis, Sense::Retrograde);
            let s = kepler_seed(&k, &c).unwrap();
            let r = s.x0 - c.x10();
            let v = s.vy0 - c.vy10();
            let h = 0.5 * v * v - 1.0 / r;
            assert!((h + 1.0 / (2.0 * k.a)).abs() < 1e-12);
            // specific angular momentum sqrt(a (1 - e²)), negative for retrograde
            assert!((r * v + (k.a * (1.0 - k.e * k.e)).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn seed_to_regularized_examples() {
        let c = eight_initial_conditions();
        let s = seed_to_regularized(
            &CartSeed {
                x0: c.x10() + 0.04,
                vy0: c.vy10() + 0.5,
            },
            &c,
        )
        .unwrap();
        assert!((s.u10 - 0.2).abs() < 1e-12 && (s.w20 - 0.05).abs() < 1e-12);
        assert_eq!((s.u20, s.w10), (0.0, 0.0));
        let s = seed_to_regularized(
            &CartSeed {
                x0: c.x10() - 0.09,
                vy0: c.vy10() + 0.5,
            },
            &c,
        )
        .unwrap();
        assert!((s.u20 - 0.3).abs() < 1e-12 && (s.w10 - 0.075).abs() < 1e-12);
        assert_eq!(
            seed_to_regularized(
                &CartSeed {
                    x0: c.x10(),
                    vy0: 1.0
                },
                &c
            ),
            Err(Error::CollisionSeed)
        );
        // back to Cartesian
        let back = s.to_cartesian(&c).unwrap();
        assert!((back.x0 - (c.x10() - 0.09)).abs() < 1e-15);
        assert!((back.vy0 - (c.vy10() + 0.5)).abs() < 1e-12);
        assert_eq!(s.negated().to_cartesian(&c).unwrap(), back);
        assert_eq!(s.negated().canonical(), s);
    }

    #[test]
    fn zero_tau_residual_vanishes() {
        let p = Problem::default();
        for s in [RegSeed::u1(0.3, 0.2), RegSeed::u2(0.1, -0.4)] {
            assert_eq!(
                bvp_residual_reg(BvpKind::R, &s, 0.0, &p).unwrap(),
                [0.0, 0.0]
            );
        }
        assert!(matches!(
            bvp_residual_reg(BvpKind::R, &RegSeed::u1(0.3, 0.2), -1.0, &p),
            Err(Error::Domain(_))
        ));
        let c = CartSeed { x0: 1.3, vy0: 2.0 };
        assert_eq!(
            bvp_residual_cart(BvpKind::R, &c, 0.0, &p).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn newton_on_algebraic_systems() {
        let opts = NewtonOptions::default();
        // square system with root (1, 2)
        let f = |x: &DVector<f64>| {
            Ok(DVector::from_vec(vec![
                x[0] * x[0] - 1.0,
                x[0] * x[1] - 2.0,
            ]))
        };
        let r = newton_solve(f, DVector::from_vec(vec![3.0, 0.5]), &[], &opts).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-9 && (r.x[1] - 2.0).abs() < 1e-9);
        // already converged input is returned as is
        let x0 = DVector::from_vec(vec![1.0, 2.0]);
        let r = newton_solve(f, x0.clone(), &[], &opts).unwrap();
        assert_eq!((r.x, r.iterations), (x0, 0));
        // fixed coordinate
        let g = |x: &DVector<f64>| Ok(DVector::from_vec(vec![x[0] + x[1] * x[1] - 5.0]));
        let r = newton_solve(g, DVector::from_vec(vec![1.0, 1.0]), &[0], &opts).unwrap();
        assert_eq!(r.x[0], 1.0);
        assert!((r.x[1] - 2.0).abs() < 1e-9);
        // no root
        let h = |x: &DVector<f64>| Ok(DVector::from_vec(vec![x[0] * x[0] + 1.0]));
        assert!(newton_solve(h, DVector::from_vec(vec![0.3]), &[], &opts).is_err());
        // rank deficiency
        let k = |x: &DVector<f64>| {
            Ok(DVector::from_vec(vec![
                x[0] + x[1] - 1.0,
                2.0 * (x[0] + x[1]) - 3.0,
            ]))
        };
        assert_eq!(
            newton_solve(k, DVector::from_vec(vec![0.0, 0.0]), &[], &opts).unwrap_err(),
            Error::RankDeficient
        );
    }

    #[test]
    fn record_round_trip() {
        let r = SolutionRecord {
            kind: BvpKind::VX,
            seed: RegSeed::u2(0.123, -0.456),
            tau0: 27.5,
            t0: 3.16,
            residual_norm: 1.5e-12,
        };
        assert_eq!(SolutionRecord::from_text(&r.to_text()).unwrap(), r);
        assert!(SolutionRecord::from_text("kind=R\n").is_err());
        assert!(SolutionRecord::from_text("bogus").is_err());
    }
}
