//! Newtonian vector fields for the planar four-body problem and its restricted
//! limit around the figure-eight choreography.

use std::sync::OnceLock;

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::integrate::{self, IntegratorSettings, OdeSystem, State};

pub type Vec2 = Vector2<f64>;

/// Default distance below which the Cartesian fields refuse to evaluate.
pub const DEFAULT_COLLISION_EPS: f64 = 1e-12;

/// Quoted period of the choreography (nine significant digits).
pub const PRINTED_PERIOD: f64 = 6.32591398;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassConfig {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub m4: f64,
}

impl MassConfig {
    pub fn new(m1: f64, m2: f64, m3: f64, m4: f64) -> Result<Self> {
        let m = Self { m1, m2, m3, m4 };
        if m.as_array().iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::Domain(format!(
                "masses must be finite and non-negative: {m:?}"
            )));
        }
        Ok(m)
    }

    /// Unit-mass primaries and a massless fourth body.
    pub const fn restricted() -> Self {
        Self {
            m1: 1.0,
            m2: 1.0,
            m3: 1.0,
            m4: 0.0,
        }
    }

    pub fn is_restricted(&self) -> bool {
        *self == Self::restricted()
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.m1, self.m2, self.m3, self.m4]
    }

    /// Mass of the regularized pair {1, 4}.
    pub fn pair_mass(&self) -> f64 {
        self.m1 + self.m4
    }
}

impl Default for MassConfig {
    fn default() -> Self {
        Self::restricted()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BodyState {
    pub r: Vec2,
    pub v: Vec2,
}

impl BodyState {
    pub fn new(x: f64, y: f64, vx: f64, vy: f64) -> Self {
        Self {
            r: Vec2::new(x, y),
            v: Vec2::new(vx, vy),
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.r.x, self.r.y, self.v.x, self.v.y]
    }

    pub fn max_abs_diff(&self, other: &BodyState) -> f64 {
        (self.r - other.r).amax().max((self.v - other.v).amax())
    }
}

/// Time derivative of a [`BodyState`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BodyRate {
    pub dr: Vec2,
    pub dv: Vec2,
}

/// Cartesian state of the four bodies at natural time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SystemState {
    pub bodies: [BodyState; 4],
    pub t: f64,
}

impl SystemState {
    pub fn to_vector(&self) -> State<16> {
        let mut v = State::<16>::zeros();
        for (i, b) in self.bodies.iter().enumerate() {
            v[4 * i] = b.r.x;
            v[4 * i + 1] = b.r.y;
            v[4 * i + 2] = b.v.x;
            v[4 * i + 3] = b.v.y;
        }
        v
    }

    pub fn from_vector(t: f64, v: &State<16>) -> Self {
        let mut bodies = [BodyState::default(); 4];
        for (i, b) in bodies.iter_mut().enumerate() {
            *b = BodyState::new(v[4 * i], v[4 * i + 1], v[4 * i + 2], v[4 * i + 3]);
        }
        Self { bodies, t }
    }

    pub fn positions(&self) -> [Vec2; 4] {
        self.bodies.map(|b| b.r)
    }

    /// Total linear momentum.
    pub fn momentum(&self, m: &MassConfig) -> Vec2 {
        self.bodies
            .iter()
            .zip(m.as_array())
            .map(|(b, mi)| b.v * mi)
            .sum()
    }

    pub fn center_of_mass(&self, m: &MassConfig) -> Vec2 {
        let total: f64 = m.as_array().iter().sum();
        self.bodies
            .iter()
            .zip(m.as_array())
            .map(|(b, mi)| b.r * mi)
            .sum::<Vec2>()
            / total
    }

    pub fn angular_momentum(&self, m: &MassConfig) -> f64 {
        self.bodies
            .iter()
            .zip(m.as_array())
            .map(|(b, mi)| mi * (b.r.x * b.v.y - b.r.y * b.v.x))
            .sum()
    }
}

/// Time derivative of a [`SystemState`]; `dt` is always 1.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SystemRate {
    pub bodies: [BodyRate; 4],
    pub dt: f64,
}

/// `m_j (r_j - r_i) / |r_j - r_i|^3`, failing below the collision threshold.
#[inline]
pub(crate) fn pull(ri: Vec2, rj: Vec2, mj: f64, pair: (usize, usize), eps: f64) -> Result<Vec2> {
    let d = rj - ri;
    let r2 = d.norm_squared();
    let r = r2.sqrt();
    if !(r >= eps) {
        return Err(Error::Singularity { pair, distance: r });
    }
    Ok(d * (mj / (r2 * r)))
}

/// Accelerations of the bodies flagged in `active`; inactive bodies get zero
/// and are not checked for collisions.
pub(crate) fn accelerations(
    pos: &[Vec2; 4],
    m: &[f64; 4],
    active: [bool; 4],
    eps: f64,
) -> Result<[Vec2; 4]> {
    let mut acc = [Vec2::zeros(); 4];
    for i in 0..4 {
        if !active[i] {
            continue;
        }
        for j in 0..4 {
            if j == i || !active[j] || m[j] == 0.0 {
                continue;
            }
            acc[i] += pull(pos[i], pos[j], m[j], (i + 1, j + 1), eps)?;
        }
    }
    Ok(acc)
}

/// Newtonian field of the four bodies.
pub fn four_body_field(s: &SystemState, m: &MassConfig) -> Result<SystemRate> {
    four_body_field_eps(s, m, DEFAULT_COLLISION_EPS)
}

pub fn four_body_field_eps(s: &SystemState, m: &MassConfig, eps: f64) -> Result<SystemRate> {
    let acc = accelerations(&s.positions(), &m.as_array(), [true; 4], eps)?;
    let mut rate = SystemRate {
        dt: 1.0,
        ..SystemRate::default()
    };
    for i in 0..4 {
        rate.bodies[i] = BodyRate {
            dr: s.bodies[i].v,
            dv: acc[i],
        };
    }
    Ok(rate)
}

/// Field of the massless test particle at `z`, with the primaries (bodies 1-3
/// of `primaries`) taken at time `t`.
pub fn restricted_field(z: &BodyState, t: f64, primaries: &SystemState) -> Result<BodyRate> {
    if (primaries.t - t).abs() > 1e-12 * (1.0 + t.abs()) {
        return Err(Error::Domain(format!(
            "primaries are given at t = {} but the field is requested at t = {t}",
            primaries.t
        )));
    }
    let mut a = Vec2::zeros();
    for (j, p) in primaries.bodies[..3].iter().enumerate() {
        a += pull(z.r, p.r, 1.0, (4, j + 1), DEFAULT_COLLISION_EPS)?;
    }
    Ok(BodyRate { dr: z.v, dv: a })
}

/// Cartesian four-body flow in natural time, state layout `[x, y, vx, vy]` per body.
#[derive(Debug, Clone, Copy)]
pub struct FourBody {
    pub masses: MassConfig,
    pub collision_eps: f64,
    /// When false the fourth body is frozen and ignored (choreography alone).
    pub track_body4: bool,
}

impl FourBody {
    pub fn new(masses: MassConfig) -> Self {
        Self {
            masses,
            collision_eps: DEFAULT_COLLISION_EPS,
            track_body4: true,
        }
    }

    pub fn primaries_only() -> Self {
        Self {
            track_body4: false,
            ..Self::new(MassConfig::restricted())
        }
    }
}

impl OdeSystem<16> for FourBody {
    fn rhs(&self, _t: f64, y: &State<16>) -> Result<State<16>> {
        let pos = [
            Vec2::new(y[0], y[1]),
            Vec2::new(y[4], y[5]),
            Vec2::new(y[8], y[9]),
            Vec2::new(y[12], y[13]),
        ];
        let active = [true, true, true, self.track_body4];
        let acc = accelerations(&pos, &self.masses.as_array(), active, self.collision_eps)?;
        let mut d = State::<16>::zeros();
        for i in 0..4 {
            if !active[i] {
                continue;
            }
            d[4 * i] = y[4 * i + 2];
            d[4 * i + 1] = y[4 * i + 3];
            d[4 * i + 2] = acc[i].x;
            d[4 * i + 3] = acc[i].y;
        }
        Ok(d)
    }
}

/// Figure-eight constants: period, the isosceles time unit and the epoch-0 state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EightConstants {
    pub period: f64,
    pub tbar: f64,
    /// Primaries at t = 0; body 4 is left at the origin with zero velocity.
    pub ic: SystemState,
}

impl EightConstants {
    /// Constants with a different period value (e.g. the refined one).
    pub fn with_period(mut self, period: f64) -> Self {
        self.period = period;
        self.tbar = period / 12.0;
        self
    }

    /// Natural time of the second isosceles boundary epoch, 6 Tbar.
    pub fn half_period(&self) -> f64 {
        6.0 * self.tbar
    }

    pub fn x10(&self) -> f64 {
        self.ic.bodies[0].r.x
    }

    pub fn vy10(&self) -> f64 {
        self.ic.bodies[0].v.y
    }

    /// Epoch-0 state with the test particle placed at `z`.
    pub fn with_test_particle(&self, z: BodyState) -> SystemState {
        let mut s = self.ic;
        s.bodies[3] = z;
        s
    }
}

pub fn eight_initial_conditions() -> EightConstants {
    let ic = SystemState {
        bodies: [
            BodyState::new(1.081017082650648, 0.0, 0.0, 0.467209527201224),
            BodyState::new(
                -0.540508541325324,
                0.345263314425768,
                1.097122382351121,
                -0.233604763600612,
            ),
            BodyState::new(
                -0.540508541325324,
                -0.345263314425768,
                -1.097122382351121,
                -0.233604763600612,
            ),
            BodyState::default(),
        ],
        t: 0.0,
    };
    EightConstants {
        period: PRINTED_PERIOD,
        tbar: PRINTED_PERIOD / 12.0,
        ic,
    }
}

/// Outcome of refining the choreography period from its initial conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodRefinement {
    pub printed: f64,
    pub refined: f64,
    /// Max-norm closure error of the primaries after the printed period.
    pub closure_printed: f64,
    /// Same after the refined period.
    pub closure_refined: f64,
}

/// Refines the period as the return time of body 1 to the x-axis (y1 = 0
/// with y1 increasing) closest to the printed period.
pub fn refine_period(cfg: &IntegratorSettings) -> Result<PeriodRefinement> {
    let consts = eight_initial_conditions();
    let sys = FourBody::primaries_only();
    let t_max = PRINTED_PERIOD + 0.05;
    let tr = integrate::propagate(&sys, consts.ic.to_vector(), (0.0, t_max), cfg)?;
    // y1 is component 1; bracket around the printed value
    let refined = tr.locate_crossing(1, 0.0, PRINTED_PERIOD - 0.04, PRINTED_PERIOD + 0.04)?;
    let closure = |t: f64| -> Result<f64> {
        let y = tr.eval(t)?;
        let s = SystemState::from_vector(t, &y);
        Ok((0..3)
            .map(|i| s.bodies[i].max_abs_diff(&consts.ic.bodies[i]))
            .fold(0.0, f64::max))
    };
    Ok(PeriodRefinement {
        printed: PRINTED_PERIOD,
        refined,
        closure_printed: closure(PRINTED_PERIOD)?,
        closure_refined: closure(refined)?,
    })
}

/// Refined period, computed once per process with tolerance 1e-13.
pub fn refined_period() -> &'static PeriodRefinement {
    static CELL: OnceLock<PeriodRefinement> = OnceLock::new();
    CELL.get_or_init(|| {
        refine_period(&IntegratorSettings::with_tolerance(1e-13))
            .expect("choreography integration from embedded constants cannot fail")
    })
}

/// Integrates the primaries alone from the epoch-0 state over `[0, t_end]`.
pub fn propagate_choreography(
    t_end: f64,
    cfg: &IntegratorSettings,
) -> Result<integrate::Trajectory<16>> {
    let consts = eight_initial_conditions();
    integrate::propagate(
        &FourBody::primaries_only(),
        consts.ic.to_vector(),
        (0.0, t_end),
        cfg,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_body_pull() {
        let mut s = SystemState::default();
        s.bodies[1].r = Vec2::new(1.0, 0.0);
        // keep the massless bodies away from the pair
        s.bodies[2].r = Vec2::new(5.0, 5.0);
        s.bodies[3].r = Vec2::new(-5.0, 5.0);
        let m = MassConfig::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let rate = four_body_field(&s, &m).unwrap();
        assert!((rate.bodies[0].dv - Vec2::new(1.0, 0.0)).norm() < 1e-15);
        assert!((rate.bodies[1].dv - Vec2::new(-1.0, 0.0)).norm() < 1e-15);
        assert_eq!(rate.dt, 1.0);
    }

    #[test]
    fn equilateral_accelerations_point_to_centroid() {
        let mut s = SystemState::default();
        for k in 0..3 {
            let th = 2.0 * std::f64::consts::PI * k as f64 / 3.0;
            s.bodies[k].r = Vec2::new(th.cos(), th.sin());
        }
        s.bodies[3].r = Vec2::new(10.0, 0.0);
        let rate = four_body_field(&s, &MassConfig::restricted()).unwrap();
        let mags: Vec<f64> = (0..3).map(|k| rate.bodies[k].dv.norm()).collect();
        for k in 0..3 {
            let a = rate.bodies[k].dv;
            let to_centroid = -s.bodies[k].r;
            assert!((a.x * to_centroid.y - a.y * to_centroid.x).abs() < 1e-14);
            assert!(a.dot(&to_centroid) > 0.0);
            assert!((mags[k] - mags[0]).abs() < 1e-14);
        }
    }

    #[test]
    fn restricted_limit_matches_body4_component() {
        let c = eight_initial_conditions();
        let z = BodyState::new(0.3, -0.2, 0.1, 0.4);
        let s = c.with_test_particle(z);
        let full = four_body_field(&s, &MassConfig::restricted()).unwrap();
        let restricted = restricted_field(&z, 0.0, &c.ic).unwrap();
        assert!((full.bodies[3].dv - restricted.dv).norm() < 1e-15);
        assert_eq!(full.bodies[3].dr, restricted.dr);
    }

    #[test]
    fn restricted_field_oracles() {
        let c = eight_initial_conditions();
        // direct term-by-term sum at the origin
        let z = BodyState::default();
        let a = restricted_field(&z, 0.0, &c.ic).unwrap().dv;
        let mut expect = [0.0_f64; 2];
        for p in &c.ic.bodies[..3] {
            let dx = p.r.x;
            let dy = p.r.y;
            let d3 = (dx * dx + dy * dy).powf(1.5);
            expect[0] += dx / d3;
            expect[1] += dy / d3;
        }
        assert!((a.x - expect[0]).abs() < 1e-14 && (a.y - expect[1]).abs() < 1e-14);

        // mirror symmetry of the isosceles configuration
        let a = restricted_field(&BodyState::new(0.4, 0.0, 0.0, 1.0), 0.0, &c.ic)
            .unwrap()
            .dv;
        assert!(a.y.abs() < 1e-15);

        // far field looks like a point mass of 3
        let a = restricted_field(&BodyState::new(100.0, 0.0, 0.0, 0.0), 0.0, &c.ic)
            .unwrap()
            .dv;
        let mono = 3.0 / 100.0_f64.powi(2);
        assert!((a.norm() - mono).abs() / mono < 1e-3);
    }

    #[test]
    fn singularity_names_pair() {
        let c = eight_initial_conditions();
        let z = c.ic.bodies[1];
        match restricted_field(&z, 0.0, &c.ic) {
            Err(Error::Singularity { pair, .. }) => assert_eq!(pair, (4, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn eight_constants() {
        let c = eight_initial_conditions();
        assert_eq!(c.ic.bodies[0].r, Vec2::new(1.081017082650648, 0.0));
        assert_eq!(c.ic.bodies[0].v, Vec2::new(0.0, 0.467209527201224));
        let m = MassConfig::restricted();
        assert!(c.ic.momentum(&m).norm() < 1e-15);
        assert!(c.ic.center_of_mass(&m).norm() < 1e-15);
        assert!((c.tbar - 0.527159498333333).abs() < 1e-14);
        assert!((12.0 * c.tbar - c.period).abs() < 1e-15);
    }

    fn primaries_at(t: f64) -> SystemState {
        let cfg = IntegratorSettings::with_tolerance(1e-13);
        let y = integrate::propagate_final(
            &FourBody::primaries_only(),
            eight_initial_conditions().ic.to_vector(),
            (0.0, t),
            &cfg,
        )
        .unwrap();
        SystemState::from_vector(t, &y)
    }

    #[test]
    fn period_refinement() {
        let p = refined_period();
        eprintln!("{p:?}");
        assert!((p.refined - PRINTED_PERIOD).abs() < 1e-6);
        // the quoted value is already accurate to the integration noise
        assert!(p.closure_refined < 1e-10 && p.closure_printed < 1e-10);
    }

    #[test]
    fn choreography_symmetries() {
        let c = eight_initial_conditions().with_period(refined_period().refined);
        // a third of a period cyclically permutes the bodies
        let s = primaries_at(c.period / 3.0);
        for (i, j) in [(0usize, 2usize), (1, 0), (2, 1)] {
            assert!(s.bodies[i].max_abs_diff(&c.ic.bodies[j]) < 1e-9, "{i}->{j}");
        }
        // half a period: body 1 sits on the other tip of the eight with the same velocity
        let s = primaries_at(c.half_period());
        let b = s.bodies[0];
        let b0 = c.ic.bodies[0];
        assert!(
            (b.r + b0.r).norm() < 1e-9 && (b.v - b0.v).norm() < 1e-9,
            "{b:?}"
        );
        // 2 Tbar is an isosceles epoch: the configuration is symmetric about some axis through a body
        let s = primaries_at(2.0 * c.tbar);
        let m = MassConfig::restricted();
        assert!(s.momentum(&m).norm() < 1e-12);
        assert!(s.angular_momentum(&m).abs() < 1e-10);
        let d = |a: usize, b: usize| (s.bodies[a].r - s.bodies[b].r).norm();
        let sides = [d(0, 1), d(1, 2), d(2, 0)];
        let iso = (0..3).any(|k| (sides[k] - sides[(k + 1) % 3]).abs() < 1e-9);
        assert!(iso, "{sides:?}");
    }

    #[test]
    fn negative_mass_rejected() {
        assert!(MassConfig::new(1.0, -1.0, 1.0, 0.0).is_err());
    }
}
