//! Random near-collision segments shared by the chart tests and the
//! acceptance run.
#![allow(dead_code)]

use choreo4::bvp::T_COL;
use choreo4::dynamics::{
    propagate_choreography, BodyState, FourBody, MassConfig, SystemState, Vec2,
};
use choreo4::integrate::{self, IntegratorSettings};
use choreo4::regularization::{
    cartesian_to_regularized, regularized_to_cartesian, Branch, RegState, Regularized,
};
use choreo4::symmetry::relative_diff;
use choreo4::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Both charts agree far below this on a segment.
pub const CHART_TOL: f64 = 1e-8;
pub const MIN_SEPARATION: f64 = 1e-3;

#[derive(Debug, Clone, Copy)]
pub struct Segment {
    pub start: SystemState,
    pub span: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Comparison {
    /// Largest [`relative_diff`] over bodies 1 and 4 at the sample times.
    pub max_diff: f64,
    /// Smallest `u·u` along the regularized solution.
    pub min_separation: f64,
    /// Largest `|h - h(u, w)| / max(1, |h|)` over steps with `u·u > 1e-3`.
    pub max_h_drift: f64,
}

/// Primaries at a random epoch and the test particle on a random ellipse
/// about body 1, with periapsis well clear of `MIN_SEPARATION`.
pub fn random_segment(rng: &mut ChaCha8Rng, m: &MassConfig) -> Segment {
    let cfg = IntegratorSettings::with_tolerance(1e-13);
    let t0 = rng.gen_range(0.0..6.3);
    let prim = propagate_choreography(t0, &cfg).unwrap().terminal().1;
    let mut start = SystemState::from_vector(t0, &prim);
    let a: f64 = rng.gen_range(0.02..0.12);
    // eccentric enough to pass within a few 10⁻³ of body 1
    let e: f64 = rng.gen_range(0.3..(1.0 - 1.5e-3 / a));
    let anomaly: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let omega: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let sense = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let mu = m.pair_mass();
    let pp = a * (1.0 - e * e);
    let r = pp / (1.0 + e * anomaly.cos());
    let (c, s) = ((anomaly + omega).cos(), (anomaly + omega).sin());
    let vr = (mu / pp).sqrt() * e * anomaly.sin();
    let vt = sense * (mu / pp).sqrt() * (1.0 + e * anomaly.cos());
    let rel = Vec2::new(r * c, r * s);
    let vrel = Vec2::new(vr * c - vt * s, vr * s + vt * c);
    let b1 = start.bodies[0];
    start.bodies[3] = BodyState {
        r: b1.r + rel,
        v: b1.v + vrel,
    };
    Segment {
        start,
        span: rng.gen_range(0.2..1.0),
    }
}

/// Draws `n` segments whose regularized solutions keep `u·u > MIN_SEPARATION`.
pub fn segments(n: usize, seed: u64, m: &MassConfig) -> Vec<(Segment, Comparison)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < n {
        let seg = random_segment(&mut rng, m);
        let Ok(cmp) = compare_charts(&seg, m) else {
            continue;
        };
        if cmp.min_separation > MIN_SEPARATION {
            out.push((seg, cmp));
        }
    }
    out
}

/// Propagates `seg` in both charts at tolerance 1e-13 and compares them at
/// 41 natural times.
pub fn compare_charts(seg: &Segment, m: &MassConfig) -> Result<Comparison> {
    let cfg = IntegratorSettings::with_tolerance(1e-13);
    let (t0, t1) = (seg.start.t, seg.start.t + seg.span);
    let cart = integrate::propagate(&FourBody::new(*m), seg.start.to_vector(), (t0, t1), &cfg)?;
    let r0 = cartesian_to_regularized(&seg.start, m, Branch::Plus)?;
    let reg = integrate::propagate_until(
        &Regularized::new(*m),
        r0.to_vector(),
        (0.0, 1e6),
        &cfg,
        |_, y| y[T_COL] >= t1,
    )?;
    let mut max_diff: f64 = 0.0;
    for i in 0..=40 {
        let t = t0 + seg.span * i as f64 / 40.0;
        let a = SystemState::from_vector(t, &cart.eval(t)?);
        let tau = if i == 0 {
            0.0
        } else {
            reg.locate_monotone(T_COL, t)?
        };
        let b = regularized_to_cartesian(&RegState::from_vector(&reg.eval(tau)?), m)?;
        for k in [0, 3] {
            max_diff = max_diff.max(relative_diff(&a.bodies[k], &b.bodies[k]));
        }
    }
    let (min_separation, max_h_drift) = flow_diagnostics(&reg, m);
    Ok(Comparison {
        max_diff,
        min_separation,
        max_h_drift,
    })
}

/// Smallest `u·u` over the steps, sampled five times per step,, and the
/// largest relative binding-energy drift where the algebraic form applies.
pub fn flow_diagnostics(reg: &integrate::Trajectory<18>, m: &MassConfig) -> (f64, f64) {
    let mut min_sep = f64::INFINITY;
    let mut drift: f64 = 0.0;
    for st in reg.steps() {
        for k in 0..=4 {
            let s = RegState::from_vector(&st.eval(st.x0 + st.h * k as f64 / 4.0));
            min_sep = min_sep.min(s.separation());
            if let Some(d) = s.h_drift(m) {
                drift = drift.max(d.abs() / 1f64.max(s.h.abs()));
            }
        }
    }
    (min_sep, drift)
}
