mod common;

use choreo4::bvp::{Problem, RegOrbit, T_COL};
use choreo4::dynamics::{propagate_choreography, BodyState, MassConfig, SystemState, Vec2};
use choreo4::integrate::{self, IntegratorSettings};
use choreo4::regularization::{
    cartesian_to_regularized, lc_inverse, levi_civita_map, regularized_to_cartesian, Branch,
    RegState, Regularized,
};
use choreo4::table::TABLE;
use common::{segments, CHART_TOL, MIN_SEPARATION};
use proptest::prelude::*;

#[test]
fn random_segments_agree_in_both_charts() {
    let m = MassConfig::restricted();
    for (i, (seg, c)) in segments(10, 7, &m).iter().enumerate() {
        assert!(c.min_separation > MIN_SEPARATION);
        assert!(
            c.max_diff < CHART_TOL,
            "segment {i} from t = {}: {c:?}",
            seg.start.t
        );
        assert!(c.max_h_drift < 1e-8, "segment {i}: {c:?}");
    }
}

#[test]
fn massive_fourth_body_segments_agree() {
    let m = MassConfig::new(1.0, 1.0, 1.0, 0.05).unwrap();
    for (seg, c) in segments(3, 11, &m) {
        assert!(c.max_diff < CHART_TOL, "from t = {}: {c:?}", seg.start.t);
        assert!(c.max_h_drift < 1e-8, "{c:?}");
    }
}

#[test]
fn both_branches_give_the_same_motion() {
    let m = MassConfig::restricted();
    let cfg = IntegratorSettings::with_tolerance(1e-13);
    let (seg, _) = segments(1, 3, &m)[0];
    let t1 = seg.start.t + seg.span;
    let run = |b: Branch| {
        let s0 = cartesian_to_regularized(&seg.start, &m, b).unwrap();
        let tr = integrate::propagate_until(
            &Regularized::new(m),
            s0.to_vector(),
            (0.0, 1e6),
            &cfg,
            |_, y| y[T_COL] >= t1,
        )
        .unwrap();
        let tau = tr.locate_monotone(T_COL, t1).unwrap();
        (tau, RegState::from_vector(&tr.eval(tau).unwrap()))
    };
    let (tp, p) = run(Branch::Plus);
    let (tm, q) = run(Branch::Minus);
    // the flow commutes with u -> -u, so the fictitious clocks agree as well
    assert!((tp - tm).abs() < 1e-10 * tp.max(1.0));
    assert!((p.u + q.u).norm() < 1e-10);
    assert!((p.w + q.w).norm() < 1e-9);
    let (a, b) = (
        regularized_to_cartesian(&p, &m).unwrap(),
        regularized_to_cartesian(&q, &m).unwrap(),
    );
    assert!(a.bodies[3].max_abs_diff(&b.bodies[3]) < 1e-9);
}

#[test]
fn massless_particle_leaves_body1_on_the_choreography() {
    // with m4 = 0 the pair centre is body 1 itself
    let p = Problem::default();
    let period = p.orbit_period();
    let orbit = RegOrbit::new(&TABLE[6].seed(), period, &p).unwrap();
    let prim = propagate_choreography(period, &p.cfg).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..=48 {
        let t = period * i as f64 / 48.0;
        let s = orbit.reg_at(t).unwrap();
        let b1 = SystemState::from_vector(t, &prim.eval(t).unwrap()).bodies[0];
        worst = worst.max((s.q - b1.r).amax()).max((s.vq - b1.v).amax());
    }
    assert!(worst < 1e-8, "{worst:e}");
}

#[test]
fn binding_energy_tracks_the_algebraic_form_on_table_orbits() {
    let p = Problem::default();
    for r in &TABLE {
        let y0 = r
            .seed()
            .initial_state(&p.consts, &p.masses)
            .unwrap()
            .to_vector();
        let tr = integrate::propagate(&p.system(), y0, (0.0, 2.0 * r.tau0), &p.cfg).unwrap();
        let (_, drift) = common::flow_diagnostics(&tr, &p.masses);
        assert!(drift < 1e-8, "row {}: {drift:e}", r.index);
    }
}

fn state_with_particle(rel: Vec2, vrel: Vec2) -> SystemState {
    let mut s = choreo4::dynamics::eight_initial_conditions().ic;
    let b1 = s.bodies[0];
    s.bodies[3] = BodyState {
        r: b1.r + rel,
        v: b1.v + vrel,
    };
    s
}

proptest! {
    #[test]
    fn cartesian_round_trip(r in 1e-3f64..1.0, th in -std::f64::consts::PI..std::f64::consts::PI, vx in -5.0f64..5.0, vy in -5.0f64..5.0,
                            m4 in prop_oneof![Just(0.0), 0.0f64..0.5], minus in any::<bool>()) {
        let m = MassConfig::new(1.0, 1.0, 1.0, m4).unwrap();
        let s = state_with_particle(Vec2::new(r * th.cos(), r * th.sin()), Vec2::new(vx, vy));
        let b = if minus { Branch::Minus } else { Branch::Plus };
        let back = regularized_to_cartesian(&cartesian_to_regularized(&s, &m, b).unwrap(), &m).unwrap();
        for i in 0..4 {
            prop_assert!(back.bodies[i].max_abs_diff(&s.bodies[i]) < 1e-14);
        }
    }

    #[test]
    fn regularized_round_trip(u1 in -1.0f64..1.0, u2 in -1.0f64..1.0, w1 in -1.0f64..1.0, w2 in -1.0f64..1.0) {
        let u = Vec2::new(u1, u2);
        prop_assume!(u.norm_squared() > 1e-3);
        let m = MassConfig::restricted();
        let mut s = choreo4::bvp::RegSeed::u1(0.3, 0.1).initial_state(&choreo4::dynamics::eight_initial_conditions(), &m).unwrap();
        s.u = u;
        s.w = Vec2::new(w1, w2);
        s.h = choreo4::regularization::binding_energy_regularized(&s.u, &s.w, &m).unwrap();
        let cart = regularized_to_cartesian(&s, &m).unwrap();
        let plus = cartesian_to_regularized(&cart, &m, Branch::Plus).unwrap();
        // the inverse picks one of ±u
        let back = if (plus.u - u).norm() < (plus.u + u).norm() { plus } else { plus.flip_branch() };
        prop_assert!((back.u - s.u).amax() < 1e-14);
        prop_assert!((back.w - s.w).amax() < 1e-14);
        // h is a difference of terms of size μ/|u|²; measure it against them
        let scale = s.h.abs().max(1.0) + m.pair_mass() / s.separation();
        prop_assert!((back.h - s.h).abs() < 1e-14 * scale);
    }

    #[test]
    fn levi_civita_map_squares_lengths(u1 in -10.0f64..10.0, u2 in -10.0f64..10.0) {
        let u = Vec2::new(u1, u2);
        let d = levi_civita_map(&u);
        prop_assert!((d.norm() - u.norm_squared()).abs() <= 1e-14 * u.norm_squared().max(1.0));
        let p = lc_inverse(&d, Branch::Plus);
        prop_assert!((p - u).norm().min((p + u).norm()) <= 1e-12 * u.norm().max(1.0));
        prop_assert_eq!(lc_inverse(&d, Branch::Minus), -p);
    }
}
