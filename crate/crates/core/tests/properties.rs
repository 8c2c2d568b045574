use fxtes::dither::{
    demod_hessian_signal, moment_quadrature, oscillator_closed_form, MomentIntegrand, TorusState,
};
use fxtes::dynamics::{learning_field, nfxtes_field, reduced_field, ClosedLoopState, NfxtesSystem};
use fxtes::params::{
    default_theta, derive_alphas, fixed_time_bound, gain_for_time, resonances, ControllerParams,
    Rational,
};
use fxtes::plant::{quartic_map, reference_quadratic, Analytic, Measure};
use fxtes::sim::VectorField;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn admissible() -> impl Strategy<Value = (f64, f64, f64)> {
    (2.05f64..8.0, 1.05f64..1.95, 1e-3f64..10.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bound_and_gain_round_trip((q1, q2, k) in admissible()) {
        let t = fixed_time_bound(k, q1, q2).unwrap();
        prop_assert!(t > 0.0);
        let back = gain_for_time(t, q1, q2).unwrap();
        prop_assert!((back - k).abs() <= 16.0 * f64::EPSILON * k);
    }

    #[test]
    fn exponents_have_opposite_signs((q1, q2, _k) in admissible()) {
        let (a1, a2) = derive_alphas(q1, q2).unwrap();
        prop_assert!(a1 > 0.0 && a1 < 1.0);
        prop_assert!(a2 < 0.0);
    }

    #[test]
    fn leaving_the_region_is_rejected((q1, q2, k) in admissible(), bad in -3.0f64..0.0) {
        prop_assert!(fixed_time_bound(-k, q1, q2).is_err());
        prop_assert!(fixed_time_bound(k, 2.0 + bad, q2).is_err());
        prop_assert!(fixed_time_bound(k, q1, 2.0 - bad).is_err());
    }

    #[test]
    fn moment_averages_hold_at_any_phase(p0 in 0.0f64..6.3, p1 in 0.0f64..6.3) {
        let theta = [Rational::from_integer(1), Rational::new(3, 4)];
        let phases = TorusState::from_angles(&[p0, p1]);
        for ig in MomentIntegrand::ALL {
            let ij = if ig.needs_distinct() { (0, 1) } else { (1, 1) };
            let v = moment_quadrature(&theta, &phases, ig, ij).unwrap();
            prop_assert!((v - ig.expected()).abs() < 1e-8, "({}) {}", ig.label(), v);
        }
    }

    #[test]
    fn oscillator_stays_on_torus(p0 in 0.0f64..6.3, p1 in 0.0f64..6.3, t in 0.0f64..100.0) {
        let mu = oscillator_closed_form(&TorusState::from_angles(&[p0, p1]), t, 0.1, &default_theta(2));
        for b in mu.as_slice().chunks(2) {
            prop_assert!((b[0] * b[0] + b[1] * b[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn hessian_signal_is_symmetric(p0 in 0.0f64..6.3, p1 in 0.0f64..6.3, p2 in 0.0f64..6.3, a in 0.01f64..2.0) {
        let n = demod_hessian_signal(&TorusState::from_angles(&[p0, p1, p2]), a);
        prop_assert_eq!(n.clone(), n.transpose());
    }

    #[test]
    fn quartic_derivatives_match_finite_differences(x0 in -10.0f64..10.0, x1 in -10.0f64..10.0) {
        let quad = reference_quadratic();
        let maps = [quad.clone(), quartic_map(quad.hessian(&[0.0, 0.0]), DVector::from_vec(vec![1.0, -2.0])).unwrap()];
        let x = [x0, x1];
        let step = 1e-5;
        for m in &maps {
            let g = m.gradient(&x);
            let h = m.hessian(&x);
            prop_assert!(h.clone().cholesky().is_some());
            for j in 0..2 {
                let mut p = x;
                let mut q = x;
                p[j] += step;
                q[j] -= step;
                let fd = (m.measure(&p) - m.measure(&q)) / (2.0 * step);
                prop_assert!((fd - g[j]).abs() <= 1e-6 * g.norm().max(1.0), "grad {} vs {}", fd, g[j]);
                let col = (m.gradient(&p) - m.gradient(&q)) / (2.0 * step);
                for i in 0..2 {
                    prop_assert!((col[i] - h[(i, j)]).abs() <= 1e-6 * h.norm().max(1.0));
                }
            }
        }
    }

    #[test]
    fn learning_field_is_bounded_by_its_power_law(s in -12i32..6, angle in 0.0f64..6.3) {
        let p = ControllerParams::figure1().validate().unwrap();
        let r = 10f64.powi(s);
        let xi1 = DMatrix::from_row_slice(2, 2, &[0.3, -0.1, -0.1, 0.6]);
        let xi2 = DVector::from_vec(vec![r * angle.cos(), r * angle.sin()]);
        let f = learning_field(&xi1, &xi2, &p).norm();
        let bound = p.k * xi1.norm() * (r.powf(1.0 - p.alpha1()) + r.powf(1.0 - p.alpha2()));
        prop_assert!(f <= bound * (1.0 + 1e-12));
    }

    #[test]
    fn reduced_flow_points_at_the_minimizer(x0 in -10.0f64..10.0, x1 in -10.0f64..10.0) {
        let map = reference_quadratic();
        let p = ControllerParams::figure1().validate().unwrap();
        let x = DVector::from_vec(vec![x0, x1]);
        let z = map.minimizer().unwrap();
        prop_assume!((&x - &z).norm() > 1e-3);
        let f = reduced_field(&x, &map, &p).unwrap();
        let d = &z - &x;
        prop_assert!((f.dot(&d) / (f.norm() * d.norm()) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn flat_and_reference_fields_agree(
        x0 in -10.0f64..10.0, x1 in -10.0f64..10.0,
        e in prop::array::uniform4(-1.0f64..1.0),
        g0 in -50.0f64..50.0, g1 in -50.0f64..50.0,
        p0 in 0.0f64..6.3, p1 in 0.0f64..6.3,
    ) {
        let map = reference_quadratic();
        let p = ControllerParams::figure1().validate().unwrap();
        let s = ClosedLoopState {
            x: DVector::from_vec(vec![x0, x1]),
            xi1: DMatrix::from_row_slice(2, 2, &e),
            xi2: DVector::from_vec(vec![g0, g1]),
            mu: TorusState::from_angles(&[p0, p1]),
        };
        let reference = nfxtes_field(&s, &map, &p).unwrap().to_flat();
        let mut fast = vec![0.0; reference.len()];
        NfxtesSystem::new(&map, &p).unwrap().eval(&s.to_flat(), &mut fast).unwrap();
        for (a, b) in reference.iter().zip(&fast) {
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
        }
    }
}

#[test]
fn default_frequencies_are_resonance_free() {
    for n in 1..=6 {
        let theta = default_theta(n);
        assert_eq!(theta.len(), n);
        assert!(resonances(&theta).is_empty(), "{n}: {theta:?}");
    }
}
