use hstab_core::charfn::{cosh_sinhc_from_eta, eval_char};
use hstab_core::{run_simulation, InitialData, SimConfig, SystemParams};
use num_complex::Complex64;
use proptest::prelude::*;

fn close(a: Complex64, b: Complex64, rel: f64) -> bool {
    (a - b).norm() <= rel * (1.0 + a.norm().max(b.norm()))
}

fn params() -> impl Strategy<Value = SystemParams> {
    (-5.0..5.0f64, -5.0..5.0f64, 0.1..5.0f64, 0.0..4.0f64, -3.0..3.0f64)
        .prop_map(|(a, b, lambda, length, k)| SystemParams::new(a, b, lambda, length, k).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn conjugate_symmetry(p in params(), re in -20.0..20.0f64, im in -20.0..20.0f64) {
        let s = Complex64::new(re, im);
        let f = eval_char(&p, s).unwrap();
        let g = eval_char(&p, s.conj()).unwrap();
        prop_assert!(close(f.conj(), g, 1e-12), "{f} vs {g}");
    }

    #[test]
    fn real_on_real_axis(p in params(), re in -20.0..20.0f64) {
        let f = eval_char(&p, Complex64::new(re, 0.0)).unwrap();
        prop_assert!(f.im.abs() <= 1e-12 * (1.0 + f.re.abs()));
    }

    #[test]
    fn eta_branch_evenness(re in -50.0..50.0f64, im in -50.0..50.0f64, length in 0.0..5.0f64) {
        let eta = Complex64::new(re, im);
        prop_assume!((eta * length).re.abs() < 600.0);
        let (c1, s1) = cosh_sinhc_from_eta(eta, length).unwrap();
        let (c2, s2) = cosh_sinhc_from_eta(-eta, length).unwrap();
        prop_assert!(close(c1, c2, 1e-12));
        prop_assert!(close(s1, s2, 1e-12));
    }

    #[test]
    fn zero_length_is_constant(p in params(), re in -30.0..30.0f64, im in -30.0..30.0f64) {
        let p = p.with_length(0.0);
        let f = eval_char(&p, Complex64::new(re, im)).unwrap();
        prop_assert_eq!(f, Complex64::new(p.k - 1.0, 0.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn simulation_is_linear(p in params(), c in -10.0..10.0f64) {
        prop_assume!(p.length > 0.05 && c.abs() > 1e-3);
        let n = 40;
        let mut cfg = SimConfig::new(p, n, 3.0);
        let base = cfg.initial_state();
        let e1 = run_simulation(&cfg).unwrap().trace;
        cfg.initial = InitialData::Fields {
            u: base.u.iter().map(|x| c * x).collect(),
            v: base.v.iter().map(|x| c * x).collect(),
        };
        let e2 = run_simulation(&cfg).unwrap().trace;
        for (a, b) in e1.energies.iter().zip(&e2.energies) {
            prop_assert!((c * c * a - b).abs() <= 1e-10 * b.abs().max(1e-300));
        }
    }
}
