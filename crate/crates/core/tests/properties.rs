mod common;

use floquet_sep::{
    make_iid_switching_driver, norm, sample_coefficients, shift, Segment64, SpaceNorm, SwitchState,
};
use proptest::prelude::*;

use common::{flow, mat};

const M: usize = 12;

fn cooperative_state() -> impl Strategy<Value = SwitchState<f64>> {
    (prop::array::uniform4(-1.5..0.0f64), prop::array::uniform4(0.0..0.8f64), prop::array::uniform4(0.0..0.8f64))
        .prop_map(|(diag, off, b)| SwitchState {
            a: mat(&[diag[0], off[0], off[1], diag[1]]),
            b: mat(&b),
        })
}

fn system() -> impl Strategy<Value = floquet_sep::DriverPoint64> {
    (prop::collection::vec(cooperative_state(), 1..3), any::<u64>(), prop::sample::select(vec![0.5, 1.0, 0.75]))
        .prop_map(|(states, seed, cell)| make_iid_switching_driver(seed, states, cell).unwrap())
}

fn segment(nonneg: bool) -> impl Strategy<Value = Segment64> {
    let lo = if nonneg { 0.0 } else { -1.0 };
    prop::collection::vec(lo..1.0f64, 2 * (M + 1)).prop_map(|values| {
        let head = values[2 * M..].to_vec();
        Segment64::new(2, M, head, values).unwrap()
    })
}

fn rel_gap(a: &Segment64, b: &Segment64) -> f64 {
    let scale = a.values().iter().chain(a.head()).fold(1e-300, |acc: f64, x| acc.max(x.abs()));
    a.max_abs_diff(b) / scale
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn cocycle_law(omega in system(), u in segment(false), s in 0usize..30, t in 0usize..30) {
        let fl = flow(&omega, M);
        let (s, t) = (s as f64 / M as f64, t as f64 / M as f64);
        let direct = fl.apply(&omega, s + t, &u, SpaceNorm::C).unwrap();
        let first = fl.apply(&omega, s, &u, SpaceNorm::C).unwrap();
        let composed = fl.apply(&shift(&omega, s), t, &first, SpaceNorm::C).unwrap();
        prop_assert!(rel_gap(&direct, &composed) <= 1e-12);
    }

    #[test]
    fn linearity(omega in system(), u in segment(false), v in segment(false), a in -2.0..2.0f64, b in -2.0..2.0f64) {
        let fl = flow(&omega, M);
        let lhs = fl.apply(&omega, 2.5, &u.combine(a, &v, b).unwrap(), SpaceNorm::C).unwrap();
        let ru = fl.apply(&omega, 2.5, &u, SpaceNorm::C).unwrap();
        let rv = fl.apply(&omega, 2.5, &v, SpaceNorm::C).unwrap();
        let rhs = ru.combine(a, &rv, b).unwrap();
        prop_assert!(rel_gap(&lhs, &rhs) <= 1e-12);
    }

    #[test]
    fn cone_is_invariant(omega in system(), u in segment(true), t in 1usize..40) {
        let fl = flow(&omega, M);
        let v = fl.apply(&omega, t as f64 / M as f64, &u, SpaceNorm::C).unwrap();
        prop_assert!(v.min_entry() >= -1e-14 * v.max_entry().max(1.0));
    }

    #[test]
    fn order_is_preserved(omega in system(), u in segment(true), d in segment(true)) {
        let fl = flow(&omega, M);
        let v = u.combine(1.0, &d, 1.0).unwrap();
        let fu = fl.apply(&omega, 2.0, &u, SpaceNorm::C).unwrap();
        let fv = fl.apply(&omega, 2.0, &v, SpaceNorm::C).unwrap();
        prop_assert!(fv.combine(1.0, &fu, -1.0).unwrap().min_entry() >= -1e-13);
    }

    #[test]
    fn lattice_norms_are_monotone(u in segment(true), d in segment(true), p in 1.0..4.0f64) {
        let v = u.combine(1.0, &d, 1.0).unwrap();
        for space in [SpaceNorm::C, SpaceNorm::Lp(p), SpaceNorm::L1Hat] {
            prop_assert!(norm(&u, space) <= norm(&v, space) * (1.0 + 1e-14));
        }
    }

    #[test]
    fn embedding_norm_bounds(u in segment(false), p in 1.0..4.0f64) {
        let c = norm(&u, SpaceNorm::C);
        for space in [SpaceNorm::Lp(p), SpaceNorm::L1Hat] {
            let l = norm(&floquet_sep::embed_j(&u).unwrap(), space);
            prop_assert!(l <= 2.0 * c * (1.0 + 1e-14));
        }
    }

    #[test]
    fn shift_group_law(omega in system(), s in -20.0..20.0f64, t in -20.0..20.0f64, x in 0.0..5.0f64) {
        let a = sample_coefficients(&shift(&shift(&omega, s), t), x);
        let b = sample_coefficients(&shift(&omega, s + t), x);
        // Cell boundaries can land on either side after rounding; compare off them.
        let y = s + t + x;
        let cell = omega.cell_length().unwrap();
        let frac = (y / cell).fract().abs();
        prop_assume!(frac > 1e-9 && frac < 1.0 - 1e-9);
        prop_assert_eq!(a.a, b.a);
        prop_assert_eq!(a.b, b.b);
        let c = sample_coefficients(&shift(&omega, 0.0), x);
        prop_assert_eq!(c, sample_coefficients(&omega, x));
    }
}
