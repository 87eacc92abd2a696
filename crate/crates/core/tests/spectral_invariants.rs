mod common;

use floquet_sep::cone::{focusing_constants, DEFAULT_DELTA_MIN};
use floquet_sep::spectrum::{
    birkhoff_beta_lowerbound, oseledets_split, pullback_floquet, top_lyapunov, OseledetsOptions, PullbackOptions,
};
use floquet_sep::{norm, Segment, Segment64, SpaceNorm};

use common::{flow, pure_delay, switching};

const M: usize = 40;
const L2: SpaceNorm = SpaceNorm::Lp(2.0);

#[test]
fn floquet_direction_is_carried_by_the_flow() {
    let omega = switching(11);
    let fl = flow(&omega, M);
    let u = Segment::constant(M, &[1.0, 1.0]);
    let opts = PullbackOptions { tolerance: 1e-8, ..PullbackOptions::default() };
    let here = pullback_floquet(&fl, &omega, 30.0, &u, L2, &opts).unwrap();
    for t in [1.0, 2.5, 4.0] {
        let moved = fl.apply(&omega, t, &here.w, L2).unwrap();
        let moved = moved.scaled(1.0 / norm(&moved, L2));
        let there = pullback_floquet(&fl, &omega.shifted(t), 30.0, &u, L2, &opts).unwrap();
        let gap = norm(&moved.combine(1.0, &there.w, -1.0).unwrap(), L2);
        assert!(gap <= 3.0 * here.residual.max(there.residual) + 1e-12, "t = {t}: {gap}");
    }
}

#[test]
fn cone_trajectories_are_attracted() {
    let omega = switching(12);
    let fl = flow(&omega, M);
    let u = Segment::from_fn(2, M, |s: f64| vec![1.0 + s, 0.2]).unwrap();
    let est = pullback_floquet(&fl, &omega, 40.0, &u, L2, &PullbackOptions::default()).unwrap();
    let ose = oseledets_split(&fl, &omega, 1.0, 200.0, L2, &OseledetsOptions::default(), None).unwrap();
    let sigma = ose.lambdas[0] - ose.lambda2;
    let rate = est.sigma_forward.expect("enough converged points for a fit");
    assert!(-rate <= -0.5 * sigma, "slope {} vs sigma {sigma}", -rate);
}

#[test]
fn lower_bound_and_ordering() {
    let omega = switching(13);
    let fl = flow(&omega, M);
    let u = Segment::constant(M, &[1.0, 1.0]);
    let lam = top_lyapunov(&fl, &omega, &u, 200.0, 1.0, L2).unwrap();
    let report = focusing_constants(&omega, 1, L2, DEFAULT_DELTA_MIN).unwrap();
    let bound = birkhoff_beta_lowerbound(&fl, &omega, 20, &report, DEFAULT_DELTA_MIN).unwrap();
    assert!(bound.bound.is_finite());
    assert!(bound.bound <= lam.lambda1 + 1e-3);
    let ose = oseledets_split(&fl, &omega, 1.0, 200.0, L2, &OseledetsOptions::default(), None).unwrap();
    assert!(ose.lambda2 <= lam.lambda1 - 1e-3);
    assert_eq!(ose.leading_dim, 1);
}

#[test]
fn signed_starts_grow_like_the_cone() {
    let omega = switching(14);
    let fl = flow(&omega, M);
    let cone = top_lyapunov(&fl, &omega, &Segment::constant(M, &[1.0, 1.0]), 200.0, 1.0, SpaceNorm::C).unwrap();
    let u = Segment::from_fn(2, M, |s: f64| vec![(7.0 * s).sin() + 0.1, (3.0 * s).cos() - 0.5]).unwrap();
    assert!(u.min_entry() < 0.0 && u.max_entry() > 0.0);
    let signed = top_lyapunov(&fl, &omega, &u, 200.0, 1.0, SpaceNorm::C).unwrap();
    assert!((signed.lambda1 - cone.lambda1).abs() <= 3.0 * (signed.stderr + cone.stderr) + 2e-3);
}

#[test]
fn runs_are_bitwise_reproducible() {
    let a = switching(99);
    let b = switching(99);
    let u = Segment::constant(M, &[1.0, 0.5]);
    let ra = top_lyapunov(&flow(&a, M), &a, &u, 50.0, 1.0, SpaceNorm::C).unwrap();
    let rb = top_lyapunov(&flow(&b, M), &b, &u, 50.0, 1.0, SpaceNorm::C).unwrap();
    assert_eq!(ra.lambda1.to_bits(), rb.lambda1.to_bits());
    assert_eq!(ra.log_growth, rb.log_growth);
}

#[test]
fn single_precision_tracks_double() {
    let omega64 = pure_delay();
    let u64 = Segment64::constant(20, &[1.0, 1.0]);
    let l64 = top_lyapunov(&flow(&omega64, 20), &omega64, &u64, 40.0, 1.0, SpaceNorm::C).unwrap();
    let omega32 = floquet_sep::make_constant_driver(
        floquet_sep::Mat::<f32>::square_f64(2, &[0.0; 4]).unwrap(),
        floquet_sep::Mat::<f32>::square_f64(2, &[1.0, 0.0, 0.0, 1.0]).unwrap(),
    )
    .unwrap();
    let fl32 = floquet_sep::Semiflow::new(&omega32, 20).unwrap();
    let u32 = Segment::<f32>::constant(20, &[1.0, 1.0]);
    let l32 = top_lyapunov(&fl32, &omega32, &u32, 40.0f32, 1.0, SpaceNorm::C).unwrap();
    assert!((l32.lambda1 as f64 - l64.lambda1).abs() <= 1e-4);
}
