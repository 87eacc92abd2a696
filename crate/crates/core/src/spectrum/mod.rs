//! Principal Floquet bundle, Lyapunov exponents, exponential separation and
//! temperedness, estimated on the grid discretization of the semiflow.
//!
//! Exponents that are `-∞` (kernel directions) are reported as
//! `T::neg_infinity()` and never averaged with finite values.

mod floquet;
mod lyapunov;
mod oseledets;
mod separation;
mod volume;

pub use floquet::{birkhoff_beta_lowerbound, pullback_floquet, BirkhoffBound, FloquetEstimate, PullbackOptions};
pub use lyapunov::{top_lyapunov, LyapunovEstimate};
pub use oseledets::{oseledets_split, OseledetsEstimate, OseledetsOptions};
pub use separation::{
    cross_space_compare, separation_report, temperedness_diagnostic, CrossSpaceRow, CrossSpaceTable,
    SeparationConfig, SeparationReport, Temperedness,
};
pub use volume::{volume_growth_exponents, VolumeEstimate};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dde::Segment;
use crate::scalar::Real;

/// Floor of the joint tolerance for two estimates of `λ₁`.
pub const LAMBDA1_AGREEMENT_FLOOR: f64 = 2e-3;
/// Allowed gap between the volume and QR estimates of `λ₂`.
pub const LAMBDA2_AGREEMENT: f64 = 5e-2;
/// Default bound on the drift of `ln ‖P̃‖` per unit time.
pub const TEMPERED_TOL: f64 = 1e-2;
/// Exponents closer than this are treated as equal.
pub const DEFAULT_RESOLUTION: f64 = 2e-2;
/// Relative size below which a Gram–Schmidt remainder counts as zero.
pub(crate) const COLLAPSE_RTOL: f64 = 1e-13;

#[inline]
pub(crate) fn grid_dot<T: Real>(a: &[T], b: &[T], w: &[T]) -> T {
    a.iter().zip(b).zip(w).map(|((x, y), g)| *x * *y * *g).sum()
}

#[inline]
pub(crate) fn grid_norm<T: Real>(a: &[T], w: &[T]) -> T {
    grid_dot(a, a, w).sqrt()
}

/// Removes from `x` its components along the orthonormal `basis` (two passes).
pub(crate) fn project_out<T: Real>(x: &mut [T], basis: &[Vec<T>], w: &[T]) {
    for _ in 0..2 {
        for b in basis {
            let c = grid_dot(x, b, w);
            x.iter_mut().zip(b).for_each(|(xi, bi)| *xi -= c * *bi);
        }
    }
}

/// Random continuous segment: a few low Fourier modes with uniform coefficients.
pub(crate) fn random_segment<T: Real>(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Segment<T> {
    let coef: Vec<[f64; 5]> = (0..n)
        .map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))
        .collect();
    Segment::from_fn(n, m, |s: T| {
        let s = s.to_f64_lossy() * std::f64::consts::PI;
        coef.iter()
            .map(|c| T::lit(c[0] + c[1] * s.cos() + c[2] * s.sin() + c[3] * (2.0 * s).cos() + c[4] * (2.0 * s).sin()))
            .collect()
    })
    .expect("random segment has consistent shape")
}

/// Start frame: the constant cone vector followed by `k - 1` random segments.
pub(crate) fn start_frame<T: Real>(n: usize, m: usize, k: usize, seed: u64) -> (Vec<Segment<T>>, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frame = vec![Segment::constant(m, &vec![T::one(); n])];
    for _ in 1..k {
        frame.push(random_segment(n, m, &mut rng));
    }
    (frame, rng)
}

/// Modified Gram–Schmidt in the grid inner product.
///
/// Returns `|R_ii|`; a column whose remainder collapses gets `0` and is
/// replaced by a fresh random direction so the frame stays full rank.
pub(crate) fn orthonormalize<T: Real>(
    cols: &mut [Vec<T>],
    w: &[T],
    n: usize,
    m: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<T> {
    let mut r = Vec::with_capacity(cols.len());
    for i in 0..cols.len() {
        let (done, rest) = cols.split_at_mut(i);
        let x = &mut rest[0];
        let before = grid_norm(x, w);
        project_out(x, done, w);
        let after = grid_norm(x, w);
        if after > T::lit(COLLAPSE_RTOL) * before && after > T::zero() && after.is_finite() {
            x.iter_mut().for_each(|v| *v /= after);
            r.push(after);
        } else {
            r.push(T::zero());
            loop {
                let mut y = random_segment::<T>(n, m, rng).flatten();
                project_out(&mut y, done, w);
                let ny = grid_norm(&y, w);
                if ny > T::lit(1e-3) {
                    y.iter_mut().for_each(|v| *v /= ny);
                    *x = y;
                    break;
                }
            }
        }
    }
    r
}

/// Mean and batch-means standard error of `xs` using 10 batches.
pub(crate) fn mean_and_batch_stderr<T: Real>(xs: &[T]) -> (T, T) {
    let n = xs.len();
    let mean = xs.iter().copied().sum::<T>() / T::from_count(n);
    let batches = 10usize;
    let size = n / batches;
    if size == 0 {
        return (mean, T::infinity());
    }
    let means: Vec<T> = (0..batches)
        .map(|b| xs[b * size..(b + 1) * size].iter().copied().sum::<T>() / T::from_count(size))
        .collect();
    let bm = means.iter().copied().sum::<T>() / T::from_count(batches);
    let var = means.iter().map(|&x| (x - bm) * (x - bm)).sum::<T>() / T::from_count(batches - 1);
    (mean, (var / T::from_count(batches)).sqrt())
}
