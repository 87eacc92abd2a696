//! Reference computations that share no numerical path with [`crate::spectrum`].
//!
//! Each result is certified by evaluating its defining equation before it is returned.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dde::{apply_cocycle, flat_dim, grid_steps, grid_weights, Segment, SpaceNorm};
use crate::driver::{strongly_connected, DriverPoint};
use crate::error::{Error, Result};
use crate::linalg::{euclid, Mat};
use crate::scalar::Real;

/// Residual bound every Perron pair and characteristic root must meet.
pub const CERTIFY_TOL: f64 = 1e-10;

/// Spectral bound of a cooperative irreducible matrix and its positive eigenvector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerronData<T> {
    pub lambda: T,
    /// Euclidean unit vector with positive entries.
    pub v: Vec<T>,
    /// `‖A v - λ v‖`.
    pub residual: T,
}

/// Perron root and vector of a cooperative irreducible `A` by power iteration on `exp(A)`.
pub fn perron_oracle<T: Real>(a: &Mat<T>) -> Result<PerronData<T>> {
    if !a.is_square() || a.rows() == 0 {
        return Err(Error::InvalidInput("Perron oracle needs a square matrix".into()));
    }
    let n = a.rows();
    for i in 0..n {
        for j in 0..n {
            if i != j && a[(i, j)] < T::zero() {
                return Err(Error::InvalidInput(format!(
                    "matrix is not cooperative: entry ({}, {}) is negative",
                    i + 1,
                    j + 1
                )));
            }
        }
    }
    if !strongly_connected(a) {
        return Err(Error::Reducible);
    }
    // Shifting by the diagonal keeps exp bounded without moving the eigenvector.
    let shift = (0..n).map(|i| a[(i, i)]).fold(T::neg_infinity(), T::max);
    let mut shifted = a.clone();
    for i in 0..n {
        shifted[(i, i)] -= shift;
    }
    let mut p = shifted.expm();
    // Repeated squaring amplifies the spectral gap before the power iteration.
    for _ in 0..8 {
        p = p.matmul(&p);
        let s = p.norm_max();
        if !(s > T::zero()) || !s.is_finite() {
            return Err(Error::NumericalCollapse("Perron squaring underflow".into()));
        }
        p = p.scale(s.recip());
    }
    let mut v = vec![T::one(); n];
    normalize(&mut v);
    for _ in 0..10_000 {
        let mut next = p.matvec(&v);
        normalize(&mut next);
        let delta = next
            .iter()
            .zip(&v)
            .fold(T::zero(), |m, (x, y)| m.max((*x - *y).abs()));
        v = next;
        if delta <= T::epsilon() * T::lit(4.0) {
            break;
        }
    }
    if v.iter().any(|&x| !(x > T::zero())) {
        return Err(Error::Reducible);
    }
    let av = a.matvec(&v);
    let lambda = av.iter().zip(&v).map(|(x, y)| *x * *y).sum::<T>();
    let res: Vec<T> = av.iter().zip(&v).map(|(x, y)| *x - lambda * *y).collect();
    let residual = euclid(&res);
    let tol = T::lit(CERTIFY_TOL) * (T::one() + a.norm_inf());
    if !(residual <= tol) {
        return Err(Error::NotConverged {
            residual: residual.to_f64_lossy(),
            tolerance: tol.to_f64_lossy(),
        });
    }
    Ok(PerronData { lambda, v, residual })
}

fn normalize<T: Real>(v: &mut [T]) {
    let n = euclid(v);
    v.iter_mut().for_each(|x| *x /= n);
}

/// Roots of `λ = a + b e^{-λ}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharRootSet {
    pub a: f64,
    pub b: f64,
    /// Sorted by descending real part, positive imaginary part first within a pair.
    pub roots: Vec<Complex64>,
    /// Residual `|λ - a - b e^{-λ}|` per root.
    pub residuals: Vec<f64>,
    /// False when the search box held fewer roots than requested.
    pub complete: bool,
}

/// The `count` rightmost characteristic roots of `z' = a z + b z(t-1)`.
pub fn delay_char_roots(a: f64, b: f64, count: usize) -> Result<CharRootSet> {
    if count == 0 || count > 8 {
        return Err(Error::InvalidInput(format!("root count must be in 1..=8, got {count}")));
    }
    if !(b >= 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(Error::InvalidInput(format!("need finite a and b >= 0, got a = {a}, b = {b}")));
    }
    let f = |l: Complex64| l - a - b * (-l).exp();
    if b == 0.0 {
        return Ok(CharRootSet {
            a,
            b,
            roots: vec![Complex64::new(a, 0.0)],
            residuals: vec![0.0],
            complete: count == 1,
        });
    }
    let step = std::f64::consts::FRAC_PI_2;
    let mut found: Vec<Complex64> = Vec::new();
    let mut re = a - 2.0;
    while re <= a + b + 2.0 + 1e-12 {
        let mut im = 0.0;
        while im <= 6.0 * std::f64::consts::PI + 1e-12 {
            if let Some(root) = newton(Complex64::new(re, im), a, b) {
                if f(root).norm() <= CERTIFY_TOL
                    && !found.iter().any(|r| (r - root).norm() < 1e-7)
                {
                    found.push(root);
                }
            }
            im += step;
        }
        re += step;
    }
    // conjugate pairs by symmetry
    let mut roots: Vec<Complex64> = Vec::new();
    for r in found {
        let r = if r.im.abs() < 1e-12 { Complex64::new(r.re, 0.0) } else { r };
        for c in [r, r.conj()] {
            if !roots.iter().any(|x| (x - c).norm() < 1e-7) {
                roots.push(c);
            }
        }
    }
    roots.sort_by(|x, y| {
        y.re.partial_cmp(&x.re)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(y.im.partial_cmp(&x.im).unwrap_or(std::cmp::Ordering::Equal))
    });
    let complete = roots.len() >= count;
    roots.truncate(count);
    let residuals = roots.iter().map(|&r| f(r).norm()).collect();
    Ok(CharRootSet {
        a,
        b,
        roots,
        residuals,
        complete,
    })
}

fn newton(mut l: Complex64, a: f64, b: f64) -> Option<Complex64> {
    for _ in 0..200 {
        let e = (-l).exp();
        let f = l - a - b * e;
        let df = 1.0 + b * e;
        if !f.is_finite() || df.norm() == 0.0 {
            return None;
        }
        let step = f / df;
        l -= step;
        if step.norm() <= 1e-15 * (1.0 + l.norm()) {
            // one polishing step after convergence
            let e = (-l).exp();
            l -= (l - a - b * e) / (1.0 + b * e);
            return l.is_finite().then_some(l);
        }
    }
    None
}

/// Exponents from explicit products of dense operators with full Householder
/// re-factorization after every window.
///
/// Operator columns are built by evolving basis segments one at a time, and
/// the QR runs in the grid inner product, so exponents match those of
/// [`crate::spectrum::oseledets_split`] up to the finite-horizon error.
/// The last `n - n/2` windows are averaged; exactly vanishing `R` entries give `-∞`.
pub fn dense_product_oracle<T: Real>(
    omega: &DriverPoint<T>,
    t_op: T,
    n: usize,
    m: usize,
    space: SpaceNorm,
) -> Result<Vec<T>> {
    let dim = omega.dim();
    if m > 40 || dim > 3 {
        return Err(Error::ResourceGuard(format!(
            "dense product oracle is limited to m <= 40 and N <= 3, got m = {m}, N = {dim}"
        )));
    }
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let steps = grid_steps(t_op, m)?;
    if steps == 0 {
        return Err(Error::InvalidTime(0.0));
    }
    let d = flat_dim(dim, m);
    let sqrt_w: Vec<T> = grid_weights::<T>(dim, m).into_iter().map(T::sqrt).collect();
    let l_space = if space.is_l_type() { space } else { SpaceNorm::L1Hat };
    let mut q = Mat::identity(d);
    let mut sums = vec![T::zero(); d];
    let mut dead = vec![false; d];
    let burn = n / 2;
    for k in 0..n {
        let fiber = omega.shifted(t_op * T::from_count(k));
        // Operator in orthonormal coordinates: W^{1/2} M W^{-1/2}.
        let mut op = Mat::zeros(d, d);
        let mut basis = vec![T::zero(); d];
        for j in 0..d {
            basis[j] = sqrt_w[j].recip();
            let u = Segment::from_flat(dim, m, &basis)?;
            let v = apply_cocycle(&fiber, t_op, &u, l_space)?.flatten();
            let col: Vec<T> = v.iter().zip(&sqrt_w).map(|(x, w)| *x * *w).collect();
            op.set_column(j, &col);
            basis[j] = T::zero();
        }
        let (q_next, r_diag) = householder_qr(&op.matmul(&q));
        q = q_next;
        if k >= burn {
            for (i, r) in r_diag.iter().enumerate() {
                let a = r.abs();
                if a <= T::min_positive_value() {
                    dead[i] = true;
                } else {
                    sums[i] += a.ln();
                }
            }
        }
    }
    let span = t_op * T::from_count(n - burn);
    Ok(sums
        .into_iter()
        .zip(dead)
        .map(|(s, dd)| if dd { T::neg_infinity() } else { s / span })
        .collect())
}

/// Householder QR: returns the explicit orthogonal factor and `diag(R)` with
/// signs chosen so that `R_ii >= 0` whenever possible.
pub fn householder_qr<T: Real>(a: &Mat<T>) -> (Mat<T>, Vec<T>) {
    let rows = a.rows();
    let cols = a.cols();
    let mut r = a.clone();
    let mut q = Mat::identity(rows);
    let kmax = cols.min(rows);
    for k in 0..kmax {
        let x: Vec<T> = (k..rows).map(|i| r[(i, k)]).collect();
        let alpha = euclid(&x);
        if alpha == T::zero() {
            continue;
        }
        let sign = if x[0] >= T::zero() { T::one() } else { -T::one() };
        let mut v = x.clone();
        v[0] += sign * alpha;
        let vn = euclid(&v);
        if vn == T::zero() {
            continue;
        }
        v.iter_mut().for_each(|e| *e /= vn);
        // R <- (I - 2 v v^T) R on rows k..
        for j in 0..cols {
            let dotp: T = (k..rows).map(|i| v[i - k] * r[(i, j)]).sum();
            for i in k..rows {
                r[(i, j)] -= T::lit(2.0) * v[i - k] * dotp;
            }
        }
        // Q <- Q (I - 2 v v^T) on columns k..
        for i in 0..rows {
            let dotp: T = (k..rows).map(|c| q[(i, c)] * v[c - k]).sum();
            for c in k..rows {
                q[(i, c)] -= T::lit(2.0) * dotp * v[c - k];
            }
        }
    }
    let diag = (0..kmax).map(|i| r[(i, i)]).collect();
    (q, diag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::make_constant_driver;

    #[test]
    fn perron_of_symmetric_generator() {
        let a = Mat::<f64>::square_f64(2, &[-1.0, 1.0, 1.0, -1.0]).unwrap();
        let p = perron_oracle(&a).unwrap();
        assert!(p.lambda.abs() < 1e-12);
        let s = 1.0 / 2f64.sqrt();
        assert!((p.v[0] - s).abs() < 1e-12 && (p.v[1] - s).abs() < 1e-12);
    }

    #[test]
    fn perron_near_diagonal_limit() {
        let e = 1e-6;
        let a = Mat::<f64>::square_f64(2, &[2.0, e, e, 1.0]).unwrap();
        let p = perron_oracle(&a).unwrap();
        assert!((p.lambda - 2.0).abs() < 1e-9);
        assert!(p.v[0] > 0.999_999 && p.v[1] > 0.0);
    }

    #[test]
    fn perron_random_cooperative_residual() {
        let a = Mat::<f64>::square_f64(3, &[-2.0, 0.3, 0.7, 1.1, 0.5, 0.2, 0.4, 0.9, -0.3]).unwrap();
        let p = perron_oracle(&a).unwrap();
        assert!(p.residual <= 1e-10);
        assert!(p.v.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn perron_rejects_reducible_and_noncooperative() {
        let red = Mat::<f64>::square_f64(2, &[1.0, 0.0, 1.0, 2.0]).unwrap();
        assert_eq!(perron_oracle(&red).unwrap_err(), Error::Reducible);
        let neg = Mat::<f64>::square_f64(2, &[1.0, -1.0, 1.0, 2.0]).unwrap();
        assert!(perron_oracle(&neg).is_err());
    }

    #[test]
    fn characteristic_roots_of_pure_delay() {
        let set = delay_char_roots(0.0, 1.0, 3).unwrap();
        assert!(set.complete);
        assert!((set.roots[0].re - 0.567_143_290_409_783_8).abs() < 1e-9);
        assert_eq!(set.roots[0].im, 0.0);
        assert!((set.roots[1].re + 1.533_913).abs() < 1e-6);
        assert!((set.roots[1].im - 4.375_185).abs() < 1e-6);
        assert_eq!(set.roots[2], set.roots[1].conj());
        assert!(set.residuals.iter().all(|&r| r <= 1e-10));
    }

    #[test]
    fn characteristic_roots_ode_limit() {
        let set = delay_char_roots(-1.0, 1e-12, 1).unwrap();
        assert!((set.roots[0].re + 1.0).abs() < 1e-9);
    }

    #[test]
    fn characteristic_root_count_guard() {
        assert!(delay_char_roots(0.0, 1.0, 9).is_err());
        assert!(delay_char_roots(0.0, -1.0, 1).is_err());
    }

    #[test]
    fn householder_reconstructs() {
        let a = Mat::<f64>::square_f64(3, &[2.0, -1.0, 0.5, 0.3, 4.0, 1.0, -2.0, 0.1, 3.0]).unwrap();
        let (q, d) = householder_qr(&a);
        let qtq = q.transpose().matmul(&q);
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((qtq[(i, j)] - e).abs() < 1e-13);
            }
        }
        let r = q.transpose().matmul(&a);
        for i in 0..3 {
            assert!((r[(i, i)].abs() - d[i].abs()).abs() < 1e-12);
            for j in 0..i {
                assert!(r[(i, j)].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dense_oracle_size_guard() {
        let w = make_constant_driver(Mat::<f64>::zeros(2, 2), Mat::identity(2)).unwrap();
        assert!(matches!(
            dense_product_oracle(&w, 1.0, 4, 50, SpaceNorm::C),
            Err(Error::ResourceGuard(_))
        ));
    }

    #[test]
    fn dense_oracle_perron_system() {
        let a = Mat::<f64>::square_f64(2, &[-1.0, 1.0, 1.0, -1.0]).unwrap();
        let w = make_constant_driver(a, Mat::zeros(2, 2)).unwrap();
        let ex = dense_product_oracle(&w, 1.0, 40, 20, SpaceNorm::C).unwrap();
        assert!(ex[0].abs() < 1e-3, "{ex:?}");
        assert!((ex[1] + 2.0).abs() < 1e-3, "{ex:?}");
    }

    #[test]
    fn dense_oracle_pure_delay() {
        let w = make_constant_driver(Mat::<f64>::zeros(2, 2), Mat::identity(2)).unwrap();
        let ex = dense_product_oracle(&w, 1.0, 60, 40, SpaceNorm::C).unwrap();
        assert!((ex[0] - 0.567_143).abs() < 5e-3, "{ex:?}");
    }
}
