use serde::{Deserialize, Serialize};

use crate::cone::{focusing_constants, FocusingReport};
use crate::dde::{grid_steps, norm, Segment, Semiflow, SpaceNorm, ZERO_THRESHOLD};
use crate::driver::DriverPoint;
use crate::error::{Error, Result};
use crate::linalg::linear_fit;
use crate::scalar::Real;

/// Ladder and acceptance settings of the pullback iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PullbackOptions<T> {
    /// Spacing of the pullback times `t_k = k step`; also the renormalization interval.
    pub step: T,
    /// Points with `t_k` below this are left out of the rate fit.
    pub fit_start: T,
    /// Largest acceptable `‖v_K - v_{K-1}‖`.
    pub tolerance: T,
}

impl<T: Real> Default for PullbackOptions<T> {
    fn default() -> Self {
        Self {
            step: T::one(),
            fit_start: T::lit(2.0),
            tolerance: T::lit(1e-6),
        }
    }
}

/// Estimated principal Floquet vector `ŵ(ω)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FloquetEstimate<T> {
    /// Unit vector in the requested space.
    pub w: Segment<T>,
    /// Growth over the second half of the longest pullback run.
    pub lambda1: T,
    /// Minus the fitted slope of `ln ‖v_k - ŵ‖`; `None` with fewer than 3 usable points.
    pub sigma_forward: Option<T>,
    pub fit_r2: Option<T>,
    /// `‖v_K - v_{K-1}‖`.
    pub residual: T,
    /// Pullback times `t_k`, `k = 1..K`.
    pub ladder: Vec<T>,
    /// `‖v_k - ŵ‖` for `k < K`.
    pub distances: Vec<T>,
}

/// `v_k = U_{θ_{-t_k}ω}(t_k) u0 / ‖·‖` for `t_k = step, 2 step, ..., t_back`.
pub fn pullback_floquet<T: Real>(
    flow: &Semiflow<T>,
    omega: &DriverPoint<T>,
    t_back: T,
    u0: &Segment<T>,
    space: SpaceNorm,
    opts: &PullbackOptions<T>,
) -> Result<FloquetEstimate<T>> {
    space.validate()?;
    let m = flow.resolution();
    let per = grid_steps(opts.step, m)?;
    if per == 0 {
        return Err(Error::InvalidInput("pullback step must be positive".into()));
    }
    let total = grid_steps(t_back, m)?;
    if total % per != 0 {
        return Err(Error::NotGridAligned {
            t: t_back.to_f64_lossy(),
            m: (m / per).max(1),
        });
    }
    let kk = total / per;
    if kk < 3 {
        return Err(Error::InsufficientSamples { needed: 3, got: kk });
    }
    let n0 = norm(u0, space);
    if !(n0 > T::zero()) {
        return Err(Error::KernelVector);
    }
    let u = u0.scaled(n0.recip());
    let mut iterates = Vec::with_capacity(kk);
    let mut lambda1 = T::nan();
    for k in 1..=kk {
        let mut v = u.clone();
        let mut late_log = T::zero();
        for j in 0..k {
            let offset = T::from_count(j) - T::from_count(k);
            let fiber = omega.shifted(opts.step * offset);
            v = flow.apply(&fiber, opts.step, &v, space)?;
            let r = norm(&v, space);
            let dead = if j == 0 { r <= T::lit(ZERO_THRESHOLD) } else { !(r > T::zero()) };
            if dead {
                return Err(Error::KernelVector);
            }
            v = v.scaled(r.recip());
            if j >= k / 2 {
                late_log += r.ln();
            }
        }
        if k == kk {
            lambda1 = late_log / (opts.step * T::from_count(k - k / 2));
        }
        iterates.push(v);
    }
    let w = iterates[kk - 1].clone();
    let residual = norm(&w.combine(T::one(), &iterates[kk - 2], -T::one())?, space);
    let ladder: Vec<T> = (1..=kk).map(|k| opts.step * T::from_count(k)).collect();
    let distances = iterates[..kk - 1]
        .iter()
        .map(|v| Ok(norm(&v.combine(T::one(), &w, -T::one())?, space)))
        .collect::<Result<Vec<T>>>()?;
    let floor = T::lit(100.0) * residual.max(T::lit(1e-14));
    let (xs, ys): (Vec<T>, Vec<T>) = ladder
        .iter()
        .zip(&distances)
        .filter(|(&t, &d)| t >= opts.fit_start && d >= floor)
        .map(|(&t, &d)| (t, d.ln()))
        .unzip();
    let fit = if xs.len() >= 3 { linear_fit(&xs, &ys) } else { None };
    if !(residual <= opts.tolerance) {
        return Err(Error::NotConverged {
            residual: residual.to_f64_lossy(),
            tolerance: opts.tolerance.to_f64_lossy(),
        });
    }
    Ok(FloquetEstimate {
        w,
        lambda1,
        sigma_forward: fit.map(|(s, _, _)| -s),
        fit_r2: fit.map(|(_, _, r2)| r2),
        residual,
        ladder,
        distances,
    })
}

/// Certified lower bound for `λ̃₁` from the focusing inequality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BirkhoffBound<T> {
    /// `(1/(nT)) Σ_{k<n} ln γ(θ_{kT}ω)`.
    pub bound: T,
    /// `ln γ(θ_{kT}ω)` per block.
    pub log_terms: Vec<T>,
    pub t_focus: usize,
}

/// Averages `ln γ` over `n` consecutive focusing blocks, where `U(T) e >= γ e`.
///
/// Product spaces use `e = (1/(2√N))(1, 𝟙)` and `γ = β = 2√N ‖U(1)e‖_C k_δ`.
/// `C` and `AC` use `e = 𝟙/√N` and `γ = √N ‖U(1)e‖_C k_δ`; the `AC` bound
/// goes through the sup norm because the `AC` norm is not monotone.
/// `report` fixes the window, the space and the constants of the first block;
/// later blocks are recomputed at their own fibers.
pub fn birkhoff_beta_lowerbound<T: Real>(
    flow: &Semiflow<T>,
    omega: &DriverPoint<T>,
    n: usize,
    report: &FocusingReport<T>,
    delta_min: T,
) -> Result<BirkhoffBound<T>> {
    if n == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let dim = flow.dim();
    let space = report.space;
    let root_n = T::from_count(dim).sqrt();
    let (e, factor) = if space.is_l_type() {
        let c = (T::lit(2.0) * root_n).recip();
        (Segment::constant(flow.resolution(), &vec![c; dim]), T::lit(2.0) * root_n)
    } else {
        (Segment::constant(flow.resolution(), &vec![root_n.recip(); dim]), root_n)
    };
    let tf = report.t_focus_real();
    let mut log_terms = Vec::with_capacity(n);
    for k in 0..n {
        let fiber = omega.shifted(tf * T::from_count(k));
        let rep = if k == 0 {
            report.clone()
        } else {
            focusing_constants(&fiber, report.irreducibility.window, space, delta_min)?
        };
        let one = flow.apply(&fiber, T::one(), &e, space)?;
        let gamma = factor * norm(&one, SpaceNorm::C) * rep.k_delta;
        if !(gamma > T::zero()) || !gamma.is_finite() {
            return Err(Error::InvariantViolation(format!(
                "focusing lower factor {gamma} at block {k} is not positive"
            )));
        }
        log_terms.push(gamma.ln());
    }
    let bound = log_terms.iter().copied().sum::<T>() / (tf * T::from_count(n));
    Ok(BirkhoffBound {
        bound,
        log_terms,
        t_focus: report.t_focus,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cone::DEFAULT_DELTA_MIN;
    use crate::driver::make_constant_driver;
    use crate::linalg::Mat;
    use crate::oracle::delay_char_roots;

    fn system(a: &[f64], b: &[f64], m: usize) -> (Semiflow<f64>, DriverPoint<f64>) {
        let omega = make_constant_driver(Mat::square_f64(2, a).unwrap(), Mat::square_f64(2, b).unwrap()).unwrap();
        (Semiflow::new(&omega, m).unwrap(), omega)
    }

    #[test]
    fn perron_direction_is_constant() {
        let (flow, omega) = system(&[-1.0, 1.0, 1.0, -1.0], &[0.0; 4], 40);
        let u = Segment::from_fn(2, 40, |s: f64| vec![1.0, 0.5 - 0.3 * s]).unwrap();
        let est = pullback_floquet(&flow, &omega, 30.0, &u, SpaceNorm::C, &PullbackOptions::default()).unwrap();
        let c = 1.0 / 2f64.sqrt();
        assert!(est.w.values().iter().chain(est.w.head()).all(|x| (x - c).abs() <= 1e-6));
        assert!(est.lambda1.abs() <= 1e-6);
    }

    #[test]
    fn pure_delay_profile_is_exponential() {
        let lam = delay_char_roots(0.0, 1.0, 1).unwrap().roots[0].re;
        let m = 100;
        let (flow, omega) = system(&[0.0; 4], &[1.0, 0.0, 0.0, 1.0], m);
        let u = Segment::constant(m, &[1.0, 1.0]);
        let est = pullback_floquet(&flow, &omega, 30.0, &u, SpaceNorm::C, &PullbackOptions::default()).unwrap();
        let scale = est.w.head()[0];
        let err = (0..=m)
            .map(|j| {
                let s = j as f64 / m as f64 - 1.0;
                (est.w.value(j)[0] / scale - (lam * s).exp()).abs()
            })
            .fold(0.0, f64::max);
        assert!(err <= 1e-3, "{err}");
        assert!((est.w.value(0)[0] - est.w.value(0)[1]).abs() <= 1e-12);
    }

    #[test]
    fn two_starts_give_one_direction() {
        let (flow, omega) = system(&[-0.5, 0.3, 0.2, -0.1], &[0.2, 0.1, 0.4, 0.3], 30);
        let u = Segment::constant(30, &[1.0, 0.1]);
        let v = Segment::from_fn(2, 30, |s: f64| vec![(s * 3.0).exp(), 2.0]).unwrap();
        let opts = PullbackOptions::default();
        let a = pullback_floquet(&flow, &omega, 30.0, &u, SpaceNorm::L1Hat, &opts).unwrap();
        let b = pullback_floquet(&flow, &omega, 30.0, &v, SpaceNorm::L1Hat, &opts).unwrap();
        let gap = norm(&a.w.combine(1.0, &b.w, -1.0).unwrap(), SpaceNorm::L1Hat);
        assert!(gap <= 2.0 * (a.residual + b.residual) + 1e-12, "{gap}");
    }

    #[test]
    fn unconverged_pullback_is_reported() {
        let (flow, omega) = system(&[0.0; 4], &[1.0, 0.0, 0.0, 1.0], 20);
        let u = Segment::constant(20, &[1.0, 0.0]);
        let opts = PullbackOptions { tolerance: 1e-30, ..PullbackOptions::default() };
        assert!(matches!(
            pullback_floquet(&flow, &omega, 4.0, &u, SpaceNorm::C, &opts),
            Err(Error::NotConverged { .. })
        ));
    }

    #[test]
    fn birkhoff_single_block_and_constant_terms() {
        let (flow, omega) = system(&[-0.5, 0.3, 0.2, -0.1], &[0.2, 0.1, 0.4, 0.3], 20);
        let report = focusing_constants(&omega, 1, SpaceNorm::Lp(2.0), DEFAULT_DELTA_MIN).unwrap();
        let one = birkhoff_beta_lowerbound(&flow, &omega, 1, &report, DEFAULT_DELTA_MIN).unwrap();
        let t = report.t_focus_real();
        assert!((one.bound - one.log_terms[0] / t).abs() <= 1e-15);
        let many = birkhoff_beta_lowerbound(&flow, &omega, 5, &report, DEFAULT_DELTA_MIN).unwrap();
        assert!(many.log_terms.iter().all(|x| (x - many.log_terms[0]).abs() <= 1e-12));
        assert!((many.bound - one.bound).abs() <= 1e-12);
    }
}
