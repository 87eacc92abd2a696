use serde::{Deserialize, Serialize};

use super::mean_and_batch_stderr;
use crate::dde::{grid_steps, norm, Segment, Semiflow, SpaceNorm, ZERO_THRESHOLD};
use crate::driver::DriverPoint;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Forward growth rate of one trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate<T> {
    pub lambda1: T,
    /// Batch-means standard error over the averaging window.
    pub stderr: T,
    /// `(t, (1/t) Σ ln r)` after every renormalization.
    pub running: Vec<(T, T)>,
    /// `ln r_k` for each renormalization interval.
    pub log_growth: Vec<T>,
}

/// Renormalized power iteration `u ← U(renorm) u / ‖·‖` along `ω`.
///
/// `λ̂₁` is the mean growth over the second half of the horizon; `u0` is
/// normalized first, so rescaling it changes nothing.
pub fn top_lyapunov<T: Real>(
    flow: &Semiflow<T>,
    omega: &DriverPoint<T>,
    u0: &Segment<T>,
    horizon: T,
    renorm: T,
    space: SpaceNorm,
) -> Result<LyapunovEstimate<T>> {
    space.validate()?;
    let m = flow.resolution();
    let r_steps = grid_steps(renorm, m)?;
    if r_steps == 0 {
        return Err(Error::InvalidInput("renormalization interval must be positive".into()));
    }
    let n = grid_steps(horizon, m)? / r_steps;
    if n < 20 {
        return Err(Error::InsufficientSamples { needed: 20, got: n });
    }
    let n0 = norm(u0, space);
    if !(n0 > T::zero()) {
        return Err(Error::KernelVector);
    }
    let mut v = u0.scaled(n0.recip());
    let mut log_growth = Vec::with_capacity(n);
    let mut running = Vec::with_capacity(n);
    let mut acc = T::zero();
    for k in 0..n {
        let fiber = omega.shifted(renorm * T::from_count(k));
        v = flow.apply(&fiber, renorm, &v, space)?;
        let r = norm(&v, space);
        let dead = if k == 0 { r <= T::lit(ZERO_THRESHOLD) } else { !(r > T::zero()) };
        if dead {
            return Err(Error::KernelVector);
        }
        if !r.is_finite() {
            return Err(Error::IntegrationFailure {
                t: (renorm * T::from_count(k + 1)).to_f64_lossy(),
            });
        }
        v = v.scaled(r.recip());
        let lr = r.ln();
        acc += lr;
        log_growth.push(lr);
        let t = renorm * T::from_count(k + 1);
        running.push((t, acc / t));
    }
    let (mean, se) = mean_and_batch_stderr(&log_growth[n / 2..]);
    Ok(LyapunovEstimate {
        lambda1: mean / renorm,
        stderr: se / renorm,
        running,
        log_growth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::make_constant_driver;
    use crate::linalg::Mat;
    use crate::oracle::delay_char_roots;

    fn system(a: &[f64], b: &[f64], m: usize) -> (Semiflow<f64>, DriverPoint<f64>) {
        let omega = make_constant_driver(Mat::square_f64(2, a).unwrap(), Mat::square_f64(2, b).unwrap()).unwrap();
        (Semiflow::new(&omega, m).unwrap(), omega)
    }

    #[test]
    fn perron_rate_is_zero() {
        let (flow, omega) = system(&[-1.0, 1.0, 1.0, -1.0], &[0.0; 4], 40);
        let u = Segment::constant(40, &[1.0, 0.2]);
        let est = top_lyapunov(&flow, &omega, &u, 60.0, 1.0, SpaceNorm::Lp(2.0)).unwrap();
        assert!(est.lambda1.abs() <= 1e-6, "{}", est.lambda1);
    }

    #[test]
    fn pure_delay_matches_real_root() {
        let root = delay_char_roots(0.0, 1.0, 1).unwrap().roots[0].re;
        let (flow, omega) = system(&[0.0; 4], &[1.0, 0.0, 0.0, 1.0], 100);
        let u = Segment::constant(100, &[1.0, 1.0]);
        let est = top_lyapunov(&flow, &omega, &u, 100.0, 1.0, SpaceNorm::C).unwrap();
        assert!((est.lambda1 - root).abs() <= 1e-3, "{} vs {root}", est.lambda1);
        assert_eq!(est.log_growth.len(), 100);
        assert_eq!(est.running.last().unwrap().0, 100.0);
    }

    #[test]
    fn scaling_the_start_changes_nothing() {
        let (flow, omega) = system(&[-0.5, 0.3, 0.2, -0.1], &[0.2, 0.1, 0.4, 0.3], 30);
        let u = Segment::from_fn(2, 30, |s: f64| vec![1.0 + s * s, 2.0 + s]).unwrap();
        let a = top_lyapunov(&flow, &omega, &u, 40.0, 1.0, SpaceNorm::L1Hat).unwrap();
        let b = top_lyapunov(&flow, &omega, &u.scaled(10.0), 40.0, 1.0, SpaceNorm::L1Hat).unwrap();
        assert!((a.lambda1 - b.lambda1).abs() <= 1e-12);
    }

    #[test]
    fn kernel_start_is_rejected() {
        let (flow, omega) = system(&[-1.0, 1.0, 1.0, -1.0], &[0.0; 4], 20);
        let u = Segment::from_parts(vec![0.0, 0.0], 20, |_| vec![1.0, 1.0]).unwrap();
        let err = top_lyapunov(&flow, &omega, &u, 30.0, 1.0, SpaceNorm::Lp(2.0)).unwrap_err();
        assert_eq!(err, Error::KernelVector);
    }

    #[test]
    fn short_horizon_is_rejected() {
        let (flow, omega) = system(&[0.0; 4], &[1.0, 0.0, 0.0, 1.0], 20);
        let u = Segment::constant(20, &[1.0, 1.0]);
        assert!(matches!(
            top_lyapunov(&flow, &omega, &u, 10.0, 1.0, SpaceNorm::C),
            Err(Error::InsufficientSamples { .. })
        ));
        assert!(matches!(
            top_lyapunov(&flow, &omega, &u, 30.0, 0.013, SpaceNorm::C),
            Err(Error::NotGridAligned { .. })
        ));
    }
}
