use serde::{Deserialize, Serialize};

use super::{
    oseledets_split, pullback_floquet, top_lyapunov, volume_growth_exponents, OseledetsOptions, PullbackOptions,
    LAMBDA1_AGREEMENT_FLOOR, LAMBDA2_AGREEMENT, TEMPERED_TOL,
};
use crate::dde::{norm, Segment, Semiflow, SpaceNorm, DEFAULT_OPERATOR_CAP, ZERO_THRESHOLD};
use crate::driver::DriverPoint;
use crate::error::{Error, Result};
use crate::linalg::linear_fit;
use crate::scalar::Real;

/// Drift of `ln ‖P̃(θ_tω)‖`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Temperedness<T> {
    pub slope: T,
    pub intercept: T,
    pub r2: T,
    pub samples: usize,
    pub tolerance: T,
    pub pass: bool,
}

/// Least-squares slope of `ln ‖P̃‖` against `t`; passes when `|slope| <= tolerance`.
///
/// Needs at least 20 samples covering at least `min_span` time units.
pub fn temperedness_diagnostic<T: Real>(
    times: &[T],
    proj_norms: &[T],
    min_span: T,
    tolerance: T,
) -> Result<Temperedness<T>> {
    if times.len() != proj_norms.len() {
        return Err(Error::DimensionMismatch {
            expected: times.len(),
            found: proj_norms.len(),
        });
    }
    let samples = times.len();
    if samples < 20 {
        return Err(Error::InsufficientSamples { needed: 20, got: samples });
    }
    let lo = times.iter().copied().fold(T::infinity(), T::min);
    let hi = times.iter().copied().fold(T::neg_infinity(), T::max);
    if !(hi - lo >= min_span) {
        return Err(Error::InvalidInput(format!(
            "projection samples span {} time units, need {min_span}",
            hi - lo
        )));
    }
    if proj_norms.iter().any(|p| !(*p > T::zero()) || !p.is_finite()) {
        return Err(Error::InvalidInput("projection norms must be positive and finite".into()));
    }
    let logs: Vec<T> = proj_norms.iter().map(|p| p.ln()).collect();
    let (slope, intercept, r2) =
        linear_fit(times, &logs).ok_or_else(|| Error::InvalidInput("degenerate time series".into()))?;
    Ok(Temperedness {
        slope,
        intercept,
        r2,
        samples,
        tolerance,
        pass: slope.abs() <= tolerance,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationConfig<T> {
    pub space: SpaceNorm,
    pub horizon: T,
    pub renorm: T,
    /// Window length of the QR products.
    pub t_op: T,
    /// Columns for the volume and QR methods.
    pub k: usize,
    pub seed: u64,
    pub resolution: T,
    pub tempered_tol: T,
    /// Shortest admissible span of the `‖P̃‖` series, typically `10 T`.
    pub min_span: T,
    pub cap: usize,
}

impl<T: Real> SeparationConfig<T> {
    pub fn new(space: SpaceNorm, horizon: T, min_span: T) -> Self {
        Self {
            space,
            horizon,
            renorm: T::one(),
            t_op: T::one(),
            k: 4,
            seed: 0,
            resolution: T::lit(super::DEFAULT_RESOLUTION),
            tempered_tol: T::lit(TEMPERED_TOL),
            min_span,
            cap: DEFAULT_OPERATOR_CAP,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport<T> {
    pub space: SpaceNorm,
    /// Forward power iteration.
    pub lambda1: T,
    pub lambda1_stderr: T,
    pub lambda1_qr: T,
    pub lambda1_tolerance: T,
    /// QR value; `-∞` when the complement dies in finite time.
    pub lambda2: T,
    pub lambda2_volume: T,
    pub lambda2_tolerance: T,
    /// `λ₁ - λ₂`, `∞` when `λ₂ = -∞`.
    pub sigma: T,
    pub leading_dim: usize,
    pub proj_times: Vec<T>,
    pub proj_norms: Vec<T>,
    pub tempered: Temperedness<T>,
    /// Tested cone vectors in the complement that die under `U(1)`.
    pub kernel_dim_witness: usize,
    /// Tested cone vectors in the complement that survive.
    pub kernel_violations: usize,
    pub pass: bool,
}

fn first_below<T: Real>(xs: &[T], top: T, resolution: T) -> T {
    xs.iter()
        .copied()
        .find(|x| *x < top - resolution)
        .unwrap_or(T::neg_infinity())
}

/// Cross-checked `λ₁`, `λ₂`, `σ`, temperedness and kernel census.
///
/// `λ₁` from forward iteration must match the leading QR exponent within
/// `max(3 stderr, 2e-3)`, and `λ₂` from volumes must match the QR value within
/// `5e-2`; otherwise [`Error::Inconsistent`] reports both numbers.
pub fn separation_report<T: Real>(
    flow: &Semiflow<T>,
    omega: &DriverPoint<T>,
    config: &SeparationConfig<T>,
) -> Result<SeparationReport<T>> {
    let space = config.space;
    space.validate()?;
    let n = flow.dim();
    let m = flow.resolution();
    let ones = Segment::constant(m, &vec![T::one(); n]);
    let fwd = top_lyapunov(flow, omega, &ones, config.horizon, config.renorm, space)?;
    let opts = OseledetsOptions {
        k: config.k,
        seed: config.seed,
        resolution: config.resolution,
        cap: config.cap,
    };
    let qr = oseledets_split(flow, omega, config.t_op, config.horizon, space, &opts, None)?;
    let lambda1_qr = qr.lambdas[0];
    let lambda1_tolerance = (T::lit(3.0) * fwd.stderr).max(T::lit(LAMBDA1_AGREEMENT_FLOOR));
    if !((fwd.lambda1 - lambda1_qr).abs() <= lambda1_tolerance) {
        return Err(Error::Inconsistent {
            quantity: "lambda1".into(),
            first: fwd.lambda1.to_f64_lossy(),
            second: lambda1_qr.to_f64_lossy(),
            tolerance: lambda1_tolerance.to_f64_lossy(),
        });
    }
    let vol = volume_growth_exponents(flow, omega, config.k, config.horizon, config.renorm, space, config.seed)?;
    let lambda2_volume = first_below(&vol.exponents, vol.exponents[0], config.resolution);
    let lambda2 = qr.lambda2;
    let lambda2_tolerance = T::lit(LAMBDA2_AGREEMENT);
    let agree = (lambda2 == T::neg_infinity() && lambda2_volume == T::neg_infinity())
        || (lambda2 - lambda2_volume).abs() <= lambda2_tolerance;
    if !agree {
        return Err(Error::Inconsistent {
            quantity: "lambda2".into(),
            first: lambda2_volume.to_f64_lossy(),
            second: lambda2.to_f64_lossy(),
            tolerance: lambda2_tolerance.to_f64_lossy(),
        });
    }
    let sigma = if lambda2 == T::neg_infinity() {
        T::infinity()
    } else {
        fwd.lambda1 - lambda2
    };
    let tempered = temperedness_diagnostic(&qr.proj_times, &qr.proj_norms, config.min_span, config.tempered_tol)?;

    // Grid basis vectors annihilated by the leading left vector lie in the
    // cone part of the complement and must die under U(1).
    let lmax = qr.left_start.iter().fold(T::zero(), |a, x| a.max(x.abs()));
    let mut kernel_dim_witness = 0;
    let mut kernel_violations = 0;
    let mut basis = vec![T::zero(); qr.left_start.len()];
    for (i, li) in qr.left_start.iter().enumerate() {
        if li.abs() > T::lit(ZERO_THRESHOLD) * lmax {
            continue;
        }
        basis[i] = T::one();
        let u = Segment::from_flat(n, m, &basis)?;
        basis[i] = T::zero();
        let v = match flow.apply(omega, T::one(), &u, space) {
            Ok(v) => v,
            Err(Error::SpaceMismatch(_)) => continue,
            Err(e) => return Err(e),
        };
        if norm(&v, space) <= T::lit(ZERO_THRESHOLD) * norm(&u, space) {
            kernel_dim_witness += 1;
        } else {
            kernel_violations += 1;
        }
    }
    let pass = sigma > T::zero() && tempered.pass && kernel_violations == 0;
    Ok(SeparationReport {
        space,
        lambda1: fwd.lambda1,
        lambda1_stderr: fwd.stderr,
        lambda1_qr,
        lambda1_tolerance,
        lambda2,
        lambda2_volume,
        lambda2_tolerance,
        sigma,
        leading_dim: qr.leading_dim,
        proj_times: qr.proj_times,
        proj_norms: qr.proj_norms,
        tempered,
        kernel_dim_witness,
        kernel_violations,
        pass,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossSpaceRow<T> {
    pub space: SpaceNorm,
    /// Forward estimate, `-∞` when the start vector is in the kernel.
    pub lambda1: T,
    pub stderr: T,
    /// Late growth of the pullback run, when one was requested.
    pub pullback_lambda1: Option<T>,
    pub pullback_residual: Option<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossSpaceTable<T> {
    pub rows: Vec<CrossSpaceRow<T>>,
    /// Largest `|λ_i - λ_j|` over pairs of rows; two `-∞` entries count as equal.
    pub max_deviation: T,
    pub tolerance: T,
    pub pass: bool,
}

fn deviation<T: Real>(a: T, b: T) -> T {
    if a == b {
        T::zero()
    } else {
        (a - b).abs()
    }
}

/// Runs the forward estimator, and the pullback one if `t_back` is given,
/// under every norm in `spaces` from the same start `u0`.
pub fn cross_space_compare<T: Real>(
    flow: &Semiflow<T>,
    omega: &DriverPoint<T>,
    u0: &Segment<T>,
    spaces: &[SpaceNorm],
    horizon: T,
    renorm: T,
    t_back: Option<T>,
) -> Result<CrossSpaceTable<T>> {
    let mut rows = Vec::with_capacity(spaces.len());
    for &space in spaces {
        let (lambda1, stderr) = match top_lyapunov(flow, omega, u0, horizon, renorm, space) {
            Ok(est) => (est.lambda1, est.stderr),
            Err(Error::KernelVector) => (T::neg_infinity(), T::zero()),
            Err(e) => return Err(e),
        };
        let (pullback_lambda1, pullback_residual) = match t_back {
            Some(tb) if lambda1.is_finite() => {
                let opts = PullbackOptions {
                    step: renorm,
                    ..PullbackOptions::default()
                };
                let est = pullback_floquet(flow, omega, tb, u0, space, &opts)?;
                (Some(est.lambda1), Some(est.residual))
            }
            _ => (None, None),
        };
        rows.push(CrossSpaceRow {
            space,
            lambda1,
            stderr,
            pullback_lambda1,
            pullback_residual,
        });
    }
    let mut max_deviation = T::zero();
    for (i, a) in rows.iter().enumerate() {
        for b in &rows[i + 1..] {
            max_deviation = max_deviation.max(deviation(a.lambda1, b.lambda1));
        }
    }
    let tolerance = T::lit(LAMBDA1_AGREEMENT_FLOOR);
    Ok(CrossSpaceTable {
        pass: max_deviation <= tolerance,
        rows,
        max_deviation,
        tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::make_constant_driver;
    use crate::linalg::Mat;

    fn system(a: &[f64], b: &[f64], m: usize) -> (Semiflow<f64>, DriverPoint<f64>) {
        let omega = make_constant_driver(Mat::square_f64(2, a).unwrap(), Mat::square_f64(2, b).unwrap()).unwrap();
        (Semiflow::new(&omega, m).unwrap(), omega)
    }

    #[test]
    fn constant_projection_has_zero_slope() {
        let t: Vec<f64> = (0..40).map(f64::from).collect();
        let p = vec![3.0; 40];
        let d = temperedness_diagnostic(&t, &p, 20.0, 1e-2).unwrap();
        assert!(d.slope.abs() <= 1e-15 && d.pass);
    }

    #[test]
    fn exponential_projection_fails() {
        let t: Vec<f64> = (0..40).map(f64::from).collect();
        let p: Vec<f64> = t.iter().map(|t| (0.1 * t).exp()).collect();
        let d = temperedness_diagnostic(&t, &p, 20.0, 1e-2).unwrap();
        assert!((d.slope - 0.1).abs() <= 1e-12);
        assert!(!d.pass);
    }

    #[test]
    fn temperedness_needs_enough_data() {
        let t: Vec<f64> = (0..10).map(f64::from).collect();
        let p = vec![1.0; 10];
        assert!(matches!(
            temperedness_diagnostic(&t, &p, 5.0, 1e-2),
            Err(Error::InsufficientSamples { .. })
        ));
        let t: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
        let p = vec![1.0; 30];
        assert!(temperedness_diagnostic(&t, &p, 10.0, 1e-2).is_err());
    }

    #[test]
    fn perron_gap_and_kernel() {
        let (flow, omega) = system(&[-1.0, 1.0, 1.0, -1.0], &[0.0; 4], 20);
        let cfg = SeparationConfig::new(SpaceNorm::Lp(2.0), 60.0, 20.0);
        let r = separation_report(&flow, &omega, &cfg).unwrap();
        assert!((r.sigma - 2.0).abs() <= 1e-6, "{}", r.sigma);
        assert!(r.kernel_dim_witness > 0);
        assert_eq!(r.kernel_violations, 0);
        assert!(r.pass);
    }

    #[test]
    fn kernel_start_reads_as_minus_infinity() {
        let (flow, omega) = system(&[-1.0, 1.0, 1.0, -1.0], &[0.0; 4], 20);
        let u = Segment::from_parts(vec![0.0, 0.0], 20, |_| vec![1.0, 1.0]).unwrap();
        let spaces = [SpaceNorm::Lp(2.0), SpaceNorm::L1Hat];
        let t = cross_space_compare(&flow, &omega, &u, &spaces, 30.0, 1.0, Some(10.0)).unwrap();
        assert!(t.rows.iter().all(|r| r.lambda1 == f64::NEG_INFINITY && r.pullback_lambda1.is_none()));
        assert_eq!(t.max_deviation, 0.0);
        assert!(t.pass);
    }

    #[test]
    fn norms_agree_on_pure_delay() {
        let (flow, omega) = system(&[0.0; 4], &[1.0, 0.0, 0.0, 1.0], 50);
        let u = Segment::constant(50, &[1.0, 1.0]);
        let spaces = [SpaceNorm::C, SpaceNorm::Lp(2.0), SpaceNorm::L1Hat, SpaceNorm::Ac];
        let t = cross_space_compare(&flow, &omega, &u, &spaces, 60.0, 1.0, Some(20.0)).unwrap();
        assert!(t.max_deviation <= 2e-3, "{}", t.max_deviation);
        assert!(t.rows.iter().all(|r| r.pullback_lambda1.is_some()));
    }
}
