use serde::{Deserialize, Serialize};

use super::{grid_norm, orthonormalize, project_out, start_frame, COLLAPSE_RTOL};
use crate::dde::{grid_steps, grid_weights, Segment, Semiflow, SpaceNorm};
use crate::driver::DriverPoint;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Growth rates of `j`-dimensional volumes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeEstimate<T> {
    /// `λ₁ + … + λ_j` for `j = 1..k`.
    pub partial_sums: Vec<T>,
    /// Successive differences of the partial sums.
    pub exponents: Vec<T>,
    /// Renormalization interval actually used.
    pub renorm_used: T,
    /// Index of the first volume that collapsed to zero; later exponents are `-∞`.
    pub collapsed_at: Option<usize>,
}

/// `vol(v_1..v_l) = ‖v_l‖ ∏_{i<l} dist(v_i, span{v_{i+1}..v_l})` in the grid
/// inner product; `None` when a distance vanishes.
fn log_volume<T: Real>(vs: &[Vec<T>], w: &[T]) -> Option<T> {
    let mut basis: Vec<Vec<T>> = Vec::with_capacity(vs.len());
    let mut acc = T::zero();
    for v in vs.iter().rev() {
        let before = grid_norm(v, w);
        let mut x = v.clone();
        project_out(&mut x, &basis, w);
        let d = grid_norm(&x, w);
        if !(d > T::lit(COLLAPSE_RTOL) * before) || !d.is_finite() {
            return None;
        }
        acc += d.ln();
        x.iter_mut().for_each(|e| *e /= d);
        basis.push(x);
    }
    Some(acc)
}

struct Collapse {
    index: usize,
}

fn attempt<T: Real>(
    flow: &Semiflow<T>,
    omega: &DriverPoint<T>,
    k: usize,
    horizon: T,
    renorm: T,
    seed: u64,
) -> Result<std::result::Result<Vec<T>, Collapse>> {
    let m = flow.resolution();
    let n = flow.dim();
    let r_steps = grid_steps(renorm, m)?;
    let steps = grid_steps(horizon, m)? / r_steps;
    let w = grid_weights::<T>(n, m);
    let (frame, mut rng) = start_frame::<T>(n, m, k, seed);
    let mut q: Vec<Vec<T>> = frame.iter().map(Segment::flatten).collect();
    orthonormalize(&mut q, &w, n, m, &mut rng);
    let burn = steps / 2;
    let mut sums = vec![T::zero(); k];
    for step in 0..steps {
        let fiber = omega.shifted(renorm * T::from_count(step));
        let schedule = flow.schedule(&fiber, r_steps)?;
        let images = q
            .iter()
            .map(|col| {
                let u = Segment::from_flat(n, m, col)?;
                Ok(flow.apply_scheduled(&schedule, &u)?.flatten())
            })
            .collect::<Result<Vec<_>>>()?;
        for j in 1..=k {
            match log_volume(&images[..j], &w) {
                Some(lv) => {
                    if step >= burn {
                        sums[j - 1] += lv;
                    }
                }
                None => return Ok(Err(Collapse { index: j - 1 })),
            }
        }
        q = images;
        orthonormalize(&mut q, &w, n, m, &mut rng);
    }
    let span = renorm * T::from_count(steps - burn);
    Ok(Ok(sums.into_iter().map(|s| s / span).collect()))
}

/// Partial sums `λ₁ + … + λ_j`, `j <= k`, from the growth of `j`-volumes of
/// `k` evolved segments re-orthonormalized every `renorm`.
///
/// Volumes use the grid inner product, so the result does not depend on
/// `space` beyond validating it. On a collapse the interval is halved and the
/// run repeated once; a second collapse at index `j >= 1` truncates to `j`
/// finite exponents (the rest are `-∞`), at index 0 it is an error.
pub fn volume_growth_exponents<T: Real>(
    flow: &Semiflow<T>,
    omega: &DriverPoint<T>,
    k: usize,
    horizon: T,
    renorm: T,
    space: SpaceNorm,
    seed: u64,
) -> Result<VolumeEstimate<T>> {
    space.validate()?;
    if k == 0 || k > 6 {
        return Err(Error::ResourceGuard(format!("volume method supports 1 <= k <= 6, got {k}")));
    }
    if !(horizon >= T::lit(50.0) * renorm) {
        return Err(Error::InvalidInput(format!(
            "volume horizon {horizon} is shorter than 50 renormalization intervals"
        )));
    }
    let mut renorm_used = renorm;
    let mut outcome = attempt(flow, omega, k, horizon, renorm, seed)?;
    if outcome.is_err() {
        let half = renorm * T::lit(0.5);
        if grid_steps(half, flow.resolution()).is_ok_and(|s| s > 0) {
            renorm_used = half;
            outcome = attempt(flow, omega, k, horizon, half, seed)?;
        }
    }
    let (partial_sums, collapsed_at) = match outcome {
        Ok(ps) => (ps, None),
        Err(Collapse { index: 0 }) => {
            return Err(Error::NumericalCollapse("leading volume vanished".into()));
        }
        Err(Collapse { index }) => {
            let mut ps = attempt(flow, omega, index, horizon, renorm_used, seed)?
                .map_err(|_| Error::NumericalCollapse("volume collapse persists".into()))?;
            ps.resize(k, T::neg_infinity());
            (ps, Some(index))
        }
    };
    let exponents = (0..k)
        .map(|j| {
            if j == 0 {
                partial_sums[0]
            } else if partial_sums[j].is_finite() {
                partial_sums[j] - partial_sums[j - 1]
            } else {
                T::neg_infinity()
            }
        })
        .collect();
    Ok(VolumeEstimate {
        partial_sums,
        exponents,
        renorm_used,
        collapsed_at,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::make_constant_driver;
    use crate::linalg::Mat;
    use crate::spectrum::top_lyapunov;

    fn system(a: &[f64], b: &[f64], m: usize) -> (Semiflow<f64>, DriverPoint<f64>) {
        let omega = make_constant_driver(Mat::square_f64(2, a).unwrap(), Mat::square_f64(2, b).unwrap()).unwrap();
        (Semiflow::new(&omega, m).unwrap(), omega)
    }

    #[test]
    fn one_column_follows_the_forward_exponent() {
        let (flow, omega) = system(&[-0.5, 0.3, 0.2, -0.1], &[0.2, 0.1, 0.4, 0.3], 30);
        let vol = volume_growth_exponents(&flow, &omega, 1, 60.0, 1.0, SpaceNorm::C, 3).unwrap();
        let u = Segment::constant(30, &[1.0, 1.0]);
        let fwd = top_lyapunov(&flow, &omega, &u, 60.0, 1.0, SpaceNorm::C).unwrap();
        assert!((vol.partial_sums[0] - fwd.lambda1).abs() <= 1e-6);
    }

    #[test]
    fn perron_volumes_truncate_at_the_rank() {
        let (flow, omega) = system(&[-1.0, 1.0, 1.0, -1.0], &[0.0; 4], 30);
        let vol = volume_growth_exponents(&flow, &omega, 3, 60.0, 1.0, SpaceNorm::Lp(2.0), 1).unwrap();
        assert!(vol.exponents[0].abs() <= 1e-9);
        assert!((vol.exponents[1] + 2.0).abs() <= 1e-6);
    }

    #[test]
    fn guards() {
        let (flow, omega) = system(&[0.0; 4], &[1.0, 0.0, 0.0, 1.0], 20);
        assert!(matches!(
            volume_growth_exponents(&flow, &omega, 7, 60.0, 1.0, SpaceNorm::C, 0),
            Err(Error::ResourceGuard(_))
        ));
        assert!(matches!(
            volume_growth_exponents(&flow, &omega, 2, 40.0, 1.0, SpaceNorm::C, 0),
            Err(Error::InvalidInput(_))
        ));
    }
}
