use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{grid_dot, grid_norm, orthonormalize, start_frame, DEFAULT_RESOLUTION};
use crate::dde::{grid_steps, grid_weights, Segment, Semiflow, SpaceNorm, DEFAULT_OPERATOR_CAP};
use crate::driver::DriverPoint;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::scalar::Real;

/// At most this many distinct window operators are kept in memory.
const CACHE_ENTRIES: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OseledetsOptions<T> {
    /// Number of tracked columns.
    pub k: usize,
    /// Seed of the random start columns after the first.
    pub seed: u64,
    /// Exponents closer than this count as one.
    pub resolution: T,
    /// Largest allowed discretized operator dimension.
    pub cap: usize,
}

impl<T: Real> Default for OseledetsOptions<T> {
    fn default() -> Self {
        Self {
            k: 4,
            seed: 0,
            resolution: T::lit(DEFAULT_RESOLUTION),
            cap: DEFAULT_OPERATOR_CAP,
        }
    }
}

/// QR exponents of the window products plus the projection onto the leading
/// direction along the complement of the leading left vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OseledetsEstimate<T> {
    /// Descending; `-∞` for columns that collapsed in the averaging window.
    pub lambdas: Vec<T>,
    /// Number of exponents within `resolution` of the first.
    pub leading_dim: usize,
    /// First exponent more than `resolution` below the leading one, or `-∞`.
    pub lambda2: T,
    /// Angle in the grid inner product between the final leading column and the supplied `ŵ`.
    pub e1_angle_to_w: Option<T>,
    /// Window start times where `‖P̃‖` was recorded.
    pub proj_times: Vec<T>,
    pub proj_norms: Vec<T>,
    /// Orthonormal frame after the last window.
    pub frame: Vec<Segment<T>>,
    /// Leading left vector at the first fiber, in flattened coordinates.
    pub left_start: Vec<T>,
    pub windows: usize,
}

struct OperatorCache<T> {
    flow: Semiflow<T>,
    steps: usize,
    cap: usize,
    t_op: T,
    map: HashMap<Vec<usize>, Arc<Mat<T>>>,
}

impl<T: Real> OperatorCache<T> {
    fn get(&mut self, omega: &DriverPoint<T>, k: usize) -> Result<Arc<Mat<T>>> {
        let fiber = omega.shifted(self.t_op * T::from_count(k));
        let schedule = self.flow.schedule(&fiber, self.steps)?;
        let key = schedule.state_sequence();
        if let Some(mat) = key.as_ref().and_then(|k| self.map.get(k)) {
            return Ok(Arc::clone(mat));
        }
        let mat = Arc::new(self.flow.discretize_scheduled(&schedule, self.cap)?);
        if let Some(key) = key {
            if self.map.len() < CACHE_ENTRIES {
                self.map.insert(key, Arc::clone(&mat));
            }
        }
        Ok(mat)
    }
}

/// `‖w‖_G ‖ℓ‖_{G⁻¹} / |ℓ·w|`: the norm of `u ↦ (ℓ·u / ℓ·w) w` in the grid inner product.
fn projection_norm<T: Real>(w: &[T], l: &[T], g: &[T]) -> T {
    let lw: T = l.iter().zip(w).map(|(a, b)| *a * *b).sum();
    let l_dual: T = l.iter().zip(g).map(|(a, gi)| *a * *a / *gi).sum::<T>().sqrt();
    grid_norm(w, g) * l_dual / lw.abs()
}

fn angle<T: Real>(a: &[T], b: &[T], g: &[T]) -> T {
    let na = grid_norm(a, g);
    let nb = grid_norm(b, g);
    let c = grid_dot(a, b, g) / (na * nb);
    let resid: Vec<T> = a.iter().zip(b).map(|(x, y)| *x / na - c * *y / nb).collect();
    grid_norm(&resid, g).atan2(c.abs())
}

/// QR extraction of the leading exponents from window operators `U(t_op)`
/// over `horizon`, with the leading left vector obtained by a backward pass.
///
/// The second half of the windows is averaged. `‖P̃‖` is recorded on the
/// windows that are at least `max(n/10, 5)` from either end, where both the
/// forward column and the left vector have settled. The dynamics do not depend
/// on `space`; it only has to be valid.
pub fn oseledets_split<T: Real>(
    flow: &Semiflow<T>,
    omega: &DriverPoint<T>,
    t_op: T,
    horizon: T,
    space: SpaceNorm,
    opts: &OseledetsOptions<T>,
    w_end: Option<&Segment<T>>,
) -> Result<OseledetsEstimate<T>> {
    space.validate()?;
    let m = flow.resolution();
    let n = flow.dim();
    let steps = grid_steps(t_op, m)?;
    if steps < m {
        return Err(Error::InvalidInput(format!("window length {t_op} is shorter than the delay")));
    }
    let windows = grid_steps(horizon, m)? / steps;
    if windows < 20 {
        return Err(Error::InsufficientSamples { needed: 20, got: windows });
    }
    if opts.k == 0 {
        return Err(Error::InvalidInput("at least one column is required".into()));
    }
    let g = grid_weights::<T>(n, m);
    let mut cache = OperatorCache {
        flow: flow.clone(),
        steps,
        cap: opts.cap,
        t_op,
        map: HashMap::new(),
    };
    let (frame, mut rng) = start_frame::<T>(n, m, opts.k, opts.seed);
    let mut q: Vec<Vec<T>> = frame.iter().map(Segment::flatten).collect();
    orthonormalize(&mut q, &g, n, m, &mut rng);
    let avg_from = windows / 2;
    let mut sums = vec![T::zero(); opts.k];
    let mut dead = vec![false; opts.k];
    let mut leading = Vec::with_capacity(windows + 1);
    leading.push(q[0].clone());
    for k in 0..windows {
        let op = cache.get(omega, k)?;
        let mut images: Vec<Vec<T>> = q.iter().map(|c| op.matvec(c)).collect();
        if images.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::IntegrationFailure {
                t: (t_op * T::from_count(k + 1)).to_f64_lossy(),
            });
        }
        let r = orthonormalize(&mut images, &g, n, m, &mut rng);
        if r[0] == T::zero() {
            return Err(Error::NumericalCollapse(format!("leading column vanished in window {k}")));
        }
        if k >= avg_from {
            for (i, ri) in r.iter().enumerate() {
                if *ri == T::zero() {
                    dead[i] = true;
                } else {
                    sums[i] += ri.ln();
                }
            }
        }
        q = images;
        leading.push(q[0].clone());
    }

    // Backward pass: ℓ_k ∝ ℓ_{k+1} M_k, started from the positive functional.
    let burn = (windows / 10).max(5);
    let mut ell = vec![T::one(); g.len()];
    let mut proj = Vec::new();
    for k in (0..windows).rev() {
        let op = cache.get(omega, k)?;
        ell = op.vecmat(&ell);
        let s = ell.iter().fold(T::zero(), |a, x| a.max(x.abs()));
        if !(s > T::zero()) || !s.is_finite() {
            return Err(Error::NumericalCollapse(format!("left vector vanished in window {k}")));
        }
        ell.iter_mut().for_each(|x| *x /= s);
        if k >= burn && k + burn <= windows {
            proj.push((t_op * T::from_count(k), projection_norm(&leading[k], &ell, &g)));
        }
    }
    proj.reverse();
    let (proj_times, proj_norms) = proj.into_iter().unzip();

    let span = t_op * T::from_count(windows - avg_from);
    let mut lambdas: Vec<T> = sums
        .iter()
        .zip(&dead)
        .map(|(s, d)| if *d { T::neg_infinity() } else { *s / span })
        .collect();
    lambdas.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let top = lambdas[0];
    let leading_dim = lambdas.iter().filter(|l| (top - **l).abs() <= opts.resolution).count();
    let lambda2 = lambdas
        .iter()
        .copied()
        .find(|l| *l < top - opts.resolution)
        .unwrap_or(T::neg_infinity());
    let e1_angle_to_w = match w_end {
        Some(w) => {
            w.check_shape(&Segment::zeros(n, m))?;
            Some(angle(&q[0], &w.flatten(), &g))
        }
        None => None,
    };
    let frame = q
        .iter()
        .map(|c| Segment::from_flat(n, m, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(OseledetsEstimate {
        lambdas,
        leading_dim,
        lambda2,
        e1_angle_to_w,
        proj_times,
        proj_norms,
        frame,
        left_start: ell,
        windows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::make_constant_driver;
    use crate::oracle::{delay_char_roots, dense_product_oracle};
    use crate::spectrum::{pullback_floquet, PullbackOptions};

    fn system(a: &[f64], b: &[f64], m: usize) -> (Semiflow<f64>, DriverPoint<f64>) {
        let omega = make_constant_driver(Mat::square_f64(2, a).unwrap(), Mat::square_f64(2, b).unwrap()).unwrap();
        (Semiflow::new(&omega, m).unwrap(), omega)
    }

    #[test]
    fn perron_split() {
        let (flow, omega) = system(&[-1.0, 1.0, 1.0, -1.0], &[0.0; 4], 30);
        let u = Segment::constant(30, &[1.0, 0.4]);
        let w = pullback_floquet(&flow, &omega, 40.0, &u, SpaceNorm::Lp(2.0), &PullbackOptions::default()).unwrap();
        let est =
            oseledets_split(&flow, &omega, 1.0, 40.0, SpaceNorm::Lp(2.0), &OseledetsOptions::default(), Some(&w.w))
                .unwrap();
        assert!(est.lambdas[0].abs() <= 1e-6);
        assert!((est.lambdas[1] + 2.0).abs() <= 1e-6);
        assert_eq!(est.lambdas[2], f64::NEG_INFINITY);
        assert_eq!(est.leading_dim, 1);
        assert!(est.e1_angle_to_w.unwrap() <= 1e-6);
    }

    #[test]
    fn decoupled_pure_delay_has_double_roots() {
        let roots = delay_char_roots(0.0, 1.0, 2).unwrap();
        let (flow, omega) = system(&[0.0; 4], &[1.0, 0.0, 0.0, 1.0], 100);
        let est =
            oseledets_split(&flow, &omega, 1.0, 100.0, SpaceNorm::C, &OseledetsOptions::default(), None).unwrap();
        assert!((est.lambdas[0] - roots.roots[0].re).abs() <= 1e-3);
        assert!((est.lambdas[1] - roots.roots[0].re).abs() <= 1e-3);
        assert!((est.lambda2 - roots.roots[1].re).abs() <= 5e-2, "{}", est.lambda2);
        assert_eq!(est.leading_dim, 2);
    }

    #[test]
    fn agrees_with_dense_products() {
        let (flow, omega) = system(&[-0.5, 0.3, 0.2, -0.1], &[0.2, 0.1, 0.4, 0.3], 20);
        let opts = OseledetsOptions { k: 2, ..OseledetsOptions::default() };
        let est = oseledets_split(&flow, &omega, 1.0, 40.0, SpaceNorm::L1Hat, &opts, None).unwrap();
        let dense = dense_product_oracle(&omega, 1.0, 40, 20, SpaceNorm::L1Hat).unwrap();
        for i in 0..2 {
            assert!((est.lambdas[i] - dense[i]).abs() <= 1e-3, "{i}: {} vs {}", est.lambdas[i], dense[i]);
        }
    }

    #[test]
    fn projection_norm_of_aligned_vectors() {
        let g = vec![1.0f64, 0.5, 0.5];
        let w = vec![1.0, 0.0, 0.0];
        assert!((projection_norm(&w, &[2.0, 0.0, 0.0], &g) - 1.0).abs() <= 1e-15);
        // ℓ = (1, 1, 0): ‖ℓ‖_{G⁻¹} = √3.
        assert!((projection_norm(&w, &[1.0, 1.0, 0.0], &g) - 3f64.sqrt()).abs() <= 1e-15);
    }

    #[test]
    fn operator_cap_is_enforced() {
        let (flow, omega) = system(&[0.0; 4], &[1.0, 0.0, 0.0, 1.0], 50);
        let opts = OseledetsOptions { cap: 10, ..OseledetsOptions::default() };
        assert!(matches!(
            oseledets_split(&flow, &omega, 1.0, 30.0, SpaceNorm::C, &opts, None),
            Err(Error::ResourceGuard(_))
        ));
    }
}
