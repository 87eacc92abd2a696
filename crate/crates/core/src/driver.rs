//! Ergodic base flows and the coefficient paths `t ↦ (A(θ_tω), B(θ_tω))`.
//!
//! A [`DriverPoint`] is a point ω of the base together with its time offset.
//! Evaluation at time `t` depends only on `(seed, phase + t)`, so `θ_s` is a
//! phase shift and no history is stored. Switching drivers draw one state per
//! cell `[k L, (k+1) L)`, `k ∈ ℤ`, from a counter-based hash of `(seed, k)`;
//! the quasi-periodic driver is a linear flow on a torus sampled by Fourier
//! tables.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::scalar::Real;

/// Which family of base flows a [`DriverPoint`] belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriverKind {
    IidSwitching,
    MarkovSwitching,
    Quasiperiodic,
}

/// One `(A, B)` pair of a switching driver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchState<T> {
    pub a: Mat<T>,
    pub b: Mat<T>,
}

/// A single Fourier mode: contributes
/// `a_cos cos φ + a_sin sin φ` to `A` (same for `B`) with `φ = ⟨harmonic, angles(t)⟩`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierTerm<T> {
    pub harmonic: Vec<i32>,
    pub a_cos: Mat<T>,
    pub a_sin: Mat<T>,
    pub b_cos: Mat<T>,
    pub b_sin: Mat<T>,
}

#[derive(Clone, Debug)]
pub(crate) enum Params<T> {
    Iid {
        states: Vec<SwitchState<T>>,
        cell_length: T,
    },
    Markov {
        states: Vec<SwitchState<T>>,
        cell_length: T,
        /// Row-wise cumulative transition probabilities.
        cumulative: Vec<Vec<f64>>,
        stationary_cumulative: Vec<f64>,
    },
    Quasi {
        rotation: Vec<T>,
        angles: Vec<T>,
        terms: Vec<FourierTerm<T>>,
    },
}

/// Coefficients `A(θ_tω)`, `B(θ_tω)` at local time `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSample<T> {
    pub a: Mat<T>,
    pub b: Mat<T>,
    pub t: T,
}

/// A piece `[start, end)` of local time on which a switching driver is constant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Piece<T> {
    pub start: T,
    pub end: T,
    pub state: usize,
}

/// A realization ω of the base flow.
#[derive(Clone, Debug)]
pub struct DriverPoint<T> {
    seed: u64,
    phase: T,
    n: usize,
    params: Arc<Params<T>>,
}

const MARKOV_SALT: u64 = 0x6d61_726b_6f76_2121;
const MARKOV_MAX_LOOKBACK: usize = 1 << 16;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Counter-based hash of `(seed, k)`; two-sided in `k`.
fn cell_hash(seed: u64, k: i64) -> u64 {
    splitmix64(seed ^ splitmix64(k as u64))
}

fn unit_interval(h: u64) -> f64 {
    // 53 random mantissa bits in [0, 1)
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn inverse_cdf(cumulative: &[f64], u: f64) -> usize {
    cumulative
        .iter()
        .position(|&c| u < c)
        .unwrap_or(cumulative.len() - 1)
}

fn validate_states<T: Real>(states: &[SwitchState<T>]) -> Result<usize> {
    let first = states.first().ok_or(Error::EmptyStates)?;
    let n = first.a.rows();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "system dimension must be at least 2, got {n}"
        )));
    }
    for s in states {
        for m in [&s.a, &s.b] {
            if m.rows() != n || m.cols() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: if m.rows() != n { m.rows() } else { m.cols() },
                });
            }
            if !m.is_finite() {
                return Err(Error::InvalidInput("non-finite coefficient".into()));
            }
        }
    }
    Ok(n)
}

fn validate_cell_length<T: Real>(cell_length: T) -> Result<()> {
    if !(cell_length > T::zero()) || !cell_length.is_finite() {
        return Err(Error::InvalidInput(format!(
            "cell_length must be positive, got {cell_length}"
        )));
    }
    Ok(())
}

/// Two-sided iid switching among `states`, one draw per cell of length `cell_length`.
pub fn make_iid_switching_driver<T: Real>(
    seed: u64,
    states: Vec<SwitchState<T>>,
    cell_length: T,
) -> Result<DriverPoint<T>> {
    let n = validate_states(&states)?;
    validate_cell_length(cell_length)?;
    Ok(DriverPoint {
        seed,
        phase: T::zero(),
        n,
        params: Arc::new(Params::Iid {
            states,
            cell_length,
        }),
    })
}

/// Convenience: a driver with a single state, i.e. constant coefficients.
pub fn make_constant_driver<T: Real>(a: Mat<T>, b: Mat<T>) -> Result<DriverPoint<T>> {
    make_iid_switching_driver(0, vec![SwitchState { a, b }], T::one())
}

/// Stationary two-sided Markov switching with row-stochastic `transition`.
///
/// The path is realized by coupling from the past with a shared uniform per
/// cell, so the state at cell `k` is a pure function of `(seed, k)`.
pub fn make_markov_switching_driver<T: Real>(
    seed: u64,
    states: Vec<SwitchState<T>>,
    cell_length: T,
    transition: Mat<T>,
) -> Result<DriverPoint<T>> {
    let n = validate_states(&states)?;
    validate_cell_length(cell_length)?;
    let s = states.len();
    if transition.rows() != s || transition.cols() != s {
        return Err(Error::DimensionMismatch {
            expected: s,
            found: transition.rows(),
        });
    }
    let mut cumulative = Vec::with_capacity(s);
    for i in 0..s {
        let row: Vec<f64> = transition.row(i).iter().map(|x| x.to_f64_lossy()).collect();
        if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "transition row {i} has a negative or non-finite entry"
            )));
        }
        let total: f64 = row.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "transition row {i} sums to {total}, not 1"
            )));
        }
        let mut acc = 0.0;
        cumulative.push(
            row.iter()
                .map(|p| {
                    acc += p / total;
                    acc
                })
                .collect::<Vec<_>>(),
        );
    }
    if !strongly_connected(&transition) {
        log::warn!("Markov transition matrix is not irreducible; the switching driver is not ergodic");
    }
    let stationary = stationary_law(&transition);
    let mut acc = 0.0;
    let stationary_cumulative = stationary
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect();
    Ok(DriverPoint {
        seed,
        phase: T::zero(),
        n,
        params: Arc::new(Params::Markov {
            states,
            cell_length,
            cumulative,
            stationary_cumulative,
        }),
    })
}

/// Linear flow on a torus: angles `φ_i(t) = φ_i⁰ + ν_i t`.
///
/// When `angles` is `None` the initial torus point is drawn from `seed`.
pub fn make_quasiperiodic_driver<T: Real>(
    seed: u64,
    rotation: Vec<T>,
    terms: Vec<FourierTerm<T>>,
    angles: Option<Vec<T>>,
) -> Result<DriverPoint<T>> {
    let d = rotation.len();
    if d == 0 {
        return Err(Error::InvalidInput("rotation vector is empty".into()));
    }
    let first = terms
        .first()
        .ok_or_else(|| Error::InvalidInput("quasi-periodic driver needs a Fourier table".into()))?;
    let n = first.a_cos.rows();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "system dimension must be at least 2, got {n}"
        )));
    }
    for term in &terms {
        if term.harmonic.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: term.harmonic.len(),
            });
        }
        for m in [&term.a_cos, &term.a_sin, &term.b_cos, &term.b_sin] {
            if m.rows() != n || m.cols() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: m.rows(),
                });
            }
            if !m.is_finite() {
                return Err(Error::InvalidInput("non-finite Fourier coefficient".into()));
            }
        }
    }
    let angles = match angles {
        Some(a) if a.len() != d => {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: a.len(),
            })
        }
        Some(a) => a,
        None => (0..d)
            .map(|i| {
                T::lit(unit_interval(cell_hash(seed, i as i64)) * std::f64::consts::TAU)
            })
            .collect(),
    };
    Ok(DriverPoint {
        seed,
        phase: T::zero(),
        n,
        params: Arc::new(Params::Quasi {
            rotation,
            angles,
            terms,
        }),
    })
}

/// `θ_s ω`: the same realization observed `s` time units later.
pub fn shift<T: Real>(omega: &DriverPoint<T>, s: T) -> DriverPoint<T> {
    omega.shifted(s)
}

/// `(A(θ_tω), B(θ_tω))`; on a switching boundary the right-hand cell wins.
pub fn sample_coefficients<T: Real>(omega: &DriverPoint<T>, t: T) -> CoefficientSample<T> {
    omega.sample(t)
}

impl<T: Real> DriverPoint<T> {
    pub fn kind(&self) -> DriverKind {
        match *self.params {
            Params::Iid { .. } => DriverKind::IidSwitching,
            Params::Markov { .. } => DriverKind::MarkovSwitching,
            Params::Quasi { .. } => DriverKind::Quasiperiodic,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn phase(&self) -> T {
        self.phase
    }

    /// System dimension `N`.
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Same base and phase, different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut out = self.clone();
        out.seed = seed;
        if let Params::Quasi { .. } = *self.params {
            // the seed only picks the initial torus point, which is already fixed
        }
        out
    }

    pub fn shifted(&self, s: T) -> Self {
        Self {
            seed: self.seed,
            phase: self.phase + s,
            n: self.n,
            params: Arc::clone(&self.params),
        }
    }

    pub(crate) fn params(&self) -> &Arc<Params<T>> {
        &self.params
    }

    pub fn is_switching(&self) -> bool {
        !matches!(*self.params, Params::Quasi { .. })
    }

    /// Switching states, if this is a switching driver.
    pub fn states(&self) -> Option<&[SwitchState<T>]> {
        match &*self.params {
            Params::Iid { states, .. } | Params::Markov { states, .. } => Some(states),
            Params::Quasi { .. } => None,
        }
    }

    pub fn cell_length(&self) -> Option<T> {
        match *self.params {
            Params::Iid { cell_length, .. } | Params::Markov { cell_length, .. } => {
                Some(cell_length)
            }
            Params::Quasi { .. } => None,
        }
    }

    /// Cell index containing local time `t` (switching drivers only).
    pub fn cell_index(&self, t: T) -> Option<i64> {
        let l = self.cell_length()?;
        ((self.phase + t) / l).floor().to_i64()
    }

    /// State drawn for absolute cell `k`.
    pub fn state_of_cell(&self, k: i64) -> Option<usize> {
        match &*self.params {
            Params::Iid { states, .. } => {
                let h = cell_hash(self.seed, k);
                Some(((h as u128 * states.len() as u128) >> 64) as usize)
            }
            Params::Markov {
                cumulative,
                stationary_cumulative,
                ..
            } => Some(self.markov_state(k, cumulative, stationary_cumulative)),
            Params::Quasi { .. } => None,
        }
    }

    fn markov_state(&self, k: i64, cumulative: &[Vec<f64>], stationary: &[f64]) -> usize {
        let s = cumulative.len();
        if s == 1 {
            return 0;
        }
        let salted = self.seed ^ MARKOV_SALT;
        let mut lookback = 16usize;
        loop {
            let start = k - lookback as i64;
            let mut current: Vec<usize> = (0..s).collect();
            for j in start..k {
                let u = unit_interval(cell_hash(salted, j));
                for x in current.iter_mut() {
                    *x = inverse_cdf(&cumulative[*x], u);
                }
            }
            if current.iter().all(|&x| x == current[0]) {
                return current[0];
            }
            if lookback >= MARKOV_MAX_LOOKBACK {
                // No coalescence: fall back to a stationary draw at the horizon.
                let mut x = inverse_cdf(stationary, unit_interval(cell_hash(salted, start - 1)));
                for j in start..k {
                    x = inverse_cdf(&cumulative[x], unit_interval(cell_hash(salted, j)));
                }
                return x;
            }
            lookback *= 2;
        }
    }

    /// State active at local time `t` (switching drivers only).
    pub fn state_at(&self, t: T) -> Option<usize> {
        self.state_of_cell(self.cell_index(t)?)
    }

    pub fn sample(&self, t: T) -> CoefficientSample<T> {
        match &*self.params {
            Params::Iid { states, .. } | Params::Markov { states, .. } => {
                let s = &states[self.state_at(t).expect("switching driver")];
                CoefficientSample {
                    a: s.a.clone(),
                    b: s.b.clone(),
                    t,
                }
            }
            Params::Quasi {
                rotation,
                angles,
                terms,
            } => {
                let tau = self.phase + t;
                let n = self.n;
                let mut a = Mat::zeros(n, n);
                let mut b = Mat::zeros(n, n);
                for term in terms {
                    let mut phi = T::zero();
                    for ((&h, &nu), &a0) in term.harmonic.iter().zip(rotation).zip(angles) {
                        if h != 0 {
                            phi += T::lit(f64::from(h)) * (a0 + nu * tau);
                        }
                    }
                    let (sn, cs) = phi.sin_cos();
                    a.add_scaled(cs, &term.a_cos);
                    a.add_scaled(sn, &term.a_sin);
                    b.add_scaled(cs, &term.b_cos);
                    b.add_scaled(sn, &term.b_sin);
                }
                CoefficientSample { a, b, t }
            }
        }
    }

    /// Constant pieces covering local time `[t0, t1]` (switching drivers only).
    ///
    /// Cell boundaries closer than `1e-9 (t1 - t0)` to an endpoint are ignored
    /// and each piece takes the state at its midpoint, so grid-aligned callers
    /// see identical pieces regardless of how `phase + t` rounds.
    pub(crate) fn pieces(&self, t0: T, t1: T) -> Vec<Piece<T>> {
        let l = self
            .cell_length()
            .expect("pieces() is only defined for switching drivers");
        let tol = (t1 - t0) * T::lit(1e-9);
        let mut cuts = vec![t0];
        let a = self.phase + t0;
        let b = self.phase + t1;
        let mut k = ((a + tol) / l).floor() + T::one();
        while k * l < b - tol {
            cuts.push(k * l - self.phase);
            k += T::one();
        }
        cuts.push(t1);
        cuts.windows(2)
            .map(|w| {
                let mid = (w[0] + w[1]) * T::lit(0.5);
                Piece {
                    start: w[0],
                    end: w[1],
                    state: self.state_at(mid).expect("switching driver"),
                }
            })
            .collect()
    }

    /// `∫_{t0}^{t1} f(A(θ_sω), B(θ_sω)) ds`.
    ///
    /// Exact for switching drivers; composite trapezoid with 1000 nodes per
    /// unit time for the quasi-periodic driver.
    pub fn integrate<F>(&self, t0: T, t1: T, f: F) -> T
    where
        F: Fn(&Mat<T>, &Mat<T>) -> T,
    {
        if t1 <= t0 {
            return T::zero();
        }
        match &*self.params {
            Params::Iid { states, .. } | Params::Markov { states, .. } => self
                .pieces(t0, t1)
                .iter()
                .map(|p| (p.end - p.start) * f(&states[p.state].a, &states[p.state].b))
                .sum(),
            Params::Quasi { .. } => {
                let steps = ((t1 - t0) * T::lit(1000.0)).ceil().to_usize().unwrap_or(1).max(2);
                let h = (t1 - t0) / T::from_count(steps);
                let mut acc = T::zero();
                for i in 0..=steps {
                    let s = self.sample(t0 + h * T::from_count(i));
                    let w = if i == 0 || i == steps { T::lit(0.5) } else { T::one() };
                    acc += w * f(&s.a, &s.b);
                }
                acc * h
            }
        }
    }

    /// `sup_{s ∈ [t0, t1]} f(A(θ_sω), B(θ_sω))`, exact over switching pieces.
    pub fn sup_over<F>(&self, t0: T, t1: T, f: F) -> T
    where
        F: Fn(&Mat<T>, &Mat<T>) -> T,
    {
        match &*self.params {
            Params::Iid { states, .. } | Params::Markov { states, .. } => self
                .pieces(t0, t1)
                .iter()
                .map(|p| f(&states[p.state].a, &states[p.state].b))
                .fold(T::neg_infinity(), T::max),
            Params::Quasi { .. } => {
                let steps = ((t1 - t0) * T::lit(1000.0)).ceil().to_usize().unwrap_or(1).max(1);
                let h = (t1 - t0) / T::from_count(steps);
                (0..=steps)
                    .map(|i| {
                        let s = self.sample(t0 + h * T::from_count(i));
                        f(&s.a, &s.b)
                    })
                    .fold(T::neg_infinity(), T::max)
            }
        }
    }
}

/// Strong connectivity of the support graph of a square matrix.
pub fn strongly_connected<T: Real>(m: &Mat<T>) -> bool {
    let n = m.rows();
    if n == 0 {
        return false;
    }
    let reach = |forward: bool| -> bool {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let w = if forward { m[(i, j)] } else { m[(j, i)] };
                if w != T::zero() && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

fn stationary_law<T: Real>(p: &Mat<T>) -> Vec<f64> {
    let s = p.rows();
    let mut pi = vec![1.0 / s as f64; s];
    for _ in 0..10_000 {
        let mut next = vec![0.0; s];
        for i in 0..s {
            for j in 0..s {
                // lazy chain: converges for periodic chains as well
                next[j] += 0.5 * pi[i] * p[(i, j)].to_f64_lossy();
            }
            next[i] += 0.5 * pi[i];
        }
        let delta: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        if delta < 1e-15 {
            break;
        }
    }
    let total: f64 = pi.iter().sum();
    pi.iter().map(|x| x / total).collect()
}
