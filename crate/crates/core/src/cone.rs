//! Order-theoretic hypotheses on a concrete realization: cooperativity,
//! irreducibility windows, the survive-or-die dichotomy and the focusing
//! constants with their sandwich inequality.

use serde::{Deserialize, Serialize};

use crate::dde::{grid_steps, norm, Segment, Semiflow, SpaceNorm, ZERO_THRESHOLD};
use crate::driver::DriverPoint;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::scalar::Real;

/// Default lower bound an irreducibility bottleneck must reach.
pub const DEFAULT_DELTA_MIN: f64 = 1e-9;

/// Grid used for the supremum defining `c(ω)`.
pub const C_GRID: usize = 64;

/// First sign violation found by [`check_cooperativity`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CooperativityViolation {
    pub t: f64,
    /// `"A"` or `"B"`.
    pub matrix: String,
    /// One-based indices.
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CooperativityReport {
    pub cooperative: bool,
    pub violation: Option<CooperativityViolation>,
}

/// Off-diagonal `a_ij >= 0` and all `b_ij >= 0` on every driver cell of `[0, horizon]`.
///
/// Smooth drivers are sampled every `0.01` time units.
pub fn check_cooperativity<T: Real>(omega: &DriverPoint<T>, horizon: T) -> Result<CooperativityReport> {
    if !(horizon > T::zero()) {
        return Err(Error::InvalidTime(horizon.to_f64_lossy()));
    }
    let probes: Vec<T> = if let Some(states) = omega.states() {
        let _ = states;
        omega
            .pieces(T::zero(), horizon)
            .iter()
            .map(|p| (p.start + p.end) * T::lit(0.5))
            .collect()
    } else {
        let k = (horizon * T::lit(100.0)).ceil().to_usize().unwrap_or(1);
        (0..=k).map(|i| horizon * T::from_count(i) / T::from_count(k)).collect()
    };
    for t in probes {
        let s = omega.sample(t);
        if let Some(v) = sign_violation(&s.a, &s.b) {
            return Ok(CooperativityReport {
                cooperative: false,
                violation: Some(CooperativityViolation { t: t.to_f64_lossy(), ..v }),
            });
        }
    }
    Ok(CooperativityReport {
        cooperative: true,
        violation: None,
    })
}

fn sign_violation<T: Real>(a: &Mat<T>, b: &Mat<T>) -> Option<CooperativityViolation> {
    let n = a.rows();
    for (name, m, skip_diag) in [("A", a, true), ("B", b, false)] {
        for i in 0..n {
            for j in 0..n {
                if skip_diag && i == j {
                    continue;
                }
                if m[(i, j)] < T::zero() {
                    return Some(CooperativityViolation {
                        t: 0.0,
                        matrix: name.into(),
                        row: i + 1,
                        col: j + 1,
                        value: m[(i, j)].to_f64_lossy(),
                    });
                }
            }
        }
    }
    None
}

/// Outcome of the irreducibility search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IrreducibilityReport<T> {
    /// Window length `M`.
    pub window: usize,
    /// Window start times `k + (k-2) M`, `k = 2..N`.
    pub window_times: Vec<T>,
    /// Zero-based path `j_1..j_N` per start index, `None` when no path exists.
    pub paths: Vec<Option<Vec<usize>>>,
    /// Smallest edge weight along each path.
    pub bottlenecks: Vec<T>,
    /// Realized `δ` per window, clamped to `(0, 1]`.
    pub delta_values: Vec<T>,
    pub satisfied: bool,
    /// First start index without an admissible path.
    pub failing_start: Option<usize>,
}

/// Edge weights `W_{j'j} = ∫_0^M (a + b)_{j'j}(θ_{s+t}ω) ds` for one window.
pub fn window_weights<T: Real>(omega: &DriverPoint<T>, t: T, window: usize) -> Mat<T> {
    let n = omega.dim();
    let mut w = Mat::zeros(n, n);
    let end = t + T::from_count(window);
    for r in 0..n {
        for c in 0..n {
            if r != c {
                w[(r, c)] = omega.integrate(t, end, |a, b| a[(r, c)] + b[(r, c)]);
            }
        }
    }
    w
}

/// Searches, for every start `i`, a Hamiltonian path `i = j_1 → … → j_N` whose
/// `l`-th edge has weight at least `delta_min` in window `l + 1`.
///
/// This is the reading under which the lower-bound chain of the positivity
/// argument goes through: component `j_{l+1}` is lit up from `j_l` during
/// window `k = l + 1`. Among admissible paths the one with the largest
/// bottleneck wins; ties go to the lexicographically smallest path.
pub fn check_irreducibility<T: Real>(
    omega: &DriverPoint<T>,
    window: usize,
    delta_min: T,
) -> Result<IrreducibilityReport<T>> {
    let n = omega.dim();
    if window == 0 {
        return Err(Error::InvalidInput("irreducibility window M must be >= 1".into()));
    }
    let window_times: Vec<T> = (2..=n)
        .map(|k| T::from_count(k) + T::from_count((k - 2) * window))
        .collect();
    let weights: Vec<Mat<T>> = window_times
        .iter()
        .map(|&t| window_weights(omega, t, window))
        .collect();
    let mut paths = Vec::with_capacity(n);
    let mut bottlenecks = Vec::with_capacity(n);
    let mut failing_start = None;
    for start in 0..n {
        match best_path(start, &weights) {
            Some((path, b)) if b >= delta_min => {
                paths.push(Some(path));
                bottlenecks.push(b);
            }
            _ => {
                paths.push(None);
                bottlenecks.push(T::zero());
                failing_start.get_or_insert(start);
            }
        }
    }
    let satisfied = failing_start.is_none();
    let delta_values = if satisfied {
        (0..n - 1)
            .map(|l| {
                paths
                    .iter()
                    .flatten()
                    .map(|p| weights[l][(p[l + 1], p[l])])
                    .fold(T::infinity(), T::min)
                    .min(T::one())
            })
            .collect()
    } else {
        vec![T::zero(); n - 1]
    };
    Ok(IrreducibilityReport {
        window,
        window_times,
        paths,
        bottlenecks,
        delta_values,
        satisfied,
        failing_start,
    })
}

fn best_path<T: Real>(start: usize, weights: &[Mat<T>]) -> Option<(Vec<usize>, T)> {
    let n = weights.len() + 1;
    let mut best: Option<(Vec<usize>, T)> = None;
    let mut path = vec![start];
    let mut used = vec![false; n];
    used[start] = true;
    fn dfs<T: Real>(
        weights: &[Mat<T>],
        path: &mut Vec<usize>,
        used: &mut [bool],
        bottleneck: T,
        best: &mut Option<(Vec<usize>, T)>,
    ) {
        let n = used.len();
        if path.len() == n {
            if best.as_ref().map_or(true, |(_, b)| bottleneck > *b) {
                *best = Some((path.clone(), bottleneck));
            }
            return;
        }
        let l = path.len() - 1;
        let cur = path[l];
        for next in 0..n {
            if used[next] {
                continue;
            }
            let w = weights[l][(next, cur)];
            if !(w > T::zero()) {
                continue;
            }
            let b = bottleneck.min(w);
            if best.as_ref().is_some_and(|(_, bb)| b <= *bb) {
                continue;
            }
            used[next] = true;
            path.push(next);
            dfs(weights, path, used, b, best);
            path.pop();
            used[next] = false;
        }
    }
    if n == 1 {
        return Some((path, T::infinity()));
    }
    dfs(weights, &mut path, &mut used, T::infinity(), &mut best);
    best
}

/// Focusing constants of one fiber.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocusingReport<T> {
    /// Focusing time `N + (N-1) M + 1`.
    pub t_focus: usize,
    pub space: SpaceNorm,
    /// `K_j = exp(-∫_0^T |a_jj|)`, one per component.
    pub k: Vec<T>,
    pub k_delta: T,
    pub kappa: T,
    /// `c(ω)` and the integrability factor `d(ω)` of the configured space.
    pub c: T,
    pub d: T,
    /// `c(θ_{j+1}ω)` and `d(θ_{j+1}ω)` for `j = 0..T-2`.
    pub c_shifted: Vec<T>,
    pub d_shifted: Vec<T>,
    pub irreducibility: IrreducibilityReport<T>,
}

impl<T: Real> FocusingReport<T> {
    pub fn t_focus_real(&self) -> T {
        T::from_count(self.t_focus)
    }
}

/// `c(ω) = sup_{0 <= t1 <= t2 <= 1} ‖U⁰(t2, t1)‖` over a grid of `C_GRID` cells.
pub fn c_constant<T: Real>(omega: &DriverPoint<T>) -> Result<T> {
    let g = C_GRID;
    let nodes: Vec<T> = (0..=g).map(|i| T::from_count(i) / T::from_count(g)).collect();
    let steps = nodes
        .windows(2)
        .map(|w| crate::dde::fundamental_matrix(omega, w[0], w[1]))
        .collect::<Result<Vec<_>>>()?;
    let mut c = T::one();
    for i in 0..g {
        let mut p = Mat::identity(omega.dim());
        for s in &steps[i..] {
            p = s.matmul(&p);
            c = c.max(p.norm2());
        }
    }
    Ok(c)
}

/// The integrability factor of `b = ‖B‖` on `[0, 1]` matching `space`:
/// `(∫ b^q)^{1/q}` on `L_p`, `ess sup b` on `L̂`, `∫ b` on `C` and `AC`.
pub fn d_constant<T: Real>(omega: &DriverPoint<T>, space: SpaceNorm) -> T {
    let b_norm = |_: &Mat<T>, b: &Mat<T>| b.norm2();
    match space {
        SpaceNorm::Lp(p) => {
            let q = T::lit(p / (p - 1.0));
            omega
                .integrate(T::zero(), T::one(), |a, b| b_norm(a, b).powf(q))
                .powf(q.recip())
        }
        SpaceNorm::L1Hat => omega.sup_over(T::zero(), T::one(), b_norm),
        SpaceNorm::C | SpaceNorm::Ac => omega.integrate(T::zero(), T::one(), b_norm),
    }
}

/// `K_j`, `k_δ`, `c`, `d` and `κ` for window length `M`.
pub fn focusing_constants<T: Real>(
    omega: &DriverPoint<T>,
    window: usize,
    space: SpaceNorm,
    delta_min: T,
) -> Result<FocusingReport<T>> {
    space.validate()?;
    let n = omega.dim();
    let irreducibility = check_irreducibility(omega, window, delta_min)?;
    if let Some(start) = irreducibility.failing_start {
        return Err(Error::NotIrreducible { start });
    }
    let t_focus = n + (n - 1) * window + 1;
    let tf = T::from_count(t_focus);
    let k: Vec<T> = (0..n)
        .map(|j| (-omega.integrate(T::zero(), tf, |a, _| a[(j, j)].abs())).exp())
        .collect();
    let k_delta = k.iter().copied().product::<T>()
        * irreducibility.delta_values.iter().copied().product::<T>();
    let c = c_constant(omega)?;
    let d = d_constant(omega, space);
    let mut c_shifted = Vec::with_capacity(t_focus - 1);
    let mut d_shifted = Vec::with_capacity(t_focus - 1);
    for j in 0..t_focus - 1 {
        let fiber = omega.shifted(T::from_count(j + 1));
        c_shifted.push(c_constant(&fiber)?);
        d_shifted.push(d_constant(&fiber, space));
    }
    let growth: T = c_shifted
        .iter()
        .zip(&d_shifted)
        .map(|(&c, &d)| c * (T::one() + d))
        .product();
    let kappa = T::lit(3.0).powi((t_focus - 1) as i32) * growth / k_delta;
    if !(kappa.is_finite() && k_delta > T::zero()) {
        return Err(Error::NumericalCollapse(format!(
            "focusing constants out of range: k_delta = {k_delta}, kappa = {kappa}"
        )));
    }
    Ok(FocusingReport {
        t_focus,
        space,
        k,
        k_delta,
        kappa,
        c,
        d,
        c_shifted,
        d_shifted,
        irreducibility,
    })
}

/// The two admissible outcomes for a nonzero cone vector at the focusing time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Dichotomy<T> {
    Dies,
    /// Smallest component of `z` on `[T-1, T]`.
    StrictlyPositive(T),
}

fn check_cone_input<T: Real>(u: &Segment<T>, space: SpaceNorm) -> Result<T> {
    if !u.is_nonnegative() {
        return Err(Error::InvalidInput("vector is not in the cone".into()));
    }
    let nu = norm(u, space);
    if !(nu > T::zero()) {
        return Err(Error::InvalidInput("vector is zero".into()));
    }
    Ok(nu)
}

/// Evolves `u` to the focusing time and classifies the result.
///
/// A result that is neither numerically zero nor strictly positive is an
/// invariant violation, never a third outcome.
pub fn dichotomy_test<T: Real>(
    flow: &Semiflow<T>,
    omega: &DriverPoint<T>,
    u: &Segment<T>,
    t_focus: usize,
    space: SpaceNorm,
) -> Result<Dichotomy<T>> {
    let nu = check_cone_input(u, space)?;
    let v = flow.apply(omega, T::from_count(t_focus), u, space)?;
    let threshold = T::lit(ZERO_THRESHOLD) * nu;
    if norm(&v, space) <= threshold {
        return Ok(Dichotomy::Dies);
    }
    let margin = v.min_entry();
    if margin > threshold {
        Ok(Dichotomy::StrictlyPositive(margin))
    } else {
        Err(Error::InvariantViolation(format!(
            "nonzero cone image with minimum component {margin} at the focusing time"
        )))
    }
}

/// Result of [`focusing_sandwich_check`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichResult<T> {
    pub ok: bool,
    /// `β(ω, u)` in the convention of the report's space.
    pub beta: T,
    /// `‖U(1)u‖_C k_δ`: the componentwise lower bound.
    pub lower: T,
    /// `κ ‖U(1)u‖_C k_δ`: the componentwise upper bound.
    pub upper: T,
    pub min_component: T,
    pub max_component: T,
}

/// Checks `β e <= U(T) u <= κ β e` at every grid node.
///
/// For product spaces `e = (1/(2√N))(1, 𝟙)` and `β = 2√N ‖U(1)u‖_C k_δ`;
/// otherwise `e` is the constant unit function and `β = ‖U(1)u‖_C k_δ`.
/// Both describe the same componentwise bounds.
pub fn focusing_sandwich_check<T: Real>(
    flow: &Semiflow<T>,
    omega: &DriverPoint<T>,
    u: &Segment<T>,
    report: &FocusingReport<T>,
) -> Result<SandwichResult<T>> {
    let space = report.space;
    let nu = check_cone_input(u, space)?;
    let tf = report.t_focus_real();
    grid_steps(tf, flow.resolution())?;
    let traj = flow.simulate(omega, tf, u, space)?;
    let one = traj.seg_at(T::one())?;
    let end = traj.seg_at(tf)?;
    if norm(&end, space) <= T::lit(ZERO_THRESHOLD) * nu {
        return Err(Error::KernelVector);
    }
    let base = norm(&one, SpaceNorm::C) * report.k_delta;
    let lower = base;
    let upper = report.kappa * base;
    let min_component = end.min_entry();
    let max_component = end.max_entry();
    let beta = if space.is_l_type() {
        T::lit(2.0) * T::from_count(flow.dim()).sqrt() * base
    } else {
        base
    };
    Ok(SandwichResult {
        ok: min_component >= lower && max_component <= upper,
        beta,
        lower,
        upper,
        min_component,
        max_component,
    })
}
