//! Segments, norms and the method-of-steps solution semiflow of
//! `z'(t) = A(θ_tω) z(t) + B(θ_tω) z(t-1)`.
//!
//! Everything lives on the uniform grid `s = -1 + j/m`. A solution is stored
//! as one flat path of nodes at times `-1, -1+h, ..., t`; the node at time 0
//! holds the head `u₁`, so an `L`-type datum `(u₁, u₂)` and a continuous one
//! are evolved by the same code. The value `u₂(0)` is a single point of an
//! `L_p` function and never enters the dynamics.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::driver::{DriverPoint, Params};
use crate::error::{Error, Result};
use crate::linalg::{euclid, Mat};
use crate::scalar::Real;

/// Relative threshold below which a segment counts as zero.
pub const ZERO_THRESHOLD: f64 = 1e-12;

/// Default cap on the size of a discretized operator.
pub const DEFAULT_OPERATOR_CAP: usize = 4096;

/// Which Banach-space norm interprets a [`Segment`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", content = "p")]
pub enum SpaceNorm {
    /// Sup norm on continuous functions.
    C,
    /// `‖u₁‖ + ‖u₂‖_p` on `ℝ^N × L_p`, `1 < p < ∞`.
    Lp(f64),
    /// The `p = 1` product space.
    L1Hat,
    /// `‖u‖_C + ‖u'‖_1`; not monotone on the cone.
    Ac,
}

impl SpaceNorm {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SpaceNorm::Lp(p) if !(p > 1.0 && p.is_finite()) => Err(Error::InvalidInput(format!(
                "L_p space needs 1 < p < inf, got p = {p}"
            ))),
            _ => Ok(()),
        }
    }

    /// Product-type spaces carry a head decoupled from `u₂(0)`.
    pub fn is_l_type(&self) -> bool {
        matches!(self, SpaceNorm::Lp(_) | SpaceNorm::L1Hat)
    }

    /// `p` of the `L` factor (1 for `L̂`); `None` for continuous spaces.
    pub fn exponent(&self) -> Option<f64> {
        match *self {
            SpaceNorm::Lp(p) => Some(p),
            SpaceNorm::L1Hat => Some(1.0),
            _ => None,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            SpaceNorm::C => "C".into(),
            SpaceNorm::Lp(p) => format!("L{p}"),
            SpaceNorm::L1Hat => "L1".into(),
            SpaceNorm::Ac => "AC".into(),
        }
    }
}

impl std::fmt::Display for SpaceNorm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

/// A history on `[-1, 0]` sampled at `s_j = -1 + j/m`, plus the head `u₁`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment<T> {
    n: usize,
    m: usize,
    head: Vec<T>,
    /// Row-major `(m+1) × N`.
    values: Vec<T>,
}

impl<T: Real> Segment<T> {
    pub fn new(n: usize, m: usize, head: Vec<T>, values: Vec<T>) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::InvalidInput("segment needs N >= 1 and m >= 1".into()));
        }
        if head.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: head.len(),
            });
        }
        if values.len() != (m + 1) * n {
            return Err(Error::DimensionMismatch {
                expected: (m + 1) * n,
                found: values.len(),
            });
        }
        if head.iter().chain(&values).any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("segment has non-finite entries".into()));
        }
        Ok(Self { n, m, head, values })
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            head: vec![T::zero(); n],
            values: vec![T::zero(); (m + 1) * n],
        }
    }

    /// The constant function `c` (continuous type).
    pub fn constant(m: usize, c: &[T]) -> Self {
        let n = c.len();
        Self {
            n,
            m,
            head: c.to_vec(),
            values: c.iter().copied().cycle().take((m + 1) * n).collect(),
        }
    }

    /// Continuous segment sampled from `f(s)`, head `f(0)`.
    pub fn from_fn<F: Fn(T) -> Vec<T>>(n: usize, m: usize, f: F) -> Result<Self> {
        let mut values = Vec::with_capacity((m + 1) * n);
        for j in 0..=m {
            let v = f(grid_time::<T>(j, m) - T::one());
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: v.len(),
                });
            }
            values.extend(v);
        }
        let head = values[m * n..].to_vec();
        Self::new(n, m, head, values)
    }

    /// `L`-type element `(u₁, u₂)` with `u₂` sampled from `f`.
    pub fn from_parts<F: Fn(T) -> Vec<T>>(head: Vec<T>, m: usize, f: F) -> Result<Self> {
        let n = head.len();
        let mut seg = Self::from_fn(n, m, f)?;
        seg.head = head;
        Self::new(n, m, seg.head, seg.values)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn resolution(&self) -> usize {
        self.m
    }

    pub fn head(&self) -> &[T] {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut [T] {
        &mut self.head
    }

    /// Sample at node `j`, i.e. `u(-1 + j/m)`.
    pub fn value(&self, j: usize) -> &[T] {
        &self.values[j * self.n..(j + 1) * self.n]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    /// Node times `s_j`.
    pub fn grid(&self) -> Vec<T> {
        (0..=self.m)
            .map(|j| grid_time::<T>(j, self.m) - T::one())
            .collect()
    }

    /// Whether `head == u(0)` to relative accuracy `1e-12`.
    pub fn is_continuous(&self) -> bool {
        let last = self.value(self.m);
        let scale = euclid(&self.head).max(euclid(last)).max(T::min_positive_value());
        let diff: Vec<T> = self.head.iter().zip(last).map(|(a, b)| *a - *b).collect();
        euclid(&diff) <= T::lit(1e-12) * scale
    }

    /// All samples and the head are `>= 0`.
    pub fn is_nonnegative(&self) -> bool {
        self.head.iter().chain(&self.values).all(|&x| x >= T::zero())
    }

    /// Smallest entry over the head and all samples.
    pub fn min_entry(&self) -> T {
        self.head
            .iter()
            .chain(&self.values)
            .fold(T::infinity(), |a, &b| a.min(b))
    }

    pub fn max_entry(&self) -> T {
        self.head
            .iter()
            .chain(&self.values)
            .fold(T::neg_infinity(), |a, &b| a.max(b))
    }

    pub fn is_finite(&self) -> bool {
        self.head.iter().chain(&self.values).all(|x| x.is_finite())
    }

    pub fn scaled(&self, s: T) -> Self {
        let mut out = self.clone();
        out.head.iter_mut().chain(out.values.iter_mut()).for_each(|x| *x *= s);
        out
    }

    /// `alpha * self + beta * other`.
    pub fn combine(&self, alpha: T, other: &Self, beta: T) -> Result<Self> {
        self.check_shape(other)?;
        let mix = |a: &[T], b: &[T]| a.iter().zip(b).map(|(&x, &y)| alpha * x + beta * y).collect();
        Ok(Self {
            n: self.n,
            m: self.m,
            head: mix(&self.head, &other.head),
            values: mix(&self.values, &other.values),
        })
    }

    pub fn check_shape(&self, other: &Self) -> Result<()> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: other.n,
            });
        }
        if self.m != other.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                found: other.m,
            });
        }
        Ok(())
    }

    /// Flat vector `[head, values]` of length `N(m+1) + N`.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(flat_dim(self.n, self.m));
        out.extend_from_slice(&self.head);
        out.extend_from_slice(&self.values);
        out
    }

    pub fn from_flat(n: usize, m: usize, flat: &[T]) -> Result<Self> {
        if flat.len() != flat_dim(n, m) {
            return Err(Error::DimensionMismatch {
                expected: flat_dim(n, m),
                found: flat.len(),
            });
        }
        Self::new(n, m, flat[..n].to_vec(), flat[n..].to_vec())
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.head
            .iter()
            .chain(&self.values)
            .zip(other.head.iter().chain(&other.values))
            .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()))
    }

    /// CSV text: a `# head,...` line, a `s,z_1..z_N` header, then one row per node.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("# head");
        for h in &self.head {
            let _ = write!(out, ",{}", fmt17(*h));
        }
        out.push_str("\ns");
        for i in 1..=self.n {
            let _ = write!(out, ",z_{i}");
        }
        out.push('\n');
        for (j, s) in self.grid().into_iter().enumerate() {
            out.push_str(&fmt17(s));
            for x in self.value(j) {
                let _ = write!(out, ",{}", fmt17(*x));
            }
            out.push('\n');
        }
        out
    }

    /// Inverse of [`Segment::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |what: &str| Error::InvalidInput(format!("segment csv: {what}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let head_line = lines.next().ok_or_else(|| bad("empty input"))?;
        let head_fields = head_line
            .strip_prefix("# head")
            .ok_or_else(|| bad("missing head line"))?;
        let parse = |s: &str| -> Result<T> {
            s.trim()
                .parse::<f64>()
                .map(T::lit)
                .map_err(|_| bad(&format!("cannot parse number {s:?}")))
        };
        let head = head_fields
            .split(',')
            .skip(1)
            .map(parse)
            .collect::<Result<Vec<_>>>()?;
        let n = head.len();
        let header = lines.next().ok_or_else(|| bad("missing column header"))?;
        if header.split(',').count() != n + 1 {
            return Err(bad("column count does not match head"));
        }
        let mut values = Vec::new();
        let mut rows = 0usize;
        for line in lines {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != n + 1 {
                return Err(bad("ragged row"));
            }
            for f in &fields[1..] {
                values.push(parse(f)?);
            }
            rows += 1;
        }
        if rows < 2 {
            return Err(bad("need at least two rows"));
        }
        Self::new(n, rows - 1, head, values)
    }
}

fn fmt17<T: Real>(x: T) -> String {
    format!("{:.16e}", x.to_f64_lossy())
}

/// `j / m` without accumulated rounding.
#[inline]
pub(crate) fn grid_time<T: Real>(j: usize, m: usize) -> T {
    T::from_count(j) / T::from_count(m)
}

/// Length of [`Segment::flatten`].
pub fn flat_dim(n: usize, m: usize) -> usize {
    n * (m + 1) + n
}

/// Diagonal of the grid inner product on flattened segments: unit weight on
/// the head, trapezoid weights on the samples.
pub fn grid_weights<T: Real>(n: usize, m: usize) -> Vec<T> {
    let h = T::one() / T::from_count(m);
    let mut w = vec![T::one(); n];
    for j in 0..=m {
        let wj = if j == 0 || j == m { h * T::lit(0.5) } else { h };
        w.extend(std::iter::repeat(wj).take(n));
    }
    w
}

/// Norm of `u` in `space`.
pub fn norm<T: Real>(u: &Segment<T>, space: SpaceNorm) -> T {
    let m = u.m;
    let sup = || {
        (0..=m)
            .map(|j| euclid(u.value(j)))
            .fold(euclid(&u.head), T::max)
    };
    match space {
        SpaceNorm::C => sup(),
        SpaceNorm::Lp(p) => euclid(&u.head) + lp_part(u, T::lit(p)),
        SpaceNorm::L1Hat => euclid(&u.head) + lp_part(u, T::one()),
        SpaceNorm::Ac => {
            let variation: T = (0..m)
                .map(|j| {
                    let d: Vec<T> = u
                        .value(j + 1)
                        .iter()
                        .zip(u.value(j))
                        .map(|(a, b)| *a - *b)
                        .collect();
                    euclid(&d)
                })
                .sum();
            sup() + variation
        }
    }
}

fn lp_part<T: Real>(u: &Segment<T>, p: T) -> T {
    let h = T::one() / T::from_count(u.m);
    let mut acc = T::zero();
    for j in 0..=u.m {
        let w = if j == 0 || j == u.m { h * T::lit(0.5) } else { h };
        acc += w * euclid(u.value(j)).powf(p);
    }
    acc.powf(p.recip())
}

/// The embedding `J u = (u(0), u)` of a continuous segment into `L`.
///
/// The representation is unchanged; only the interpretation moves from `C` to `L`.
pub fn embed_j<T: Real>(u: &Segment<T>) -> Result<Segment<T>> {
    if !u.is_continuous() {
        return Err(Error::SpaceMismatch("C".into()));
    }
    let mut out = u.clone();
    out.head = u.value(u.m).to_vec();
    Ok(out)
}

/// Number of grid steps in `t`, rejecting negative or misaligned times.
pub fn grid_steps<T: Real>(t: T, m: usize) -> Result<usize> {
    let tf = t.to_f64_lossy();
    if !(tf >= 0.0) || !tf.is_finite() {
        return Err(Error::InvalidTime(tf));
    }
    let x = tf * m as f64;
    let k = x.round();
    if (x - k).abs() > 1e-9 * x.max(1.0) {
        return Err(Error::NotGridAligned { t: tf, m });
    }
    Ok(k as usize)
}

#[derive(Clone, Debug)]
struct StateProps<T> {
    e: Mat<T>,
    b: Mat<T>,
    eb: Mat<T>,
}

#[derive(Clone, Debug)]
struct SubStep<T> {
    theta0: T,
    theta1: T,
    half_len: T,
    e: Mat<T>,
    b: Mat<T>,
    eb: Mat<T>,
}

#[derive(Clone, Debug)]
enum StepPlan<T> {
    /// Whole grid cell inside one driver state.
    Cached(usize),
    /// A driver switch inside the grid cell.
    Split(Vec<SubStep<T>>),
    /// Smooth coefficients at the start, midpoint and end of the cell.
    Smooth([Mat<T>; 6]),
}

/// Precomputed coefficients for `steps` grid cells starting at local time 0.
#[derive(Clone, Debug)]
pub struct StepSchedule<T> {
    plans: Vec<StepPlan<T>>,
}

impl<T> StepSchedule<T> {
    pub fn steps(&self) -> usize {
        self.plans.len()
    }

    /// Driver state per step when no step straddles a switch.
    pub fn state_sequence(&self) -> Option<Vec<usize>> {
        self.plans
            .iter()
            .map(|p| match p {
                StepPlan::Cached(s) => Some(*s),
                _ => None,
            })
            .collect()
    }
}

/// Solution operators `U_ω(t)` on a grid of resolution `m`.
///
/// Holds the per-state exponentials for one driver family; any shift of the
/// driver it was built from can be passed to the methods.
#[derive(Clone, Debug)]
pub struct Semiflow<T> {
    n: usize,
    m: usize,
    h: T,
    params: Arc<Params<T>>,
    props: Vec<StateProps<T>>,
}

impl<T: Real> Semiflow<T> {
    pub fn new(omega: &DriverPoint<T>, m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidInput(format!("grid resolution m = {m} < 2")));
        }
        let h = T::one() / T::from_count(m);
        let props = omega
            .states()
            .unwrap_or(&[])
            .iter()
            .map(|s| {
                let e = s.a.scale(h).expm();
                let eb = e.matmul(&s.b);
                StateProps {
                    e,
                    b: s.b.clone(),
                    eb,
                }
            })
            .collect();
        Ok(Self {
            n: omega.dim(),
            m,
            h,
            params: Arc::clone(omega.params()),
            props,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn resolution(&self) -> usize {
        self.m
    }

    /// Grid step `1/m`.
    pub fn step(&self) -> T {
        self.h
    }

    fn check_driver(&self, omega: &DriverPoint<T>) -> Result<()> {
        if Arc::ptr_eq(&self.params, omega.params()) {
            Ok(())
        } else {
            Err(Error::InvalidInput(
                "driver does not belong to the family this semiflow was built for".into(),
            ))
        }
    }

    fn check_segment(&self, u: &Segment<T>, space: SpaceNorm) -> Result<()> {
        if u.n != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: u.n,
            });
        }
        if u.m != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                found: u.m,
            });
        }
        if !space.is_l_type() && !u.is_continuous() {
            return Err(Error::SpaceMismatch(space.label()));
        }
        Ok(())
    }

    /// Coefficient plan for the first `steps` grid cells of `omega`.
    pub fn schedule(&self, omega: &DriverPoint<T>, steps: usize) -> Result<StepSchedule<T>> {
        self.check_driver(omega)?;
        let m = self.m;
        let h = self.h;
        let half = T::lit(0.5);
        let plans = (0..steps)
            .map(|i| {
                let t0 = grid_time::<T>(i, m);
                let t1 = grid_time::<T>(i + 1, m);
                if omega.is_switching() {
                    let pieces = omega.pieces(t0, t1);
                    if pieces.len() == 1 {
                        return StepPlan::Cached(pieces[0].state);
                    }
                    let states = omega.states().expect("switching driver");
                    StepPlan::Split(
                        pieces
                            .iter()
                            .map(|p| {
                                let len = p.end - p.start;
                                let st = &states[p.state];
                                let e = st.a.scale(len).expm();
                                SubStep {
                                    theta0: (p.start - t0) / h,
                                    theta1: (p.end - t0) / h,
                                    half_len: len * half,
                                    eb: e.matmul(&st.b),
                                    e,
                                    b: st.b.clone(),
                                }
                            })
                            .collect(),
                    )
                } else {
                    let s0 = omega.sample(t0);
                    let sm = omega.sample(t0 + h * half);
                    let s1 = omega.sample(t1);
                    StepPlan::Smooth([s0.a, s0.b, sm.a, sm.b, s1.a, s1.b])
                }
            })
            .collect();
        Ok(StepSchedule { plans })
    }

    /// Lays out the initial path: nodes `0..m` from `u₂`, node `m` = `u₁`.
    fn initial_path(&self, u: &Segment<T>, steps: usize) -> Vec<T> {
        let n = self.n;
        let mut path = Vec::with_capacity((self.m + 1 + steps) * n);
        path.extend_from_slice(&u.values[..self.m * n]);
        path.extend_from_slice(&u.head);
        path.resize((self.m + 1 + steps) * n, T::zero());
        path
    }

    /// Fills path nodes `m+1 ..= m+steps` from the schedule.
    fn run(&self, schedule: &StepSchedule<T>, path: &mut [T]) -> Result<()> {
        let n = self.n;
        let m = self.m;
        let h = self.h;
        let half = T::lit(0.5);
        let mut tmp = vec![T::zero(); n];
        let mut ya = vec![T::zero(); n];
        let mut yb = vec![T::zero(); n];
        let mut stage = vec![T::zero(); n];
        let mut k = [vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]];
        for (step, plan) in schedule.plans.iter().enumerate() {
            let i = m + step;
            let (done, rest) = path.split_at_mut((i + 1) * n);
            let z = &done[i * n..];
            let y0 = &done[(i - m) * n..(i - m + 1) * n];
            let y1 = &done[(i - m + 1) * n..(i - m + 2) * n];
            let out = &mut rest[..n];
            match plan {
                StepPlan::Cached(s) => {
                    let p = &self.props[*s];
                    p.e.matvec_into(z, out);
                    p.eb.matvec_acc(h * half, y0, out);
                    p.b.matvec_acc(h * half, y1, out);
                }
                StepPlan::Split(subs) => {
                    tmp.copy_from_slice(z);
                    for sub in subs {
                        for c in 0..n {
                            ya[c] = y0[c] + sub.theta0 * (y1[c] - y0[c]);
                            yb[c] = y0[c] + sub.theta1 * (y1[c] - y0[c]);
                        }
                        sub.e.matvec_into(&tmp, out);
                        sub.eb.matvec_acc(sub.half_len, &ya, out);
                        sub.b.matvec_acc(sub.half_len, &yb, out);
                        tmp.copy_from_slice(out);
                    }
                }
                StepPlan::Smooth([a0, b0, am, bm, a1, b1]) => {
                    for c in 0..n {
                        ya[c] = (y0[c] + y1[c]) * half;
                    }
                    let field = |a: &Mat<T>, b: &Mat<T>, x: &[T], y: &[T], o: &mut [T]| {
                        a.matvec_into(x, o);
                        b.matvec_acc(T::one(), y, o);
                    };
                    field(a0, b0, z, y0, &mut k[0]);
                    for c in 0..n {
                        stage[c] = z[c] + h * half * k[0][c];
                    }
                    field(am, bm, &stage, &ya, &mut k[1]);
                    for c in 0..n {
                        stage[c] = z[c] + h * half * k[1][c];
                    }
                    field(am, bm, &stage, &ya, &mut k[2]);
                    for c in 0..n {
                        stage[c] = z[c] + h * k[2][c];
                    }
                    field(a1, b1, &stage, y1, &mut k[3]);
                    let sixth = h / T::lit(6.0);
                    for c in 0..n {
                        out[c] = z[c]
                            + sixth * (k[0][c] + T::lit(2.0) * (k[1][c] + k[2][c]) + k[3][c]);
                    }
                }
            }
            if out.iter().any(|x| !x.is_finite()) {
                return Err(Error::IntegrationFailure {
                    t: grid_time::<f64>(step + 1, m),
                });
            }
        }
        Ok(())
    }

    fn segment_from_path(&self, path: &[T], end_node: usize) -> Segment<T> {
        let n = self.n;
        let start = end_node - self.m;
        Segment {
            n,
            m: self.m,
            head: path[end_node * n..(end_node + 1) * n].to_vec(),
            values: path[start * n..(end_node + 1) * n].to_vec(),
        }
    }

    /// `U_ω(t) u` with a precomputed schedule.
    pub fn apply_scheduled(&self, schedule: &StepSchedule<T>, u: &Segment<T>) -> Result<Segment<T>> {
        let steps = schedule.steps();
        if steps == 0 {
            return Ok(u.clone());
        }
        let mut path = self.initial_path(u, steps);
        self.run(schedule, &mut path)?;
        Ok(self.segment_from_path(&path, self.m + steps))
    }

    /// `U_ω(t) u`; for `t >= 1` the result is continuous whatever the input space.
    pub fn apply(
        &self,
        omega: &DriverPoint<T>,
        t: T,
        u: &Segment<T>,
        space: SpaceNorm,
    ) -> Result<Segment<T>> {
        self.check_segment(u, space)?;
        let steps = grid_steps(t, self.m)?;
        let schedule = self.schedule(omega, steps)?;
        self.apply_scheduled(&schedule, u)
    }

    /// One delay interval: `U_ω(1) u`.
    pub fn step_unit(&self, omega: &DriverPoint<T>, u: &Segment<T>) -> Result<Segment<T>> {
        let space = if u.is_continuous() { SpaceNorm::C } else { SpaceNorm::L1Hat };
        self.apply(omega, T::one(), u, space)
    }

    /// Full solution path from `u` up to time `t`.
    pub fn simulate(
        &self,
        omega: &DriverPoint<T>,
        t: T,
        u: &Segment<T>,
        space: SpaceNorm,
    ) -> Result<Trajectory<T>> {
        self.check_segment(u, space)?;
        let steps = grid_steps(t, self.m)?;
        let schedule = self.schedule(omega, steps)?;
        let mut path = self.initial_path(u, steps);
        self.run(&schedule, &mut path)?;
        Ok(Trajectory {
            omega: omega.clone(),
            n: self.n,
            m: self.m,
            steps,
            path,
            initial: u.clone(),
        })
    }

    /// Matrix of `U_ω(t)` acting on flattened segments.
    pub fn discretize(&self, omega: &DriverPoint<T>, t: T, cap: usize) -> Result<Mat<T>> {
        let steps = grid_steps(t, self.m)?;
        let schedule = self.schedule(omega, steps)?;
        self.discretize_scheduled(&schedule, cap)
    }

    pub fn discretize_scheduled(&self, schedule: &StepSchedule<T>, cap: usize) -> Result<Mat<T>> {
        let d = flat_dim(self.n, self.m);
        if d > cap {
            return Err(Error::ResourceGuard(format!(
                "discretized operator dimension {d} exceeds cap {cap}"
            )));
        }
        let mut out = Mat::zeros(d, d);
        let mut basis = vec![T::zero(); d];
        for j in 0..d {
            basis[j] = T::one();
            let u = Segment::from_flat(self.n, self.m, &basis)?;
            let v = self.apply_scheduled(schedule, &u)?;
            out.set_column(j, &v.flatten());
            basis[j] = T::zero();
        }
        Ok(out)
    }

    /// Fundamental matrix of `z' = A(θ_tω) z` from `t1` to `t2`.
    pub fn fundamental_matrix(&self, omega: &DriverPoint<T>, t1: T, t2: T) -> Result<Mat<T>> {
        self.check_driver(omega)?;
        fundamental_matrix(omega, t1, t2)
    }
}

/// Fundamental matrix `U⁰(t2, t1)` of `z' = A(θ_tω) z`.
///
/// Exact products of exponentials for switching drivers, RK4 with step at
/// most `1e-3` for smooth ones.
pub fn fundamental_matrix<T: Real>(omega: &DriverPoint<T>, t1: T, t2: T) -> Result<Mat<T>> {
    if !(t1 <= t2) {
        return Err(Error::InvalidInput(format!(
            "fundamental matrix needs t1 <= t2, got {t1} > {t2}"
        )));
    }
    let n = omega.dim();
    if t1 == t2 {
        return Ok(Mat::identity(n));
    }
    if let Some(states) = omega.states() {
        let mut u = Mat::identity(n);
        for p in omega.pieces(t1, t2) {
            u = states[p.state].a.scale(p.end - p.start).expm().matmul(&u);
        }
        return Ok(u);
    }
    let steps = ((t2 - t1) * T::lit(1000.0)).ceil().to_usize().unwrap_or(1).max(1);
    let h = (t2 - t1) / T::from_count(steps);
    let half = T::lit(0.5);
    let mut u = Mat::identity(n);
    for i in 0..steps {
        let t = t1 + h * T::from_count(i);
        let a0 = omega.sample(t).a;
        let am = omega.sample(t + h * half).a;
        let a1 = omega.sample(t + h).a;
        let k1 = a0.matmul(&u);
        let mut s = u.clone();
        s.add_scaled(h * half, &k1);
        let k2 = am.matmul(&s);
        let mut s = u.clone();
        s.add_scaled(h * half, &k2);
        let k3 = am.matmul(&s);
        let mut s = u.clone();
        s.add_scaled(h, &k3);
        let k4 = a1.matmul(&s);
        let sixth = h / T::lit(6.0);
        u.add_scaled(sixth, &k1);
        u.add_scaled(sixth * T::lit(2.0), &k2);
        u.add_scaled(sixth * T::lit(2.0), &k3);
        u.add_scaled(sixth, &k4);
    }
    if !u.is_finite() {
        return Err(Error::IntegrationFailure { t: t2.to_f64_lossy() });
    }
    Ok(u)
}

/// `U_ω(t) u` on the grid of `u`.
pub fn apply_cocycle<T: Real>(
    omega: &DriverPoint<T>,
    t: T,
    u: &Segment<T>,
    space: SpaceNorm,
) -> Result<Segment<T>> {
    Semiflow::new(omega, u.m)?.apply(omega, t, u, space)
}

/// `U_ω(1) u`.
pub fn step_unit<T: Real>(omega: &DriverPoint<T>, u: &Segment<T>) -> Result<Segment<T>> {
    Semiflow::new(omega, u.m)?.step_unit(omega, u)
}

/// Matrix of `U_ω(t)` on flattened segments of resolution `m`.
///
/// The grid dynamics do not depend on the norm, so one matrix serves every space.
pub fn discretize_operator<T: Real>(
    omega: &DriverPoint<T>,
    t: T,
    m: usize,
    cap: usize,
) -> Result<Mat<T>> {
    Semiflow::new(omega, m)?.discretize(omega, t, cap)
}

/// A computed solution `z(t, ω, u)` on the grid `-1, -1+h, ..., t_end`.
#[derive(Clone, Debug)]
pub struct Trajectory<T> {
    pub omega: DriverPoint<T>,
    n: usize,
    m: usize,
    steps: usize,
    path: Vec<T>,
    initial: Segment<T>,
}

impl<T: Real> Trajectory<T> {
    /// Times of the forward nodes `0, h, ..., t_end`.
    pub fn t_grid(&self) -> Vec<T> {
        (0..=self.steps).map(|i| grid_time(i, self.m)).collect()
    }

    pub fn end_time(&self) -> T {
        grid_time(self.steps, self.m)
    }

    /// `z(i h)` for `i = 0..=steps`.
    pub fn z(&self, i: usize) -> &[T] {
        let node = self.m + i;
        &self.path[node * self.n..(node + 1) * self.n]
    }

    /// The segment `z_t`; `t` must be a grid time in `[0, t_end]`.
    pub fn seg_at(&self, t: T) -> Result<Segment<T>> {
        let i = grid_steps(t, self.m)?;
        if i > self.steps {
            return Err(Error::InvalidTime(t.to_f64_lossy()));
        }
        if i == 0 {
            return Ok(self.initial.clone());
        }
        let n = self.n;
        let end = self.m + i;
        Ok(Segment {
            n,
            m: self.m,
            head: self.path[end * n..(end + 1) * n].to_vec(),
            values: self.path[i * n..(end + 1) * n].to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::{make_constant_driver, make_iid_switching_driver, SwitchState};

    fn mat(d: &[f64]) -> Mat<f64> {
        Mat::square_f64(2, d).unwrap()
    }

    fn delay_identity() -> DriverPoint<f64> {
        make_constant_driver(Mat::zeros(2, 2), Mat::identity(2)).unwrap()
    }

    #[test]
    fn zero_field_keeps_head() {
        let w = make_constant_driver(Mat::zeros(2, 2), Mat::zeros(2, 2)).unwrap();
        let u = Segment::from_fn(2, 20, |s: f64| vec![s.sin(), 1.0 + s]).unwrap();
        let v = step_unit(&w, &u).unwrap();
        for j in 0..=20 {
            assert_eq!(v.value(j), u.head());
        }
    }

    #[test]
    fn pure_delay_on_constant_history() {
        let u = Segment::constant(50, &[1.0, 1.0]);
        let v = step_unit(&delay_identity(), &u).unwrap();
        for j in 0..=50 {
            let expect = 1.0 + j as f64 / 50.0;
            for x in v.value(j) {
                assert!((x - expect).abs() < 1e-14);
            }
        }
        assert_eq!(v.head(), v.value(50));
    }

    #[test]
    fn zero_time_is_identity() {
        let w = delay_identity();
        let u = Segment::from_parts(vec![0.3, 0.1], 10, |s| vec![s, -s]).unwrap();
        let v = apply_cocycle(&w, 0.0, &u, SpaceNorm::Lp(2.0)).unwrap();
        assert_eq!(u, v);
    }

    #[test]
    fn l_kernel_vector_dies_without_feedback() {
        let a = mat(&[-1.0, 1.0, 1.0, -1.0]);
        let w = make_constant_driver(a, Mat::zeros(2, 2)).unwrap();
        let u = Segment::from_parts(vec![0.0, 0.0], 20, |s| vec![1.0 + s, 2.0]).unwrap();
        let v = apply_cocycle(&w, 1.0, &u, SpaceNorm::L1Hat).unwrap();
        assert_eq!(norm(&v, SpaceNorm::L1Hat), 0.0);
    }

    #[test]
    fn c_space_rejects_discontinuous_input() {
        let u = Segment::from_parts(vec![5.0, 0.0], 10, |_| vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            apply_cocycle(&delay_identity(), 1.0, &u, SpaceNorm::C),
            Err(Error::SpaceMismatch(_))
        ));
    }

    #[test]
    fn rejects_misaligned_and_negative_time() {
        let u = Segment::constant(10, &[1.0, 1.0]);
        let w = delay_identity();
        assert!(matches!(
            apply_cocycle(&w, 0.05, &u, SpaceNorm::C),
            Err(Error::NotGridAligned { .. })
        ));
        assert!(matches!(
            apply_cocycle(&w, -1.0, &u, SpaceNorm::C),
            Err(Error::InvalidTime(_))
        ));
    }

    #[test]
    fn smoothing_after_one_unit() {
        let w = delay_identity();
        let u = Segment::from_parts(vec![3.0, -1.0], 16, |s| vec![s * s, 1.0]).unwrap();
        for t in [1.0, 1.5, 2.0] {
            let v = apply_cocycle(&w, t, &u, SpaceNorm::Lp(2.0)).unwrap();
            assert!(v.is_continuous());
        }
    }

    #[test]
    fn diagonal_fundamental_matrix() {
        let w = make_constant_driver(mat(&[-1.0, 0.0, 0.0, -1.0]), Mat::zeros(2, 2)).unwrap();
        let u = fundamental_matrix(&w, 0.0, 1.0).unwrap();
        let e = (-1.0f64).exp();
        assert!((u[(0, 0)] - e).abs() < 1e-14 && (u[(1, 1)] - e).abs() < 1e-14);
        assert!(u[(0, 1)].abs() < 1e-15);
        let zero = make_constant_driver(Mat::zeros(2, 2), Mat::zeros(2, 2)).unwrap();
        assert_eq!(fundamental_matrix(&zero, 0.0, 3.0).unwrap(), Mat::identity(2));
        assert!(fundamental_matrix(&zero, 1.0, 0.0).is_err());
    }

    #[test]
    fn piecewise_fundamental_matrix_matches_rk4() {
        let states = vec![
            SwitchState {
                a: mat(&[-1.0, 0.5, 0.3, -0.5]),
                b: Mat::zeros(2, 2),
            },
            SwitchState {
                a: mat(&[-0.2, 0.1, 0.8, -1.2]),
                b: Mat::zeros(2, 2),
            },
        ];
        let w = make_iid_switching_driver(7, states, 1.0).unwrap();
        let exact = fundamental_matrix(&w, 0.0, 2.0).unwrap();
        // independent oracle: fixed-step RK4 over the sampled field
        let steps = 20_000;
        let h = 2.0 / steps as f64;
        let mut y = Mat::<f64>::identity(2);
        for i in 0..steps {
            let a = w.sample(i as f64 * h + 0.5 * h).a;
            let k1 = a.matmul(&y);
            let k2 = a.matmul(&y.add(&k1.scale(h / 2.0)));
            let k3 = a.matmul(&y.add(&k2.scale(h / 2.0)));
            let k4 = a.matmul(&y.add(&k3.scale(h)));
            y = y.add(&k1.add(&k2.scale(2.0)).add(&k3.scale(2.0)).add(&k4).scale(h / 6.0));
        }
        for (a, b) in exact.as_slice().iter().zip(y.as_slice()) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn norms_of_simple_segments() {
        let z = Segment::<f64>::zeros(3, 10);
        for sp in [SpaceNorm::C, SpaceNorm::Lp(2.0), SpaceNorm::L1Hat, SpaceNorm::Ac] {
            assert_eq!(norm(&z, sp), 0.0);
        }
        let e1 = Segment::constant(10, &[1.0f64, 0.0, 0.0]);
        assert!((norm(&e1, SpaceNorm::C) - 1.0).abs() < 1e-15);
        assert!((norm(&e1, SpaceNorm::Lp(3.0)) - 2.0).abs() < 1e-14);
        assert!((norm(&e1, SpaceNorm::Ac) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ac_norm_is_not_monotone() {
        let eps = 1e-3;
        let k = 3.0;
        let m = 600;
        let u = Segment::from_fn(2, m, |s: f64| {
            vec![eps * (1.0 + (2.0 * std::f64::consts::PI * k * s).sin()) / 2.0, 0.0]
        })
        .unwrap();
        let v = Segment::constant(m, &[eps, 0.0]);
        assert!(u.values().iter().zip(v.values()).all(|(a, b)| a <= b));
        let nu = norm(&u, SpaceNorm::Ac);
        let nv = norm(&v, SpaceNorm::Ac);
        assert!(nu > nv);
        assert!((nu - eps * (1.0 + 2.0 * k)).abs() < 1e-3 * eps);
    }

    #[test]
    fn embedding_norms() {
        let c = Segment::constant(40, &[0.6f64, 0.8]);
        let jc = embed_j(&c).unwrap();
        assert!((norm(&jc, SpaceNorm::L1Hat) - 2.0).abs() < 1e-14);
        let ramp = Segment::from_fn(2, 400, |s: f64| vec![(s + 1.0).max(0.0), 0.0]).unwrap();
        let jr = embed_j(&ramp).unwrap();
        assert!((norm(&jr, SpaceNorm::L1Hat) - 1.5).abs() < 1e-12);
        assert_eq!(norm(&embed_j(&Segment::<f64>::zeros(2, 4)).unwrap(), SpaceNorm::Lp(2.0)), 0.0);
        let broken = Segment::from_parts(vec![1.0, 0.0], 4, |_| vec![0.0, 0.0]).unwrap();
        assert!(embed_j(&broken).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let u = Segment::from_parts(vec![0.1, 1.0 / 3.0], 7, |s: f64| vec![s.exp(), s.cos()]).unwrap();
        let back = Segment::<f64>::from_csv(&u.to_csv()).unwrap();
        assert_eq!(u, back);
        assert!(u.to_csv().lines().nth(1).unwrap() == "s,z_1,z_2");
    }

    #[test]
    fn discretized_operator_reproduces_flow() {
        let states = vec![
            SwitchState {
                a: mat(&[-1.0, 0.5, 0.3, -0.5]),
                b: mat(&[0.4, 0.2, 0.1, 0.3]),
            },
            SwitchState {
                a: mat(&[-0.2, 0.1, 0.8, -1.2]),
                b: mat(&[0.1, 0.5, 0.3, 0.2]),
            },
        ];
        let w = make_iid_switching_driver(3, states, 0.37).unwrap();
        let m = 12;
        let op = discretize_operator(&w, 1.5, m, DEFAULT_OPERATOR_CAP).unwrap();
        let u = Segment::from_parts(vec![0.2, -0.4], m, |s: f64| vec![(3.0 * s).sin(), s]).unwrap();
        let direct = apply_cocycle(&w, 1.5, &u, SpaceNorm::Lp(2.0)).unwrap().flatten();
        let via = op.matvec(&u.flatten());
        for (a, b) in direct.iter().zip(&via) {
            assert!((a - b).abs() < 1e-12);
        }
        let id = discretize_operator(&w, 0.0, m, DEFAULT_OPERATOR_CAP).unwrap();
        assert_eq!(id, Mat::identity(flat_dim(2, m)));
        assert!(matches!(
            discretize_operator(&w, 1.0, m, 10),
            Err(Error::ResourceGuard(_))
        ));
    }

    #[test]
    fn trajectory_segments_match_apply() {
        let w = delay_identity();
        let flow = Semiflow::new(&w, 20).unwrap();
        let u = Segment::from_fn(2, 20, |s: f64| vec![1.0 + s * s, 2.0]).unwrap();
        let traj = flow.simulate(&w, 3.0, &u, SpaceNorm::C).unwrap();
        assert_eq!(traj.seg_at(0.0).unwrap(), u);
        let direct = flow.apply(&w, 2.5, &u, SpaceNorm::C).unwrap();
        assert_eq!(traj.seg_at(2.5).unwrap(), direct);
        assert_eq!(traj.z(60), direct_head(&flow, &w, &u));
        assert_eq!(traj.t_grid().len(), 61);
    }

    fn direct_head(flow: &Semiflow<f64>, w: &DriverPoint<f64>, u: &Segment<f64>) -> Vec<f64> {
        flow.apply(w, 3.0, u, SpaceNorm::C).unwrap().head().to_vec()
    }

    #[test]
    fn runs_in_single_precision() {
        let w = make_constant_driver(Mat::<f32>::zeros(2, 2), Mat::identity(2)).unwrap();
        let u = Segment::constant(20, &[1.0f32, 1.0]);
        let v = step_unit(&w, &u).unwrap();
        assert!((v.head()[0] - 2.0).abs() < 1e-5);
    }
}
