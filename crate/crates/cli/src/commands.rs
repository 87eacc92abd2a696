//! One function per subcommand; each runs a single driver seed and returns
//! its artifacts without touching the file system.

use floquet_sep::cone::{
    check_cooperativity, check_irreducibility, focusing_constants, focusing_sandwich_check, FocusingReport,
};
use floquet_sep::oracle::{delay_char_roots, dense_product_oracle, perron_oracle};
use floquet_sep::spectrum::{pullback_floquet, separation_report, top_lyapunov, PullbackOptions, SeparationConfig};
use floquet_sep::{norm, Error, Segment64, Semiflow64, SpaceNorm};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{RunConfig, SchemaError};
use crate::output::{columns, exact, q, Quantity, Table};

/// Failure classes with their process exit codes.
#[derive(Debug)]
pub enum Failure {
    Schema(String),
    Contract(String),
    Numerical(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Self::Schema(_) => 1,
            Self::Contract(_) => 2,
            Self::Numerical(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Self::Schema(m) | Self::Contract(m) | Self::Numerical(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::InvalidInput(_)
            | Error::DimensionMismatch { .. }
            | Error::EmptyStates
            | Error::InvalidTime(_)
            | Error::NotGridAligned { .. }
            | Error::ResourceGuard(_) => Self::Schema(msg),
            Error::SpaceMismatch(_)
            | Error::NotIrreducible { .. }
            | Error::KernelVector
            | Error::InvariantViolation(_)
            | Error::Inconsistent { .. }
            | Error::Reducible => Self::Contract(msg),
            Error::IntegrationFailure { .. }
            | Error::NotConverged { .. }
            | Error::InsufficientSamples { .. }
            | Error::NumericalCollapse(_) => Self::Numerical(msg),
        }
    }
}

impl From<SchemaError> for Failure {
    fn from(e: SchemaError) -> Self {
        Self::Schema(e.0)
    }
}

pub enum Payload {
    Csv(Table),
    Json(Vec<u8>),
}

pub struct Artifact {
    pub stem: String,
    pub payload: Payload,
}

/// Everything one seed produced.
pub struct SeedOutcome {
    pub artifacts: Vec<Artifact>,
    /// One line for the terminal.
    pub headline: String,
    /// Exit code contribution: 0 or 2.
    pub code: u8,
}

/// A labeled numeric series inside a JSON summary.
#[derive(Serialize)]
struct Series {
    estimator: &'static str,
    t: Vec<f64>,
    values: Vec<f64>,
}

fn json<T: Serialize>(stem: String, value: &T) -> Result<Artifact, Failure> {
    let bytes = crate::output::json_bytes(value).map_err(|e| Failure::Numerical(e.to_string()))?;
    Ok(Artifact {
        stem,
        payload: Payload::Json(bytes),
    })
}

fn csv(stem: String, table: Table) -> Artifact {
    Artifact {
        stem,
        payload: Payload::Csv(table),
    }
}

struct Context {
    omega: floquet_sep::DriverPoint64,
    flow: Semiflow64,
    space: SpaceNorm,
    u0: Segment64,
}

fn context(cfg: &RunConfig, seed: u64) -> Result<Context, Failure> {
    let omega = cfg.build_driver(seed)?;
    let flow = Semiflow64::new(&omega, cfg.numerics.m)?;
    Ok(Context {
        omega,
        flow,
        space: cfg.space(),
        u0: cfg.initial_segment(),
    })
}

#[derive(Serialize)]
struct SimulateSummary {
    subcommand: &'static str,
    seed: u64,
    space: String,
    end_time: Quantity,
    final_norm: Quantity,
}

pub fn simulate(cfg: &RunConfig, seed: u64) -> Result<SeedOutcome, Failure> {
    let ctx = context(cfg, seed)?;
    let n = cfg.system.n;
    let m = cfg.numerics.m;
    let traj = ctx.flow.simulate(&ctx.omega, cfg.numerics.horizon, &ctx.u0, ctx.space)?;
    let mut table = Table::new(columns("t", "z", n));
    for j in 0..m {
        let mut row = vec![j as f64 / m as f64 - 1.0];
        row.extend_from_slice(ctx.u0.value(j));
        table.push(row);
    }
    for (i, t) in traj.t_grid().into_iter().enumerate() {
        let mut row = vec![t];
        row.extend_from_slice(traj.z(i));
        table.push(row);
    }
    let end = traj.end_time();
    let last = traj.seg_at(end)?;
    let final_norm = norm(&last, ctx.space);
    let summary = SimulateSummary {
        subcommand: "simulate",
        seed,
        space: ctx.space.label(),
        end_time: exact(end, "grid time of the last node"),
        final_norm: q(final_norm, "space norm of the final segment on the grid", 0.0),
    };
    Ok(SeedOutcome {
        headline: format!("seed {seed}: simulated to t = {end}, final {} norm {final_norm:.6e}", ctx.space.label()),
        artifacts: vec![
            csv(format!("trajectory_seed{seed}"), table),
            json(format!("simulate_seed{seed}"), &summary)?,
        ],
        code: 0,
    })
}

#[derive(Serialize)]
struct SandwichRow {
    sample: usize,
    outcome: &'static str,
    lower: Option<Quantity>,
    upper: Option<Quantity>,
    min_component: Option<Quantity>,
    max_component: Option<Quantity>,
}

#[derive(Serialize)]
struct FocusingSummary {
    t_focus: Quantity,
    k_delta: Quantity,
    kappa: Quantity,
    c: Quantity,
    d: Quantity,
}

#[derive(Serialize)]
struct AssumptionReport {
    subcommand: &'static str,
    seed: u64,
    space: String,
    satisfied: bool,
    cooperativity: floquet_sep::cone::CooperativityReport,
    irreducibility_satisfied: bool,
    /// One-based paths per start component.
    irreducibility_paths: Vec<Option<Vec<usize>>>,
    irreducibility_failing_start: Option<usize>,
    delta_values: Vec<Quantity>,
    focusing: Option<FocusingSummary>,
    focusing_error: Option<String>,
    sandwich: Vec<SandwichRow>,
}

fn focusing_summary(r: &FocusingReport<f64>) -> FocusingSummary {
    FocusingSummary {
        t_focus: exact(r.t_focus as f64, "N + (N-1) M + 1"),
        k_delta: q(r.k_delta, "product of K_j and window deltas", 0.0),
        kappa: q(r.kappa, "focusing distortion bound", 0.0),
        c: q(r.c, "sup of fundamental-matrix entries on a 64-point grid", 0.0),
        d: q(r.d, "space-dependent integral of |B|", 0.0),
    }
}

fn random_cone_vector(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Result<Segment64, Failure> {
    let values: Vec<f64> = (0..n * (m + 1))
        .map(|_| if rng.gen_bool(0.25) { 0.0 } else { rng.gen_range(0.0..1.0) })
        .collect();
    let head = values[n * m..].to_vec();
    Ok(Segment64::new(n, m, head, values)?)
}

pub fn verify_assumptions(cfg: &RunConfig, seed: u64) -> Result<SeedOutcome, Failure> {
    let ctx = context(cfg, seed)?;
    let num = &cfg.numerics;
    let coop = check_cooperativity(&ctx.omega, num.horizon)?;
    let irr = check_irreducibility(&ctx.omega, num.window, num.tolerances.delta_min)?;
    let (focusing, focusing_error) = if irr.satisfied {
        match focusing_constants(&ctx.omega, num.window, ctx.space, num.tolerances.delta_min) {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, Some("irreducibility fails; focusing constants are undefined".into()))
    };
    let mut sandwich = Vec::new();
    let mut all_ok = true;
    if let Some(report) = &focusing {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7361_6e64_7769_6368);
        for sample in 0..=num.sandwich_samples {
            let u = if sample == 0 {
                ctx.u0.clone()
            } else {
                random_cone_vector(cfg.system.n, num.m, &mut rng)?
            };
            let row = match focusing_sandwich_check(&ctx.flow, &ctx.omega, &u, report) {
                Ok(s) => {
                    all_ok &= s.ok;
                    let tol = 0.0;
                    SandwichRow {
                        sample,
                        outcome: if s.ok { "sandwiched" } else { "violated" },
                        lower: Some(q(s.lower, "|U(1)u|_C k_delta", tol)),
                        upper: Some(q(s.upper, "kappa |U(1)u|_C k_delta", tol)),
                        min_component: Some(q(s.min_component, "min of U(T)u over grid nodes", tol)),
                        max_component: Some(q(s.max_component, "max of U(T)u over grid nodes", tol)),
                    }
                }
                Err(Error::KernelVector) => SandwichRow {
                    sample,
                    outcome: "dies",
                    lower: None,
                    upper: None,
                    min_component: None,
                    max_component: None,
                },
                Err(Error::InvalidInput(_)) => continue,
                Err(e) => return Err(e.into()),
            };
            sandwich.push(row);
        }
    }
    let satisfied = coop.cooperative && irr.satisfied && focusing.is_some() && all_ok;
    let report = AssumptionReport {
        subcommand: "verify-assumptions",
        seed,
        space: ctx.space.label(),
        satisfied,
        cooperativity: coop,
        irreducibility_satisfied: irr.satisfied,
        irreducibility_paths: irr
            .paths
            .iter()
            .map(|p| p.as_ref().map(|p| p.iter().map(|j| j + 1).collect()))
            .collect(),
        irreducibility_failing_start: irr.failing_start.map(|s| s + 1),
        delta_values: irr
            .delta_values
            .iter()
            .map(|d| q(*d, "min over starts of the window edge weight, clamped to (0, 1]", 0.0))
            .collect(),
        focusing: focusing.as_ref().map(focusing_summary),
        focusing_error,
        sandwich,
    };
    Ok(SeedOutcome {
        headline: format!(
            "seed {seed}: assumptions {} (cooperative {}, irreducible {})",
            if satisfied { "satisfied" } else { "NOT satisfied" },
            report.cooperativity.cooperative,
            irr.satisfied
        ),
        artifacts: vec![json(format!("assumptions_seed{seed}"), &report)?],
        code: if satisfied { 0 } else { 2 },
    })
}

#[derive(Serialize)]
struct LyapunovSummary {
    subcommand: &'static str,
    seed: u64,
    space: String,
    lambda1: Quantity,
    stderr: Quantity,
    running: Series,
}

pub fn lyapunov(cfg: &RunConfig, seed: u64) -> Result<SeedOutcome, Failure> {
    let ctx = context(cfg, seed)?;
    let num = &cfg.numerics;
    let est = top_lyapunov(&ctx.flow, &ctx.omega, &ctx.u0, num.horizon, num.renorm, ctx.space)?;
    let mut table = Table::new(["t", "lambda1_running"]);
    for (t, l) in &est.running {
        table.push(vec![*t, *l]);
    }
    let summary = LyapunovSummary {
        subcommand: "lyapunov",
        seed,
        space: ctx.space.label(),
        lambda1: q(est.lambda1, "forward renormalized iteration, second-half mean", 3.0 * est.stderr),
        stderr: q(est.stderr, "batch means over 10 batches", 0.0),
        running: Series {
            estimator: "running mean of log growth",
            t: est.running.iter().map(|r| r.0).collect(),
            values: est.running.iter().map(|r| r.1).collect(),
        },
    };
    Ok(SeedOutcome {
        headline: format!("seed {seed}: lambda1 = {:.8} +- {:.2e}", est.lambda1, 3.0 * est.stderr),
        artifacts: vec![
            csv(format!("lyapunov_seed{seed}"), table),
            json(format!("lyapunov_seed{seed}"), &summary)?,
        ],
        code: 0,
    })
}

#[derive(Serialize)]
struct FloquetSummary {
    subcommand: &'static str,
    seed: u64,
    space: String,
    lambda1: Quantity,
    sigma_forward: Option<Quantity>,
    fit_r2: Option<Quantity>,
    residual: Quantity,
    w_head: Vec<Quantity>,
    distances: Series,
}

pub fn floquet(cfg: &RunConfig, seed: u64) -> Result<SeedOutcome, Failure> {
    let ctx = context(cfg, seed)?;
    let num = &cfg.numerics;
    let n = cfg.system.n;
    let m = num.m;
    let opts = PullbackOptions {
        step: num.renorm,
        tolerance: num.tolerances.pullback,
        ..PullbackOptions::default()
    };
    let est = pullback_floquet(&ctx.flow, &ctx.omega, num.t_back, &ctx.u0, ctx.space, &opts)?;
    let mut w_table = Table::new(columns("s", "w", n));
    for j in 0..=m {
        let mut row = vec![j as f64 / m as f64 - 1.0];
        row.extend_from_slice(est.w.value(j));
        w_table.push(row);
    }
    let mut d_table = Table::new(["t", "ln_dist"]);
    for (t, d) in est.ladder.iter().zip(&est.distances) {
        d_table.push(vec![*t, d.ln()]);
    }
    let tol = 3.0 * est.residual;
    let summary = FloquetSummary {
        subcommand: "floquet",
        seed,
        space: ctx.space.label(),
        lambda1: q(est.lambda1, "late-half log growth of the longest pullback run", num.tolerances.pullback),
        sigma_forward: est
            .sigma_forward
            .map(|s| q(s, "minus the slope of ln |v_k - w| over the converged tail", 0.0)),
        fit_r2: est.fit_r2.map(|r| q(r, "coefficient of determination of the rate fit", 0.0)),
        residual: q(est.residual, "|v_K - v_(K-1)|", num.tolerances.pullback),
        w_head: est.w.head().iter().map(|h| q(*h, "pullback iterate, head component", tol)).collect(),
        distances: Series {
            estimator: "|v_k - w| in the configured norm",
            t: est.ladder[..est.distances.len()].to_vec(),
            values: est.distances.clone(),
        },
    };
    Ok(SeedOutcome {
        headline: format!(
            "seed {seed}: pullback residual {:.2e}, sigma_forward {}",
            est.residual,
            est.sigma_forward.map_or("n/a".into(), |s| format!("{s:.6}"))
        ),
        artifacts: vec![
            csv(format!("floquet_w_seed{seed}"), w_table),
            csv(format!("floquet_dist_seed{seed}"), d_table),
            json(format!("floquet_seed{seed}"), &summary)?,
        ],
        code: 0,
    })
}

#[derive(Serialize)]
struct SeparationSummary {
    subcommand: &'static str,
    seed: u64,
    space: String,
    pass: bool,
    lambda1: Quantity,
    lambda1_qr: Quantity,
    lambda2: Quantity,
    lambda2_volume: Quantity,
    sigma: Quantity,
    leading_dim: Quantity,
    tempered_slope: Quantity,
    tempered_pass: bool,
    kernel_dim_witness: Quantity,
    kernel_violations: Quantity,
    proj_norms: Series,
}

pub fn separation(cfg: &RunConfig, seed: u64) -> Result<SeedOutcome, Failure> {
    let ctx = context(cfg, seed)?;
    let num = &cfg.numerics;
    let sep_cfg = SeparationConfig {
        space: ctx.space,
        horizon: num.horizon,
        renorm: num.renorm,
        t_op: num.t_op,
        k: num.k,
        seed,
        resolution: num.tolerances.resolution,
        tempered_tol: num.tolerances.tempered,
        min_span: 10.0 * cfg.t_focus() as f64,
        cap: floquet_sep::dde::DEFAULT_OPERATOR_CAP,
    };
    let r = separation_report(&ctx.flow, &ctx.omega, &sep_cfg)?;
    let mut table = Table::new(["t", "ln_proj_norm"]);
    for (t, p) in r.proj_times.iter().zip(&r.proj_norms) {
        table.push(vec![*t, p.ln()]);
    }
    let summary = SeparationSummary {
        subcommand: "separation",
        seed,
        space: ctx.space.label(),
        pass: r.pass,
        lambda1: q(r.lambda1, "forward renormalized iteration", r.lambda1_tolerance),
        lambda1_qr: q(r.lambda1_qr, "QR of window operators, leading diagonal", r.lambda1_tolerance),
        lambda2: q(r.lambda2, "QR of window operators, first exponent below lambda1", r.lambda2_tolerance),
        lambda2_volume: q(r.lambda2_volume, "volume growth, first exponent below lambda1", r.lambda2_tolerance),
        sigma: q(r.sigma, "lambda1 (forward) - lambda2 (QR)", r.lambda1_tolerance + r.lambda2_tolerance),
        leading_dim: q(r.leading_dim as f64, "QR exponents within resolution of lambda1", num.tolerances.resolution),
        tempered_slope: q(r.tempered.slope, "least-squares slope of ln |P| against t", r.tempered.tolerance),
        tempered_pass: r.tempered.pass,
        kernel_dim_witness: exact(r.kernel_dim_witness as f64, "complement basis vectors dying under U(1)"),
        kernel_violations: exact(r.kernel_violations as f64, "complement basis vectors surviving U(1)"),
        proj_norms: Series {
            estimator: "projection onto the leading column along the left-vector kernel",
            t: r.proj_times.clone(),
            values: r.proj_norms.clone(),
        },
    };
    Ok(SeedOutcome {
        headline: format!(
            "seed {seed}: lambda1 {:.6}, lambda2 {:.6}, sigma {:.6}, tempered slope {:.2e}, {}",
            r.lambda1,
            r.lambda2,
            r.sigma,
            r.tempered.slope,
            if r.pass { "PASS" } else { "FAIL" }
        ),
        artifacts: vec![
            csv(format!("separation_proj_seed{seed}"), table),
            json(format!("separation_seed{seed}"), &summary)?,
        ],
        code: if r.pass { 0 } else { 2 },
    })
}

#[derive(Serialize)]
struct RootEntry {
    re: Quantity,
    im: Quantity,
    residual: Quantity,
}

#[derive(Serialize, Default)]
struct OracleSummary {
    subcommand: &'static str,
    seed: u64,
    perron_lambda: Option<Quantity>,
    perron_vector: Option<Vec<Quantity>>,
    char_roots: Option<Vec<RootEntry>>,
    char_roots_complete: Option<bool>,
    dense_exponents: Option<Vec<Quantity>>,
}

fn scalar_multiple_of_identity(a: &floquet_sep::Mat64) -> Option<f64> {
    let n = a.rows();
    let d = a[(0, 0)];
    let ok = (0..n).all(|i| (0..n).all(|j| a[(i, j)] == if i == j { d } else { 0.0 }));
    ok.then_some(d)
}

pub fn oracle(cfg: &RunConfig, seed: u64) -> Result<SeedOutcome, Failure> {
    let ctx = context(cfg, seed)?;
    let mut s = OracleSummary {
        subcommand: "oracle",
        seed,
        ..OracleSummary::default()
    };
    let cert = floquet_sep::oracle::CERTIFY_TOL;
    if let Some([state]) = ctx.omega.states() {
        if state.b.as_slice().iter().all(|x| *x == 0.0) {
            let p = perron_oracle(&state.a)?;
            s.perron_lambda = Some(q(p.lambda, "power iteration on exp(A), residual-certified", p.residual.max(0.0)));
            s.perron_vector = Some(p.v.iter().map(|v| q(*v, "Perron eigenvector", cert)).collect());
        }
        if let (Some(a), Some(b)) = (scalar_multiple_of_identity(&state.a), scalar_multiple_of_identity(&state.b)) {
            if b >= 0.0 {
                let roots = delay_char_roots(a, b, 4)?;
                s.char_roots = Some(
                    roots
                        .roots
                        .iter()
                        .zip(&roots.residuals)
                        .map(|(r, res)| RootEntry {
                            re: q(r.re, "Newton on lambda = a + b exp(-lambda)", cert),
                            im: q(r.im, "Newton on lambda = a + b exp(-lambda)", cert),
                            residual: q(*res, "|lambda - a - b exp(-lambda)|", cert),
                        })
                        .collect(),
                );
                s.char_roots_complete = Some(roots.complete);
            }
        }
    }
    let num = &cfg.numerics;
    if num.m <= 40 && cfg.system.n <= 3 {
        let windows = floquet_sep::dde::grid_steps(num.horizon, num.m)? / floquet_sep::dde::grid_steps(num.t_op, num.m)?;
        let ex = dense_product_oracle(&ctx.omega, num.t_op, windows, num.m, ctx.space)?;
        s.dense_exponents = Some(ex.iter().map(|e| q(*e, "dense products with Householder QR", 0.0)).collect());
    }
    if s.perron_lambda.is_none() && s.char_roots.is_none() && s.dense_exponents.is_none() {
        return Err(Failure::Contract(
            "no oracle applies: need a constant system with B = 0 or A, B scalar multiples of I, or m <= 40 and N <= 3"
                .into(),
        ));
    }
    let headline = match (&s.perron_lambda, &s.char_roots, &s.dense_exponents) {
        (Some(l), _, _) => format!("seed {seed}: Perron root {:.12}", l.value),
        (_, Some(r), _) => format!("seed {seed}: leading characteristic root {:.12}", r[0].re.value),
        (_, _, Some(e)) => format!("seed {seed}: dense leading exponent {:.8}", e[0].value),
        _ => unreachable!(),
    };
    Ok(SeedOutcome {
        headline,
        artifacts: vec![json(format!("oracle_seed{seed}"), &s)?],
        code: 0,
    })
}
