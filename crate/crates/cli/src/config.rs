//! Run configuration: JSON schema, validation and driver construction.

use std::path::{Path, PathBuf};

use floquet_sep::{
    make_iid_switching_driver, make_markov_switching_driver, make_quasiperiodic_driver, DriverPoint64, FourierTerm,
    Mat64, SpaceNorm, SwitchState,
};
use serde::Deserialize;

pub const SCHEMA_VERSION: u32 = 1;

/// A configuration problem, reported with the offending field.
#[derive(Debug)]
pub struct SchemaError(pub String);

impl std::fmt::Display for SchemaError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for SchemaError {}

fn schema<T>(msg: impl Into<String>) -> Result<T, SchemaError> {
    Err(SchemaError(msg.into()))
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub system: SystemConfig,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default)]
    pub initial: Option<InitialConfig>,
    #[serde(default)]
    pub outputs: Outputs,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
pub enum SpaceTag {
    C,
    Lp,
    L1,
    AC,
}

impl std::str::FromStr for SpaceTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "C" => Ok(Self::C),
            "Lp" => Ok(Self::Lp),
            "L1" => Ok(Self::L1),
            "AC" => Ok(Self::AC),
            other => Err(format!("unknown space '{other}', expected one of C, Lp, L1, AC")),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(rename = "N")]
    pub n: usize,
    pub driver: DriverSpec,
    #[serde(default = "default_space")]
    pub space: SpaceTag,
    /// Exponent for `Lp`; ignored otherwise.
    #[serde(default)]
    pub p: Option<f64>,
}

fn default_space() -> SpaceTag {
    SpaceTag::C
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSpec {
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    #[serde(rename = "B")]
    pub b: Vec<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierSpec {
    pub harmonic: Vec<i32>,
    pub a_cos: Vec<f64>,
    pub a_sin: Vec<f64>,
    pub b_cos: Vec<f64>,
    pub b_sin: Vec<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriverSpec {
    IidSwitching {
        seed: u64,
        cell_length: f64,
        states: Vec<StateSpec>,
    },
    MarkovSwitching {
        seed: u64,
        cell_length: f64,
        states: Vec<StateSpec>,
        /// Row-major, row-stochastic.
        transition: Vec<f64>,
    },
    Quasiperiodic {
        seed: u64,
        rotation: Vec<f64>,
        fourier: Vec<FourierSpec>,
        #[serde(default)]
        angles: Option<Vec<f64>>,
    },
}

impl DriverSpec {
    pub fn seed(&self) -> u64 {
        match self {
            Self::IidSwitching { seed, .. } | Self::MarkovSwitching { seed, .. } | Self::Quasiperiodic { seed, .. } => {
                *seed
            }
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "d_pullback")]
    pub pullback: f64,
    #[serde(default = "d_resolution")]
    pub resolution: f64,
    #[serde(default = "d_tempered")]
    pub tempered: f64,
    #[serde(default = "d_delta_min")]
    pub delta_min: f64,
}

fn d_pullback() -> f64 {
    1e-6
}
fn d_resolution() -> f64 {
    floquet_sep::spectrum::DEFAULT_RESOLUTION
}
fn d_tempered() -> f64 {
    floquet_sep::spectrum::TEMPERED_TOL
}
fn d_delta_min() -> f64 {
    floquet_sep::cone::DEFAULT_DELTA_MIN
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            pullback: d_pullback(),
            resolution: d_resolution(),
            tempered: d_tempered(),
            delta_min: d_delta_min(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Numerics {
    #[serde(default = "d_m")]
    pub m: usize,
    #[serde(default = "d_horizon")]
    pub horizon: f64,
    #[serde(default = "d_one")]
    pub renorm: f64,
    #[serde(default = "d_t_back")]
    pub t_back: f64,
    /// Window length of the QR products.
    #[serde(default = "d_one")]
    pub t_op: f64,
    /// Irreducibility window `M`.
    #[serde(default = "d_window")]
    pub window: usize,
    /// Columns for the volume and QR methods.
    #[serde(default = "d_k")]
    pub k: usize,
    /// Random cone vectors in the sandwich table of `verify-assumptions`.
    #[serde(default = "d_samples")]
    pub sandwich_samples: usize,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Driver seeds of the ensemble; empty means the driver's own seed.
    #[serde(default)]
    pub seeds: Vec<u64>,
}

fn d_m() -> usize {
    100
}
fn d_horizon() -> f64 {
    300.0
}
fn d_one() -> f64 {
    1.0
}
fn d_t_back() -> f64 {
    30.0
}
fn d_window() -> usize {
    1
}
fn d_k() -> usize {
    4
}
fn d_samples() -> usize {
    20
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            m: d_m(),
            horizon: d_horizon(),
            renorm: d_one(),
            t_back: d_t_back(),
            t_op: d_one(),
            window: d_window(),
            k: d_k(),
            sandwich_samples: d_samples(),
            tolerances: Tolerances::default(),
            seeds: Vec::new(),
        }
    }
}

/// Initial segment: a constant, or a head with a constant history for product spaces.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub history: Vec<f64>,
    #[serde(default)]
    pub head: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default = "d_dir")]
    pub directory: PathBuf,
    #[serde(default = "d_formats")]
    pub formats: Vec<Format>,
}

fn d_dir() -> PathBuf {
    PathBuf::from("out")
}
fn d_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

impl Default for Outputs {
    fn default() -> Self {
        Self {
            directory: d_dir(),
            formats: d_formats(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, SchemaError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SchemaError(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, SchemaError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| SchemaError(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Focusing time `N + (N-1) M + 1`.
    pub fn t_focus(&self) -> usize {
        let n = self.system.n;
        n + (n - 1) * self.numerics.window + 1
    }

    pub fn space(&self) -> SpaceNorm {
        match self.system.space {
            SpaceTag::C => SpaceNorm::C,
            SpaceTag::Lp => SpaceNorm::Lp(self.system.p.unwrap_or(2.0)),
            SpaceTag::L1 => SpaceNorm::L1Hat,
            SpaceTag::AC => SpaceNorm::Ac,
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        if self.numerics.seeds.is_empty() {
            vec![self.system.driver.seed()]
        } else {
            self.numerics.seeds.clone()
        }
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        if self.version != SCHEMA_VERSION {
            return schema(format!("version: unsupported value {}, expected {SCHEMA_VERSION}", self.version));
        }
        let n = self.system.n;
        if n < 2 {
            return schema(format!("system.N: N must be ≥ 2 (got {n})"));
        }
        if let SpaceTag::Lp = self.system.space {
            if let Some(p) = self.system.p {
                if !(p >= 1.0) || !p.is_finite() {
                    return schema(format!("system.p: need 1 <= p < inf, got {p}"));
                }
            }
        }
        let num = &self.numerics;
        if num.m < 10 {
            return schema(format!("numerics.m: m must be ≥ 10 (got {})", num.m));
        }
        if num.window == 0 {
            return schema("numerics.window: M must be ≥ 1");
        }
        let t = self.t_focus() as f64;
        if !(num.horizon >= 10.0 * t) {
            return schema(format!(
                "numerics.horizon: horizon must be ≥ 10·T = {} (got {})",
                10.0 * t,
                num.horizon
            ));
        }
        for (name, v) in [("renorm", num.renorm), ("t_back", num.t_back), ("t_op", num.t_op)] {
            if !(v > 0.0) || !v.is_finite() {
                return schema(format!("numerics.{name}: must be positive, got {v}"));
            }
            if floquet_sep::dde::grid_steps(v, num.m).is_err() {
                return schema(format!("numerics.{name}: {v} is not a multiple of 1/m = 1/{}", num.m));
            }
        }
        if floquet_sep::dde::grid_steps(num.horizon, num.m).is_err() {
            return schema(format!("numerics.horizon: {} is not a multiple of 1/m", num.horizon));
        }
        if num.k == 0 || num.k > 6 {
            return schema(format!("numerics.k: need 1 <= k <= 6, got {}", num.k));
        }
        let tol = &num.tolerances;
        for (name, v) in [
            ("pullback", tol.pullback),
            ("resolution", tol.resolution),
            ("tempered", tol.tempered),
            ("delta_min", tol.delta_min),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return schema(format!("numerics.tolerances.{name}: must be positive, got {v}"));
            }
        }
        if let Some(init) = &self.initial {
            if init.history.len() != n {
                return schema(format!("initial.history: expected {n} entries, got {}", init.history.len()));
            }
            if init.head.as_ref().is_some_and(|h| h.len() != n) {
                return schema(format!("initial.head: expected {n} entries"));
            }
        }
        if self.outputs.formats.is_empty() {
            return schema("outputs.formats: at least one format is required");
        }
        self.check_driver_shapes()?;
        // Construction catches the remaining driver errors.
        self.build_driver(self.system.driver.seed())?;
        Ok(())
    }

    fn check_driver_shapes(&self) -> Result<(), SchemaError> {
        let nn = self.system.n * self.system.n;
        let check = |field: String, v: &[f64]| {
            if v.len() == nn {
                Ok(())
            } else {
                schema(format!("{field}: expected {nn} row-major entries for N = {}, got {}", self.system.n, v.len()))
            }
        };
        match &self.system.driver {
            DriverSpec::IidSwitching { states, .. } | DriverSpec::MarkovSwitching { states, .. } => {
                if states.is_empty() {
                    return schema("system.driver.states: at least one state is required");
                }
                for (i, s) in states.iter().enumerate() {
                    check(format!("system.driver.states[{i}].A"), &s.a)?;
                    check(format!("system.driver.states[{i}].B"), &s.b)?;
                }
                if let DriverSpec::MarkovSwitching { transition, .. } = &self.system.driver {
                    let s = states.len();
                    if transition.len() != s * s {
                        return schema(format!(
                            "system.driver.transition: expected {} entries, got {}",
                            s * s,
                            transition.len()
                        ));
                    }
                }
            }
            DriverSpec::Quasiperiodic { rotation, fourier, angles, .. } => {
                if fourier.is_empty() {
                    return schema("system.driver.fourier: at least one term is required");
                }
                for (i, t) in fourier.iter().enumerate() {
                    if t.harmonic.len() != rotation.len() {
                        return schema(format!(
                            "system.driver.fourier[{i}].harmonic: expected {} entries",
                            rotation.len()
                        ));
                    }
                    check(format!("system.driver.fourier[{i}].a_cos"), &t.a_cos)?;
                    check(format!("system.driver.fourier[{i}].a_sin"), &t.a_sin)?;
                    check(format!("system.driver.fourier[{i}].b_cos"), &t.b_cos)?;
                    check(format!("system.driver.fourier[{i}].b_sin"), &t.b_sin)?;
                }
                if angles.as_ref().is_some_and(|a| a.len() != rotation.len()) {
                    return schema("system.driver.angles: must match the rotation vector");
                }
            }
        }
        Ok(())
    }

    /// The configured driver with its seed replaced by `seed`.
    pub fn build_driver(&self, seed: u64) -> Result<DriverPoint64, SchemaError> {
        let n = self.system.n;
        let sq = |v: &[f64]| Mat64::square_f64(n, v).map_err(|e| SchemaError(format!("system.driver: {e}")));
        let states = |states: &[StateSpec]| {
            states
                .iter()
                .map(|s| Ok(SwitchState { a: sq(&s.a)?, b: sq(&s.b)? }))
                .collect::<Result<Vec<_>, SchemaError>>()
        };
        let built = match &self.system.driver {
            DriverSpec::IidSwitching { cell_length, states: s, .. } => {
                make_iid_switching_driver(seed, states(s)?, *cell_length)
            }
            DriverSpec::MarkovSwitching {
                cell_length,
                states: s,
                transition,
                ..
            } => {
                let p = Mat64::square_f64(s.len(), transition)
                    .map_err(|e| SchemaError(format!("system.driver.transition: {e}")))?;
                make_markov_switching_driver(seed, states(s)?, *cell_length, p)
            }
            DriverSpec::Quasiperiodic {
                rotation,
                fourier,
                angles,
                ..
            } => {
                let terms = fourier
                    .iter()
                    .map(|t| {
                        Ok(FourierTerm {
                            harmonic: t.harmonic.clone(),
                            a_cos: sq(&t.a_cos)?,
                            a_sin: sq(&t.a_sin)?,
                            b_cos: sq(&t.b_cos)?,
                            b_sin: sq(&t.b_sin)?,
                        })
                    })
                    .collect::<Result<Vec<_>, SchemaError>>()?;
                make_quasiperiodic_driver(seed, rotation.clone(), terms, angles.clone())
            }
        };
        built.map_err(|e| SchemaError(format!("system.driver: {e}")))
    }

    pub fn initial_segment(&self) -> floquet_sep::Segment64 {
        let n = self.system.n;
        let m = self.numerics.m;
        match &self.initial {
            None => floquet_sep::Segment64::constant(m, &vec![1.0; n]),
            Some(init) => {
                let mut seg = floquet_sep::Segment64::constant(m, &init.history);
                if let Some(h) = &init.head {
                    seg.head_mut().copy_from_slice(h);
                }
                seg
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "version": 1,
        "system": {"N": 2, "driver": {"kind": "iid_switching", "seed": 7, "cell_length": 1.0,
            "states": [{"A": [0, 0, 0, 0], "B": [1, 0, 0, 1]}]}}
    }"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = RunConfig::parse(BASE).unwrap();
        assert_eq!(cfg.numerics.m, 100);
        assert_eq!(cfg.seeds(), vec![7]);
        assert_eq!(cfg.space(), SpaceNorm::C);
        assert_eq!(cfg.t_focus(), 4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = BASE.replace("\"version\": 1,", "\"version\": 1, \"extra\": 3,");
        let err = RunConfig::parse(&text).unwrap_err();
        assert!(err.0.contains("extra"), "{err}");
    }

    #[test]
    fn dimension_one_is_rejected() {
        let text = r#"{"version": 1, "system": {"N": 1, "driver": {"kind": "iid_switching", "seed": 1,
            "cell_length": 1.0, "states": [{"A": [0], "B": [1]}]}}}"#;
        let err = RunConfig::parse(text).unwrap_err();
        assert!(err.0.contains("N must be ≥ 2"), "{err}");
    }

    #[test]
    fn numeric_rules() {
        let short = BASE.replace("\"version\": 1,", "\"version\": 1, \"numerics\": {\"horizon\": 30},");
        assert!(RunConfig::parse(&short).unwrap_err().0.contains("horizon"));
        let coarse = BASE.replace("\"version\": 1,", "\"version\": 1, \"numerics\": {\"m\": 5},");
        assert!(RunConfig::parse(&coarse).unwrap_err().0.contains("m must be"));
        let wrong = BASE.replace("\"version\": 1,", "\"version\": 2,");
        assert!(RunConfig::parse(&wrong).unwrap_err().0.contains("version"));
        let shape = BASE.replace("[1, 0, 0, 1]", "[1, 0, 0]");
        assert!(RunConfig::parse(&shape).unwrap_err().0.contains("states[0].B"));
    }

    #[test]
    fn space_tags_parse() {
        assert_eq!("L1".parse::<SpaceTag>().unwrap(), SpaceTag::L1);
        assert!("L7".parse::<SpaceTag>().is_err());
    }
}
