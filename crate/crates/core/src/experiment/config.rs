//! Flat TOML experiment configuration.
//!
//! Every key is optional; omitted keys take the defaults listed in
//! [`ExperimentConfig::default`]. Unknown keys, duplicate keys and
//! out-of-range values are rejected with the line of the offending key.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;
use toml::Spanned;

use crate::dual::DualConfig;
use crate::markov::Dtmc;
use crate::mdp::{CostVariant, MdpModel, MdpState, TruncationConfig};
use crate::rvi::RviConfig;
use crate::sim::{MixingMode, SimConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("{0}")]
    Syntax(String),
    #[error("line {line}: `{key}` {message}")]
    Domain { key: String, line: usize, message: String },
    #[error("`{key}`: {message}")]
    Invalid { key: String, message: String },
}

impl ConfigError {
    fn invalid(key: &str, message: impl Into<String>) -> Self {
        ConfigError::Invalid { key: key.into(), message: message.into() }
    }
}

/// Description of the monitored source.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    /// Two-state chain with flip probabilities `p01` and `p10`.
    TwoState { p01: f64, p10: f64 },
    /// Dense row-major transition matrix.
    Matrix(Vec<Vec<f64>>),
}

impl Source {
    pub fn dtmc(&self) -> Result<Dtmc, crate::markov::MarkovError> {
        match self {
            Source::TwoState { p01, p10 } => Dtmc::two_state(*p01, *p10),
            Source::Matrix(rows) => Dtmc::new(rows.clone()),
        }
    }

    /// `(p01, p10)` when the source has two states.
    pub fn flips(&self) -> Option<(f64, f64)> {
        match self {
            Source::TwoState { p01, p10 } => Some((*p01, *p10)),
            Source::Matrix(rows) if rows.len() == 2 && rows.iter().all(|r| r.len() == 2) => {
                Some((rows[0][1], rows[1][0]))
            }
            Source::Matrix(_) => None,
        }
    }

    fn with_p01(&self, p01: f64) -> Option<Source> {
        self.flips().map(|(_, p10)| Source::TwoState { p01, p10 })
    }

    fn with_p10(&self, p10: f64) -> Option<Source> {
        self.flips().map(|(p01, _)| Source::TwoState { p01, p10 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    P01,
    P10,
    Q,
    Nu,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::P01 => "p01",
            Axis::P10 => "p10",
            Axis::Q => "q",
            Axis::Nu => "nu",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub axis: Axis,
    pub values: Vec<f64>,
}

/// Policy run by the `simulate` command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SimPolicyChoice {
    /// The randomised CMDP solution at `nu`.
    #[default]
    Cmdp,
    ZeroWait,
    Clairvoyant,
    Periodic,
    Never,
    Always,
}

impl SimPolicyChoice {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "cmdp" => SimPolicyChoice::Cmdp,
            "zero-wait" => SimPolicyChoice::ZeroWait,
            "clairvoyant" => SimPolicyChoice::Clairvoyant,
            "periodic" => SimPolicyChoice::Periodic,
            "never" => SimPolicyChoice::Never,
            "always" => SimPolicyChoice::Always,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareConfig {
    /// Frequency bounds of the CMDP policies in the comparison.
    pub nu: Vec<f64>,
    /// Values taken by the swept flip probability.
    pub grid: Vec<f64>,
    /// Which flip probability is swept; both by default.
    pub axes: Vec<Axis>,
    pub periodic_k: u32,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            nu: vec![0.2, 0.6, 0.8],
            grid: (1..=10).map(|k| k as f64 / 100.0).collect(),
            axes: vec![Axis::P10, Axis::P01],
            periodic_k: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: Source,
    pub q: f64,
    pub nu: f64,
    pub truncation: TruncationConfig,
    pub cost_variant: CostVariant,
    pub dual: DualConfig,
    pub sim: SimConfig,
    pub sweep: Option<Sweep>,
    pub compare: CompareConfig,
    /// `(i, j)` slice shown by `policy-map`.
    pub map_state: (usize, usize),
    pub sim_policy: SimPolicyChoice,
    /// Also simulate the CMDP policy in `solve` and `sweep`.
    pub with_simulation: bool,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            source: Source::TwoState { p01: 0.02, p10: 0.01 },
            q: 0.8,
            nu: 0.1,
            truncation: TruncationConfig::default(),
            cost_variant: CostVariant::InclusiveSelf,
            dual: DualConfig::default(),
            sim: SimConfig::default(),
            sweep: None,
            compare: CompareConfig::default(),
            map_state: (0, 0),
            sim_policy: SimPolicyChoice::Cmdp,
            with_simulation: false,
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn dtmc(&self) -> Result<Dtmc, crate::markov::MarkovError> {
        self.source.dtmc()
    }

    pub fn model(&self) -> Result<MdpModel, super::ExperimentError> {
        let dtmc = self.dtmc()?;
        Ok(MdpModel::new(&dtmc, self.q, self.truncation, self.cost_variant)?)
    }

    /// Copy of the configuration with one axis set to `value`.
    pub fn at(&self, axis: Axis, value: f64) -> Option<ExperimentConfig> {
        let mut c = self.clone();
        match axis {
            Axis::P01 => c.source = self.source.with_p01(value)?,
            Axis::P10 => c.source = self.source.with_p10(value)?,
            Axis::Q => c.q = value,
            Axis::Nu => c.nu = value,
        }
        Some(c)
    }
}

/// Raw file contents; every field keeps its span for error messages.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    matrix: Option<Spanned<Vec<Vec<f64>>>>,
    p01: Option<Spanned<f64>>,
    p10: Option<Spanned<f64>>,
    q: Option<Spanned<f64>>,
    nu: Option<Spanned<f64>>,
    tau1_max: Option<Spanned<i64>>,
    tau2_max: Option<Spanned<i64>>,
    cost_variant: Option<Spanned<String>>,
    span_tolerance: Option<Spanned<f64>>,
    max_iterations: Option<Spanned<i64>>,
    lambda_lo: Option<Spanned<f64>>,
    lambda_hi: Option<Spanned<f64>>,
    lambda_tolerance: Option<Spanned<f64>>,
    epsilon: Option<Spanned<f64>>,
    horizon: Option<Spanned<i64>>,
    replications: Option<Spanned<i64>>,
    warmup: Option<Spanned<i64>>,
    seed: Option<Spanned<i64>>,
    mixing: Option<Spanned<String>>,
    sweep_p01: Option<Spanned<Vec<f64>>>,
    sweep_p10: Option<Spanned<Vec<f64>>>,
    sweep_q: Option<Spanned<Vec<f64>>>,
    sweep_nu: Option<Spanned<Vec<f64>>>,
    compare_nu: Option<Spanned<Vec<f64>>>,
    compare_grid: Option<Spanned<Vec<f64>>>,
    compare_axes: Option<Spanned<Vec<String>>>,
    periodic_k: Option<Spanned<i64>>,
    map_i: Option<Spanned<i64>>,
    map_j: Option<Spanned<i64>>,
    sim_policy: Option<Spanned<String>>,
    with_simulation: Option<Spanned<bool>>,
    out: Option<Spanned<String>>,
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Read { path: path.to_path_buf(), message: e.to_string() })?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string().trim_end().to_string()))?;
    Checker { text }.build(raw)
}

struct Checker<'a> {
    text: &'a str,
}

impl Checker<'_> {
    fn line<T>(&self, v: &Spanned<T>) -> usize {
        let start = v.span().start.min(self.text.len());
        self.text[..start].bytes().filter(|&b| b == b'\n').count() + 1
    }

    fn err<T>(&self, key: &str, v: &Spanned<T>, message: impl Into<String>) -> ConfigError {
        ConfigError::Domain { key: key.into(), line: self.line(v), message: message.into() }
    }

    fn real(
        &self,
        key: &str,
        v: Option<Spanned<f64>>,
        default: f64,
        ok: impl Fn(f64) -> bool,
        domain: &str,
    ) -> Result<f64, ConfigError> {
        match v {
            None => Ok(default),
            Some(s) if ok(*s.get_ref()) => Ok(*s.get_ref()),
            Some(s) => Err(self.err(key, &s, format!("= {} is outside {domain}", s.get_ref()))),
        }
    }

    fn int(&self, key: &str, v: Option<Spanned<i64>>, default: u64, min: i64) -> Result<u64, ConfigError> {
        match v {
            None => Ok(default),
            Some(s) if *s.get_ref() >= min => Ok(*s.get_ref() as u64),
            Some(s) => Err(self.err(key, &s, format!("= {} must be >= {min}", s.get_ref()))),
        }
    }

    fn grid(
        &self,
        key: &str,
        v: Option<Spanned<Vec<f64>>>,
        ok: impl Fn(f64) -> bool,
        domain: &str,
    ) -> Result<Option<Vec<f64>>, ConfigError> {
        let Some(s) = v else { return Ok(None) };
        if s.get_ref().is_empty() {
            return Err(self.err(key, &s, "must not be empty"));
        }
        if let Some(bad) = s.get_ref().iter().find(|&&x| !ok(x)) {
            return Err(self.err(key, &s, format!("contains {bad}, outside {domain}")));
        }
        Ok(Some(s.into_inner()))
    }

    fn build(&self, raw: RawConfig) -> Result<ExperimentConfig, ConfigError> {
        let d = ExperimentConfig::default();
        let prob = |x: f64| (0.0..=1.0).contains(&x);
        let unit_open = |x: f64| x > 0.0 && x <= 1.0;

        let source = match (raw.matrix, raw.p01, raw.p10) {
            (Some(m), None, None) => {
                let line = self.line(&m);
                let rows = m.into_inner();
                Dtmc::new(rows.clone()).map_err(|e| ConfigError::Domain {
                    key: "matrix".into(),
                    line,
                    message: format!("is not a valid chain: {e}"),
                })?;
                Source::Matrix(rows)
            }
            (Some(m), _, _) => return Err(self.err("matrix", &m, "cannot be combined with p01/p10")),
            (None, p01, p10) => {
                let p01 = self.real("p01", p01, 0.02, prob, "[0, 1]")?;
                let p10 = self.real("p10", p10, 0.01, prob, "[0, 1]")?;
                Dtmc::two_state(p01, p10)
                    .map_err(|e| ConfigError::invalid("p01/p10", format!("do not define a valid chain: {e}")))?;
                Source::TwoState { p01, p10 }
            }
        };
        let n = source.dtmc().map(|c| c.n()).unwrap_or(2);

        let q = self.real("q", raw.q, d.q, unit_open, "(0, 1]")?;
        let nu = self.real("nu", raw.nu, d.nu, unit_open, "(0, 1]")?;
        let tau1_max = self.int("tau1_max", raw.tau1_max, d.truncation.tau1_max as u64, 1)?;
        let tau2_max = self.int("tau2_max", raw.tau2_max, d.truncation.tau2_max as u64, 1)?;
        let truncation = TruncationConfig { tau1_max: tau1_max as u32, tau2_max: tau2_max as u32 };
        if tau1_max > u32::MAX as u64 || tau2_max > u32::MAX as u64 {
            return Err(ConfigError::invalid("tau1_max/tau2_max", "too large"));
        }

        let cost_variant = match raw.cost_variant {
            None => d.cost_variant,
            Some(s) => match s.get_ref().as_str() {
                "inclusive" | "inclusive-self" => CostVariant::InclusiveSelf,
                "exclusive" | "as-written-exclusive" => CostVariant::AsWrittenExclusive,
                other => {
                    return Err(self.err(
                        "cost_variant",
                        &s,
                        format!("= \"{other}\" is not one of \"inclusive\", \"exclusive\""),
                    ))
                }
            },
        };

        let pos = |x: f64| x > 0.0 && x.is_finite();
        let rvi = RviConfig {
            span_tolerance: self.real(
                "span_tolerance",
                raw.span_tolerance,
                d.dual.rvi.span_tolerance,
                pos,
                "(0, inf)",
            )?,
            max_iterations: self.int("max_iterations", raw.max_iterations, d.dual.rvi.max_iterations as u64, 1)?
                as usize,
            reference_state: MdpState::new(0, 1, 0, 0),
        };
        let lambda_lo =
            self.real("lambda_lo", raw.lambda_lo, d.dual.lambda_lo, |x| x >= 0.0 && x.is_finite(), "[0, inf)")?;
        let hi_line = raw.lambda_hi.as_ref().map(|s| self.line(s));
        let lambda_hi = self.real("lambda_hi", raw.lambda_hi, d.dual.lambda_hi, pos, "(0, inf)")?;
        if lambda_hi <= lambda_lo {
            let message = format!("= {lambda_hi} must exceed lambda_lo = {lambda_lo}");
            return Err(match hi_line {
                Some(line) => ConfigError::Domain { key: "lambda_hi".into(), line, message },
                None => ConfigError::invalid("lambda_hi", message),
            });
        }
        let dual = DualConfig {
            lambda_lo,
            lambda_hi,
            lambda_tolerance: self.real(
                "lambda_tolerance",
                raw.lambda_tolerance,
                d.dual.lambda_tolerance,
                pos,
                "(0, inf)",
            )?,
            epsilon: self.real("epsilon", raw.epsilon, d.dual.epsilon, pos, "(0, inf)")?,
            rvi,
        };

        let horizon = self.int("horizon", raw.horizon, d.sim.horizon, 1)?;
        let warmup_line = raw.warmup.as_ref().map(|s| self.line(s));
        let warmup = self.int("warmup", raw.warmup, d.sim.warmup.min(horizon.saturating_sub(1)), 0)?;
        if warmup >= horizon {
            let message = format!("= {warmup} must be below horizon = {horizon}");
            return Err(match warmup_line {
                Some(line) => ConfigError::Domain { key: "warmup".into(), line, message },
                None => ConfigError::invalid("warmup", message),
            });
        }
        let mixing = match raw.mixing {
            None => d.sim.mixing,
            Some(s) => match s.get_ref().as_str() {
                "episode" => MixingMode::Episode,
                "per-step" => MixingMode::PerStep,
                other => {
                    return Err(self.err(
                        "mixing",
                        &s,
                        format!("= \"{other}\" is not one of \"episode\", \"per-step\""),
                    ))
                }
            },
        };
        let sim = SimConfig {
            horizon,
            replications: self.int("replications", raw.replications, d.sim.replications as u64, 1)? as usize,
            warmup,
            seed: self.int("seed", raw.seed, d.sim.seed, 0)?,
            mixing,
        };

        let axes = [
            (Axis::P01, "sweep_p01", raw.sweep_p01),
            (Axis::P10, "sweep_p10", raw.sweep_p10),
            (Axis::Q, "sweep_q", raw.sweep_q),
            (Axis::Nu, "sweep_nu", raw.sweep_nu),
        ];
        let mut sweeps = Vec::new();
        for (axis, key, v) in axes {
            let values = match axis {
                Axis::Q | Axis::Nu => self.grid(key, v, unit_open, "(0, 1]")?,
                Axis::P01 | Axis::P10 => self.grid(key, v, prob, "[0, 1]")?,
            };
            if let Some(values) = values {
                sweeps.push(Sweep { axis, values });
            }
        }
        if sweeps.len() > 1 {
            let keys: Vec<String> = sweeps.iter().map(|s| format!("sweep_{}", s.axis)).collect();
            return Err(ConfigError::invalid(
                "sweep",
                format!("exactly one axis may be swept, found {}", keys.join(", ")),
            ));
        }
        let sweep = sweeps.pop();
        if let Some(s) = &sweep {
            if matches!(s.axis, Axis::P01 | Axis::P10) && source.flips().is_none() {
                return Err(ConfigError::invalid(&format!("sweep_{}", s.axis), "needs a two-state source"));
            }
        }

        let compare_axes = match raw.compare_axes {
            None => d.compare.axes.clone(),
            Some(s) => {
                let mut out = Vec::new();
                for a in s.get_ref() {
                    out.push(match a.as_str() {
                        "p10" => Axis::P10,
                        "p01" => Axis::P01,
                        other => {
                            return Err(self.err(
                                "compare_axes",
                                &s,
                                format!("entry \"{other}\" is not \"p01\" or \"p10\""),
                            ))
                        }
                    });
                }
                if out.is_empty() {
                    return Err(self.err("compare_axes", &s, "must not be empty"));
                }
                out
            }
        };
        let compare = CompareConfig {
            nu: self.grid("compare_nu", raw.compare_nu, unit_open, "(0, 1]")?.unwrap_or(d.compare.nu),
            grid: self.grid("compare_grid", raw.compare_grid, prob, "[0, 1]")?.unwrap_or(d.compare.grid),
            axes: compare_axes,
            periodic_k: {
                let k = self.int("periodic_k", raw.periodic_k, d.compare.periodic_k as u64, 1)?;
                u32::try_from(k).map_err(|_| ConfigError::invalid("periodic_k", "too large"))?
            },
        };

        let state_index = |key: &str, v: Option<Spanned<i64>>| -> Result<usize, ConfigError> {
            match v {
                None => Ok(0),
                Some(s) if (0..n as i64).contains(s.get_ref()) => Ok(*s.get_ref() as usize),
                Some(s) => Err(self.err(key, &s, format!("= {} is not a state in [0, {n})", s.get_ref()))),
            }
        };
        let map_state = (state_index("map_i", raw.map_i)?, state_index("map_j", raw.map_j)?);

        let sim_policy = match raw.sim_policy {
            None => d.sim_policy,
            Some(s) => SimPolicyChoice::parse(s.get_ref()).ok_or_else(|| {
                self.err(
                    "sim_policy",
                    &s,
                    format!(
                        "= \"{}\" is not one of cmdp, zero-wait, clairvoyant, periodic, never, always",
                        s.get_ref()
                    ),
                )
            })?,
        };

        Ok(ExperimentConfig {
            source,
            q,
            nu,
            truncation,
            cost_variant,
            dual,
            sim,
            sweep,
            compare,
            map_state,
            sim_policy,
            with_simulation: raw.with_simulation.map(|s| s.into_inner()).unwrap_or(false),
            out: raw.out.map(|s| PathBuf::from(s.into_inner())),
        })
    }
}
