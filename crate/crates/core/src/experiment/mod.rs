//! Experiment orchestration behind the `aod` binary.
//!
//! Each command takes a validated [`ExperimentConfig`] and returns typed
//! rows; [`write_rows`] and the streaming commands emit them as CSV.
//!
//! CSV schemas (header row, comma separated, empty cell for absent values):
//!
//! | command | row type | columns |
//! |---|---|---|
//! | `solve`, `sweep` | [`ResultRow`] | `axis,value,p01,p10,q,nu,tau1_max,tau2_max,cost_variant,lambda_star,mu,lambda_minus,j_minus,f_minus,lambda_plus,j_plus,f_plus,j_exact,f_exact,constraint_active,sim_replications,sim_aod,sim_aod_se,sim_freq,sim_freq_se,sim_fresh_error,sim_fresh_error_se,sim_map_error,sim_map_error_se,j_dependent,error` |
//! | `policy-map` | [`PolicyMapRow`] | `tau1,tau2,action,action_minus,action_plus,monotone` |
//! | `simulate`, `compare` | [`CompareRow`] | `axis,p01,p10,q,policy,nu,replications,freq,freq_se,avg_aod,avg_aod_se,fresh_error,fresh_error_se,map_error,map_error_se,exact_aod,exact_freq,j_dependent,error` |
//! | `simulate --trace` | [`TraceRow`] | `t,true_state,i,tau1,tau2,action,success` |

mod config;
mod rows;

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

pub use config::{
    parse_config, parse_config_str, Axis, CompareConfig, ConfigError, ExperimentConfig, SimPolicyChoice, Source, Sweep,
};
pub use rows::{CompareRow, PolicyMapRow, ResultRow, TraceRow};

use crate::dual::{solve_cmdp, CmdpSolution, DualError};
use crate::markov::MarkovError;
use crate::mdp::{Action, MdpError, MdpModel, MdpState};
use crate::rvi::{evaluate_policy, PurePolicy, SolverError};
use crate::sim::{simulate, MonitorPolicy, SimError, Simulation};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("source: {0}")]
    Markov(#[from] MarkovError),
    #[error("model: {0}")]
    Model(#[from] MdpError),
    #[error("solver: {0}")]
    Dual(#[from] DualError),
    #[error("solver: {0}")]
    Solver(#[from] SolverError),
    #[error("simulation: {0}")]
    Sim(#[from] SimError),
    #[error("{0}")]
    Usage(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl ExperimentError {
    /// Process exit code: 1 for configuration and I/O problems, 2 for
    /// solver or simulation failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Dual(_) | ExperimentError::Solver(_) | ExperimentError::Sim(_) => 2,
            _ => 1,
        }
    }
}

fn base_row(config: &ExperimentConfig) -> ResultRow {
    let flips = config.source.flips();
    ResultRow {
        axis: None,
        value: None,
        p01: flips.map(|f| f.0),
        p10: flips.map(|f| f.1),
        q: config.q,
        nu: config.nu,
        tau1_max: config.truncation.tau1_max,
        tau2_max: config.truncation.tau2_max,
        cost_variant: config.cost_variant.name(),
        lambda_star: None,
        mu: None,
        lambda_minus: None,
        j_minus: None,
        f_minus: None,
        lambda_plus: None,
        j_plus: None,
        f_plus: None,
        j_exact: None,
        f_exact: None,
        constraint_active: None,
        sim_replications: None,
        sim_aod: None,
        sim_aod_se: None,
        sim_freq: None,
        sim_freq_se: None,
        sim_fresh_error: None,
        sim_fresh_error_se: None,
        sim_map_error: None,
        sim_map_error_se: None,
        j_dependent: None,
        error: None,
    }
}

fn fill_solution(row: &mut ResultRow, s: &CmdpSolution) {
    row.lambda_star = Some(s.lambda_star);
    row.mu = Some(s.mixed.mu);
    row.lambda_minus = Some(s.minus.lambda);
    row.j_minus = Some(s.minus.aod);
    row.f_minus = Some(s.minus.frequency);
    row.lambda_plus = Some(s.plus.lambda);
    row.j_plus = Some(s.plus.aod);
    row.f_plus = Some(s.plus.frequency);
    row.j_exact = Some(s.j_mixed);
    row.f_exact = Some(s.f_mixed);
    row.constraint_active = Some(s.constraint_active);
}

/// Result of `solve`.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub row: ResultRow,
    pub solution: CmdpSolution,
    pub simulation: Option<Simulation>,
}

impl fmt::Display for SolveReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = &self.solution;
        match (self.row.p01, self.row.p10) {
            (Some(p01), Some(p10)) => writeln!(f, "source      p01 = {p01}, p10 = {p10}")?,
            _ => writeln!(f, "source      matrix")?,
        }
        writeln!(
            f,
            "model       q = {}, nu = {}, tau caps = ({}, {}), cost = {}",
            self.row.q, s.nu, self.row.tau1_max, self.row.tau2_max, self.row.cost_variant
        )?;
        writeln!(f, "lambda*     {:.6}", s.lambda_star)?;
        writeln!(f, "mu          {:.6}", s.mixed.mu)?;
        writeln!(f, "J           {:.6}", s.j_mixed)?;
        writeln!(f, "f           {:.6}", s.f_mixed)?;
        writeln!(
            f,
            "pi-         lambda = {:.6}, J = {:.6}, f = {:.6}",
            s.minus.lambda, s.minus.aod, s.minus.frequency
        )?;
        writeln!(f, "pi+         lambda = {:.6}, J = {:.6}, f = {:.6}", s.plus.lambda, s.plus.aod, s.plus.frequency)?;
        if !s.constraint_active {
            writeln!(f, "note        constraint inactive: the unconstrained optimum already has f <= nu")?;
        }
        if let Some(sim) = &self.simulation {
            let m = &sim.metrics;
            writeln!(
                f,
                "simulated   J = {:.6} +- {:.6}, f = {:.6} +- {:.6} ({} replications)",
                m.avg_aod.mean,
                m.avg_aod.se_or_zero(),
                m.freq.mean,
                m.freq.se_or_zero(),
                m.replications
            )?;
            if sim.j_dependent {
                writeln!(f, "{J_DEPENDENCE_WARNING}")?;
            }
        }
        Ok(())
    }
}

pub const J_DEPENDENCE_WARNING: &str = "warning     the policy table depends on the unobserved in-flight state; \
     the monitor acts on its MAP guess, so simulated values are informational only";

/// Solves the CMDP at the configured point, optionally simulating it.
pub fn cmd_solve(config: &ExperimentConfig) -> Result<SolveReport, ExperimentError> {
    let model = config.model()?;
    let solution = solve_cmdp(&model, config.nu, &config.dual)?;
    let mut row = base_row(config);
    fill_solution(&mut row, &solution);
    let simulation = if config.with_simulation {
        let sim = simulate(&model, &MonitorPolicy::CmdpMixed(solution.mixed.clone()), &config.sim, false)?;
        row.fill(&sim.metrics, sim.j_dependent);
        Some(sim)
    } else {
        None
    };
    Ok(SolveReport { row, solution, simulation })
}

/// Decision grid over `(tau1, tau2)` for the source pair `(i, j)`, rows in
/// `tau1`-major order. Rows with `tau1 = 0` exist only when `i == j`.
pub fn cmd_policy_map(config: &ExperimentConfig, i: usize, j: usize) -> Result<Vec<PolicyMapRow>, ExperimentError> {
    let model = config.model()?;
    let n = model.n_sources();
    if i >= n || j >= n {
        return Err(ExperimentError::Usage(format!("state pair ({i}, {j}) is outside [0, {n})")));
    }
    let solution = solve_cmdp(&model, config.nu, &config.dual)?;
    Ok(policy_grid(&model, &solution, i, j))
}

pub(crate) fn policy_grid(model: &MdpModel, solution: &CmdpSolution, i: usize, j: usize) -> Vec<PolicyMapRow> {
    let caps = model.truncation();
    let first = if i == j { 0 } else { 1 };
    let lookup = |p: &PurePolicy, t1: u32, t2: u32| -> u8 {
        p.action(model.index_of(MdpState::new(t1, t2, i, j)).expect("enumerated state")) as u8
    };
    let mixed = &solution.mixed;
    let dominant = mixed.dominant();
    let width = caps.tau2_max as usize;
    let mut grid = Vec::new();
    for t1 in first..=caps.tau1_max {
        for t2 in 1..=caps.tau2_max {
            grid.push((
                t1,
                t2,
                lookup(dominant, t1, t2),
                lookup(&mixed.pi_minus, t1, t2),
                lookup(&mixed.pi_plus, t1, t2),
            ));
        }
    }
    let at = |t1: u32, t2: u32| grid[(t1 - first) as usize * width + (t2 - 1) as usize].2;
    grid.iter()
        .map(|&(t1, t2, action, action_minus, action_plus)| {
            let monotone = action == 0 || (t1..=caps.tau1_max).all(|a| (t2..=caps.tau2_max).all(|b| at(a, b) == 1));
            PolicyMapRow { tau1: t1, tau2: t2, action, action_minus, action_plus, monotone }
        })
        .collect()
}

/// Solves every grid point of the configured sweep, in grid order. Each row
/// is written and flushed to `out` as soon as it is ready; a failing point
/// fills the `error` column and the sweep continues.
pub fn cmd_sweep<W: Write>(
    config: &ExperimentConfig,
    out: &mut csv::Writer<W>,
) -> Result<Vec<ResultRow>, ExperimentError> {
    let sweep = config
        .sweep
        .as_ref()
        .ok_or_else(|| ExperimentError::Usage("sweep needs one of sweep_p01, sweep_p10, sweep_q, sweep_nu".into()))?;
    let mut rows = Vec::with_capacity(sweep.values.len());
    for &value in &sweep.values {
        let point = config.at(sweep.axis, value).ok_or_else(|| {
            ExperimentError::Usage(format!("cannot sweep {} on a source that is not two-state", sweep.axis))
        })?;
        let mut row = match cmd_solve(&point) {
            Ok(report) => report.row,
            Err(e) => {
                let mut row = base_row(&point);
                row.error = Some(e.to_string());
                row
            }
        };
        row.axis = Some(sweep.axis.name());
        row.value = Some(value);
        out.serialize(&row)?;
        out.flush()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Result of `simulate`.
#[derive(Debug, Clone)]
pub struct SimulateReport {
    pub row: CompareRow,
    pub trace: Option<Vec<TraceRow>>,
    pub j_dependent: bool,
}

fn compare_row(config: &ExperimentConfig, axis: Option<&'static str>, policy: String, nu: Option<f64>) -> CompareRow {
    let flips = config.source.flips();
    CompareRow {
        axis,
        p01: flips.map(|f| f.0),
        p10: flips.map(|f| f.1),
        q: config.q,
        policy,
        nu,
        replications: 0,
        freq: None,
        freq_se: None,
        avg_aod: None,
        avg_aod_se: None,
        fresh_error: None,
        fresh_error_se: None,
        map_error: None,
        map_error_se: None,
        exact_aod: None,
        exact_freq: None,
        j_dependent: None,
        error: None,
    }
}

fn zero_wait_table(model: &MdpModel) -> PurePolicy {
    PurePolicy::from_fn(model, |s| if s.tau1 == 0 { Action::Request } else { Action::Wait })
}

/// Simulates the configured policy and reports its metrics next to the
/// exact values where the policy has an MDP table.
pub fn cmd_simulate(config: &ExperimentConfig, record_trace: bool) -> Result<SimulateReport, ExperimentError> {
    let model = config.model()?;
    let (policy, exact, nu) = match config.sim_policy {
        SimPolicyChoice::Cmdp => {
            let s = solve_cmdp(&model, config.nu, &config.dual)?;
            (MonitorPolicy::CmdpMixed(s.mixed.clone()), Some((s.j_mixed, s.f_mixed)), Some(config.nu))
        }
        SimPolicyChoice::ZeroWait => (MonitorPolicy::ZeroWait, Some(exact_of(&model, &zero_wait_table(&model))?), None),
        SimPolicyChoice::Clairvoyant => (MonitorPolicy::Clairvoyant, None, None),
        SimPolicyChoice::Periodic => (MonitorPolicy::Periodic(config.compare.periodic_k), None, None),
        SimPolicyChoice::Never | SimPolicyChoice::Always => {
            let a = if config.sim_policy == SimPolicyChoice::Never { Action::Wait } else { Action::Request };
            let table = PurePolicy::constant(&model, a);
            let exact = exact_of(&model, &table)?;
            (MonitorPolicy::PureTable(table), Some(exact), None)
        }
    };
    let name = match config.sim_policy {
        SimPolicyChoice::Never => "never".to_string(),
        SimPolicyChoice::Always => "always".to_string(),
        _ => policy.name(),
    };
    let sim = simulate(&model, &policy, &config.sim, record_trace)?;
    let mut row = compare_row(config, None, name, nu);
    row.fill(&sim.metrics);
    row.exact_aod = exact.map(|e| e.0);
    row.exact_freq = exact.map(|e| e.1);
    row.j_dependent = Some(sim.j_dependent);
    Ok(SimulateReport {
        row,
        trace: sim.trace.map(|t| t.iter().map(TraceRow::from).collect()),
        j_dependent: sim.j_dependent,
    })
}

fn exact_of(model: &MdpModel, table: &PurePolicy) -> Result<(f64, f64), SolverError> {
    let e = evaluate_policy(model, table)?;
    Ok((e.avg_cost, e.avg_frequency))
}

/// Simulates ZeroWait, Clairvoyant, Periodic(k) and the CMDP policy at
/// every `compare_nu` over the flip-probability grid. With both axes
/// configured the grid is swept once over `p10` (fixed `p01`) and once over
/// `p01` (fixed `p10`). Rows are flushed as they complete.
pub fn cmd_compare<W: Write>(
    config: &ExperimentConfig,
    out: &mut csv::Writer<W>,
) -> Result<Vec<CompareRow>, ExperimentError> {
    if config.source.flips().is_none() {
        return Err(ExperimentError::Usage("compare needs a two-state source (p01, p10)".into()));
    }
    let mut rows = Vec::new();
    for &axis in &config.compare.axes {
        for &value in &config.compare.grid {
            let point = config.at(axis, value).expect("two-state source");
            for row in compare_point(&point, axis.name()) {
                out.serialize(&row)?;
                out.flush()?;
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

fn compare_point(config: &ExperimentConfig, axis: &'static str) -> Vec<CompareRow> {
    let model = match config.model() {
        Ok(m) => m,
        Err(e) => {
            let mut row = compare_row(config, Some(axis), "model".into(), None);
            row.error = Some(e.to_string());
            return vec![row];
        }
    };
    let mut rows = Vec::new();
    let run = |policy: MonitorPolicy, nu: Option<f64>, exact: Option<(f64, f64)>, rows: &mut Vec<CompareRow>| {
        let mut row = compare_row(config, Some(axis), policy.name(), nu);
        match simulate(&model, &policy, &config.sim, false) {
            Ok(sim) => {
                row.fill(&sim.metrics);
                row.j_dependent = Some(sim.j_dependent);
                row.exact_aod = exact.map(|e| e.0);
                row.exact_freq = exact.map(|e| e.1);
            }
            Err(e) => row.error = Some(e.to_string()),
        }
        rows.push(row);
    };
    run(MonitorPolicy::ZeroWait, None, exact_of(&model, &zero_wait_table(&model)).ok(), &mut rows);
    run(MonitorPolicy::Clairvoyant, None, None, &mut rows);
    run(MonitorPolicy::Periodic(config.compare.periodic_k), None, None, &mut rows);
    for &nu in &config.compare.nu {
        match solve_cmdp(&model, nu, &config.dual) {
            Ok(s) => run(MonitorPolicy::CmdpMixed(s.mixed), Some(nu), Some((s.j_mixed, s.f_mixed)), &mut rows),
            Err(e) => {
                let mut row = compare_row(config, Some(axis), "cmdp".into(), Some(nu));
                row.error = Some(e.to_string());
                rows.push(row);
            }
        }
    }
    rows
}

/// Writes `rows` with a header row to `path`, or to stdout when `path` is
/// `None`.
pub fn write_rows<T: Serialize>(path: Option<&Path>, rows: &[T]) -> Result<(), ExperimentError> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// CSV writer on `path`, or on stdout when `path` is `None`.
pub fn csv_writer(path: Option<&Path>) -> Result<csv::Writer<Box<dyn Write>>, ExperimentError> {
    let sink: Box<dyn Write> = match path {
        Some(p) => Box::new(std::fs::File::create(p)?),
        None => Box::new(std::io::stdout()),
    };
    Ok(csv::Writer::from_writer(sink))
}
