//! Average-cost solver for the Lagrangian-relaxed MDP.
//!
//! [`rvi_solve`] runs relative value iteration on the per-slot cost
//! `c(s, u) + lambda * u`. Iterates are anchored at a reference state and the
//! loop stops when the span (max minus min) of successive bias differences
//! falls below the tolerance.
//!
//! The Bellman operator is applied to the lazy kernel `alpha I + (1 - alpha) P`.
//! Truncated counters can produce periodic induced chains (for `q = 1` every
//! threshold policy cycles deterministically), and plain RVI oscillates on
//! those. The lazy kernel has the same optimal policies and bias; its gain is
//! scaled by `1 - alpha`, which is undone when reporting.
//!
//! [`evaluate_policy`] computes exact long-run averages of a pure policy from
//! the occupation measure of its induced chain, started from the source's
//! stationary law at the reset states `(0, 1, x, x)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::markov::MarkovError;
use crate::mdp::{Action, MdpError, MdpModel, MdpState};

/// Self-loop weight of the lazy kernel used by both RVI and evaluation.
pub const LAZINESS: f64 = 0.5;

const EVAL_TOLERANCE: f64 = 1e-12;
const EVAL_MAX_ITERATIONS: usize = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("relative value iteration stopped after {iterations} iterations with span {span:e}")]
    RviNotConverged { iterations: usize, span: f64 },
    #[error("policy evaluation did not converge after {iterations} iterations (last change {change:e})")]
    EvaluationNotConverged { iterations: usize, change: f64 },
    #[error("policy has {got} entries but the model has {expected} states")]
    PolicySize { got: usize, expected: usize },
    #[error("Lagrange multiplier must be finite and >= 0, got {0}")]
    InvalidLambda(f64),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Markov(#[from] MarkovError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RviConfig {
    pub span_tolerance: f64,
    pub max_iterations: usize,
    pub reference_state: MdpState,
}

impl Default for RviConfig {
    fn default() -> Self {
        RviConfig { span_tolerance: 1e-9, max_iterations: 1_000_000, reference_state: MdpState::new(0, 1, 0, 0) }
    }
}

impl RviConfig {
    fn validate(&self, model: &MdpModel) -> Result<usize, SolverError> {
        if !(self.span_tolerance > 0.0) {
            return Err(SolverError::InvalidConfig(format!("span_tolerance must be > 0, got {}", self.span_tolerance)));
        }
        if self.max_iterations == 0 {
            return Err(SolverError::InvalidConfig("max_iterations must be >= 1".into()));
        }
        Ok(model.index_of(self.reference_state)?)
    }
}

/// Deterministic stationary policy: one action per enumerated state.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PurePolicy {
    actions: Vec<Action>,
}

impl PurePolicy {
    pub fn new(actions: Vec<Action>) -> Self {
        PurePolicy { actions }
    }

    pub fn constant(model: &MdpModel, action: Action) -> Self {
        PurePolicy { actions: vec![action; model.num_states()] }
    }

    pub fn from_fn(model: &MdpModel, f: impl Fn(MdpState) -> Action) -> Self {
        PurePolicy { actions: model.states().iter().map(|&s| f(s)).collect() }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    #[inline]
    pub fn action(&self, index: usize) -> Action {
        self.actions[index]
    }

    pub fn action_at(&self, model: &MdpModel, s: MdpState) -> Result<Action, MdpError> {
        Ok(self.actions[model.index_of(s)?])
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    /// True when the action never depends on the unobservable `j` coordinate,
    /// i.e. for every `(tau1 > 0, tau2, i)` all `j` share one action.
    pub fn is_j_independent(&self, model: &MdpModel) -> bool {
        let n = model.n_sources();
        let t = model.truncation();
        for tau1 in 1..=t.tau1_max {
            for tau2 in 1..=t.tau2_max {
                for i in 0..n {
                    let first = self.actions[model.index_unchecked(MdpState::new(tau1, tau2, i, 0))];
                    let differs =
                        (1..n).any(|j| self.actions[model.index_unchecked(MdpState::new(tau1, tau2, i, j))] != first);
                    if differs {
                        return false;
                    }
                }
            }
        }
        true
    }

    fn check_size(&self, model: &MdpModel) -> Result<(), SolverError> {
        if self.actions.len() != model.num_states() {
            return Err(SolverError::PolicySize { got: self.actions.len(), expected: model.num_states() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RviSolution {
    pub policy: PurePolicy,
    /// Optimal average relaxed cost per slot.
    pub gain: f64,
    /// Relative values, zero at the reference state.
    pub bias: Vec<f64>,
    pub iterations: usize,
    pub span: f64,
}

impl RviSolution {
    /// Largest `|min_u [c + lambda u + P h] - (g + h(s))|` over all states.
    pub fn max_bellman_residual(&self, model: &MdpModel, lambda: f64) -> f64 {
        (0..model.num_states())
            .map(|s| {
                let (best, _) = greedy(model, lambda, &self.bias, s);
                (best - self.gain - self.bias[s]).abs()
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct PolicyEvaluation {
    /// Long-run average AoD per slot.
    pub avg_cost: f64,
    /// Long-run fraction of slots with a request.
    pub avg_frequency: f64,
    /// Limiting occupation measure over model states.
    pub occupation: Vec<f64>,
    pub iterations: usize,
}

impl PolicyEvaluation {
    pub fn relaxed_cost(&self, lambda: f64) -> f64 {
        self.avg_cost + lambda * self.avg_frequency
    }
}

/// Relaxed Q-value minimisation at one state; exact ties go to `Wait`.
#[inline]
fn greedy(model: &MdpModel, lambda: f64, h: &[f64], s: usize) -> (f64, Action) {
    let q_wait = model.cost_at(s, Action::Wait) + expect(model.kernel_at(s, Action::Wait), h);
    let q_req = model.cost_at(s, Action::Request) + lambda + expect(model.kernel_at(s, Action::Request), h);
    if q_req < q_wait {
        (q_req, Action::Request)
    } else {
        (q_wait, Action::Wait)
    }
}

#[inline]
fn expect(row: &[(usize, f64)], h: &[f64]) -> f64 {
    row.iter().map(|&(d, p)| p * h[d]).sum()
}

/// Solves the `lambda`-relaxed average-cost MDP by relative value iteration.
pub fn rvi_solve(model: &MdpModel, lambda: f64, config: &RviConfig) -> Result<RviSolution, SolverError> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(SolverError::InvalidLambda(lambda));
    }
    let reference = config.validate(model)?;
    let n = model.num_states();
    let mut h = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut span = f64::INFINITY;

    for iteration in 1..=config.max_iterations {
        for s in 0..n {
            let (best, _) = greedy(model, lambda, &h, s);
            next[s] = (1.0 - LAZINESS) * best + LAZINESS * h[s];
        }
        let offset = next[reference];
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in 0..n {
            let delta = next[s] - h[s];
            lo = lo.min(delta);
            hi = hi.max(delta);
            next[s] -= offset;
        }
        std::mem::swap(&mut h, &mut next);
        span = hi - lo;
        if span <= config.span_tolerance {
            let gain = 0.5 * (lo + hi) / (1.0 - LAZINESS);
            let policy = PurePolicy { actions: (0..n).map(|s| greedy(model, lambda, &h, s).1).collect() };
            return Ok(RviSolution { policy, gain, bias: h, iterations: iteration, span });
        }
    }
    Err(SolverError::RviNotConverged { iterations: config.max_iterations, span })
}

/// Initial law: a sample of `x ~ pi` has just been delivered.
pub(crate) fn initial_distribution(model: &MdpModel) -> Result<Vec<f64>, SolverError> {
    let pi = model.dtmc().stationary()?.pi;
    let mut mu = vec![0.0; model.num_states()];
    for (x, p) in pi.into_iter().enumerate() {
        mu[model.index_unchecked(model.reset_state(x))] = p;
    }
    Ok(mu)
}

/// Exact long-run AoD and request frequency of a pure policy.
pub fn evaluate_policy(model: &MdpModel, policy: &PurePolicy) -> Result<PolicyEvaluation, SolverError> {
    policy.check_size(model)?;
    let n = model.num_states();
    let mut x = initial_distribution(model)?;
    let mut next = vec![0.0; n];
    let mut change = f64::INFINITY;
    for iteration in 1..=EVAL_MAX_ITERATIONS {
        for (v, &xs) in next.iter_mut().zip(&x) {
            *v = LAZINESS * xs;
        }
        for s in 0..n {
            let mass = (1.0 - LAZINESS) * x[s];
            if mass == 0.0 {
                continue;
            }
            for &(d, p) in model.kernel_at(s, policy.actions[s]) {
                next[d] += mass * p;
            }
        }
        change = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut x, &mut next);
        if change <= EVAL_TOLERANCE {
            let total: f64 = x.iter().sum();
            x.iter_mut().for_each(|v| *v /= total);
            let mut avg_cost = 0.0;
            let mut avg_frequency = 0.0;
            for (s, &occ) in x.iter().enumerate() {
                let u = policy.actions[s];
                avg_cost += occ * model.cost_at(s, u);
                avg_frequency += occ * u.as_f64();
            }
            return Ok(PolicyEvaluation {
                avg_cost: avg_cost.clamp(0.0, 1.0),
                avg_frequency: avg_frequency.clamp(0.0, 1.0),
                occupation: x,
                iterations: iteration,
            });
        }
    }
    Err(SolverError::EvaluationNotConverged { iterations: EVAL_MAX_ITERATIONS, change })
}
