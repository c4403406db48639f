//! Lagrangian dual of the frequency-constrained problem.
//!
//! The request frequency `f(lambda)` of the lambda-optimal pure policy is
//! nonincreasing in `lambda`, so the multiplier at which the constraint
//! `f <= nu` starts to bind is located by bisection on `f(lambda) - nu`.
//! Two pure policies solved just below and just above that multiplier are
//! then mixed with probability `mu` so the frequency constraint holds with
//! equality.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::MdpModel;
use crate::rvi::{evaluate_policy, rvi_solve, PurePolicy, RviConfig, SolverError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DualError {
    #[error("frequency bound nu = {0} must lie in (0, 1]")]
    InvalidNu(f64),
    #[error("invalid dual configuration: {0}")]
    InvalidConfig(String),
    #[error("f(lambda_hi = {lambda_hi}) = {f_hi} still exceeds nu = {nu}; increase lambda_hi")]
    Bracket { lambda_hi: f64, f_hi: f64, nu: f64 },
    #[error("mixing needs f_minus > f_plus, got f_minus = {f_minus}, f_plus = {f_plus}")]
    InvertedFrequencies { f_minus: f64, f_plus: f64 },
    #[error("nu = {nu} lies outside [f_plus, f_minus] = [{f_plus}, {f_minus}]")]
    NuOutsideBracket { nu: f64, f_minus: f64, f_plus: f64 },
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualConfig {
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub lambda_tolerance: f64,
    /// Offset for the two bracketing multipliers `lambda* -/+ epsilon`.
    pub epsilon: f64,
    pub rvi: RviConfig,
}

impl Default for DualConfig {
    fn default() -> Self {
        DualConfig { lambda_lo: 0.0, lambda_hi: 50.0, lambda_tolerance: 1e-4, epsilon: 1e-4, rvi: RviConfig::default() }
    }
}

impl DualConfig {
    fn validate(&self) -> Result<(), DualError> {
        if !(self.lambda_lo >= 0.0 && self.lambda_lo < self.lambda_hi && self.lambda_hi.is_finite()) {
            return Err(DualError::InvalidConfig(format!(
                "need 0 <= lambda_lo < lambda_hi, got [{}, {}]",
                self.lambda_lo, self.lambda_hi
            )));
        }
        if !(self.lambda_tolerance > 0.0) {
            return Err(DualError::InvalidConfig("lambda_tolerance must be > 0".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(DualError::InvalidConfig("epsilon must be > 0".into()));
        }
        Ok(())
    }
}

/// One solve of the relaxed problem at a fixed multiplier.
#[derive(Debug, Clone)]
pub struct LambdaProbe {
    pub lambda: f64,
    pub gain: f64,
    /// Exact request frequency of the lambda-optimal pure policy.
    pub frequency: f64,
    /// Exact average AoD of the same policy.
    pub aod: f64,
    pub policy: PurePolicy,
}

/// Solves the relaxed MDP at `lambda` and evaluates the resulting policy.
pub fn frequency_of_lambda(model: &MdpModel, lambda: f64, config: &RviConfig) -> Result<LambdaProbe, DualError> {
    let sol = rvi_solve(model, lambda, config)?;
    let eval = evaluate_policy(model, &sol.policy)?;
    Ok(LambdaProbe { lambda, gain: sol.gain, frequency: eval.avg_frequency, aod: eval.avg_cost, policy: sol.policy })
}

/// `mu = (nu - f_plus) / (f_minus - f_plus)`, the weight on the
/// higher-frequency policy.
pub fn mixing_probability(f_minus: f64, f_plus: f64, nu: f64) -> Result<f64, DualError> {
    if !(f_minus > f_plus) {
        return Err(DualError::InvertedFrequencies { f_minus, f_plus });
    }
    if !(f_plus <= nu && nu <= f_minus) {
        return Err(DualError::NuOutsideBracket { nu, f_minus, f_plus });
    }
    Ok(((nu - f_plus) / (f_minus - f_plus)).clamp(0.0, 1.0))
}

/// Randomisation between two pure policies; `mu` is the probability of
/// following `pi_minus`.
#[derive(Debug, Clone)]
pub struct MixedPolicy {
    pub pi_minus: PurePolicy,
    pub pi_plus: PurePolicy,
    pub mu: f64,
}

impl MixedPolicy {
    pub fn pure(policy: PurePolicy) -> Self {
        MixedPolicy { pi_minus: policy.clone(), pi_plus: policy, mu: 1.0 }
    }

    /// The component carrying at least half the weight.
    pub fn dominant(&self) -> &PurePolicy {
        if self.mu >= 0.5 {
            &self.pi_minus
        } else {
            &self.pi_plus
        }
    }

    pub fn is_pure(&self) -> bool {
        self.mu == 0.0 || self.mu == 1.0 || self.pi_minus == self.pi_plus
    }
}

/// Exact performance of one mixture component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComponentStats {
    pub lambda: f64,
    pub aod: f64,
    pub frequency: f64,
}

impl From<&LambdaProbe> for ComponentStats {
    fn from(p: &LambdaProbe) -> Self {
        ComponentStats { lambda: p.lambda, aod: p.aod, frequency: p.frequency }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DualTracePoint {
    pub lambda: f64,
    pub gain: f64,
    pub frequency: f64,
}

#[derive(Debug, Clone)]
pub struct CmdpSolution {
    pub nu: f64,
    pub lambda_star: f64,
    pub mixed: MixedPolicy,
    pub minus: ComponentStats,
    pub plus: ComponentStats,
    /// Average AoD of the mixture.
    pub j_mixed: f64,
    /// Average request frequency of the mixture.
    pub f_mixed: f64,
    /// False when the unconstrained optimum already satisfies `f <= nu`.
    pub constraint_active: bool,
    pub trace: Vec<DualTracePoint>,
}

impl CmdpSolution {
    fn from_pure(nu: f64, probe: &LambdaProbe, active: bool, trace: Vec<DualTracePoint>) -> Self {
        let stats = ComponentStats::from(probe);
        CmdpSolution {
            nu,
            lambda_star: probe.lambda,
            mixed: MixedPolicy::pure(probe.policy.clone()),
            minus: stats,
            plus: stats,
            j_mixed: probe.aod,
            f_mixed: probe.frequency,
            constraint_active: active,
            trace,
        }
    }

    /// Largest value of the dual function `gain(lambda) - lambda nu` seen on
    /// the probe trace.
    pub fn best_dual_bound(&self) -> f64 {
        self.trace.iter().map(|p| p.gain - p.lambda * self.nu).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Solves `min AoD  s.t.  request frequency <= nu`.
pub fn solve_cmdp(model: &MdpModel, nu: f64, config: &DualConfig) -> Result<CmdpSolution, DualError> {
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(DualError::InvalidNu(nu));
    }
    config.validate()?;
    let mut trace = Vec::new();
    let mut probe = |lambda: f64| -> Result<LambdaProbe, DualError> {
        let p = frequency_of_lambda(model, lambda, &config.rvi)?;
        trace.push(DualTracePoint { lambda, gain: p.gain, frequency: p.frequency });
        Ok(p)
    };

    let mut lo = probe(config.lambda_lo)?;
    if lo.frequency <= nu {
        return Ok(CmdpSolution::from_pure(nu, &lo, false, trace));
    }
    let mut hi = probe(config.lambda_hi)?;
    if hi.frequency > nu {
        return Err(DualError::Bracket { lambda_hi: config.lambda_hi, f_hi: hi.frequency, nu });
    }
    while hi.lambda - lo.lambda > config.lambda_tolerance {
        let mid = probe(0.5 * (lo.lambda + hi.lambda))?;
        if mid.frequency == nu {
            return Ok(CmdpSolution::from_pure(nu, &mid, true, trace));
        }
        if mid.frequency > nu {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lambda_star = 0.5 * (lo.lambda + hi.lambda);
    let mut minus = probe((lambda_star - config.epsilon).max(0.0))?;
    let mut plus = probe(lambda_star + config.epsilon)?;
    // The offsets may fall inside the final bracket when epsilon is smaller
    // than half its width; fall back to the bracket ends.
    if minus.frequency <= nu {
        minus = lo;
    }
    if plus.frequency > nu {
        plus = hi;
    }
    if plus.frequency == nu {
        return Ok(CmdpSolution { lambda_star, ..CmdpSolution::from_pure(nu, &plus, true, trace) });
    }
    let mu = mixing_probability(minus.frequency, plus.frequency, nu)?;
    Ok(CmdpSolution {
        nu,
        lambda_star,
        j_mixed: mu * minus.aod + (1.0 - mu) * plus.aod,
        f_mixed: mu * minus.frequency + (1.0 - mu) * plus.frequency,
        minus: ComponentStats::from(&minus),
        plus: ComponentStats::from(&plus),
        mixed: MixedPolicy { pi_minus: minus.policy, pi_plus: plus.policy, mu },
        constraint_active: true,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::Dtmc;
    use crate::mdp::{CostVariant, TruncationConfig};
    use approx::assert_abs_diff_eq;

    fn default_model() -> MdpModel {
        let d = Dtmc::two_state(0.02, 0.01).unwrap();
        MdpModel::new(&d, 0.8, TruncationConfig::default(), CostVariant::InclusiveSelf).unwrap()
    }

    #[test]
    fn mixing_probability_examples() {
        assert_abs_diff_eq!(mixing_probability(0.12, 0.08, 0.1).unwrap(), 0.5, epsilon = 1e-12);
        assert_eq!(mixing_probability(0.12, 0.08, 0.08).unwrap(), 0.0);
        assert_eq!(mixing_probability(0.12, 0.08, 0.12).unwrap(), 1.0);
        assert!(matches!(mixing_probability(0.08, 0.12, 0.1), Err(DualError::InvertedFrequencies { .. })));
        assert!(matches!(mixing_probability(0.12, 0.08, 0.2), Err(DualError::NuOutsideBracket { .. })));
    }

    #[test]
    fn inactive_constraint_at_nu_one() {
        let m = default_model();
        let sol = solve_cmdp(&m, 1.0, &DualConfig::default()).unwrap();
        assert!(!sol.constraint_active);
        assert_eq!(sol.lambda_star, 0.0);
        assert_eq!(sol.mixed.mu, 1.0);
        assert!(sol.mixed.is_pure());
        assert_eq!(sol.trace.len(), 1);
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = default_model();
        assert!(matches!(solve_cmdp(&m, 0.0, &DualConfig::default()), Err(DualError::InvalidNu(_))));
        let cfg = DualConfig { lambda_lo: 1.0, lambda_hi: 0.5, ..Default::default() };
        assert!(matches!(solve_cmdp(&m, 0.1, &cfg), Err(DualError::InvalidConfig(_))));
        let cfg = DualConfig { lambda_hi: 1e-3, ..Default::default() };
        assert!(matches!(solve_cmdp(&m, 0.01, &cfg), Err(DualError::Bracket { .. })));
    }

    #[test]
    fn large_lambda_means_no_long_run_sampling() {
        let m = default_model();
        let p = frequency_of_lambda(&m, 50.0, &RviConfig::default()).unwrap();
        assert!(p.frequency < 1e-9);
    }

    #[test]
    fn active_constraint_binds_with_equality() {
        let m = default_model();
        let sol = solve_cmdp(&m, 0.1, &DualConfig::default()).unwrap();
        assert!(sol.constraint_active);
        assert!(sol.f_mixed <= 0.1 + 1e-6);
        if !sol.mixed.is_pure() {
            assert_abs_diff_eq!(sol.f_mixed, 0.1, epsilon = 1e-6);
            let mu = sol.mixed.mu;
            assert_abs_diff_eq!(sol.j_mixed, mu * sol.minus.aod + (1.0 - mu) * sol.plus.aod, epsilon = 1e-12);
        }
        assert!((0.0..=1.0).contains(&sol.j_mixed));
        for p in &sol.trace {
            assert!(p.gain - p.lambda * 0.1 <= sol.j_mixed + 1e-6, "weak duality at {p:?}");
        }
        let mut sorted = sol.trace.clone();
        sorted.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
        for w in sorted.windows(2) {
            assert!(w[1].frequency <= w[0].frequency + 1e-12);
        }
        // lambda = 0 is the highest frequency probed.
        let f0 = sol.trace.iter().find(|p| p.lambda == 0.0).unwrap().frequency;
        assert!(sol.trace.iter().all(|p| p.frequency <= f0));
    }
}
