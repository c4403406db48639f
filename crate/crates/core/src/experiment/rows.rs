//! CSV row types. Column names are the field names, in declaration order;
//! optional values are written as empty cells.

use serde::Serialize;

use crate::sim::{Estimate, SimMetrics, TraceRecord};

/// One solved experiment point (`solve`, `sweep`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    /// Swept parameter, empty for `solve`.
    pub axis: Option<&'static str>,
    pub value: Option<f64>,
    pub p01: Option<f64>,
    pub p10: Option<f64>,
    pub q: f64,
    pub nu: f64,
    pub tau1_max: u32,
    pub tau2_max: u32,
    pub cost_variant: &'static str,
    pub lambda_star: Option<f64>,
    /// Probability of following the `lambda* - epsilon` policy.
    pub mu: Option<f64>,
    pub lambda_minus: Option<f64>,
    pub j_minus: Option<f64>,
    pub f_minus: Option<f64>,
    pub lambda_plus: Option<f64>,
    pub j_plus: Option<f64>,
    pub f_plus: Option<f64>,
    pub j_exact: Option<f64>,
    pub f_exact: Option<f64>,
    pub constraint_active: Option<bool>,
    pub sim_replications: Option<usize>,
    pub sim_aod: Option<f64>,
    pub sim_aod_se: Option<f64>,
    pub sim_freq: Option<f64>,
    pub sim_freq_se: Option<f64>,
    pub sim_fresh_error: Option<f64>,
    pub sim_fresh_error_se: Option<f64>,
    pub sim_map_error: Option<f64>,
    pub sim_map_error_se: Option<f64>,
    /// The deployed table depends on the unobservable in-flight state.
    pub j_dependent: Option<bool>,
    pub error: Option<String>,
}

impl ResultRow {
    pub(crate) fn fill(&mut self, m: &SimMetrics, j_dependent: bool) {
        self.sim_replications = Some(m.replications);
        (self.sim_aod, self.sim_aod_se) = (Some(m.avg_aod.mean), m.avg_aod.std_error);
        (self.sim_freq, self.sim_freq_se) = (Some(m.freq.mean), m.freq.std_error);
        (self.sim_fresh_error, self.sim_fresh_error_se) = (Some(m.fresh_error.mean), m.fresh_error.std_error);
        (self.sim_map_error, self.sim_map_error_se) = (Some(m.map_error.mean), m.map_error.std_error);
        self.j_dependent = Some(j_dependent);
    }
}

/// One cell of a decision grid (`policy-map`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PolicyMapRow {
    pub tau1: u32,
    pub tau2: u32,
    /// Action of the component carrying most of the mixing weight.
    pub action: u8,
    pub action_minus: u8,
    pub action_plus: u8,
    /// `action` is 1 here only if it is 1 at every cell with larger
    /// `tau1` and `tau2`.
    pub monotone: bool,
}

/// One (policy, source) point of a comparison (`compare`) or a single
/// simulation (`simulate`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    /// Swept flip probability, empty for `simulate`.
    pub axis: Option<&'static str>,
    pub p01: Option<f64>,
    pub p10: Option<f64>,
    pub q: f64,
    pub policy: String,
    /// Frequency bound of a CMDP policy, empty for baselines.
    pub nu: Option<f64>,
    pub replications: usize,
    pub freq: Option<f64>,
    pub freq_se: Option<f64>,
    pub avg_aod: Option<f64>,
    pub avg_aod_se: Option<f64>,
    pub fresh_error: Option<f64>,
    pub fresh_error_se: Option<f64>,
    pub map_error: Option<f64>,
    pub map_error_se: Option<f64>,
    /// Exact values from the MDP, where the policy has a table.
    pub exact_aod: Option<f64>,
    pub exact_freq: Option<f64>,
    pub j_dependent: Option<bool>,
    pub error: Option<String>,
}

impl CompareRow {
    pub(crate) fn fill(&mut self, m: &SimMetrics) {
        let split = |e: &Estimate| (Some(e.mean), e.std_error);
        (self.freq, self.freq_se) = split(&m.freq);
        (self.avg_aod, self.avg_aod_se) = split(&m.avg_aod);
        (self.fresh_error, self.fresh_error_se) = split(&m.fresh_error);
        (self.map_error, self.map_error_se) = split(&m.map_error);
        self.replications = m.replications;
    }
}

/// One simulated slot (`simulate --trace`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TraceRow {
    pub t: u64,
    pub true_state: usize,
    pub i: usize,
    pub tau1: u32,
    pub tau2: u32,
    pub action: u8,
    pub success: bool,
}

impl From<&TraceRecord> for TraceRow {
    fn from(r: &TraceRecord) -> Self {
        TraceRow {
            t: r.t,
            true_state: r.true_state,
            i: r.i,
            tau1: r.tau1,
            tau2: r.tau2,
            action: r.action as u8,
            success: r.success,
        }
    }
}
