//! The truncated Age-of-Detection MDP.
//!
//! A state `(tau1, tau2, i, j)` records the gap between generation of the
//! freshest received sample and the latest request (`tau1`), the slots since
//! the latest request (`tau2`), the DTMC state carried by the freshest
//! received sample (`i`) and the state carried by the latest request's sample
//! (`j`). When `tau1 = 0` the latest sample has been delivered, so `i = j`.
//!
//! Counters are truncated at `tau1_max` and `tau2_max`. A failure branch that
//! would push `tau2` past its cap is folded into the success branch, and a
//! `tau1` destination beyond its cap saturates. Transition exponents are taken
//! before saturation.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::markov::Dtmc;

/// Default ceiling on the enumerated state count.
pub const DEFAULT_MAX_STATES: usize = 5_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("channel success probability q = {0} must lie in (0, 1]")]
    InvalidSuccessProbability(f64),
    #[error("truncation bounds must be >= 1 (tau1_max = {tau1_max}, tau2_max = {tau2_max})")]
    InvalidTruncation { tau1_max: u32, tau2_max: u32 },
    #[error("state space has {states} states, above the ceiling of {ceiling}")]
    StateSpaceTooLarge { states: usize, ceiling: usize },
    #[error("{0} is not a state of this model")]
    InvalidState(MdpState),
}

/// Monitor decision in one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Wait = 0,
    Request = 1,
}

impl Action {
    pub const ALL: [Action; 2] = [Action::Wait, Action::Request];

    #[inline]
    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }

    #[inline]
    pub fn from_bit(bit: u8) -> Action {
        if bit == 0 {
            Action::Wait
        } else {
            Action::Request
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MdpState {
    pub tau1: u32,
    pub tau2: u32,
    pub i: usize,
    pub j: usize,
}

impl MdpState {
    pub const fn new(tau1: u32, tau2: u32, i: usize, j: usize) -> Self {
        MdpState { tau1, tau2, i, j }
    }
}

impl fmt::Display for MdpState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.tau1, self.tau2, self.i, self.j)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncationConfig {
    pub tau1_max: u32,
    pub tau2_max: u32,
}

impl Default for TruncationConfig {
    fn default() -> Self {
        TruncationConfig { tau1_max: 20, tau2_max: 20 }
    }
}

impl TruncationConfig {
    /// Largest matrix power the kernel needs.
    pub fn power_bound(&self) -> usize {
        (self.tau1_max + self.tau2_max) as usize
    }

    /// Closed-form state count `tau2_max * n + tau1_max * tau2_max * n^2`.
    pub fn state_count(&self, n: usize) -> usize {
        let t1 = self.tau1_max as usize;
        let t2 = self.tau2_max as usize;
        t2 * n + t1 * t2 * n * n
    }
}

/// Which form of the per-slot AoD cost to use.
///
/// `AsWrittenExclusive` drops the `j' = i` term from the sum, so the cost is
/// identically zero whenever `tau1 = 0`. `InclusiveSelf` sums over every
/// `j'`, which is the form under which the lossless-channel AoD equals the
/// age penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostVariant {
    AsWrittenExclusive,
    #[default]
    InclusiveSelf,
}

impl CostVariant {
    pub fn name(self) -> &'static str {
        match self {
            CostVariant::AsWrittenExclusive => "exclusive",
            CostVariant::InclusiveSelf => "inclusive",
        }
    }
}

/// Flat adjacency of the kernel: for state index `s` and action `u`, the
/// successors live in `entries[offsets[2s + u]..offsets[2s + u + 1]]`.
#[derive(Debug, Clone)]
struct Kernel {
    offsets: Vec<usize>,
    entries: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct MdpModel {
    dtmc: Dtmc,
    q: f64,
    trunc: TruncationConfig,
    variant: CostVariant,
    states: Vec<MdpState>,
    costs: Vec<[f64; 2]>,
    kernel: Kernel,
}

impl MdpModel {
    pub fn new(dtmc: &Dtmc, q: f64, trunc: TruncationConfig, variant: CostVariant) -> Result<Self, MdpError> {
        Self::with_ceiling(dtmc, q, trunc, variant, DEFAULT_MAX_STATES)
    }

    /// Enumerates the state space, refusing models above `max_states`.
    pub fn with_ceiling(
        dtmc: &Dtmc,
        q: f64,
        trunc: TruncationConfig,
        variant: CostVariant,
        max_states: usize,
    ) -> Result<Self, MdpError> {
        if !(q > 0.0 && q <= 1.0) {
            return Err(MdpError::InvalidSuccessProbability(q));
        }
        if trunc.tau1_max == 0 || trunc.tau2_max == 0 {
            return Err(MdpError::InvalidTruncation { tau1_max: trunc.tau1_max, tau2_max: trunc.tau2_max });
        }
        let n = dtmc.n();
        let count = trunc.state_count(n);
        if count > max_states {
            return Err(MdpError::StateSpaceTooLarge { states: count, ceiling: max_states });
        }
        let dtmc =
            if dtmc.cache_bound() < trunc.power_bound() { dtmc.rebound(trunc.power_bound()) } else { dtmc.clone() };

        let mut states = Vec::with_capacity(count);
        for tau2 in 1..=trunc.tau2_max {
            for i in 0..n {
                states.push(MdpState::new(0, tau2, i, i));
            }
        }
        for tau1 in 1..=trunc.tau1_max {
            for tau2 in 1..=trunc.tau2_max {
                for i in 0..n {
                    for j in 0..n {
                        states.push(MdpState::new(tau1, tau2, i, j));
                    }
                }
            }
        }
        debug_assert_eq!(states.len(), count);

        let mut model = MdpModel {
            dtmc,
            q,
            trunc,
            variant,
            states,
            costs: Vec::new(),
            kernel: Kernel { offsets: vec![0], entries: Vec::new() },
        };
        model.costs = model.states.iter().map(|&s| model.cost_terms(s)).collect();
        let mut kernel = Kernel { offsets: Vec::with_capacity(2 * count + 1), entries: Vec::new() };
        kernel.offsets.push(0);
        for &s in &model.states {
            for u in Action::ALL {
                for (dest, p) in model.successors(s, u) {
                    kernel.entries.push((model.index_unchecked(dest), p));
                }
                kernel.offsets.push(kernel.entries.len());
            }
        }
        model.kernel = kernel;
        Ok(model)
    }

    pub fn dtmc(&self) -> &Dtmc {
        &self.dtmc
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn truncation(&self) -> TruncationConfig {
        self.trunc
    }

    pub fn variant(&self) -> CostVariant {
        self.variant
    }

    pub fn n_sources(&self) -> usize {
        self.dtmc.n()
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[MdpState] {
        &self.states
    }

    pub fn contains(&self, s: MdpState) -> bool {
        let n = self.n_sources();
        s.tau1 <= self.trunc.tau1_max
            && (1..=self.trunc.tau2_max).contains(&s.tau2)
            && s.i < n
            && s.j < n
            && (s.tau1 > 0 || s.i == s.j)
    }

    pub fn index_of(&self, s: MdpState) -> Result<usize, MdpError> {
        if self.contains(s) {
            Ok(self.index_unchecked(s))
        } else {
            Err(MdpError::InvalidState(s))
        }
    }

    #[inline]
    pub(crate) fn index_unchecked(&self, s: MdpState) -> usize {
        let n = self.n_sources();
        let t2 = self.trunc.tau2_max as usize;
        let tau2 = s.tau2 as usize - 1;
        if s.tau1 == 0 {
            tau2 * n + s.i
        } else {
            let base = t2 * n;
            let tau1 = s.tau1 as usize - 1;
            base + ((tau1 * t2 + tau2) * n + s.i) * n + s.j
        }
    }

    pub fn state_of(&self, index: usize) -> MdpState {
        self.states[index]
    }

    /// Per-slot AoD cost `c(s, u)`.
    pub fn cost(&self, s: MdpState, u: Action) -> Result<f64, MdpError> {
        Ok(self.costs[self.index_of(s)?][u as usize])
    }

    #[inline]
    pub(crate) fn cost_at(&self, index: usize, u: Action) -> f64 {
        self.costs[index][u as usize]
    }

    /// Successor distribution of `(s, u)`, with duplicate destinations merged
    /// and zero-probability branches dropped.
    pub fn transitions(&self, s: MdpState, u: Action) -> Result<Vec<(MdpState, f64)>, MdpError> {
        let idx = self.index_of(s)?;
        Ok(self.kernel_at(idx, u).iter().map(|&(d, p)| (self.states[d], p)).collect())
    }

    #[inline]
    pub(crate) fn kernel_at(&self, index: usize, u: Action) -> &[(usize, f64)] {
        let k = 2 * index + u as usize;
        &self.kernel.entries[self.kernel.offsets[k]..self.kernel.offsets[k + 1]]
    }

    /// The reset state `(0, 1, x, x)`, i.e. a sample of `x` was just received.
    pub fn reset_state(&self, x: usize) -> MdpState {
        MdpState::new(0, 1, x, x)
    }

    /// Missed-detection probability before the `(1 - q u)` factor is applied,
    /// followed by the costs for both actions.
    fn cost_terms(&self, s: MdpState) -> [f64; 2] {
        let d = &self.dtmc;
        let tau1 = s.tau1 as usize;
        let stay_exp = (s.tau2 - 1) as i32;
        let base = match self.variant {
            CostVariant::AsWrittenExclusive => {
                let cross: f64 = (0..d.n())
                    .filter(|&jp| jp != s.i)
                    .map(|jp| d.p_n(tau1, s.i, jp) * d.p(jp, jp).powi(stay_exp))
                    .sum();
                1.0 - d.p_n(tau1, s.i, s.i) - cross
            }
            CostVariant::InclusiveSelf => {
                let all: f64 = (0..d.n()).map(|jp| d.p_n(tau1, s.i, jp) * d.p(jp, jp).powi(stay_exp)).sum();
                1.0 - all
            }
        };
        let base = base.clamp(0.0, 1.0);
        [base, (1.0 - self.q) * base]
    }

    fn successors(&self, s: MdpState, u: Action) -> Vec<(MdpState, f64)> {
        let q = self.q;
        let mut out: Vec<(MdpState, f64)> = Vec::with_capacity(2 * self.n_sources());
        let mut push = |dest: MdpState, p: f64| {
            if p <= 0.0 {
                return;
            }
            match out.iter_mut().find(|(d, _)| *d == dest) {
                Some(entry) => entry.1 += p,
                None => out.push((dest, p)),
            }
        };
        match u {
            Action::Wait => {
                let tau2_next = (s.tau2 + 1).min(self.trunc.tau2_max);
                let success = MdpState::new(0, tau2_next, s.j, s.j);
                if s.tau2 >= self.trunc.tau2_max {
                    push(success, 1.0);
                } else {
                    push(MdpState::new(s.tau1, tau2_next, s.i, s.j), 1.0 - q);
                    push(success, q);
                }
            }
            Action::Request => {
                let exponent = (s.tau1 + s.tau2) as usize;
                let tau1_fail = (s.tau1 + s.tau2).min(self.trunc.tau1_max);
                for jp in 0..self.n_sources() {
                    let p = self.dtmc.p_n(exponent, s.i, jp);
                    push(MdpState::new(tau1_fail, 1, s.i, jp), p * (1.0 - q));
                    push(MdpState::new(0, 1, jp, jp), p * q);
                }
            }
        }
        out
    }
}
