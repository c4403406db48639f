//! Slot-level Monte Carlo of the physical monitoring system.
//!
//! Each slot: the source steps; the monitor decides whether to request a
//! fresh sample; on a request the sensor samples the true current state,
//! otherwise it keeps retransmitting the sample it holds; the channel
//! delivers with probability `q`. A delivered sample is usable from the
//! next slot on.
//!
//! The monitor's `(tau1, tau2)` counters saturate at the model's caps and
//! follow the same truncation as the MDP kernel (a pending sample is treated
//! as delivered once `tau2` hits its cap), so the per-slot AoD cost is
//! `MdpModel::cost` on the realised state. Estimation errors use the true
//! source state and the untruncated generation time of the freshest sample.
//!
//! Every replication draws from three independent ChaCha streams (source,
//! channel, policy mixing) keyed by `(seed, replication)`, so two policies run
//! with the same seed see the same source trajectory.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dual::MixedPolicy;
use crate::markov::{sample_row, Dtmc, MarkovError};
use crate::mdp::{Action, MdpModel, MdpState};
use crate::rvi::PurePolicy;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation configuration: {0}")]
    InvalidConfig(String),
    #[error("policy table has {got} entries but the model has {expected} states")]
    PolicySize { got: usize, expected: usize },
    #[error("aggregation needs at least one episode")]
    NoEpisodes,
    #[error(transparent)]
    Markov(#[from] MarkovError),
}

/// How a [`MixedPolicy`] is randomised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MixingMode {
    /// One component is drawn per episode with probability `mu`.
    #[default]
    Episode,
    /// A fresh draw in every slot where the two tables disagree.
    PerStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: u64,
    pub replications: usize,
    pub warmup: u64,
    pub seed: u64,
    pub mixing: MixingMode,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { horizon: 1_000_000, replications: 20, warmup: 10_000, seed: 0, mixing: MixingMode::Episode }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.horizon <= self.warmup {
            return Err(SimError::InvalidConfig(format!(
                "horizon ({}) must exceed warmup ({})",
                self.horizon, self.warmup
            )));
        }
        if self.replications == 0 {
            return Err(SimError::InvalidConfig("replications must be >= 1".into()));
        }
        Ok(())
    }
}

/// Request rule executed by the monitor.
#[derive(Debug, Clone)]
pub enum MonitorPolicy {
    CmdpMixed(MixedPolicy),
    PureTable(PurePolicy),
    /// Request as soon as the previous sample has been delivered.
    ZeroWait,
    /// Non-causal: request exactly when the source changes state.
    Clairvoyant,
    /// Request every `k`-th slot.
    Periodic(u32),
}

impl MonitorPolicy {
    pub fn name(&self) -> String {
        match self {
            MonitorPolicy::CmdpMixed(_) => "cmdp".into(),
            MonitorPolicy::PureTable(_) => "table".into(),
            MonitorPolicy::ZeroWait => "zero-wait".into(),
            MonitorPolicy::Clairvoyant => "clairvoyant".into(),
            MonitorPolicy::Periodic(k) => format!("periodic-{k}"),
        }
    }

    fn tables(&self) -> Vec<&PurePolicy> {
        match self {
            MonitorPolicy::CmdpMixed(m) => vec![&m.pi_minus, &m.pi_plus],
            MonitorPolicy::PureTable(p) => vec![p],
            _ => Vec::new(),
        }
    }

    /// True when a deployed table depends on the in-flight sample's state,
    /// which the monitor cannot observe.
    pub fn is_j_dependent(&self, model: &MdpModel) -> bool {
        self.tables().iter().any(|t| !t.is_j_independent(model))
    }

    fn validate(&self, model: &MdpModel) -> Result<(), SimError> {
        for t in self.tables() {
            if t.len() != model.num_states() {
                return Err(SimError::PolicySize { got: t.len(), expected: model.num_states() });
            }
        }
        if let MonitorPolicy::Periodic(0) = self {
            return Err(SimError::InvalidConfig("periodic policy needs k >= 1".into()));
        }
        if let MonitorPolicy::CmdpMixed(m) = self {
            if !(0.0..=1.0).contains(&m.mu) {
                return Err(SimError::InvalidConfig(format!("mixing probability {} outside [0, 1]", m.mu)));
            }
        }
        Ok(())
    }
}

/// One simulated slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub t: u64,
    pub true_state: usize,
    /// State carried by the freshest delivered sample.
    pub i: usize,
    pub tau1: u32,
    pub tau2: u32,
    pub action: Action,
    /// A sample was delivered at the end of this slot.
    pub success: bool,
    /// Reception time `T_R`, set on slots with a delivery.
    pub reception_time: Option<u64>,
    /// Per-slot AoD cost charged in this slot.
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeMetrics {
    pub avg_aod: f64,
    pub freq: f64,
    pub fresh_error: f64,
    pub map_error: f64,
    pub slots: u64,
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub metrics: EpisodeMetrics,
    pub trace: Option<Vec<TraceRecord>>,
}

/// Mean across replications with its standard error (absent for a single
/// replication).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: Option<f64>,
}

impl Estimate {
    fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        // Shifted by the first sample so identical inputs give exactly zero spread.
        let shift = xs[0];
        let offset = xs.iter().map(|x| x - shift).sum::<f64>() / n;
        let mean = shift + offset;
        let std_error = (xs.len() > 1).then(|| {
            let var = xs.iter().map(|x| (x - shift - offset).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        });
        Estimate { mean, std_error }
    }

    pub fn se_or_zero(&self) -> f64 {
        self.std_error.unwrap_or(0.0)
    }

    /// `|mean - target| <= k * SE`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.se_or_zero()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimMetrics {
    pub avg_aod: Estimate,
    pub freq: Estimate,
    pub fresh_error: Estimate,
    pub map_error: Estimate,
    pub replications: usize,
}

/// Means and standard errors across episodes.
pub fn aggregate(episodes: &[EpisodeMetrics]) -> Result<SimMetrics, SimError> {
    if episodes.is_empty() {
        return Err(SimError::NoEpisodes);
    }
    let col = |f: fn(&EpisodeMetrics) -> f64| -> Estimate {
        Estimate::from_samples(&episodes.iter().map(f).collect::<Vec<_>>())
    };
    Ok(SimMetrics {
        avg_aod: col(|e| e.avg_aod),
        freq: col(|e| e.freq),
        fresh_error: col(|e| e.fresh_error),
        map_error: col(|e| e.map_error),
        replications: episodes.len(),
    })
}

/// MAP estimate of the current source state given the freshest sample `i`
/// and the `elapsed` slots since it was generated. Beyond the cached powers
/// the stationary distribution stands in for `P^elapsed`. Ties go to the
/// smaller state index.
pub fn map_estimate(dtmc: &Dtmc, i: usize, elapsed: u64) -> Result<usize, MarkovError> {
    if i >= dtmc.n() {
        return Err(MarkovError::StateOutOfRange { state: i, n: dtmc.n() });
    }
    if elapsed as usize <= dtmc.cache_bound() {
        Ok(argmax(dtmc.n_step(elapsed as usize)?.row(i)))
    } else {
        Ok(argmax(&dtmc.stationary()?.pi))
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = k;
        }
    }
    best
}

/// Clairvoyant request sequence: request at `t` iff the trajectory moved
/// between `t - 1` and `t`. Slot 0 has no predecessor and never requests.
pub fn clairvoyant_actions(trajectory: &[usize]) -> Vec<Action> {
    let mut out = Vec::with_capacity(trajectory.len());
    if !trajectory.is_empty() {
        out.push(Action::Wait);
    }
    out.extend(trajectory.windows(2).map(|w| Action::from_bit((w[0] != w[1]) as u8)));
    out
}

/// Independent random streams for one replication.
pub struct SimStreams {
    pub chain: ChaCha8Rng,
    pub channel: ChaCha8Rng,
    pub mix: ChaCha8Rng,
}

impl SimStreams {
    pub fn for_replication(seed: u64, replication: u64) -> Self {
        let stream = |purpose: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(replication.wrapping_mul(4).wrapping_add(purpose));
            rng
        };
        SimStreams { chain: stream(0), channel: stream(1), mix: stream(2) }
    }
}

/// Lookup tables shared by every replication of one simulation.
struct Tables {
    /// `jhat[tau1][i]`: most likely state of an in-flight sample.
    jhat: Vec<Vec<usize>>,
    /// `map[i][elapsed]` for elapsed up to the cache bound.
    map: Vec<Vec<usize>>,
    map_stationary: usize,
    stationary: Vec<f64>,
}

impl Tables {
    fn new(model: &MdpModel) -> Result<Self, MarkovError> {
        let d = model.dtmc();
        let n = d.n();
        let stationary = d.stationary()?.pi;
        let jhat = (0..=model.truncation().tau1_max as usize)
            .map(|k| (0..n).map(|i| argmax(d.n_step(k).unwrap().row(i))).collect())
            .collect();
        let map =
            (0..n).map(|i| (0..=d.cache_bound()).map(|k| argmax(d.n_step(k).unwrap().row(i))).collect()).collect();
        Ok(Tables { jhat, map, map_stationary: argmax(&stationary), stationary })
    }

    #[inline]
    fn map_estimate(&self, i: usize, elapsed: u64) -> usize {
        self.map[i].get(elapsed as usize).copied().unwrap_or(self.map_stationary)
    }
}

/// Simulates one replication.
pub fn run_episode(
    model: &MdpModel,
    policy: &MonitorPolicy,
    config: &SimConfig,
    streams: &mut SimStreams,
    record_trace: bool,
) -> Result<Episode, SimError> {
    config.validate()?;
    policy.validate(model)?;
    let tables = Tables::new(model)?;
    Ok(episode(model, policy, config, &tables, streams, record_trace))
}

fn episode(
    model: &MdpModel,
    policy: &MonitorPolicy,
    config: &SimConfig,
    tables: &Tables,
    streams: &mut SimStreams,
    record_trace: bool,
) -> Episode {
    let d = model.dtmc();
    let q = model.q();
    let caps = model.truncation();

    // Slot -1: the monitor has just received a sample of the source.
    let mut x_prev = sample_row(&tables.stationary, &mut streams.chain);
    let mut i = x_prev;
    let mut held = x_prev;
    let mut pending = false;
    let mut tau1 = 0u32;
    let mut tau2 = 1u32;
    // Generation time of the freshest delivered sample and of the held one,
    // offset by one so slot -1 is representable.
    let mut gen_freshest = 0u64;
    let mut gen_held = 0u64;

    let episode_table = match policy {
        MonitorPolicy::CmdpMixed(m) if config.mixing == MixingMode::Episode => {
            let use_minus = streams.mix.random::<f64>() < m.mu;
            Some(if use_minus { &m.pi_minus } else { &m.pi_plus })
        }
        _ => None,
    };

    let mut sums = [0.0f64; 4];
    let mut trace = record_trace.then(|| Vec::with_capacity(config.horizon as usize));

    for t in 0..config.horizon {
        let x = d.step_sample(x_prev, &mut streams.chain);
        let observed = if tau1 == 0 {
            MdpState::new(0, tau2, i, i)
        } else {
            MdpState::new(tau1, tau2, i, tables.jhat[tau1 as usize][i])
        };
        let obs_index = model.index_unchecked(observed);
        let action = match policy {
            MonitorPolicy::PureTable(p) => p.action(obs_index),
            MonitorPolicy::CmdpMixed(m) => match episode_table {
                Some(table) => table.action(obs_index),
                None => {
                    let a = m.pi_minus.action(obs_index);
                    let b = m.pi_plus.action(obs_index);
                    if a == b || streams.mix.random::<f64>() < m.mu {
                        a
                    } else {
                        b
                    }
                }
            },
            MonitorPolicy::ZeroWait => Action::from_bit((tau1 == 0) as u8),
            MonitorPolicy::Clairvoyant => Action::from_bit((x != x_prev) as u8),
            MonitorPolicy::Periodic(k) => Action::from_bit((t % *k as u64 == 0) as u8),
        };
        let true_index = model.index_unchecked(MdpState::new(tau1, tau2, i, if tau1 == 0 { i } else { held }));
        let cost = model.cost_at(true_index, action);
        let now = t + 1;
        let fresh_err = (i != x) as u8 as f64;
        let map_err = (tables.map_estimate(i, now - gen_freshest) != x) as u8 as f64;

        let delivered = streams.channel.random::<f64>() < q;
        let (s_tau1, s_tau2, s_i) = (tau1, tau2, i);
        let mut success = false;
        match action {
            Action::Request => {
                held = x;
                gen_held = now;
                if delivered {
                    i = x;
                    gen_freshest = now;
                    tau1 = 0;
                    pending = false;
                    success = true;
                } else {
                    tau1 = (tau1 + tau2).min(caps.tau1_max);
                    pending = true;
                }
                tau2 = 1;
            }
            Action::Wait => {
                if pending && (delivered || tau2 >= caps.tau2_max) {
                    i = held;
                    gen_freshest = gen_held;
                    tau1 = 0;
                    pending = false;
                    success = true;
                }
                tau2 = (tau2 + 1).min(caps.tau2_max);
            }
        }

        if t >= config.warmup {
            sums[0] += cost;
            sums[1] += action.as_f64();
            sums[2] += fresh_err;
            sums[3] += map_err;
        }
        if let Some(tr) = trace.as_mut() {
            tr.push(TraceRecord {
                t,
                true_state: x,
                i: s_i,
                tau1: s_tau1,
                tau2: s_tau2,
                action,
                success,
                reception_time: success.then_some(t),
                cost,
            });
        }
        x_prev = x;
    }

    let slots = config.horizon - config.warmup;
    let m = slots as f64;
    Episode {
        metrics: EpisodeMetrics {
            avg_aod: sums[0] / m,
            freq: sums[1] / m,
            fresh_error: sums[2] / m,
            map_error: sums[3] / m,
            slots,
        },
        trace,
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub metrics: SimMetrics,
    pub episodes: Vec<EpisodeMetrics>,
    /// Trace of replication 0, when requested.
    pub trace: Option<Vec<TraceRecord>>,
    /// A deployed table depends on the unobservable in-flight state; the
    /// monitor then acts on its MAP guess and simulated values need not match
    /// the exact evaluation.
    pub j_dependent: bool,
}

/// Runs all replications (in parallel) and aggregates them.
pub fn simulate(
    model: &MdpModel,
    policy: &MonitorPolicy,
    config: &SimConfig,
    record_trace: bool,
) -> Result<Simulation, SimError> {
    config.validate()?;
    policy.validate(model)?;
    let tables = Tables::new(model)?;
    let mut runs: Vec<Episode> = (0..config.replications as u64)
        .into_par_iter()
        .map(|rep| {
            let mut streams = SimStreams::for_replication(config.seed, rep);
            episode(model, policy, config, &tables, &mut streams, record_trace && rep == 0)
        })
        .collect();
    let episodes: Vec<EpisodeMetrics> = runs.iter().map(|e| e.metrics).collect();
    Ok(Simulation {
        metrics: aggregate(&episodes)?,
        trace: runs.first_mut().and_then(|e| e.trace.take()),
        episodes,
        j_dependent: policy.is_j_dependent(model),
    })
}
