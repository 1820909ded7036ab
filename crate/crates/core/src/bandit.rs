//! Client selection as a combinatorial bandit.
//!
//! Every client is an arm. After an initial round-robin phase that plays each
//! arm at least once, CUCB inflates each arm's mean (scaled) reward by
//! `alpha * sqrt(3 ln t / (2 T_k))` and hands the result to a greedy class
//! balancer: the arm with the largest inflated reward goes first, then arms
//! are added one at a time so that the summed composition estimates of the
//! chosen set stay as close to uniform as possible.
//!
//! Ties are always resolved toward the lowest client id.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;

use crate::error::{Error, Result};
use crate::estimator::{kl_to_uniform_slice, CompositionVector, Ewma};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Cucb,
    Greedy,
    Random,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Cucb, Scheme::Greedy, Scheme::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Cucb => "cucb",
            Scheme::Greedy => "greedy",
            Scheme::Random => "random",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cucb" => Ok(Scheme::Cucb),
            "greedy" => Ok(Scheme::Greedy),
            "random" => Ok(Scheme::Random),
            other => Err(Error::Config(format!(
                "unknown scheme `{other}` (expected cucb, greedy or random)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionConfig {
    pub num_clients: usize,
    /// Clients selected per round.
    pub budget: usize,
    /// Exploration factor.
    pub alpha: f64,
    /// Forgetting factor of the composition EWMA.
    pub rho: f64,
    pub scheme: Scheme,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            num_clients: 100,
            budget: 20,
            alpha: 0.2,
            rho: 0.99,
            scheme: Scheme::Cucb,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 || self.budget > self.num_clients {
            return Err(Error::Config(format!(
                "selection budget {} must lie in [1, {}]",
                self.budget, self.num_clients
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "alpha must be non-negative, got {}",
                self.alpha
            )));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::Config(format!(
                "rho must lie in (0, 1], got {}",
                self.rho
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmState {
    pub client_id: usize,
    /// Times this client has been selected.
    pub pulls: u64,
    /// Running mean of the scaled rewards, in `[0, 1]`.
    pub mean_reward: f64,
    pub composition: Ewma,
}

impl ArmState {
    pub fn new(client_id: usize, num_classes: usize) -> Self {
        Self {
            client_id,
            pulls: 0,
            mean_reward: 0.0,
            composition: Ewma::new(num_classes),
        }
    }

    pub fn mean_composition(&self) -> Option<CompositionVector> {
        self.composition.mean()
    }
}

/// One client's result for the round it was selected in.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub client_id: usize,
    pub composition: CompositionVector,
    /// Reward already mapped into `[0, 1]`.
    pub scaled_reward: f64,
}

/// Round-robin warm-up covering every client at least once:
/// `ceil(K / m)` rounds, round `r` taking ids `r*m .. r*m + m` modulo `K`.
pub fn init_phase_schedule(num_clients: usize, budget: usize) -> Result<Vec<Vec<usize>>> {
    if budget == 0 || budget > num_clients {
        return Err(Error::InvalidArgument(format!(
            "budget {budget} must lie in [1, {num_clients}]"
        )));
    }
    let rounds = num_clients.div_ceil(budget);
    Ok((0..rounds)
        .map(|r| {
            let mut set: Vec<usize> = (0..budget)
                .map(|j| (r * budget + j) % num_clients)
                .collect();
            set.sort_unstable();
            set
        })
        .collect())
}

/// `mean_reward + alpha * sqrt(3 ln t / (2 T))` for every arm.
pub fn ucb_adjust(arms: &[ArmState], t: u64, alpha: f64) -> Result<Vec<f64>> {
    if t == 0 {
        return Err(Error::InvalidArgument(
            "bandit time must be at least 1".into(),
        ));
    }
    let log_t = (t as f64).ln();
    arms.iter()
        .map(|arm| {
            if arm.pulls == 0 {
                return Err(Error::InvalidArgument(format!(
                    "client {} has never been selected",
                    arm.client_id
                )));
            }
            Ok(arm.mean_reward + alpha * (3.0 * log_t / (2.0 * arm.pulls as f64)).sqrt())
        })
        .collect()
}

fn kl_of_sum(total: &[f64], extra: &[f64]) -> f64 {
    let sum: Vec<f64> = total.iter().zip(extra).map(|(a, b)| a + b).collect();
    let z: f64 = sum.iter().sum();
    let normalized: Vec<f64> = sum.iter().map(|v| v / z).collect();
    kl_to_uniform_slice(&normalized)
}

/// Greedy class balancing. Starts from the arm with the largest `scores`
/// entry, then repeatedly adds the remaining client whose estimate, added to
/// the running (unnormalized) composition sum, gives the normalized sum the
/// smallest KL divergence from uniform. Returns ids in pick order.
pub fn class_balancing_select(
    scores: &[f64],
    compositions: &[CompositionVector],
    budget: usize,
) -> Result<Vec<usize>> {
    let k = scores.len();
    if compositions.len() != k {
        return Err(Error::Shape(format!(
            "{k} scores but {} composition estimates",
            compositions.len()
        )));
    }
    if budget == 0 || budget > k {
        return Err(Error::InvalidArgument(format!(
            "budget {budget} must lie in [1, {k}]"
        )));
    }
    let first = crate::nn::argmax(scores);
    let mut chosen = vec![false; k];
    chosen[first] = true;
    let mut picks = vec![first];
    let mut total = compositions[first].as_slice().to_vec();
    while picks.len() < budget {
        let mut best: Option<(usize, f64)> = None;
        for cand in (0..k).filter(|&c| !chosen[c]) {
            let kl = kl_of_sum(&total, compositions[cand].as_slice());
            if best.is_none_or(|(_, b)| kl < b) {
                best = Some((cand, kl));
            }
        }
        let (pick, _) = best.expect("budget <= number of clients");
        chosen[pick] = true;
        picks.push(pick);
        total
            .iter_mut()
            .zip(compositions[pick].as_slice())
            .for_each(|(a, b)| *a += b);
    }
    Ok(picks)
}

fn mean_compositions(arms: &[ArmState]) -> Result<Vec<CompositionVector>> {
    arms.iter()
        .map(|a| {
            a.mean_composition().ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "client {} has no composition estimate yet",
                    a.client_id
                ))
            })
        })
        .collect()
}

/// One CUCB decision: UCB-adjusted rewards fed to the class balancer.
/// Returns the pick order and the adjusted rewards.
pub fn cucb_step(
    arms: &[ArmState],
    t: u64,
    budget: usize,
    alpha: f64,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let adjusted = ucb_adjust(arms, t, alpha)?;
    let picks = class_balancing_select(&adjusted, &mean_compositions(arms)?, budget)?;
    Ok((picks, adjusted))
}

/// Records the outcome of a round. Every id in `selected` needs exactly one
/// observation and vice versa.
pub fn update_arms(
    arms: &mut [ArmState],
    selected: &[usize],
    observations: &[Observation],
    rho: f64,
) -> Result<()> {
    let mut expected: Vec<usize> = selected.to_vec();
    expected.sort_unstable();
    let mut got: Vec<usize> = observations.iter().map(|o| o.client_id).collect();
    got.sort_unstable();
    if expected != got {
        return Err(Error::InvalidArgument(format!(
            "observations for {got:?} do not match the selection {expected:?}"
        )));
    }
    for obs in observations {
        let arm = arms
            .get_mut(obs.client_id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown client {}", obs.client_id)))?;
        arm.pulls += 1;
        arm.mean_reward += (obs.scaled_reward - arm.mean_reward) / arm.pulls as f64;
        arm.composition.push(&obs.composition, rho)?;
    }
    Ok(())
}

/// Random: a uniform `budget`-subset from `(seed, t)`, sorted.
/// Greedy: the class balancer on the plain mean rewards.
pub fn baseline_select(
    scheme: Scheme,
    arms: &[ArmState],
    budget: usize,
    t: u64,
    seed: u64,
) -> Result<Vec<usize>> {
    match scheme {
        Scheme::Random => {
            if budget == 0 || budget > arms.len() {
                return Err(Error::InvalidArgument(format!(
                    "budget {budget} must lie in [1, {}]",
                    arms.len()
                )));
            }
            let mut rng = rng::rng_from(seed, &[0x5e1ec7, t]);
            let mut picks = index::sample(&mut rng, arms.len(), budget).into_vec();
            picks.sort_unstable();
            Ok(picks)
        }
        Scheme::Greedy => {
            let means: Vec<f64> = arms.iter().map(|a| a.mean_reward).collect();
            class_balancing_select(&means, &mean_compositions(arms)?, budget)
        }
        Scheme::Cucb => Err(Error::InvalidArgument("cucb is not a baseline".into())),
    }
}

/// A selection decision plus the diagnostics logged with it.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Bandit time `t` of this decision (1-based).
    pub t: u64,
    pub clients: Vec<usize>,
    /// Whether the decision came from the warm-up schedule.
    pub warm_up: bool,
    /// Largest UCB-adjusted reward, when the CUCB path was used.
    pub max_adjusted: Option<f64>,
}

/// Stateful selector: warm-up schedule first, then the configured scheme.
#[derive(Debug, Clone)]
pub struct ClientSelector {
    cfg: SelectionConfig,
    arms: Vec<ArmState>,
    schedule: Vec<Vec<usize>>,
    t: u64,
    seed: u64,
}

impl ClientSelector {
    pub fn new(cfg: SelectionConfig, num_classes: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            arms: (0..cfg.num_clients)
                .map(|k| ArmState::new(k, num_classes))
                .collect(),
            schedule: init_phase_schedule(cfg.num_clients, cfg.budget)?,
            cfg,
            t: 0,
            seed,
        })
    }

    pub fn arms(&self) -> &[ArmState] {
        &self.arms
    }

    /// Number of warm-up rounds, `ceil(K / m)`.
    pub fn warm_up_rounds(&self) -> usize {
        self.schedule.len()
    }

    pub fn time(&self) -> u64 {
        self.t
    }

    pub fn config(&self) -> &SelectionConfig {
        &self.cfg
    }

    /// Advances the bandit clock and returns the next client set.
    pub fn select(&mut self) -> Result<Selection> {
        self.t += 1;
        let t = self.t;
        if let Some(set) = self.schedule.get(t as usize - 1) {
            return Ok(Selection {
                t,
                clients: set.clone(),
                warm_up: true,
                max_adjusted: None,
            });
        }
        let (clients, max_adjusted) = match self.cfg.scheme {
            Scheme::Cucb => {
                let (picks, adjusted) = cucb_step(&self.arms, t, self.cfg.budget, self.cfg.alpha)?;
                let max = adjusted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (picks, Some(max))
            }
            scheme => (
                baseline_select(scheme, &self.arms, self.cfg.budget, t, self.seed)?,
                None,
            ),
        };
        Ok(Selection {
            t,
            clients,
            warm_up: false,
            max_adjusted,
        })
    }

    pub fn observe(&mut self, selected: &[usize], observations: &[Observation]) -> Result<()> {
        update_arms(&mut self.arms, selected, observations, self.cfg.rho)
    }

    pub fn min_pulls(&self) -> u64 {
        self.arms.iter().map(|a| a.pulls).min().unwrap_or(0)
    }
}
