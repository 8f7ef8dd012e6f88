//! Metropolis-Hastings naming game between two GMM+MVAE agents.
//!
//! Each round both agents resample their latents, then A names every datum
//! for B, B relearns, B names every datum for A and A relearns. The listener
//! accepts a proposed sign with the MH ratio of its own component likelihoods,
//! so the pair jointly samples signs from `pi(w) P(z_A | w) P(z_B | w)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{component_loglik, sample_categorical, sign_posterior, update_agent_gmm, GmmComponent, GmmParams, NwHyper};
use crate::mvae::{sample_latent, sample_latent_with_prior, train_epochs, DiagGaussian, ModalityData, MvaeParams, Sgd};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    MetropolisHastings,
    /// No communication: `r = 0`; listeners resample their own signs instead.
    AlwaysReject,
    /// `r = 1`: the listener adopts every proposal.
    AlwaysAccept,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::MetropolisHastings, Scenario::AlwaysReject, Scenario::AlwaysAccept];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::MetropolisHastings => "metropolis_hastings",
            Scenario::AlwaysReject => "always_reject",
            Scenario::AlwaysAccept => "always_accept",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Scenario> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "metropolis_hastings" | "mh" | "mhng" => Ok(Scenario::MetropolisHastings),
            "always_reject" | "reject" | "no_communication" | "no_com" => Ok(Scenario::AlwaysReject),
            "always_accept" | "accept" | "all_acceptance" => Ok(Scenario::AlwaysAccept),
            _ => Err(Error::InvalidArgument(format!("unknown scenario '{s}'"))),
        }
    }
}

/// One agent's model, inferred variables and observations.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub mvae: MvaeParams,
    pub gmm: GmmParams,
    pub latents: Vec<DVector<f64>>,
    pub signs: Vec<usize>,
    pub data: ModalityData,
    pub opt: Sgd,
    pub rng: ChaCha8Rng,
}

impl AgentState {
    pub fn len(&self) -> usize {
        self.signs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signs.is_empty()
    }

    pub fn k(&self) -> usize {
        self.gmm.k()
    }

    fn check(&self) -> Result<()> {
        let d = self.data.len();
        if self.signs.len() != d || self.latents.len() != d {
            return Err(Error::DimensionMismatch {
                context: "agent signs/latents vs data",
                expected: d,
                got: self.signs.len().min(self.latents.len()),
            });
        }
        if let Some(s) = self.signs.iter().find(|&&s| s >= self.k()) {
            return Err(Error::InvalidArgument(format!("sign {s} out of range for K={}", self.k())));
        }
        Ok(())
    }

    /// Component selected by each datum's current sign.
    pub fn priors(&self) -> Vec<&GmmComponent> {
        self.signs.iter().map(|&s| &self.gmm.components[s]).collect()
    }

    /// Fused encoder posteriors for every datum.
    pub fn posteriors(&self) -> Result<Vec<DiagGaussian>> {
        let (mu, var) = self.mvae.encode_batch(&self.data.mats)?;
        (0..mu.ncols())
            .map(|d| DiagGaussian::new(mu.column(d).into_owned(), var.column(d).into_owned()))
            .collect()
    }

    /// Draws every `z_d` given the data and, optionally, the sign's component.
    pub fn resample_latents(&mut self, with_prior: bool) -> Result<()> {
        let qs = self.posteriors()?;
        let mut out = Vec::with_capacity(qs.len());
        for (q, &s) in qs.iter().zip(&self.signs) {
            let z = if with_prior {
                sample_latent_with_prior(q, &self.gmm.components[s], &mut self.rng)
            } else {
                sample_latent(q, &mut self.rng)
            };
            out.push(z);
        }
        self.latents = out;
        Ok(())
    }

    /// Resamples the GMM given current latents and signs, then trains the MVAE.
    pub fn learn(&mut self, learn: &LearnConfig) -> Result<()> {
        self.gmm = update_agent_gmm(&self.latents, &self.signs, &self.gmm.pi, &learn.hyper, &mut self.rng)?;
        if learn.epochs > 0 {
            let comps = self.gmm.components.clone();
            let priors: Vec<&GmmComponent> = self.signs.iter().map(|&s| &comps[s]).collect();
            train_epochs(&mut self.mvae, &mut self.opt, &self.data, &priors, learn.epochs, learn.batch_size, &mut self.rng)?;
        }
        Ok(())
    }

    pub fn latent_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_columns(&self.latents)
    }
}

/// Settings for the per-round learning step.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub hyper: NwHyper,
    /// Sample latents from the encoder posterior times the sign's component.
    pub prior_expert: bool,
}

/// Draws a sign for datum `d` from the speaker's sign posterior.
pub fn propose_sign<R: Rng + ?Sized>(speaker: &AgentState, d: usize, rng: &mut R) -> Result<usize> {
    let z = speaker
        .latents
        .get(d)
        .ok_or_else(|| Error::InvalidArgument(format!("datum {d} out of range")))?;
    Ok(sample_categorical(&sign_posterior(z, &speaker.gmm)?, rng))
}

/// `min(1, N(z | comp_{w_sp}) / N(z | comp_{w_li}))` under the listener's GMM.
pub fn acceptance_ratio(listener_z: &DVector<f64>, listener_gmm: &GmmParams, w_sp: usize, w_li: usize) -> Result<f64> {
    let k = listener_gmm.k();
    if w_sp >= k || w_li >= k {
        return Err(Error::InvalidArgument(format!("signs ({w_sp}, {w_li}) out of range for K={k}")));
    }
    if w_sp == w_li {
        return Ok(1.0);
    }
    let log_r = component_loglik(listener_z, &listener_gmm.components[w_sp])?
        - component_loglik(listener_z, &listener_gmm.components[w_li])?;
    Ok(log_r.min(0.0).exp())
}

/// Result of a single naming exchange.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exchange {
    pub proposal: usize,
    pub r: f64,
    pub accepted: bool,
}

/// Speaker names datum `d`; the listener updates its sign under `scenario`.
pub fn mh_exchange<R: Rng + ?Sized>(
    speaker: &AgentState,
    listener: &mut AgentState,
    d: usize,
    scenario: Scenario,
    rng: &mut R,
) -> Result<Exchange> {
    let proposal = propose_sign(speaker, d, rng)?;
    let current = listener.signs[d];
    let (r, accepted) = match scenario {
        Scenario::AlwaysReject => (0.0, false),
        Scenario::AlwaysAccept => (1.0, true),
        Scenario::MetropolisHastings => {
            let r = acceptance_ratio(&listener.latents[d], &listener.gmm, proposal, current)?;
            (r, r >= 1.0 || rng.random::<f64>() < r)
        }
    };
    if accepted {
        listener.signs[d] = proposal;
    }
    Ok(Exchange { proposal, r, accepted })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "a_to_b")]
    AToB,
    #[serde(rename = "b_to_a")]
    BToA,
}

impl Direction {
    fn new(speaker: usize) -> Direction {
        if speaker == 0 {
            Direction::AToB
        } else {
            Direction::BToA
        }
    }
}

/// One line of the per-round event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundEvent {
    pub round: usize,
    pub direction: Direction,
    pub scenario: Scenario,
    /// Exchanges attempted; self-resampled signs when not communicating.
    pub proposals: usize,
    pub accepted: usize,
    pub mean_r: f64,
    /// Listener signs that ended up different from before.
    pub changed: usize,
}

/// A single sign change in the listener's table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignFlip {
    pub round: usize,
    pub agent: usize,
    pub d: usize,
    pub from: usize,
    pub to: usize,
}

/// Two agents plus the shared channel randomness.
#[derive(Debug, Clone)]
pub struct GameState {
    pub agents: [AgentState; 2],
    pub round: usize,
    /// Index of the agent that speaks first in every round.
    pub first_speaker: usize,
    pub channel: ChaCha8Rng,
    pub events: Vec<RoundEvent>,
    pub flips: Vec<SignFlip>,
    cross_reads: u64,
}

impl GameState {
    pub fn new(agents: [AgentState; 2], first_speaker: usize, channel: ChaCha8Rng) -> Result<GameState> {
        for a in &agents {
            a.check()?;
        }
        if agents[0].len() != agents[1].len() {
            return Err(Error::DimensionMismatch {
                context: "agent data counts",
                expected: agents[0].len(),
                got: agents[1].len(),
            });
        }
        if agents[0].k() != agents[1].k() {
            return Err(Error::DimensionMismatch {
                context: "agent sign counts",
                expected: agents[0].k(),
                got: agents[1].k(),
            });
        }
        if first_speaker > 1 {
            return Err(Error::InvalidArgument(format!("first speaker must be 0 or 1, got {first_speaker}")));
        }
        Ok(GameState {
            agents,
            round: 0,
            first_speaker,
            channel,
            events: Vec::new(),
            flips: Vec::new(),
            cross_reads: 0,
        })
    }

    pub fn agent_a(&self) -> &AgentState {
        &self.agents[0]
    }

    pub fn agent_b(&self) -> &AgentState {
        &self.agents[1]
    }

    /// Number of times one agent's state has been read on behalf of the other.
    pub fn cross_reads(&self) -> u64 {
        self.cross_reads
    }

    fn pair_mut(&mut self, speaker: usize) -> (&AgentState, &mut AgentState) {
        let [a, b] = &mut self.agents;
        if speaker == 0 {
            (a, b)
        } else {
            (b, a)
        }
    }

    /// Speaker names every datum in ascending order for the listener.
    fn speak(&mut self, speaker: usize, scenario: Scenario) -> Result<()> {
        let listener = 1 - speaker;
        let round = self.round;
        let mut channel = self.channel.clone();
        let (sp, li) = self.pair_mut(speaker);
        let n = li.len();
        let mut accepted = 0;
        let mut r_sum = 0.0;
        let mut flips = Vec::new();
        for d in 0..n {
            let before = li.signs[d];
            let ex = mh_exchange(sp, li, d, scenario, &mut channel)?;
            accepted += ex.accepted as usize;
            r_sum += ex.r;
            if li.signs[d] != before {
                flips.push(SignFlip { round, agent: listener, d, from: before, to: li.signs[d] });
            }
        }
        self.channel = channel;
        self.cross_reads += n as u64;
        self.log(round, speaker, scenario, n, accepted, r_sum, flips);
        Ok(())
    }

    /// Without communication the listener Gibbs-samples its own signs.
    fn self_gibbs(&mut self, listener: usize, scenario: Scenario) -> Result<()> {
        let round = self.round;
        let li = &mut self.agents[listener];
        let n = li.len();
        let mut flips = Vec::new();
        for d in 0..n {
            let before = li.signs[d];
            let post = sign_posterior(&li.latents[d], &li.gmm)?;
            li.signs[d] = sample_categorical(&post, &mut li.rng);
            if li.signs[d] != before {
                flips.push(SignFlip { round, agent: listener, d, from: before, to: li.signs[d] });
            }
        }
        self.log(round, 1 - listener, scenario, n, 0, 0.0, flips);
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn log(&mut self, round: usize, speaker: usize, scenario: Scenario, n: usize, accepted: usize, r_sum: f64, flips: Vec<SignFlip>) {
        self.events.push(RoundEvent {
            round,
            direction: Direction::new(speaker),
            scenario,
            proposals: n,
            accepted,
            mean_r: if n > 0 { r_sum / n as f64 } else { 0.0 },
            changed: flips.len(),
        });
        self.flips.extend(flips);
    }

    /// One full round; increments the round counter.
    pub fn run_round(&mut self, scenario: Scenario, learn: &LearnConfig) -> Result<()> {
        for a in &mut self.agents {
            a.resample_latents(learn.prior_expert)?;
        }
        let first = self.first_speaker;
        for speaker in [first, 1 - first] {
            let listener = 1 - speaker;
            match scenario {
                Scenario::AlwaysReject => self.self_gibbs(listener, scenario)?,
                _ => self.speak(speaker, scenario)?,
            }
            self.agents[listener].learn(learn)?;
        }
        self.round += 1;
        Ok(())
    }
}
