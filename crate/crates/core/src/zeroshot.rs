//! Zero-shot denoising of a single recording.
//!
//! Every window uses the same catalog entry, so the search space shrinks to
//! one arm per entry. A lil'UCB best-arm bandit pulls arms (each pull trains
//! a fresh denoiser on that partition and returns its reward) until one arm
//! has been pulled far more often than all others together; the signal is
//! then denoised with a network trained on the winning partition.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::denoiser::{denoise_with_choice, fit, DenoiserConfig, Fit, Normalizer};
use crate::error::{IpsdError, Result};
use crate::par::Exec;
use crate::rng::{self, Rng};
use crate::signal::{PartitionCatalog, PartitionChoice, Signal, WindowGrid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LilUcbConfig {
    pub beta: f64,
    pub sigma: f64,
    pub epsilon: f64,
    pub delta: f64,
    /// Rounds after the initial pull of every arm.
    pub max_rounds: usize,
}

impl Default for LilUcbConfig {
    fn default() -> Self {
        LilUcbConfig {
            beta: 1.0,
            sigma: 0.008,
            epsilon: 0.01,
            delta: 0.55e-4,
            max_rounds: 500,
        }
    }
}

/// Lower clamp of the iterated-log argument.
const LOG_ARG_FLOOR: f64 = 1.0 + 1e-12;

impl LilUcbConfig {
    /// Stopping-rule weight `((2 + beta) / beta)^2`; 9 for `beta = 1`.
    pub fn alpha(&self) -> f64 {
        ((2.0 + self.beta) / self.beta).powi(2)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("beta", self.beta), ("sigma", self.sigma), ("epsilon", self.epsilon)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(IpsdError::invalid(format!("{name} must be positive")));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(IpsdError::invalid("delta must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Confidence width after `pulls` pulls.
    pub fn exploration(&self, pulls: u64) -> f64 {
        let t = pulls as f64;
        let e = self.epsilon;
        let arg = (((1.0 + e) * t).ln() / self.delta).max(LOG_ARG_FLOOR);
        (1.0 + self.beta) * (1.0 + e.sqrt()) * (2.0 * self.sigma * self.sigma * (1.0 + e) * arg.ln() / t).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BanditState {
    counts: Vec<u64>,
    means: Vec<f64>,
    /// Rounds played after initialization.
    rounds: usize,
}

impl BanditState {
    pub fn new(arms: usize) -> Self {
        BanditState {
            counts: vec![0; arms],
            means: vec![0.0; arms],
            rounds: 0,
        }
    }

    pub fn arms(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn is_initialized(&self) -> bool {
        !self.counts.is_empty() && self.counts.iter().all(|&c| c > 0)
    }

    /// Incremental running-mean update; counts a round once every arm has
    /// been pulled at least once before this pull.
    pub fn record(&mut self, arm: usize, reward: f64) {
        if self.is_initialized() {
            self.rounds += 1;
        }
        self.counts[arm] += 1;
        self.means[arm] += (reward - self.means[arm]) / self.counts[arm] as f64;
    }

    /// Most pulled arm, lowest index on ties.
    pub fn most_pulled(&self) -> usize {
        let mut best = 0;
        for (a, &c) in self.counts.iter().enumerate() {
            if c > self.counts[best] {
                best = a;
            }
        }
        best
    }
}

pub fn ucb_index(state: &BanditState, arm: usize, cfg: &LilUcbConfig) -> Result<f64> {
    let t = *state
        .counts
        .get(arm)
        .ok_or_else(|| IpsdError::invalid(format!("arm {arm} out of range")))?;
    if t == 0 {
        return Err(IpsdError::State(format!("arm {arm} has not been pulled")));
    }
    Ok(state.means[arm] + cfg.exploration(t))
}

/// Arm with the highest index, lowest index on ties.
pub fn select_arm(state: &BanditState, cfg: &LilUcbConfig) -> Result<usize> {
    if !state.is_initialized() {
        return Err(IpsdError::State("every arm must be pulled once before selection".into()));
    }
    let mut best = (0, f64::NEG_INFINITY);
    for a in 0..state.arms() {
        let v = ucb_index(state, a, cfg)?;
        if v > best.1 {
            best = (a, v);
        }
    }
    Ok(best.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stop {
    pub arm: usize,
    /// The round cap ended the search before the stopping rule held.
    pub capped: bool,
}

/// An arm `a` with `T_a >= 1 + alpha * sum_{i != a} T_i`, or the most
/// pulled arm once the round cap is reached.
pub fn stopping_met(state: &BanditState, cfg: &LilUcbConfig) -> Option<Stop> {
    let total: u64 = state.counts.iter().sum();
    let alpha = cfg.alpha();
    for (a, &t) in state.counts.iter().enumerate() {
        if t as f64 >= 1.0 + alpha * (total - t) as f64 {
            return Some(Stop { arm: a, capped: false });
        }
    }
    (state.rounds >= cfg.max_rounds).then(|| Stop {
        arm: state.most_pulled(),
        capped: true,
    })
}

/// Source of rewards for a bandit run.
pub trait ArmEvaluator: Sync {
    fn arms(&self) -> usize;
    fn reward(&self, arm: usize, rng: &mut Rng) -> Result<f64>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pull {
    /// 0 for the initial pulls, then 1, 2, ...
    pub round: usize,
    pub arm: usize,
    pub reward: f64,
    /// Index of the chosen arm when it was selected (absent for initial pulls).
    pub ucb_index: Option<f64>,
    pub winner_so_far: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BanditOutcome {
    pub stop: Stop,
    pub state: BanditState,
    pub history: Vec<Pull>,
}

pub fn write_history_csv<W: Write>(mut w: W, history: &[Pull], header_comment: Option<&str>) -> std::io::Result<()> {
    if let Some(c) = header_comment {
        for line in c.lines() {
            writeln!(w, "# {line}")?;
        }
    }
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["round", "arm", "reward", "ucb_index", "winner_so_far"])?;
    for p in history {
        csv.write_record([
            p.round.to_string(),
            p.arm.to_string(),
            p.reward.to_string(),
            p.ucb_index.map(|v| v.to_string()).unwrap_or_default(),
            p.winner_so_far.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

/// Run lil'UCB to a stop. The initial pulls are independent and run through
/// `exec`; pull `n` (counting from 0 over the whole run) draws from stream
/// `n` of `seed`.
pub fn run_bandit<E: ArmEvaluator>(
    evaluator: &E,
    cfg: &LilUcbConfig,
    exec: Exec,
    seed: u64,
) -> Result<BanditOutcome> {
    cfg.validate()?;
    let k = evaluator.arms();
    if k == 0 {
        return Err(IpsdError::invalid("bandit needs at least one arm"));
    }
    let initial = exec.try_map(k, |a| evaluator.reward(a, &mut rng::derive(seed, a as u64)))?;
    let mut state = BanditState::new(k);
    let mut history = Vec::new();
    for (arm, &reward) in initial.iter().enumerate() {
        state.record(arm, reward);
        history.push(Pull {
            round: 0,
            arm,
            reward,
            ucb_index: None,
            winner_so_far: state.most_pulled(),
        });
    }
    let stop = loop {
        if let Some(stop) = stopping_met(&state, cfg) {
            break stop;
        }
        let arm = select_arm(&state, cfg)?;
        let index = ucb_index(&state, arm, cfg)?;
        let pull = (k + state.rounds()) as u64;
        let reward = evaluator.reward(arm, &mut rng::derive(seed, pull))?;
        state.record(arm, reward);
        history.push(Pull {
            round: state.rounds(),
            arm,
            reward,
            ucb_index: Some(index),
            winner_so_far: state.most_pulled(),
        });
    };
    Ok(BanditOutcome { stop, state, history })
}

/// Arms are shared partitions of one (normalized) signal; a pull trains a
/// fresh denoiser and returns its reward.
pub struct DenoiserArms<'a> {
    signal: &'a Signal,
    grid: WindowGrid,
    catalog: PartitionCatalog,
    cfg: &'a DenoiserConfig,
}

impl<'a> DenoiserArms<'a> {
    pub fn new(signal: &'a Signal, window_len: usize, cfg: &'a DenoiserConfig) -> Result<Self> {
        Ok(DenoiserArms {
            signal,
            grid: WindowGrid::for_signal(signal, window_len)?,
            catalog: PartitionCatalog::enumerate(window_len)?,
            cfg,
        })
    }

    pub fn choice(&self, arm: usize) -> PartitionChoice {
        PartitionChoice::uniform(&self.grid, arm)
    }

    pub fn fit(&self, arm: usize, rng: &mut Rng) -> Result<Fit> {
        fit(self.signal, &self.choice(arm), &self.catalog, self.cfg, rng)
    }
}

impl ArmEvaluator for DenoiserArms<'_> {
    fn arms(&self) -> usize {
        self.catalog.len()
    }

    fn reward(&self, arm: usize, rng: &mut Rng) -> Result<f64> {
        self.fit(arm, rng).map(|f| f.reward)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ZeroShotConfig {
    pub bandit: LilUcbConfig,
    pub window_len: usize,
    pub exec: Exec,
}

impl Default for ZeroShotConfig {
    fn default() -> Self {
        ZeroShotConfig {
            bandit: LilUcbConfig::default(),
            window_len: 8,
            exec: Exec::Parallel,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ZeroShotResult {
    pub denoised: Signal,
    pub best_arm: usize,
    pub capped: bool,
    pub state: BanditState,
    pub history: Vec<Pull>,
    /// Training run on the winning partition that produced `denoised`.
    pub final_fit: Fit,
}

const FINAL_KEY: u64 = u64::MAX;

pub fn run_zero_shot(s: &Signal, cfg: &ZeroShotConfig, dcfg: &DenoiserConfig, seed: u64) -> Result<ZeroShotResult> {
    let sn = Normalizer::fit(s).apply(s);
    let arms = DenoiserArms::new(&sn, cfg.window_len, dcfg)?;
    let outcome = run_bandit(&arms, &cfg.bandit, cfg.exec, seed)?;
    let best = outcome.stop.arm;
    let out = denoise_with_choice(
        s,
        &arms.choice(best),
        &arms.catalog,
        dcfg,
        &mut rng::derive(seed, FINAL_KEY),
    )?;
    Ok(ZeroShotResult {
        denoised: out.denoised,
        best_arm: best,
        capped: outcome.stop.capped,
        state: outcome.state,
        history: outcome.history,
        final_fit: out.fit,
    })
}
