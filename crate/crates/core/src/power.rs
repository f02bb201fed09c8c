//! Per-satellite power allocation.
//!
//! The per-satellite subproblem is transformed to log-domain variables
//! (`p' = log2 p`, `I' = log2 I`) under the high-SINR surrogate
//! `log2(1+SINR) ~ log2(SINR)`, and solved by a projected dual subgradient
//! iteration on the multipliers (lambda, n, m) with closed-form primal
//! minimizers. Each subproblem is independent of every other satellite, so
//! callers may fan them out freely.

use crate::channel::{subcarrier_rates, ChannelTable};
use crate::error::{Error, Result};
use crate::netstate::{NetworkConfiguration, OptimizerLimits};
use crate::orbits::SatelliteId;

/// Floor applied inside logarithms of interference terms; single-occupant
/// subcarriers have exactly zero interference.
pub const INTERFERENCE_FLOOR_W: f64 = 1e-30;

/// Smallest multiplier value kept strictly positive so the closed-form
/// primal stays defined.
const LAMBDA_MIN: f64 = 1e-12;

/// Subgradient schedule and iteration limits.
#[derive(Debug, Clone, Copy)]
pub struct PaParams {
    pub q0_lambda: f64,
    pub q0_n: f64,
    pub q0_m: f64,
    pub lambda0: f64,
    pub max_iters: usize,
    /// Convergence tolerance on the log-domain power change (scale-free).
    pub tol_log_p: f64,
}

impl Default for PaParams {
    fn default() -> Self {
        Self {
            q0_lambda: 1e-3,
            q0_n: 1e-2,
            q0_m: 1e-2,
            lambda0: 1.0,
            max_iters: 500,
            tol_log_p: 1e-5,
        }
    }
}

/// One satellite's power-allocation instance: the members it serves, their
/// link gains, subcarrier seats, and rate requirements.
#[derive(Debug, Clone)]
pub struct SatPaProblem {
    pub sat: SatelliteId,
    /// UE indices served by this satellite, ascending.
    pub members: Vec<usize>,
    /// Victim link gain of each member.
    pub gains: Vec<f64>,
    /// Subcarrier seat of each member.
    pub seats: Vec<usize>,
    /// chi = r_min / B per member.
    pub chi: Vec<f64>,
    pub noise_w: f64,
    pub p_max_w: f64,
    pub bandwidth_hz: f64,
    /// Cap used for the degenerate closed-form interference branch.
    pub i_cap_w: f64,
}

impl SatPaProblem {
    /// Build the instance for `sat` from a configuration and channel table.
    pub fn from_configuration(
        sat: &SatelliteId,
        cfg: &NetworkConfiguration,
        tbl: &ChannelTable,
        limits: &OptimizerLimits,
    ) -> Result<Self> {
        let members = cfg.members_of(sat);
        if members.is_empty() {
            return Err(Error::ContractViolation(format!(
                "satellite {sat} has no members to allocate power for"
            )));
        }
        let mut gains = Vec::with_capacity(members.len());
        let mut seats = Vec::with_capacity(members.len());
        let mut chi = Vec::with_capacity(members.len());
        let mut max_gain = 0.0_f64;
        for &j in &members {
            let g = tbl.gain(sat, j)?;
            gains.push(g);
            max_gain = max_gain.max(g);
            seats.push(cfg.subcarrier[&j]);
            chi.push(limits.r_min_bps[j] / tbl.bandwidth_hz());
        }
        Ok(Self {
            sat: *sat,
            members,
            gains,
            seats,
            chi,
            noise_w: tbl.noise_w(),
            p_max_w: limits.p_max_w,
            bandwidth_hz: tbl.bandwidth_hz(),
            i_cap_w: limits.p_max_w * max_gain,
        })
    }

    fn n_members(&self) -> usize {
        self.members.len()
    }

    /// True sum rate of this satellite's members for a candidate power
    /// vector (member order).
    pub fn local_sum_rate(&self, powers: &[f64]) -> f64 {
        let mut total = 0.0;
        let mut seats: Vec<usize> = self.seats.clone();
        seats.sort_unstable();
        seats.dedup();
        for k in seats {
            let group: Vec<(f64, f64)> = (0..self.n_members())
                .filter(|&i| self.seats[i] == k)
                .map(|i| (powers[i], self.gains[i]))
                .collect();
            total += subcarrier_rates(&group, self.noise_w, self.bandwidth_hz)
                .iter()
                .sum::<f64>();
        }
        total
    }

    /// Co-channel interference seen by each member under `powers`.
    pub fn recompute_interference(&self, powers: &[f64]) -> Vec<f64> {
        (0..self.n_members())
            .map(|i| {
                let k = self.seats[i];
                let co: f64 = (0..self.n_members())
                    .filter(|&j| j != i && self.seats[j] == k)
                    .map(|j| powers[j])
                    .sum();
                self.gains[i] * co
            })
            .collect()
    }
}

/// Dual multipliers with the iteration counter driving the diminishing step
/// schedule `q^(r) = q0 / sqrt(r)`.
#[derive(Debug, Clone)]
pub struct DualState {
    pub lambda: f64,
    pub n: Vec<f64>,
    pub m: Vec<f64>,
    pub iteration: usize,
}

impl DualState {
    pub fn fresh(n_members: usize, params: &PaParams) -> Self {
        Self {
            lambda: params.lambda0,
            n: vec![0.0; n_members],
            m: vec![0.0; n_members],
            iteration: 0,
        }
    }
}

/// Closed-form primal point for fixed multipliers, in both log and linear
/// domains.
#[derive(Debug, Clone)]
pub struct PaPrimal {
    pub log_p: Vec<f64>,
    pub log_i: Vec<f64>,
    pub p_w: Vec<f64>,
    pub i_w: Vec<f64>,
}

/// Closed-form minimizer of the Lagrangian over (p', I') for fixed
/// multipliers: `p = (1+n)/(lambda ln 2)` and
/// `I = m sigma^2 / (1+n-m)` on the interior branch, capped when the
/// denominator degenerates.
pub fn primal_update(dual: &DualState, prob: &SatPaProblem) -> Result<PaPrimal> {
    if !(dual.lambda > 0.0) {
        return Err(Error::ContractViolation(
            "primal update requires lambda > 0".into(),
        ));
    }
    let n_members = prob.n_members();
    let mut log_p = Vec::with_capacity(n_members);
    let mut log_i = Vec::with_capacity(n_members);
    let mut p_w = Vec::with_capacity(n_members);
    let mut i_w = Vec::with_capacity(n_members);
    for j in 0..n_members {
        let p = (1.0 + dual.n[j]) / (dual.lambda * std::f64::consts::LN_2);
        let denom = 1.0 + dual.n[j] - dual.m[j];
        let i = if denom > 0.0 {
            (dual.m[j] * prob.noise_w / denom).max(0.0)
        } else {
            prob.i_cap_w
        };
        p_w.push(p);
        i_w.push(i);
        log_p.push(p.log2());
        log_i.push(i.max(INTERFERENCE_FLOOR_W).log2());
    }
    Ok(PaPrimal {
        log_p,
        log_i,
        p_w,
        i_w,
    })
}

/// Projected subgradient step on the multipliers. `actual_i_w` is the
/// interference recomputed from the primal powers via the exact model.
pub fn multiplier_update(
    dual: &DualState,
    primal: &PaPrimal,
    actual_i_w: &[f64],
    prob: &SatPaProblem,
    params: &PaParams,
) -> DualState {
    let r = dual.iteration + 1;
    let scale = 1.0 / (r as f64).sqrt();
    let q_lambda = params.q0_lambda * scale;
    let q_n = params.q0_n * scale;
    let q_m = params.q0_m * scale;

    let g_lambda: f64 = primal.p_w.iter().sum::<f64>() - prob.p_max_w;
    let lambda = (dual.lambda + q_lambda * g_lambda).max(LAMBDA_MIN);

    let mut n = dual.n.clone();
    let mut m = dual.m.clone();
    for j in 0..prob.n_members() {
        let g_n = ((primal.i_w[j] + prob.noise_w) / (primal.p_w[j] * prob.gains[j])).log2()
            + prob.chi[j];
        n[j] = (n[j] + q_n * g_n).max(0.0);
        let g_m = actual_i_w[j].max(INTERFERENCE_FLOOR_W).log2() - primal.log_i[j];
        m[j] = (m[j] + q_m * g_m).max(0.0);
    }
    DualState {
        lambda,
        n,
        m,
        iteration: r,
    }
}

/// The Lagrangian of one satellite's subproblem, evaluated as a function of
/// the log-domain primal variables with the consistency interference
/// `fixed_i_w` held constant (it enters only through the multiplier `m`
/// terms).
pub fn lagrangian_value(
    log_p: &[f64],
    log_i: &[f64],
    dual: &DualState,
    prob: &SatPaProblem,
    fixed_i_w: &[f64],
) -> f64 {
    let mut total = 0.0;
    let mut power_sum = 0.0;
    for j in 0..prob.n_members() {
        let p = log_p[j].exp2();
        let i = log_i[j].exp2();
        power_sum += p;
        let surrogate = ((i + prob.noise_w) / (p * prob.gains[j])).log2();
        total += surrogate;
        total += dual.n[j] * (surrogate + prob.chi[j]);
        total += dual.m[j] * (-log_i[j] + fixed_i_w[j].max(INTERFERENCE_FLOOR_W).log2());
    }
    total + dual.lambda * (power_sum - prob.p_max_w)
}

/// Outcome of one satellite's power solve.
#[derive(Debug, Clone)]
pub struct PaSolution {
    /// Best feasible powers found, in member order.
    pub powers_w: Vec<f64>,
    /// True local sum rate of those powers.
    pub local_rate_bps: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Scale powers down to the budget when needed; powers stay strictly
/// positive.
fn project_to_budget(powers: &[f64], p_max: f64) -> Vec<f64> {
    let total: f64 = powers.iter().sum();
    if total <= p_max {
        return powers.to_vec();
    }
    let tau = p_max / total;
    powers.iter().map(|p| p * tau).collect()
}

/// Run the dual iteration and return the best feasible iterate found. The
/// starting point counts as a candidate, so the result never scores below
/// `p_init`.
pub fn solve_pa(prob: &SatPaProblem, p_init: &[f64], params: &PaParams) -> Result<PaSolution> {
    if prob.members.is_empty() {
        return Err(Error::ContractViolation("empty member set".into()));
    }
    if p_init.len() != prob.n_members() {
        return Err(Error::ContractViolation(
            "p_init length does not match member count".into(),
        ));
    }
    let mut best = project_to_budget(p_init, prob.p_max_w);
    let mut best_rate = prob.local_sum_rate(&best);

    let mut dual = DualState::fresh(prob.n_members(), params);
    let mut prev_log_p: Option<Vec<f64>> = None;
    let mut iterations = 0;
    let mut converged = false;

    for _ in 0..params.max_iters {
        iterations += 1;
        let primal = primal_update(&dual, prob)?;
        let candidate = project_to_budget(&primal.p_w, prob.p_max_w);
        let rate = prob.local_sum_rate(&candidate);
        if rate > best_rate {
            best_rate = rate;
            best = candidate;
        }
        let actual_i = prob.recompute_interference(&primal.p_w);
        dual = multiplier_update(&dual, &primal, &actual_i, prob, params);
        if let Some(prev) = &prev_log_p {
            let delta = primal
                .log_p
                .iter()
                .zip(prev)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0_f64, f64::max);
            if delta < params.tol_log_p {
                converged = true;
                break;
            }
        }
        prev_log_p = Some(primal.log_p);
    }
    Ok(PaSolution {
        powers_w: best,
        local_rate_bps: best_rate,
        iterations,
        converged,
    })
}
