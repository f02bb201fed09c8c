//! Block coordinate descent for a fixed satellite subset: feasible
//! initialization, then alternating matching (UA+BA) and per-satellite power
//! allocation until the association and subcarrier maps stop changing.
//!
//! A power phase is accepted per satellite only when it does not lower that
//! satellite's true sum rate and keeps every member at its minimum rate, so
//! the objective trace is non-decreasing by construction.

use std::collections::BTreeSet;

use crate::channel::ChannelTable;
use crate::error::Result;
use crate::feasinit;
use crate::matching::{self, MatchCtx, MatchingParams, MatchingState};
use crate::netstate::{
    bandwidth_partition, NetworkConfiguration, OptimizerLimits, FEASIBILITY_REL_TOL,
};
use crate::orbits::SatelliteId;
use crate::power::{solve_pa, PaParams, SatPaProblem};

/// Iteration limits and sub-solver knobs for one run.
#[derive(Debug, Clone, Copy)]
pub struct JubpaParams {
    pub max_iters: usize,
    pub matching: MatchingParams,
    pub pa: PaParams,
}

impl JubpaParams {
    pub fn defaults_for(n_ues: usize) -> Self {
        Self {
            max_iters: 50,
            matching: MatchingParams::defaults_for(n_ues),
            pa: PaParams::default(),
        }
    }
}

/// Result of one run: the final configuration, the per-iteration objective
/// trace (iteration 0 is the post-initialization point), and convergence
/// info.
#[derive(Debug, Clone)]
pub struct JubpaResult {
    pub config: NetworkConfiguration,
    pub trace: Vec<(usize, f64)>,
    pub iterations: usize,
    pub converged: bool,
}

impl JubpaResult {
    pub fn theta(&self) -> f64 {
        self.trace.last().map(|&(_, t)| t).unwrap_or(0.0)
    }
}

/// Run the descent for the selected subset. Errors from the feasible
/// initialization propagate so the outer search can discard the subset.
pub fn run_jubpa(
    selected: &BTreeSet<SatelliteId>,
    tbl: &ChannelTable,
    limits: &OptimizerLimits,
    params: &JubpaParams,
) -> Result<JubpaResult> {
    let partition = bandwidth_partition(selected, tbl.num_subcarriers())?;
    let alloc = feasinit::initialize(&partition, tbl, limits)?;
    let cfg0 = feasinit::into_configuration(alloc, selected, tbl.time_s);

    let ctx = MatchCtx {
        tbl,
        partition: &partition,
        limits,
        params: params.matching,
    };
    let mut state = MatchingState::from_configuration(&cfg0, tbl.n_ues());
    let mut trace = vec![(0usize, matching::state_sum_rate(&ctx, &state))];
    let mut converged = false;
    let mut iterations = 0;

    for c in 1..=params.max_iters {
        iterations = c;
        matching::ua_round(&ctx, &mut state);
        let ba = matching::ba_round(&ctx, &mut state);

        power_phase(&ctx, &mut state, params);

        trace.push((c, matching::state_sum_rate(&ctx, &state)));
        if !ba.changed() {
            converged = true;
            break;
        }
    }

    let mut config = cfg0;
    state.apply_to(&mut config);
    Ok(JubpaResult {
        config,
        trace,
        iterations,
        converged,
    })
}

/// Solve each satellite's power subproblem and adopt the result only when it
/// improves that satellite's rate without breaking a member's minimum.
/// Subproblems are independent, so acceptance per satellite is acceptance of
/// the separable global objective.
fn power_phase(ctx: &MatchCtx, state: &mut MatchingState, params: &JubpaParams) {
    let sats: Vec<SatelliteId> = ctx.partition.blocks.keys().copied().collect();
    for sat in sats {
        let members: Vec<usize> = state
            .assoc
            .iter()
            .filter(|(_, s)| **s == sat)
            .map(|(&j, _)| j)
            .collect();
        if members.is_empty() {
            continue;
        }
        let gains: Vec<f64> = members
            .iter()
            .map(|&j| ctx.tbl.gain(&sat, j).expect("member gain"))
            .collect();
        let max_gain = gains.iter().copied().fold(0.0_f64, f64::max);
        let prob = SatPaProblem {
            sat,
            members: members.clone(),
            gains,
            seats: members.iter().map(|j| state.subcarrier[j]).collect(),
            chi: members
                .iter()
                .map(|&j| ctx.limits.r_min_bps[j] / ctx.tbl.bandwidth_hz())
                .collect(),
            noise_w: ctx.tbl.noise_w(),
            p_max_w: ctx.limits.p_max_w,
            bandwidth_hz: ctx.tbl.bandwidth_hz(),
            i_cap_w: ctx.limits.p_max_w * max_gain,
        };
        let p_init: Vec<f64> = members.iter().map(|j| state.power_w[j]).collect();
        let old_rate = prob.local_sum_rate(&p_init);
        let Ok(sol) = solve_pa(&prob, &p_init, &params.pa) else {
            continue;
        };
        if sol.local_rate_bps < old_rate - 1e-12 {
            continue;
        }
        // Per-subcarrier minimum-rate guard under the candidate powers.
        let mut seats: Vec<usize> = prob.seats.clone();
        seats.sort_unstable();
        seats.dedup();
        let mut ok = true;
        'seats: for k in seats {
            let idxs: Vec<usize> = (0..members.len())
                .filter(|&i| prob.seats[i] == k)
                .collect();
            let pairs: Vec<(f64, f64)> = idxs
                .iter()
                .map(|&i| (sol.powers_w[i], prob.gains[i]))
                .collect();
            let rates =
                crate::channel::subcarrier_rates(&pairs, prob.noise_w, prob.bandwidth_hz);
            for (pos, &i) in idxs.iter().enumerate() {
                let need = ctx.limits.r_min_bps[members[i]];
                if rates[pos] < need * (1.0 - FEASIBILITY_REL_TOL) {
                    ok = false;
                    break 'seats;
                }
            }
        }
        if !ok {
            continue;
        }
        for (i, &j) in members.iter().enumerate() {
            state.power_w.insert(j, sol.powers_w[i]);
        }
    }
}
