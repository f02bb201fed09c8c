//! Two-sided matching rounds for user association (UA) and bandwidth
//! allocation (BA), with transmit powers held fixed.
//!
//! A UA round lets a quota-limited set of users propose association changes
//! ranked by the expected rate improvement; satellites admit requesters
//! under their power budgets, greedily by their own preference when
//! oversubscribed. A BA round first seats movers on the best subcarrier of
//! their new satellite (reverting moves that cannot be seated without
//! hurting the network), then runs a swap phase that relocates the
//! minimum-rate user of each subcarrier while the exact sum-rate gain of the
//! best swap stays positive.
//!
//! Every committed change is evaluated against the true rate model, so a
//! completed UA+BA round never decreases the network sum rate.

use std::collections::{BTreeMap, BTreeSet};

use crate::channel::{subcarrier_rates, ChannelTable};
use crate::feasinit::rate_slack;
use crate::netstate::{BandPartition, NetworkConfiguration, OptimizerLimits, FEASIBILITY_REL_TOL};
use crate::orbits::SatelliteId;

/// Slack applied when comparing sum-rate deltas of candidate moves.
const DELTA_TOL: f64 = 1e-12;

/// Stabilization knobs of the matching games. `quota` bounds association
/// changes per round, `change_limit` bounds them per UE over a whole run.
#[derive(Debug, Clone, Copy)]
pub struct MatchingParams {
    pub quota: usize,
    pub change_limit: u32,
    /// Scaling of the advantage score in the satellite-side preference.
    pub phi_ua: f64,
    /// Cost per W of co-channel load in the satellite-side preference.
    pub cost_per_w: f64,
}

impl MatchingParams {
    /// Defaults: quota of one fifth of the users (at least one), four
    /// association changes per UE, unit scaling and unit cost.
    pub fn defaults_for(n_ues: usize) -> Self {
        Self {
            quota: (n_ues + 4) / 5,
            change_limit: 4,
            phi_ua: 1.0,
            cost_per_w: 1.0,
        }
    }
}

/// Read-only context shared by all matching computations in one slot.
pub struct MatchCtx<'a> {
    pub tbl: &'a ChannelTable,
    pub partition: &'a BandPartition,
    pub limits: &'a OptimizerLimits,
    pub params: MatchingParams,
}

#[derive(Debug, Clone, Copy)]
struct PendingMove {
    ue: usize,
    to: SatelliteId,
}

/// Mutable matching state: the association map, the subcarrier map, per-UE
/// change counters, and the moves accepted by the current UA round that
/// still await seating.
#[derive(Debug, Clone)]
pub struct MatchingState {
    pub assoc: BTreeMap<usize, SatelliteId>,
    pub subcarrier: BTreeMap<usize, usize>,
    pub power_w: BTreeMap<usize, f64>,
    pub change_count: Vec<u32>,
    pending: Vec<PendingMove>,
}

impl MatchingState {
    pub fn from_configuration(cfg: &NetworkConfiguration, n_ues: usize) -> Self {
        Self {
            assoc: cfg.assoc.clone(),
            subcarrier: cfg.subcarrier.clone(),
            power_w: cfg.power_w.clone(),
            change_count: vec![0; n_ues],
            pending: Vec::new(),
        }
    }

    /// Write the association and subcarrier maps back into a configuration.
    pub fn apply_to(&self, cfg: &mut NetworkConfiguration) {
        cfg.assoc = self.assoc.clone();
        cfg.subcarrier = self.subcarrier.clone();
        cfg.power_w = self.power_w.clone();
    }

    fn members_on(&self, sat: &SatelliteId, k: usize, exclude: Option<usize>) -> Vec<usize> {
        self.assoc
            .iter()
            .filter(|(&j, s)| {
                *s == sat && self.subcarrier.get(&j) == Some(&k) && Some(j) != exclude
            })
            .map(|(&j, _)| j)
            .collect()
    }

    fn committed_power(&self, sat: &SatelliteId) -> f64 {
        self.assoc
            .iter()
            .filter(|(_, s)| *s == sat)
            .map(|(j, _)| self.power_w.get(j).copied().unwrap_or(0.0))
            .sum()
    }
}

/// Outcome counters of one UA round.
#[derive(Debug, Clone, Copy, Default)]
pub struct UaOutcome {
    /// Proposals accepted by a satellite (still pending their seat).
    pub accepted: usize,
}

/// Outcome counters of one BA round.
#[derive(Debug, Clone, Copy, Default)]
pub struct BaOutcome {
    /// Association changes that found a seat and were kept.
    pub reseated: usize,
    /// Association changes reverted for lack of an acceptable seat.
    pub reverted: usize,
    /// Swap-phase subcarrier moves executed.
    pub swaps: usize,
}

impl BaOutcome {
    pub fn changed(&self) -> bool {
        self.reseated > 0 || self.swaps > 0
    }
}

fn group_rates(ctx: &MatchCtx, state: &MatchingState, members: &[usize]) -> Vec<f64> {
    let sat_of = |j: usize| state.assoc[&j];
    let pairs: Vec<(f64, f64)> = members
        .iter()
        .map(|&j| {
            (
                state.power_w[&j],
                ctx.tbl.gain(&sat_of(j), j).expect("member gain"),
            )
        })
        .collect();
    subcarrier_rates(&pairs, ctx.tbl.noise_w(), ctx.tbl.bandwidth_hz())
}

fn group_rate_sum(ctx: &MatchCtx, state: &MatchingState, members: &[usize]) -> f64 {
    group_rates(ctx, state, members).iter().sum()
}

/// Current rate of UE `j` under the matching state.
pub fn current_rate(ctx: &MatchCtx, state: &MatchingState, j: usize) -> f64 {
    let (Some(sat), Some(&k)) = (state.assoc.get(&j), state.subcarrier.get(&j)) else {
        return 0.0;
    };
    let members = state.members_on(sat, k, None);
    let rates = group_rates(ctx, state, &members);
    members
        .iter()
        .position(|&m| m == j)
        .map(|idx| rates[idx])
        .unwrap_or(0.0)
}

/// Rate UE `j` would see after joining subcarrier `k` of `sat` with the
/// current occupants unchanged. Joining its own current seat returns the
/// current rate.
pub fn hypothetical_join_rate(
    ctx: &MatchCtx,
    state: &MatchingState,
    j: usize,
    sat: &SatelliteId,
    k: usize,
) -> f64 {
    if state.assoc.get(&j) == Some(sat) && state.subcarrier.get(&j) == Some(&k) {
        return current_rate(ctx, state, j);
    }
    let occupants = state.members_on(sat, k, Some(j));
    let g = match ctx.tbl.gain(sat, j) {
        Ok(g) => g,
        Err(_) => return 0.0,
    };
    let p_j = state.power_w[&j];
    let co_power: f64 = occupants.iter().map(|m| state.power_w[m]).sum();
    ctx.tbl.bandwidth_hz() * (1.0 + p_j * g / (g * co_power + ctx.tbl.noise_w())).log2()
}

/// UE-side UA preference: the mean rate increment over the subcarriers of
/// `sat` that would not lower the UE's rate. Negative infinity when no such
/// subcarrier exists, so the UE never proposes there.
pub fn ue_ua_preference(
    ctx: &MatchCtx,
    state: &MatchingState,
    j: usize,
    sat: &SatelliteId,
) -> f64 {
    let r_now = current_rate(ctx, state, j);
    let mut improving = 0usize;
    let mut acc = 0.0;
    for &k in ctx.partition.subcarriers_of(sat) {
        let r_join = hypothetical_join_rate(ctx, state, j, sat, k);
        if r_join >= r_now {
            improving += 1;
            acc += r_join - r_now;
        }
    }
    if improving == 0 {
        f64::NEG_INFINITY
    } else {
        acc / improving as f64
    }
}

/// Satellite-side UA preference: the advantage score of the UE summed over
/// the satellite's band, minus the cost of the co-channel load it brings.
pub fn sat_ua_preference(
    ctx: &MatchCtx,
    state: &MatchingState,
    sat: &SatelliteId,
    j: usize,
) -> f64 {
    let band = ctx.partition.subcarriers_of(sat);
    let p_j = state.power_w.get(&j).copied().unwrap_or(0.0);
    let delta = match rate_slack(ctx.limits.r_min_bps[j], ctx.tbl.bandwidth_hz()) {
        Ok(d) => d,
        Err(_) => return f64::NEG_INFINITY,
    };
    let eps = match ctx.tbl.gain(sat, j) {
        Ok(g) => ctx.tbl.noise_w() / g,
        Err(_) => return f64::NEG_INFINITY,
    };
    let advantage: f64 = band.len() as f64 * (p_j / delta - eps);
    let load: f64 = band.len() as f64 * ctx.params.cost_per_w * p_j;
    ctx.params.phi_ua * advantage - load
}

/// Best seat for UE `j` on satellite `to`, evaluated against the live state:
/// returns `(subcarrier, sum_rate_delta)` of the feasible seat with the
/// largest exact network-rate delta, or `None` when no subcarrier can host
/// the UE without pushing a member below its minimum rate.
fn evaluate_reseat(
    ctx: &MatchCtx,
    state: &MatchingState,
    j: usize,
    to: &SatelliteId,
) -> Option<(usize, f64)> {
    let from = state.assoc[&j];
    let from_k = state.subcarrier[&j];
    // Relief on the subcarrier the UE leaves (independent of destination).
    let old_with = state.members_on(&from, from_k, None);
    let old_without: Vec<usize> = old_with.iter().copied().filter(|&m| m != j).collect();
    let relief = group_rate_sum(ctx, state, &old_without) - group_rate_sum(ctx, state, &old_with);

    let g_j = ctx.tbl.gain(to, j).ok()?;
    let p_j = state.power_w[&j];
    let mut best: Option<(usize, f64)> = None;
    for &k in ctx.partition.subcarriers_of(to) {
        let occupants = state.members_on(to, k, Some(j));
        let before = group_rate_sum(ctx, state, &occupants);
        // Joined group: occupants plus the mover.
        let mut pairs: Vec<(f64, f64)> = occupants
            .iter()
            .map(|&m| (state.power_w[&m], ctx.tbl.gain(to, m).expect("gain")))
            .collect();
        pairs.push((p_j, g_j));
        let joined = subcarrier_rates(&pairs, ctx.tbl.noise_w(), ctx.tbl.bandwidth_hz());
        // Everyone on the destination, mover included, must keep their
        // minimum rate.
        let ok = occupants
            .iter()
            .chain(std::iter::once(&j))
            .zip(&joined)
            .all(|(&m, &rate)| rate >= ctx.limits.r_min_bps[m] * (1.0 - FEASIBILITY_REL_TOL));
        if !ok {
            continue;
        }
        let delta = relief + joined.iter().sum::<f64>() - before;
        match best {
            Some((_, best_delta)) if delta <= best_delta => {}
            _ => best = Some((k, delta)),
        }
    }
    best
}

/// Whether UE `j` could move beneficially right now: a selected, visible
/// satellite other than its own with positive UE-side preference, power
/// headroom, and a seat whose exact rate delta is non-negative.
fn viable_target(ctx: &MatchCtx, state: &MatchingState, j: usize) -> Option<SatelliteId> {
    if state.change_count[j] >= ctx.params.change_limit {
        return None;
    }
    let current = state.assoc.get(&j)?;
    let p_j = state.power_w[&j];
    let mut entries: Vec<(SatelliteId, f64)> = ctx
        .tbl
        .ue_candidates(j)
        .into_iter()
        .filter(|s| s != current && ctx.partition.blocks.contains_key(s))
        .map(|s| (s, ue_ua_preference(ctx, state, j, &s)))
        .filter(|(_, pf)| *pf > 0.0)
        .collect();
    entries.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    for (sat, _) in entries {
        if state.committed_power(&sat) + p_j > ctx.limits.p_max_w {
            continue;
        }
        if let Some((_, delta)) = evaluate_reseat(ctx, state, j, &sat) {
            if delta >= -DELTA_TOL {
                return Some(sat);
            }
        }
    }
    None
}

/// One UA round: rebuild preference lists, pick the top-quota requesters by
/// their best achievable increment, and run the propose/admit loop.
/// Accepted moves are recorded as pending; the association itself commits
/// when the following BA round seats the mover.
pub fn ua_round(ctx: &MatchCtx, state: &mut MatchingState) -> UaOutcome {
    let mut outcome = UaOutcome::default();
    let n_ues = ctx.tbl.n_ues();

    // Preference lists (positive entries only, current satellite excluded)
    // and eligibility: a requester must have at least one target it could
    // actually move to right now.
    let mut lists: BTreeMap<usize, Vec<(SatelliteId, f64)>> = BTreeMap::new();
    let mut gamma: Vec<(usize, f64)> = Vec::new();
    for j in 0..n_ues {
        if state.change_count[j] >= ctx.params.change_limit {
            continue;
        }
        let Some(current) = state.assoc.get(&j).copied() else {
            continue;
        };
        let mut entries: Vec<(SatelliteId, f64)> = ctx
            .tbl
            .ue_candidates(j)
            .into_iter()
            .filter(|s| *s != current && ctx.partition.blocks.contains_key(s))
            .map(|s| {
                let pf = ue_ua_preference(ctx, state, j, &s);
                (s, pf)
            })
            .filter(|(_, pf)| *pf > 0.0)
            .collect();
        entries.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.0.cmp(&b.0))
        });
        if entries.is_empty() || viable_target(ctx, state, j).is_none() {
            continue;
        }
        gamma.push((j, entries[0].1));
        lists.insert(j, entries);
    }
    gamma.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    let mut requesters: Vec<usize> = gamma
        .iter()
        .take(ctx.params.quota)
        .map(|&(j, _)| j)
        .collect();

    // Reservations: power already promised to each satellite by accepted
    // moves of this round (movers stay physically on their old satellite
    // until the BA round seats them).
    let mut reserved: BTreeMap<SatelliteId, f64> = BTreeMap::new();

    while !requesters.is_empty() {
        // Each requester proposes to the head of its remaining list.
        let mut proposals: BTreeMap<SatelliteId, Vec<usize>> = BTreeMap::new();
        let mut exhausted: Vec<usize> = Vec::new();
        for &j in &requesters {
            match lists.get(&j).and_then(|l| l.first()) {
                Some((sat, _)) => proposals.entry(*sat).or_default().push(j),
                None => exhausted.push(j),
            }
        }
        requesters.retain(|j| !exhausted.contains(j));
        if proposals.is_empty() {
            break;
        }

        for (sat, mut reqs) in proposals {
            let headroom = ctx.limits.p_max_w
                - state.committed_power(&sat)
                - reserved.get(&sat).copied().unwrap_or(0.0);
            let incoming: f64 = reqs.iter().map(|j| state.power_w[j]).sum();
            let admitted: Vec<usize> = if incoming <= headroom {
                std::mem::take(&mut reqs)
            } else {
                // Oversubscribed: admit greedily by the satellite-side
                // preference until the budget binds, rejecting the rest.
                reqs.sort_by(|&a, &b| {
                    let pa = sat_ua_preference(ctx, state, &sat, a);
                    let pb = sat_ua_preference(ctx, state, &sat, b);
                    pb.partial_cmp(&pa)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(a.cmp(&b))
                });
                let mut left = headroom;
                let mut taken = Vec::new();
                for &j in &reqs {
                    if state.power_w[&j] <= left {
                        left -= state.power_w[&j];
                        taken.push(j);
                    } else {
                        break;
                    }
                }
                reqs.retain(|j| !taken.contains(j));
                taken
            };
            for j in admitted {
                *reserved.entry(sat).or_default() += state.power_w[&j];
                state.change_count[j] += 1;
                state.pending.push(PendingMove { ue: j, to: sat });
                requesters.retain(|&r| r != j);
                outcome.accepted += 1;
            }
            // Rejected requesters delete this satellite from their lists and
            // re-propose to the next-best target.
            for j in reqs {
                if let Some(list) = lists.get_mut(&j) {
                    list.retain(|(s, _)| *s != sat);
                    if list.is_empty() {
                        requesters.retain(|&r| r != j);
                    }
                }
            }
        }
    }
    outcome
}

/// One BA round: seat the movers accepted by the preceding UA round, then
/// run the swap phase on every selected satellite.
pub fn ba_round(ctx: &MatchCtx, state: &mut MatchingState) -> BaOutcome {
    let mut outcome = BaOutcome::default();

    // Seat movers one at a time, in (target, UE) order, each against the
    // live configuration. A move is kept only when its best feasible seat
    // does not lower the network sum rate; otherwise it is reverted and the
    // UE's change counter is handed back.
    let mut pending = std::mem::take(&mut state.pending);
    pending.sort_by(|a, b| a.to.cmp(&b.to).then(a.ue.cmp(&b.ue)));
    for mv in pending {
        match evaluate_reseat(ctx, state, mv.ue, &mv.to) {
            Some((k, delta)) if delta >= -DELTA_TOL => {
                state.assoc.insert(mv.ue, mv.to);
                state.subcarrier.insert(mv.ue, k);
                outcome.reseated += 1;
                debug_assert!(
                    state.committed_power(&mv.to)
                        <= ctx.limits.p_max_w * (1.0 + FEASIBILITY_REL_TOL)
                );
            }
            _ => {
                state.change_count[mv.ue] = state.change_count[mv.ue].saturating_sub(1);
                outcome.reverted += 1;
            }
        }
    }

    // Swap phase per satellite.
    let sats: Vec<SatelliteId> = ctx.partition.blocks.keys().copied().collect();
    for sat in sats {
        outcome.swaps += swap_phase(ctx, state, &sat);
    }
    outcome
}

/// Exact sum-rate change of moving UE `j` from its seat to subcarrier `k2`
/// on the same satellite, with the destination's minimum-rate check.
fn swap_preference(
    ctx: &MatchCtx,
    state: &MatchingState,
    j: usize,
    k2: usize,
) -> Option<(f64, bool)> {
    let sat = state.assoc[&j];
    let k1 = *state.subcarrier.get(&j)?;
    if k1 == k2 {
        return None;
    }
    let old_with = state.members_on(&sat, k1, None);
    let old_without: Vec<usize> = old_with.iter().copied().filter(|&m| m != j).collect();
    let pf1 = group_rate_sum(ctx, state, &old_without) - group_rate_sum(ctx, state, &old_with);

    let occupants = state.members_on(&sat, k2, Some(j));
    let before = group_rate_sum(ctx, state, &occupants);
    let mut pairs: Vec<(f64, f64)> = occupants
        .iter()
        .map(|&m| (state.power_w[&m], ctx.tbl.gain(&sat, m).expect("gain")))
        .collect();
    pairs.push((state.power_w[&j], ctx.tbl.gain(&sat, j).ok()?));
    let joined = subcarrier_rates(&pairs, ctx.tbl.noise_w(), ctx.tbl.bandwidth_hz());
    let feasible = occupants
        .iter()
        .chain(std::iter::once(&j))
        .zip(&joined)
        .all(|(&m, &rate)| rate >= ctx.limits.r_min_bps[m] * (1.0 - FEASIBILITY_REL_TOL));
    let pf2 = joined.iter().sum::<f64>() - before;
    Some((pf1 + pf2, feasible))
}

/// Swap phase of one satellite: repeatedly move the minimum-rate UE of some
/// subcarrier to the destination with the largest positive exact gain.
/// Executed (origin, destination) pairs are blocked until the candidate set
/// is rebuilt.
fn swap_phase(ctx: &MatchCtx, state: &mut MatchingState, sat: &SatelliteId) -> usize {
    let band: Vec<usize> = ctx.partition.subcarriers_of(sat).to_vec();
    let mut executed = 0usize;
    loop {
        // Candidate movers: the minimum-rate member of each occupied
        // subcarrier (ties by UE index).
        let mut movers: Vec<usize> = Vec::new();
        for &k in &band {
            let members = state.members_on(sat, k, None);
            if members.is_empty() {
                continue;
            }
            let rates = group_rates(ctx, state, &members);
            let mut best = members[0];
            let mut best_rate = rates[0];
            for (idx, &m) in members.iter().enumerate() {
                if rates[idx] < best_rate || (rates[idx] == best_rate && m < best) {
                    best = m;
                    best_rate = rates[idx];
                }
            }
            movers.push(best);
        }
        let mut blocked: BTreeSet<(usize, usize)> = BTreeSet::new();
        let mut disqualified: BTreeSet<(usize, usize)> = BTreeSet::new();
        let mut moved_this_pass = 0usize;
        loop {
            // Pick the best unblocked, qualified pair by fresh preference.
            let mut best: Option<(usize, usize, f64)> = None;
            for &j in &movers {
                let k1 = state.subcarrier[&j];
                for &k2 in &band {
                    if k2 == k1
                        || blocked.contains(&(k1, k2))
                        || disqualified.contains(&(j, k2))
                    {
                        continue;
                    }
                    if let Some((pf, _)) = swap_preference(ctx, state, j, k2) {
                        match best {
                            Some((_, _, b)) if pf <= b => {}
                            _ => best = Some((j, k2, pf)),
                        }
                    }
                }
            }
            let Some((j, k2, pf)) = best else { break };
            if pf <= 0.0 {
                break;
            }
            let (_, feasible) = swap_preference(ctx, state, j, k2).expect("pair just scored");
            if feasible {
                let k1 = state.subcarrier[&j];
                state.subcarrier.insert(j, k2);
                blocked.insert((k1, k2));
                executed += 1;
                moved_this_pass += 1;
            } else {
                disqualified.insert((j, k2));
            }
        }
        if moved_this_pass == 0 {
            break;
        }
    }
    executed
}

/// Stability: no UE has a beneficial association move that a satellite would
/// admit and seat, and no subcarrier's minimum-rate UE has a feasible swap
/// with positive exact gain.
pub fn is_stable(ctx: &MatchCtx, state: &MatchingState) -> bool {
    for j in 0..ctx.tbl.n_ues() {
        if viable_target(ctx, state, j).is_some() {
            return false;
        }
    }
    for sat in ctx.partition.blocks.keys() {
        let band = ctx.partition.subcarriers_of(sat);
        for &k in band {
            let members = state.members_on(sat, k, None);
            if members.is_empty() {
                continue;
            }
            let rates = group_rates(ctx, state, &members);
            let (mut mover, mut mover_rate) = (members[0], rates[0]);
            for (idx, &m) in members.iter().enumerate() {
                if rates[idx] < mover_rate {
                    mover = m;
                    mover_rate = rates[idx];
                }
            }
            for &k2 in band {
                if let Some((pf, feasible)) = swap_preference(ctx, state, mover, k2) {
                    if feasible && pf > 0.0 {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// Network sum rate under the matching state (powers fixed).
pub fn state_sum_rate(ctx: &MatchCtx, state: &MatchingState) -> f64 {
    let mut total = 0.0;
    for (sat, band) in &ctx.partition.blocks {
        for &k in band {
            let members = state.members_on(sat, k, None);
            total += group_rate_sum(ctx, state, &members);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelParams;
    use crate::netstate::bandwidth_partition;
    use crate::orbits::{union_visible, GeoState};
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use std::collections::BTreeSet;

    /// Two satellites over a short UE arc, K subcarriers split between them.
    fn two_sat_world(
        n_ues: usize,
        k: usize,
    ) -> (ChannelTable, SatelliteId, SatelliteId) {
        let s1 = SatelliteId { plane: 1, index: 1 };
        let s2 = SatelliteId { plane: 2, index: 1 };
        let r = crate::EARTH_RADIUS_KM + 550.0;
        let sats = vec![
            (s1, Vector3::new(0.0, 0.0, r)),
            (s2, Vector3::new(300.0, 0.0, (r * r - 300.0 * 300.0).sqrt())),
        ];
        let ues: Vec<GeoState> = (0..n_ues)
            .map(|i| GeoState {
                position_km: Vector3::new(10.0 * i as f64, 0.0, crate::EARTH_RADIUS_KM),
                time_s: 0.0,
            })
            .collect();
        let vis = union_visible(
            0.0,
            ues.iter().map(|_| BTreeSet::from([s1, s2])).collect(),
        );
        let params = ChannelParams {
            carrier_hz: 6e9,
            bandwidth_hz: 10e6,
            num_subcarriers: k,
            c1: 20.0,
            c2: 32.45,
            c3: 20.0,
            shadowing_db: 1.0,
            tx_gain_db: 30.0,
            noise_w: 2.0e-13,
        };
        let sats_pos = sats.clone();
        let tbl = ChannelTable::build(&sats_pos, &ues, &vis, params).unwrap();
        (tbl, s1, s2)
    }

    fn make_ctx<'a>(
        tbl: &'a ChannelTable,
        partition: &'a BandPartition,
        limits: &'a OptimizerLimits,
        quota: usize,
    ) -> MatchCtx<'a> {
        let mut params = MatchingParams::defaults_for(tbl.n_ues());
        params.quota = quota;
        MatchCtx {
            tbl,
            partition,
            limits,
            params,
        }
    }

    fn seed_state(
        entries: &[(usize, SatelliteId, usize, f64)],
        n_ues: usize,
    ) -> MatchingState {
        MatchingState {
            assoc: entries.iter().map(|&(j, s, _, _)| (j, s)).collect(),
            subcarrier: entries.iter().map(|&(j, _, k, _)| (j, k)).collect(),
            power_w: entries.iter().map(|&(j, _, _, p)| (j, p)).collect(),
            change_count: vec![0; n_ues],
            pending: Vec::new(),
        }
    }

    #[test]
    fn ue_preference_self_join_and_sentinel() {
        let (tbl, s1, s2) = two_sat_world(2, 4);
        let selected = BTreeSet::from([s1, s2]);
        let partition = bandwidth_partition(&selected, 4).unwrap();
        let limits = OptimizerLimits::uniform(2, 5.0, 0.1e6, 2);
        let ctx = make_ctx(&tbl, &partition, &limits, 1);
        // UE 0 alone on its satellite: every subcarrier of the same
        // satellite offers at least the current rate, so the preference for
        // the own satellite is finite and non-negative.
        let state = seed_state(&[(0, s1, 0, 0.5), (1, s2, 2, 0.5)], 2);
        let own = ue_ua_preference(&ctx, &state, 0, &s1);
        assert!(own >= 0.0);
        // A crowded single-subcarrier target can fall below the current
        // rate on every subcarrier: sentinel.
        let mut crowded = seed_state(
            &[(0, s1, 0, 2.0), (1, s2, 2, 1e-6)],
            2,
        );
        crowded.power_w.insert(0, 2.0);
        let pf = ue_ua_preference(&ctx, &crowded, 1, &s1);
        // UE 1 joining s1's band next to a 2 W interferer on k0 still has
        // empty k1 available, so the sentinel needs the interferer on every
        // subcarrier; instead check the sentinel through a direct empty-set
        // case: a satellite with no subcarriers.
        assert!(pf.is_finite() || pf == f64::NEG_INFINITY);
        let empty_partition = bandwidth_partition(&BTreeSet::from([s1]), 4).unwrap();
        let ctx2 = make_ctx(&tbl, &empty_partition, &limits, 1);
        assert_eq!(
            ue_ua_preference(&ctx2, &crowded, 1, &s2),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn sat_preference_formula() {
        let (tbl, s1, s2) = two_sat_world(2, 4);
        let selected = BTreeSet::from([s1, s2]);
        let partition = bandwidth_partition(&selected, 4).unwrap();
        let limits = OptimizerLimits::uniform(2, 5.0, 0.1e6, 2);
        let ctx = make_ctx(&tbl, &partition, &limits, 1);
        let state = seed_state(&[(0, s1, 0, 0.7), (1, s2, 2, 0.4)], 2);
        let band = partition.subcarriers_of(&s1).len() as f64;
        let delta = rate_slack(0.1e6, 10e6).unwrap();
        let eps = tbl.noise_w() / tbl.gain(&s1, 1).unwrap();
        let expect = band * (0.4 / delta - eps) - band * 0.4;
        assert_relative_eq!(
            sat_ua_preference(&ctx, &state, &s1, 1),
            expect,
            max_relative = 1e-12
        );
        // Zero-power boundary: pure channel penalty.
        let mut zero = state.clone();
        zero.power_w.insert(1, 0.0);
        assert_relative_eq!(
            sat_ua_preference(&ctx, &zero, &s1, 1),
            -band * eps,
            max_relative = 1e-12
        );
    }

    #[test]
    fn ua_round_zero_quota_is_identity() {
        let (tbl, s1, s2) = two_sat_world(3, 4);
        let selected = BTreeSet::from([s1, s2]);
        let partition = bandwidth_partition(&selected, 4).unwrap();
        let limits = OptimizerLimits::uniform(2, 5.0, 0.1e6, 3);
        let ctx = make_ctx(&tbl, &partition, &limits, 0);
        let mut state = seed_state(
            &[(0, s1, 0, 0.5), (1, s1, 1, 0.5), (2, s2, 2, 0.5)],
            3,
        );
        let before = state.clone();
        let out = ua_round(&ctx, &mut state);
        assert_eq!(out.accepted, 0);
        assert_eq!(state.assoc, before.assoc);
    }

    #[test]
    fn ua_round_moves_to_better_satellite() {
        let (tbl, s1, s2) = two_sat_world(3, 4);
        let selected = BTreeSet::from([s1, s2]);
        let partition = bandwidth_partition(&selected, 4).unwrap();
        let limits = OptimizerLimits::uniform(2, 5.0, 0.05e6, 3);
        let ctx = make_ctx(&tbl, &partition, &limits, 2);
        // UEs 0 and 1 crammed on one subcarrier of s1; s2 is empty with
        // headroom, so someone should move and the sum rate must not drop.
        let mut state = seed_state(
            &[(0, s1, 0, 0.5), (1, s1, 0, 0.5), (2, s1, 1, 0.5)],
            3,
        );
        let before = state_sum_rate(&ctx, &state);
        let ua = ua_round(&ctx, &mut state);
        assert!(ua.accepted >= 1);
        let ba = ba_round(&ctx, &mut state);
        assert!(ba.reseated >= 1);
        let after = state_sum_rate(&ctx, &state);
        assert!(after >= before - 1e-9, "round decreased {before} -> {after}");
        // The mover landed inside its new satellite's band.
        for (&j, sat) in &state.assoc {
            let k = state.subcarrier[&j];
            assert!(partition.subcarriers_of(sat).contains(&k));
        }
    }

    #[test]
    fn ua_round_rejects_on_binding_power() {
        let (tbl, s1, s2) = two_sat_world(3, 4);
        let selected = BTreeSet::from([s1, s2]);
        let partition = bandwidth_partition(&selected, 4).unwrap();
        // s2 already at the power budget: every proposal bounces.
        let limits = OptimizerLimits::uniform(2, 1.0, 0.05e6, 3);
        let ctx = make_ctx(&tbl, &partition, &limits, 3);
        let mut state = seed_state(
            &[(0, s1, 0, 0.4), (1, s1, 0, 0.4), (2, s2, 2, 1.0)],
            3,
        );
        let before = state.assoc.clone();
        ua_round(&ctx, &mut state);
        let ba = ba_round(&ctx, &mut state);
        // Movers may still shuffle within s1 via swaps, but no one lands on
        // the saturated satellite.
        assert_eq!(ba.reseated, 0);
        for (&j, sat) in &state.assoc {
            if before[&j] == s2 {
                assert_eq!(*sat, s2);
            } else {
                assert_eq!(*sat, s1);
            }
        }
    }

    #[test]
    fn ba_swap_relieves_crowded_subcarrier() {
        let (tbl, s1, s2) = two_sat_world(2, 2);
        let selected = BTreeSet::from([s1, s2]);
        let partition = bandwidth_partition(&selected, 2).unwrap();
        let limits = OptimizerLimits::uniform(2, 5.0, 0.01e6, 2);
        let ctx = make_ctx(&tbl, &partition, &limits, 1);
        // Both UEs share s1's only... with K=2 split, s1 owns one
        // subcarrier. Use a single satellite world instead.
        let selected1 = BTreeSet::from([s1]);
        let partition1 = bandwidth_partition(&selected1, 2).unwrap();
        let ctx1 = MatchCtx {
            tbl: ctx.tbl,
            partition: &partition1,
            limits: ctx.limits,
            params: ctx.params,
        };
        let mut state = seed_state(&[(0, s1, 0, 0.5), (1, s1, 0, 0.5)], 2);
        let before = state_sum_rate(&ctx1, &state);
        let out = ba_round(&ctx1, &mut state);
        assert!(out.swaps >= 1, "expected an interference-relieving swap");
        assert_ne!(state.subcarrier[&0], state.subcarrier[&1]);
        assert!(state_sum_rate(&ctx1, &state) > before);
    }

    #[test]
    fn ba_swap_refuses_when_destination_breaks_min_rate() {
        let (tbl, s1, _) = two_sat_world(3, 2);
        let selected = BTreeSet::from([s1]);
        let partition = bandwidth_partition(&selected, 2).unwrap();
        // Minimum rate set just below the solo rates, so stacking a third
        // UE on a pair violates an incumbent's minimum.
        let g = tbl.gain(&s1, 0).unwrap();
        let p = 0.5;
        let duo_sinr = p * g / (p * g + tbl.noise_w());
        let duo_rate = 10e6 * (1.0 + duo_sinr).log2();
        let limits = OptimizerLimits::uniform(1, 5.0, duo_rate * 0.98, 3);
        let ctx = make_ctx(&tbl, &partition, &limits, 1);
        // UE 2 is alone (high rate); UEs 0 and 1 share k0 at their minimum.
        let mut state = seed_state(
            &[(0, s1, 0, p), (1, s1, 0, p), (2, s1, 1, p)],
            3,
        );
        let (pf, feasible) = swap_preference(&ctx, &state, 0, 1).unwrap();
        // Moving a sharer next to the solo UE would push rates below the
        // duo minimum for the solo UE... the move must be refused by the
        // feasibility flag whenever the constraint binds.
        if pf > 0.0 {
            assert!(!feasible);
        }
        let before = state.clone();
        ba_round(&ctx, &mut state);
        for j in 0..3 {
            let members =
                state.members_on(&s1, state.subcarrier[&j], None);
            let rates = group_rates(&ctx, &state, &members);
            for (idx, &m) in members.iter().enumerate() {
                assert!(
                    rates[idx] >= limits.r_min_bps[m] * (1.0 - 1e-6),
                    "UE {m} below minimum after swap phase"
                );
            }
        }
        let _ = before;
    }

    #[test]
    fn self_move_has_zero_preference() {
        let (tbl, s1, _) = two_sat_world(2, 2);
        let selected = BTreeSet::from([s1]);
        let partition = bandwidth_partition(&selected, 2).unwrap();
        let limits = OptimizerLimits::uniform(1, 5.0, 0.01e6, 2);
        let ctx = make_ctx(&tbl, &partition, &limits, 1);
        let state = seed_state(&[(0, s1, 0, 0.5), (1, s1, 1, 0.5)], 2);
        // Moving onto the current subcarrier is not a candidate at all.
        assert!(swap_preference(&ctx, &state, 0, 0).is_none());
        // A lone mover to the other (empty-but-for-partner) subcarrier has
        // an exact-delta preference; moving back and forth cancels.
        let (pf_01, _) = swap_preference(&ctx, &state, 0, 1).unwrap();
        let (pf_10, _) = swap_preference(&ctx, &state, 1, 0).unwrap();
        assert_relative_eq!(pf_01, pf_10, max_relative = 1e-9);
    }

    #[test]
    fn converged_rounds_are_stable_and_detectably_unstable_when_forced() {
        let (tbl, s1, s2) = two_sat_world(4, 4);
        let selected = BTreeSet::from([s1, s2]);
        let partition = bandwidth_partition(&selected, 4).unwrap();
        let limits = OptimizerLimits::uniform(2, 5.0, 0.05e6, 4);
        let ctx = make_ctx(&tbl, &partition, &limits, 2);
        let mut state = seed_state(
            &[
                (0, s1, 0, 0.5),
                (1, s1, 0, 0.5),
                (2, s1, 1, 0.5),
                (3, s2, 2, 0.5),
            ],
            4,
        );
        // Iterate rounds to a fixpoint.
        for _ in 0..20 {
            let mut trial = state.clone();
            ua_round(&ctx, &mut trial);
            let out = ba_round(&ctx, &mut trial);
            let changed = out.changed();
            state = trial;
            if !changed {
                break;
            }
        }
        assert!(is_stable(&ctx, &state), "fixpoint must be stable");
        // Force both sharers onto one subcarrier with an empty one free:
        // the minimum-rate UE now has a positive-gain swap.
        let mut forced = state.clone();
        let band1: Vec<usize> = partition.subcarriers_of(&s1).to_vec();
        let on_s1: Vec<usize> = forced
            .assoc
            .iter()
            .filter(|(_, s)| **s == s1)
            .map(|(&j, _)| j)
            .collect();
        if on_s1.len() >= 2 && band1.len() >= 2 {
            for &j in &on_s1 {
                forced.subcarrier.insert(j, band1[0]);
            }
            assert!(!is_stable(&ctx, &forced), "crowded state must be unstable");
        }
    }

    #[test]
    fn quota_and_change_limits_hold() {
        let (tbl, s1, s2) = two_sat_world(5, 4);
        let selected = BTreeSet::from([s1, s2]);
        let partition = bandwidth_partition(&selected, 4).unwrap();
        let limits = OptimizerLimits::uniform(2, 10.0, 0.02e6, 5);
        let ctx = make_ctx(&tbl, &partition, &limits, 1);
        let mut state = seed_state(
            &[
                (0, s1, 0, 0.5),
                (1, s1, 0, 0.5),
                (2, s1, 1, 0.5),
                (3, s1, 1, 0.5),
                (4, s2, 2, 0.5),
            ],
            5,
        );
        for _ in 0..12 {
            let before_assoc = state.assoc.clone();
            ua_round(&ctx, &mut state);
            ba_round(&ctx, &mut state);
            let moved = state
                .assoc
                .iter()
                .filter(|(j, s)| before_assoc.get(j) != Some(s))
                .count();
            assert!(moved <= ctx.params.quota, "quota exceeded: {moved}");
        }
        for j in 0..5 {
            assert!(state.change_count[j] <= ctx.params.change_limit);
        }
    }
}
