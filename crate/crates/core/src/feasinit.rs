//! Feasible starting point: place every UE on a subcarrier and solve the
//! per-subcarrier linear systems that pin each placed UE's rate exactly to
//! its minimum.
//!
//! For a subcarrier with members `j = 1..J`, requiring `r_j = r_min_j` is
//! equivalent to the linear system `A p = eps` with `A[j][j] = 1/delta_j`,
//! `A[j][j'] = -1` off-diagonal, `delta_j = 2^(r_min_j/B) - 1`, and
//! `eps[j] = sigma^2 / g_j`. A placement is admitted only when the augmented
//! system has a robustly nonzero determinant and a strictly positive
//! solution.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::channel::ChannelTable;
use crate::error::{Error, Result};
use crate::netstate::{BandPartition, NetworkConfiguration, OptimizerLimits};
use crate::orbits::SatelliteId;

/// Relative determinant threshold for the solvability test, scaled by the
/// Hadamard bound of the matrix so the test is invariant to row scaling.
pub const DET_REL_GUARD: f64 = 1e-12;

/// Rate slack `delta = 2^(r_min/B) - 1` of one UE.
pub fn rate_slack(r_min_bps: f64, bandwidth_hz: f64) -> Result<f64> {
    if !(r_min_bps > 0.0) {
        return Err(Error::InvalidArgument(
            "rate slack requires r_min > 0".into(),
        ));
    }
    Ok((r_min_bps / bandwidth_hz).exp2() - 1.0)
}

/// Noise-over-gain term `eps = sigma^2 / g` of one UE on one subcarrier.
pub fn noise_over_gain(noise_w: f64, gain: f64) -> Result<f64> {
    if !(gain > 0.0) {
        return Err(Error::InvalidArgument("zero channel gain".into()));
    }
    Ok(noise_w / gain)
}

/// The linear system of one subcarrier.
#[derive(Debug, Clone)]
pub struct SubcarrierSystem {
    pub subcarrier: usize,
    /// UE indices in system row order.
    pub members: Vec<usize>,
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    deltas: Vec<f64>,
}

impl SubcarrierSystem {
    pub fn empty(subcarrier: usize) -> Self {
        Self {
            subcarrier,
            members: Vec::new(),
            matrix: DMatrix::zeros(0, 0),
            rhs: DVector::zeros(0),
            deltas: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Build the system for `members` (ordered) from their per-member gains and
/// minimum rates.
pub fn build_system(
    subcarrier: usize,
    members: &[usize],
    gains: &[f64],
    r_min_bps: &[f64],
    bandwidth_hz: f64,
    noise_w: f64,
) -> Result<SubcarrierSystem> {
    assert_eq!(members.len(), gains.len());
    assert_eq!(members.len(), r_min_bps.len());
    let n = members.len();
    let mut deltas = Vec::with_capacity(n);
    let mut rhs = DVector::zeros(n);
    for i in 0..n {
        deltas.push(rate_slack(r_min_bps[i], bandwidth_hz)?);
        rhs[i] = noise_over_gain(noise_w, gains[i])?;
    }
    let mut matrix = DMatrix::from_element(n, n, -1.0);
    for i in 0..n {
        matrix[(i, i)] = 1.0 / deltas[i];
    }
    Ok(SubcarrierSystem {
        subcarrier,
        members: members.to_vec(),
        matrix,
        rhs,
        deltas,
    })
}

/// Return the `(J+1)`-sized system with UE `j` appended: the old block is
/// preserved, the new diagonal is `1/delta_j`, all new off-diagonals are -1.
pub fn augment(
    sys: &SubcarrierSystem,
    ue: usize,
    gain: f64,
    r_min_bps: f64,
    bandwidth_hz: f64,
    noise_w: f64,
) -> Result<SubcarrierSystem> {
    if sys.members.contains(&ue) {
        return Err(Error::ContractViolation(format!(
            "UE {ue} is already a member of subcarrier {}",
            sys.subcarrier
        )));
    }
    let delta = rate_slack(r_min_bps, bandwidth_hz)?;
    let eps = noise_over_gain(noise_w, gain)?;
    let n = sys.len();
    let mut matrix = DMatrix::from_element(n + 1, n + 1, -1.0);
    matrix.view_mut((0, 0), (n, n)).copy_from(&sys.matrix);
    matrix[(n, n)] = 1.0 / delta;
    let mut rhs = DVector::zeros(n + 1);
    rhs.rows_mut(0, n).copy_from(&sys.rhs);
    rhs[n] = eps;
    let mut members = sys.members.clone();
    members.push(ue);
    let mut deltas = sys.deltas.clone();
    deltas.push(delta);
    Ok(SubcarrierSystem {
        subcarrier: sys.subcarrier,
        members,
        matrix,
        rhs,
        deltas,
    })
}

/// Solve the system, returning member powers when the matrix is robustly
/// nonsingular. Positivity is not enforced here; see [`is_solvable`].
pub fn solve(sys: &SubcarrierSystem) -> Option<DVector<f64>> {
    if sys.is_empty() {
        return Some(DVector::zeros(0));
    }
    // Hadamard bound: product of row norms, a scale-aware magnitude for the
    // determinant test.
    let n = sys.len();
    let mut hadamard = 1.0;
    for i in 0..n {
        hadamard *= sys.matrix.row(i).norm();
    }
    let lu = sys.matrix.clone().lu();
    let det = lu.determinant();
    if !(det.abs() > DET_REL_GUARD * hadamard) {
        return None;
    }
    lu.solve(&sys.rhs)
}

/// True iff the system has a robustly nonzero determinant and a strictly
/// positive solution.
pub fn is_solvable(sys: &SubcarrierSystem) -> bool {
    match solve(sys) {
        Some(p) => p.iter().all(|&v| v > 0.0),
        None => false,
    }
}

/// Feasible-start output: the association, subcarrier, and power maps.
#[derive(Debug, Clone)]
pub struct InitialAllocation {
    pub assoc: BTreeMap<usize, SatelliteId>,
    pub subcarrier: BTreeMap<usize, usize>,
    pub power_w: BTreeMap<usize, f64>,
}

/// Construct the feasible starting point for a selected subset `z` with its
/// band partition.
///
/// UEs are processed in descending `r_min / mean-gain` order (ties by UE
/// index); each UE is placed on the first subcarrier, scanning its candidate
/// subcarriers in descending own-gain order, whose augmented system is
/// solvable and whose satellite stays within the power budget. Member powers
/// of the touched subcarrier are re-solved so every placed UE's rate equals
/// its minimum exactly.
pub fn initialize(
    partition: &BandPartition,
    tbl: &ChannelTable,
    limits: &OptimizerLimits,
) -> Result<InitialAllocation> {
    let n_ues = tbl.n_ues();
    let bandwidth = tbl.bandwidth_hz();
    let noise = tbl.noise_w();

    // Candidate satellites per UE: selected and inside the UE's own cone.
    let mut candidates: Vec<Vec<SatelliteId>> = Vec::with_capacity(n_ues);
    for ue in 0..n_ues {
        let cands: Vec<SatelliteId> = tbl
            .ue_candidates(ue)
            .into_iter()
            .filter(|s| partition.blocks.contains_key(s))
            .collect();
        candidates.push(cands);
    }

    // Priority: descending r_min / mean gain, ties by UE index.
    let mut order: Vec<usize> = (0..n_ues).collect();
    let mut priority = vec![0.0_f64; n_ues];
    for ue in 0..n_ues {
        if candidates[ue].is_empty() {
            return Err(Error::InitializationInfeasible { ue });
        }
        let mean_gain: f64 = candidates[ue]
            .iter()
            .map(|s| tbl.gain(s, ue).unwrap_or(0.0))
            .sum::<f64>()
            / candidates[ue].len() as f64;
        priority[ue] = limits.r_min_bps[ue] / mean_gain;
    }
    order.sort_by(|&a, &b| {
        priority[b]
            .partial_cmp(&priority[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut systems: BTreeMap<usize, SubcarrierSystem> = BTreeMap::new();
    let mut out = InitialAllocation {
        assoc: BTreeMap::new(),
        subcarrier: BTreeMap::new(),
        power_w: BTreeMap::new(),
    };
    // Committed power per satellite.
    let mut sat_power: BTreeMap<SatelliteId, f64> = BTreeMap::new();

    for &ue in &order {
        // Candidate (sat, subcarrier) pairs in descending own-gain order,
        // ties broken by (sat, k).
        let mut slots: Vec<(SatelliteId, usize, f64)> = Vec::new();
        for sat in &candidates[ue] {
            let g = tbl.gain(sat, ue)?;
            for &k in partition.subcarriers_of(sat) {
                slots.push((*sat, k, g));
            }
        }
        slots.sort_by(|a, b| {
            b.2.partial_cmp(&a.2)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.0.cmp(&b.0))
                .then(a.1.cmp(&b.1))
        });

        let mut placed = false;
        for (sat, k, gain) in slots {
            let base = systems
                .get(&k)
                .cloned()
                .unwrap_or_else(|| SubcarrierSystem::empty(k));
            let aug = augment(&base, ue, gain, limits.r_min_bps[ue], bandwidth, noise)?;
            let Some(powers) = solve(&aug) else { continue };
            if !powers.iter().all(|&v| v > 0.0) {
                continue;
            }
            // Budget check: replacing this subcarrier's old powers with the
            // new solution must keep the satellite within P_max.
            let old_sub_total: f64 = base
                .members
                .iter()
                .map(|m| out.power_w.get(m).copied().unwrap_or(0.0))
                .sum();
            let new_sub_total: f64 = powers.iter().sum();
            let sat_total = sat_power.get(&sat).copied().unwrap_or(0.0);
            if sat_total - old_sub_total + new_sub_total > limits.p_max_w {
                continue;
            }
            // Commit: update all member powers of this subcarrier.
            for (idx, member) in aug.members.iter().enumerate() {
                out.power_w.insert(*member, powers[idx]);
            }
            out.assoc.insert(ue, sat);
            out.subcarrier.insert(ue, k);
            sat_power.insert(sat, sat_total - old_sub_total + new_sub_total);
            systems.insert(k, aug);
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::InitializationInfeasible { ue });
        }
    }
    Ok(out)
}

/// Assemble a full configuration from an initial allocation.
pub fn into_configuration(
    alloc: InitialAllocation,
    selected: &std::collections::BTreeSet<SatelliteId>,
    time_s: f64,
) -> NetworkConfiguration {
    NetworkConfiguration {
        time_s,
        selected: selected.clone(),
        assoc: alloc.assoc,
        subcarrier: alloc.subcarrier,
        power_w: alloc.power_w,
    }
}
