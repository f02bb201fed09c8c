//! Network configurations, bandwidth partitioning among selected satellites,
//! feasibility checking, and the per-slot objective.

use std::collections::{BTreeMap, BTreeSet};

use crate::channel::{self, ChannelTable};
use crate::error::{Error, Result};
use crate::orbits::SatelliteId;

/// Relative slack used when checking the minimum-rate and power-budget
/// constraints; rates and scaled power sums come out of floating-point
/// solves that pin constraints to equality.
pub const FEASIBILITY_REL_TOL: f64 = 1e-7;

/// One point of the decision space: the selected satellites `z`, the user
/// association `x`, the subcarrier allocation `y`, and per-UE powers `p`.
/// Values are immutable snapshots; algorithms build modified copies.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfiguration {
    pub time_s: f64,
    pub selected: BTreeSet<SatelliteId>,
    /// UE -> serving satellite (partial map).
    pub assoc: BTreeMap<usize, SatelliteId>,
    /// UE -> subcarrier index (0-based, partial map).
    pub subcarrier: BTreeMap<usize, usize>,
    /// UE -> transmit power in W (partial map).
    pub power_w: BTreeMap<usize, f64>,
}

impl NetworkConfiguration {
    pub fn empty(time_s: f64) -> Self {
        Self {
            time_s,
            selected: BTreeSet::new(),
            assoc: BTreeMap::new(),
            subcarrier: BTreeMap::new(),
            power_w: BTreeMap::new(),
        }
    }

    /// Members of one satellite, ascending UE index.
    pub fn members_of(&self, sat: &SatelliteId) -> Vec<usize> {
        self.assoc
            .iter()
            .filter(|(_, s)| *s == sat)
            .map(|(&j, _)| j)
            .collect()
    }

    /// Total committed power of one satellite.
    pub fn satellite_power(&self, sat: &SatelliteId) -> f64 {
        self.assoc
            .iter()
            .filter(|(_, s)| *s == sat)
            .map(|(j, _)| self.power_w.get(j).copied().unwrap_or(0.0))
            .sum()
    }
}

/// Disjoint contiguous blocks of subcarrier indices per selected satellite.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BandPartition {
    pub blocks: BTreeMap<SatelliteId, Vec<usize>>,
    pub num_subcarriers: usize,
}

impl BandPartition {
    /// Satellite owning subcarrier `k`, if any.
    pub fn owner(&self, k: usize) -> Option<SatelliteId> {
        self.blocks
            .iter()
            .find(|(_, ks)| ks.contains(&k))
            .map(|(id, _)| *id)
    }

    pub fn subcarriers_of(&self, sat: &SatelliteId) -> &[usize] {
        self.blocks.get(sat).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Optimization limits: selection cap, per-satellite power budget, and the
/// per-UE minimum rates.
#[derive(Debug, Clone)]
pub struct OptimizerLimits {
    pub z_th: usize,
    pub p_max_w: f64,
    /// Minimum rate per UE in bit/s.
    pub r_min_bps: Vec<f64>,
}

impl OptimizerLimits {
    pub fn uniform(z_th: usize, p_max_w: f64, r_min_bps: f64, n_ues: usize) -> Self {
        Self {
            z_th,
            p_max_w,
            r_min_bps: vec![r_min_bps; n_ues],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.z_th < 1 {
            return Err(Error::InvalidArgument("z_th must be >= 1".into()));
        }
        if !(self.p_max_w > 0.0) {
            return Err(Error::InvalidArgument("p_max_w must be > 0".into()));
        }
        if self.r_min_bps.iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::InvalidArgument("r_min must be >= 0".into()));
        }
        Ok(())
    }
}

/// Split subcarriers `0..k` into contiguous blocks over the selected
/// satellites in ascending id order. The first `k mod n` satellites receive
/// `ceil(k/n)` subcarriers, the rest `floor(k/n)`.
pub fn bandwidth_partition(
    selected: &BTreeSet<SatelliteId>,
    num_subcarriers: usize,
) -> Result<BandPartition> {
    let n = selected.len();
    if n == 0 {
        return Err(Error::InvalidArgument(
            "cannot partition bandwidth over zero satellites".into(),
        ));
    }
    if n > num_subcarriers {
        return Err(Error::InfeasiblePartition(format!(
            "{n} satellites selected but only {num_subcarriers} subcarriers exist"
        )));
    }
    let base = num_subcarriers / n;
    let extra = num_subcarriers % n;
    let mut blocks = BTreeMap::new();
    let mut next = 0usize;
    for (i, sat) in selected.iter().enumerate() {
        let size = if i < extra { base + 1 } else { base };
        blocks.insert(*sat, (next..next + size).collect());
        next += size;
    }
    Ok(BandPartition {
        blocks,
        num_subcarriers,
    })
}

/// Tags of the structural and numeric constraints a configuration can break.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintViolation {
    /// A UE's serving satellite is not selected.
    Association { ue: usize },
    /// A satellite's committed power exceeds the budget.
    PowerBudget { sat: SatelliteId, total_w: f64 },
    /// More satellites selected than the cap allows.
    SelectionSize { count: usize },
    /// A UE's rate falls below its minimum.
    MinRate { ue: usize, rate_bps: f64 },
    /// An associated UE has non-positive power.
    PositivePower { ue: usize },
    /// A selected satellite is outside the union visibility set.
    Cone { sat: SatelliteId },
    /// x/y/p maps are structurally inconsistent (mismatched keys, or a
    /// subcarrier outside the serving satellite's band).
    Integrity { detail: String },
}

/// Feasibility verdict with the list of violated constraints.
#[derive(Debug, Clone, Default)]
pub struct FeasibilityReport {
    pub violations: Vec<ConstraintViolation>,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check every constraint of the per-slot problem and report all violations.
pub fn check_feasible(
    cfg: &NetworkConfiguration,
    tbl: &ChannelTable,
    limits: &OptimizerLimits,
) -> FeasibilityReport {
    let mut report = FeasibilityReport::default();

    // Selection size.
    if cfg.selected.len() > limits.z_th {
        report.violations.push(ConstraintViolation::SelectionSize {
            count: cfg.selected.len(),
        });
    }
    // Selected satellites must be visible to someone.
    for sat in &cfg.selected {
        if tbl.sat_index(sat).is_none() {
            report.violations.push(ConstraintViolation::Cone { sat: *sat });
        }
    }
    // Association points into the selection.
    for (&ue, sat) in &cfg.assoc {
        if !cfg.selected.contains(sat) {
            report
                .violations
                .push(ConstraintViolation::Association { ue });
        }
    }
    // Structural integrity: identical key sets and band membership.
    let assoc_keys: BTreeSet<usize> = cfg.assoc.keys().copied().collect();
    let sub_keys: BTreeSet<usize> = cfg.subcarrier.keys().copied().collect();
    let pow_keys: BTreeSet<usize> = cfg.power_w.keys().copied().collect();
    if assoc_keys != sub_keys || assoc_keys != pow_keys {
        report.violations.push(ConstraintViolation::Integrity {
            detail: "x, y, and p must cover exactly the same UEs".into(),
        });
    }
    if !cfg.selected.is_empty() && cfg.selected.len() <= tbl.num_subcarriers() {
        if let Ok(partition) = bandwidth_partition(&cfg.selected, tbl.num_subcarriers()) {
            for (&ue, sat) in &cfg.assoc {
                if let Some(&k) = cfg.subcarrier.get(&ue) {
                    if !partition.subcarriers_of(sat).contains(&k) {
                        report.violations.push(ConstraintViolation::Integrity {
                            detail: format!("UE {ue} sits on subcarrier {k} outside {sat}'s band"),
                        });
                    }
                }
            }
        }
    }
    // Per-satellite power budget.
    let budget = limits.p_max_w * (1.0 + FEASIBILITY_REL_TOL);
    for sat in &cfg.selected {
        let total = cfg.satellite_power(sat);
        if total > budget {
            report.violations.push(ConstraintViolation::PowerBudget {
                sat: *sat,
                total_w: total,
            });
        }
    }
    // Positive power for every associated UE.
    for (&ue, _) in &cfg.assoc {
        if !(cfg.power_w.get(&ue).copied().unwrap_or(0.0) > 0.0) {
            report
                .violations
                .push(ConstraintViolation::PositivePower { ue });
        }
    }
    // Minimum rate for every UE in the scenario (an unassociated UE has rate
    // zero, which violates a positive minimum).
    for ue in 0..tbl.n_ues() {
        let need = limits.r_min_bps.get(ue).copied().unwrap_or(0.0);
        if need <= 0.0 {
            continue;
        }
        let rate = channel::user_rate(cfg, tbl, ue);
        if rate < need * (1.0 - FEASIBILITY_REL_TOL) {
            report.violations.push(ConstraintViolation::MinRate {
                ue,
                rate_bps: rate,
            });
        }
    }
    report
}

/// Per-slot objective: the network sum rate of the configuration.
pub fn theta(cfg: &NetworkConfiguration, tbl: &ChannelTable) -> f64 {
    channel::sum_rate(cfg, tbl)
}
