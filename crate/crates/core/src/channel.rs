//! Link budget and rate model: log-distance path loss, per-pair linear power
//! gains, co-channel interference, SINR, and Shannon rates over equal-width
//! subcarriers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netstate::NetworkConfiguration;
use crate::orbits::{GeoState, SatelliteId, VisibilitySet};
use crate::SPEED_OF_LIGHT_KM_S;

/// Channel constants. Path loss follows
/// `PL_dB = c1*log10(d_km) + c2 + c3*log10(f_MHz)`; the defaults are the
/// free-space values (c1 = 20, c2 = 32.45, c3 = 20).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Carrier frequency in Hz.
    pub carrier_hz: f64,
    /// Per-subcarrier bandwidth in Hz.
    pub bandwidth_hz: f64,
    /// Number of subcarriers K.
    pub num_subcarriers: usize,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    /// Deterministic shadowing loss in dB.
    pub shadowing_db: f64,
    /// Transmit antenna gain in dB.
    pub tx_gain_db: f64,
    /// Noise power per subcarrier in W.
    pub noise_w: f64,
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.carrier_hz > 0.0) {
            return Err(Error::InvalidArgument("carrier_hz must be > 0".into()));
        }
        if !(self.bandwidth_hz > 0.0) {
            return Err(Error::InvalidArgument("bandwidth_hz must be > 0".into()));
        }
        if self.num_subcarriers == 0 {
            return Err(Error::InvalidArgument("num_subcarriers must be >= 1".into()));
        }
        if !(self.noise_w > 0.0) {
            return Err(Error::InvalidArgument("noise_w must be > 0".into()));
        }
        Ok(())
    }

    /// Center frequency of subcarrier `k` (0-based), offset around the
    /// carrier.
    pub fn subcarrier_hz(&self, k: usize) -> f64 {
        let mid = (self.num_subcarriers as f64 - 1.0) / 2.0;
        self.carrier_hz + (k as f64 - mid) * self.bandwidth_hz
    }
}

/// Path loss in dB for distance `d_km` (km) and frequency `f_hz` (Hz).
pub fn path_loss_db(d_km: f64, f_hz: f64, params: &ChannelParams) -> Result<f64> {
    if !(d_km > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "path loss distance must be > 0, got {d_km}"
        )));
    }
    let f_mhz = f_hz / 1e6;
    Ok(params.c1 * d_km.log10() + params.c2 + params.c3 * f_mhz.log10())
}

/// Linear power gain `|H|^2` for one satellite-UE pair. The small-scale term
/// has unit modulus, so the power gain reduces to the dB budget
/// `-PL + G_t - SF` converted to linear scale.
pub fn channel_gain(d_km: f64, _k: usize, params: &ChannelParams) -> Result<f64> {
    let pl = path_loss_db(d_km, params.carrier_hz, params)?;
    Ok(db_to_linear(-pl + params.tx_gain_db - params.shadowing_db))
}

/// Phase of the unit-modulus small-scale fading term on subcarrier `k`.
/// Affects no power quantity; kept for completeness of the channel model.
pub fn small_scale_phase(d_km: f64, k: usize, params: &ChannelParams) -> f64 {
    let f_k = params.subcarrier_hz(k);
    (2.0 * std::f64::consts::PI * f_k * d_km / SPEED_OF_LIGHT_KM_S)
        % (2.0 * std::f64::consts::PI)
}

pub fn db_to_linear(db: f64) -> f64 {
    10_f64.powf(db / 10.0)
}

pub fn linear_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

/// Precomputed per-slot link table: distances and linear power gains for
/// every (visible satellite, UE) pair. Built once per slot, read-only after.
#[derive(Debug, Clone)]
pub struct ChannelTable {
    pub time_s: f64,
    pub params: ChannelParams,
    /// Visible satellites (the union set), sorted by id.
    pub visible: Vec<SatelliteId>,
    /// Per-UE candidate sets, as indices into `visible`.
    pub per_ue_visible: Vec<Vec<usize>>,
    sat_index: BTreeMap<SatelliteId, usize>,
    /// Row-major [sat][ue] distances in km.
    dist_km: Vec<f64>,
    /// Row-major [sat][ue] linear power gains.
    gain: Vec<f64>,
    n_ues: usize,
}

impl ChannelTable {
    /// Build the table from satellite positions, UE positions, and the
    /// visibility of the slot.
    pub fn build(
        sats: &[(SatelliteId, nalgebra::Vector3<f64>)],
        ues: &[GeoState],
        vis: &VisibilitySet,
        params: ChannelParams,
    ) -> Result<Self> {
        params.validate()?;
        let visible: Vec<SatelliteId> = vis.union.iter().copied().collect();
        let sat_index: BTreeMap<SatelliteId, usize> =
            visible.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let pos: BTreeMap<SatelliteId, nalgebra::Vector3<f64>> =
            sats.iter().map(|(id, p)| (*id, *p)).collect();
        let n_ues = ues.len();
        let mut dist_km = vec![0.0; visible.len() * n_ues];
        let mut gain = vec![0.0; visible.len() * n_ues];
        for (si, id) in visible.iter().enumerate() {
            let sp = pos.get(id).ok_or_else(|| {
                Error::ContractViolation(format!("visible satellite {id} has no position"))
            })?;
            for (ui, ue) in ues.iter().enumerate() {
                let d = (sp - ue.position_km).norm();
                let g = channel_gain(d, 0, &params)?;
                if !(g > 0.0 && g.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "non-positive or non-finite gain for {id}, UE {ui}"
                    )));
                }
                dist_km[si * n_ues + ui] = d;
                gain[si * n_ues + ui] = g;
            }
        }
        let per_ue_visible = vis
            .per_ue
            .iter()
            .map(|set| set.iter().map(|id| sat_index[id]).collect())
            .collect();
        Ok(Self {
            time_s: vis.time_s,
            params,
            visible,
            per_ue_visible,
            sat_index,
            dist_km,
            gain,
            n_ues,
        })
    }

    pub fn n_ues(&self) -> usize {
        self.n_ues
    }

    pub fn num_subcarriers(&self) -> usize {
        self.params.num_subcarriers
    }

    pub fn noise_w(&self) -> f64 {
        self.params.noise_w
    }

    pub fn bandwidth_hz(&self) -> f64 {
        self.params.bandwidth_hz
    }

    pub fn sat_index(&self, sat: &SatelliteId) -> Option<usize> {
        self.sat_index.get(sat).copied()
    }

    /// Linear power gain of the (sat, ue) link. The gain is independent of
    /// the subcarrier index (unit-modulus small-scale fading), so callers pass
    /// only the pair.
    pub fn gain(&self, sat: &SatelliteId, ue: usize) -> Result<f64> {
        let si = self.sat_index(sat).ok_or_else(|| {
            Error::ContractViolation(format!("satellite {sat} is not visible in this slot"))
        })?;
        Ok(self.gain[si * self.n_ues + ue])
    }

    pub fn distance_km(&self, sat: &SatelliteId, ue: usize) -> Result<f64> {
        let si = self.sat_index(sat).ok_or_else(|| {
            Error::ContractViolation(format!("satellite {sat} is not visible in this slot"))
        })?;
        Ok(self.dist_km[si * self.n_ues + ue])
    }

    /// Whether `sat` lies in UE `ue`'s own visibility cone.
    pub fn ue_sees(&self, ue: usize, sat: &SatelliteId) -> bool {
        self.sat_index(sat)
            .is_some_and(|si| self.per_ue_visible[ue].contains(&si))
    }

    /// Satellites in UE `ue`'s cone, as ids.
    pub fn ue_candidates(&self, ue: usize) -> Vec<SatelliteId> {
        self.per_ue_visible[ue]
            .iter()
            .map(|&si| self.visible[si])
            .collect()
    }
}

/// Multiple-access interference seen by UE `j` on subcarrier `k`: the sum of
/// co-satellite, co-subcarrier transmit powers weighted by the victim's own
/// link gain.
pub fn interference(
    cfg: &NetworkConfiguration,
    tbl: &ChannelTable,
    j: usize,
    k: usize,
) -> Result<f64> {
    let sat = cfg.assoc.get(&j).ok_or_else(|| {
        Error::ContractViolation(format!("UE {j} is not associated with any satellite"))
    })?;
    if cfg.subcarrier.get(&j) != Some(&k) {
        return Err(Error::ContractViolation(format!(
            "UE {j} is not scheduled on subcarrier {k}"
        )));
    }
    let g_victim = tbl.gain(sat, j)?;
    let mut acc = 0.0;
    for (&other, other_sat) in &cfg.assoc {
        if other == j || other_sat != sat {
            continue;
        }
        if cfg.subcarrier.get(&other) == Some(&k) {
            acc += cfg.power_w[&other] * g_victim;
        }
    }
    Ok(acc)
}

/// SINR of UE `j` on its scheduled subcarrier `k`.
pub fn sinr(cfg: &NetworkConfiguration, tbl: &ChannelTable, j: usize, k: usize) -> Result<f64> {
    let sat = cfg.assoc.get(&j).ok_or_else(|| {
        Error::ContractViolation(format!("UE {j} is not associated with any satellite"))
    })?;
    let i = interference(cfg, tbl, j, k)?;
    let g = tbl.gain(sat, j)?;
    Ok(cfg.power_w[&j] * g / (i + tbl.noise_w()))
}

/// Rate of UE `j` in bit/s; zero when unassociated.
pub fn user_rate(cfg: &NetworkConfiguration, tbl: &ChannelTable, j: usize) -> f64 {
    let (Some(_), Some(&k)) = (cfg.assoc.get(&j), cfg.subcarrier.get(&j)) else {
        return 0.0;
    };
    match sinr(cfg, tbl, j, k) {
        Ok(g) => tbl.bandwidth_hz() * (1.0 + g).log2(),
        Err(_) => 0.0,
    }
}

/// Network sum rate in bit/s.
pub fn sum_rate(cfg: &NetworkConfiguration, tbl: &ChannelTable) -> f64 {
    (0..tbl.n_ues()).map(|j| user_rate(cfg, tbl, j)).sum()
}

/// Shannon rate of every member of one subcarrier, given the member powers
/// and victim gains. `members[i] = (power_w, victim_gain)`. Interference for
/// member `i` is `gain_i * (total_power - power_i)`.
pub fn subcarrier_rates(members: &[(f64, f64)], noise_w: f64, bandwidth_hz: f64) -> Vec<f64> {
    let total: f64 = members.iter().map(|(p, _)| p).sum();
    members
        .iter()
        .map(|&(p, g)| {
            let i = g * (total - p);
            bandwidth_hz * (1.0 + p * g / (i + noise_w)).log2()
        })
        .collect()
}
