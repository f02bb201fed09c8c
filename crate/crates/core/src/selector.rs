//! Outer search over satellite subsets.
//!
//! The search walks a Markov chain whose states are satellite subsets:
//! exploration stages redraw the subset at random with a decaying
//! probability, consolidation stages probabilistically revert to the
//! previous configuration using a sigmoid acceptance rule whose inverse
//! temperature rises over time. Stationary weights of the idealized chain
//! follow a softmax in the objective. Four simpler selection policies are
//! provided as baselines.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::channel::ChannelTable;
use crate::error::{Error, Result};
use crate::jubpa::{run_jubpa, JubpaParams, JubpaResult};
use crate::netstate::OptimizerLimits;
use crate::orbits::SatelliteId;

/// Chain parameters. `beta0` and `beta_step` act on objectives normalized by
/// the sum of minimum rates, so they are dimensionless and carry across
/// scenarios.
#[derive(Debug, Clone, Copy)]
pub struct MarkovParams {
    pub beta0: f64,
    pub beta_step: f64,
    pub nu_step: f64,
    /// Attempts to find a feasible initial subset before giving up.
    pub init_attempts: usize,
    /// Hard cap on chain stages (never reached in practice).
    pub stage_cap: usize,
}

impl Default for MarkovParams {
    fn default() -> Self {
        Self {
            beta0: 1.0,
            beta_step: 0.1,
            nu_step: 0.05,
            init_attempts: 64,
            stage_cap: 100_000,
        }
    }
}

/// Transition probability `1 / (1 + e^(beta (theta_from - theta_to)))`,
/// computed through the stable sigmoid form.
pub fn transition_prob(theta_from: f64, theta_to: f64, beta: f64) -> f64 {
    let d = beta * (theta_from - theta_to);
    if d >= 0.0 {
        let e = (-d).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + d.exp())
    }
}

/// Softmax weights `e^(beta theta_i) / sum_m e^(beta theta_m)` with
/// max-subtraction stabilization.
pub fn stationary_weights(thetas: &[f64], beta: f64) -> Vec<f64> {
    if thetas.is_empty() {
        return Vec::new();
    }
    let peak = thetas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = thetas.iter().map(|&t| (beta * (t - peak)).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// One evaluated chain state.
#[derive(Debug, Clone)]
struct ChainPoint {
    z: BTreeSet<SatelliteId>,
    theta: f64,
    result: JubpaResult,
}

/// Full search outcome: the best feasible configuration ever visited and the
/// per-stage objective trace.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best: JubpaResult,
    pub best_theta: f64,
    /// (stage index, objective of the then-current state).
    pub trace: Vec<(usize, f64)>,
    pub stages: usize,
    /// Distinct subsets evaluated (cache size).
    pub evaluated: usize,
    /// Set when a baseline had to shrink its requested subset size.
    pub truncated: bool,
}

/// Memoized evaluation of subsets within one slot: the descent is
/// deterministic per subset, so repeated visits reuse the cached result.
struct Evaluator<'a> {
    tbl: &'a ChannelTable,
    limits: &'a OptimizerLimits,
    params: &'a JubpaParams,
    cache: BTreeMap<Vec<SatelliteId>, Option<(f64, JubpaResult)>>,
}

impl<'a> Evaluator<'a> {
    fn new(tbl: &'a ChannelTable, limits: &'a OptimizerLimits, params: &'a JubpaParams) -> Self {
        Self {
            tbl,
            limits,
            params,
            cache: BTreeMap::new(),
        }
    }

    fn eval(&mut self, z: &BTreeSet<SatelliteId>) -> Option<(f64, JubpaResult)> {
        let key: Vec<SatelliteId> = z.iter().copied().collect();
        if let Some(hit) = self.cache.get(&key) {
            return hit.clone();
        }
        let outcome = match run_jubpa(z, self.tbl, self.limits, self.params) {
            Ok(res) => Some((res.theta(), res)),
            Err(_) => None,
        };
        self.cache.insert(key, outcome.clone());
        outcome
    }
}

/// Uniform subset draw: size uniform in `[1, min(z_th, |visible|)]`, members
/// uniform without replacement.
fn draw_subset<R: Rng>(
    rng: &mut R,
    visible: &[SatelliteId],
    z_th: usize,
) -> BTreeSet<SatelliteId> {
    let max_size = z_th.min(visible.len()).max(1);
    let size = rng.gen_range(1..=max_size);
    visible.choose_multiple(rng, size).copied().collect()
}

/// Which stage kind a chain iteration runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StageRule {
    /// Even stages explore, odd stages consolidate.
    Alternating,
    /// Each stage flips a fair coin between the two.
    Randomized,
}

fn run_chain<R: Rng>(
    tbl: &ChannelTable,
    limits: &OptimizerLimits,
    jubpa_params: &JubpaParams,
    markov: &MarkovParams,
    rng: &mut R,
    rule: StageRule,
) -> Result<SearchOutcome> {
    let visible: Vec<SatelliteId> = tbl.visible.clone();
    if visible.is_empty() {
        return Err(Error::NoFeasibleConfiguration);
    }
    let theta_ref: f64 = {
        let s: f64 = limits.r_min_bps.iter().sum();
        if s > 0.0 {
            s
        } else {
            1.0
        }
    };
    let mut evaluator = Evaluator::new(tbl, limits, jubpa_params);

    // Feasible initial state.
    let mut init: Option<ChainPoint> = None;
    for _ in 0..markov.init_attempts {
        let z = draw_subset(rng, &visible, limits.z_th);
        if let Some((theta, result)) = evaluator.eval(&z) {
            init = Some(ChainPoint { z, theta, result });
            break;
        }
    }
    let mut current = init.ok_or(Error::NoFeasibleConfiguration)?;
    let mut previous = current.clone();
    let mut best = current.clone();

    let mut nu = 1.0_f64;
    let mut beta = markov.beta0;
    let mut trace = Vec::new();
    let mut stage = 0usize;

    while nu > 0.0 && stage < markov.stage_cap {
        let explore = match rule {
            StageRule::Alternating => stage % 2 == 0,
            StageRule::Randomized => rng.gen::<f64>() < 0.5,
        };
        if explore {
            if rng.gen::<f64>() < nu {
                let z = draw_subset(rng, &visible, limits.z_th);
                if z != current.z {
                    // Infeasible draws are rejected outright; the previous
                    // state stays current.
                    if let Some((theta, result)) = evaluator.eval(&z) {
                        previous = current.clone();
                        current = ChainPoint { z, theta, result };
                    }
                }
            }
        } else {
            let alpha = transition_prob(
                current.theta / theta_ref,
                previous.theta / theta_ref,
                beta,
            );
            let z_before = current.z.clone();
            if rng.gen::<f64>() < alpha {
                current = previous.clone();
            }
            beta += markov.beta_step;
            if current.z == z_before {
                nu = (nu - markov.nu_step).max(0.0);
            }
        }
        if current.theta > best.theta {
            best = current.clone();
        }
        trace.push((stage, current.theta));
        stage += 1;
    }

    Ok(SearchOutcome {
        best_theta: best.theta,
        best: best.result,
        trace,
        stages: stage,
        evaluated: evaluator.cache.len(),
        truncated: false,
    })
}

/// The full search: alternating exploration/consolidation stages until the
/// exploration probability decays to zero; returns the best configuration
/// ever visited.
pub fn run_dvmoss<R: Rng>(
    tbl: &ChannelTable,
    limits: &OptimizerLimits,
    jubpa_params: &JubpaParams,
    markov: &MarkovParams,
    rng: &mut R,
) -> Result<SearchOutcome> {
    run_chain(tbl, limits, jubpa_params, markov, rng, StageRule::Alternating)
}

/// Baseline selection policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    /// Chain with randomized stage choice instead of strict alternation.
    EpsMarkov,
    /// The `n` visible satellites closest to the UE cluster centroid.
    KNearest(usize),
    /// A uniform random subset of `n` visible satellites.
    Random(usize),
}

/// Pick a subset under a geometric or random baseline policy. Requests
/// larger than the visible set are truncated (flagged in the outcome).
pub fn baseline_select<R: Rng>(
    policy: Policy,
    tbl: &ChannelTable,
    sat_positions: &BTreeMap<SatelliteId, Vector3<f64>>,
    ue_centroid: &Vector3<f64>,
    rng: &mut R,
) -> Result<(BTreeSet<SatelliteId>, bool)> {
    let visible = &tbl.visible;
    if visible.is_empty() {
        return Err(Error::NoFeasibleConfiguration);
    }
    match policy {
        Policy::EpsMarkov => Err(Error::ContractViolation(
            "eps-markov runs a chain; use run_baseline".into(),
        )),
        Policy::KNearest(n) => {
            let truncated = n > visible.len();
            let take = n.min(visible.len()).max(1);
            let mut with_dist: Vec<(f64, SatelliteId)> = visible
                .iter()
                .map(|id| {
                    let d = (sat_positions[id] - ue_centroid).norm();
                    (d, *id)
                })
                .collect();
            with_dist.sort_by(|a, b| {
                a.0.partial_cmp(&b.0)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.1.cmp(&b.1))
            });
            Ok((
                with_dist.into_iter().take(take).map(|(_, id)| id).collect(),
                truncated,
            ))
        }
        Policy::Random(n) => {
            let truncated = n > visible.len();
            let take = n.min(visible.len()).max(1);
            Ok((
                visible.choose_multiple(rng, take).copied().collect(),
                truncated,
            ))
        }
    }
}

/// Run a baseline end to end: pick the subset (or walk the randomized-stage
/// chain) and evaluate it with the same descent as the main search.
pub fn run_baseline<R: Rng>(
    policy: Policy,
    tbl: &ChannelTable,
    limits: &OptimizerLimits,
    jubpa_params: &JubpaParams,
    markov: &MarkovParams,
    sat_positions: &BTreeMap<SatelliteId, Vector3<f64>>,
    ue_centroid: &Vector3<f64>,
    rng: &mut R,
) -> Result<SearchOutcome> {
    if policy == Policy::EpsMarkov {
        return run_chain(tbl, limits, jubpa_params, markov, rng, StageRule::Randomized);
    }
    let (z, truncated) = baseline_select(policy, tbl, sat_positions, ue_centroid, rng)?;
    let result = run_jubpa(&z, tbl, limits, jubpa_params)?;
    let theta = result.theta();
    Ok(SearchOutcome {
        best_theta: theta,
        best: result,
        trace: vec![(0, theta)],
        stages: 1,
        evaluated: 1,
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn transition_prob_examples() {
        assert_relative_eq!(transition_prob(5.0, 5.0, 2.0), 0.5, epsilon = 1e-15);
        // theta_to far above theta_from drives acceptance to one.
        assert!(transition_prob(0.0, 1e6, 1.0) > 1.0 - 1e-12);
        assert_relative_eq!(
            transition_prob(1.0, 0.0, 1.0),
            1.0 / (1.0 + std::f64::consts::E),
            epsilon = 1e-12
        );
    }

    #[test]
    fn transition_prob_complementarity() {
        let cases = [
            (0.0_f64, 0.0_f64, 0.0_f64),
            (1.0, 2.0, 1.0),
            (700.0, -700.0, 3.0),
            (1e9, 2e9, 1e-7),
        ];
        for (a, b, beta) in cases {
            let sum = transition_prob(a, b, beta) + transition_prob(b, a, beta);
            assert!((sum - 1.0).abs() < 1e-15, "sum {sum}");
        }
    }

    #[test]
    fn stationary_weights_examples() {
        let u = stationary_weights(&[3.0, 7.0, 1.0], 0.0);
        for w in &u {
            assert_relative_eq!(*w, 1.0 / 3.0, epsilon = 1e-12);
        }
        let w = stationary_weights(&[1.0, 2.0], 1.0);
        let e = std::f64::consts::E;
        assert_relative_eq!(w[0], 1.0 / (1.0 + e), epsilon = 1e-12);
        assert_relative_eq!(w[1], e / (1.0 + e), epsilon = 1e-12);
        let eq = stationary_weights(&[4.0; 5], 3.0);
        for w in &eq {
            assert_relative_eq!(*w, 0.2, epsilon = 1e-12);
        }
        let total: f64 = stationary_weights(&[1.0, 5.0, 2.0, 8.0], 2.5).iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn detailed_balance() {
        let thetas = [0.3, 1.9, 4.2, 7.7];
        let beta = 1.3;
        let w = stationary_weights(&thetas, beta);
        for a in 0..thetas.len() {
            for b in 0..thetas.len() {
                let lhs = w[a] * transition_prob(thetas[a], thetas[b], beta);
                let rhs = w[b] * transition_prob(thetas[b], thetas[a], beta);
                assert!(
                    (lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()),
                    "balance broken at ({a},{b}): {lhs} vs {rhs}"
                );
            }
        }
    }

    #[test]
    fn draw_subset_respects_bounds_and_seed() {
        let visible: Vec<SatelliteId> = (1..=9)
            .map(|i| SatelliteId { plane: 1, index: i })
            .collect();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..50 {
            let z = draw_subset(&mut rng, &visible, 4);
            assert!(!z.is_empty() && z.len() <= 4);
            assert!(z.iter().all(|id| visible.contains(id)));
        }
        let mut r1 = ChaCha12Rng::seed_from_u64(5);
        let mut r2 = ChaCha12Rng::seed_from_u64(5);
        assert_eq!(draw_subset(&mut r1, &visible, 4), draw_subset(&mut r2, &visible, 4));
    }

    #[test]
    fn k_nearest_is_order_invariant_sort_prefix() {
        use nalgebra::Vector3;
        let ids: Vec<SatelliteId> = (1..=3)
            .map(|i| SatelliteId { plane: 1, index: i })
            .collect();
        let centroid = Vector3::new(0.0, 0.0, crate::EARTH_RADIUS_KM);
        let mut positions = BTreeMap::new();
        positions.insert(ids[0], Vector3::new(0.0, 0.0, crate::EARTH_RADIUS_KM + 600.0));
        positions.insert(ids[1], Vector3::new(0.0, 0.0, crate::EARTH_RADIUS_KM + 700.0));
        positions.insert(ids[2], Vector3::new(0.0, 0.0, crate::EARTH_RADIUS_KM + 800.0));
        // Build a tiny table whose visible list is the three satellites.
        let (tbl, _, _) = table_with_visible(&ids, &positions);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let (z, truncated) =
            baseline_select(Policy::KNearest(2), &tbl, &positions, &centroid, &mut rng).unwrap();
        assert!(!truncated);
        assert_eq!(z, BTreeSet::from([ids[0], ids[1]]));
        // Oversized request truncates with the flag set.
        let (all, truncated) =
            baseline_select(Policy::KNearest(9), &tbl, &positions, &centroid, &mut rng).unwrap();
        assert!(truncated);
        assert_eq!(all.len(), 3);
        // Random with a fixed seed is deterministic.
        let mut ra = ChaCha12Rng::seed_from_u64(3);
        let mut rb = ChaCha12Rng::seed_from_u64(3);
        let (za, _) =
            baseline_select(Policy::Random(2), &tbl, &positions, &centroid, &mut ra).unwrap();
        let (zb, _) =
            baseline_select(Policy::Random(2), &tbl, &positions, &centroid, &mut rb).unwrap();
        assert_eq!(za, zb);
    }

    fn table_with_visible(
        ids: &[SatelliteId],
        positions: &BTreeMap<SatelliteId, Vector3<f64>>,
    ) -> (ChannelTable, SatelliteId, SatelliteId) {
        use crate::channel::ChannelParams;
        use crate::orbits::{union_visible, GeoState};
        let ues = vec![GeoState {
            position_km: Vector3::new(0.0, 0.0, crate::EARTH_RADIUS_KM),
            time_s: 0.0,
        }];
        let vis = union_visible(0.0, vec![ids.iter().copied().collect()]);
        let params = ChannelParams {
            carrier_hz: 6e9,
            bandwidth_hz: 10e6,
            num_subcarriers: 4,
            c1: 20.0,
            c2: 32.45,
            c3: 20.0,
            shadowing_db: 1.0,
            tx_gain_db: 30.0,
            noise_w: 2.0e-13,
        };
        let sats: Vec<(SatelliteId, Vector3<f64>)> =
            ids.iter().map(|id| (*id, positions[id])).collect();
        let tbl = ChannelTable::build(&sats, &ues, &vis, params).unwrap();
        (tbl, ids[0], ids[1])
    }
}
