//! Walker constellation generation, circular-orbit propagation, user
//! placement, and cone-angle visibility.
//!
//! Everything lives in a single Earth-centered inertial frame with the Earth
//! center at the origin. User positions are held fixed over the (short)
//! simulation horizons, so visibility is purely a function of satellite
//! motion.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{EARTH_MU, EARTH_RADIUS_KM};

/// Walker constellation description: `num_planes` equally spaced planes
/// (in right ascension), `sats_per_plane` satellites per plane, all circular
/// at the same altitude and inclination. `phasing_offset_rad` is the
/// inter-plane phase shift applied per plane.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConstellationSpec {
    pub num_planes: u32,
    pub sats_per_plane: u32,
    pub altitude_km: f64,
    pub inclination_rad: f64,
    pub phasing_offset_rad: f64,
}

impl ConstellationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_planes < 1 {
            return Err(Error::InvalidArgument("num_planes must be >= 1".into()));
        }
        if self.sats_per_plane < 1 {
            return Err(Error::InvalidArgument("sats_per_plane must be >= 1".into()));
        }
        if !(self.altitude_km > 0.0) {
            return Err(Error::InvalidArgument("altitude_km must be > 0".into()));
        }
        if !(0.0..=PI).contains(&self.inclination_rad) {
            return Err(Error::InvalidArgument(
                "inclination_rad must lie in [0, pi]".into(),
            ));
        }
        Ok(())
    }

    /// Orbital radius in km.
    pub fn radius_km(&self) -> f64 {
        EARTH_RADIUS_KM + self.altitude_km
    }

    pub fn total_sats(&self) -> usize {
        self.num_planes as usize * self.sats_per_plane as usize
    }
}

/// Identity of one satellite: 1-based plane and 1-based slot within plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SatelliteId {
    pub plane: u32,
    pub index: u32,
}

impl std::fmt::Display for SatelliteId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "s({},{})", self.plane, self.index)
    }
}

/// A position sample at a given time, km in the Earth-centered frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoState {
    pub position_km: Vector3<f64>,
    pub time_s: f64,
}

/// Circular-orbit elements of one satellite.
#[derive(Debug, Clone, Copy)]
pub struct OrbitElements {
    pub id: SatelliteId,
    pub radius_km: f64,
    pub inclination_rad: f64,
    pub raan_rad: f64,
    pub anomaly0_rad: f64,
}

impl OrbitElements {
    /// Mean motion in rad/s.
    pub fn mean_motion(&self) -> f64 {
        (EARTH_MU / self.radius_km.powi(3)).sqrt()
    }

    /// Orbital period in seconds.
    pub fn period_s(&self) -> f64 {
        2.0 * PI / self.mean_motion()
    }
}

/// Per-slot visibility: one candidate set per UE and their union.
#[derive(Debug, Clone)]
pub struct VisibilitySet {
    pub time_s: f64,
    pub per_ue: Vec<BTreeSet<SatelliteId>>,
    pub union: BTreeSet<SatelliteId>,
}

/// Generate the Walker constellation: plane `o` (1-based) has
/// RAAN `2*pi*(o-1)/O`, and slot `i` (1-based) sits at in-plane anomaly
/// `2*pi*(i-1)/S + (o-1)*phasing_offset`.
pub fn generate_walker(spec: &ConstellationSpec) -> Result<Vec<OrbitElements>> {
    spec.validate()?;
    let planes = spec.num_planes;
    let per_plane = spec.sats_per_plane;
    let mut out = Vec::with_capacity(spec.total_sats());
    for plane in 1..=planes {
        let raan = 2.0 * PI * f64::from(plane - 1) / f64::from(planes);
        for index in 1..=per_plane {
            let anomaly = 2.0 * PI * f64::from(index - 1) / f64::from(per_plane)
                + f64::from(plane - 1) * spec.phasing_offset_rad;
            out.push(OrbitElements {
                id: SatelliteId { plane, index },
                radius_km: spec.radius_km(),
                inclination_rad: spec.inclination_rad,
                raan_rad: raan,
                anomaly0_rad: anomaly,
            });
        }
    }
    Ok(out)
}

/// Position on the circular orbit at time `t`: the in-plane anomaly advances
/// by the mean motion, then the plane is rotated by inclination about x and
/// RAAN about z.
pub fn propagate(el: &OrbitElements, t_s: f64) -> GeoState {
    let u = el.anomaly0_rad + el.mean_motion() * t_s;
    let (sin_u, cos_u) = u.sin_cos();
    let (sin_i, cos_i) = el.inclination_rad.sin_cos();
    let (sin_o, cos_o) = el.raan_rad.sin_cos();
    // In-plane coordinates rotated by inclination (about the node line = x
    // axis), then by RAAN (about z).
    let xp = el.radius_km * cos_u;
    let yp = el.radius_km * sin_u * cos_i;
    let zp = el.radius_km * sin_u * sin_i;
    let position_km = Vector3::new(cos_o * xp - sin_o * yp, sin_o * xp + cos_o * yp, zp);
    GeoState {
        position_km,
        time_s: t_s,
    }
}

/// Sample `count` points uniformly over the spherical cap of geodesic radius
/// `radius_km` centered at `center_km`, all on the Earth sphere. Deterministic
/// per seed.
pub fn place_ues(
    center_km: Vector3<f64>,
    radius_km: f64,
    count: usize,
    rng_seed: u64,
) -> Result<Vec<GeoState>> {
    let c_norm = center_km.norm();
    if c_norm == 0.0 {
        return Err(Error::InvalidArgument("UE area center is the origin".into()));
    }
    if !(radius_km > 0.0) {
        return Err(Error::InvalidArgument("UE area radius must be > 0".into()));
    }
    if radius_km > PI * EARTH_RADIUS_KM {
        return Err(Error::InvalidArgument(format!(
            "UE area radius {radius_km} km exceeds pi*R_e"
        )));
    }
    let alpha_max = radius_km / EARTH_RADIUS_KM;
    let cos_cap = alpha_max.cos();
    let mut rng = ChaCha12Rng::seed_from_u64(rng_seed);

    // Orthonormal basis with e3 pointing along the cap center.
    let e3 = center_km / c_norm;
    let helper = if e3.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let e1 = (helper - e3 * helper.dot(&e3)).normalize();
    let e2 = e3.cross(&e1);

    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        // Uniform over cap area: cos(alpha) uniform on [cos(alpha_max), 1].
        let cos_a = rng.gen_range(cos_cap..=1.0);
        let sin_a = (1.0 - cos_a * cos_a).max(0.0).sqrt();
        let phi = rng.gen_range(0.0..2.0 * PI);
        let dir = e1 * (sin_a * phi.cos()) + e2 * (sin_a * phi.sin()) + e3 * cos_a;
        out.push(GeoState {
            position_km: dir * EARTH_RADIUS_KM,
            time_s: 0.0,
        });
    }
    Ok(out)
}

/// Zenith angle between the UE's local vertical and the direction to `sat`.
pub fn zenith_angle(ue: &GeoState, sat_pos_km: &Vector3<f64>) -> Result<f64> {
    let up = ue.position_km / ue.position_km.norm();
    let dir = sat_pos_km - ue.position_km;
    let len = dir.norm();
    if len == 0.0 {
        return Err(Error::InvalidGeometry(
            "satellite coincides with UE position".into(),
        ));
    }
    Ok((up.dot(&dir) / len).clamp(-1.0, 1.0).acos())
}

/// Candidate set of one UE: satellites whose zenith angle is at most `phi`
/// (closed inequality, evaluated as normalized inner product >= cos(phi)).
pub fn candidate_set(
    ue: &GeoState,
    sats: &[(SatelliteId, Vector3<f64>)],
    phi_rad: f64,
) -> Result<BTreeSet<SatelliteId>> {
    if !(phi_rad > 0.0 && phi_rad < PI / 2.0) {
        return Err(Error::InvalidArgument(
            "cone angle must lie in (0, pi/2)".into(),
        ));
    }
    let cos_phi = phi_rad.cos();
    let up = ue.position_km / ue.position_km.norm();
    let mut set = BTreeSet::new();
    for (id, pos) in sats {
        let dir = pos - ue.position_km;
        let len = dir.norm();
        if len == 0.0 {
            return Err(Error::InvalidGeometry(format!(
                "satellite {id} coincides with UE position"
            )));
        }
        if up.dot(&dir) / len >= cos_phi {
            set.insert(*id);
        }
    }
    Ok(set)
}

/// Union of per-UE candidate sets; the per-UE sets are retained.
pub fn union_visible(time_s: f64, per_ue: Vec<BTreeSet<SatelliteId>>) -> VisibilitySet {
    let mut union = BTreeSet::new();
    for set in &per_ue {
        union.extend(set.iter().copied());
    }
    VisibilitySet {
        time_s,
        per_ue,
        union,
    }
}

/// Positions of all satellites at time `t`, keyed by id.
pub fn positions_at(elements: &[OrbitElements], t_s: f64) -> Vec<(SatelliteId, Vector3<f64>)> {
    elements
        .iter()
        .map(|el| (el.id, propagate(el, t_s).position_km))
        .collect()
}

/// Visibility for all UEs at one slot.
pub fn visibility_at(
    elements: &[OrbitElements],
    ues: &[GeoState],
    phi_rad: f64,
    t_s: f64,
) -> Result<VisibilitySet> {
    let sats = positions_at(elements, t_s);
    let mut per_ue = Vec::with_capacity(ues.len());
    for ue in ues {
        per_ue.push(candidate_set(ue, &sats, phi_rad)?);
    }
    Ok(union_visible(t_s, per_ue))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn single_sat_spec(h_km: f64) -> ConstellationSpec {
        ConstellationSpec {
            num_planes: 1,
            sats_per_plane: 1,
            altitude_km: h_km,
            inclination_rad: 70_f64.to_radians(),
            phasing_offset_rad: 0.0,
        }
    }

    #[test]
    fn walker_counts_and_radius() {
        let spec = ConstellationSpec {
            num_planes: 25,
            sats_per_plane: 40,
            altitude_km: 550.0,
            inclination_rad: 70_f64.to_radians(),
            phasing_offset_rad: 0.0,
        };
        let els = generate_walker(&spec).unwrap();
        assert_eq!(els.len(), 1000);
        for el in &els {
            let p = propagate(el, 0.0);
            assert_relative_eq!(p.position_km.norm(), 6921.0, max_relative = 1e-12);
        }
        // RAAN spacing.
        let plane2: Vec<_> = els.iter().filter(|e| e.id.plane == 2).collect();
        assert_eq!(plane2.len(), 40);
        assert_relative_eq!(plane2[0].raan_rad, 2.0 * PI / 25.0, max_relative = 1e-12);
    }

    #[test]
    fn walker_single_satellite() {
        let els = generate_walker(&single_sat_spec(550.0)).unwrap();
        assert_eq!(els.len(), 1);
        assert_eq!(els[0].raan_rad, 0.0);
        assert_eq!(els[0].anomaly0_rad, 0.0);
        assert_relative_eq!(els[0].radius_km, 6921.0);
    }

    #[test]
    fn propagate_identity_at_epoch_and_periodicity() {
        let els = generate_walker(&single_sat_spec(550.0)).unwrap();
        let el = &els[0];
        let p0 = propagate(el, 0.0);
        // Kepler oracle, independent of the propagation path.
        let a = 6921.0_f64;
        let t_orb = 2.0 * PI * (a.powi(3) / EARTH_MU).sqrt();
        assert!((t_orb - 5730.4).abs() < 1.0, "t_orb = {t_orb}");
        let p1 = propagate(el, t_orb);
        assert!((p1.position_km - p0.position_km).norm() < 1e-6);
        for n in 0..100 {
            let t = t_orb * f64::from(n) / 99.0;
            let p = propagate(el, t);
            assert_relative_eq!(p.position_km.norm(), a, max_relative = 1e-12);
        }
    }

    #[test]
    fn place_ues_inside_cap_and_deterministic() {
        let center = Vector3::new(5765.39, 2717.12, 252.39);
        let center = center / center.norm() * EARTH_RADIUS_KM;
        let pts = place_ues(center, 1500.0, 30, 7).unwrap();
        assert_eq!(pts.len(), 30);
        for p in &pts {
            assert_relative_eq!(p.position_km.norm(), EARTH_RADIUS_KM, max_relative = 1e-12);
            let geodesic = EARTH_RADIUS_KM
                * (p.position_km.dot(&center) / (p.position_km.norm() * center.norm()))
                    .clamp(-1.0, 1.0)
                    .acos();
            assert!(geodesic <= 1500.0 + 1e-6, "geodesic {geodesic}");
        }
        let again = place_ues(center, 1500.0, 30, 7).unwrap();
        for (a, b) in pts.iter().zip(&again) {
            assert_eq!(a.position_km, b.position_km);
        }
        // Tiny radius degenerates to the center.
        let tight = place_ues(center, 1e-9, 5, 3).unwrap();
        for p in &tight {
            assert!((p.position_km - center).norm() < 1e-3);
        }
        assert!(place_ues(center, PI * EARTH_RADIUS_KM + 1.0, 1, 0).is_err());
    }

    #[test]
    fn candidate_set_overhead_and_antipodal() {
        let ue = GeoState {
            position_km: Vector3::new(0.0, 0.0, EARTH_RADIUS_KM),
            time_s: 0.0,
        };
        let overhead = (
            SatelliteId { plane: 1, index: 1 },
            Vector3::new(0.0, 0.0, EARTH_RADIUS_KM + 550.0),
        );
        let antipodal = (
            SatelliteId { plane: 1, index: 2 },
            Vector3::new(0.0, 0.0, -(EARTH_RADIUS_KM + 550.0)),
        );
        let set = candidate_set(&ue, &[overhead, antipodal], 0.05).unwrap();
        assert!(set.contains(&overhead.0));
        assert!(!set.contains(&antipodal.0));
    }

    /// Place a satellite at a prescribed zenith angle by solving the
    /// Earth-center/UE/satellite triangle, then check the closed boundary.
    #[test]
    fn candidate_set_boundary_inclusion() {
        let phi = 5.0 * PI / 12.0;
        let r = EARTH_RADIUS_KM + 550.0;
        // Law of sines: interior angle at the UE is pi - phi, so the Earth
        // central angle is phi - asin(R_e sin(phi) / r).
        let psi = phi - (EARTH_RADIUS_KM * phi.sin() / r).asin();
        let ue = GeoState {
            position_km: Vector3::new(0.0, 0.0, EARTH_RADIUS_KM),
            time_s: 0.0,
        };
        let sat_at = |central: f64| {
            (
                SatelliteId { plane: 1, index: 1 },
                Vector3::new(r * central.sin(), 0.0, r * central.cos()),
            )
        };
        // Nudge a hair inside the cone so rounding in the construction cannot
        // flip the closed-boundary assertion.
        let just_inside = candidate_set(&ue, &[sat_at(psi - 1e-9)], phi).unwrap();
        assert_eq!(just_inside.len(), 1);
        let outside = candidate_set(&ue, &[sat_at(psi + 1e-6)], phi).unwrap();
        assert!(outside.is_empty());
        // The constructed geometry really does sit at zenith angle phi.
        let z = zenith_angle(&ue, &sat_at(psi).1).unwrap();
        assert_relative_eq!(z, phi, epsilon = 1e-9);
    }

    #[test]
    fn union_is_exact_set_union() {
        let a = SatelliteId { plane: 1, index: 1 };
        let b = SatelliteId { plane: 1, index: 2 };
        let c = SatelliteId { plane: 2, index: 1 };
        let vis = union_visible(
            0.0,
            vec![
                BTreeSet::from([a]),
                BTreeSet::from([a, b]),
                BTreeSet::from([c]),
            ],
        );
        assert_eq!(vis.union, BTreeSet::from([a, b, c]));
        let empty = union_visible(0.0, vec![BTreeSet::new(), BTreeSet::new()]);
        assert!(empty.union.is_empty());
    }

    #[test]
    fn visibility_monotone_in_phi() {
        let spec = ConstellationSpec {
            num_planes: 4,
            sats_per_plane: 5,
            altitude_km: 800.0,
            inclination_rad: 60_f64.to_radians(),
            phasing_offset_rad: 0.1,
        };
        let els = generate_walker(&spec).unwrap();
        let sats = positions_at(&els, 300.0);
        let ue = GeoState {
            position_km: Vector3::new(EARTH_RADIUS_KM, 0.0, 0.0),
            time_s: 300.0,
        };
        let mut prev = BTreeSet::new();
        for step in 1..=10 {
            let phi = 0.14 * f64::from(step);
            let set = candidate_set(&ue, &sats, phi).unwrap();
            assert!(prev.is_subset(&set), "phi sweep lost a satellite");
            prev = set;
        }
    }

    /// Brute-force arccos oracle must agree exactly with the inner-product
    /// implementation on random small instances.
    #[test]
    fn candidate_set_matches_arccos_oracle() {
        use rand::Rng;
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        for _ in 0..50 {
            let n = rng.gen_range(1..=20);
            let mut sats = Vec::new();
            for i in 0..n {
                let v = Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                let v = if v.norm() < 1e-6 { Vector3::z() } else { v };
                sats.push((
                    SatelliteId {
                        plane: 1,
                        index: i + 1,
                    },
                    v / v.norm() * (EARTH_RADIUS_KM + rng.gen_range(500.0..2000.0)),
                ));
            }
            let u = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let u = if u.norm() < 1e-6 { Vector3::x() } else { u };
            let ue = GeoState {
                position_km: u / u.norm() * EARTH_RADIUS_KM,
                time_s: 0.0,
            };
            let phi = rng.gen_range(0.1..1.5);
            let got = candidate_set(&ue, &sats, phi).unwrap();
            let oracle: BTreeSet<SatelliteId> = sats
                .iter()
                .filter(|(_, p)| zenith_angle(&ue, p).unwrap() <= phi)
                .map(|(id, _)| *id)
                .collect();
            assert_eq!(got, oracle);
        }
    }
}
