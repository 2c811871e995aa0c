//! Link budget and achievable-rate model.
//!
//! Received SNR follows a Friis-style power law with a far-field reference
//! distance `d0`; distances below `d0` are clamped to it. The achievable rate
//! is the Shannon rate `W log2(1 + SNR)`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::{Node, TopologyInstance};

/// Converts a noise density given in dBm/MHz to W/Hz.
pub fn dbm_per_mhz_to_w_per_hz(dbm_per_mhz: f64) -> f64 {
    10f64.powf(dbm_per_mhz / 10.0) * 1e-3 / 1e6
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Scales a benefit to an integer grid: `round(x * 10^digits)`.
pub fn to_integer_units(x: f64, digits: u32) -> f64 {
    (x * 10f64.powi(digits as i32)).round()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadioParams {
    pub bandwidth_hz: f64,
    pub tx_power_w: f64,
    pub gain_tx: f64,
    pub gain_rx: f64,
    pub wavelength_m: f64,
    pub ref_distance_m: f64,
    pub pathloss_exponent: f64,
    pub noise_w_per_hz: f64,
    pub interference_w_per_hz: f64,
}

impl Default for RadioParams {
    /// 60 GHz defaults: 1200 MHz, 0.1 mW, -134 dBm/MHz, eta = 2, d0 = 1 m, 5 mm, unit gains.
    fn default() -> Self {
        RadioParams {
            bandwidth_hz: 1200e6,
            tx_power_w: 0.1e-3,
            gain_tx: 1.0,
            gain_rx: 1.0,
            wavelength_m: 5e-3,
            ref_distance_m: 1.0,
            pathloss_exponent: 2.0,
            noise_w_per_hz: dbm_per_mhz_to_w_per_hz(-134.0),
            interference_w_per_hz: 0.0,
        }
    }
}

impl RadioParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("bandwidth_hz", self.bandwidth_hz),
            ("tx_power_w", self.tx_power_w),
            ("wavelength_m", self.wavelength_m),
            ("ref_distance_m", self.ref_distance_m),
            ("noise_w_per_hz", self.noise_w_per_hz),
            ("gain_tx", self.gain_tx),
            ("gain_rx", self.gain_rx),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Domain(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(2.0..=6.0).contains(&self.pathloss_exponent) {
            return Err(Error::Domain(format!(
                "pathloss_exponent must lie in [2, 6], got {}",
                self.pathloss_exponent
            )));
        }
        if !(self.interference_w_per_hz.is_finite() && self.interference_w_per_hz >= 0.0) {
            return Err(Error::Domain("interference_w_per_hz must be >= 0".into()));
        }
        Ok(())
    }

    /// SNR at (and below) the reference distance.
    pub fn reference_snr(&self) -> f64 {
        self.tx_power_w * self.gain_tx * self.gain_rx * self.wavelength_m.powi(2)
            / (16.0
                * PI
                * PI
                * (self.noise_w_per_hz + self.interference_w_per_hz)
                * self.bandwidth_hz)
    }

    pub fn snr(&self, d: f64) -> Result<f64> {
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Domain(format!("distance must be positive and finite, got {d}")));
        }
        let d = d.max(self.ref_distance_m);
        Ok(self.reference_snr() * (d / self.ref_distance_m).powf(-self.pathloss_exponent))
    }

    /// Achievable rate in bits/s at distance `d` meters.
    pub fn rate(&self, d: f64) -> Result<f64> {
        Ok(self.bandwidth_hz * (1.0 + self.snr(d)?).log2())
    }

    /// Solves `snr(r) = target` by bisection.
    pub fn radius_for_snr_db(&self, target_db: f64) -> Result<f64> {
        let target = db_to_linear(target_db);
        let at_ref = self.reference_snr();
        if target > at_ref {
            return Err(Error::Spec(format!(
                "SNR target {target_db} dB exceeds the reference SNR {:.3} dB",
                linear_to_db(at_ref)
            )));
        }
        let mut lo = self.ref_distance_m;
        let mut hi = 2.0 * lo;
        while self.snr(hi)? > target {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.snr(mid)? > target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-12 * hi {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Achievable rates for every eligible direct pair and relayed triple.
#[derive(Debug, Clone, PartialEq)]
pub struct BenefitTable {
    pub num_clients: usize,
    pub num_relays: usize,
    pub num_aps: usize,
    /// `(client, ap) -> rate`
    pub direct: BTreeMap<(usize, usize), f64>,
    /// `(relay, ap) -> rate` of the relay's own uplink.
    pub uplink: BTreeMap<(usize, usize), f64>,
    /// `(client, relay, ap) -> min(access rate, uplink rate)`
    pub relayed: BTreeMap<(usize, usize, usize), f64>,
}

impl BenefitTable {
    pub fn direct(&self, client: usize, ap: usize) -> Option<f64> {
        self.direct.get(&(client, ap)).copied()
    }

    pub fn relayed(&self, client: usize, relay: usize, ap: usize) -> Option<f64> {
        self.relayed.get(&(client, relay, ap)).copied()
    }

    pub fn uplink(&self, relay: usize, ap: usize) -> Option<f64> {
        self.uplink.get(&(relay, ap)).copied()
    }
}

fn link_rate(params: &RadioParams, topo: &TopologyInstance, a: Node, b: Node) -> Result<f64> {
    let d = topo.distance(a, b);
    if d <= 0.0 {
        return Err(Error::Domain(format!("coincident nodes {a:?} and {b:?}")));
    }
    if topo.is_blocked(a, b) {
        return Ok(0.0);
    }
    params.rate(d)
}

/// Evaluates every eligible link of the topology. Blocked links carry rate 0.
pub fn build_benefits(params: &RadioParams, topo: &TopologyInstance) -> Result<BenefitTable> {
    params.validate()?;
    let mut direct = BTreeMap::new();
    let mut uplink = BTreeMap::new();
    let mut relayed = BTreeMap::new();

    for j in 0..topo.num_relays() {
        for &k in topo.relay_aps(j) {
            uplink.insert((j, k), link_rate(params, topo, Node::Relay(j), Node::Ap(k))?);
        }
    }
    for i in 0..topo.num_clients() {
        for &k in topo.client_aps(i) {
            direct.insert((i, k), link_rate(params, topo, Node::Client(i), Node::Ap(k))?);
        }
        for &j in topo.client_relays(i) {
            let access = link_rate(params, topo, Node::Client(i), Node::Relay(j))?;
            for &k in topo.relay_aps(j) {
                relayed.insert((i, j, k), access.min(uplink[&(j, k)]));
            }
        }
    }
    Ok(BenefitTable {
        num_clients: topo.num_clients(),
        num_relays: topo.num_relays(),
        num_aps: topo.num_aps(),
        direct,
        uplink,
        relayed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{Point, TopologyInstance};
    use proptest::prelude::*;

    fn table1() -> RadioParams {
        RadioParams::default()
    }

    #[test]
    fn reference_snr_matches_db_hand_computation() {
        // dB domain: Pt = -40 dBW, lambda^2 = -46.0206 dB, 16 pi^2 = 21.9842 dB,
        // N0 = -224 dBW/Hz, W = 90.7918 dBHz  =>  SNR = -40 - 46.0206 - 21.9842 + 224 - 90.7918
        let expected_db = -40.0 - 46.020_599_913 - 21.984_197_80 + 224.0 - 90.791_812_46;
        let got = linear_to_db(table1().reference_snr());
        assert!((got - expected_db).abs() < 1e-6, "{got} vs {expected_db}");
        assert!((got - 25.2).abs() < 0.01);
    }

    #[test]
    fn rate_at_reference_distance() {
        let p = table1();
        let snr0 = p.reference_snr();
        let r = p.rate(1.0).unwrap();
        assert!((r - 1.2e9 * (1.0 + snr0).log2()).abs() < 1e-3);
        // ~10.05 Gbit/s
        assert!((r / 1e9 - 10.05).abs() < 0.01, "{r}");
    }

    #[test]
    fn rate_vanishes_far_away() {
        let p = table1();
        assert!(p.rate(1e9).unwrap() < 1e-3);
        assert!(p.rate(1e9).unwrap() > 0.0);
    }

    #[test]
    fn doubling_distance_quarters_snr() {
        let p = table1();
        for d in [1.5, 3.0, 7.25] {
            let ratio = p.snr(2.0 * d).unwrap() / p.snr(d).unwrap();
            assert!((ratio - 0.25).abs() < 1e-15);
        }
        let ratio = p.snr(2.0).unwrap() / p.snr(1.0).unwrap();
        assert!((ratio - 2f64.powf(-p.pathloss_exponent)).abs() < 1e-15);
    }

    #[test]
    fn snr_is_clamped_below_reference() {
        let p = table1();
        assert_eq!(p.snr(0.5).unwrap(), p.snr(1.0).unwrap());
        assert_eq!(p.snr(1e-6).unwrap(), p.reference_snr());
    }

    #[test]
    fn non_positive_distance_is_rejected() {
        let p = table1();
        assert!(matches!(p.snr(0.0), Err(Error::Domain(_))));
        assert!(matches!(p.rate(-1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn cell_radius_bisection_matches_closed_form() {
        let p = table1();
        let r = p.radius_for_snr_db(10.0).unwrap();
        let closed = p.ref_distance_m * (p.reference_snr() / 10.0).powf(1.0 / p.pathloss_exponent);
        assert!((r - closed).abs() < 1e-9, "{r} vs {closed}");
        assert!((r - 5.7567).abs() < 1e-3);
        assert!(p.radius_for_snr_db(30.0).is_err());
    }

    #[test]
    fn parameter_validation() {
        let mut p = table1();
        p.pathloss_exponent = 7.0;
        assert!(p.validate().is_err());
        let mut p = table1();
        p.bandwidth_hz = 0.0;
        assert!(p.validate().is_err());
        assert!(table1().validate().is_ok());
    }

    fn line(client: f64, relay: f64, ap: f64) -> TopologyInstance {
        TopologyInstance::with_radius(
            vec![Point::new(client, 0.0)],
            vec![Point::new(relay, 0.0)],
            vec![Point::new(ap, 0.0)],
            100.0,
        )
        .unwrap()
    }

    #[test]
    fn midpoint_relay_beats_direct() {
        let p = table1();
        let topo = line(0.0, 4.0, 8.0);
        let b = build_benefits(&p, &topo).unwrap();
        let relayed = b.relayed(0, 0, 0).unwrap();
        assert_eq!(relayed, p.rate(4.0).unwrap());
        assert!(relayed > b.direct(0, 0).unwrap());
    }

    #[test]
    fn relay_next_to_ap_approaches_direct() {
        let p = table1();
        // Relay within d0 of the AP: the uplink is clamped at d0 and the access hop dominates.
        let topo = line(0.0, 7.9, 8.0);
        let b = build_benefits(&p, &topo).unwrap();
        let relayed = b.relayed(0, 0, 0).unwrap();
        let direct = b.direct(0, 0).unwrap();
        assert_eq!(relayed, p.rate(7.9).unwrap());
        assert!(relayed > direct);
        assert!((relayed - direct) / direct < 0.03);
    }

    #[test]
    fn blocked_link_has_zero_rate() {
        let p = table1();
        let mut topo = line(0.0, 4.0, 8.0);
        topo.block(Node::Client(0), Node::Ap(0));
        let b = build_benefits(&p, &topo).unwrap();
        assert_eq!(b.direct(0, 0), Some(0.0));
        topo.block(Node::Relay(0), Node::Ap(0));
        let b = build_benefits(&p, &topo).unwrap();
        assert_eq!(b.relayed(0, 0, 0), Some(0.0));
    }

    #[test]
    fn coincident_nodes_are_a_domain_error() {
        let p = table1();
        let topo = line(0.0, 4.0, 0.0);
        assert!(matches!(build_benefits(&p, &topo), Err(Error::Domain(_))));
    }

    proptest! {
        #[test]
        fn rate_non_increasing_beyond_reference(
            bw in 1e6f64..1e10, pt in 1e-6f64..1.0, eta in 2.0f64..6.0,
            d0 in 0.1f64..5.0, a in 0.0f64..100.0, b in 0.0f64..100.0,
        ) {
            let p = RadioParams {
                bandwidth_hz: bw, tx_power_w: pt, pathloss_exponent: eta, ref_distance_m: d0,
                ..RadioParams::default()
            };
            let (near, far) = (d0 + a.min(b), d0 + a.max(b));
            prop_assert!(p.rate(far).unwrap() <= p.rate(near).unwrap());
        }

        #[test]
        fn relayed_never_exceeds_either_hop(
            cx in -6.0f64..6.0, cy in -6.0f64..6.0, rx in -6.0f64..6.0, ry in -6.0f64..6.0,
        ) {
            prop_assume!((cx - rx).hypot(cy - ry) > 1e-3);
            prop_assume!(cx.hypot(cy) > 1e-3 && rx.hypot(ry) > 1e-3);
            let p = table1();
            let topo = TopologyInstance::with_radius(
                vec![Point::new(cx, cy)], vec![Point::new(rx, ry)], vec![Point::new(0.0, 0.0)], 100.0,
            ).unwrap();
            let b = build_benefits(&p, &topo).unwrap();
            let v = b.relayed(0, 0, 0).unwrap();
            prop_assert!(v <= p.rate((cx - rx).hypot(cy - ry)).unwrap());
            prop_assert!(v <= p.rate(rx.hypot(ry)).unwrap());
        }
    }
}
