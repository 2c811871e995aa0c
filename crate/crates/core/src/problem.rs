//! Association problem data model and its reduction to an asymmetric
//! clients-objects assignment problem.
//!
//! Objects `0..N` are the real relays. Object `N + i` is a virtual relay
//! standing for client `i`'s best AP; only client `i` may take it, so a
//! feasible assignment always exists.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Constraint, Error, Result};
use crate::radio::{to_integer_units, BenefitTable};
use crate::topology::TopologyInstance;

/// Bits/s per benefit unit used by default (benefits in Gbit/s).
pub const GBPS: f64 = 1e9;

/// Correctly rounded sum of finite floats (Shewchuk's partials), independent
/// of summation order.
pub fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        let mut kept = 0;
        for k in 0..partials.len() {
            let mut y = partials[k];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        partials.truncate(kept);
        partials.push(x);
    }
    // Round the partials (non-overlapping, increasing magnitude) to nearest.
    let Some(mut hi) = partials.pop() else { return 0.0 };
    let mut lo = 0.0;
    while let Some(y) = partials.pop() {
        let x = hi;
        hi = x + y;
        lo = y - (hi - x);
        if lo != 0.0 {
            break;
        }
    }
    if let Some(&next) = partials.last() {
        if (lo < 0.0 && next < 0.0) || (lo > 0.0 && next > 0.0) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
    }
    hi
}

/// Direct client-AP pairs and client-relay-AP triples.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub direct: BTreeSet<(usize, usize)>,
    pub relayed: BTreeSet<(usize, usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentRow {
    pub client: usize,
    pub mode: String,
    pub relay: Option<usize>,
    pub ap: usize,
}

impl Assignment {
    /// Checks coverage, relay capacity and eligibility against the table.
    pub fn validate(&self, benefits: &BenefitTable) -> Result<()> {
        let mut seen = vec![0usize; benefits.num_clients];
        let mut relay_used = vec![false; benefits.num_relays];
        for &(i, k) in &self.direct {
            if benefits.direct(i, k).is_none() {
                return Err(Error::infeasible(
                    Constraint::Eligibility,
                    format!("pair ({i}, {k}) is not eligible"),
                ));
            }
            seen[i] += 1;
        }
        for &(i, j, k) in &self.relayed {
            if benefits.relayed(i, j, k).is_none() {
                return Err(Error::infeasible(
                    Constraint::Eligibility,
                    format!("triple ({i}, {j}, {k}) is not eligible"),
                ));
            }
            if std::mem::replace(&mut relay_used[j], true) {
                return Err(Error::infeasible(
                    Constraint::RelayCapacity,
                    format!("relay {j} assists more than one client"),
                ));
            }
            seen[i] += 1;
        }
        if let Some((i, &count)) = seen.iter().enumerate().find(|(_, &c)| c != 1) {
            return Err(Error::infeasible(
                Constraint::ClientCoverage,
                format!("client {i} is served {count} times"),
            ));
        }
        Ok(())
    }

    /// Connections landing on each AP (direct plus relayed).
    pub fn ap_loads(&self, num_aps: usize) -> Vec<usize> {
        let mut loads = vec![0; num_aps];
        for &(_, k) in &self.direct {
            loads[k] += 1;
        }
        for &(_, _, k) in &self.relayed {
            loads[k] += 1;
        }
        loads
    }

    pub fn rows(&self) -> Vec<AssignmentRow> {
        let mut rows: Vec<AssignmentRow> = self
            .direct
            .iter()
            .map(|&(client, ap)| AssignmentRow {
                client,
                mode: "direct".into(),
                relay: None,
                ap,
            })
            .chain(self.relayed.iter().map(|&(client, j, ap)| AssignmentRow {
                client,
                mode: "relayed".into(),
                relay: Some(j),
                ap,
            }))
            .collect();
        rows.sort_by_key(|r| r.client);
        rows
    }

    /// One row per client: `client,mode,relay,ap`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in self.rows() {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut s = Assignment::default();
        for row in csv::Reader::from_reader(input).deserialize() {
            let row: AssignmentRow = row?;
            match (row.mode.as_str(), row.relay) {
                ("direct", None) => {
                    s.direct.insert((row.client, row.ap));
                }
                ("relayed", Some(j)) => {
                    s.relayed.insert((row.client, j, row.ap));
                }
                (mode, _) => {
                    return Err(Error::Instance(format!(
                        "bad assignment row for client {}: mode {mode}",
                        row.client
                    )))
                }
            }
        }
        Ok(s)
    }
}

/// Sum of achieved rates (bits/s) over all clients.
pub fn total_throughput(benefits: &BenefitTable, s: &Assignment) -> Result<f64> {
    s.validate(benefits)?;
    let mut per_client = vec![0.0; benefits.num_clients];
    for &(i, k) in &s.direct {
        per_client[i] = benefits.direct[&(i, k)];
    }
    for &(i, j, k) in &s.relayed {
        per_client[i] = benefits.relayed[&(i, j, k)];
    }
    Ok(exact_sum(per_client))
}

/// Rate-maximizing AP of every client and relay.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BestAps {
    pub client: Vec<usize>,
    pub relay: Vec<usize>,
}

fn argmax_lowest<I: Iterator<Item = (usize, f64)>>(it: I) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (idx, v) in it {
        match best {
            Some((_, bv)) if v <= bv => {}
            _ => best = Some((idx, v)),
        }
    }
    best.map(|(idx, _)| idx)
}

pub fn best_ap_sets(benefits: &BenefitTable, topo: &TopologyInstance) -> Result<BestAps> {
    let client = (0..topo.num_clients())
        .map(|i| {
            argmax_lowest(topo.client_aps(i).iter().map(|&k| (k, benefits.direct[&(i, k)])))
                .ok_or_else(|| Error::Instance(format!("client {i} reaches no AP")))
        })
        .collect::<Result<Vec<_>>>()?;
    let relay = (0..topo.num_relays())
        .map(|j| {
            argmax_lowest(topo.relay_aps(j).iter().map(|&k| (k, benefits.uplink[&(j, k)])))
                .ok_or_else(|| Error::Instance(format!("relay {j} reaches no AP")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BestAps { client, relay })
}

/// An eligible client-object pair and its benefit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arc {
    pub object: usize,
    pub benefit: f64,
}

/// Benefits a hand-built client row offers: its direct (virtual object)
/// benefit and the strictly better relays.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientOptions {
    pub direct: f64,
    pub relays: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsymmetricInstance {
    num_relays: usize,
    /// `Q(i)` sorted by object index; the virtual object is always last.
    options: Vec<Vec<Arc>>,
    /// `M(q)` sorted by client index.
    object_clients: Vec<Vec<usize>>,
    client_ap: Vec<usize>,
    relay_ap: Vec<usize>,
    unit_bps: f64,
}

impl AsymmetricInstance {
    fn assemble(
        num_relays: usize,
        options: Vec<Vec<Arc>>,
        client_ap: Vec<usize>,
        relay_ap: Vec<usize>,
        unit_bps: f64,
    ) -> Self {
        let num_objects = num_relays + options.len();
        let mut object_clients = vec![Vec::new(); num_objects];
        for (i, row) in options.iter().enumerate() {
            for arc in row {
                object_clients[arc.object].push(i);
            }
        }
        AsymmetricInstance {
            num_relays,
            options,
            object_clients,
            client_ap,
            relay_ap,
            unit_bps,
        }
    }

    /// Hand-built instance in abstract benefit units (unit = 1 bit/s, every
    /// node mapped to AP 0). Relays must strictly beat the direct benefit.
    pub fn from_rows(num_relays: usize, rows: Vec<ClientOptions>) -> Result<Self> {
        let m = rows.len();
        let mut options = Vec::with_capacity(m);
        for (i, row) in rows.into_iter().enumerate() {
            let mut arcs: Vec<Arc> = Vec::with_capacity(row.relays.len() + 1);
            let mut relays = row.relays;
            relays.sort_by_key(|&(j, _)| j);
            for (j, b) in relays {
                if j >= num_relays {
                    return Err(Error::Instance(format!("client {i} lists unknown relay {j}")));
                }
                if arcs.last().is_some_and(|a| a.object == j) {
                    return Err(Error::Instance(format!("client {i} lists relay {j} twice")));
                }
                if !(b > row.direct) || !b.is_finite() {
                    return Err(Error::Instance(format!(
                        "relay {j} does not strictly improve client {i} ({b} <= {})",
                        row.direct
                    )));
                }
                arcs.push(Arc { object: j, benefit: b });
            }
            if !(row.direct.is_finite() && row.direct >= 0.0) {
                return Err(Error::Instance(format!("client {i} has invalid direct benefit")));
            }
            arcs.push(Arc {
                object: num_relays + i,
                benefit: row.direct,
            });
            options.push(arcs);
        }
        Ok(Self::assemble(num_relays, options, vec![0; m], vec![0; num_relays], 1.0))
    }

    pub fn num_clients(&self) -> usize {
        self.options.len()
    }

    pub fn num_relays(&self) -> usize {
        self.num_relays
    }

    pub fn num_objects(&self) -> usize {
        self.num_relays + self.options.len()
    }

    pub fn virtual_object(&self, client: usize) -> usize {
        self.num_relays + client
    }

    pub fn is_virtual(&self, object: usize) -> bool {
        object >= self.num_relays
    }

    /// `Q(i)` with benefits, virtual object last.
    pub fn options(&self, client: usize) -> &[Arc] {
        &self.options[client]
    }

    /// `M(q)`
    pub fn clients_of(&self, object: usize) -> &[usize] {
        &self.object_clients[object]
    }

    pub fn benefit(&self, client: usize, object: usize) -> Option<f64> {
        let row = &self.options[client];
        row.binary_search_by_key(&object, |a| a.object)
            .ok()
            .map(|idx| row[idx].benefit)
    }

    pub fn direct_benefit(&self, client: usize) -> f64 {
        self.options[client].last().expect("virtual object always present").benefit
    }

    /// `k_i*`
    pub fn client_ap(&self, client: usize) -> usize {
        self.client_ap[client]
    }

    /// `k_j*`
    pub fn relay_ap(&self, relay: usize) -> usize {
        self.relay_ap[relay]
    }

    /// Bits/s represented by one benefit unit.
    pub fn unit_bps(&self) -> f64 {
        self.unit_bps
    }

    pub fn arcs(&self) -> impl Iterator<Item = (usize, Arc)> + '_ {
        self.options
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().map(move |&a| (i, a)))
    }

    pub fn max_benefit(&self) -> f64 {
        self.arcs().map(|(_, a)| a.benefit).fold(0.0, f64::max)
    }

    pub fn min_benefit(&self) -> f64 {
        self.arcs()
            .map(|(_, a)| a.benefit)
            .fold(f64::INFINITY, f64::min)
            .min(self.max_benefit())
    }

    /// Benefit spread `max - min` over all eligible pairs.
    pub fn spread(&self) -> f64 {
        self.max_benefit() - self.min_benefit()
    }

    /// Finite stand-in for infinite prices and bids: ten times the largest benefit.
    pub fn ceiling(&self) -> f64 {
        (10.0 * self.max_benefit()).max(1.0)
    }

    /// Accepted-bid bound `M N^2 ceil(spread / eps)` for the distributed auction.
    pub fn iteration_bound(&self, epsilon: f64) -> u64 {
        self.num_clients() as u64 * self.broadcast_iteration_bound(epsilon)
    }

    /// Accepted-bid bound `N^2 ceil(spread / eps)` when relays broadcast prices.
    pub fn broadcast_iteration_bound(&self, epsilon: f64) -> u64 {
        let n = self.num_relays as u64;
        n * n * (self.spread() / epsilon).ceil() as u64
    }

    /// Checks that `choice[i]` is in `Q(i)` and no object is taken twice.
    pub fn validate_choice(&self, choice: &[usize]) -> Result<()> {
        if choice.len() != self.num_clients() {
            return Err(Error::infeasible(
                Constraint::ClientCoverage,
                format!("{} choices for {} clients", choice.len(), self.num_clients()),
            ));
        }
        let mut used = vec![false; self.num_objects()];
        for (i, &q) in choice.iter().enumerate() {
            if self.benefit(i, q).is_none() {
                return Err(Error::infeasible(
                    Constraint::Eligibility,
                    format!("object {q} is not eligible for client {i}"),
                ));
            }
            if std::mem::replace(&mut used[q], true) {
                return Err(Error::infeasible(
                    Constraint::RelayCapacity,
                    format!("object {q} assigned twice"),
                ));
            }
        }
        Ok(())
    }

    /// `sum beta(i, choice[i])`, correctly rounded, so equal-valued choices
    /// compare bitwise equal.
    pub fn objective(&self, choice: &[usize]) -> f64 {
        exact_sum(
            choice
                .iter()
                .enumerate()
                .map(|(i, &q)| self.benefit(i, q).expect("choice must be eligible")),
        )
    }

    /// Copy with benefits rounded to `round(beta * 10^digits)`. Relays that no
    /// longer strictly beat the rounded direct benefit are dropped.
    pub fn with_integer_benefits(&self, digits: u32) -> Self {
        let options = self
            .options
            .iter()
            .map(|row| {
                let direct = to_integer_units(row.last().unwrap().benefit, digits);
                let mut arcs: Vec<Arc> = row[..row.len() - 1]
                    .iter()
                    .map(|a| Arc {
                        object: a.object,
                        benefit: to_integer_units(a.benefit, digits),
                    })
                    .filter(|a| a.benefit > direct)
                    .collect();
                arcs.push(Arc {
                    object: row.last().unwrap().object,
                    benefit: direct,
                });
                arcs
            })
            .collect();
        Self::assemble(
            self.num_relays,
            options,
            self.client_ap.clone(),
            self.relay_ap.clone(),
            self.unit_bps / 10f64.powi(digits as i32),
        )
    }
}

/// Builds `Q(i) = N*(i) + {N + i}` with benefits expressed in units of
/// `unit_bps` bits/s.
pub fn build_asymmetric(
    benefits: &BenefitTable,
    topo: &TopologyInstance,
    unit_bps: f64,
) -> Result<AsymmetricInstance> {
    if !(unit_bps > 0.0 && unit_bps.is_finite()) {
        return Err(Error::Domain(format!("benefit unit must be positive, got {unit_bps}")));
    }
    let best = best_ap_sets(benefits, topo)?;
    let n = topo.num_relays();
    let options = (0..topo.num_clients())
        .map(|i| {
            let direct = benefits.direct[&(i, best.client[i])];
            let mut arcs: Vec<Arc> = topo
                .client_relays(i)
                .iter()
                .filter_map(|&j| {
                    let via = benefits.relayed[&(i, j, best.relay[j])];
                    (via > direct).then(|| Arc {
                        object: j,
                        benefit: via / unit_bps,
                    })
                })
                .collect();
            arcs.push(Arc {
                object: n + i,
                benefit: direct / unit_bps,
            });
            arcs
        })
        .collect();
    Ok(AsymmetricInstance::assemble(n, options, best.client, best.relay, unit_bps))
}

/// Maps an object choice back to client-AP pairs and client-relay-AP triples.
pub fn recover_assignment(inst: &AsymmetricInstance, choice: &[usize]) -> Result<Assignment> {
    inst.validate_choice(choice)?;
    let mut s = Assignment::default();
    for (i, &q) in choice.iter().enumerate() {
        if inst.is_virtual(q) {
            s.direct.insert((i, inst.client_ap(i)));
        } else {
            s.relayed.insert((i, q, inst.relay_ap(q)));
        }
    }
    Ok(s)
}

/// Per-AP connection statistics over a sample of assignments.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadBalance {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub samples: usize,
}

pub fn check_load_balance(samples: &[Assignment], num_aps: usize) -> Result<LoadBalance> {
    if samples.is_empty() {
        return Err(Error::Domain("load balance needs at least one sample".into()));
    }
    let n = samples.len() as f64;
    let loads: Vec<Vec<usize>> = samples.iter().map(|s| s.ap_loads(num_aps)).collect();
    let mean: Vec<f64> = (0..num_aps)
        .map(|k| loads.iter().map(|l| l[k] as f64).sum::<f64>() / n)
        .collect();
    let stderr = (0..num_aps)
        .map(|k| {
            if samples.len() < 2 {
                return 0.0;
            }
            let var = loads
                .iter()
                .map(|l| (l[k] as f64 - mean[k]).powi(2))
                .sum::<f64>()
                / (n - 1.0);
            (var / n).sqrt()
        })
        .collect();
    Ok(LoadBalance {
        mean,
        stderr,
        samples: samples.len(),
    })
}
