//! Node placement and connectivity sets.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::SCHEMA_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// A network endpoint, indexed within its own kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Client(usize),
    Relay(usize),
    Ap(usize),
}

impl Node {
    pub fn kind(&self) -> &'static str {
        match self {
            Node::Client(_) => "client",
            Node::Relay(_) => "relay",
            Node::Ap(_) => "ap",
        }
    }

    pub fn index(&self) -> usize {
        match *self {
            Node::Client(i) | Node::Relay(i) | Node::Ap(i) => i,
        }
    }
}

fn link_key(a: Node, b: Node) -> (Node, Node) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Who can talk to whom. The reverse sets (clients of an AP, clients of a
/// relay, relays of an AP) are derived from these, so they are consistent by
/// construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Eligibility {
    /// `K(i)`: APs reachable by each client.
    pub client_aps: Vec<Vec<usize>>,
    /// `K(j)`: APs reachable by each relay.
    pub relay_aps: Vec<Vec<usize>>,
    /// `N(i)`: relays reachable by each client.
    pub client_relays: Vec<Vec<usize>>,
}

impl Eligibility {
    /// Every pair of nodes within `radius` of each other is connected.
    pub fn within_radius(clients: &[Point], relays: &[Point], aps: &[Point], radius: f64) -> Self {
        let near = |p: &Point, set: &[Point]| -> Vec<usize> {
            set.iter()
                .enumerate()
                .filter(|(_, q)| p.distance(q) <= radius)
                .map(|(idx, _)| idx)
                .collect()
        };
        Eligibility {
            client_aps: clients.iter().map(|c| near(c, aps)).collect(),
            relay_aps: relays.iter().map(|r| near(r, aps)).collect(),
            client_relays: clients.iter().map(|c| near(c, relays)).collect(),
        }
    }

    fn normalize(&mut self) {
        for set in self
            .client_aps
            .iter_mut()
            .chain(self.relay_aps.iter_mut())
            .chain(self.client_relays.iter_mut())
        {
            set.sort_unstable();
            set.dedup();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopologyInstance {
    clients: Vec<Point>,
    relays: Vec<Point>,
    aps: Vec<Point>,
    eligibility: Eligibility,
    blocked: BTreeSet<(Node, Node)>,
}

impl TopologyInstance {
    pub fn new(
        clients: Vec<Point>,
        relays: Vec<Point>,
        aps: Vec<Point>,
        mut eligibility: Eligibility,
    ) -> Result<Self> {
        eligibility.normalize();
        let topo = TopologyInstance {
            clients,
            relays,
            aps,
            eligibility,
            blocked: BTreeSet::new(),
        };
        topo.validate()?;
        Ok(topo)
    }

    pub fn with_radius(
        clients: Vec<Point>,
        relays: Vec<Point>,
        aps: Vec<Point>,
        radius: f64,
    ) -> Result<Self> {
        let eligibility = Eligibility::within_radius(&clients, &relays, &aps, radius);
        Self::new(clients, relays, aps, eligibility)
    }

    pub fn validate(&self) -> Result<()> {
        let (m, n, k) = (self.clients.len(), self.relays.len(), self.aps.len());
        if n > m {
            return Err(Error::Instance(format!("{n} relays exceed {m} clients")));
        }
        let all_finite = self
            .clients
            .iter()
            .chain(&self.relays)
            .chain(&self.aps)
            .all(|p| p.x.is_finite() && p.y.is_finite());
        if !all_finite {
            return Err(Error::Instance("non-finite node position".into()));
        }
        let e = &self.eligibility;
        if e.client_aps.len() != m || e.client_relays.len() != m || e.relay_aps.len() != n {
            return Err(Error::Instance("eligibility lists do not match node counts".into()));
        }
        for (i, aps) in e.client_aps.iter().enumerate() {
            if aps.is_empty() {
                return Err(Error::Instance(format!("client {i} reaches no AP")));
            }
            if aps.iter().any(|&a| a >= k) {
                return Err(Error::Instance(format!("client {i} lists an unknown AP")));
            }
        }
        for (j, aps) in e.relay_aps.iter().enumerate() {
            if aps.is_empty() {
                return Err(Error::Instance(format!("relay {j} reaches no AP")));
            }
            if aps.iter().any(|&a| a >= k) {
                return Err(Error::Instance(format!("relay {j} lists an unknown AP")));
            }
        }
        for (i, relays) in e.client_relays.iter().enumerate() {
            if relays.iter().any(|&r| r >= n) {
                return Err(Error::Instance(format!("client {i} lists an unknown relay")));
            }
        }
        for &(a, b) in &self.blocked {
            if !self.contains(a) || !self.contains(b) {
                return Err(Error::Instance(format!("blocked link {a:?}-{b:?} names an unknown node")));
            }
        }
        Ok(())
    }

    pub fn contains(&self, node: Node) -> bool {
        match node {
            Node::Client(i) => i < self.clients.len(),
            Node::Relay(j) => j < self.relays.len(),
            Node::Ap(k) => k < self.aps.len(),
        }
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn num_relays(&self) -> usize {
        self.relays.len()
    }

    pub fn num_aps(&self) -> usize {
        self.aps.len()
    }

    pub fn clients(&self) -> &[Point] {
        &self.clients
    }

    pub fn relays(&self) -> &[Point] {
        &self.relays
    }

    pub fn aps(&self) -> &[Point] {
        &self.aps
    }

    pub fn eligibility(&self) -> &Eligibility {
        &self.eligibility
    }

    pub fn position(&self, node: Node) -> Point {
        match node {
            Node::Client(i) => self.clients[i],
            Node::Relay(j) => self.relays[j],
            Node::Ap(k) => self.aps[k],
        }
    }

    pub fn distance(&self, a: Node, b: Node) -> f64 {
        self.position(a).distance(&self.position(b))
    }

    pub fn client_aps(&self, client: usize) -> &[usize] {
        &self.eligibility.client_aps[client]
    }

    pub fn relay_aps(&self, relay: usize) -> &[usize] {
        &self.eligibility.relay_aps[relay]
    }

    pub fn client_relays(&self, client: usize) -> &[usize] {
        &self.eligibility.client_relays[client]
    }

    /// `M(k)`
    pub fn clients_of_ap(&self, ap: usize) -> Vec<usize> {
        (0..self.num_clients())
            .filter(|&i| self.client_aps(i).contains(&ap))
            .collect()
    }

    /// `M(j)`
    pub fn clients_of_relay(&self, relay: usize) -> Vec<usize> {
        (0..self.num_clients())
            .filter(|&i| self.client_relays(i).contains(&relay))
            .collect()
    }

    /// `N(k)`
    pub fn relays_of_ap(&self, ap: usize) -> Vec<usize> {
        (0..self.num_relays())
            .filter(|&j| self.relay_aps(j).contains(&ap))
            .collect()
    }

    pub fn is_blocked(&self, a: Node, b: Node) -> bool {
        self.blocked.contains(&link_key(a, b))
    }

    pub fn block(&mut self, a: Node, b: Node) -> bool {
        self.blocked.insert(link_key(a, b))
    }

    pub fn unblock(&mut self, a: Node, b: Node) -> bool {
        self.blocked.remove(&link_key(a, b))
    }

    pub fn blocked_links(&self) -> impl Iterator<Item = (Node, Node)> + '_ {
        self.blocked.iter().copied()
    }

    /// Sub-topology over the selected clients and relays (all APs kept), plus
    /// the original index of every retained client and relay. Eligibility and
    /// blockage are carried over; the relay-count invariant is not enforced
    /// because dynamic scenarios pass through such states transiently.
    pub fn restrict(&self, keep_client: &[bool], keep_relay: &[bool]) -> (TopologyInstance, Vec<usize>, Vec<usize>) {
        let client_ids: Vec<usize> = (0..self.num_clients()).filter(|&i| keep_client[i]).collect();
        let relay_ids: Vec<usize> = (0..self.num_relays()).filter(|&j| keep_relay[j]).collect();
        let mut relay_local = vec![usize::MAX; self.num_relays()];
        for (local, &j) in relay_ids.iter().enumerate() {
            relay_local[j] = local;
        }
        let mut client_local = vec![usize::MAX; self.num_clients()];
        for (local, &i) in client_ids.iter().enumerate() {
            client_local[i] = local;
        }
        let eligibility = Eligibility {
            client_aps: client_ids.iter().map(|&i| self.client_aps(i).to_vec()).collect(),
            relay_aps: relay_ids.iter().map(|&j| self.relay_aps(j).to_vec()).collect(),
            client_relays: client_ids
                .iter()
                .map(|&i| {
                    self.client_relays(i)
                        .iter()
                        .filter(|&&j| keep_relay[j])
                        .map(|&j| relay_local[j])
                        .collect()
                })
                .collect(),
        };
        let remap = |node: Node| -> Option<Node> {
            match node {
                Node::Client(i) => keep_client[i].then(|| Node::Client(client_local[i])),
                Node::Relay(j) => keep_relay[j].then(|| Node::Relay(relay_local[j])),
                ap => Some(ap),
            }
        };
        let blocked = self
            .blocked
            .iter()
            .filter_map(|&(a, b)| Some(link_key(remap(a)?, remap(b)?)))
            .collect();
        let topo = TopologyInstance {
            clients: client_ids.iter().map(|&i| self.clients[i]).collect(),
            relays: relay_ids.iter().map(|&j| self.relays[j]).collect(),
            aps: self.aps.clone(),
            eligibility,
            blocked,
        };
        (topo, client_ids, relay_ids)
    }

    pub fn to_doc(&self) -> TopologyDoc {
        TopologyDoc {
            schema_version: SCHEMA_VERSION,
            clients: self.clients.clone(),
            relays: self.relays.clone(),
            aps: self.aps.clone(),
            cell_radius_m: None,
            eligibility: Some(self.eligibility.clone()),
            blocked_links: self.blocked.iter().copied().collect(),
        }
    }

    pub fn from_doc(doc: TopologyDoc) -> Result<Self> {
        if doc.schema_version != SCHEMA_VERSION {
            return Err(Error::Instance(format!(
                "unsupported topology schema_version {} (expected {SCHEMA_VERSION})",
                doc.schema_version
            )));
        }
        let eligibility = match (doc.eligibility, doc.cell_radius_m) {
            (Some(e), _) => e,
            (None, Some(r)) => Eligibility::within_radius(&doc.clients, &doc.relays, &doc.aps, r),
            (None, None) => {
                return Err(Error::Instance(
                    "topology needs either explicit eligibility or cell_radius_m".into(),
                ))
            }
        };
        let mut topo = TopologyInstance::new(doc.clients, doc.relays, doc.aps, eligibility)?;
        for (a, b) in doc.blocked_links {
            topo.block(a, b);
        }
        topo.validate()?;
        Ok(topo)
    }
}

/// Versioned on-disk form of a [`TopologyInstance`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyDoc {
    pub schema_version: u32,
    pub clients: Vec<Point>,
    pub relays: Vec<Point>,
    pub aps: Vec<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_radius_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eligibility: Option<Eligibility>,
    #[serde(default)]
    pub blocked_links: Vec<(Node, Node)>,
}
