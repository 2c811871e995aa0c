//! Exact solvers (min-cost flow, exhaustive search) and the RSSI / random
//! association baselines.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::problem::{best_ap_sets, AsymmetricInstance, Assignment};
use crate::radio::BenefitTable;
use crate::topology::TopologyInstance;

pub const EXHAUSTIVE_MAX_CLIENTS: usize = 10;
pub const EXHAUSTIVE_MAX_RELAYS: usize = 6;

#[derive(Debug, Clone)]
struct Edge {
    to: usize,
    cap: i64,
    cost: f64,
    rev: usize,
}

/// Transportation network with a supersource absorbing the surplus objects:
/// clients supply one unit each, the supersource supplies `Q - M`, and each
/// object demands one unit. Costs are negated benefits.
#[derive(Debug, Clone)]
pub struct FlowNetwork {
    graph: Vec<Vec<Edge>>,
    num_clients: usize,
    num_objects: usize,
    /// (node, edge index) of each client-object arc, per client.
    client_arcs: Vec<Vec<(usize, usize)>>,
    /// (node, edge index, capacity) of every original arc.
    forward: Vec<(usize, usize, i64)>,
}

impl FlowNetwork {
    fn source(&self) -> usize {
        0
    }
    fn client(&self, i: usize) -> usize {
        1 + i
    }
    fn supersource(&self) -> usize {
        1 + self.num_clients
    }
    fn object(&self, q: usize) -> usize {
        2 + self.num_clients + q
    }
    fn sink(&self) -> usize {
        2 + self.num_clients + self.num_objects
    }

    fn add_edge(&mut self, from: usize, to: usize, cap: i64, cost: f64) -> usize {
        let rev_from = self.graph[to].len() + usize::from(from == to);
        let idx = self.graph[from].len();
        self.graph[from].push(Edge { to, cap, cost, rev: rev_from });
        self.graph[to].push(Edge { to: from, cap: 0, cost: -cost, rev: idx });
        self.forward.push((from, idx, cap));
        idx
    }

    pub fn new(inst: &AsymmetricInstance) -> Self {
        let m = inst.num_clients();
        let q = inst.num_objects();
        let mut net = FlowNetwork {
            graph: vec![Vec::new(); q + m + 3],
            num_clients: m,
            num_objects: q,
            client_arcs: vec![Vec::new(); m],
            forward: Vec::new(),
        };
        let (src, sup, sink) = (net.source(), net.supersource(), net.sink());
        for i in 0..m {
            let c = net.client(i);
            net.add_edge(src, c, 1, 0.0);
            for arc in inst.options(i) {
                let o = net.object(arc.object);
                let idx = net.add_edge(c, o, 1, -arc.benefit);
                net.client_arcs[i].push((arc.object, idx));
            }
        }
        net.add_edge(src, sup, (q - m) as i64, 0.0);
        for obj in 0..q {
            let o = net.object(obj);
            net.add_edge(sup, o, 1, 0.0);
            net.add_edge(o, sink, 1, 0.0);
        }
        net
    }

    pub fn total_supply(&self) -> usize {
        self.num_objects
    }

    fn bellman_ford(&self, dist: &mut [f64], from_source_only: bool) {
        let n = self.graph.len();
        if from_source_only {
            dist.fill(f64::INFINITY);
            dist[self.source()] = 0.0;
        }
        for _ in 0..n {
            let mut changed = false;
            for u in 0..n {
                if !dist[u].is_finite() {
                    continue;
                }
                for e in &self.graph[u] {
                    let cand = dist[u] + e.cost;
                    if e.cap > 0 && (!dist[e.to].is_finite() || cand < dist[e.to] - 1e-12 * (1.0 + dist[e.to].abs())) {
                        dist[e.to] = cand;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
    }

    /// Successive shortest paths with Dijkstra on reduced costs.
    fn solve(&mut self) -> usize {
        let n = self.graph.len();
        let (src, sink) = (self.source(), self.sink());
        let mut h = vec![0.0; n];
        self.bellman_ford(&mut h, true);
        for x in h.iter_mut() {
            if !x.is_finite() {
                *x = 0.0;
            }
        }
        let mut flow = 0;
        let mut dist = vec![0.0; n];
        let mut prev: Vec<Option<(usize, usize)>> = vec![None; n];
        loop {
            dist.fill(f64::INFINITY);
            prev.fill(None);
            dist[src] = 0.0;
            let mut heap = BinaryHeap::new();
            heap.push(HeapItem(0.0, src));
            while let Some(HeapItem(d, u)) = heap.pop() {
                if d > dist[u] {
                    continue;
                }
                for (ei, e) in self.graph[u].iter().enumerate() {
                    if e.cap <= 0 {
                        continue;
                    }
                    let reduced = (e.cost + h[u] - h[e.to]).max(0.0);
                    let nd = d + reduced;
                    if nd < dist[e.to] {
                        dist[e.to] = nd;
                        prev[e.to] = Some((u, ei));
                        heap.push(HeapItem(nd, e.to));
                    }
                }
            }
            if !dist[sink].is_finite() {
                break;
            }
            for v in 0..n {
                if dist[v].is_finite() {
                    h[v] += dist[v];
                }
            }
            let mut v = sink;
            while let Some((u, ei)) = prev[v] {
                let rev = self.graph[u][ei].rev;
                self.graph[u][ei].cap -= 1;
                self.graph[v][rev].cap += 1;
                v = u;
            }
            flow += 1;
        }
        flow
    }

    fn choice(&self) -> Vec<usize> {
        (0..self.num_clients)
            .map(|i| {
                let c = self.client(i);
                self.client_arcs[i]
                    .iter()
                    .find(|&&(_, idx)| self.graph[c][idx].cap == 0)
                    .map(|&(q, _)| q)
                    .expect("every client ships its unit")
            })
            .collect()
    }

    /// Net flow is zero at every node except the source and sink.
    fn conservation_holds(&self) -> bool {
        let mut balance = vec![0i64; self.graph.len()];
        for &(u, idx, cap) in &self.forward {
            let e = &self.graph[u][idx];
            let used = cap - e.cap;
            balance[u] -= used;
            balance[e.to] += used;
        }
        balance
            .iter()
            .enumerate()
            .all(|(v, &b)| v == self.source() || v == self.sink() || b == 0)
    }
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Optimal assignment with dual prices certifying it.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactSolution {
    pub choice: Vec<usize>,
    pub objective: f64,
    pub object_prices: Vec<f64>,
    pub client_profits: Vec<f64>,
    pub lambda: f64,
}

pub fn solve_exact_mcf(inst: &AsymmetricInstance) -> ExactSolution {
    let mut net = FlowNetwork::new(inst);
    let flow = net.solve();
    debug_assert_eq!(flow, net.total_supply());
    debug_assert!(net.conservation_holds());
    let choice = net.choice();

    // Potentials of the optimal residual graph give the duals.
    let mut d = vec![0.0; net.graph.len()];
    net.bellman_ford(&mut d, false);
    // A client's only incoming residual arc comes from its object; tighten it.
    for (i, &q) in choice.iter().enumerate() {
        d[net.client(i)] = d[net.object(q)] + inst.benefit(i, q).unwrap();
    }
    let c = -d[net.supersource()];
    let client_profits = (0..inst.num_clients()).map(|i| d[net.client(i)] + c).collect();
    let object_prices = (0..inst.num_objects()).map(|q| -d[net.object(q)] - c).collect();
    ExactSolution {
        objective: inst.objective(&choice),
        choice,
        object_prices,
        client_profits,
        lambda: 0.0,
    }
}

/// Exact optimum by enumerating injective client-to-object maps.
pub fn solve_exhaustive(inst: &AsymmetricInstance) -> Result<(Vec<usize>, f64)> {
    if inst.num_clients() > EXHAUSTIVE_MAX_CLIENTS || inst.num_relays() > EXHAUSTIVE_MAX_RELAYS {
        return Err(Error::TooLarge(format!(
            "{} clients, {} relays (limit {EXHAUSTIVE_MAX_CLIENTS}, {EXHAUSTIVE_MAX_RELAYS})",
            inst.num_clients(),
            inst.num_relays()
        )));
    }
    fn rec(
        inst: &AsymmetricInstance,
        i: usize,
        acc: f64,
        used: &mut [bool],
        cur: &mut Vec<usize>,
        best: &mut (Vec<usize>, f64),
    ) {
        if i == inst.num_clients() {
            // Near-ties are settled on the exact sum.
            if acc >= best.1 - 1e-9 * (1.0 + acc.abs()) {
                let exact = inst.objective(cur);
                if exact > best.1 {
                    *best = (cur.clone(), exact);
                }
            }
            return;
        }
        for arc in inst.options(i) {
            if used[arc.object] {
                continue;
            }
            used[arc.object] = true;
            cur.push(arc.object);
            rec(inst, i + 1, acc + arc.benefit, used, cur, best);
            cur.pop();
            used[arc.object] = false;
        }
    }
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    rec(inst, 0, 0.0, &mut vec![false; inst.num_objects()], &mut Vec::new(), &mut best);
    Ok(best)
}

/// Every client associates directly with its strongest AP; relays unused.
pub fn baseline_rssi(benefits: &BenefitTable, topo: &TopologyInstance) -> Result<Assignment> {
    let best = best_ap_sets(benefits, topo)?;
    Ok(Assignment {
        direct: best.client.into_iter().enumerate().collect(),
        relayed: Default::default(),
    })
}

/// Every client associates directly with a uniformly random eligible AP.
pub fn baseline_random<R: Rng + ?Sized>(topo: &TopologyInstance, rng: &mut R) -> Result<Assignment> {
    let mut s = Assignment::default();
    for i in 0..topo.num_clients() {
        let k = *topo
            .client_aps(i)
            .choose(rng)
            .ok_or_else(|| Error::Instance(format!("client {i} reaches no AP")))?;
        s.direct.insert((i, k));
    }
    Ok(s)
}
