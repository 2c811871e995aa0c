//! Deterministic discrete-event simulation of the distributed auction.
//!
//! Clients run the forward bidding protocol against locally cached prices;
//! relays resolve bids in per-instant batches and, when the reverse protocol
//! is enabled, survey their clients to cut their price once unassigned.
//! Time is integer milliseconds. All randomness (message latency) comes from
//! one seeded generator, and every container iterates in index order, so a
//! run is a pure function of its inputs.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::auction::{check_eps_cs, CsReport, Matching, PriceState};
use crate::error::{Error, Result};
use crate::oracle::solve_exact_mcf;
use crate::problem::{build_asymmetric, AsymmetricInstance};
use crate::radio::{build_benefits, RadioParams};
use crate::topology::{Node, TopologyInstance};

/// Relative slack on the ε acceptance test, absorbing float rounding.
const BID_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub epsilon: f64,
    /// Inclusive latency range in ms.
    pub latency_ms: (u64, u64),
    /// Relays announce every accepted price to all their clients.
    pub broadcast_prices: bool,
    /// Unassigned relays run the reverse (price-cutting) protocol.
    pub reverse: bool,
    pub slot_ms: u64,
    /// Safety cap on processed events.
    pub max_events: u64,
    /// Check local-price staleness after every instant.
    pub check_invariants: bool,
    pub trace: bool,
}

impl SimConfig {
    pub fn new(epsilon: f64) -> Result<Self> {
        let cfg = SimConfig {
            epsilon,
            latency_ms: (1, 5),
            broadcast_prices: false,
            reverse: true,
            slot_ms: 10,
            max_events: 50_000_000,
            check_invariants: true,
            trace: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Domain(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        let (lo, hi) = self.latency_ms;
        if lo == 0 || hi < lo {
            return Err(Error::Domain(format!("latency range [{lo}, {hi}] must be positive and ordered")));
        }
        if self.slot_ms == 0 {
            return Err(Error::Domain("slot length must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Addr {
    Client(usize),
    Relay(usize),
}

#[derive(Debug, Clone, PartialEq)]
enum Payload {
    Bid { value: f64 },
    Response { accepted: bool, price: f64 },
    Evicted { price: f64 },
    PriceNotice { price: f64 },
    Survey { round: u64 },
    SurveyReply { round: u64, relay_benefit: f64, current_benefit: f64, current_price: f64, busy: bool },
    Offer { price: f64 },
    Decline,
    DepartNotice,
}

#[derive(Debug, Clone, PartialEq)]
struct Message {
    from: Addr,
    to: Addr,
    payload: Payload,
}

/// Change to the network, applied at a slot boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvEvent {
    ClientJoin { client: usize },
    ClientLeave { client: usize },
    RelayJoin { relay: usize },
    RelayLeave { relay: usize },
    Blockage { a: Node, b: Node, duration_slots: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedEvent {
    pub slot: u64,
    #[serde(flatten)]
    pub event: EnvEvent,
}

#[derive(Debug, Clone)]
enum Event {
    Deliver(Message),
    Env(EnvEvent),
    Unblock(Node, Node),
}

#[derive(Debug, Clone, Default)]
struct ClientAgent {
    active: bool,
    /// Real relays in `Q(i)` (global ids) and their benefits.
    options: BTreeMap<usize, f64>,
    direct: f64,
    /// Last price heard from each relay.
    prices: BTreeMap<usize, f64>,
    current: Option<usize>,
    pending: Option<usize>,
}

impl ClientAgent {
    fn profit(&self) -> f64 {
        match self.current {
            Some(j) => self.options[&j] - self.prices[&j],
            None => self.direct,
        }
    }

    /// Best relay other than the current one by local value, its value, and
    /// the best alternative value (staying put or the direct link included).
    fn best(&self) -> Option<(usize, f64, f64)> {
        let mut best: Option<(usize, f64)> = None;
        let mut second = self.profit().max(self.direct);
        for (&j, &b) in &self.options {
            if self.current == Some(j) {
                continue;
            }
            let v = b - self.prices[&j];
            match best {
                Some((_, bv)) if v <= bv => second = second.max(v),
                Some((_, bv)) => {
                    second = second.max(bv);
                    best = Some((j, v));
                }
                None => best = Some((j, v)),
            }
        }
        best.map(|(j, v)| (j, v, second))
    }

    /// Direct clients bid for any better relay. A relay holder bids again only
    /// when a price cut it heard about breaks its eps-CS condition.
    fn enabled(&self, eps: f64) -> bool {
        self.active
            && self.pending.is_none()
            && self.best().is_some_and(|(_, v, _)| match self.current {
                None => v > self.direct,
                Some(_) => v - self.profit() > eps * (1.0 + BID_SLACK),
            })
    }
}

#[derive(Debug, Clone)]
struct Reply {
    client: usize,
    margin: f64,
    busy: bool,
}

#[derive(Debug, Clone)]
struct SurveyState {
    round: u64,
    waiting: BTreeSet<usize>,
    replies: Vec<Reply>,
}

#[derive(Debug, Clone, Default)]
struct RelayAgent {
    active: bool,
    price: f64,
    holder: Option<usize>,
    /// The holder came from an offer not yet answered by a won bid.
    offered: bool,
    /// `M(j)`: active clients listing this relay (global ids).
    clients: Vec<usize>,
    survey: Option<SurveyState>,
    bids: Vec<(usize, f64)>,
}

impl RelayAgent {
    fn wants_survey(&self) -> bool {
        self.active && self.holder.is_none() && self.price != 0.0 && self.survey.is_none()
    }
}

/// Counters accumulated over a run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimStats {
    pub bids: u64,
    pub accepted_bids: u64,
    pub offers: u64,
    pub accepted_offers: u64,
    pub surveys: u64,
    pub messages: u64,
    pub events: u64,
    pub protocol_errors: u64,
    pub staleness_violations: u64,
    pub final_time_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTraceRow {
    pub time_ms: u64,
    pub actor_kind: String,
    pub actor_id: usize,
    pub event: String,
    pub object: Option<usize>,
    pub bid_or_price: Option<f64>,
    pub objective_if_quiescent: Option<f64>,
}

pub fn write_sim_trace_csv<W: Write>(rows: &[SimTraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Instance over the currently active nodes, with local-to-global id maps.
#[derive(Debug, Clone)]
pub struct View {
    pub inst: AsymmetricInstance,
    pub client_ids: Vec<usize>,
    pub relay_ids: Vec<usize>,
}

impl View {
    pub fn identity(inst: AsymmetricInstance) -> Self {
        View {
            client_ids: (0..inst.num_clients()).collect(),
            relay_ids: (0..inst.num_relays()).collect(),
            inst,
        }
    }
}

/// Global state at a quiescent instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    /// Object per active client, in local instance indices.
    pub choice: Vec<usize>,
    pub prices: PriceState,
    pub matching: Matching,
    /// Objective in benefit units.
    pub objective: f64,
    pub consistent: bool,
}

struct Engine {
    cfg: SimConfig,
    rng: ChaCha8Rng,
    now: u64,
    seq: u64,
    heap: BinaryHeap<Reverse<(u64, u64)>>,
    events: BTreeMap<u64, Event>,
    link_last: BTreeMap<(Addr, Addr), u64>,
    in_flight: usize,
    clients: Vec<ClientAgent>,
    relays: Vec<RelayAgent>,
    view: View,
    client_local: Vec<Option<usize>>,
    relay_local: Vec<Option<usize>>,
    survey_round: u64,
    stats: SimStats,
    trace: Vec<SimTraceRow>,
}

impl Engine {
    fn new(num_clients: usize, num_relays: usize, cfg: SimConfig, seed: u64, view: View) -> Self {
        Engine {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            now: 0,
            seq: 0,
            heap: BinaryHeap::new(),
            events: BTreeMap::new(),
            link_last: BTreeMap::new(),
            in_flight: 0,
            clients: vec![ClientAgent::default(); num_clients],
            relays: vec![RelayAgent::default(); num_relays],
            client_local: vec![None; num_clients],
            relay_local: vec![None; num_relays],
            view,
            survey_round: 0,
            stats: SimStats::default(),
            trace: Vec::new(),
        }
    }

    fn log(&mut self, actor: Addr, event: &str, object: Option<usize>, value: Option<f64>) {
        if !self.cfg.trace {
            return;
        }
        let (kind, id) = match actor {
            Addr::Client(i) => ("client", i),
            Addr::Relay(j) => ("relay", j),
        };
        self.trace.push(SimTraceRow {
            time_ms: self.now,
            actor_kind: kind.into(),
            actor_id: id,
            event: event.into(),
            object,
            bid_or_price: value,
            objective_if_quiescent: None,
        });
    }

    fn schedule(&mut self, time: u64, event: Event) {
        self.seq += 1;
        self.heap.push(Reverse((time, self.seq)));
        self.events.insert(self.seq, event);
    }

    fn send(&mut self, from: Addr, to: Addr, payload: Payload) {
        let (lo, hi) = self.cfg.latency_ms;
        let mut at = self.now + self.rng.gen_range(lo..=hi);
        let last = self.link_last.entry((from, to)).or_insert(0);
        at = at.max(*last);
        *last = at;
        self.stats.messages += 1;
        self.in_flight += 1;
        if let (Addr::Client(i), Payload::Bid { value }) = (from, &payload) {
            let value = *value;
            if let Addr::Relay(j) = to {
                self.log(Addr::Client(i), "bid", Some(j), Some(value));
            }
        }
        self.schedule(at, Event::Deliver(Message { from, to, payload }));
    }

    fn ceiling(&self) -> f64 {
        self.view.inst.ceiling()
    }

    /// Installs a new instance. `fresh_relays` get `fresh_price`; clients that
    /// were not active before start from scratch.
    fn install(&mut self, view: View, fresh_relays: &BTreeSet<usize>, fresh_price: f64) {
        let inst = &view.inst;
        self.client_local.iter_mut().for_each(|x| *x = None);
        self.relay_local.iter_mut().for_each(|x| *x = None);
        for (l, &g) in view.client_ids.iter().enumerate() {
            self.client_local[g] = Some(l);
        }
        for (l, &g) in view.relay_ids.iter().enumerate() {
            self.relay_local[g] = Some(l);
        }
        for &g in fresh_relays {
            let r = &mut self.relays[g];
            *r = RelayAgent {
                active: true,
                price: fresh_price,
                ..RelayAgent::default()
            };
        }
        for r in self.relays.iter_mut() {
            r.clients.clear();
            r.survey = None;
            r.bids.clear();
        }
        let mut departs = Vec::new();
        for (l, &i) in view.client_ids.iter().enumerate() {
            let row = inst.options(l);
            let new_opts: BTreeMap<usize, f64> = row[..row.len() - 1]
                .iter()
                .map(|a| (view.relay_ids[a.object], a.benefit))
                .collect();
            let new_direct = inst.direct_benefit(l);
            for &j in new_opts.keys() {
                self.relays[j].clients.push(i);
            }
            let c = &mut self.clients[i];
            if !c.active {
                *c = ClientAgent {
                    active: true,
                    prices: new_opts.keys().map(|&j| (j, self.relays[j].price)).collect(),
                    options: new_opts,
                    direct: new_direct,
                    current: None,
                    pending: None,
                };
                continue;
            }
            if let Some(j) = c.current {
                let moved = match new_opts.get(&j) {
                    None => true,
                    Some(&b) => b != c.options[&j],
                };
                let improved = new_direct > c.direct
                    || new_opts.iter().any(|(r, &b)| match c.options.get(r) {
                        Some(&old) => b > old,
                        None => !fresh_relays.contains(r),
                    });
                if moved || improved {
                    c.current = None;
                    if self.relays[j].active {
                        departs.push((i, j));
                    }
                }
            }
            if c.pending.is_some_and(|j| !new_opts.contains_key(&j)) {
                c.pending = None;
            }
            c.prices.retain(|j, _| new_opts.contains_key(j));
            for &j in new_opts.keys() {
                let price = self.relays[j].price;
                c.prices.entry(j).or_insert(price);
            }
            c.options = new_opts;
            c.direct = new_direct;
        }
        self.view = view;
        for (i, j) in departs {
            self.log(Addr::Client(i), "fallback", Some(j), None);
            self.send(Addr::Client(i), Addr::Relay(j), Payload::DepartNotice);
        }
    }

    fn on_client(&mut self, i: usize, j: usize, payload: Payload) {
        let me = Addr::Client(i);
        let relay = Addr::Relay(j);
        let c = &mut self.clients[i];
        let known = c.options.contains_key(&j);
        match payload {
            Payload::Response { accepted, price } => {
                if known {
                    c.prices.insert(j, price);
                }
                if accepted {
                    if c.pending == Some(j) && known {
                        c.pending = None;
                        let old = c.current.replace(j).filter(|&o| o != j);
                        self.log(me, "connect", Some(j), Some(price));
                        if let Some(old) = old {
                            self.send(me, Addr::Relay(old), Payload::DepartNotice);
                        }
                    } else {
                        self.send(me, relay, Payload::DepartNotice);
                    }
                } else if c.pending == Some(j) {
                    c.pending = None;
                }
            }
            Payload::Evicted { price } => {
                if known {
                    c.prices.insert(j, price);
                }
                if c.current == Some(j) {
                    c.current = None;
                    self.log(me, "evicted", Some(j), Some(price));
                }
            }
            Payload::PriceNotice { price } => {
                if known {
                    c.prices.insert(j, price);
                }
            }
            Payload::Survey { round } => {
                let busy = !known || c.pending.is_some() || c.current == Some(j);
                let reply = Payload::SurveyReply {
                    round,
                    relay_benefit: c.options.get(&j).copied().unwrap_or(0.0),
                    current_benefit: c.current.map_or(c.direct, |q| c.options[&q]),
                    current_price: c.current.map_or(0.0, |q| c.prices[&q]),
                    busy,
                };
                self.send(me, relay, reply);
            }
            Payload::Offer { price } => {
                let take = known && c.pending.is_none() && c.options[&j] - price >= c.profit();
                if take {
                    let old = c.current.replace(j);
                    c.prices.insert(j, price);
                    self.stats.accepted_offers += 1;
                    self.log(me, "accept_offer", Some(j), Some(price));
                    if let Some(old) = old {
                        self.send(me, Addr::Relay(old), Payload::DepartNotice);
                    }
                } else {
                    if known {
                        c.prices.insert(j, price);
                    }
                    self.log(me, "decline_offer", Some(j), Some(price));
                    self.send(me, relay, Payload::Decline);
                }
            }
            _ => self.stats.protocol_errors += 1,
        }
    }

    fn on_relay(&mut self, j: usize, i: usize, payload: Payload) {
        match payload {
            Payload::DepartNotice => {
                // A bid batched earlier in this instant was sent before the departure.
                self.relays[j].bids.retain(|&(b, _)| b != i);
                if self.relays[j].holder == Some(i) {
                    self.relays[j].holder = None;
                    self.relays[j].offered = false;
                    self.log(Addr::Relay(j), "released", Some(j), None);
                }
            }
            Payload::Decline => {
                let r = &mut self.relays[j];
                if r.holder == Some(i) && r.offered {
                    r.holder = None;
                    r.offered = false;
                    self.log(Addr::Relay(j), "released", Some(j), None);
                }
            }
            Payload::SurveyReply { round, relay_benefit, current_benefit, current_price, busy } => {
                let r = &mut self.relays[j];
                let Some(s) = r.survey.as_mut() else { return };
                if s.round != round || !s.waiting.remove(&i) {
                    return;
                }
                s.replies.push(Reply {
                    client: i,
                    margin: relay_benefit - (current_benefit - current_price),
                    busy,
                });
                if s.waiting.is_empty() {
                    self.conclude_survey(j);
                }
            }
            _ => self.stats.protocol_errors += 1,
        }
    }

    fn resolve_bids(&mut self, j: usize) {
        let mut bids = std::mem::take(&mut self.relays[j].bids);
        bids.sort_by_key(|b| b.0);
        let me = Addr::Relay(j);
        let (winner, top) = bids
            .iter()
            .copied()
            .fold((usize::MAX, f64::NEG_INFINITY), |acc, (i, b)| if b > acc.1 { (i, b) } else { acc });
        let price = self.relays[j].price;
        if top - price >= self.cfg.epsilon * (1.0 - BID_SLACK) {
            let r = &mut self.relays[j];
            let evicted = r.holder.replace(winner).filter(|&h| h != winner);
            r.offered = false;
            r.price = top;
            r.survey = None;
            self.stats.accepted_bids += 1;
            self.log(me, "accept", Some(j), Some(top));
            self.send(me, Addr::Client(winner), Payload::Response { accepted: true, price: top });
            let mut told: BTreeSet<usize> = BTreeSet::from([winner]);
            for &(i, _) in &bids {
                if told.insert(i) {
                    self.send(me, Addr::Client(i), Payload::Response { accepted: false, price: top });
                }
            }
            if let Some(h) = evicted {
                told.insert(h);
                self.send(me, Addr::Client(h), Payload::Evicted { price: top });
            }
            if self.cfg.broadcast_prices {
                for i in self.relays[j].clients.clone() {
                    if told.insert(i) {
                        self.send(me, Addr::Client(i), Payload::PriceNotice { price: top });
                    }
                }
            }
        } else {
            self.log(me, "reject", Some(j), Some(top));
            for &(i, _) in &bids {
                self.send(me, Addr::Client(i), Payload::Response { accepted: false, price });
            }
        }
    }

    fn start_survey(&mut self, j: usize) {
        let me = Addr::Relay(j);
        let members = self.relays[j].clients.clone();
        if members.is_empty() {
            self.relays[j].price = 0.0;
            self.log(me, "reverse_price", Some(j), Some(0.0));
            return;
        }
        self.survey_round += 1;
        let round = self.survey_round;
        self.stats.surveys += 1;
        self.relays[j].survey = Some(SurveyState {
            round,
            waiting: members.iter().copied().collect(),
            replies: Vec::new(),
        });
        self.log(me, "survey", Some(j), None);
        for i in members {
            self.send(me, Addr::Client(i), Payload::Survey { round });
        }
    }

    fn conclude_survey(&mut self, j: usize) {
        let me = Addr::Relay(j);
        let eps = self.cfg.epsilon;
        let ceiling = self.ceiling();
        let s = self.relays[j].survey.take().expect("survey in progress");
        if self.relays[j].holder.is_some() || s.replies.iter().any(|r| r.busy) {
            // Stale or inconclusive; the relay surveys again on its next turn.
            return;
        }
        let mut best: Option<(usize, f64)> = None;
        let mut second = -ceiling;
        for r in s.replies.iter().filter(|r| r.margin >= eps * (1.0 - BID_SLACK)) {
            match best {
                Some((_, g)) if r.margin <= g => second = second.max(r.margin),
                Some((_, g)) => {
                    second = second.max(g);
                    best = Some((r.client, r.margin));
                }
                None => best = Some((r.client, r.margin)),
            }
        }
        let lambda = 0.0;
        let (price, chosen) = match best {
            Some((i, gamma)) if lambda < gamma - eps => {
                let delta = (gamma - lambda).min(gamma - second + eps);
                (gamma - delta, Some(i))
            }
            _ => (0.0, None),
        };
        self.relays[j].price = price;
        self.log(me, "reverse_price", Some(j), Some(price));
        if let Some(i) = chosen {
            self.relays[j].holder = Some(i);
            self.relays[j].offered = true;
            self.stats.offers += 1;
            self.send(me, Addr::Client(i), Payload::Offer { price });
        }
        for i in self.relays[j].clients.clone() {
            if Some(i) != chosen {
                self.send(me, Addr::Client(i), Payload::PriceNotice { price });
            }
        }
    }

    fn act(&mut self) {
        let ceiling = self.ceiling();
        let eps = self.cfg.epsilon;
        for i in 0..self.clients.len() {
            let c = &mut self.clients[i];
            // A bid won on stale values can leave a holder worse off than direct.
            if c.active && c.pending.is_none() && c.direct - c.profit() > eps * (1.0 + BID_SLACK) {
                if let Some(j) = c.current.take() {
                    self.log(Addr::Client(i), "fallback", Some(j), None);
                    self.send(Addr::Client(i), Addr::Relay(j), Payload::DepartNotice);
                }
            }
            let c = &self.clients[i];
            if !c.enabled(eps) {
                continue;
            }
            let (q, u, w) = c.best().expect("enabled client has a relay");
            let bid = (c.prices[&q] + u - w + eps).min(ceiling);
            self.clients[i].pending = Some(q);
            self.stats.bids += 1;
            self.send(Addr::Client(i), Addr::Relay(q), Payload::Bid { value: bid });
        }
        if self.cfg.reverse {
            for j in 0..self.relays.len() {
                let r = &self.relays[j];
                if r.wants_survey() {
                    self.start_survey(j);
                }
            }
        }
    }

    /// Processes every message due at `self.now`, then lets agents act.
    fn process_messages(&mut self, msgs: Vec<Message>) {
        let mut batched: BTreeSet<usize> = BTreeSet::new();
        for m in msgs {
            match (m.from, m.to) {
                (Addr::Client(i), Addr::Relay(j)) => {
                    if !self.relays[j].active {
                        continue;
                    }
                    if let Payload::Bid { value } = m.payload {
                        self.relays[j].bids.push((i, value));
                        batched.insert(j);
                    } else {
                        self.on_relay(j, i, m.payload);
                    }
                }
                (Addr::Relay(j), Addr::Client(i)) => {
                    if self.clients[i].active {
                        self.on_client(i, j, m.payload);
                    }
                }
                _ => self.stats.protocol_errors += 1,
            }
        }
        for j in batched {
            self.resolve_bids(j);
        }
    }

    fn pop_instant(&mut self) -> Option<(u64, Vec<Event>)> {
        let Reverse((t, _)) = *self.heap.peek()?;
        let mut out = Vec::new();
        while let Some(&Reverse((tt, seq))) = self.heap.peek() {
            if tt != t {
                break;
            }
            self.heap.pop();
            out.push(self.events.remove(&seq).expect("scheduled event"));
        }
        Some((t, out))
    }

    fn next_time(&self) -> Option<u64> {
        self.heap.peek().map(|Reverse((t, _))| *t)
    }

    fn check_staleness(&mut self) {
        if self.cfg.reverse {
            return;
        }
        for c in self.clients.iter().filter(|c| c.active) {
            for (&j, &p) in &c.prices {
                let truth = self.relays[j].price;
                if p > truth + BID_SLACK * (1.0 + truth.abs()) {
                    self.stats.staleness_violations += 1;
                }
            }
        }
    }

    fn snapshot(&self) -> Snapshot {
        let inst = &self.view.inst;
        let mut matching = Matching::empty(inst);
        let mut object_prices = vec![0.0; inst.num_objects()];
        for (l, &g) in self.view.relay_ids.iter().enumerate() {
            object_prices[l] = self.relays[g].price;
        }
        let mut consistent = true;
        let mut choice = Vec::with_capacity(inst.num_clients());
        for (l, &i) in self.view.client_ids.iter().enumerate() {
            let c = &self.clients[i];
            let q = match c.current {
                Some(j) if self.relays[j].holder == Some(i) => self.relay_local[j].expect("active relay"),
                Some(_) => {
                    consistent = false;
                    inst.virtual_object(l)
                }
                None => inst.virtual_object(l),
            };
            if c.pending.is_some() {
                consistent = false;
            }
            choice.push(q);
            matching.assign(l, q);
        }
        for (l, &g) in self.view.relay_ids.iter().enumerate() {
            if let Some(h) = self.relays[g].holder {
                if matching.object_client[l] != self.client_local[h] {
                    consistent = false;
                }
            }
        }
        let client_profits = choice
            .iter()
            .enumerate()
            .map(|(l, &q)| inst.benefit(l, q).unwrap() - object_prices[q])
            .collect();
        Snapshot {
            objective: inst.objective(&choice),
            choice,
            prices: PriceState { object_prices, client_profits, lambda: 0.0 },
            matching,
            consistent,
        }
    }
}

/// Result of a run on a fixed instance.
#[derive(Debug, Clone)]
pub struct StaticReport {
    pub snapshot: Snapshot,
    pub cs: CsReport,
    pub stats: SimStats,
    /// Accepted-bid bound that applies to this configuration.
    pub bound: u64,
    pub trace: Vec<SimTraceRow>,
}

/// Runs the distributed auction on a fixed instance until quiescence.
pub fn run_static(inst: &AsymmetricInstance, cfg: &SimConfig, seed: u64) -> Result<StaticReport> {
    cfg.validate()?;
    let view = View::identity(inst.clone());
    let mut e = Engine::new(inst.num_clients(), inst.num_relays(), cfg.clone(), seed, view.clone());
    let all: BTreeSet<usize> = (0..inst.num_relays()).collect();
    e.install(view, &all, 0.0);
    e.act();
    e.check_staleness();
    while let Some((t, batch)) = e.pop_instant() {
        e.now = t;
        e.stats.events += batch.len() as u64;
        if e.stats.events > cfg.max_events {
            return Err(Error::IterationCap(cfg.max_events as usize));
        }
        let msgs = batch
            .into_iter()
            .map(|ev| match ev {
                Event::Deliver(m) => m,
                _ => unreachable!("static runs schedule only messages"),
            })
            .collect::<Vec<_>>();
        e.in_flight -= msgs.len();
        e.process_messages(msgs);
        e.act();
        if cfg.check_invariants {
            e.check_staleness();
        }
    }
    e.stats.final_time_ms = e.now;
    let snapshot = e.snapshot();
    let cs = check_eps_cs(inst, &snapshot.matching, &snapshot.prices, cfg.epsilon);
    let bound = if cfg.broadcast_prices {
        inst.broadcast_iteration_bound(cfg.epsilon)
    } else {
        inst.iteration_bound(cfg.epsilon)
    };
    if e.stats.accepted_bids > bound {
        return Err(Error::BoundViolated { accepted: e.stats.accepted_bids, bound });
    }
    if cfg.trace {
        e.trace.push(SimTraceRow {
            time_ms: e.now,
            actor_kind: "sim".into(),
            actor_id: 0,
            event: "quiescent".into(),
            object: None,
            bid_or_price: None,
            objective_if_quiescent: Some(snapshot.objective * inst.unit_bps()),
        });
    }
    Ok(StaticReport {
        snapshot,
        cs,
        stats: e.stats,
        bound,
        trace: e.trace,
    })
}

/// Objective samples taken at every slot boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotSample {
    pub slot: u64,
    pub time_ms: u64,
    pub active_clients: usize,
    pub active_relays: usize,
    pub objective_bps: f64,
    pub oracle_bps: f64,
    pub rssi_bps: f64,
    pub quiescent: bool,
    pub bids: u64,
    pub offers: u64,
}

/// State recorded each time the network settles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuiescentPoint {
    pub time_ms: u64,
    pub instance_version: u64,
    pub last_event_ms: u64,
    pub active_clients: usize,
    pub objective_bps: f64,
    pub oracle_bps: f64,
    /// Oracle minus objective, in benefit units.
    pub gap: f64,
    /// `M * eps` for the active instance, in benefit units.
    pub m_eps: f64,
    pub within_m_eps: bool,
    pub eps_cs: bool,
    pub cs_violation: Option<String>,
    pub consistent: bool,
    pub bids_since_event: u64,
    pub accepted_bids_since_event: u64,
    pub offers_since_event: u64,
}

#[derive(Debug, Clone)]
pub struct DynamicReport {
    pub samples: Vec<SlotSample>,
    pub quiescent: Vec<QuiescentPoint>,
    pub stats: SimStats,
    pub trace: Vec<SimTraceRow>,
}

pub fn write_csv_rows<W: Write, T: Serialize>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Network that changes over time: the universe of nodes, which of them are
/// currently present, and the current blockage state.
pub struct World {
    pub topo: TopologyInstance,
    pub radio: RadioParams,
    pub unit_bps: f64,
    pub active_clients: Vec<bool>,
    pub active_relays: Vec<bool>,
}

impl World {
    pub fn view(&self) -> Result<View> {
        let (sub, client_ids, relay_ids) = self.topo.restrict(&self.active_clients, &self.active_relays);
        let benefits = build_benefits(&self.radio, &sub)?;
        let inst = build_asymmetric(&benefits, &sub, self.unit_bps)?;
        Ok(View { inst, client_ids, relay_ids })
    }

    fn check_node(&self, node: Node) -> Result<()> {
        if self.topo.contains(node) {
            Ok(())
        } else {
            Err(Error::Scenario(format!("event references unknown {} {}", node.kind(), node.index())))
        }
    }

    /// Nodes whose first event is a join start absent.
    pub fn initial_activity(topo: &TopologyInstance, events: &[TimedEvent]) -> (Vec<bool>, Vec<bool>) {
        let mut clients = vec![true; topo.num_clients()];
        let mut relays = vec![true; topo.num_relays()];
        let mut seen = BTreeSet::new();
        let mut sorted = events.to_vec();
        sorted.sort_by_key(|e| e.slot);
        for e in sorted {
            match e.event {
                EnvEvent::ClientJoin { client } if seen.insert(Node::Client(client)) => {
                    if client < clients.len() {
                        clients[client] = false;
                    }
                }
                EnvEvent::RelayJoin { relay } if seen.insert(Node::Relay(relay)) => {
                    if relay < relays.len() {
                        relays[relay] = false;
                    }
                }
                EnvEvent::ClientLeave { client } => {
                    seen.insert(Node::Client(client));
                }
                EnvEvent::RelayLeave { relay } => {
                    seen.insert(Node::Relay(relay));
                }
                _ => {}
            }
        }
        (clients, relays)
    }

    /// Validates events against the universe and replays join/leave order.
    pub fn validate_events(topo: &TopologyInstance, events: &[TimedEvent], horizon_slots: u64) -> Result<()> {
        let (mut c, mut r) = Self::initial_activity(topo, events);
        let mut sorted = events.to_vec();
        sorted.sort_by_key(|e| e.slot);
        let world = World {
            topo: topo.clone(),
            radio: RadioParams::default(),
            unit_bps: 1.0,
            active_clients: Vec::new(),
            active_relays: Vec::new(),
        };
        for e in sorted {
            if e.slot >= horizon_slots {
                return Err(Error::Scenario(format!("event at slot {} is beyond the horizon {horizon_slots}", e.slot)));
            }
            let toggle = |set: &mut Vec<bool>, idx: usize, to: bool, what: &str| -> Result<()> {
                if set[idx] == to {
                    return Err(Error::Scenario(format!(
                        "{what} {idx} {} twice at slot {}",
                        if to { "joins" } else { "leaves" },
                        e.slot
                    )));
                }
                set[idx] = to;
                Ok(())
            };
            match e.event {
                EnvEvent::ClientJoin { client } => {
                    world.check_node(Node::Client(client))?;
                    toggle(&mut c, client, true, "client")?;
                }
                EnvEvent::ClientLeave { client } => {
                    world.check_node(Node::Client(client))?;
                    toggle(&mut c, client, false, "client")?;
                }
                EnvEvent::RelayJoin { relay } => {
                    world.check_node(Node::Relay(relay))?;
                    toggle(&mut r, relay, true, "relay")?;
                }
                EnvEvent::RelayLeave { relay } => {
                    world.check_node(Node::Relay(relay))?;
                    toggle(&mut r, relay, false, "relay")?;
                }
                EnvEvent::Blockage { a, b, duration_slots } => {
                    world.check_node(a)?;
                    world.check_node(b)?;
                    if a == b || duration_slots == 0 {
                        return Err(Error::Scenario(format!("bad blockage at slot {}", e.slot)));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Runs the distributed auction over `horizon_slots` slots while applying
/// timed network changes.
pub fn run_dynamic(
    topo: &TopologyInstance,
    radio: &RadioParams,
    unit_bps: f64,
    cfg: &SimConfig,
    events: &[TimedEvent],
    horizon_slots: u64,
    seed: u64,
) -> Result<DynamicReport> {
    cfg.validate()?;
    World::validate_events(topo, events, horizon_slots)?;
    let (active_clients, active_relays) = World::initial_activity(topo, events);
    let mut world = World {
        topo: topo.clone(),
        radio: radio.clone(),
        unit_bps,
        active_clients,
        active_relays,
    };
    let view = world.view()?;
    let mut e = Engine::new(topo.num_clients(), topo.num_relays(), cfg.clone(), seed, view.clone());
    let initial: BTreeSet<usize> = view.relay_ids.iter().copied().collect();
    e.install(view, &initial, 0.0);

    let mut sorted = events.to_vec();
    sorted.sort_by_key(|ev| ev.slot);
    for ev in &sorted {
        e.schedule(ev.slot * cfg.slot_ms, Event::Env(ev.event));
    }

    let horizon_ms = horizon_slots * cfg.slot_ms;
    let mut version = 0u64;
    let mut oracle_cache: Option<(u64, f64)> = None;
    let mut samples = Vec::new();
    let mut quiescent = Vec::new();
    let mut was_quiescent = false;
    let mut last_event_ms = 0u64;
    let mut at_event = (0u64, 0u64, 0u64);
    let mut next_slot = 0u64;

    e.act();
    loop {
        // Samples and quiescence bookkeeping for the state after `e.now`.
        let is_quiet = e.in_flight == 0;
        if is_quiet && !was_quiescent {
            let snap = e.snapshot();
            let inst = &e.view.inst;
            let oracle = cached_oracle(&mut oracle_cache, version, inst);
            let cs = check_eps_cs(inst, &snap.matching, &snap.prices, cfg.epsilon);
            let m_eps = inst.num_clients() as f64 * cfg.epsilon;
            let gap = oracle - snap.objective;
            quiescent.push(QuiescentPoint {
                time_ms: e.now,
                instance_version: version,
                last_event_ms,
                active_clients: inst.num_clients(),
                objective_bps: snap.objective * unit_bps,
                oracle_bps: oracle * unit_bps,
                gap,
                m_eps,
                within_m_eps: gap <= m_eps + 1e-9 * (1.0 + oracle.abs()),
                eps_cs: cs.is_ok(),
                cs_violation: cs.violation.map(|v| format!("{v:?}")),
                consistent: snap.consistent,
                bids_since_event: e.stats.bids - at_event.0,
                accepted_bids_since_event: e.stats.accepted_bids - at_event.1,
                offers_since_event: e.stats.offers - at_event.2,
            });
            if cfg.trace {
                e.trace.push(SimTraceRow {
                    time_ms: e.now,
                    actor_kind: "sim".into(),
                    actor_id: 0,
                    event: "quiescent".into(),
                    object: None,
                    bid_or_price: None,
                    objective_if_quiescent: Some(snap.objective * unit_bps),
                });
            }
        }
        was_quiescent = is_quiet;

        // Slot boundaries before the next event see the current state.
        let next = e.next_time().unwrap_or(u64::MAX).min(horizon_ms);
        while next_slot * cfg.slot_ms < next {
            let snap = e.snapshot();
            let inst = &e.view.inst;
            let oracle = cached_oracle(&mut oracle_cache, version, inst);
            let rssi: f64 = (0..inst.num_clients()).map(|l| inst.direct_benefit(l)).sum();
            samples.push(SlotSample {
                slot: next_slot,
                time_ms: next_slot * cfg.slot_ms,
                active_clients: inst.num_clients(),
                active_relays: inst.num_relays(),
                objective_bps: snap.objective * unit_bps,
                oracle_bps: oracle * unit_bps,
                rssi_bps: rssi * unit_bps,
                quiescent: is_quiet,
                bids: e.stats.bids,
                offers: e.stats.offers,
            });
            next_slot += 1;
        }

        let Some(t) = e.next_time() else { break };
        if t >= horizon_ms {
            break;
        }
        let (t, batch) = e.pop_instant().expect("peeked");
        e.now = t;
        e.stats.events += batch.len() as u64;
        if e.stats.events > cfg.max_events {
            return Err(Error::IterationCap(cfg.max_events as usize));
        }
        let mut msgs = Vec::new();
        let mut changed = false;
        let mut joined = BTreeSet::new();
        for ev in batch {
            match ev {
                Event::Deliver(m) => {
                    e.in_flight -= 1;
                    msgs.push(m);
                }
                Event::Env(env) => {
                    changed = true;
                    apply_env(&mut e, &mut world, env, &mut joined);
                }
                Event::Unblock(a, b) => {
                    changed = true;
                    world.topo.unblock(a, b);
                    e.log_env(a, "unblock", b);
                }
            }
        }
        if changed {
            let view = world.view()?;
            let fresh_price = if cfg.reverse { view.inst.ceiling() } else { 0.0 };
            e.install(view, &joined, fresh_price);
            version += 1;
            last_event_ms = t;
            at_event = (e.stats.bids, e.stats.accepted_bids, e.stats.offers);
            was_quiescent = false;
        }
        e.process_messages(msgs);
        e.act();
        if cfg.check_invariants {
            e.check_staleness();
        }
    }
    e.stats.final_time_ms = e.now;
    Ok(DynamicReport {
        samples,
        quiescent,
        stats: e.stats,
        trace: e.trace,
    })
}

fn cached_oracle(cache: &mut Option<(u64, f64)>, version: u64, inst: &AsymmetricInstance) -> f64 {
    match *cache {
        Some((v, o)) if v == version => o,
        _ => {
            let o = solve_exact_mcf(inst).objective;
            *cache = Some((version, o));
            o
        }
    }
}

fn apply_env(e: &mut Engine, world: &mut World, env: EnvEvent, joined: &mut BTreeSet<usize>) {
    match env {
        EnvEvent::ClientJoin { client } => {
            world.active_clients[client] = true;
            e.clients[client] = ClientAgent::default();
            e.log(Addr::Client(client), "join", None, None);
        }
        EnvEvent::ClientLeave { client } => {
            world.active_clients[client] = false;
            let c = std::mem::take(&mut e.clients[client]);
            e.log(Addr::Client(client), "leave", None, None);
            for j in c.current.into_iter().chain(c.pending) {
                if e.relays[j].active {
                    e.send(Addr::Client(client), Addr::Relay(j), Payload::DepartNotice);
                }
            }
        }
        EnvEvent::RelayJoin { relay } => {
            world.active_relays[relay] = true;
            joined.insert(relay);
            e.log(Addr::Relay(relay), "join", Some(relay), None);
        }
        EnvEvent::RelayLeave { relay } => {
            world.active_relays[relay] = false;
            joined.remove(&relay);
            e.relays[relay] = RelayAgent::default();
            e.log(Addr::Relay(relay), "leave", Some(relay), None);
            for c in e.clients.iter_mut() {
                if c.current == Some(relay) {
                    c.current = None;
                }
                if c.pending == Some(relay) {
                    c.pending = None;
                }
            }
        }
        EnvEvent::Blockage { a, b, duration_slots } => {
            world.topo.block(a, b);
            e.log_env(a, "block", b);
            let until = e.now + duration_slots * e.cfg.slot_ms;
            e.schedule(until, Event::Unblock(a, b));
        }
    }
}

impl Engine {
    fn log_env(&mut self, a: Node, event: &str, b: Node) {
        if !self.cfg.trace {
            return;
        }
        self.trace.push(SimTraceRow {
            time_ms: self.now,
            actor_kind: a.kind().into(),
            actor_id: a.index(),
            event: format!("{event}:{}:{}", b.kind(), b.index()),
            object: None,
            bid_or_price: None,
            objective_if_quiescent: None,
        });
    }
}
