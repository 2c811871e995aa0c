//! Centralized forward/reverse auction and the ε-complementary-slackness
//! checker shared with the distributed simulator.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::AsymmetricInstance;

/// Relative slack allowed when comparing float sums in the ε-CS checks.
const TOL: f64 = 1e-9;

fn tol(scale: f64) -> f64 {
    TOL * (1.0 + scale.abs())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuctionConfig {
    pub epsilon: f64,
    pub max_iterations: usize,
    pub trace: bool,
}

impl AuctionConfig {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(AuctionConfig {
            epsilon,
            max_iterations: 10_000_000,
            trace: false,
        })
    }

    pub fn with_trace(mut self, trace: bool) -> Self {
        self.trace = trace;
        self
    }

    pub fn with_max_iterations(mut self, cap: usize) -> Self {
        self.max_iterations = cap;
        self
    }
}

/// Dual variables: object prices, client profits and the supersource price.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceState {
    pub object_prices: Vec<f64>,
    pub client_profits: Vec<f64>,
    pub lambda: f64,
}

impl PriceState {
    /// Zero prices with every profit at the client's best benefit.
    pub fn zero(inst: &AsymmetricInstance) -> Self {
        PriceState {
            object_prices: vec![0.0; inst.num_objects()],
            client_profits: (0..inst.num_clients())
                .map(|i| inst.options(i).iter().map(|a| a.benefit).fold(f64::MIN, f64::max))
                .collect(),
            lambda: 0.0,
        }
    }

    /// Sets every profit to `max_q beta(i, q) - p_q`.
    pub fn refresh_profits(&mut self, inst: &AsymmetricInstance) {
        for i in 0..inst.num_clients() {
            self.client_profits[i] = best_two(inst, &self.object_prices, i, f64::MIN).1;
        }
    }
}

/// Client-to-object matching, possibly partial.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matching {
    pub client_object: Vec<Option<usize>>,
    pub object_client: Vec<Option<usize>>,
}

impl Matching {
    pub fn empty(inst: &AsymmetricInstance) -> Self {
        Matching {
            client_object: vec![None; inst.num_clients()],
            object_client: vec![None; inst.num_objects()],
        }
    }

    /// Matching holding a full choice (one object per client).
    pub fn from_choice(inst: &AsymmetricInstance, choice: &[usize]) -> Self {
        let mut m = Matching::empty(inst);
        for (i, &q) in choice.iter().enumerate() {
            m.assign(i, q);
        }
        m
    }

    pub fn assign(&mut self, client: usize, object: usize) -> Option<usize> {
        if let Some(old) = self.client_object[client].take() {
            self.object_client[old] = None;
        }
        let evicted = self.object_client[object].replace(client);
        if let Some(e) = evicted {
            self.client_object[e] = None;
        }
        self.client_object[client] = Some(object);
        evicted
    }

    pub fn is_complete(&self) -> bool {
        self.client_object.iter().all(Option::is_some)
    }

    /// Object of every client; `None` if some client is unassigned.
    pub fn choice(&self) -> Option<Vec<usize>> {
        self.client_object.iter().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CsViolation {
    /// `pi_i + p_q < beta(i, q) - eps`
    Profit { client: usize, object: usize, slack: f64 },
    /// `pi_i + p_q != beta(i, q)` on an assigned pair.
    Assigned { client: usize, object: usize, slack: f64 },
    /// Unassigned object priced above the cheapest assigned one.
    UnassignedPrice { object: usize, price: f64, min_assigned: f64 },
}

impl CsViolation {
    /// Which of the three conditions failed: `a`, `b` or `c`.
    pub fn condition(&self) -> char {
        match self {
            CsViolation::Profit { .. } => 'a',
            CsViolation::Assigned { .. } => 'b',
            CsViolation::UnassignedPrice { .. } => 'c',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsReport {
    pub violation: Option<CsViolation>,
}

impl CsReport {
    pub fn is_ok(&self) -> bool {
        self.violation.is_none()
    }
}

pub fn check_eps_cs(
    inst: &AsymmetricInstance,
    s: &Matching,
    ps: &PriceState,
    epsilon: f64,
) -> CsReport {
    let p = &ps.object_prices;
    let pi = &ps.client_profits;
    for (i, arc) in inst.arcs() {
        let lhs = pi[i] + p[arc.object];
        let slack = lhs - (arc.benefit - epsilon);
        if slack < -tol(arc.benefit) {
            return CsReport {
                violation: Some(CsViolation::Profit { client: i, object: arc.object, slack }),
            };
        }
    }
    for (i, q) in s.client_object.iter().enumerate() {
        if let Some(q) = *q {
            let b = inst.benefit(i, q).unwrap_or(f64::NAN);
            let slack = pi[i] + p[q] - b;
            if !(slack.abs() <= tol(b)) {
                return CsReport {
                    violation: Some(CsViolation::Assigned { client: i, object: q, slack }),
                };
            }
        }
    }
    let min_assigned = s
        .client_object
        .iter()
        .flatten()
        .map(|&q| p[q])
        .fold(f64::INFINITY, f64::min);
    for (q, holder) in s.object_client.iter().enumerate() {
        if holder.is_none() && p[q] > min_assigned + tol(min_assigned) {
            return CsReport {
                violation: Some(CsViolation::UnassignedPrice {
                    object: q,
                    price: p[q],
                    min_assigned,
                }),
            };
        }
    }
    CsReport { violation: None }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuctionStats {
    /// Forward bids placed (each one is accepted in the centralized auction).
    pub bids: u64,
    /// Objects whose price was cut in the reverse phase.
    pub reverse_steps: u64,
    pub evictions: u64,
    pub price_updates: u64,
    /// Forward bids plus reverse steps.
    pub iterations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: u64,
    pub actor: String,
    pub action: String,
    pub object: usize,
    pub old_price: f64,
    pub new_price: f64,
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuctionRun {
    pub matching: Matching,
    pub prices: PriceState,
    pub stats: AuctionStats,
    pub trace: Vec<TraceRow>,
}

impl AuctionRun {
    /// Object per client. Panics if the matching is partial.
    pub fn choice(&self) -> Vec<usize> {
        self.matching.choice().expect("auction leaves every client assigned")
    }
}

/// Best object, its value `beta - p`, and the second-best value (or
/// `sentinel` when the client has a single option).
fn best_two(inst: &AsymmetricInstance, p: &[f64], client: usize, sentinel: f64) -> (usize, f64, f64) {
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    let mut second = sentinel;
    for arc in inst.options(client) {
        let v = arc.benefit - p[arc.object];
        if v > best.1 {
            if best.0 != usize::MAX {
                second = second.max(best.1);
            }
            best = (arc.object, v);
        } else {
            second = second.max(v);
        }
    }
    (best.0, best.1, second)
}

struct Solver<'a> {
    inst: &'a AsymmetricInstance,
    cfg: &'a AuctionConfig,
    run: AuctionRun,
}

impl Solver<'_> {
    fn record(&mut self, actor: String, action: &str, object: usize, old: f64, new: f64) {
        if self.cfg.trace {
            self.run.trace.push(TraceRow {
                iteration: self.run.stats.iterations,
                actor,
                action: action.into(),
                object,
                old_price: old,
                new_price: new,
            });
        }
    }

    fn tick(&mut self) -> Result<()> {
        self.run.stats.iterations += 1;
        if self.run.stats.iterations > self.cfg.max_iterations as u64 {
            return Err(Error::IterationCap(self.cfg.max_iterations));
        }
        Ok(())
    }

    fn forward(&mut self) -> Result<()> {
        let inst = self.inst;
        let eps = self.cfg.epsilon;
        let ceiling = inst.ceiling();
        let mut queue: VecDeque<usize> = (0..inst.num_clients())
            .filter(|&i| self.run.matching.client_object[i].is_none())
            .collect();
        while let Some(i) = queue.pop_front() {
            if self.run.matching.client_object[i].is_some() {
                continue;
            }
            self.tick()?;
            let p = &self.run.prices.object_prices;
            let (q, u, w) = best_two(inst, p, i, -ceiling);
            let old = p[q];
            let bid = (old + u - w + eps).min(ceiling);
            self.run.prices.object_prices[q] = bid;
            self.run.prices.client_profits[i] = inst.benefit(i, q).unwrap() - bid;
            self.run.stats.bids += 1;
            self.run.stats.price_updates += 1;
            self.record(format!("client:{i}"), "bid", q, old, bid);
            if let Some(e) = self.run.matching.assign(i, q) {
                self.run.stats.evictions += 1;
                let p = &self.run.prices.object_prices;
                self.run.prices.client_profits[e] = best_two(inst, p, e, f64::MIN).1;
                queue.push_back(e);
            }
        }
        Ok(())
    }

    fn reverse(&mut self) -> Result<()> {
        let inst = self.inst;
        let eps = self.cfg.epsilon;
        let ceiling = inst.ceiling();
        let lambda = self
            .run
            .matching
            .client_object
            .iter()
            .flatten()
            .map(|&q| self.run.prices.object_prices[q])
            .fold(f64::INFINITY, f64::min);
        if !lambda.is_finite() {
            return Ok(());
        }
        self.run.prices.lambda = lambda;
        let above = |run: &AuctionRun, q: usize| {
            run.matching.object_client[q].is_none() && run.prices.object_prices[q] > lambda
        };
        let mut queue: VecDeque<usize> = (0..inst.num_objects()).filter(|&q| above(&self.run, q)).collect();
        while let Some(q) = queue.pop_front() {
            if !above(&self.run, q) {
                continue;
            }
            self.tick()?;
            let old = self.run.prices.object_prices[q];
            let pi = &self.run.prices.client_profits;
            let mut best = (usize::MAX, f64::NEG_INFINITY);
            let mut second = -ceiling;
            for &i in inst.clients_of(q) {
                let margin = inst.benefit(i, q).unwrap() - pi[i];
                if margin > best.1 {
                    if best.0 != usize::MAX {
                        second = second.max(best.1);
                    }
                    best = (i, margin);
                } else {
                    second = second.max(margin);
                }
            }
            self.run.stats.reverse_steps += 1;
            self.run.stats.price_updates += 1;
            let (i, gamma) = best;
            if i == usize::MAX || lambda >= gamma - eps {
                self.run.prices.object_prices[q] = lambda;
                self.record(format!("object:{q}"), "lower", q, old, lambda);
                continue;
            }
            let delta = (gamma - lambda).min(gamma - second + eps);
            let price = gamma - delta;
            self.run.prices.object_prices[q] = price;
            self.run.prices.client_profits[i] += delta;
            self.record(format!("object:{q}"), "attract", q, old, price);
            let prev = self.run.matching.client_object[i];
            self.run.matching.assign(i, q);
            if let Some(prev) = prev {
                if above(&self.run, prev) {
                    queue.push_back(prev);
                }
            }
        }
        Ok(())
    }
}

fn run_phase(
    inst: &AsymmetricInstance,
    ps: PriceState,
    s: Matching,
    cfg: &AuctionConfig,
    forward: bool,
    reverse: bool,
) -> Result<AuctionRun> {
    if ps.object_prices.len() != inst.num_objects()
        || ps.client_profits.len() != inst.num_clients()
        || s.client_object.len() != inst.num_clients()
        || s.object_client.len() != inst.num_objects()
    {
        return Err(Error::Instance("price or matching size does not match the instance".into()));
    }
    let mut solver = Solver {
        inst,
        cfg,
        run: AuctionRun {
            matching: s,
            prices: ps,
            stats: AuctionStats::default(),
            trace: Vec::new(),
        },
    };
    if forward {
        solver.forward()?;
    }
    if reverse {
        if !solver.run.matching.is_complete() {
            return Err(Error::Instance("reverse auction needs every client assigned".into()));
        }
        solver.reverse()?;
    }
    Ok(solver.run)
}

/// Forward auction: unassigned clients bid in FIFO order until all are assigned.
pub fn solve_forward(
    inst: &AsymmetricInstance,
    ps: PriceState,
    s: Matching,
    cfg: &AuctionConfig,
) -> Result<AuctionRun> {
    run_phase(inst, ps, s, cfg, true, false)
}

/// Reverse auction: unassigned objects priced above the minimum assigned
/// price cut their price until each is at or below it.
pub fn solve_reverse(
    inst: &AsymmetricInstance,
    ps: PriceState,
    s: Matching,
    cfg: &AuctionConfig,
) -> Result<AuctionRun> {
    run_phase(inst, ps, s, cfg, false, true)
}

/// Forward then reverse auction from zero prices.
pub fn solve_centralized(inst: &AsymmetricInstance, cfg: &AuctionConfig) -> Result<AuctionRun> {
    solve_from(inst, PriceState::zero(inst), cfg)
}

/// Forward then reverse auction from arbitrary starting prices.
pub fn solve_from(inst: &AsymmetricInstance, mut ps: PriceState, cfg: &AuctionConfig) -> Result<AuctionRun> {
    ps.refresh_profits(inst);
    run_phase(inst, ps, Matching::empty(inst), cfg, true, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::ClientOptions;

    fn inst(n: usize, rows: &[(f64, &[(usize, f64)])]) -> AsymmetricInstance {
        AsymmetricInstance::from_rows(
            n,
            rows.iter()
                .map(|(d, r)| ClientOptions {
                    direct: *d,
                    relays: r.to_vec(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn cfg(eps: f64) -> AuctionConfig {
        AuctionConfig::new(eps).unwrap().with_trace(true)
    }

    #[test]
    fn rejects_nonpositive_epsilon() {
        assert!(AuctionConfig::new(0.0).is_err());
        assert!(AuctionConfig::new(-1.0).is_err());
        assert!(AuctionConfig::new(f64::NAN).is_err());
    }

    #[test]
    fn empty_matching_at_zero_prices_is_cs() {
        let x = inst(2, &[(1.0, &[(0, 3.0), (1, 2.0)]), (2.0, &[(1, 4.0)])]);
        let r = check_eps_cs(&x, &Matching::empty(&x), &PriceState::zero(&x), 0.1);
        assert!(r.is_ok());
    }

    #[test]
    fn assigned_pair_off_by_half_eps_is_flagged() {
        let x = inst(1, &[(1.0, &[(0, 3.0)])]);
        let mut s = Matching::empty(&x);
        s.assign(0, 0);
        let ps = PriceState {
            object_prices: vec![1.0, 0.0],
            client_profits: vec![2.0 - 0.05],
            lambda: 0.0,
        };
        let r = check_eps_cs(&x, &s, &ps, 0.1);
        assert_eq!(r.violation.unwrap().condition(), 'b');
    }

    #[test]
    fn profit_and_unassigned_price_violations() {
        let x = inst(1, &[(1.0, &[(0, 3.0)])]);
        let mut s = Matching::empty(&x);
        s.assign(0, 1);
        let low = PriceState {
            object_prices: vec![0.0, 0.0],
            client_profits: vec![1.0],
            lambda: 0.0,
        };
        assert_eq!(check_eps_cs(&x, &s, &low, 0.1).violation.unwrap().condition(), 'a');
        let high = PriceState {
            object_prices: vec![5.0, 0.5],
            client_profits: vec![0.5],
            lambda: 0.0,
        };
        assert_eq!(check_eps_cs(&x, &s, &high, 0.1).violation.unwrap().condition(), 'c');
    }

    #[test]
    fn single_option_client_bids_the_ceiling() {
        let x = inst(0, &[(2.0, &[])]);
        let run = solve_centralized(&x, &cfg(0.1)).unwrap();
        assert_eq!(run.choice(), vec![0]);
        assert_eq!(run.stats.bids, 1);
        assert_eq!(run.prices.object_prices[0], x.ceiling());
        assert_eq!(x.ceiling(), 20.0);
        assert!(check_eps_cs(&x, &run.matching, &run.prices, 0.1).is_ok());
    }

    #[test]
    fn contested_relay_hand_trace() {
        // Both clients want relay 0; client 1 gains more from it.
        let x = inst(1, &[(1.0, &[(0, 3.0)]), (1.0, &[(0, 4.0)])]);
        let run = solve_centralized(&x, &cfg(0.25)).unwrap();
        let steps: Vec<(&str, usize, f64, f64)> = run
            .trace
            .iter()
            .map(|r| (r.actor.as_str(), r.object, r.old_price, r.new_price))
            .collect();
        assert_eq!(
            steps,
            vec![
                ("client:0", 0, 0.0, 2.25),
                ("client:1", 0, 2.25, 3.25),
                ("client:0", 1, 0.0, 1.5),
            ]
        );
        assert_eq!(run.choice(), vec![1, 0]);
        assert_eq!(run.prices.client_profits, vec![-0.5, 0.75]);
        assert_eq!(run.stats.evictions, 1);
        assert_eq!(run.stats.reverse_steps, 0);
        assert!(check_eps_cs(&x, &run.matching, &run.prices, 0.25).is_ok());
    }

    #[test]
    fn distinct_favourites_take_one_bid_each() {
        let x = inst(3, &[(1.0, &[(0, 5.0)]), (1.0, &[(1, 6.0)]), (2.0, &[(2, 3.0)])]);
        let run = solve_centralized(&x, &cfg(0.1)).unwrap();
        assert_eq!(run.stats.bids, 3);
        assert_eq!(x.objective(&run.choice()), 14.0);
    }

    #[test]
    fn reverse_is_noop_without_overpriced_objects() {
        let x = inst(1, &[(1.0, &[(0, 3.0)]), (1.0, &[(0, 4.0)])]);
        let fwd = solve_forward(&x, PriceState::zero(&x), Matching::empty(&x), &cfg(0.25)).unwrap();
        let rev = solve_reverse(&x, fwd.prices.clone(), fwd.matching.clone(), &cfg(0.25)).unwrap();
        assert_eq!(rev.stats.iterations, 0);
        assert_eq!(rev.matching, fwd.matching);
        assert_eq!(rev.prices.object_prices, fwd.prices.object_prices);
    }

    #[test]
    fn reverse_drops_unattractive_object_to_lambda() {
        let x = inst(1, &[(2.0, &[(0, 2.1)])]);
        let mut s = Matching::empty(&x);
        s.assign(0, 1);
        let ps = PriceState {
            object_prices: vec![5.0, 1.0],
            client_profits: vec![1.0],
            lambda: 0.0,
        };
        let run = solve_reverse(&x, ps, s, &cfg(0.25)).unwrap();
        assert_eq!(run.prices.object_prices, vec![1.0, 1.0]);
        assert_eq!(run.prices.lambda, 1.0);
        assert_eq!(run.choice(), vec![1]);
        assert_eq!(run.trace[0].action, "lower");
        assert!(check_eps_cs(&x, &run.matching, &run.prices, 0.25).is_ok());
    }

    #[test]
    fn reverse_pulls_client_to_overpriced_relay() {
        // A stale high relay price pushes the forward phase onto the virtual object.
        let x = inst(1, &[(1.0, &[(0, 3.0)])]);
        let ps = PriceState {
            object_prices: vec![10.0, 0.0],
            client_profits: vec![0.0],
            lambda: 0.0,
        };
        let run = solve_from(&x, ps, &cfg(0.25)).unwrap();
        let steps: Vec<(&str, usize, f64, f64)> = run
            .trace
            .iter()
            .map(|r| (r.action.as_str(), r.object, r.old_price, r.new_price))
            .collect();
        assert_eq!(steps, vec![("bid", 1, 0.0, 8.25), ("attract", 0, 10.0, 8.25)]);
        assert_eq!(run.choice(), vec![0]);
        assert_eq!(run.prices.client_profits, vec![-5.25]);
        assert!(check_eps_cs(&x, &run.matching, &run.prices, 0.25).is_ok());
    }

    #[test]
    fn iteration_cap_is_reported() {
        let x = inst(1, &[(1.0, &[(0, 3.0)]), (1.0, &[(0, 4.0)])]);
        let c = AuctionConfig::new(1e-3).unwrap().with_max_iterations(1);
        assert!(matches!(solve_centralized(&x, &c), Err(Error::IterationCap(1))));
    }

    #[test]
    fn trace_csv_header() {
        let x = inst(0, &[(2.0, &[])]);
        let run = solve_centralized(&x, &cfg(0.1)).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&run.trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "iteration,actor,action,object,old_price,new_price\n1,client:0,bid,0,0.0,20.0\n"
        );
    }
}
