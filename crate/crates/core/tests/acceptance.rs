//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

use std::fs;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relay_assoc::auction::{check_eps_cs, Matching};
use relay_assoc::harness::{
    generate_topology, join_scenario, random_scenario, run_experiments, write_experiment, ExperimentSpec, GeneratorSpec,
    Policy, Scenario,
};
use relay_assoc::oracle::{solve_exact_mcf, solve_exhaustive};
use relay_assoc::problem::{build_asymmetric, check_load_balance, recover_assignment, AsymmetricInstance, GBPS};
use relay_assoc::radio::{build_benefits, RadioParams};
use relay_assoc::sim::{run_static, write_csv_rows, write_sim_trace_csv, DynamicReport, SimConfig, StaticReport};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn tol(x: f64) -> f64 {
    1e-9 * (1.0 + x.abs())
}

/// Seeded instance with at most `max_m` clients, `max_n` relays and `max_k` APs.
fn sized_instance(seed: u64, max_m: usize, max_n: usize, max_k: usize) -> AsymmetricInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let aps = rng.gen_range(1..=max_k);
    let per_ap = rng.gen_range(1..=(max_m / aps).max(1));
    let relays = rng.gen_range(0..=max_n.min(aps * per_ap));
    let spec = GeneratorSpec { num_aps: aps, clients_per_ap: per_ap, num_relays: relays, ..Default::default() };
    let radio = RadioParams::default();
    let (topo, _) = generate_topology(&spec, &radio, seed).unwrap();
    let benefits = build_benefits(&radio, &topo).unwrap();
    build_asymmetric(&benefits, &topo, GBPS).unwrap()
}

fn static_run(inst: &AsymmetricInstance, eps: f64, broadcast: bool, trace: bool, seed: u64) -> StaticReport {
    let mut cfg = SimConfig::new(eps).unwrap();
    cfg.broadcast_prices = broadcast;
    cfg.trace = trace;
    run_static(inst, &cfg, seed).unwrap()
}

fn integer_instance(seed: u64) -> (AsymmetricInstance, f64) {
    let inst = sized_instance(seed, 20, 10, 5).with_integer_benefits(1);
    let eps = 1.0 / (inst.num_clients() as f64 + 1.0);
    (inst, eps)
}

fn float_instance(seed: u64) -> AsymmetricInstance {
    sized_instance(seed, 20, 10, 5)
}

const STATIC_SEEDS: u64 = 200;
const FLOAT_SEED_BASE: u64 = 10_000;

fn criterion_1() -> Outcome {
    let mut bad = Vec::new();
    for seed in 0..STATIC_SEEDS {
        let (inst, eps) = integer_instance(seed);
        let r = static_run(&inst, eps, false, false, seed);
        let oracle = solve_exact_mcf(&inst).objective;
        if r.snapshot.objective != oracle {
            bad.push(seed);
        }
    }
    outcome(bad.is_empty(), format!("{} integer instances, exact mismatches {:?}", STATIC_SEEDS, bad))
}

fn dynamic_reports() -> Vec<(String, DynamicReport)> {
    let mut out = Vec::new();
    for seed in 0..40u64 {
        let g = GeneratorSpec { num_aps: 3, clients_per_ap: 4, num_relays: 6, ..Default::default() };
        let s = random_scenario(g, 10, 120, seed).unwrap();
        out.push((format!("random/{seed}"), s.run(false).unwrap()));
    }
    for seed in 0..5u64 {
        out.push((format!("join/{seed}"), join_scenario(seed).run(false).unwrap()));
    }
    out
}

fn criterion_2() -> Outcome {
    let mut bad = Vec::new();
    for seed in 0..STATIC_SEEDS {
        let inst = float_instance(FLOAT_SEED_BASE + seed);
        let r = static_run(&inst, 0.1, false, false, seed);
        let oracle = solve_exact_mcf(&inst).objective;
        let floor = oracle - inst.num_clients() as f64 * 0.1 - tol(oracle);
        if r.snapshot.objective < floor {
            bad.push(format!("static/{seed}"));
        }
    }
    let mut points = 0;
    for (name, report) in dynamic_reports() {
        if report.quiescent.is_empty() {
            bad.push(format!("{name}: never quiescent"));
        }
        for q in &report.quiescent {
            points += 1;
            if !q.within_m_eps {
                bad.push(format!("{name}@{}ms", q.time_ms));
            }
        }
    }
    outcome(
        bad.is_empty(),
        format!("{} static runs at eps=0.1, {} dynamic quiescent points, violations {:?}", STATIC_SEEDS, points, bad),
    )
}

fn criterion_3() -> Outcome {
    let mut bad = Vec::new();
    let mut runs = 0;
    let mut worst: f64 = 0.0;
    for broadcast in [false, true] {
        for seed in 0..STATIC_SEEDS {
            let (inst, eps) = integer_instance(seed);
            let float = float_instance(FLOAT_SEED_BASE + seed);
            for (tag, inst, eps) in [("int", &inst, eps), ("float", &float, 0.1)] {
                let r = static_run(inst, eps, broadcast, false, seed);
                runs += 1;
                if r.bound > 0 {
                    worst = worst.max(r.stats.accepted_bids as f64 / r.bound as f64);
                }
                if r.stats.accepted_bids > r.bound {
                    bad.push(format!("{tag}/{seed}/broadcast={broadcast}"));
                }
            }
        }
    }
    outcome(bad.is_empty(), format!("{runs} runs, max accepted/bound {:.4}, violations {:?}", worst, bad))
}

fn criterion_4() -> Outcome {
    let mut bad = Vec::new();
    for seed in 0..100u64 {
        let inst = sized_instance(20_000 + seed, 8, 4, 4);
        let exact = solve_exact_mcf(&inst);
        let (_, best) = solve_exhaustive(&inst).unwrap();
        if exact.objective.to_bits() != best.to_bits() {
            bad.push(seed);
        }
    }
    outcome(bad.is_empty(), format!("100 instances, bitwise mismatches {:?}", bad))
}

fn criterion_5() -> Outcome {
    let mut bad = Vec::new();
    for seed in 0..100u64 {
        let inst = float_instance(FLOAT_SEED_BASE + seed);
        for broadcast in [false, true] {
            let r = static_run(&inst, 0.1, broadcast, false, seed);
            let recheck = check_eps_cs(
                &inst,
                &Matching::from_choice(&inst, &r.snapshot.choice),
                &r.snapshot.prices,
                0.1,
            );
            if !r.cs.is_ok() || !recheck.is_ok() || !r.snapshot.consistent {
                bad.push(format!("{seed}/broadcast={broadcast}"));
            }
        }
    }
    outcome(bad.is_empty(), format!("200 terminated runs, violations {:?}", bad))
}

fn criterion_6() -> Outcome {
    let spec = GeneratorSpec { num_aps: 4, clients_per_ap: 5, num_relays: 10, ..Default::default() };
    let radio = RadioParams::default();
    let mut samples = Vec::new();
    for seed in 0..1000u64 {
        let (topo, _) = generate_topology(&spec, &radio, 30_000 + seed).unwrap();
        let benefits = build_benefits(&radio, &topo).unwrap();
        let inst = build_asymmetric(&benefits, &topo, GBPS).unwrap();
        let r = static_run(&inst, 0.1, false, false, seed);
        samples.push(recover_assignment(&inst, &r.snapshot.choice).unwrap());
    }
    let lb = check_load_balance(&samples, 4).unwrap();
    let target = 20.0 / 4.0;
    let pass = lb.mean.iter().zip(&lb.stderr).all(|(m, s)| (m - target).abs() <= 3.0 * s);
    let cells: Vec<String> = lb.mean.iter().zip(&lb.stderr).map(|(m, s)| format!("{m:.3}±{s:.3}")).collect();
    outcome(pass, format!("per-AP mean±stderr [{}] vs {target}", cells.join(", ")))
}

fn sweep_spec(repetitions: usize) -> ExperimentSpec {
    ExperimentSpec { epsilons: vec![0.05, 0.1, 0.5, 1.0], repetitions, seed: 7, ..Default::default() }
}

fn criterion_7() -> Outcome {
    let spec = sweep_spec(1000);
    let result = run_experiments(&spec).unwrap();
    let entries = &result.summary.entries;
    let mean = |eps: f64, p: Policy| {
        entries.iter().find(|e| e.epsilon == eps && e.policy == p).map(|e| e.mean_objective_bps).unwrap()
    };
    let mut problems = Vec::new();
    let mut strict_eps = Vec::new();
    let mut iters = Vec::new();
    for &eps in &spec.epsilons {
        let (a, o, r, x) = (mean(eps, Policy::Auction), mean(eps, Policy::Optm), mean(eps, Policy::Rssi), mean(eps, Policy::Rand));
        let auction = entries.iter().find(|e| e.epsilon == eps && e.policy == Policy::Auction).unwrap();
        if !(a >= r && r >= x) {
            problems.push(format!("eps={eps}: ordering AUCTION {a:.4e} RSSI {r:.4e} RAND {x:.4e}"));
        }
        if a < o - auction.m_eps_bps {
            problems.push(format!("eps={eps}: AUCTION {a:.4e} below OPTM-Meps {:.4e}", o - auction.m_eps_bps));
        }
        if auction.delta_max_bps > auction.m_eps_bps * (1.0 + 1e-12) {
            problems.push(format!("eps={eps}: delta_max {:.4e} > Meps {:.4e}", auction.delta_max_bps, auction.m_eps_bps));
        }
        if auction.failed > 0 {
            problems.push(format!("eps={eps}: {} failed runs", auction.failed));
        }
        strict_eps.push(format!("{eps}:{}", auction.within_eps));
        iters.push(auction.mean_iterations);
    }
    if iters.windows(2).any(|w| w[1] > w[0]) {
        problems.push(format!("iterations not non-increasing: {iters:?}"));
    }
    outcome(
        problems.is_empty(),
        format!(
            "mean iterations {:?}; delta_max<=eps holds [{}]; problems {:?}",
            iters.iter().map(|x| (x * 100.0).round() / 100.0).collect::<Vec<_>>(),
            strict_eps.join(" "),
            problems
        ),
    )
}

fn event_times(s: &Scenario) -> Vec<u64> {
    let mut times: Vec<u64> = s.events.iter().filter(|e| e.slot > 0).map(|e| e.slot * s.slot_ms).collect();
    times.dedup();
    times
}

/// Bids from each event until the following quiescence, or `None` when some
/// event is never followed by quiescence before the horizon.
fn post_event_bids(s: &Scenario, r: &DynamicReport) -> Option<u64> {
    event_times(s)
        .iter()
        .map(|&t| r.quiescent.iter().find(|q| q.last_event_ms == t).map(|q| q.bids_since_event))
        .sum()
}

fn recovered(s: &Scenario, r: &DynamicReport) -> bool {
    post_event_bids(s, r).is_some() && r.quiescent.iter().all(|q| q.within_m_eps)
}

fn criterion_8() -> Outcome {
    let seeds = 50u64;
    let (mut wins, mut ties) = (0, 0);
    let mut recovered_count = [0u64; 2];
    for seed in 0..seeds {
        let mut counts = [None; 2];
        for (slot, reverse) in [false, true].into_iter().enumerate() {
            let mut s = join_scenario(seed);
            s.reverse = reverse;
            let r = s.run(false).unwrap();
            counts[slot] = post_event_bids(&s, &r);
            if recovered(&s, &r) {
                recovered_count[slot] += 1;
            }
        }
        match (counts[0], counts[1]) {
            (Some(a), Some(b)) if b < a => wins += 1,
            (Some(a), Some(b)) if b == a => ties += 1,
            (None, Some(_)) => wins += 1,
            _ => {}
        }
    }
    let share = wins as f64 / seeds as f64;
    outcome(
        recovered_count.iter().all(|&n| n == seeds) && share >= 0.8,
        format!(
            "recovered within Meps after every event: forward-only {}/{seeds}, with reverse {}/{seeds}; \
             reverse variant fewer post-event bids on {wins}/{seeds} ({:.0}%, ties {ties}), need >= 80%",
            recovered_count[0],
            recovered_count[1],
            share * 100.0
        ),
    )
}

fn static_trace_bytes(seed: u64) -> (Vec<u8>, Vec<u8>) {
    let (inst, eps) = integer_instance(seed);
    let r = static_run(&inst, eps, seed.is_multiple_of(2), true, seed);
    let mut trace = Vec::new();
    write_sim_trace_csv(&r.trace, &mut trace).unwrap();
    let metrics = format!("{:?} {} {} {:?}", r.snapshot.choice, r.snapshot.objective, r.stats.accepted_bids, r.stats);
    (trace, metrics.into_bytes())
}

fn dynamic_bytes(seed: u64) -> (Vec<u8>, Vec<u8>) {
    let r = join_scenario(seed).run(true).unwrap();
    let mut trace = Vec::new();
    write_sim_trace_csv(&r.trace, &mut trace).unwrap();
    let mut series = Vec::new();
    write_csv_rows(&r.samples, &mut series).unwrap();
    write_csv_rows(&r.quiescent, &mut series).unwrap();
    (trace, series)
}

fn sweep_bytes() -> Vec<Vec<u8>> {
    let dir = tempfile::tempdir().unwrap();
    let result = run_experiments(&sweep_spec(10)).unwrap();
    write_experiment(dir.path(), &result).unwrap();
    ["metrics.csv", "summary.json"].iter().map(|f| fs::read(dir.path().join(f)).unwrap()).collect()
}

fn criterion_9() -> Outcome {
    let mut diffs = Vec::new();
    for seed in 0..20u64 {
        if static_trace_bytes(seed) != static_trace_bytes(seed) {
            diffs.push(format!("static/{seed}"));
        }
    }
    for seed in 0..2u64 {
        if dynamic_bytes(seed) != dynamic_bytes(seed) {
            diffs.push(format!("dynamic/{seed}"));
        }
    }
    if sweep_bytes() != sweep_bytes() {
        diffs.push("sweep".into());
    }
    outcome(diffs.is_empty(), format!("static traces, dynamic traces and sweep metrics; differences {:?}", diffs))
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 9] = [
        ("exact optimum with integer benefits", criterion_1),
        ("objective within M*eps of the oracle", criterion_2),
        ("accepted bids within the iteration bound", criterion_3),
        ("min-cost flow equals exhaustive search", criterion_4),
        ("eps-CS at quiescence", criterion_5),
        ("per-AP load balance", criterion_6),
        ("sweep trends", criterion_7),
        ("dynamic joins", criterion_8),
        ("determinism", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {} {verdict}: {name} ({:.1}s) {}",
            i + 1,
            start.elapsed().as_secs_f64(),
            o.detail
        );
        if !o.pass {
            failed += 1;
        }
    }
    println!("acceptance: {} passed, {} failed", criteria.len() - failed, failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
