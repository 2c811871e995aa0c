//! Topology generation, Monte-Carlo experiment sweeps, plot-data emission
//! and scenario files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{baseline_random, baseline_rssi, solve_exact_mcf};
use crate::problem::{build_asymmetric, recover_assignment, total_throughput, GBPS};
use crate::radio::{build_benefits, RadioParams};
use crate::sim::{run_dynamic, run_static, DynamicReport, EnvEvent, SimConfig, TimedEvent};
use crate::topology::{Node, Point, TopologyDoc, TopologyInstance};
use crate::SCHEMA_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApLayout {
    Line,
    Grid,
}

/// How client and relay positions are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Pick a cell uniformly, then a uniform point in its disk.
    CellMixture,
    /// Uniform over the union of the cell disks.
    Union,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub num_aps: usize,
    pub clients_per_ap: usize,
    pub num_relays: usize,
    /// Cell edge SNR in dB; fixes the cell radius.
    pub snr_db: f64,
    /// AP spacing as a multiple of the cell radius.
    pub ap_spacing_factor: f64,
    pub layout: ApLayout,
    pub placement: Placement,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            num_aps: 4,
            clients_per_ap: 5,
            num_relays: 10,
            snr_db: 10.0,
            ap_spacing_factor: 1.1,
            layout: ApLayout::Line,
            placement: Placement::CellMixture,
        }
    }
}

impl GeneratorSpec {
    pub fn num_clients(&self) -> usize {
        self.num_aps * self.clients_per_ap
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_aps == 0 {
            return Err(Error::Spec("need at least one AP".into()));
        }
        if self.num_relays > self.num_clients() {
            return Err(Error::Spec(format!(
                "{} relays exceed {} clients",
                self.num_relays,
                self.num_clients()
            )));
        }
        if !(self.ap_spacing_factor > 0.0 && self.ap_spacing_factor.is_finite()) {
            return Err(Error::Spec("AP spacing factor must be positive".into()));
        }
        Ok(())
    }
}

fn ap_positions(spec: &GeneratorSpec, r: f64) -> Vec<Point> {
    let d = spec.ap_spacing_factor * r;
    match spec.layout {
        ApLayout::Line => (0..spec.num_aps).map(|k| Point::new(k as f64 * d, 0.0)).collect(),
        ApLayout::Grid => {
            let cols = (spec.num_aps as f64).sqrt().ceil() as usize;
            (0..spec.num_aps)
                .map(|k| Point::new((k % cols) as f64 * d, (k / cols) as f64 * d))
                .collect()
        }
    }
}

fn uniform_in_disk<R: Rng>(rng: &mut R, c: Point, r: f64) -> Point {
    let rho = r * rng.gen::<f64>().sqrt();
    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
    Point::new(c.x + rho * theta.cos(), c.y + rho * theta.sin())
}

fn sample_point<R: Rng>(rng: &mut R, aps: &[Point], r: f64, placement: Placement) -> Point {
    match placement {
        Placement::CellMixture => {
            let k = rng.gen_range(0..aps.len());
            uniform_in_disk(rng, aps[k], r)
        }
        Placement::Union => {
            let min_x = aps.iter().map(|p| p.x).fold(f64::INFINITY, f64::min) - r;
            let max_x = aps.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max) + r;
            let min_y = aps.iter().map(|p| p.y).fold(f64::INFINITY, f64::min) - r;
            let max_y = aps.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max) + r;
            loop {
                let p = Point::new(rng.gen_range(min_x..max_x), rng.gen_range(min_y..max_y));
                if aps.iter().any(|a| a.distance(&p) <= r) {
                    return p;
                }
            }
        }
    }
}

/// Random topology per the generator spec. Eligibility is disk membership.
pub fn generate_topology(spec: &GeneratorSpec, radio: &RadioParams, seed: u64) -> Result<(TopologyInstance, f64)> {
    spec.validate()?;
    radio.validate()?;
    let r = radio.radius_for_snr_db(spec.snr_db)?;
    let aps = ap_positions(spec, r);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clients = (0..spec.num_clients())
        .map(|_| sample_point(&mut rng, &aps, r, spec.placement))
        .collect();
    let relays = (0..spec.num_relays)
        .map(|_| sample_point(&mut rng, &aps, r, spec.placement))
        .collect();
    Ok((TopologyInstance::with_radius(clients, relays, aps, r)?, r))
}

/// SplitMix64 finalizer used to derive independent per-run seeds.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x243F_6A88_85A3_08D3;
    for &p in parts {
        h ^= p;
        h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Policy {
    Auction,
    Optm,
    Rssi,
    Rand,
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Auction => "AUCTION",
            Policy::Optm => "OPTM",
            Policy::Rssi => "RSSI",
            Policy::Rand => "RAND",
        }
    }
}

impl std::str::FromStr for Policy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "AUCTION" => Ok(Policy::Auction),
            "OPTM" => Ok(Policy::Optm),
            "RSSI" => Ok(Policy::Rssi),
            "RAND" => Ok(Policy::Rand),
            other => Err(Error::Spec(format!("unknown policy {other}"))),
        }
    }
}

/// A Monte-Carlo sweep: the cartesian product of the listed AP counts,
/// clients per AP, relay counts and epsilons, each repeated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub schema_version: u32,
    pub generator: GeneratorSpec,
    pub radio: RadioParams,
    pub num_aps: Vec<usize>,
    pub clients_per_ap: Vec<usize>,
    pub num_relays: Vec<usize>,
    pub epsilons: Vec<f64>,
    pub repetitions: usize,
    pub policies: Vec<Policy>,
    pub seed: u64,
    pub broadcast_prices: bool,
    pub unit_bps: f64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            schema_version: SCHEMA_VERSION,
            generator: GeneratorSpec::default(),
            radio: RadioParams::default(),
            num_aps: vec![4],
            clients_per_ap: vec![5],
            num_relays: vec![10],
            epsilons: vec![0.1],
            repetitions: 100,
            policies: vec![Policy::Auction, Policy::Optm, Policy::Rssi, Policy::Rand],
            seed: 1,
            broadcast_prices: false,
            unit_bps: GBPS,
        }
    }
}

/// One point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub num_aps: usize,
    pub clients_per_ap: usize,
    pub num_relays: usize,
    pub epsilon: f64,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Spec(format!("unsupported schema_version {}", self.schema_version)));
        }
        if self.repetitions == 0 {
            return Err(Error::Spec("repetitions must be at least 1".into()));
        }
        if self.policies.is_empty() {
            return Err(Error::Spec("no policies selected".into()));
        }
        if self.num_aps.is_empty() || self.clients_per_ap.is_empty() || self.num_relays.is_empty() || self.epsilons.is_empty() {
            return Err(Error::Spec("every sweep dimension needs at least one value".into()));
        }
        if let Some(e) = self.epsilons.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return Err(Error::Spec(format!("epsilon must be positive, got {e}")));
        }
        if !(self.unit_bps > 0.0) {
            return Err(Error::Spec("unit_bps must be positive".into()));
        }
        self.radio.validate()?;
        for p in self.points() {
            self.generator_for(&p).validate()?;
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<SweepPoint> {
        let mut out = Vec::new();
        for &num_aps in &self.num_aps {
            for &clients_per_ap in &self.clients_per_ap {
                for &num_relays in &self.num_relays {
                    for &epsilon in &self.epsilons {
                        out.push(SweepPoint { num_aps, clients_per_ap, num_relays, epsilon });
                    }
                }
            }
        }
        out
    }

    pub fn generator_for(&self, p: &SweepPoint) -> GeneratorSpec {
        GeneratorSpec {
            num_aps: p.num_aps,
            clients_per_ap: p.clients_per_ap,
            num_relays: p.num_relays,
            ..self.generator.clone()
        }
    }

    /// Topology seed for a repetition. Epsilon is left out so every epsilon
    /// sees the same topologies.
    pub fn topology_seed(&self, p: &SweepPoint, rep: usize) -> u64 {
        mix_seed(&[self.seed, p.num_aps as u64, p.clients_per_ap as u64, p.num_relays as u64, rep as u64])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub point: usize,
    pub repetition: usize,
    pub seed: u64,
    pub num_aps: usize,
    pub num_clients: usize,
    pub num_relays: usize,
    pub epsilon: f64,
    pub policy: Policy,
    pub objective_bps: f64,
    /// Bids placed by clients (zero for non-auction policies).
    pub iterations: u64,
    pub accepted_bids: u64,
    /// Oracle minus policy objective, bits/s.
    pub gap_bps: f64,
    /// `M * eps` expressed in bits/s.
    pub m_eps_bps: f64,
    /// Connections per AP, `;`-separated.
    pub ap_loads: String,
    pub failed: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub point: usize,
    pub repetition: usize,
    pub policy: Policy,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub num_aps: usize,
    pub num_clients: usize,
    pub num_relays: usize,
    pub epsilon: f64,
    pub policy: Policy,
    pub runs: usize,
    pub failed: usize,
    pub mean_objective_bps: f64,
    pub stderr_objective_bps: f64,
    pub mean_iterations: f64,
    /// Largest oracle-minus-policy gap over the repetitions, bits/s.
    pub delta_max_bps: f64,
    pub m_eps_bps: f64,
    /// Whether `delta_max <= eps` (in bits/s) also held.
    pub within_eps: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub entries: Vec<SummaryEntry>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub rows: Vec<MetricsRow>,
    pub timings: Vec<TimingRow>,
    pub summary: Summary,
}

fn loads_string(loads: &[usize]) -> String {
    loads.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(";")
}

fn run_one(spec: &ExperimentSpec, idx: usize, p: &SweepPoint, rep: usize) -> (Vec<MetricsRow>, Vec<TimingRow>) {
    let seed = spec.topology_seed(p, rep);
    let m = p.num_aps * p.clients_per_ap;
    let m_eps_bps = m as f64 * p.epsilon * spec.unit_bps;
    let base = |policy: Policy| MetricsRow {
        point: idx,
        repetition: rep,
        seed,
        num_aps: p.num_aps,
        num_clients: m,
        num_relays: p.num_relays,
        epsilon: p.epsilon,
        policy,
        objective_bps: 0.0,
        iterations: 0,
        accepted_bids: 0,
        gap_bps: 0.0,
        m_eps_bps,
        ap_loads: String::new(),
        failed: None,
    };
    let prepared = (|| -> Result<_> {
        let (topo, _) = generate_topology(&spec.generator_for(p), &spec.radio, seed)?;
        let benefits = build_benefits(&spec.radio, &topo)?;
        let inst = build_asymmetric(&benefits, &topo, spec.unit_bps)?;
        let optimal = recover_assignment(&inst, &solve_exact_mcf(&inst).choice)?;
        let oracle_bps = total_throughput(&benefits, &optimal)?;
        Ok((topo, benefits, inst, optimal, oracle_bps))
    })();
    let (topo, benefits, inst, optimal, oracle_bps) = match prepared {
        Ok(x) => x,
        Err(e) => {
            let rows = spec
                .policies
                .iter()
                .map(|&pol| MetricsRow { failed: Some(e.to_string()), ..base(pol) })
                .collect();
            return (rows, Vec::new());
        }
    };
    let mut rows = Vec::new();
    let mut timings = Vec::new();
    for &policy in &spec.policies {
        let started = Instant::now();
        let outcome = (|| -> Result<MetricsRow> {
            let mut row = base(policy);
            let assignment = match policy {
                Policy::Optm => optimal.clone(),
                Policy::Rssi => baseline_rssi(&benefits, &topo)?,
                Policy::Rand => {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x5241_4e44]));
                    baseline_random(&topo, &mut rng)?
                }
                Policy::Auction => {
                    let mut cfg = SimConfig::new(p.epsilon)?;
                    cfg.broadcast_prices = spec.broadcast_prices;
                    cfg.check_invariants = false;
                    let r = run_static(&inst, &cfg, seed)?;
                    row.iterations = r.stats.bids;
                    row.accepted_bids = r.stats.accepted_bids;
                    recover_assignment(&inst, &r.snapshot.choice)?
                }
            };
            row.objective_bps = total_throughput(&benefits, &assignment)?;
            row.gap_bps = oracle_bps - row.objective_bps;
            row.ap_loads = loads_string(&assignment.ap_loads(topo.num_aps()));
            Ok(row)
        })();
        let wall_ms = started.elapsed().as_secs_f64() * 1e3;
        rows.push(outcome.unwrap_or_else(|e| MetricsRow { failed: Some(e.to_string()), ..base(policy) }));
        timings.push(TimingRow { point: idx, repetition: rep, policy, wall_ms });
    }
    (rows, timings)
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn summarize(spec: &ExperimentSpec, rows: &[MetricsRow]) -> Summary {
    let mut groups: BTreeMap<(usize, Policy), Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.point, r.policy)).or_default().push(r);
    }
    let entries = groups
        .into_iter()
        .map(|((_, policy), rs)| {
            let ok: Vec<&&MetricsRow> = rs.iter().filter(|r| r.failed.is_none()).collect();
            let objs: Vec<f64> = ok.iter().map(|r| r.objective_bps).collect();
            let iters: Vec<f64> = ok.iter().map(|r| r.iterations as f64).collect();
            let (mean, se) = mean_stderr(&objs);
            let delta_max = ok.iter().map(|r| r.gap_bps).fold(f64::NEG_INFINITY, f64::max);
            let first = rs[0];
            SummaryEntry {
                num_aps: first.num_aps,
                num_clients: first.num_clients,
                num_relays: first.num_relays,
                epsilon: first.epsilon,
                policy,
                runs: rs.len(),
                failed: rs.len() - ok.len(),
                mean_objective_bps: mean,
                stderr_objective_bps: se,
                mean_iterations: mean_stderr(&iters).0,
                delta_max_bps: delta_max,
                m_eps_bps: first.m_eps_bps,
                within_eps: delta_max <= first.epsilon * spec.unit_bps,
            }
        })
        .collect();
    Summary { schema_version: SCHEMA_VERSION, entries }
}

/// Runs every sweep point and repetition. Output order (and bytes) do not
/// depend on thread scheduling.
pub fn run_experiments(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let tasks: Vec<(usize, SweepPoint, usize)> = spec
        .points()
        .into_iter()
        .enumerate()
        .flat_map(|(idx, p)| (0..spec.repetitions).map(move |rep| (idx, p, rep)))
        .collect();
    let results: Vec<(Vec<MetricsRow>, Vec<TimingRow>)> =
        tasks.par_iter().map(|(idx, p, rep)| run_one(spec, *idx, p, *rep)).collect();
    let mut rows = Vec::new();
    let mut timings = Vec::new();
    for (r, t) in results {
        rows.extend(r);
        timings.extend(t);
    }
    let summary = summarize(spec, &rows);
    Ok(ExperimentResult { rows, timings, summary })
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let rows = rdr.deserialize().collect::<std::result::Result<Vec<T>, _>>()?;
    Ok(rows)
}

/// Writes `metrics.csv`, `timings.csv` and `summary.json` into `dir`.
pub fn write_experiment(dir: &Path, result: &ExperimentResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_csv(&dir.join("metrics.csv"), &result.rows)?;
    write_csv(&dir.join("timings.csv"), &result.timings)?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&result.summary)? + "\n")?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    ObjectiveVsClients,
    ObjectiveVsAps,
    ItersVsClients,
    ItersVsRelays,
    ItersVsEps,
    GapVsEps,
    DynamicTimeseries,
    CpuCdf,
}

impl PlotKind {
    pub const ALL: [PlotKind; 8] = [
        PlotKind::ObjectiveVsClients,
        PlotKind::ObjectiveVsAps,
        PlotKind::ItersVsClients,
        PlotKind::ItersVsRelays,
        PlotKind::ItersVsEps,
        PlotKind::GapVsEps,
        PlotKind::DynamicTimeseries,
        PlotKind::CpuCdf,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PlotKind::ObjectiveVsClients => "objective_vs_clients",
            PlotKind::ObjectiveVsAps => "objective_vs_aps",
            PlotKind::ItersVsClients => "iters_vs_clients",
            PlotKind::ItersVsRelays => "iters_vs_relays",
            PlotKind::ItersVsEps => "iters_vs_eps",
            PlotKind::GapVsEps => "gap_vs_eps",
            PlotKind::DynamicTimeseries => "dynamic_timeseries",
            PlotKind::CpuCdf => "cpu_cdf",
        }
    }
}

impl std::str::FromStr for PlotKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PlotKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Spec(format!("unknown plot kind {s}")))
    }
}

/// Sweep axis of the metrics table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Axis {
    Clients,
    Aps,
    Relays,
    Epsilon,
}

impl Axis {
    const ALL: [Axis; 4] = [Axis::Clients, Axis::Aps, Axis::Relays, Axis::Epsilon];

    fn name(&self) -> &'static str {
        match self {
            Axis::Clients => "num_clients",
            Axis::Aps => "num_aps",
            Axis::Relays => "num_relays",
            Axis::Epsilon => "epsilon",
        }
    }

    fn key(&self, r: &MetricsRow) -> u64 {
        match self {
            Axis::Clients => r.num_clients as u64,
            Axis::Aps => r.num_aps as u64,
            Axis::Relays => r.num_relays as u64,
            Axis::Epsilon => r.epsilon.to_bits(),
        }
    }

    fn format(&self, key: u64) -> String {
        match self {
            Axis::Epsilon => f64::from_bits(key).to_string(),
            _ => key.to_string(),
        }
    }
}

fn check_axis(rows: &[MetricsRow], axis: Axis) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::MissingDimension("metrics are empty".into()));
    }
    let distinct = |a: Axis| rows.iter().map(|r| a.key(r)).collect::<BTreeSet<_>>().len();
    if distinct(axis) >= 2 {
        return Ok(());
    }
    let available: Vec<&str> = Axis::ALL.iter().filter(|a| distinct(**a) >= 2).map(|a| a.name()).collect();
    Err(Error::MissingDimension(format!(
        "{} is not swept; swept dimensions: [{}]",
        axis.name(),
        available.join(", ")
    )))
}

/// Mean (and stderr) of `value` per axis value and policy, as CSV text.
fn grouped(rows: &[MetricsRow], axis: Axis, policies: Option<&[Policy]>, value: &str, f: impl Fn(&MetricsRow) -> f64) -> Result<String> {
    check_axis(rows, axis)?;
    let mut groups: BTreeMap<(u64, Policy), Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.failed.is_none()) {
        if policies.is_some_and(|ps| !ps.contains(&r.policy)) {
            continue;
        }
        groups.entry((axis.key(r), r.policy)).or_default().push(f(r));
    }
    if groups.is_empty() {
        return Err(Error::MissingDimension("no rows for the requested policies".into()));
    }
    let mut keys: Vec<_> = groups.keys().copied().collect();
    if axis == Axis::Epsilon {
        keys.sort_by(|a, b| f64::from_bits(a.0).total_cmp(&f64::from_bits(b.0)).then(a.1.cmp(&b.1)));
    }
    let mut out = format!("{},policy,mean_{value},stderr_{value},runs\n", axis.name());
    for k in keys {
        let xs = &groups[&k];
        let (m, se) = mean_stderr(xs);
        out += &format!("{},{},{m},{se},{}\n", axis.format(k.0), k.1.name(), xs.len());
    }
    Ok(out)
}

fn gap_vs_eps(rows: &[MetricsRow]) -> Result<String> {
    check_axis(rows, Axis::Epsilon)?;
    let mut groups: BTreeMap<u64, Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.failed.is_none() && r.policy == Policy::Auction) {
        groups.entry(r.epsilon.to_bits()).or_default().push(r);
    }
    if groups.is_empty() {
        return Err(Error::MissingDimension("no AUCTION rows".into()));
    }
    let mut keys: Vec<u64> = groups.keys().copied().collect();
    keys.sort_by(|a, b| f64::from_bits(*a).total_cmp(&f64::from_bits(*b)));
    let mut out = String::from("epsilon,mean_gap_bps,delta_max_bps,m_eps_bps,runs\n");
    for k in keys {
        let rs = &groups[&k];
        let gaps: Vec<f64> = rs.iter().map(|r| r.gap_bps).collect();
        let dmax = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let meps = rs.iter().map(|r| r.m_eps_bps).fold(f64::NEG_INFINITY, f64::max);
        out += &format!("{},{},{dmax},{meps},{}\n", f64::from_bits(k), mean_stderr(&gaps).0, rs.len());
    }
    Ok(out)
}

fn cpu_cdf(timings: &[TimingRow]) -> Result<String> {
    if timings.is_empty() {
        return Err(Error::MissingDimension("timings are empty".into()));
    }
    let mut per: BTreeMap<Policy, Vec<f64>> = BTreeMap::new();
    for t in timings {
        per.entry(t.policy).or_default().push(t.wall_ms);
    }
    let mut out = String::from("policy,wall_ms,cdf\n");
    for (p, mut xs) in per {
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        for (k, x) in xs.iter().enumerate() {
            out += &format!("{},{x},{}\n", p.name(), (k + 1) as f64 / n);
        }
    }
    Ok(out)
}

/// Input tables for [`emit_plotdata`].
#[derive(Debug, Clone, Default)]
pub struct PlotInputs {
    pub metrics: Vec<MetricsRow>,
    pub timings: Vec<TimingRow>,
    pub timeseries: Vec<crate::sim::SlotSample>,
}

/// Writes `<kind>.csv` into `dir` and returns its path.
pub fn emit_plotdata(inputs: &PlotInputs, kind: PlotKind, dir: &Path) -> Result<PathBuf> {
    let rows = &inputs.metrics;
    let auction = [Policy::Auction];
    let text = match kind {
        PlotKind::ObjectiveVsClients => grouped(rows, Axis::Clients, None, "objective_bps", |r| r.objective_bps)?,
        PlotKind::ObjectiveVsAps => grouped(rows, Axis::Aps, None, "objective_bps", |r| r.objective_bps)?,
        PlotKind::ItersVsClients => grouped(rows, Axis::Clients, Some(&auction), "iterations", |r| r.iterations as f64)?,
        PlotKind::ItersVsRelays => grouped(rows, Axis::Relays, Some(&auction), "iterations", |r| r.iterations as f64)?,
        PlotKind::ItersVsEps => grouped(rows, Axis::Epsilon, Some(&auction), "iterations", |r| r.iterations as f64)?,
        PlotKind::GapVsEps => gap_vs_eps(rows)?,
        PlotKind::CpuCdf => cpu_cdf(&inputs.timings)?,
        PlotKind::DynamicTimeseries => {
            if inputs.timeseries.is_empty() {
                return Err(Error::MissingDimension("no time series given".into()));
            }
            let mut out = String::from("slot,time_ms,objective_bps,oracle_bps,rssi_bps,active_clients,active_relays\n");
            for s in &inputs.timeseries {
                out += &format!(
                    "{},{},{},{},{},{},{}\n",
                    s.slot, s.time_ms, s.objective_bps, s.oracle_bps, s.rssi_bps, s.active_clients, s.active_relays
                );
            }
            out
        }
    };
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}.csv", kind.name()));
    fs::write(&path, text)?;
    Ok(path)
}

/// Versioned scenario file for dynamic simulations. The topology is either
/// given explicitly or generated from `generator` with `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub schema_version: u32,
    pub radio: RadioParams,
    pub topology: Option<TopologyDoc>,
    pub generator: Option<GeneratorSpec>,
    pub epsilon: f64,
    pub horizon_slots: u64,
    pub slot_ms: u64,
    pub events: Vec<TimedEvent>,
    pub seed: u64,
    pub latency_ms: [u64; 2],
    pub broadcast_prices: bool,
    /// Run the reverse protocol for unassigned relays.
    pub reverse: bool,
    pub unit_bps: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            schema_version: SCHEMA_VERSION,
            radio: RadioParams::default(),
            topology: None,
            generator: None,
            epsilon: 0.1,
            horizon_slots: 100,
            slot_ms: 10,
            events: Vec::new(),
            seed: 1,
            latency_ms: [1, 5],
            broadcast_prices: false,
            reverse: true,
            unit_bps: GBPS,
        }
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let s: Scenario = serde_json::from_str(&text)?;
        if s.schema_version != SCHEMA_VERSION {
            return Err(Error::Scenario(format!("unsupported schema_version {}", s.schema_version)));
        }
        s.topology()?;
        Ok(s)
    }

    pub fn topology(&self) -> Result<TopologyInstance> {
        let topo = match (&self.topology, &self.generator) {
            (Some(doc), _) => TopologyInstance::from_doc(doc.clone())?,
            (None, Some(g)) => generate_topology(g, &self.radio, self.seed)?.0,
            (None, None) => return Err(Error::Scenario("scenario needs a topology or a generator".into())),
        };
        crate::sim::World::validate_events(&topo, &self.events, self.horizon_slots)?;
        Ok(topo)
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let mut cfg = SimConfig::new(self.epsilon)?;
        cfg.latency_ms = (self.latency_ms[0], self.latency_ms[1]);
        cfg.broadcast_prices = self.broadcast_prices;
        cfg.reverse = self.reverse;
        cfg.slot_ms = self.slot_ms;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn run(&self, trace: bool) -> Result<DynamicReport> {
        let topo = self.topology()?;
        let mut cfg = self.sim_config()?;
        cfg.trace = trace;
        run_dynamic(&topo, &self.radio, self.unit_bps, &cfg, &self.events, self.horizon_slots, self.seed)
    }
}

/// Join scenario with 5 APs: 50 clients and 25 relays at start, 10 more
/// clients at slot 220 and 5 more relays at slot 400, over 500 slots.
pub fn join_scenario(seed: u64) -> Scenario {
    let generator = GeneratorSpec {
        num_aps: 5,
        clients_per_ap: 12,
        num_relays: 30,
        ..GeneratorSpec::default()
    };
    let mut events: Vec<TimedEvent> = (50..60)
        .map(|client| TimedEvent { slot: 220, event: EnvEvent::ClientJoin { client } })
        .collect();
    events.extend((25..30).map(|relay| TimedEvent { slot: 400, event: EnvEvent::RelayJoin { relay } }));
    Scenario {
        generator: Some(generator),
        horizon_slots: 500,
        events,
        seed,
        ..Scenario::default()
    }
}

/// Random churn: joins, leaves and blockages of random links at random slots.
pub fn random_scenario(generator: GeneratorSpec, num_events: usize, horizon_slots: u64, seed: u64) -> Result<Scenario> {
    let radio = RadioParams::default();
    let (topo, _) = generate_topology(&generator, &radio, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x4556_454e_5453]));
    let mut clients = vec![true; topo.num_clients()];
    let mut relays = vec![true; topo.num_relays()];
    let mut slots: Vec<u64> = (0..num_events).map(|_| rng.gen_range(1..horizon_slots.max(2))).collect();
    slots.sort_unstable();
    let mut events = Vec::new();
    for slot in slots {
        let event = match rng.gen_range(0..3) {
            0 if topo.num_clients() > 1 => {
                let c = rng.gen_range(0..topo.num_clients());
                // Keep the relay count below the client count.
                let active_c = clients.iter().filter(|&&x| x).count();
                let active_r = relays.iter().filter(|&&x| x).count();
                if clients[c] && active_c > 1 && active_r < active_c {
                    EnvEvent::ClientLeave { client: c }
                } else if !clients[c] {
                    EnvEvent::ClientJoin { client: c }
                } else {
                    continue;
                }
            }
            1 if topo.num_relays() > 0 => {
                let r = rng.gen_range(0..topo.num_relays());
                if relays[r] {
                    EnvEvent::RelayLeave { relay: r }
                } else {
                    EnvEvent::RelayJoin { relay: r }
                }
            }
            _ => {
                let c = rng.gen_range(0..topo.num_clients());
                let b = if topo.client_relays(c).is_empty() || rng.gen_bool(0.5) {
                    Node::Ap(topo.client_aps(c)[rng.gen_range(0..topo.client_aps(c).len())])
                } else {
                    Node::Relay(topo.client_relays(c)[rng.gen_range(0..topo.client_relays(c).len())])
                };
                EnvEvent::Blockage { a: Node::Client(c), b, duration_slots: rng.gen_range(1..20) }
            }
        };
        match event {
            EnvEvent::ClientJoin { client } => clients[client] = true,
            EnvEvent::ClientLeave { client } => clients[client] = false,
            EnvEvent::RelayJoin { relay } => relays[relay] = true,
            EnvEvent::RelayLeave { relay } => relays[relay] = false,
            EnvEvent::Blockage { .. } => {}
        }
        events.push(TimedEvent { slot, event });
    }
    Ok(Scenario {
        topology: Some(topo.to_doc()),
        horizon_slots,
        events,
        seed,
        ..Scenario::default()
    })
}
