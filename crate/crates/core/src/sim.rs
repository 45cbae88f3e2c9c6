//! Discrete-event simulation of the node network.
//!
//! Every node is a FIFO single-server queue with exponential service at rate
//! `μ_i` and Poisson arrivals at rate `φ_i`. An arriving job is either served
//! where it arrived or shipped to another node, paying a deterministic
//! communication delay before it joins that node's queue. Once service starts
//! the job stays put.
//!
//! Random streams are split by purpose (per-node inter-arrival times, per-node
//! job sizes, routing draws) so that two policies run with the same seed see
//! the same arrival trace and the same job sizes.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{check_feasibility, relay_count, FlowMatrix, Network};

/// Number of batches used for the batch-means confidence interval.
pub const BATCHES: usize = 20;

/// 0.975 quantile of Student's t with `BATCHES − 1` degrees of freedom.
const T_QUANTILE_19: f64 = 2.093_024_054_408_263;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    StaticOptimal,
    NoBalancing,
    #[serde(rename = "sq")]
    ShortestQueue,
    #[serde(rename = "med")]
    MinExpectedDelay,
    DynamicThreshold,
}

impl Policy {
    pub const ALL: [Policy; 5] = [
        Policy::StaticOptimal,
        Policy::NoBalancing,
        Policy::ShortestQueue,
        Policy::MinExpectedDelay,
        Policy::DynamicThreshold,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Policy::StaticOptimal => "static_optimal",
            Policy::NoBalancing => "no_balancing",
            Policy::ShortestQueue => "sq",
            Policy::MinExpectedDelay => "med",
            Policy::DynamicThreshold => "dynamic_threshold",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Policy::ALL.iter().map(|p| p.name()).collect();
                format!("unknown policy {s:?}, expected one of {}", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub total_jobs: u64,
    pub seed: u64,
    pub warmup_fraction: f64,
    pub policy: Policy,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            total_jobs: 100_000,
            seed: 1,
            warmup_fraction: 0.1,
            policy: Policy::StaticOptimal,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_jobs == 0 {
            return Err(Error::Simulation("total_jobs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Simulation(format!(
                "warmup_fraction must lie in [0, 1), got {}",
                self.warmup_fraction
            )));
        }
        Ok(())
    }

    fn warmup_jobs(&self) -> u64 {
        (self.warmup_fraction * self.total_jobs as f64).floor() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub policy: Policy,
    pub seed: u64,
    pub jobs: u64,
    /// Jobs after warm-up that entered the statistics.
    pub measured_jobs: u64,
    /// Mean node sojourn over all measured jobs plus the mean communication
    /// delay over measured transferred jobs; estimates the same quantity as
    /// [`crate::network::mean_response_time`].
    pub mean_response_time: f64,
    pub mean_node_delay: f64,
    pub mean_comm_delay: f64,
    /// Plain per-job average of communication delay plus sojourn.
    pub mean_job_response: f64,
    /// Batch-means 95% half-width of `mean_response_time`.
    pub ci_halfwidth: Option<f64>,
    pub utilization: Vec<f64>,
    pub transfer_count: u64,
    pub end_time: f64,
}

enum Router {
    Local,
    Static {
        /// Per origin: cumulative routing probabilities to other nodes.
        table: Vec<Vec<(usize, f64)>>,
        delay: f64,
    },
    ShortestQueue,
    MinExpectedDelay,
    Threshold(Thresholds),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    Arrival(usize),
    Join { job: usize, node: usize },
    Departure(usize),
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.seq.cmp(&other.seq))
    }
}

#[derive(Debug, Clone, Default)]
struct NodeState {
    queue: VecDeque<usize>,
    in_service: Option<usize>,
    busy_since: f64,
    busy_time: f64,
    completed: u64,
    sojourn_sum: f64,
}

impl NodeState {
    fn in_system(&self) -> usize {
        self.queue.len() + usize::from(self.in_service.is_some())
    }
}

#[derive(Debug, Clone)]
struct Job {
    created: f64,
    joined: f64,
    finished: f64,
    work: f64,
    comm_delay: f64,
    transferred: bool,
}

struct Engine<'a> {
    network: &'a Network,
    router: Router,
    cfg: SimConfig,
    now: f64,
    seq: u64,
    events: BinaryHeap<Reverse<Event>>,
    interarrival: Vec<Option<Exp<f64>>>,
    arrival_rng: Vec<ChaCha8Rng>,
    work_rng: Vec<ChaCha8Rng>,
    route_rng: ChaCha8Rng,
    nodes: Vec<NodeState>,
    jobs: Vec<Job>,
    transfers: u64,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl<'a> Engine<'a> {
    fn new(network: &'a Network, router: Router, cfg: SimConfig) -> Self {
        let n = network.len();
        let interarrival = network
            .nodes()
            .iter()
            .map(|node| {
                Exp::new(node.arrival_rate)
                    .ok()
                    .filter(|_| node.arrival_rate > 0.0)
            })
            .collect();
        Engine {
            network,
            router,
            cfg,
            now: 0.0,
            seq: 0,
            events: BinaryHeap::new(),
            interarrival,
            arrival_rng: (0..n as u64).map(|i| stream(cfg.seed, 2 * i + 1)).collect(),
            work_rng: (0..n as u64).map(|i| stream(cfg.seed, 2 * i + 2)).collect(),
            route_rng: stream(cfg.seed, 0),
            nodes: vec![NodeState::default(); n],
            jobs: Vec::with_capacity(cfg.total_jobs as usize),
            transfers: 0,
        }
    }

    fn schedule(&mut self, time: f64, kind: EventKind) {
        self.seq += 1;
        self.events.push(Reverse(Event {
            time,
            seq: self.seq,
            kind,
        }));
    }

    fn schedule_arrival(&mut self, node: usize) {
        if let Some(dist) = self.interarrival[node] {
            let gap = dist.sample(&mut self.arrival_rng[node]);
            self.schedule(self.now + gap, EventKind::Arrival(node));
        }
    }

    fn marginal_estimate(&self, node: usize) -> f64 {
        let state = &self.nodes[node];
        let model = &self.network.nodes()[node].delay;
        let mean_sojourn = if state.completed > 0 {
            state.sojourn_sum / state.completed as f64
        } else {
            1.0 / model.service_rate()
        };
        let load = state.in_system() as f64 / mean_sojourn;
        model.marginal_node_delay(load).unwrap_or(f64::INFINITY)
    }

    fn empirical_delay(&self) -> f64 {
        let comm = self.network.comm();
        let rate = if self.now > 0.0 {
            self.transfers as f64 / self.now
        } else {
            0.0
        };
        let cap = comm.max_traffic();
        let rate = if rate >= cap { 0.99 * cap } else { rate };
        comm.comm_delay(rate).unwrap_or(0.0)
    }

    /// Picks the serving node and the communication delay for a job arriving at `origin`.
    fn route(&mut self, origin: usize) -> (usize, f64) {
        match &self.router {
            Router::Local => (origin, 0.0),
            Router::Static { table, delay } => {
                let row = &table[origin];
                if row.is_empty() {
                    return (origin, 0.0);
                }
                let u: f64 = self.route_rng.random();
                match row.iter().find(|(_, cum)| u < *cum) {
                    Some(&(j, _)) => (j, *delay),
                    None => (origin, 0.0),
                }
            }
            Router::ShortestQueue => {
                let mut best = origin;
                for j in 0..self.nodes.len() {
                    if self.nodes[j].in_system() < self.nodes[best].in_system() {
                        best = j;
                    }
                }
                self.with_delay(origin, best)
            }
            Router::MinExpectedDelay => {
                let expected = |j: usize| {
                    (self.nodes[j].in_system() as f64 + 1.0)
                        / self.network.nodes()[j].delay.service_rate()
                };
                let mut best = origin;
                for j in 0..self.nodes.len() {
                    if expected(j) < expected(best) {
                        best = j;
                    }
                }
                self.with_delay(origin, best)
            }
            Router::Threshold(th) => {
                let th = *th;
                if self.marginal_estimate(origin) <= th.high {
                    return (origin, 0.0);
                }
                let mut target: Option<(usize, f64)> = None;
                for j in (0..self.nodes.len()).filter(|&j| j != origin) {
                    let f = self.marginal_estimate(j);
                    if target.is_none_or(|(_, best)| f < best) {
                        target = Some((j, f));
                    }
                }
                match target {
                    Some((j, f)) if f < th.low => self.with_delay(origin, j),
                    _ => (origin, 0.0),
                }
            }
        }
    }

    fn with_delay(&self, origin: usize, target: usize) -> (usize, f64) {
        if target == origin {
            (origin, 0.0)
        } else {
            (target, self.empirical_delay())
        }
    }

    fn start_service(&mut self, node: usize, job: usize) {
        let state = &mut self.nodes[node];
        state.in_service = Some(job);
        state.busy_since = self.now;
        let mu = self.network.nodes()[node].delay.service_rate();
        let done = self.now + self.jobs[job].work / mu;
        self.schedule(done, EventKind::Departure(node));
    }

    fn join(&mut self, node: usize, job: usize) {
        self.jobs[job].joined = self.now;
        if self.nodes[node].in_service.is_none() {
            self.start_service(node, job);
        } else {
            self.nodes[node].queue.push_back(job);
        }
    }

    fn on_arrival(&mut self, origin: usize) {
        if (self.jobs.len() as u64) >= self.cfg.total_jobs {
            return;
        }
        let work: f64 = Exp1.sample(&mut self.work_rng[origin]);
        let id = self.jobs.len();
        self.jobs.push(Job {
            created: self.now,
            joined: self.now,
            finished: f64::NAN,
            work,
            comm_delay: 0.0,
            transferred: false,
        });
        let (target, delay) = self.route(origin);
        if target == origin {
            self.join(origin, id);
        } else {
            self.transfers += 1;
            let job = &mut self.jobs[id];
            job.transferred = true;
            job.comm_delay = delay;
            self.schedule(
                self.now + delay,
                EventKind::Join {
                    job: id,
                    node: target,
                },
            );
        }
        if (self.jobs.len() as u64) < self.cfg.total_jobs {
            self.schedule_arrival(origin);
        }
    }

    fn on_departure(&mut self, node: usize) {
        let now = self.now;
        let state = &mut self.nodes[node];
        let job = state
            .in_service
            .take()
            .expect("departure from an idle server");
        state.busy_time += now - state.busy_since;
        state.completed += 1;
        state.sojourn_sum += now - self.jobs[job].joined;
        self.jobs[job].finished = now;
        if let Some(next) = self.nodes[node].queue.pop_front() {
            self.start_service(node, next);
        }
    }

    fn run(mut self) -> SimReport {
        for i in 0..self.network.len() {
            self.schedule_arrival(i);
        }
        while let Some(Reverse(event)) = self.events.pop() {
            self.now = event.time;
            match event.kind {
                EventKind::Arrival(i) => self.on_arrival(i),
                EventKind::Join { job, node } => self.join(node, job),
                EventKind::Departure(i) => self.on_departure(i),
            }
        }
        self.report()
    }

    fn report(self) -> SimReport {
        let warmup = self.cfg.warmup_jobs() as usize;
        let measured = &self.jobs[warmup.min(self.jobs.len())..];
        let (mean_node_delay, mean_comm_delay, mean_response_time) = composite(measured);
        let mean_job_response = if measured.is_empty() {
            0.0
        } else {
            measured.iter().map(|j| j.finished - j.created).sum::<f64>() / measured.len() as f64
        };
        let ci_halfwidth = (measured.len() >= 2 * BATCHES).then(|| {
            let means: Vec<f64> = (0..BATCHES)
                .map(|b| {
                    let lo = b * measured.len() / BATCHES;
                    let hi = (b + 1) * measured.len() / BATCHES;
                    composite(&measured[lo..hi]).2
                })
                .collect();
            let mean = means.iter().sum::<f64>() / BATCHES as f64;
            let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
            T_QUANTILE_19 * (var / BATCHES as f64).sqrt()
        });
        let end_time = self.now;
        let utilization = self
            .nodes
            .iter()
            .map(|s| {
                if end_time > 0.0 {
                    (s.busy_time / end_time).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect();
        SimReport {
            policy: self.cfg.policy,
            seed: self.cfg.seed,
            jobs: self.jobs.len() as u64,
            measured_jobs: measured.len() as u64,
            mean_response_time,
            mean_node_delay,
            mean_comm_delay,
            mean_job_response,
            ci_halfwidth,
            utilization,
            transfer_count: self.transfers,
            end_time,
        }
    }
}

/// (mean sojourn, mean delay of transferred jobs, their sum).
fn composite(jobs: &[Job]) -> (f64, f64, f64) {
    if jobs.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let node = jobs.iter().map(|j| j.finished - j.joined).sum::<f64>() / jobs.len() as f64;
    let (sum, count) = jobs
        .iter()
        .filter(|j| j.transferred)
        .fold((0.0, 0_u64), |(s, c), j| (s + j.comm_delay, c + 1));
    let comm = if count > 0 { sum / count as f64 } else { 0.0 };
    (node, comm, node + comm)
}

/// Simulates a fixed routing matrix; a zero matrix is the no-balancing policy.
pub fn simulate_static(network: &Network, flow: &FlowMatrix, cfg: &SimConfig) -> Result<SimReport> {
    cfg.validate()?;
    let report = check_feasibility(network, flow);
    if !report.is_feasible() {
        return Err(Error::Simulation(format!(
            "static assignment is not admissible: {report}"
        )));
    }
    if relay_count(flow) > 0 {
        return Err(Error::Simulation(
            "static assignment contains relay nodes".into(),
        ));
    }
    let lambda = flow.total();
    let router = if lambda > 0.0 {
        let table = network
            .nodes()
            .iter()
            .enumerate()
            .map(|(i, node)| {
                let mut cum = 0.0;
                flow.row(i)
                    .iter()
                    .enumerate()
                    .filter(|(_, x)| **x > 0.0)
                    .map(|(j, x)| {
                        cum += x / node.arrival_rate;
                        (j, cum)
                    })
                    .collect()
            })
            .collect();
        Router::Static {
            table,
            delay: network.comm().comm_delay(lambda)?,
        }
    } else {
        Router::Local
    };
    Ok(Engine::new(network, router, *cfg).run())
}

/// Sender-initiated threshold policy driven by estimated marginal delays.
pub fn simulate_dynamic(
    network: &Network,
    thresholds: Thresholds,
    cfg: &SimConfig,
) -> Result<SimReport> {
    cfg.validate()?;
    if thresholds.low.is_nan() || thresholds.high.is_nan() || thresholds.low > thresholds.high {
        return Err(Error::Simulation(format!(
            "thresholds must satisfy low <= high, got ({}, {})",
            thresholds.low, thresholds.high
        )));
    }
    Ok(Engine::new(network, Router::Threshold(thresholds), *cfg).run())
}

/// Join-shortest-queue or minimum-expected-delay routing.
pub fn simulate_baseline(network: &Network, cfg: &SimConfig) -> Result<SimReport> {
    cfg.validate()?;
    let router = match cfg.policy {
        Policy::ShortestQueue => Router::ShortestQueue,
        Policy::MinExpectedDelay => Router::MinExpectedDelay,
        Policy::NoBalancing => {
            return simulate_static(network, &FlowMatrix::zeros(network.len()), cfg)
        }
        other => {
            return Err(Error::Simulation(format!(
                "{other} is not a baseline policy"
            )));
        }
    };
    Ok(Engine::new(network, router, *cfg).run())
}
