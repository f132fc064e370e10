//! The simulation loop and multi-run orchestration.
//!
//! Time advances through a priority queue of events ordered by
//! `(time, seq)`. A periodic tick moves the nodes and draws the queries of
//! the next tick interval; protocol events (expiries, hop deliveries, query
//! arrivals, metric samples) are scheduled individually.

use crate::adaptation::{execute_decision, expiry_decision, ideal_provider_count, Decision};
use crate::analytics::{
    aggregate_runs, chi_squared_from_counts, density_index_from_counts, nodal_reference, pair_distance_histogram,
    spatial_bin_probabilities, AggregatePoint, AnalyticsError, MetricSeries,
};
use crate::config::{validate_scenario, ConfigError, DeploymentKind, MobilityKind, Scenario};
use crate::dissemination::{
    closer_neighbors, handle_void, handover, rdd_plan_move, CopyId, CopyState, IdealLink, InformationCopy, Link,
    Policy, VoidOutcome,
};
use crate::geometry::{NodeId, Position};
use crate::netgraph::{NeighborCache, SpatialIndex};
use crate::queryapp::{decide_reply, generate_queries, Flooder, Query, ReplyAccounting};
use crate::rng::{derive_stream, RngStream, DEPLOYMENT, MOBILITY, POLICY, PROVIDERS, QUERIES};
use crate::world::{
    deploy_clustered, deploy_stationary, deploy_uniform, random_trip_states, stationary_states, step_mobility,
    MobilityModel, MobilityState, WorldError,
};
use rand::Rng;
use rayon::prelude::*;
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error("run {run_index}: {source}")]
    Run {
        run_index: u32,
        #[source]
        source: Box<SimError>,
    },
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EventKind {
    /// Mobility step and query draw for the next tick interval.
    Tick,
    CacheExpiry { copy: CopyId },
    HopDelivery { copy: CopyId, to: NodeId },
    QueryArrival { origin: NodeId, seq: u32 },
    MetricSample,
    AccessSample,
}

#[derive(Clone, Copy, Debug)]
pub struct SimEvent {
    pub time: f64,
    pub seq: u64,
    pub kind: EventKind,
}

impl PartialEq for SimEvent {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for SimEvent {}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SimEvent {
    /// Reversed so that `BinaryHeap` pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TraceEvent {
    Cache,
    Expire,
    Hop,
    Reflect,
    SelfElect,
    Replicate,
    Drop,
}

impl TraceEvent {
    pub fn label(self) -> &'static str {
        match self {
            TraceEvent::Cache => "cache",
            TraceEvent::Expire => "expire",
            TraceEvent::Hop => "hop",
            TraceEvent::Reflect => "reflect",
            TraceEvent::SelfElect => "self_elect",
            TraceEvent::Replicate => "replicate",
            TraceEvent::Drop => "drop",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRecord {
    pub time: f64,
    pub copy: CopyId,
    pub event: TraceEvent,
    pub node: NodeId,
    pub position: Position,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counters {
    pub events: u64,
    pub queries: u64,
    /// Provider replies, before first-reply filtering.
    pub replies: u64,
    /// Queries credited to some provider.
    pub served: u64,
    pub flood_transmissions: u64,
    pub hops: u64,
    pub failed_transmissions: u64,
    pub reflections: u64,
    pub self_elections: u64,
    pub expiries: u64,
    pub replications: u64,
    pub drops: u64,
    pub index_rebuilds: u64,
    /// Copies found cached at more than one node at the end of the run.
    pub duplicates: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AccessSample {
    pub t: f64,
    /// Distance in meters from each client to its closest provider.
    pub distances: Vec<(NodeId, f64)>,
}

/// Everything one run measured.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub run_index: u32,
    pub cache_time: f64,
    /// Windowed density-form χ² against the area-uniform reference.
    pub chi2: MetricSeries,
    /// Same against the node-pair reference.
    pub chi2_nodal: MetricSeries,
    /// Count-form χ² against the area-uniform reference.
    pub chi2_count: MetricSeries,
    pub providers: MetricSeries,
    pub ideal_providers: MetricSeries,
    pub access: Vec<AccessSample>,
    /// Completed caching periods per node.
    pub provider_stints: Vec<u32>,
    pub served: Vec<u64>,
    pub ever_provider: Vec<bool>,
    pub trace: Vec<TraceRecord>,
    pub counters: Counters,
}

fn finite_mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values.filter(|v| v.is_finite()) {
        sum += v;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

impl RunOutput {
    /// Cumulative provider time per node.
    pub fn provider_time(&self) -> Vec<f64> {
        self.provider_stints.iter().map(|&i| self.cache_time * f64::from(i)).collect()
    }

    pub fn mean_index(&self) -> f64 {
        finite_mean(self.chi2.samples.iter().map(|s| s.1))
    }

    pub fn mean_nodal_index(&self) -> f64 {
        finite_mean(self.chi2_nodal.samples.iter().map(|s| s.1))
    }

    pub fn mean_count_index(&self) -> f64 {
        finite_mean(self.chi2_count.samples.iter().map(|s| s.1))
    }

    /// Mean provider count over samples with `t0 <= t < t1`.
    pub fn mean_providers(&self, t0: f64, t1: f64) -> f64 {
        finite_mean(self.providers.samples.iter().filter(|s| s.0 >= t0 && s.0 < t1).map(|s| s.1))
    }

    pub fn mean_access_distance(&self) -> f64 {
        let (mut sum, mut n) = (0.0, 0usize);
        for s in &self.access {
            sum += s.distances.iter().map(|d| d.1).sum::<f64>();
            n += s.distances.len();
        }
        sum / n as f64
    }

    /// Per-sample mean client distance.
    pub fn access_series(&self) -> MetricSeries {
        let mut out = MetricSeries::new("access_distance", self.run_index);
        for s in &self.access {
            out.push(s.t, finite_mean(s.distances.iter().map(|d| d.1)));
        }
        out
    }

    pub fn ever_providers(&self) -> Vec<NodeId> {
        (0..self.ever_provider.len()).filter(|&i| self.ever_provider[i]).map(NodeId::from).collect()
    }
}

struct CopySlot {
    copy: InformationCopy,
    rng: RngStream,
}

/// State of one run.
pub struct Simulation {
    scenario: Scenario,
    run_index: u32,
    clock: f64,
    seq: u64,
    queue: BinaryHeap<SimEvent>,
    positions: Vec<Position>,
    mobility: Option<(MobilityModel, Vec<MobilityState>)>,
    index: SpatialIndex,
    neighbors: NeighborCache,
    copies: Vec<Option<CopySlot>>,
    live: usize,
    cached_at: Vec<Vec<CopyId>>,
    policy_root: RngStream,
    mobility_rng: RngStream,
    query_rng: RngStream,
    query_seqs: Vec<u32>,
    flooder: Flooder,
    link: Box<dyn Link + Send>,
    mu_ref: f64,
    spatial_probs: Vec<f64>,
    nodal_probs: Vec<f64>,
    nodal_stamp: f64,
    buf: Vec<NodeId>,
    tick_count: u64,
    sample_count: u64,
    access_count: u64,
    out: RunOutput,
}

impl Simulation {
    pub fn new(scenario: &Scenario, run_index: u32) -> Result<Self, SimError> {
        Self::with_link(scenario, run_index, Box::new(IdealLink))
    }

    /// Builds the initial world: deployment, mobility states, and the
    /// initial providers, chosen uniformly without replacement.
    pub fn with_link(scenario: &Scenario, run_index: u32, link: Box<dyn Link + Send>) -> Result<Self, SimError> {
        let s = validate_scenario(scenario.clone())?;
        let n = s.network.n_nodes;
        let side = s.network.area_side;
        let seed = s.seed;
        let mut deploy_rng = derive_stream(seed, DEPLOYMENT, run_index);
        let mut mobility_rng = derive_stream(seed, MOBILITY, run_index);
        let params = s.mobility.waypoint();
        let model = s.mobility_model();

        let (positions, mut states) = match (s.deployment.kind, s.mobility.kind) {
            (DeploymentKind::Stationary, MobilityKind::RandomWaypoint) => {
                let mut states = stationary_states(n, side, &params, &mut deploy_rng);
                let mut t = 0.0;
                while t < s.deployment.warmup {
                    let dt = (s.deployment.warmup - t).min(1.0);
                    step_mobility(&mut states, dt, &model, side, &mut deploy_rng);
                    t += dt;
                }
                (states.iter().map(|st| st.position).collect(), Some(states))
            }
            (DeploymentKind::Stationary, _) => {
                (deploy_stationary(n, side, s.deployment.warmup, &params, &mut deploy_rng), None)
            }
            (DeploymentKind::Uniform, _) => (deploy_uniform(n, side, &mut deploy_rng), None),
            (DeploymentKind::Clustered, _) => (
                deploy_clustered(
                    n,
                    side,
                    &s.cluster_layout(),
                    s.network.radio_range,
                    s.deployment.max_draws,
                    &mut deploy_rng,
                )?,
                None,
            ),
        };
        let mobility = match s.mobility.kind {
            MobilityKind::Static => None,
            MobilityKind::RandomTrip => {
                Some(random_trip_states(&positions, &s.cluster_layout(), &params, &mut mobility_rng))
            }
            MobilityKind::RandomWaypoint => Some(states.take().unwrap_or_else(|| {
                positions
                    .iter()
                    .enumerate()
                    .map(|(i, p)| MobilityState::at_rest(NodeId::from(i), *p))
                    .collect()
            })),
        }
        .map(|st| (model, st));

        let index = SpatialIndex::build(&positions, side, s.network.radio_range);
        let n_bins = s.metrics.n_bins;
        let nodal_probs = nodal_reference(&positions, side, n_bins).probabilities();
        let mu_ref = s
            .adaptation
            .and_then(|a| a.mu_ref)
            .or_else(|| s.reference_load())
            .unwrap_or(f64::NAN);
        let series = |name: &str| MetricSeries::new(name, run_index);
        let out = RunOutput {
            run_index,
            cache_time: s.dissemination.cache_time,
            chi2: series("chi2"),
            chi2_nodal: series("chi2_nodal"),
            chi2_count: series("chi2_count"),
            providers: series("providers"),
            ideal_providers: series("ideal_providers"),
            access: Vec::new(),
            provider_stints: vec![0; n],
            served: vec![0; n],
            ever_provider: vec![false; n],
            trace: Vec::new(),
            counters: Counters::default(),
        };
        let mut sim = Self {
            run_index,
            clock: 0.0,
            seq: 0,
            queue: BinaryHeap::new(),
            positions,
            mobility,
            index,
            neighbors: NeighborCache::new(n),
            copies: Vec::new(),
            live: 0,
            cached_at: vec![Vec::new(); n],
            policy_root: derive_stream(seed, POLICY, run_index),
            mobility_rng,
            query_rng: derive_stream(seed, QUERIES, run_index),
            query_seqs: vec![0; n],
            flooder: Flooder::new(n),
            link,
            mu_ref,
            spatial_probs: spatial_bin_probabilities(n_bins),
            nodal_probs,
            nodal_stamp: 0.0,
            buf: Vec::new(),
            tick_count: 0,
            sample_count: 0,
            access_count: 0,
            out,
            scenario: s,
        };

        let mut provider_rng = derive_stream(seed, PROVIDERS, run_index);
        let c0 = sim.scenario.dissemination.initial_providers;
        for node in rand::seq::index::sample(&mut provider_rng, n, c0).into_vec() {
            let id = sim.new_copy(NodeId::from(node));
            sim.cache_copy(id, NodeId::from(node), 0.0);
        }
        sim.schedule(0.0, EventKind::Tick);
        sim.schedule(0.0, EventKind::MetricSample);
        sim.schedule(0.0, EventKind::AccessSample);
        Ok(sim)
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn copy_count(&self) -> usize {
        self.live
    }

    pub fn copies(&self) -> impl Iterator<Item = &InformationCopy> {
        self.copies.iter().flatten().map(|slot| &slot.copy)
    }

    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    pub fn counters(&self) -> &Counters {
        &self.out.counters
    }

    /// Processes the next event. Returns it, or `None` once the queue holds
    /// nothing at or before the end of the simulation.
    pub fn step(&mut self) -> Option<SimEvent> {
        if self.queue.peek()?.time > self.scenario.sim_time {
            return None;
        }
        let ev = self.queue.pop()?;
        debug_assert!(ev.time >= self.clock, "clock regression");
        self.clock = ev.time;
        self.out.counters.events += 1;
        match ev.kind {
            EventKind::Tick => self.on_tick(),
            EventKind::CacheExpiry { copy } => self.on_expiry(copy),
            EventKind::HopDelivery { copy, to } => self.on_hop_delivery(copy, to),
            EventKind::QueryArrival { origin, seq } => self.on_query(origin, seq),
            EventKind::MetricSample => self.sample_metrics(),
            EventKind::AccessSample => self.sample_access(),
        }
        Some(ev)
    }

    pub fn run_to_end(mut self) -> RunOutput {
        while self.step().is_some() {}
        self.finish()
    }

    fn finish(mut self) -> RunOutput {
        let mut seen = vec![false; self.copies.len()];
        for list in &self.cached_at {
            for &id in list {
                if std::mem::replace(&mut seen[id as usize], true) {
                    self.out.counters.duplicates += 1;
                }
            }
        }
        self.out
    }

    fn schedule(&mut self, time: f64, kind: EventKind) {
        self.seq += 1;
        self.queue.push(SimEvent { time, seq: self.seq, kind });
    }

    fn record(&mut self, copy: CopyId, event: TraceEvent, node: NodeId) {
        if self.scenario.metrics.trace {
            let position = self.positions[node.index()];
            self.out.trace.push(TraceRecord { time: self.clock, copy, event, node, position });
        }
    }

    fn new_copy(&mut self, at: NodeId) -> CopyId {
        let id = self.copies.len() as CopyId;
        let copy = InformationCopy {
            id,
            state: CopyState::Moving { target: self.positions[at.index()], forwarder: at, hop_count: 0, reflections: 0 },
        };
        let rng = self.policy_root.substream(id);
        self.copies.push(Some(CopySlot { copy, rng }));
        self.live += 1;
        id
    }

    fn slot(&mut self, id: CopyId) -> &mut CopySlot {
        self.copies[id as usize].as_mut().expect("live copy")
    }

    fn cache_copy(&mut self, id: CopyId, node: NodeId, now: f64) {
        let expiry = now + self.scenario.dissemination.cache_time;
        self.slot(id).copy.state = CopyState::Cached { holder: node, expiry, served_this_period: 0 };
        let list = &mut self.cached_at[node.index()];
        let at = list.partition_point(|&c| c < id);
        list.insert(at, id);
        self.out.ever_provider[node.index()] = true;
        self.schedule(expiry, EventKind::CacheExpiry { copy: id });
        self.record(id, TraceEvent::Cache, node);
    }

    fn load_neighbors(&mut self, node: NodeId) {
        self.buf.clear();
        self.buf.extend_from_slice(self.neighbors.get(&self.index, node));
    }

    fn on_tick(&mut self) {
        let now = self.clock;
        let dt = self.scenario.mobility.tick;
        if now > 0.0 {
            if let Some((model, states)) = self.mobility.as_mut() {
                let side = self.scenario.network.area_side;
                step_mobility(states, dt, model, side, &mut self.mobility_rng);
                for (p, st) in self.positions.iter_mut().zip(states.iter()) {
                    *p = st.position;
                }
                self.index.rebuild(&self.positions);
                self.out.counters.index_rebuilds += 1;
            }
        }
        let lambda = self.scenario.queries.demand.lambda_at(now).unwrap_or(0.0);
        let clients: Vec<NodeId> =
            (0..self.cached_at.len()).filter(|&i| self.cached_at[i].is_empty()).map(NodeId::from).collect();
        let queries = generate_queries(&clients, lambda, now, dt, &mut self.query_seqs, &mut self.query_rng);
        for q in queries {
            if q.issue_time <= self.scenario.sim_time {
                self.schedule(q.issue_time, EventKind::QueryArrival { origin: q.origin, seq: q.seq });
            }
        }
        self.tick_count += 1;
        let next = self.tick_count as f64 * dt;
        if next <= self.scenario.sim_time {
            self.schedule(next, EventKind::Tick);
        }
    }

    fn on_expiry(&mut self, id: CopyId) {
        let now = self.clock;
        let (holder, served) = match self.slot(id).copy.state {
            CopyState::Cached { holder, served_this_period, .. } => (holder, served_this_period),
            CopyState::Moving { .. } => unreachable!("expiry of a copy in transit"),
        };
        let list = &mut self.cached_at[holder.index()];
        list.retain(|&c| c != id);
        self.out.provider_stints[holder.index()] += 1;
        self.out.counters.expiries += 1;
        self.record(id, TraceEvent::Expire, holder);

        let effective = match self.scenario.adaptation {
            None => Decision::Handover,
            Some(a) => {
                let tau = self.scenario.dissemination.cache_time;
                let mu_ref = a.mu_ref.expect("validated");
                let decision = expiry_decision(served, tau, mu_ref, a.epsilon.resolve(mu_ref));
                execute_decision(decision, self.live, a.min_copies).effective
            }
        };
        match effective {
            Decision::Drop => {
                self.copies[id as usize] = None;
                self.live -= 1;
                self.out.counters.drops += 1;
                self.record(id, TraceEvent::Drop, holder);
            }
            Decision::Handover => {
                self.launch(id, holder, &[], now);
            }
            Decision::Replicate => match self.scenario.dissemination.policy {
                Policy::RandomWalk => {
                    self.load_neighbors(holder);
                    if self.buf.is_empty() {
                        self.launch(id, holder, &[], now);
                        return;
                    }
                    let twin = self.replicate(id, holder);
                    let first = self.launch(id, holder, &[], now);
                    let exclude: Vec<NodeId> = first.into_iter().collect();
                    self.launch(twin, holder, &exclude, now);
                }
                Policy::RandomDirection => {
                    let twin = self.replicate(id, holder);
                    self.launch(id, holder, &[], now);
                    self.launch(twin, holder, &[], now);
                }
            },
        }
    }

    fn replicate(&mut self, id: CopyId, holder: NodeId) -> CopyId {
        let twin = self.new_copy(holder);
        self.out.counters.replications += 1;
        self.record(id, TraceEvent::Replicate, holder);
        twin
    }

    /// Starts a move phase of copy `id` from `from`. An RWD copy with no
    /// reachable neighbor outside `exclude` stays cached for another period.
    /// Returns the first receiving neighbor for RWD.
    fn launch(&mut self, id: CopyId, from: NodeId, exclude: &[NodeId], now: f64) -> Option<NodeId> {
        match self.scenario.dissemination.policy {
            Policy::RandomWalk => {
                self.load_neighbors(from);
                let candidates: Vec<NodeId> = self.buf.iter().copied().filter(|n| !exclude.contains(n)).collect();
                let slot = self.copies[id as usize].as_mut().expect("live copy");
                let rng = &mut slot.rng;
                let outcome = handover(id, from, candidates, |c| rng.random_range(0..c.len()), self.link.as_mut());
                self.out.counters.failed_transmissions += outcome.attempts.iter().filter(|a| !a.acked).count() as u64;
                match outcome.acked {
                    Some(to) => {
                        slot.copy.state = CopyState::Moving {
                            target: self.positions[to.index()],
                            forwarder: from,
                            hop_count: 0,
                            reflections: 0,
                        };
                        self.send(id, to, now);
                        Some(to)
                    }
                    None => {
                        self.cache_copy(id, from, now);
                        None
                    }
                }
            }
            Policy::RandomDirection => {
                let side = self.scenario.network.area_side;
                let mean = self.scenario.dissemination.mean_move_distance;
                let origin = self.positions[from.index()];
                let slot = self.slot(id);
                let plan = rdd_plan_move(origin, side, mean, &mut slot.rng);
                slot.copy.state = CopyState::Moving { target: plan.target, forwarder: from, hop_count: 0, reflections: 0 };
                self.forward(id, now);
                None
            }
        }
    }

    fn send(&mut self, id: CopyId, to: NodeId, now: f64) {
        self.out.counters.hops += 1;
        self.record(id, TraceEvent::Hop, to);
        let latency = self.scenario.network.hop_latency;
        self.schedule(now + latency, EventKind::HopDelivery { copy: id, to });
    }

    /// Greedy geographic forwarding of an RDD copy from its current
    /// forwarder, resolving voids by reflection or self-election.
    fn forward(&mut self, id: CopyId, now: f64) {
        let range = self.scenario.network.radio_range;
        let side = self.scenario.network.area_side;
        let max_reflections = self.scenario.dissemination.max_reflections;
        loop {
            let (target, forwarder, reflections) = match self.slot(id).copy.state {
                CopyState::Moving { target, forwarder, reflections, .. } => (target, forwarder, reflections),
                CopyState::Cached { .. } => unreachable!("forwarding a cached copy"),
            };
            self.load_neighbors(forwarder);
            let candidates = closer_neighbors(forwarder, target, &self.buf, &self.positions);
            if !candidates.is_empty() {
                let outcome = handover(id, forwarder, candidates, |_| 0, self.link.as_mut());
                self.out.counters.failed_transmissions += outcome.attempts.iter().filter(|a| !a.acked).count() as u64;
                if let Some(to) = outcome.acked {
                    if let CopyState::Moving { hop_count, .. } = &mut self.slot(id).copy.state {
                        *hop_count += 1;
                    }
                    self.send(id, to, now);
                    return;
                }
            }
            let here = self.positions[forwarder.index()];
            match handle_void(here, target, reflections, range, max_reflections, side) {
                VoidOutcome::SelfElect => {
                    self.out.counters.self_elections += 1;
                    self.record(id, TraceEvent::SelfElect, forwarder);
                    self.cache_copy(id, forwarder, now);
                    return;
                }
                VoidOutcome::Reflect { new_target } => {
                    if let CopyState::Moving { target, reflections, .. } = &mut self.slot(id).copy.state {
                        *target = new_target;
                        *reflections += 1;
                    }
                    self.out.counters.reflections += 1;
                    self.record(id, TraceEvent::Reflect, forwarder);
                }
            }
        }
    }

    fn on_hop_delivery(&mut self, id: CopyId, to: NodeId) {
        let now = self.clock;
        if let CopyState::Moving { forwarder, .. } = &mut self.slot(id).copy.state {
            *forwarder = to;
        }
        match self.scenario.dissemination.policy {
            Policy::RandomWalk => self.cache_copy(id, to, now),
            Policy::RandomDirection => self.forward(id, now),
        }
    }

    fn on_query(&mut self, origin: NodeId, seq: u32) {
        let q = Query { origin, seq, hops_traversed: 0, issue_time: self.clock };
        let h_max = self.scenario.queries.h_max;
        let (index, cache, cached_at) = (&self.index, &mut self.neighbors, &self.cached_at);
        let reached = self.flooder.propagate(
            &q,
            h_max,
            |n, buf| buf.extend_from_slice(cache.get(index, n)),
            |n| !cached_at[n.index()].is_empty(),
        );
        let c = &mut self.out.counters;
        c.queries += 1;
        c.flood_transmissions += self.flooder.transmissions as u64;

        let law = self.scenario.queries.reply;
        let replies: Vec<(NodeId, u32)> =
            reached.into_iter().filter(|&(_, h)| decide_reply(&law, h, &mut self.query_rng)).collect();
        self.out.counters.replies += replies.len() as u64;
        match self.scenario.queries.accounting {
            ReplyAccounting::All => {
                for (p, _) in replies {
                    self.credit(p);
                }
            }
            ReplyAccounting::First => {
                let Some(best) = replies.iter().map(|r| r.1).min() else { return };
                let nearest: Vec<NodeId> = replies.iter().filter(|r| r.1 == best).map(|r| r.0).collect();
                let pick = if nearest.len() == 1 { 0 } else { self.query_rng.random_range(0..nearest.len()) };
                self.credit(nearest[pick]);
            }
        }
    }

    /// Credits one served query to a provider node and its lowest-id copy.
    fn credit(&mut self, node: NodeId) {
        self.out.served[node.index()] += 1;
        self.out.counters.served += 1;
        let id = self.cached_at[node.index()][0];
        if let CopyState::Cached { served_this_period, .. } = &mut self.slot(id).copy.state {
            *served_this_period += 1;
        }
    }

    fn carrier_positions(&self) -> Vec<Position> {
        self.copies().map(|c| self.positions[c.carrier().index()]).collect()
    }

    /// Records C(t), its ideal value, and the windowed uniformity indices of
    /// the copy positions.
    pub fn sample_metrics(&mut self) {
        let now = self.clock;
        let s = &self.scenario;
        let side = s.network.area_side;
        let n_bins = s.metrics.n_bins;
        let lambda = s.queries.demand.lambda_at(now).unwrap_or(0.0);
        let ideal = ideal_provider_count(s.network.n_nodes, lambda, self.mu_ref);
        debug_assert_eq!(self.live, self.copies.iter().flatten().count());
        self.out.providers.push(now, self.live as f64);
        self.out.ideal_providers.push(now, ideal);

        if self.mobility.is_some() && now - self.nodal_stamp >= s.metrics.nodal_refresh {
            self.nodal_probs = nodal_reference(&self.positions, side, n_bins).probabilities();
            self.nodal_stamp = now;
        }
        let carriers = self.carrier_positions();
        let (spatial, nodal, count) = if carriers.len() >= 2 {
            let h = pair_distance_histogram(&carriers, side, n_bins);
            (
                density_index_from_counts(&h.counts, &self.spatial_probs).unwrap_or(f64::NAN),
                density_index_from_counts(&h.counts, &self.nodal_probs).unwrap_or(f64::NAN),
                chi_squared_from_counts(&h.counts, &self.spatial_probs).unwrap_or(f64::NAN),
            )
        } else {
            (f64::NAN, f64::NAN, f64::NAN)
        };
        self.out.chi2.push(now, spatial);
        self.out.chi2_nodal.push(now, nodal);
        self.out.chi2_count.push(now, count);

        self.sample_count += 1;
        let next = self.sample_count as f64 * self.scenario.metrics.obs_interval;
        if next <= self.scenario.sim_time {
            self.schedule(next, EventKind::MetricSample);
        }
    }

    fn sample_access(&mut self) {
        let now = self.clock;
        let mut is_carrier = vec![false; self.positions.len()];
        for c in self.copies() {
            is_carrier[c.carrier().index()] = true;
        }
        let carriers: Vec<Position> =
            (0..is_carrier.len()).filter(|&i| is_carrier[i]).map(|i| self.positions[i]).collect();
        let mut distances = Vec::with_capacity(self.positions.len());
        if !carriers.is_empty() {
            for (i, p) in self.positions.iter().enumerate() {
                if is_carrier[i] {
                    continue;
                }
                let d2 = carriers.iter().map(|c| c.distance_sq(p)).fold(f64::INFINITY, f64::min);
                distances.push((NodeId::from(i), d2.sqrt()));
            }
        }
        self.out.access.push(AccessSample { t: now, distances });

        self.access_count += 1;
        let next = self.access_count as f64 * self.scenario.access_interval();
        if next <= self.scenario.sim_time {
            self.schedule(next, EventKind::AccessSample);
        }
    }

    pub fn run_index(&self) -> u32 {
        self.run_index
    }
}

/// Runs one simulation to completion.
pub fn run(scenario: &Scenario, run_index: u32) -> Result<RunOutput, SimError> {
    Ok(Simulation::new(scenario, run_index)?.run_to_end())
}

#[derive(Clone, Debug)]
pub struct Aggregate {
    pub chi2: Vec<AggregatePoint>,
    pub chi2_nodal: Vec<AggregatePoint>,
    pub providers: Vec<AggregatePoint>,
    /// Ideal provider count at each sample time.
    pub ideal_providers: Vec<(f64, f64)>,
    pub access_distance: Vec<AggregatePoint>,
}

#[derive(Clone, Debug)]
pub struct BatchOutput {
    pub runs: Vec<RunOutput>,
    pub aggregate: Aggregate,
}

/// Pointwise mean and 95% band across runs.
pub fn aggregate(runs: &[RunOutput]) -> Result<Aggregate, AnalyticsError> {
    let pick = |f: fn(&RunOutput) -> MetricSeries| runs.iter().map(f).collect::<Vec<_>>();
    Ok(Aggregate {
        chi2: aggregate_runs(&pick(|r| r.chi2.clone()), 0.05)?,
        chi2_nodal: aggregate_runs(&pick(|r| r.chi2_nodal.clone()), 0.05)?,
        providers: aggregate_runs(&pick(|r| r.providers.clone()), 0.05)?,
        ideal_providers: runs.first().map(|r| r.ideal_providers.samples.clone()).unwrap_or_default(),
        access_distance: aggregate_runs(&pick(|r| r.access_series()), 0.05)?,
    })
}

/// Runs `runs` independent replications on `parallelism` threads. Results
/// are ordered by run index whatever the thread count.
pub fn run_batch(scenario: &Scenario, runs: u32, parallelism: usize) -> Result<BatchOutput, SimError> {
    let scenario = validate_scenario(scenario.clone())?;
    if runs < 1 {
        return Err(ConfigError::Invalid { field: "runs".into(), message: "must be at least 1".into() }.into());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| SimError::ThreadPool(e.to_string()))?;
    let results: Vec<Result<RunOutput, SimError>> =
        pool.install(|| (0..runs).into_par_iter().map(|r| run(&scenario, r)).collect());
    let mut outputs = Vec::with_capacity(results.len());
    for (r, res) in results.into_iter().enumerate() {
        outputs.push(res.map_err(|e| SimError::Run { run_index: r as u32, source: Box::new(e) })?);
    }
    let aggregate = aggregate(&outputs)?;
    Ok(BatchOutput { runs: outputs, aggregate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adaptation::AdaptationParams;
    use crate::dissemination::Link;

    fn small(policy: Policy) -> Scenario {
        let mut s = Scenario::default();
        s.network.n_nodes = 300;
        s.network.area_side = 200.0;
        s.dissemination.policy = policy;
        s.dissemination.initial_providers = 20;
        s.dissemination.mean_move_distance = 40.0;
        s.sim_time = 300.0;
        s.queries.demand = crate::queryapp::DemandProfile::constant(0.01);
        s.metrics.trace = true;
        s
    }

    #[test]
    fn events_order_by_time_then_seq() {
        let mut heap = BinaryHeap::new();
        heap.push(SimEvent { time: 2.0, seq: 1, kind: EventKind::Tick });
        heap.push(SimEvent { time: 1.0, seq: 3, kind: EventKind::Tick });
        heap.push(SimEvent { time: 1.0, seq: 2, kind: EventKind::MetricSample });
        let order: Vec<(f64, u64)> = std::iter::from_fn(|| heap.pop()).map(|e| (e.time, e.seq)).collect();
        assert_eq!(order, vec![(1.0, 2), (1.0, 3), (2.0, 1)]);
    }

    #[test]
    fn clock_is_monotone_and_hops_take_the_latency() {
        let s = small(Policy::RandomDirection);
        let mut sim = Simulation::new(&s, 0).unwrap();
        let mut last = 0.0;
        let mut sent = std::collections::HashMap::new();
        while let Some(ev) = sim.step() {
            assert!(ev.time >= last);
            last = ev.time;
            if let EventKind::HopDelivery { copy, to } = ev.kind {
                let t0: f64 = sent.remove(&(copy, to)).expect("delivery was sent");
                assert_eq!(ev.time, t0 + s.network.hop_latency);
            }
            // Record the send times visible after this event.
            for r in sim.out.trace.iter().rev().take_while(|r| r.time == ev.time) {
                if r.event == TraceEvent::Hop {
                    sent.insert((r.copy, r.node), r.time);
                }
            }
        }
        assert!(sim.counters().hops > 0);
    }

    #[test]
    fn copies_are_conserved_without_adaptation() {
        for policy in [Policy::RandomWalk, Policy::RandomDirection] {
            let out = run(&small(policy), 0).unwrap();
            assert!(out.providers.samples.iter().all(|s| s.1 == 20.0));
            assert_eq!(out.counters.duplicates, 0);
            assert_eq!(out.counters.replications + out.counters.drops, 0);
        }
    }

    #[test]
    fn stints_match_the_event_ledger() {
        for policy in [Policy::RandomWalk, Policy::RandomDirection] {
            let out = run(&small(policy), 1).unwrap();
            let mut ledger = vec![0u32; out.provider_stints.len()];
            for r in out.trace.iter().filter(|r| r.event == TraceEvent::Expire) {
                ledger[r.node.index()] += 1;
            }
            assert_eq!(ledger, out.provider_stints);
            assert!(out.provider_stints.iter().sum::<u32>() > 0);
        }
    }

    #[test]
    fn deterministic_per_run_index() {
        let s = small(Policy::RandomDirection);
        let (a, b, c) = (run(&s, 2).unwrap(), run(&s, 2).unwrap(), run(&s, 3).unwrap());
        assert_eq!(a.chi2, b.chi2);
        assert_eq!(a.served, b.served);
        assert_eq!(a.trace, b.trace);
        assert_ne!(a.trace, c.trace);
    }

    #[test]
    fn static_runs_never_rebuild_the_index() {
        let out = run(&small(Policy::RandomWalk), 0).unwrap();
        assert_eq!(out.counters.index_rebuilds, 0);
        let mut s = small(Policy::RandomWalk);
        s.mobility.kind = MobilityKind::RandomWaypoint;
        let out = run(&s, 0).unwrap();
        assert_eq!(out.counters.index_rebuilds, 300);
    }

    #[test]
    fn two_copies_give_one_pair() {
        let mut s = small(Policy::RandomWalk);
        s.dissemination.initial_providers = 2;
        s.sim_time = 5.0;
        let sim = Simulation::new(&s, 0).unwrap();
        let out = sim.run_to_end();
        let first = out.chi2_count.samples[0].1;
        assert!(first.is_finite());
        // One pair in one bin: Σ(O-E)²/E = 1/p - 1 for the occupied bin p.
        let probs = spatial_bin_probabilities(20);
        assert!(probs.iter().any(|p| (1.0 / p - 1.0 - first).abs() < 1e-9));
    }

    #[test]
    fn adaptation_changes_the_count_by_the_ledger() {
        let mut s = small(Policy::RandomDirection);
        s.adaptation = Some(AdaptationParams::default());
        s.queries.demand = crate::queryapp::DemandProfile::constant(0.02);
        let out = run(&s, 0).unwrap();
        let last = out.providers.samples.last().unwrap().1;
        let c = out.counters;
        assert_eq!(last as u64, 20 + c.replications - c.drops);
        let per_sample_ok = out.providers.samples.iter().all(|p| p.1 >= 1.0);
        assert!(per_sample_ok);
        assert!(c.replications > 0);
    }

    struct Flaky(u32);

    impl Link for Flaky {
        fn transmit(&mut self, _from: NodeId, _to: NodeId) -> bool {
            self.0 += 1;
            self.0 % 3 != 0
        }
    }

    #[test]
    fn lossy_links_never_duplicate() {
        for policy in [Policy::RandomWalk, Policy::RandomDirection] {
            let s = small(policy);
            let out = Simulation::with_link(&s, 0, Box::new(Flaky(0))).unwrap().run_to_end();
            assert!(out.counters.failed_transmissions > 0);
            assert_eq!(out.counters.duplicates, 0);
            assert!(out.providers.samples.iter().all(|p| p.1 == 20.0));
        }
    }

    #[test]
    fn batch_is_independent_of_parallelism() {
        let mut s = small(Policy::RandomWalk);
        s.metrics.trace = false;
        let a = run_batch(&s, 3, 1).unwrap();
        let b = run_batch(&s, 3, 3).unwrap();
        assert_eq!(a.aggregate.chi2, b.aggregate.chi2);
        assert_eq!(a.aggregate.providers, b.aggregate.providers);
        let one = run_batch(&s, 1, 2).unwrap();
        assert!(one.aggregate.chi2.iter().all(|p| p.lo == p.hi || p.mean.is_nan()));
    }
}
