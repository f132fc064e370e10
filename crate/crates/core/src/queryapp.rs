//! The query application: Poisson query generation, TTL-limited flooding
//! with duplicate suppression, hop-dependent replies, and the time-varying
//! per-node demand λ(t).

use crate::geometry::NodeId;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueryError {
    #[error("time {t} outside demand profile [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },
    #[error("invalid demand profile: {0}")]
    InvalidProfile(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RateShape {
    Constant { rate: f64 },
    #[serde(alias = "ramp")]
    LinearRamp { from: f64, to: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemandSegment {
    pub start: f64,
    pub end: f64,
    pub shape: RateShape,
}

/// Piecewise per-node query rate, in requests per second.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemandProfile {
    pub segments: Vec<DemandSegment>,
}

impl DemandProfile {
    /// Constant rate forever.
    pub fn constant(rate: f64) -> Self {
        Self {
            segments: vec![DemandSegment { start: 0.0, end: f64::INFINITY, shape: RateShape::Constant { rate } }],
        }
    }

    /// Four phases over 20,000 s: ramp up from λ(0) to 1/100, hold, ramp down
    /// to 1/200, hold. λ(0) makes the aggregate demand 4.5 req/s among the
    /// `n_nodes - initial_providers` clients.
    pub fn four_phase(n_nodes: usize, initial_providers: usize) -> Self {
        let lambda0 = 4.5 / (n_nodes - initial_providers) as f64;
        let (high, low) = (1.0 / 100.0, 1.0 / 200.0);
        let seg = |start, end, shape| DemandSegment { start, end, shape };
        Self {
            segments: vec![
                seg(0.0, 2500.0, RateShape::LinearRamp { from: lambda0, to: high }),
                seg(2500.0, 10_000.0, RateShape::Constant { rate: high }),
                seg(10_000.0, 12_500.0, RateShape::LinearRamp { from: high, to: low }),
                seg(12_500.0, 20_000.0, RateShape::Constant { rate: low }),
            ],
        }
    }

    pub fn start(&self) -> f64 {
        self.segments.first().map_or(0.0, |s| s.start)
    }

    pub fn end(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.end)
    }

    /// Segments must start at 0, be contiguous, cover `sim_time`, and carry
    /// non-negative rates.
    pub fn validate(&self, sim_time: f64) -> Result<(), QueryError> {
        let bad = |m: String| Err(QueryError::InvalidProfile(m));
        let Some(first) = self.segments.first() else {
            return bad("no segments".into());
        };
        if first.start != 0.0 {
            return bad(format!("first segment starts at {}, not 0", first.start));
        }
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.end > s.start) {
                return bad(format!("segment {i} is empty or reversed"));
            }
            let rates = match s.shape {
                RateShape::Constant { rate } => [rate, rate],
                RateShape::LinearRamp { from, to } => [from, to],
            };
            if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
                return bad(format!("segment {i} has a negative or non-finite rate"));
            }
            if let Some(next) = self.segments.get(i + 1) {
                if next.start != s.end {
                    return bad(format!("gap or overlap between segments {i} and {}", i + 1));
                }
            }
        }
        if self.end() < sim_time {
            return bad(format!("profile ends at {} before sim_time {sim_time}", self.end()));
        }
        Ok(())
    }

    /// λ(t). A point shared by two segments belongs to the later one.
    pub fn lambda_at(&self, t: f64) -> Result<f64, QueryError> {
        let out_of_range = QueryError::OutOfRange { t, start: self.start(), end: self.end() };
        if !(t >= self.start() && t <= self.end()) {
            return Err(out_of_range);
        }
        let seg = self
            .segments
            .iter()
            .rev()
            .find(|s| t >= s.start)
            .ok_or(out_of_range)?;
        Ok(match seg.shape {
            RateShape::Constant { rate } => rate,
            RateShape::LinearRamp { from, to } => {
                let f = if seg.end.is_finite() { (t - seg.start) / (seg.end - seg.start) } else { 0.0 };
                from + (to - from) * f.clamp(0.0, 1.0)
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Query {
    pub origin: NodeId,
    pub seq: u32,
    pub hops_traversed: u32,
    pub issue_time: f64,
}

/// Draws the queries issued during `[t0, t0 + dt)`. Each client issues one
/// with probability `rate * dt`; the issuing set is drawn as a binomial
/// count followed by a uniform subset, which is the same law. Issue times
/// are uniform in the interval and the result is sorted by time.
pub fn generate_queries<R: Rng + ?Sized>(
    non_providers: &[NodeId],
    rate: f64,
    t0: f64,
    dt: f64,
    seqs: &mut [u32],
    rng: &mut R,
) -> Vec<Query> {
    let p = (rate * dt).clamp(0.0, 1.0);
    if p == 0.0 || non_providers.is_empty() {
        return Vec::new();
    }
    let k = Binomial::new(non_providers.len() as u64, p).expect("p in [0, 1]").sample(rng) as usize;
    let mut picked = rand::seq::index::sample(rng, non_providers.len(), k).into_vec();
    picked.sort_unstable();
    let mut out: Vec<Query> = picked
        .into_iter()
        .map(|i| {
            let origin = non_providers[i];
            let seq = &mut seqs[origin.index()];
            *seq += 1;
            Query { origin, seq: *seq, hops_traversed: 0, issue_time: t0 + dt * rng.random::<f64>() }
        })
        .collect();
    out.sort_by(|a, b| a.issue_time.total_cmp(&b.issue_time).then(a.origin.cmp(&b.origin)));
    out
}

/// Reusable flooding state. Every node remembers the last (origin, seq) it
/// handled and drops repeats, so each node forwards a query at most once.
#[derive(Clone, Debug, Default)]
pub struct Flooder {
    last_seen: Vec<Option<(NodeId, u32)>>,
    frontier: Vec<NodeId>,
    next: Vec<NodeId>,
    buf: Vec<NodeId>,
    /// Transmissions of the last flood (one per forwarding node).
    pub transmissions: usize,
}

impl Flooder {
    pub fn new(n: usize) -> Self {
        Self { last_seen: vec![None; n], ..Self::default() }
    }

    /// Breadth-first flood of `q` up to `h_max` hops. Returns every provider
    /// reached with its hop distance, in order of hops then id. An origin
    /// that is itself a provider appears with 0 hops. `neighbors` fills the
    /// given buffer with the neighbors of a node.
    pub fn propagate<N, P>(&mut self, q: &Query, h_max: u32, mut neighbors: N, is_provider: P) -> Vec<(NodeId, u32)>
    where
        N: FnMut(NodeId, &mut Vec<NodeId>),
        P: Fn(NodeId) -> bool,
    {
        let key = Some((q.origin, q.seq));
        let mut reached = Vec::new();
        self.transmissions = 0;
        self.frontier.clear();
        self.frontier.push(q.origin);
        self.last_seen[q.origin.index()] = key;
        if is_provider(q.origin) {
            reached.push((q.origin, 0));
        }
        for hop in 1..=h_max {
            self.next.clear();
            for i in 0..self.frontier.len() {
                let from = self.frontier[i];
                self.transmissions += 1;
                self.buf.clear();
                neighbors(from, &mut self.buf);
                for &n in &self.buf {
                    let seen = &mut self.last_seen[n.index()];
                    if *seen == key {
                        continue;
                    }
                    *seen = key;
                    self.next.push(n);
                }
            }
            if self.next.is_empty() {
                break;
            }
            self.next.sort_unstable();
            reached.extend(self.next.iter().filter(|n| is_provider(**n)).map(|n| (*n, hop)));
            std::mem::swap(&mut self.frontier, &mut self.next);
        }
        reached
    }
}

/// Flood over a spatial index snapshot.
pub fn propagate_query(
    q: &Query,
    index: &crate::netgraph::SpatialIndex,
    h_max: u32,
    providers: &[NodeId],
) -> Vec<(NodeId, u32)> {
    let mut is_provider = vec![false; index.len()];
    for p in providers {
        is_provider[p.index()] = true;
    }
    Flooder::new(index.len()).propagate(
        q,
        h_max,
        |n, buf| index.neighbors_into(n, buf).expect("flooding inside the index"),
        |n| is_provider[n.index()],
    )
}

/// Reply probability as a function of hops: `min(1, constant / hops)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplyLaw {
    pub constant: f64,
}

impl Default for ReplyLaw {
    fn default() -> Self {
        Self { constant: 1.0 }
    }
}

impl ReplyLaw {
    pub fn probability(&self, hops: u32) -> f64 {
        if hops == 0 {
            1.0
        } else {
            (self.constant / f64::from(hops)).min(1.0)
        }
    }
}

/// Bernoulli reply decision; a query from the provider itself is always
/// served locally.
pub fn decide_reply<R: Rng + ?Sized>(law: &ReplyLaw, hops: u32, rng: &mut R) -> bool {
    if hops == 0 {
        return true;
    }
    let p = law.probability(hops);
    p >= 1.0 || rng.random::<f64>() < p
}

/// Which replies count as served queries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplyAccounting {
    /// The querier keeps the first reply (fewest hops, random tie-break);
    /// only that provider has served the query.
    #[default]
    First,
    /// Every replying provider counts the query as served.
    All,
}
