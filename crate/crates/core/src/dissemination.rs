//! Copy migration: random walk (RWD) and random direction (RDD).
//!
//! These are the per-decision building blocks. The engine owns the copy
//! table and the clock and strings them together into full move phases.

use crate::geometry::{fold_ray, NodeId, Position};
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

pub type CopyId = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Policy {
    #[serde(alias = "RWD", alias = "Rwd")]
    #[serde(rename = "rwd")]
    RandomWalk,
    #[serde(alias = "RDD", alias = "Rdd")]
    #[serde(rename = "rdd")]
    RandomDirection,
}

impl Policy {
    pub fn label(self) -> &'static str {
        match self {
            Policy::RandomWalk => "RWD",
            Policy::RandomDirection => "RDD",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CopyState {
    /// Stored at a provider until `expiry`.
    Cached {
        holder: NodeId,
        expiry: f64,
        served_this_period: u32,
    },
    /// In transit. For RWD the target is the receiving neighbor's position.
    Moving {
        target: Position,
        forwarder: NodeId,
        hop_count: u32,
        reflections: u32,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct InformationCopy {
    pub id: CopyId,
    pub state: CopyState,
}

impl InformationCopy {
    /// Node currently carrying the copy, cached or in transit.
    pub fn carrier(&self) -> NodeId {
        match self.state {
            CopyState::Cached { holder, .. } => holder,
            CopyState::Moving { forwarder, .. } => forwarder,
        }
    }

    pub fn is_cached(&self) -> bool {
        matches!(self.state, CopyState::Cached { .. })
    }
}

/// Uniform choice among one-hop neighbors; `None` when isolated.
pub fn rwd_select_next<R: Rng + ?Sized>(neighbors: &[NodeId], rng: &mut R) -> Option<NodeId> {
    if neighbors.is_empty() {
        None
    } else {
        Some(neighbors[rng.random_range(0..neighbors.len())])
    }
}

/// A planned RDD trajectory: direction and length drawn at the provider.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MovePlan {
    pub origin: Position,
    pub angle: f64,
    pub distance: f64,
    pub target: Position,
}

impl MovePlan {
    pub fn new(origin: Position, angle: f64, distance: f64, side: f64) -> Self {
        Self { origin, angle, distance, target: fold_ray(origin, angle, distance, side) }
    }
}

/// Uniform angle, exponential length with the given mean, folded into the
/// area at the edges.
pub fn rdd_plan_move<R: Rng + ?Sized>(origin: Position, side: f64, mean_distance: f64, rng: &mut R) -> MovePlan {
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let distance = Exp::new(1.0 / mean_distance).expect("positive mean distance").sample(rng);
    MovePlan::new(origin, angle, distance, side)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Forwarding {
    Forward(NodeId),
    Arrived,
}

/// Neighbors strictly closer to `target` than the forwarder, best first
/// (distance to target, then lowest id).
pub fn closer_neighbors(forwarder: NodeId, target: Position, neighbors: &[NodeId], positions: &[Position]) -> Vec<NodeId> {
    let own = positions[forwarder.index()].distance_sq(&target);
    let mut out: Vec<(f64, NodeId)> = neighbors
        .iter()
        .map(|&n| (positions[n.index()].distance_sq(&target), n))
        .filter(|(d, _)| *d < own)
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    out.into_iter().map(|(_, n)| n).collect()
}

/// Greedy geographic step toward `target`.
pub fn rdd_forward(forwarder: NodeId, target: Position, neighbors: &[NodeId], positions: &[Position]) -> Forwarding {
    match closer_neighbors(forwarder, target, neighbors, positions).first() {
        Some(&n) => Forwarding::Forward(n),
        None => Forwarding::Arrived,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum VoidOutcome {
    Reflect { new_target: Position },
    SelfElect,
}

/// Resolves a local minimum reached by greedy forwarding.
///
/// Within one radio range of the target, or once the reflection budget is
/// spent, the forwarder becomes the provider. Otherwise the node void is
/// treated as a wall: the heading toward the target is mirrored across the
/// axis it is most aligned with, and the remaining distance is re-planned
/// from the forwarder.
pub fn handle_void(
    forwarder_pos: Position,
    target: Position,
    reflections: u32,
    radio_range: f64,
    max_reflections: u32,
    side: f64,
) -> VoidOutcome {
    let remaining = forwarder_pos.distance(&target);
    if remaining <= radio_range || reflections >= max_reflections {
        return VoidOutcome::SelfElect;
    }
    let (mut hx, mut hy) = ((target.x - forwarder_pos.x) / remaining, (target.y - forwarder_pos.y) / remaining);
    if hx.abs() >= hy.abs() {
        hx = -hx;
    } else {
        hy = -hy;
    }
    let angle = hy.atan2(hx);
    VoidOutcome::Reflect { new_target: fold_ray(forwarder_pos, angle, remaining, side) }
}

/// Link layer used for handovers. Every transmission is acknowledged or not.
pub trait Link {
    fn transmit(&mut self, from: NodeId, to: NodeId) -> bool;
}

/// Lossless unit-disk link.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdealLink;

impl Link for IdealLink {
    fn transmit(&mut self, _from: NodeId, _to: NodeId) -> bool {
        true
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HandoverAttempt {
    pub copy: CopyId,
    pub from: NodeId,
    pub to: NodeId,
    pub acked: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Handover {
    /// The neighbor that acknowledged, if any.
    pub acked: Option<NodeId>,
    pub attempts: Vec<HandoverAttempt>,
}

/// Acknowledged transfer with retries. `choose` picks the next candidate
/// index among those not yet tried; a failed candidate is never retried.
pub fn handover<L, F>(copy: CopyId, from: NodeId, mut candidates: Vec<NodeId>, mut choose: F, link: &mut L) -> Handover
where
    L: Link + ?Sized,
    F: FnMut(&[NodeId]) -> usize,
{
    let mut attempts = Vec::new();
    while !candidates.is_empty() {
        let to = candidates.remove(choose(&candidates));
        let acked = link.transmit(from, to);
        attempts.push(HandoverAttempt { copy, from, to, acked });
        if acked {
            return Handover { acked: Some(to), attempts };
        }
    }
    Handover { acked: None, attempts }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::SpatialIndex;
    use crate::rng::{derive_stream, POLICY};
    use std::collections::HashSet;

    #[test]
    fn rwd_degenerate_cases() {
        let mut rng = derive_stream(1, POLICY, 0);
        assert_eq!(rwd_select_next(&[], &mut rng), None);
        for _ in 0..10 {
            assert_eq!(rwd_select_next(&[NodeId(7)], &mut rng), Some(NodeId(7)));
        }
    }

    #[test]
    fn rwd_is_uniform() {
        let mut rng = derive_stream(2, POLICY, 0);
        let nbrs = [NodeId(3), NodeId(5), NodeId(8), NodeId(13)];
        let mut counts = [0u32; 4];
        let n = 100_000;
        for _ in 0..n {
            let pick = rwd_select_next(&nbrs, &mut rng).unwrap();
            counts[nbrs.iter().position(|x| *x == pick).unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 0.005, "{counts:?}");
        }
    }

    #[test]
    fn plan_without_boundary() {
        let p = MovePlan::new(Position::new(250.0, 250.0), 0.0, 100.0, 500.0);
        assert!((p.target.x - 350.0).abs() < 1e-9 && (p.target.y - 250.0).abs() < 1e-9);
    }

    #[test]
    fn plan_with_one_reflection() {
        let p = MovePlan::new(Position::new(450.0, 250.0), 0.0, 100.0, 500.0);
        assert!((p.target.x - 450.0).abs() < 1e-9 && (p.target.y - 250.0).abs() < 1e-9);
    }

    #[test]
    fn plan_distribution() {
        let mut rng = derive_stream(3, POLICY, 0);
        let n = 100_000;
        let mut sum = 0.0;
        let mut bins = [0u32; 12];
        for _ in 0..n {
            let p = rdd_plan_move(Position::new(250.0, 250.0), 500.0, 100.0, &mut rng);
            assert!(p.target.is_inside(500.0));
            sum += p.distance;
            bins[((p.angle / std::f64::consts::TAU) * 12.0) as usize % 12] += 1;
        }
        let mean = sum / n as f64;
        assert!((mean - 100.0).abs() < 2.0, "mean {mean}");
        let e = n as f64 / 12.0;
        let chi2: f64 = bins.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
        // 99th percentile of chi-square with 11 degrees of freedom.
        assert!(chi2 < 24.725, "chi2 {chi2}");
    }

    #[test]
    fn greedy_picks_closest_to_target() {
        let target = Position::new(0.0, 0.0);
        let positions = vec![
            Position::new(120.0, 0.0),
            Position::new(95.0, 0.0),
            Position::new(100.0, 0.0),
            Position::new(130.0, 0.0),
        ];
        let nbrs = [NodeId(1), NodeId(2), NodeId(3)];
        assert_eq!(rdd_forward(NodeId(0), target, &nbrs, &positions), Forwarding::Forward(NodeId(1)));
        assert_eq!(rdd_forward(NodeId(0), target, &[NodeId(3)], &positions), Forwarding::Arrived);
    }

    #[test]
    fn greedy_ties_go_to_lowest_id() {
        let target = Position::new(0.0, 0.0);
        let positions = vec![Position::new(50.0, 0.0), Position::new(0.0, 40.0), Position::new(40.0, 0.0)];
        assert_eq!(
            rdd_forward(NodeId(0), target, &[NodeId(2), NodeId(1)], &positions),
            Forwarding::Forward(NodeId(1))
        );
    }

    #[test]
    fn greedy_traces_decrease_and_terminate() {
        let mut rng = derive_stream(4, POLICY, 0);
        let positions = crate::world::deploy_uniform(800, 300.0, &mut rng);
        let index = SpatialIndex::build(&positions, 300.0, 20.0);
        for start in (0..800).step_by(37) {
            let target = Position::new(rng.random_range(0.0..300.0), rng.random_range(0.0..300.0));
            let mut at = NodeId::from(start);
            let mut last = positions[at.index()].distance(&target);
            let mut hops = 0;
            while let Forwarding::Forward(next) = rdd_forward(at, target, &index.neighbors(at).unwrap(), &positions) {
                let d = positions[next.index()].distance(&target);
                assert!(d < last);
                last = d;
                at = next;
                hops += 1;
                assert!(hops <= 800);
            }
        }
    }

    #[test]
    fn void_near_target_self_elects() {
        let out = handle_void(Position::new(100.0, 100.0), Position::new(108.0, 100.0), 0, 20.0, 3, 500.0);
        assert_eq!(out, VoidOutcome::SelfElect);
    }

    #[test]
    fn void_far_from_target_reflects() {
        let from = Position::new(200.0, 250.0);
        let target = Position::new(350.0, 250.0);
        match handle_void(from, target, 0, 20.0, 3, 500.0) {
            VoidOutcome::Reflect { new_target } => {
                assert!(new_target.is_inside(500.0));
                // Mirrored heading: 150 m straight back along -x.
                assert!((new_target.x - 50.0).abs() < 1e-9, "{new_target}");
                assert!((new_target.y - 250.0).abs() < 1e-9);
            }
            other => panic!("expected reflection, got {other:?}"),
        }
        // A steep heading mirrors its vertical component instead.
        let target = Position::new(240.0, 400.0);
        match handle_void(from, target, 1, 20.0, 3, 500.0) {
            VoidOutcome::Reflect { new_target } => {
                let d = from.distance(&target);
                let expected = Position::new(from.x + 40.0, from.y - 150.0);
                assert!(new_target.distance(&expected) < 1e-9);
                assert!((from.distance(&new_target) - d).abs() < 1e-9);
            }
            other => panic!("expected reflection, got {other:?}"),
        }
    }

    #[test]
    fn void_reflection_cap() {
        let out = handle_void(Position::new(100.0, 100.0), Position::new(400.0, 400.0), 3, 20.0, 3, 500.0);
        assert_eq!(out, VoidOutcome::SelfElect);
    }

    struct FailSet(HashSet<NodeId>);
    impl Link for FailSet {
        fn transmit(&mut self, _from: NodeId, to: NodeId) -> bool {
            !self.0.contains(&to)
        }
    }

    #[test]
    fn ideal_link_acks_first_attempt() {
        let h = handover(1, NodeId(0), vec![NodeId(4), NodeId(5)], |_| 0, &mut IdealLink);
        assert_eq!(h.acked, Some(NodeId(4)));
        assert_eq!(h.attempts.len(), 1);
    }

    #[test]
    fn failed_neighbor_is_not_retried() {
        let mut link = FailSet([NodeId(4)].into());
        let h = handover(1, NodeId(0), vec![NodeId(4), NodeId(5)], |_| 0, &mut link);
        assert_eq!(h.acked, Some(NodeId(5)));
        assert_eq!(h.attempts.len(), 2);
        assert_ne!(h.attempts[0].to, h.attempts[1].to);
    }

    #[test]
    fn all_failing_leaves_copy_in_place() {
        let mut link = FailSet([NodeId(4), NodeId(5), NodeId(6)].into());
        let mut rng = derive_stream(5, POLICY, 0);
        let h = handover(
            1,
            NodeId(0),
            vec![NodeId(4), NodeId(5), NodeId(6)],
            |c| rng.random_range(0..c.len()),
            &mut link,
        );
        assert_eq!(h.acked, None);
        let tried: HashSet<_> = h.attempts.iter().map(|a| a.to).collect();
        assert_eq!(tried.len(), 3);
    }

    /// RWD on a static regular graph (a ring lattice, 4 neighbors per node):
    /// independent walkers observed after mixing occupy every node with
    /// binomial counts within 3 sigma.
    #[test]
    fn rwd_on_regular_graph_visits_uniformly() {
        let n = 40usize;
        let adj: Vec<Vec<NodeId>> = (0..n)
            .map(|i| {
                let mut v: Vec<NodeId> = [n - 2, n - 1, 1, 2].iter().map(|d| NodeId::from((i + d) % n)).collect();
                v.sort();
                v
            })
            .collect();
        let walkers = 8_000u32;
        let mut visits = vec![0u32; n];
        let base = derive_stream(6, POLICY, 0);
        for w in 0..walkers {
            let mut rng = base.substream(u64::from(w));
            let mut at = NodeId(0);
            for _ in 0..1_500 {
                at = rwd_select_next(&adj[at.index()], &mut rng).unwrap();
            }
            visits[at.index()] += 1;
        }
        let p = 1.0 / n as f64;
        let mean = walkers as f64 * p;
        let sigma = (walkers as f64 * p * (1.0 - p)).sqrt();
        for v in visits {
            assert!((v as f64 - mean).abs() < 3.0 * sigma, "{v} vs {mean} +- {sigma}");
        }
    }
}
