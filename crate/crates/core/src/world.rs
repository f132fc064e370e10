//! Node deployment and node mobility.
//!
//! Three deployments are supported: uniform, the stationary distribution of
//! the random waypoint model (center-weighted), and four clusters joined by
//! bridge nodes. Mobility is static, stationary random waypoint, or random
//! trip between the four clusters.

use crate::geometry::{NodeId, Position};
use crate::netgraph::is_connected;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean distance between two uniform points in the unit square.
const UNIT_SQUARE_MEAN_DISTANCE: f64 = 0.521_405_433_164_720_7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("clustered deployment still disconnected after {attempts} draws")]
    Disconnected { attempts: u32 },
    #[error("invalid cluster layout: {0}")]
    InvalidLayout(String),
}

/// Speed and pause parameters of the random waypoint family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaypointParams {
    pub speed_min: f64,
    pub speed_max: f64,
    pub pause: f64,
}

impl Default for WaypointParams {
    fn default() -> Self {
        Self {
            speed_min: 1.0,
            speed_max: 5.0,
            pause: 10.0,
        }
    }
}

impl WaypointParams {
    pub fn draw_speed<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.speed_max > self.speed_min {
            rng.random_range(self.speed_min..self.speed_max)
        } else {
            self.speed_min
        }
    }

    /// Speed of a node observed mid-trip in steady state: density ∝ 1/v.
    fn draw_time_biased_speed<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.speed_max > self.speed_min {
            let u: f64 = rng.random();
            self.speed_min * (self.speed_max / self.speed_min).powf(u)
        } else {
            self.speed_min
        }
    }

    fn mean_inverse_speed(&self) -> f64 {
        if self.speed_max > self.speed_min {
            (self.speed_max / self.speed_min).ln() / (self.speed_max - self.speed_min)
        } else {
            1.0 / self.speed_min
        }
    }
}

/// Four points of interest with bridge nodes along the edges joining them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterLayout {
    pub centers: Vec<Position>,
    pub radius: f64,
    pub bridge_fraction: f64,
}

impl ClusterLayout {
    /// Centers at the quarter points, radius `side / 8`, 15% bridge nodes.
    pub fn default_for(side: f64) -> Self {
        let (a, b) = (side / 4.0, 3.0 * side / 4.0);
        Self {
            centers: vec![
                Position::new(a, a),
                Position::new(b, a),
                Position::new(a, b),
                Position::new(b, b),
            ],
            radius: side / 8.0,
            bridge_fraction: 0.15,
        }
    }

    pub fn validate(&self, side: f64) -> Result<(), WorldError> {
        if self.centers.len() != 4 {
            return Err(WorldError::InvalidLayout(format!(
                "expected 4 centers, got {}",
                self.centers.len()
            )));
        }
        if let Some(c) = self.centers.iter().find(|c| !c.is_inside(side)) {
            return Err(WorldError::InvalidLayout(format!("center {c} outside area")));
        }
        if !(self.radius > 0.0) {
            return Err(WorldError::InvalidLayout("radius must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.bridge_fraction) {
            return Err(WorldError::InvalidLayout("bridge_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// Uniform point in the disc of cluster `k`, clipped to the area.
    pub fn sample_in_cluster<R: Rng + ?Sized>(&self, k: usize, side: f64, rng: &mut R) -> Position {
        let r = self.radius * rng.random::<f64>().sqrt();
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let c = self.centers[k];
        Position::new(c.x + r * theta.cos(), c.y + r * theta.sin()).clamped(side)
    }

    pub fn nearest_cluster(&self, p: &Position) -> usize {
        let mut best = 0;
        for (k, c) in self.centers.iter().enumerate() {
            if c.distance_sq(p) < self.centers[best].distance_sq(p) {
                best = k;
            }
        }
        best
    }

    /// Adjacent center pairs (the sides of the square they form).
    fn bridges(&self) -> [(usize, usize); 4] {
        [(0, 1), (1, 3), (3, 2), (2, 0)]
    }
}

pub fn deploy_uniform<R: Rng + ?Sized>(n: usize, side: f64, rng: &mut R) -> Vec<Position> {
    (0..n)
        .map(|_| Position::new(rng.random_range(0.0..=side), rng.random_range(0.0..=side)))
        .collect()
}

/// Snapshot of `n` nodes moving under stationary random waypoint for
/// `warmup` seconds after a steady-state initialization.
pub fn deploy_stationary<R: Rng + ?Sized>(
    n: usize,
    side: f64,
    warmup: f64,
    params: &WaypointParams,
    rng: &mut R,
) -> Vec<Position> {
    let mut states = stationary_states(n, side, params, rng);
    let model = MobilityModel::StationaryRandomWaypoint(*params);
    advance(&mut states, warmup, &model, side, rng);
    states.iter().map(|s| s.position).collect()
}

/// Draws `n` random waypoint states directly from the steady state: paused
/// with probability `pause / (pause + E[trip time])`, otherwise mid-trip on a
/// length-biased leg with a time-biased speed.
pub fn stationary_states<R: Rng + ?Sized>(
    n: usize,
    side: f64,
    params: &WaypointParams,
    rng: &mut R,
) -> Vec<MobilityState> {
    let trip_time = UNIT_SQUARE_MEAN_DISTANCE * side * params.mean_inverse_speed();
    let p_pause = params.pause / (params.pause + trip_time);
    let max_len = side * std::f64::consts::SQRT_2;
    (0..n)
        .map(|i| {
            let node = NodeId::from(i);
            let uniform = |rng: &mut R| Position::new(rng.random_range(0.0..=side), rng.random_range(0.0..=side));
            if rng.random::<f64>() < p_pause {
                let position = uniform(rng);
                let remaining = params.pause * rng.random::<f64>();
                return MobilityState { node, position, phase: Phase::Paused { remaining }, home_cluster: None };
            }
            loop {
                let a = uniform(rng);
                let b = uniform(rng);
                let len = a.distance(&b);
                if len > 0.0 && rng.random::<f64>() * max_len < len {
                    let f: f64 = rng.random();
                    let position = Position::new(a.x + f * (b.x - a.x), a.y + f * (b.y - a.y));
                    let speed = params.draw_time_biased_speed(rng);
                    return MobilityState {
                        node,
                        position,
                        phase: Phase::Moving { destination: b, speed },
                        home_cluster: None,
                    };
                }
            }
        })
        .collect()
}

/// Nodes split evenly over the four clusters plus a bridge fraction spread
/// along the edges joining adjacent centers. Redraws until the unit-disk
/// graph at `radio_range` is connected, at most `max_draws` times.
pub fn deploy_clustered<R: Rng + ?Sized>(
    n: usize,
    side: f64,
    layout: &ClusterLayout,
    radio_range: f64,
    max_draws: u32,
    rng: &mut R,
) -> Result<Vec<Position>, WorldError> {
    layout.validate(side)?;
    for _ in 0..max_draws.max(1) {
        let positions = draw_clustered(n, side, layout, rng);
        if is_connected(&positions, side, radio_range) {
            return Ok(positions);
        }
    }
    Err(WorldError::Disconnected { attempts: max_draws.max(1) })
}

/// Number of nodes assigned to the clusters (the rest are bridges).
pub fn clustered_member_count(n: usize, bridge_fraction: f64) -> usize {
    n - (bridge_fraction * n as f64).round() as usize
}

fn draw_clustered<R: Rng + ?Sized>(n: usize, side: f64, layout: &ClusterLayout, rng: &mut R) -> Vec<Position> {
    let members = clustered_member_count(n, layout.bridge_fraction);
    let mut positions = Vec::with_capacity(n);
    for i in 0..members {
        positions.push(layout.sample_in_cluster(i % 4, side, rng));
    }
    let bridges = layout.bridges();
    for j in 0..(n - members) {
        let (a, b) = bridges[j % bridges.len()];
        let (pa, pb) = (layout.centers[a], layout.centers[b]);
        let f: f64 = rng.random();
        positions.push(Position::new(pa.x + f * (pb.x - pa.x), pa.y + f * (pb.y - pa.y)).clamped(side));
    }
    positions
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Phase {
    Paused { remaining: f64 },
    Moving { destination: Position, speed: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct MobilityState {
    pub node: NodeId,
    pub position: Position,
    pub phase: Phase,
    pub home_cluster: Option<usize>,
}

impl MobilityState {
    pub fn at_rest(node: NodeId, position: Position) -> Self {
        Self { node, position, phase: Phase::Paused { remaining: 0.0 }, home_cluster: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum MobilityModel {
    Static,
    StationaryRandomWaypoint(WaypointParams),
    RandomTrip {
        params: WaypointParams,
        layout: ClusterLayout,
        inter_cluster_probability: f64,
    },
}

/// Counts waypoint draws; used to check the inter-cluster rate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TripStats {
    pub trips: u64,
    pub inter_cluster: u64,
}

/// Random trip starting states: every node rests at its deployed position
/// for a random fraction of one pause, homed at its nearest cluster.
pub fn random_trip_states<R: Rng + ?Sized>(
    positions: &[Position],
    layout: &ClusterLayout,
    params: &WaypointParams,
    rng: &mut R,
) -> Vec<MobilityState> {
    positions
        .iter()
        .enumerate()
        .map(|(i, p)| MobilityState {
            node: NodeId::from(i),
            position: *p,
            phase: Phase::Paused { remaining: params.pause * rng.random::<f64>() },
            home_cluster: Some(layout.nearest_cluster(p)),
        })
        .collect()
}

/// Advances every node by `dt` seconds.
pub fn step_mobility<R: Rng + ?Sized>(
    states: &mut [MobilityState],
    dt: f64,
    model: &MobilityModel,
    side: f64,
    rng: &mut R,
) -> TripStats {
    let mut stats = TripStats::default();
    if matches!(model, MobilityModel::Static) {
        return stats;
    }
    for s in states.iter_mut() {
        step_one(s, dt, model, side, rng, &mut stats);
    }
    stats
}

fn advance<R: Rng + ?Sized>(states: &mut [MobilityState], horizon: f64, model: &MobilityModel, side: f64, rng: &mut R) {
    let mut t = 0.0;
    while t < horizon {
        let dt = (horizon - t).min(1.0);
        step_mobility(states, dt, model, side, rng);
        t += dt;
    }
}

fn step_one<R: Rng + ?Sized>(
    s: &mut MobilityState,
    dt: f64,
    model: &MobilityModel,
    side: f64,
    rng: &mut R,
    stats: &mut TripStats,
) {
    let params = match model {
        MobilityModel::Static => return,
        MobilityModel::StationaryRandomWaypoint(p) => p,
        MobilityModel::RandomTrip { params, .. } => params,
    };
    let mut left = dt;
    while left > 0.0 {
        match s.phase {
            Phase::Paused { remaining } => {
                if remaining > left {
                    s.phase = Phase::Paused { remaining: remaining - left };
                    return;
                }
                left -= remaining;
                let destination = next_destination(s, model, side, rng, stats);
                s.phase = Phase::Moving { destination, speed: params.draw_speed(rng) };
            }
            Phase::Moving { destination, speed } => {
                let dist = s.position.distance(&destination);
                let reach = speed * left;
                if reach < dist {
                    s.position = s.position.toward(&destination, reach).clamped(side);
                    return;
                }
                s.position = destination;
                left -= dist / speed;
                s.phase = Phase::Paused { remaining: params.pause };
            }
        }
    }
}

fn next_destination<R: Rng + ?Sized>(
    s: &mut MobilityState,
    model: &MobilityModel,
    side: f64,
    rng: &mut R,
    stats: &mut TripStats,
) -> Position {
    stats.trips += 1;
    match model {
        MobilityModel::RandomTrip { layout, inter_cluster_probability, .. } => {
            let home = s.home_cluster.unwrap_or_else(|| layout.nearest_cluster(&s.position));
            let next = if rng.random::<f64>() < *inter_cluster_probability {
                stats.inter_cluster += 1;
                let k = rng.random_range(0..layout.centers.len() - 1);
                if k >= home { k + 1 } else { k }
            } else {
                home
            };
            s.home_cluster = Some(next);
            layout.sample_in_cluster(next, side, rng)
        }
        _ => Position::new(rng.random_range(0.0..=side), rng.random_range(0.0..=side)),
    }
}
