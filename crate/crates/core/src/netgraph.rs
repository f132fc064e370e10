//! Unit-disk neighbor discovery backed by a uniform grid.
//!
//! Cells are `radio_range` wide, so every neighbor of a node lies in the 3x3
//! block of cells around it. Nodes are stored in compressed (CSR) form,
//! sorted by cell and then by id.

use crate::geometry::{NodeId, Position};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("provider set is empty")]
    NoProviders,
}

#[derive(Clone, Debug)]
pub struct SpatialIndex {
    range: f64,
    cell_size: f64,
    cols: usize,
    positions: Vec<Position>,
    cell_of: Vec<u32>,
    cell_start: Vec<u32>,
    cell_nodes: Vec<u32>,
    generation: u64,
}

impl SpatialIndex {
    /// Builds an index for `positions` on a square of `area_side` meters.
    pub fn build(positions: &[Position], area_side: f64, radio_range: f64) -> Self {
        let cell_size = radio_range.max(f64::MIN_POSITIVE);
        let cols = ((area_side / cell_size).ceil() as usize).max(1);
        let mut index = Self {
            range: radio_range,
            cell_size,
            cols,
            positions: Vec::new(),
            cell_of: Vec::new(),
            cell_start: vec![0; cols * cols + 1],
            cell_nodes: Vec::new(),
            generation: 0,
        };
        index.fill(positions);
        index
    }

    /// Re-indexes the same nodes at new positions.
    pub fn rebuild(&mut self, positions: &[Position]) {
        self.fill(positions);
        self.generation += 1;
    }

    fn cell_coords(&self, p: &Position) -> (usize, usize) {
        let c = ((p.x / self.cell_size).floor().max(0.0) as usize).min(self.cols - 1);
        let r = ((p.y / self.cell_size).floor().max(0.0) as usize).min(self.cols - 1);
        (c, r)
    }

    fn fill(&mut self, positions: &[Position]) {
        self.positions.clear();
        self.positions.extend_from_slice(positions);
        self.cell_of.clear();
        let n_cells = self.cols * self.cols;
        let mut counts = vec![0u32; n_cells + 1];
        for p in positions {
            let (c, r) = self.cell_coords(p);
            let cell = (r * self.cols + c) as u32;
            self.cell_of.push(cell);
            counts[cell as usize + 1] += 1;
        }
        for i in 0..n_cells {
            counts[i + 1] += counts[i];
        }
        self.cell_start = counts.clone();
        self.cell_nodes = vec![0; positions.len()];
        // Ids are visited in ascending order, so each cell ends up sorted.
        for (id, &cell) in self.cell_of.iter().enumerate() {
            let slot = &mut counts[cell as usize];
            self.cell_nodes[*slot as usize] = id as u32;
            *slot += 1;
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn radio_range(&self) -> f64 {
        self.range
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    pub fn position(&self, node: NodeId) -> Result<Position, NetError> {
        self.positions
            .get(node.index())
            .copied()
            .ok_or(NetError::UnknownNode(node))
    }

    /// Ids stored in the cell that contains `node`.
    pub fn cell_members(&self, node: NodeId) -> Result<&[u32], NetError> {
        let cell = *self
            .cell_of
            .get(node.index())
            .ok_or(NetError::UnknownNode(node))? as usize;
        let (a, b) = (self.cell_start[cell] as usize, self.cell_start[cell + 1] as usize);
        Ok(&self.cell_nodes[a..b])
    }

    /// Nodes within radio range of `node`, excluding itself, ascending by id.
    pub fn neighbors(&self, node: NodeId) -> Result<Vec<NodeId>, NetError> {
        let mut out = Vec::new();
        self.neighbors_into(node, &mut out)?;
        Ok(out)
    }

    /// Like [`neighbors`](Self::neighbors) but reuses `out`.
    pub fn neighbors_into(&self, node: NodeId, out: &mut Vec<NodeId>) -> Result<(), NetError> {
        out.clear();
        let p = self.position(node)?;
        let (c, r) = self.cell_coords(&p);
        let range_sq = self.range * self.range;
        let (c0, c1) = (c.saturating_sub(1), (c + 1).min(self.cols - 1));
        let (r0, r1) = (r.saturating_sub(1), (r + 1).min(self.cols - 1));
        for row in r0..=r1 {
            for col in c0..=c1 {
                let cell = row * self.cols + col;
                let (a, b) = (self.cell_start[cell] as usize, self.cell_start[cell + 1] as usize);
                for &other in &self.cell_nodes[a..b] {
                    if other != node.0 && self.positions[other as usize].distance_sq(&p) <= range_sq {
                        out.push(NodeId(other));
                    }
                }
            }
        }
        out.sort_unstable();
        Ok(())
    }

    /// Euclidean distance from `node` to the nearest member of `providers`.
    pub fn closest_provider_distance(
        &self,
        node: NodeId,
        providers: &[NodeId],
    ) -> Result<f64, NetError> {
        let p = self.position(node)?;
        let mut best = f64::INFINITY;
        for &q in providers {
            if q == node {
                return Ok(0.0);
            }
            best = best.min(self.position(q)?.distance_sq(&p));
        }
        if providers.is_empty() {
            return Err(NetError::NoProviders);
        }
        Ok(best.sqrt())
    }
}

/// Per-node neighbor lists computed lazily against one index generation.
#[derive(Clone, Debug, Default)]
pub struct NeighborCache {
    lists: Vec<Vec<NodeId>>,
    stamp: Vec<u64>,
}

impl NeighborCache {
    pub fn new(n: usize) -> Self {
        Self {
            lists: vec![Vec::new(); n],
            stamp: vec![u64::MAX; n],
        }
    }

    pub fn get(&mut self, index: &SpatialIndex, node: NodeId) -> &[NodeId] {
        let i = node.index();
        if self.stamp[i] != index.generation() {
            index
                .neighbors_into(node, &mut self.lists[i])
                .expect("neighbor cache sized to the index");
            self.stamp[i] = index.generation();
        }
        &self.lists[i]
    }
}

/// True when the unit-disk graph over `positions` is connected.
pub fn is_connected(positions: &[Position], area_side: f64, radio_range: f64) -> bool {
    if positions.len() <= 1 {
        return true;
    }
    let index = SpatialIndex::build(positions, area_side, radio_range);
    let mut seen = vec![false; positions.len()];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut reached = 1;
    let mut buf = Vec::new();
    while let Some(v) = stack.pop() {
        index.neighbors_into(NodeId::from(v), &mut buf).expect("node in index");
        for w in &buf {
            if !seen[w.index()] {
                seen[w.index()] = true;
                reached += 1;
                stack.push(w.index());
            }
        }
    }
    reached == positions.len()
}
