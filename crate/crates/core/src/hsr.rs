//! Dynamic half-space range reporting over a bounding-box tree.
//!
//! Points live in a flat arena addressed by stable [`PointId`]s. The tree is a
//! kd-style partition (median split on the widest box dimension, leaves of at
//! most [`LEAF_SIZE`] points at build time) where every node keeps the
//! axis-aligned box of its subtree. A query for `{z : <b, z> >= c}` prunes a
//! node when the box maximum of `<b, .>` is below `c` and reports it whole
//! when the box minimum already reaches `c`.
//!
//! Box extremes are summed in the same order as [`dot`], and IEEE rounding is
//! monotone, so a box bound is never on the wrong side of a contained point's
//! score. Pruning and bulk reporting are therefore exact, ties included.
//!
//! Removal tombstones a point. Boxes only ever grow between rebuilds; the
//! whole tree is rebuilt when tombstones outnumber live points or when the
//! live count doubles.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ledger::QueryCostLedger;
use crate::linalg::{dot, DenseMatrix, SupportSets};

pub const LEAF_SIZE: usize = 16;

pub type PointId = usize;

#[derive(Clone, Debug)]
enum NodeKind {
    Leaf(Vec<PointId>),
    Internal {
        axis: usize,
        split: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug)]
struct Node {
    kind: NodeKind,
}

#[derive(Clone, Debug)]
pub struct HsrTree {
    dim: usize,
    coords: Vec<f64>,
    alive: Vec<bool>,
    nodes: Vec<Node>,
    // lo then hi, `2 * dim` values per node.
    boxes: Vec<f64>,
    root: Option<usize>,
    live_count: usize,
    tombstone_count: usize,
    live_at_rebuild: usize,
    rebuilds: usize,
    audit: bool,
}

/// Visit statistics for a single query.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct QueryStats {
    pub nodes_visited: usize,
    pub leaves_visited: usize,
    pub point_tests: usize,
}

impl HsrTree {
    /// Builds a balanced tree over `points`; point `i` gets id `i`.
    pub fn new(dim: usize, points: &[Vec<f64>]) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("dimension must be at least 1".into()));
        }
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.len() != dim {
                return Err(Error::Shape(format!(
                    "point of dimension {} in a {dim}-d tree",
                    p.len()
                )));
            }
            coords.extend_from_slice(p);
        }
        Ok(Self::from_coords(dim, coords))
    }

    /// Builds over the rows of `m`; row `i` gets id `i`.
    pub fn from_rows(m: &DenseMatrix) -> Self {
        Self::from_coords(m.cols(), m.data().to_vec())
    }

    fn from_coords(dim: usize, coords: Vec<f64>) -> Self {
        let n = coords.len() / dim;
        let mut tree = Self {
            dim,
            coords,
            alive: vec![true; n],
            nodes: Vec::new(),
            boxes: Vec::new(),
            root: None,
            live_count: n,
            tombstone_count: 0,
            live_at_rebuild: n,
            rebuilds: 0,
            audit: false,
        };
        tree.rebuild();
        tree.rebuilds = 0;
        tree
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn live_count(&self) -> usize {
        self.live_count
    }

    pub fn tombstone_count(&self) -> usize {
        self.tombstone_count
    }

    pub fn rebuilds(&self) -> usize {
        self.rebuilds
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Number of internal levels on the longest root-to-leaf path.
    pub fn internal_depth(&self) -> usize {
        fn walk(t: &HsrTree, node: usize) -> usize {
            match &t.nodes[node].kind {
                NodeKind::Leaf(_) => 0,
                NodeKind::Internal { left, right, .. } => 1 + walk(t, *left).max(walk(t, *right)),
            }
        }
        self.root.map_or(0, |r| walk(self, r))
    }

    /// When on, every prune and bulk-report decision is re-checked point by
    /// point and a wrong decision panics.
    pub fn set_audit(&mut self, on: bool) {
        self.audit = on;
    }

    pub fn point(&self, id: PointId) -> &[f64] {
        &self.coords[id * self.dim..(id + 1) * self.dim]
    }

    pub fn is_live(&self, id: PointId) -> bool {
        self.alive.get(id).copied().unwrap_or(false)
    }

    fn lo(&self, node: usize) -> &[f64] {
        let base = node * 2 * self.dim;
        &self.boxes[base..base + self.dim]
    }

    fn hi(&self, node: usize) -> &[f64] {
        let base = node * 2 * self.dim + self.dim;
        &self.boxes[base..base + self.dim]
    }

    /// Bounding box of a node as `(lo, hi)`.
    pub fn node_box(&self, node: usize) -> (&[f64], &[f64]) {
        (self.lo(node), self.hi(node))
    }

    fn rebuild(&mut self) {
        let mut ids: Vec<PointId> = (0..self.alive.len()).filter(|&i| self.alive[i]).collect();
        self.nodes.clear();
        self.boxes.clear();
        self.root = if ids.is_empty() {
            None
        } else {
            Some(self.build(&mut ids))
        };
        self.tombstone_count = 0;
        self.live_at_rebuild = self.live_count;
        self.rebuilds += 1;
    }

    fn push_node(&mut self, kind: NodeKind, lo: Vec<f64>, hi: Vec<f64>) -> usize {
        self.nodes.push(Node { kind });
        self.boxes.extend_from_slice(&lo);
        self.boxes.extend_from_slice(&hi);
        self.nodes.len() - 1
    }

    fn build(&mut self, ids: &mut [PointId]) -> usize {
        let dim = self.dim;
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for &id in ids.iter() {
            for (l, &x) in self.point(id).iter().enumerate() {
                lo[l] = lo[l].min(x);
                hi[l] = hi[l].max(x);
            }
        }
        if ids.len() <= LEAF_SIZE {
            return self.push_node(NodeKind::Leaf(ids.to_vec()), lo, hi);
        }
        let axis = (0..dim)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])).then(b.cmp(&a)))
            .unwrap_or(0);
        let mid = ids.len() / 2;
        let coords = &self.coords;
        ids.select_nth_unstable_by(mid, |&a, &b| {
            coords[a * dim + axis]
                .total_cmp(&coords[b * dim + axis])
                .then(a.cmp(&b))
        });
        let split = self.coords[ids[mid] * dim + axis];
        let (left_ids, right_ids) = ids.split_at_mut(mid);
        let left = self.build(left_ids);
        let right = self.build(right_ids);
        self.push_node(
            NodeKind::Internal {
                axis,
                split,
                left,
                right,
            },
            lo,
            hi,
        )
    }

    /// Adds a point and returns its id.
    pub fn insert(&mut self, z: &[f64]) -> Result<PointId> {
        if z.len() != self.dim {
            return Err(Error::Shape(format!(
                "point of dimension {} in a {}-d tree",
                z.len(),
                self.dim
            )));
        }
        let id = self.alive.len();
        self.coords.extend_from_slice(z);
        self.alive.push(true);
        self.live_count += 1;

        if self.live_count >= 2 * self.live_at_rebuild.max(1) {
            self.rebuild();
            return Ok(id);
        }
        let Some(mut node) = self.root else {
            self.root = Some(self.push_node(NodeKind::Leaf(vec![id]), z.to_vec(), z.to_vec()));
            return Ok(id);
        };
        loop {
            let base = node * 2 * self.dim;
            for (l, &x) in z.iter().enumerate() {
                let lo = &mut self.boxes[base + l];
                *lo = lo.min(x);
                let hi = &mut self.boxes[base + self.dim + l];
                *hi = hi.max(x);
            }
            match &mut self.nodes[node].kind {
                NodeKind::Leaf(ids) => {
                    ids.push(id);
                    return Ok(id);
                }
                NodeKind::Internal {
                    axis,
                    split,
                    left,
                    right,
                } => {
                    node = if z[*axis] < *split { *left } else { *right };
                }
            }
        }
    }

    /// Tombstones a live point.
    pub fn remove(&mut self, id: PointId) -> Result<()> {
        if !self.is_live(id) {
            return Err(Error::UnknownPoint(id));
        }
        self.alive[id] = false;
        self.live_count -= 1;
        self.tombstone_count += 1;
        if self.tombstone_count > self.live_count {
            self.rebuild();
        }
        Ok(())
    }

    /// `(max, min)` of `<b, .>` over the node's box.
    fn box_extremes(&self, node: usize, b: &[f64]) -> (f64, f64) {
        let (lo, hi) = (self.lo(node), self.hi(node));
        let mut max = 0.0;
        let mut min = 0.0;
        for l in 0..b.len() {
            if b[l] >= 0.0 {
                max += b[l] * hi[l];
                min += b[l] * lo[l];
            } else {
                max += b[l] * lo[l];
                min += b[l] * hi[l];
            }
        }
        (max, min)
    }

    fn collect_live(&self, node: usize, out: &mut Vec<PointId>) {
        match &self.nodes[node].kind {
            NodeKind::Leaf(ids) => out.extend(ids.iter().copied().filter(|&id| self.alive[id])),
            NodeKind::Internal { left, right, .. } => {
                self.collect_live(*left, out);
                self.collect_live(*right, out);
            }
        }
    }

    /// Core traversal. Reported ids come with their score when the point was
    /// tested individually and `None` when reported through a whole subtree.
    fn query_raw(&self, b: &[f64], c: f64, stats: &mut QueryStats) -> Vec<(PointId, Option<f64>)> {
        let mut out = Vec::new();
        let Some(root) = self.root else { return out };
        let mut stack = vec![root];
        let mut bulk = Vec::new();
        while let Some(node) = stack.pop() {
            stats.nodes_visited += 1;
            let (max, min) = self.box_extremes(node, b);
            if max < c {
                if self.audit {
                    bulk.clear();
                    self.collect_live(node, &mut bulk);
                    assert!(
                        bulk.iter().all(|&id| dot(b, self.point(id)) < c),
                        "unsound prune"
                    );
                }
                continue;
            }
            if min >= c {
                bulk.clear();
                self.collect_live(node, &mut bulk);
                if self.audit {
                    assert!(
                        bulk.iter().all(|&id| dot(b, self.point(id)) >= c),
                        "unsound bulk report"
                    );
                }
                out.extend(bulk.iter().map(|&id| (id, None)));
                continue;
            }
            match &self.nodes[node].kind {
                NodeKind::Leaf(ids) => {
                    stats.leaves_visited += 1;
                    for &id in ids {
                        if !self.alive[id] {
                            continue;
                        }
                        stats.point_tests += 1;
                        let s = dot(b, self.point(id));
                        if s >= c {
                            out.push((id, Some(s)));
                        }
                    }
                }
                NodeKind::Internal { left, right, .. } => {
                    stack.push(*right);
                    stack.push(*left);
                }
            }
        }
        out
    }

    /// Ids of all live points `z` with `<b, z> >= c`, sorted.
    pub fn query(&self, b: &[f64], c: f64) -> Result<Vec<PointId>> {
        self.query_with_stats(b, c).map(|(ids, _)| ids)
    }

    pub fn query_with_stats(&self, b: &[f64], c: f64) -> Result<(Vec<PointId>, QueryStats)> {
        if b.len() != self.dim {
            return Err(Error::Shape(format!(
                "query of dimension {} in a {}-d tree",
                b.len(),
                self.dim
            )));
        }
        let mut stats = QueryStats::default();
        let mut ids: Vec<PointId> = self
            .query_raw(b, c, &mut stats)
            .into_iter()
            .map(|p| p.0)
            .collect();
        ids.sort_unstable();
        Ok((ids, stats))
    }
}

/// Classical support finder: a tree over the rows of `K`, queried with each
/// `Q_i` at threshold `tau`.
///
/// Ledger: one node visit and `2d` flops per box evaluated, one oracle call
/// per point tested in a leaf and one per point reported through a whole
/// subtree (its score is recomputed).
pub fn build_support_hsr(
    q: &DenseMatrix,
    k_mat: &DenseMatrix,
    tau: f64,
    ledger: &mut QueryCostLedger,
) -> Result<SupportSets> {
    if q.cols() != k_mat.cols() {
        return Err(Error::Shape(format!(
            "Q has {} columns, K has {}",
            q.cols(),
            k_mat.cols()
        )));
    }
    let tree = HsrTree::from_rows(k_mat);
    let d = q.cols();
    let per_row: Vec<(Vec<(usize, f64)>, QueryCostLedger)> = (0..q.rows())
        .into_par_iter()
        .map(|i| {
            let b = q.row(i);
            let mut stats = QueryStats::default();
            let raw = tree.query_raw(b, tau, &mut stats);
            let mut sub = QueryCostLedger::new();
            sub.nodes_visited = stats.nodes_visited as u64;
            sub.charge_flops((stats.nodes_visited * 2 * d) as u64);
            for _ in 0..stats.point_tests {
                sub.charge_oracle(d);
            }
            let hits = raw
                .into_iter()
                .map(|(id, s)| {
                    let s = s.unwrap_or_else(|| {
                        sub.charge_oracle(d);
                        dot(b, k_mat.row(id))
                    });
                    (id, s)
                })
                .collect();
            (hits, sub)
        })
        .collect();
    let mut pairs = Vec::with_capacity(per_row.len());
    for (hits, sub) in per_row {
        ledger.merge(&sub);
        pairs.push(hits);
    }
    Ok(SupportSets::from_pairs(k_mat.rows(), tau, pairs))
}
