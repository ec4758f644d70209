//! Static 2D index over the target points and the closest-point search the
//! alternation loops rebuild every iteration.
//!
//! The index is a bucketed KD-tree. Queries are exact: results match a
//! linear scan bit for bit, with ties on squared distance broken toward the
//! lowest target index. Build order is deterministic for a given input.

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::points::PointSet2D;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Internal { axis: u8, split: f64, left: u32, right: u32 },
    Leaf { start: u32, end: u32 },
}

/// Immutable KD-tree over 2D target points.
#[derive(Debug, Clone)]
pub struct TargetIndex {
    pts: Vec<Vector2<f64>>,
    nodes: Vec<Node>,
    order: Vec<u32>,
    root: u32,
}

/// One matched pair from a closest-point search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub source: usize,
    pub target: usize,
    pub sq_dist: f64,
}

/// Closest-point pairing for one solver iteration.
///
/// Every in-front source point appears exactly once in `pairs`; sources
/// whose projection was undefined are listed in `excluded`.
#[derive(Debug, Clone, Default)]
pub struct CorrespondenceSet {
    pub pairs: Vec<Correspondence>,
    pub excluded: Vec<usize>,
    pub iteration: usize,
}

impl CorrespondenceSet {
    /// Pair distances (not squared), in pair order.
    pub fn distances(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.sq_dist.sqrt()).collect()
    }

    pub fn squared_distances(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.sq_dist).collect()
    }
}

/// Builds the static index. Errors on an empty target set.
pub fn build_index(targets: &PointSet2D) -> Result<TargetIndex> {
    TargetIndex::build(targets)
}

/// Nearest-target pairing for each projected source point.
///
/// `projections[i]` is `None` when source `i` projected behind the camera;
/// those indices are reported in `excluded`.
pub fn closest_point_search(
    index: &TargetIndex,
    projections: &[Option<Vector2<f64>>],
    iteration: usize,
) -> CorrespondenceSet {
    let mut set = CorrespondenceSet { iteration, ..Default::default() };
    for (i, proj) in projections.iter().enumerate() {
        match proj {
            Some(q) => {
                let (target, sq_dist) = index.nearest(q);
                set.pairs.push(Correspondence { source: i, target, sq_dist });
            }
            None => set.excluded.push(i),
        }
    }
    set
}

impl TargetIndex {
    fn build(targets: &PointSet2D) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::EmptyTargetSet);
        }
        let pts = targets.points.clone();
        let mut order: Vec<u32> = (0..pts.len() as u32).collect();
        let mut nodes = Vec::new();
        let root = build_node(&pts, &mut order, 0, pts.len(), &mut nodes);
        Ok(Self { pts, nodes, order, root })
    }

    pub fn len(&self) -> usize {
        self.pts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pts.is_empty()
    }

    /// Index and squared distance of the nearest target, lowest index on
    /// ties.
    pub fn nearest(&self, q: &Vector2<f64>) -> (usize, f64) {
        let (idx, d2, _) = self.nearest_counted(q);
        (idx, d2)
    }

    /// Like [`TargetIndex::nearest`], also reporting how many tree nodes
    /// the query touched.
    pub fn nearest_counted(&self, q: &Vector2<f64>) -> (usize, f64, usize) {
        let mut best = (u32::MAX, f64::INFINITY);
        let mut visits = 0usize;
        self.nearest_rec(self.root, q, &mut best, &mut visits);
        (best.0 as usize, best.1, visits)
    }

    fn nearest_rec(&self, node: u32, q: &Vector2<f64>, best: &mut (u32, f64), visits: &mut usize) {
        *visits += 1;
        match &self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for &idx in &self.order[*start as usize..*end as usize] {
                    let p = &self.pts[idx as usize];
                    let dx = q.x - p.x;
                    let dy = q.y - p.y;
                    let d2 = dx * dx + dy * dy;
                    if d2 < best.1 || (d2 == best.1 && idx < best.0) {
                        *best = (idx, d2);
                    }
                }
            }
            Node::Internal { axis, split, left, right } => {
                let diff = q[*axis as usize] - split;
                let (near, far) = if diff < 0.0 { (*left, *right) } else { (*right, *left) };
                self.nearest_rec(near, q, best, visits);
                // <= keeps equidistant far-side candidates reachable so the
                // lowest-index tie rule matches a full linear scan.
                if diff * diff <= best.1 {
                    self.nearest_rec(far, q, best, visits);
                }
            }
        }
    }

    /// Up to `m` nearest targets within `radius`, ordered by
    /// `(squared distance, index)`. Results go into `out` (cleared first).
    pub fn nearest_within(
        &self,
        q: &Vector2<f64>,
        m: usize,
        radius: f64,
        out: &mut Vec<(usize, f64)>,
    ) {
        out.clear();
        if m == 0 {
            return;
        }
        let r2 = radius * radius;
        self.knn_rec(self.root, q, m, r2, out);
    }

    fn knn_rec(&self, node: u32, q: &Vector2<f64>, m: usize, r2: f64, out: &mut Vec<(usize, f64)>) {
        match &self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for &idx in &self.order[*start as usize..*end as usize] {
                    let p = &self.pts[idx as usize];
                    let dx = q.x - p.x;
                    let dy = q.y - p.y;
                    let d2 = dx * dx + dy * dy;
                    if d2 > r2 {
                        continue;
                    }
                    let cand = (idx as usize, d2);
                    if out.len() == m {
                        let worst = out[m - 1];
                        if (d2, cand.0) >= (worst.1, worst.0) {
                            continue;
                        }
                        out.pop();
                    }
                    let pos = out
                        .iter()
                        .position(|&(i, d)| (d2, cand.0) < (d, i))
                        .unwrap_or(out.len());
                    out.insert(pos, cand);
                }
            }
            Node::Internal { axis, split, left, right } => {
                let diff = q[*axis as usize] - split;
                let (near, far) = if diff < 0.0 { (*left, *right) } else { (*right, *left) };
                self.knn_rec(near, q, m, r2, out);
                let bound = if out.len() == m { out[m - 1].1 } else { r2 };
                if diff * diff <= bound {
                    self.knn_rec(far, q, m, r2, out);
                }
            }
        }
    }
}

fn build_node(
    pts: &[Vector2<f64>],
    order: &mut [u32],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> u32 {
    let slice_len = end - start;
    if slice_len <= LEAF_SIZE {
        nodes.push(Node::Leaf { start: start as u32, end: end as u32 });
        return (nodes.len() - 1) as u32;
    }
    let slice = &mut order[start..end];
    let axis = widest_axis(pts, slice);
    let mid = slice_len / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| {
        let ka = (pts[a as usize][axis as usize], a);
        let kb = (pts[b as usize][axis as usize], b);
        ka.partial_cmp(&kb).expect("point coordinates are finite")
    });
    let split = pts[slice[mid] as usize][axis as usize];
    let placeholder = nodes.len();
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let left = build_node(pts, order, start, start + mid, nodes);
    let right = build_node(pts, order, start + mid, end, nodes);
    nodes[placeholder] = Node::Internal { axis, split, left, right };
    placeholder as u32
}

fn widest_axis(pts: &[Vector2<f64>], slice: &[u32]) -> u8 {
    let mut lo = Vector2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Vector2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &i in slice {
        let p = &pts[i as usize];
        lo.x = lo.x.min(p.x);
        lo.y = lo.y.min(p.y);
        hi.x = hi.x.max(p.x);
        hi.y = hi.y.max(p.y);
    }
    if hi.y - lo.y > hi.x - lo.x {
        1
    } else {
        0
    }
}
