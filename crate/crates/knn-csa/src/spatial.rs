//! Exact k-nearest-neighbor search in Euclidean distance.
//!
//! [`KdTree`] is the optimized variant: split dimensions cycle with depth
//! and every node splits at the median element, which keeps the tree
//! balanced (depth at most ⌈log₂ n⌉ + 1) and makes construction
//! O(n log n) via repeated selection. [`brute_force_knn`] is the
//! linear-scan oracle used to verify query results; both share one
//! distance and tie-breaking rule: candidates are ordered by squared
//! Euclidean distance, ties resolved toward the smaller source index.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::dataset::Matrix;
use crate::error::{Error, Result};

const NIL: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Node {
    split_dim: u32,
    split_val: f64,
    point: u32,
    left: u32,
    right: u32,
}

/// Indices of the k nearest source rows, sorted by ascending distance
/// (ties by ascending index), with the matching Euclidean distances.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSet {
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

/// Candidate ordered by (squared distance, index); the max-heap top is the
/// least preferred neighbor.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist2: f64,
    index: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let diff = x - y;
        acc += diff * diff;
    }
    acc
}

fn validate_query(query: &[f64], d: usize, k: usize, n: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if k > n {
        return Err(Error::InvalidParameter(format!(
            "k = {k} exceeds the number of points n = {n}"
        )));
    }
    if query.len() != d {
        return Err(Error::Dimension(format!(
            "query has {} coordinates, points have {}",
            query.len(),
            d
        )));
    }
    if !query.iter().all(|v| v.is_finite()) {
        return Err(Error::Data("non-finite query coordinate".into()));
    }
    Ok(())
}

/// Balanced k-d tree over an n×d point matrix.
///
/// The tree borrows the matrix rather than copying it; queries from many
/// threads need no synchronization. Construction is deterministic: the
/// same input always yields the same node layout.
pub struct KdTree<'a> {
    points: &'a Matrix,
    nodes: Vec<Node>,
    root: u32,
}

impl<'a> KdTree<'a> {
    /// Build the tree by cycling split dimensions with depth and splitting
    /// at the median (selection, not full sort).
    pub fn build(points: &'a Matrix) -> Result<KdTree<'a>> {
        let n = points.rows();
        if n == 0 {
            return Err(Error::InvalidParameter(
                "cannot build an index over zero points".into(),
            ));
        }
        if points.cols() == 0 {
            return Err(Error::InvalidParameter(
                "cannot build an index over zero-dimensional points".into(),
            ));
        }
        if !points.is_finite() {
            return Err(Error::Data("non-finite point coordinate".into()));
        }
        let mut order: Vec<u32> = (0..n as u32).collect();
        let mut nodes = Vec::with_capacity(n);
        let root = build_rec(points, &mut order, 0, &mut nodes);
        Ok(KdTree {
            points,
            nodes,
            root,
        })
    }

    pub fn n(&self) -> usize {
        self.points.rows()
    }

    pub fn d(&self) -> usize {
        self.points.cols()
    }

    /// The k nearest source points to `query`, exactly.
    pub fn knn(&self, query: &[f64], k: usize) -> Result<NeighborSet> {
        validate_query(query, self.d(), k, self.n())?;
        if k == 1 {
            let (index, d2) = self.nearest_unchecked(query);
            return Ok(NeighborSet {
                indices: vec![index as usize],
                distances: vec![d2.sqrt()],
            });
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.search(self.root, query, k, &mut heap);
        let sorted = heap.into_sorted_vec();
        Ok(NeighborSet {
            indices: sorted.iter().map(|c| c.index as usize).collect(),
            distances: sorted.iter().map(|c| c.dist2.sqrt()).collect(),
        })
    }

    /// Index and squared distance of the single nearest point (k = 1 fast
    /// path, no heap or allocation).
    pub fn nearest(&self, query: &[f64]) -> Result<(usize, f64)> {
        validate_query(query, self.d(), 1, self.n())?;
        let (index, d2) = self.nearest_unchecked(query);
        Ok((index as usize, d2.sqrt()))
    }

    /// Smallest radius whose closed ball around `query` contains at least
    /// k source points: the distance to the k-th nearest neighbor.
    pub fn knn_radius(&self, query: &[f64], k: usize) -> Result<f64> {
        Ok(self.knn(query, k)?.distances[k - 1])
    }

    fn nearest_unchecked(&self, query: &[f64]) -> (u32, f64) {
        let mut best = Candidate {
            dist2: f64::INFINITY,
            index: NIL,
        };
        self.search_nearest(self.root, query, &mut best);
        (best.index, best.dist2)
    }

    fn search_nearest(&self, node: u32, query: &[f64], best: &mut Candidate) {
        if node == NIL {
            return;
        }
        let nd = &self.nodes[node as usize];
        let cand = Candidate {
            dist2: dist2(self.points.row(nd.point as usize), query),
            index: nd.point,
        };
        if cand < *best {
            *best = cand;
        }
        let diff = query[nd.split_dim as usize] - nd.split_val;
        let (near, far) = if diff < 0.0 {
            (nd.left, nd.right)
        } else {
            (nd.right, nd.left)
        };
        self.search_nearest(near, query, best);
        // `<=` keeps equal-distance candidates reachable so the index tie
        // rule matches the oracle even for duplicated points.
        if diff * diff <= best.dist2 {
            self.search_nearest(far, query, best);
        }
    }

    fn search(&self, node: u32, query: &[f64], k: usize, heap: &mut BinaryHeap<Candidate>) {
        if node == NIL {
            return;
        }
        let nd = &self.nodes[node as usize];
        let cand = Candidate {
            dist2: dist2(self.points.row(nd.point as usize), query),
            index: nd.point,
        };
        if heap.len() < k {
            heap.push(cand);
        } else if cand < *heap.peek().expect("heap is non-empty") {
            heap.pop();
            heap.push(cand);
        }
        let diff = query[nd.split_dim as usize] - nd.split_val;
        let (near, far) = if diff < 0.0 {
            (nd.left, nd.right)
        } else {
            (nd.right, nd.left)
        };
        self.search(near, query, k, heap);
        let must_descend = heap.len() < k || {
            let worst = heap.peek().expect("heap is non-empty").dist2;
            diff * diff <= worst
        };
        if must_descend {
            self.search(far, query, k, heap);
        }
    }

    /// Longest root-to-leaf node count.
    #[allow(dead_code)]
    pub(crate) fn depth(&self) -> usize {
        fn rec(nodes: &[Node], node: u32) -> usize {
            if node == NIL {
                return 0;
            }
            let nd = &nodes[node as usize];
            1 + rec(nodes, nd.left).max(rec(nodes, nd.right))
        }
        rec(&self.nodes, self.root)
    }

    #[cfg(test)]
    fn nodes(&self) -> &[Node] {
        &self.nodes
    }
}

fn build_rec(points: &Matrix, order: &mut [u32], depth: usize, nodes: &mut Vec<Node>) -> u32 {
    if order.is_empty() {
        return NIL;
    }
    let dim = depth % points.cols();
    let mid = order.len() / 2;
    // Total order on (coordinate, index) makes the split deterministic and
    // sends equal coordinates with smaller indices to the left subtree.
    order.select_nth_unstable_by(mid, |&a, &b| {
        points.row(a as usize)[dim]
            .total_cmp(&points.row(b as usize)[dim])
            .then(a.cmp(&b))
    });
    let point = order[mid];
    let split_val = points.row(point as usize)[dim];
    let id = nodes.len() as u32;
    nodes.push(Node {
        split_dim: dim as u32,
        split_val,
        point,
        left: NIL,
        right: NIL,
    });
    let (lo, rest) = order.split_at_mut(mid);
    let hi = &mut rest[1..];
    let left = build_rec(points, lo, depth + 1, nodes);
    let right = build_rec(points, hi, depth + 1, nodes);
    nodes[id as usize].left = left;
    nodes[id as usize].right = right;
    id
}

/// Linear-scan oracle with the same contract and tie rule as
/// [`KdTree::knn`]: full scan plus partial sort.
pub fn brute_force_knn(points: &Matrix, query: &[f64], k: usize) -> Result<NeighborSet> {
    validate_query(query, points.cols(), k, points.rows())?;
    if !points.is_finite() {
        return Err(Error::Data("non-finite point coordinate".into()));
    }
    let mut all: Vec<Candidate> = (0..points.rows())
        .map(|i| Candidate {
            dist2: dist2(points.row(i), query),
            index: i as u32,
        })
        .collect();
    if k < all.len() {
        all.select_nth_unstable(k - 1);
        all.truncate(k);
    }
    all.sort_unstable();
    Ok(NeighborSet {
        indices: all.iter().map(|c| c.index as usize).collect(),
        distances: all.iter().map(|c| c.dist2.sqrt()).collect(),
    })
}
