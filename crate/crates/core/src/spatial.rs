//! k-nearest-neighbor distance queries against a fixed set of head positions.
//!
//! Two backends answer the same queries: a linear scan ([`Backend::BruteForce`])
//! and a static kd-tree ([`Backend::KdTree`]). Both compute every distance
//! with the same `f64` expression, so their results agree bit for bit; the
//! scan is kept as the reference the tree is tested against.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::annotations::Point;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IndexError {
    #[error("insufficient heads for k (k = {k}, heads = {heads})")]
    InsufficientHeads { k: usize, heads: usize },
    #[error("k must be positive")]
    ZeroK,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Backend {
    BruteForce,
    #[default]
    KdTree,
}

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// An immutable index over a multiset of 2D points.
#[derive(Debug, Clone)]
pub struct HeadIndex {
    points: Vec<Point>,
    backend: Backend,
    // kd-tree storage: permutation of point indices and the node arena
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl HeadIndex {
    pub fn build(heads: &[Point]) -> Self {
        Self::with_backend(heads, Backend::default())
    }

    pub fn with_backend(heads: &[Point], backend: Backend) -> Self {
        let mut index = Self {
            points: heads.to_vec(),
            backend,
            order: (0..heads.len()).collect(),
            nodes: Vec::new(),
        };
        if backend == Backend::KdTree && !heads.is_empty() {
            index.build_node(0, heads.len());
        }
        index
    }

    pub fn size(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    fn coord(&self, i: usize, axis: usize) -> f64 {
        let p = &self.points[i];
        if axis == 0 {
            p.x
        } else {
            p.y
        }
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        // split along the axis of largest spread
        let spread = |axis: usize| {
            let (lo, hi) = self.order[start..end].iter().fold((f64::MAX, f64::MIN), |(lo, hi), &i| {
                let c = self.coord(i, axis);
                (lo.min(c), hi.max(c))
            });
            hi - lo
        };
        let axis = if spread(0) >= spread(1) { 0 } else { 1 };
        let mid = start + (end - start) / 2;
        let points = &self.points;
        let key = |i: &usize| if axis == 0 { points[*i].x } else { points[*i].y };
        self.order[start..end]
            .select_nth_unstable_by(mid - start, |a, b| key(a).total_cmp(&key(b)));
        let value = key(&self.order[mid]);
        self.nodes.push(Node::Leaf { start, end }); // placeholder
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    fn check_k(&self, k: usize) -> Result<(), IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        if k > self.points.len() {
            return Err(IndexError::InsufficientHeads {
                k,
                heads: self.points.len(),
            });
        }
        Ok(())
    }

    /// The `k` smallest Euclidean distances from `query` to the indexed
    /// points, ascending.
    pub fn knn_distances(&self, query: Point, k: usize) -> Result<Vec<f64>, IndexError> {
        self.check_k(k)?;
        Ok(match self.backend {
            Backend::BruteForce => brute_force_knn(&self.points, query, k),
            Backend::KdTree => self.kd_knn(query, k),
        })
    }

    pub fn mean_knn_distance(&self, query: Point, k: usize) -> Result<f64, IndexError> {
        let d = self.knn_distances(query, k)?;
        Ok(d.iter().sum::<f64>() / k as f64)
    }

    fn kd_knn(&self, query: Point, k: usize) -> Vec<f64> {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, &mut heap);
        let mut out: Vec<f64> = heap.into_iter().map(|c: Candidate| c.dist).collect();
        out.sort_by(f64::total_cmp);
        out
    }

    fn search(&self, node: usize, q: Point, k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let dist = q.distance(&self.points[i]);
                    if heap.len() < k {
                        heap.push(Candidate { dist });
                    } else if dist < heap.peek().map_or(f64::INFINITY, |c| c.dist) {
                        heap.pop();
                        heap.push(Candidate { dist });
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let qc = if axis == 0 { q.x } else { q.y };
                let diff = qc - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, heap);
                let worst = if heap.len() < k {
                    f64::INFINITY
                } else {
                    heap.peek().map_or(f64::INFINITY, |c| c.dist)
                };
                // points on the far side are at least |diff| away
                if diff.abs() <= worst {
                    self.search(far, q, k, heap);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    dist: f64,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.dist.total_cmp(&other.dist) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist)
    }
}

/// Reference implementation: compute all distances, sort, keep the first `k`.
/// The sort is stable, so ties keep insertion order.
pub fn brute_force_knn(points: &[Point], query: Point, k: usize) -> Vec<f64> {
    let mut all: Vec<f64> = points.iter().map(|p| query.distance(p)).collect();
    all.sort_by(f64::total_cmp);
    all.truncate(k);
    all
}
