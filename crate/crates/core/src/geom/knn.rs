//! Exact k-nearest-neighbour search over 3-D points with a kd-tree.
//!
//! Results are ordered by ascending distance; equal distances are ordered by
//! ascending point index, so every query is fully deterministic.

use std::collections::BinaryHeap;

use super::linalg::Vec3;
use crate::error::{Error, Result};
use crate::scalar::Real;

const LEAF_SIZE: usize = 8;

#[derive(Clone, Debug)]
enum Node<T> {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: T,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug)]
pub struct KnnIndex<T> {
    points: Vec<Vec3<T>>,
    order: Vec<usize>,
    nodes: Vec<Node<T>>,
}

/// One neighbour: point index and Euclidean distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor<T> {
    pub index: usize,
    pub distance: T,
}

struct Candidate<T> {
    dist_sq: T,
    index: usize,
}

impl<T: Real> PartialEq for Candidate<T> {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == std::cmp::Ordering::Equal
    }
}
impl<T: Real> Eq for Candidate<T> {}
impl<T: Real> PartialOrd for Candidate<T> {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl<T: Real> Ord for Candidate<T> {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        crate::scalar::cmp_by_key((self.dist_sq, self.index), (o.dist_sq, o.index))
    }
}

impl<T: Real> KnnIndex<T> {
    /// Builds the index. Rejects non-finite coordinates.
    pub fn new(points: Vec<Vec3<T>>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite {
                what: "knn point",
                index: i,
            });
        }
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        if !points.is_empty() {
            build(&points, &mut order, 0, points.len(), &mut nodes);
        }
        Ok(Self {
            points,
            order,
            nodes,
        })
    }

    pub fn from_slice(points: &[Vec3<T>]) -> Result<Self> {
        Self::new(points.to_vec())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.points.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    #[inline]
    pub fn points(&self) -> &[Vec3<T>] {
        &self.points
    }

    /// Exact `k` nearest neighbours of `query`. Rejects `k > n`.
    pub fn knn(&self, query: Vec3<T>, k: usize) -> Result<Vec<Neighbor<T>>> {
        self.knn_filtered(query, k, |_| true)
    }

    /// Like [`knn`](Self::knn) but only considers indices accepted by `keep`.
    pub fn knn_filtered(
        &self,
        query: Vec3<T>,
        k: usize,
        keep: impl Fn(usize) -> bool,
    ) -> Result<Vec<Neighbor<T>>> {
        if k > self.points.len() {
            return Err(Error::TooFewPoints {
                k,
                n: self.points.len(),
            });
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, &keep, &mut heap);
        let mut out: Vec<Candidate<T>> = heap.into_vec();
        out.sort();
        Ok(out
            .into_iter()
            .map(|c| Neighbor {
                index: c.index,
                distance: c.dist_sq.sqrt(),
            })
            .collect())
    }

    fn search(
        &self,
        node: usize,
        q: Vec3<T>,
        k: usize,
        keep: &impl Fn(usize) -> bool,
        heap: &mut BinaryHeap<Candidate<T>>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if !keep(i) {
                        continue;
                    }
                    let c = Candidate {
                        dist_sq: (self.points[i] - q).norm_sq(),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("heap full") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff <= T::zero() {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, q, k, keep, heap);
                let plane = diff * diff;
                // `<=` keeps equal-distance candidates reachable for the index tie-break.
                if heap.len() < k || plane <= heap.peek().expect("non-empty").dist_sq {
                    self.search(far, q, k, keep, heap);
                }
            }
        }
    }
}

fn build<T: Real>(
    points: &[Vec3<T>],
    order: &mut [usize],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node<T>>,
) -> usize {
    let id = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let slice = &order[start..end];
    let mut lo = points[slice[0]];
    let mut hi = lo;
    for &i in slice {
        lo = lo.min_elem(points[i]);
        hi = hi.max_elem(points[i]);
    }
    let ext = hi - lo;
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    if ext[axis] == T::zero() {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let mid = (end - start) / 2;
    order[start..end].select_nth_unstable_by(mid, |&a, &b| {
        crate::scalar::cmp_by_key((points[a][axis], a), (points[b][axis], b))
    });
    let value = points[order[start + mid]][axis];
    nodes.push(Node::Leaf { start, end });
    // Left holds coordinates ≤ value, right ≥ value; the search descends both
    // sides whenever the splitting plane is within the current radius.
    let left = build(points, order, start, start + mid, nodes);
    let right = build(points, order, start + mid, end, nodes);
    nodes[id] = Node::Split {
        axis,
        value,
        left,
        right,
    };
    id
}

/// Brute-force reference used by tests: sort all points by (distance, index).
pub fn brute_force_knn<T: Real>(points: &[Vec3<T>], q: Vec3<T>, k: usize) -> Vec<Neighbor<T>> {
    let mut all: Vec<(T, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| ((*p - q).norm_sq(), i))
        .collect();
    all.sort_by(|a, b| crate::scalar::cmp_by_key(*a, *b));
    all.into_iter()
        .take(k)
        .map(|(d, i)| Neighbor {
            index: i,
            distance: d.sqrt(),
        })
        .collect()
}
