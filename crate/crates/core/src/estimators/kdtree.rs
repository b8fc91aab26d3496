//! Exact k-d tree for nearest-neighbor and radius-count queries.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const LEAF_SIZE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    /// Max-norm.
    Chebyshev,
    Euclidean,
}

impl Metric {
    /// Distance in internal units (squared for Euclidean).
    #[inline]
    fn raw(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Chebyshev => a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max),
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
        }
    }

    /// Lower bound, in internal units, for points across a split plane.
    #[inline]
    fn axis(self, diff: f64) -> f64 {
        match self {
            Metric::Chebyshev => diff.abs(),
            Metric::Euclidean => diff * diff,
        }
    }

    #[inline]
    fn to_raw(self, d: f64) -> f64 {
        match self {
            Metric::Chebyshev => d,
            Metric::Euclidean => d * d,
        }
    }

    #[inline]
    fn from_raw(self, r: f64) -> f64 {
        match self {
            Metric::Chebyshev => r,
            Metric::Euclidean => r.sqrt(),
        }
    }
}

enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f64, left: usize, right: usize },
}

/// Tree over the rows of a row-major `n × dim` buffer.
pub struct KdTree<'a> {
    points: &'a [f64],
    dim: usize,
    metric: Metric,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

/// Max-heap entry ordered by distance, then index.
#[derive(PartialEq)]
struct Candidate(f64, usize);

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [f64], dim: usize, metric: Metric) -> Self {
        assert!(dim > 0 && points.len().is_multiple_of(dim), "buffer is not n × {dim}");
        let n = points.len() / dim;
        let mut tree = Self {
            points,
            dim,
            metric,
            order: (0..n).collect(),
            nodes: Vec::new(),
        };
        if n > 0 {
            tree.build(0, n);
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn coord(&self, i: usize, d: usize) -> f64 {
        self.points[i * self.dim + d]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        // split on the dimension with the widest spread
        let mut best = (0, -1.0);
        for d in 0..self.dim {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in &self.order[start..end] {
                let v = self.coord(i, d);
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > best.1 {
                best = (d, hi - lo);
            }
        }
        let dim = best.0;
        let mid = start + (end - start) / 2;
        let (pts, stride) = (self.points, self.dim);
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a * stride + dim].total_cmp(&pts[b * stride + dim])
        });
        let value = self.coord(self.order[mid], dim);
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split { dim, value, left, right };
        id
    }

    /// The `k` nearest rows to `query` as `(distance, index)`, nearest first,
    /// ties broken by lower index. `exclude` drops one row (the query itself).
    pub fn nearest(&self, query: &[f64], k: usize, exclude: Option<usize>) -> Vec<(f64, usize)> {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if k > 0 && !self.nodes.is_empty() {
            self.nearest_in(0, query, k, exclude, &mut heap);
        }
        let mut out: Vec<(f64, usize)> = heap
            .into_sorted_vec()
            .into_iter()
            .map(|Candidate(d, i)| (self.metric.from_raw(d), i))
            .collect();
        out.truncate(k);
        out
    }

    fn nearest_in(&self, node: usize, q: &[f64], k: usize, exclude: Option<usize>, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if Some(i) == exclude {
                        continue;
                    }
                    let c = Candidate(self.metric.raw(q, self.point(i)), i);
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("non-empty") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = q[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.nearest_in(near, q, k, exclude, heap);
                let bound = self.metric.axis(diff);
                // `<=` keeps equal-distance candidates with lower indices reachable
                if heap.len() < k || bound <= heap.peek().expect("non-empty").0 {
                    self.nearest_in(far, q, k, exclude, heap);
                }
            }
        }
    }

    /// Number of rows strictly closer than `radius` to `query`.
    pub fn count_within(&self, query: &[f64], radius: f64) -> usize {
        if self.nodes.is_empty() {
            return 0;
        }
        self.count_in(0, query, self.metric.to_raw(radius))
    }

    fn count_in(&self, node: usize, q: &[f64], r: f64) -> usize {
        match self.nodes[node] {
            Node::Leaf { start, end } => self.order[start..end]
                .iter()
                .filter(|&&i| self.metric.raw(q, self.point(i)) < r)
                .count(),
            Node::Split { dim, value, left, right } => {
                let diff = q[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                let mut c = self.count_in(near, q, r);
                if self.metric.axis(diff) < r {
                    c += self.count_in(far, q, r);
                }
                c
            }
        }
    }
}
