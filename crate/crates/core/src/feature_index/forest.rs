//! Forest of randomized hyperplane partition trees over unit-normalized
//! vectors, searched best-bin-first across all trees with a shared priority
//! queue.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
enum Node {
    Split {
        /// Offset into `Forest::planes`.
        plane: usize,
        offset: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        start: u32,
        end: u32,
    },
}

#[derive(Debug, Clone)]
pub(crate) struct Forest {
    dim: usize,
    nodes: Vec<Node>,
    roots: Vec<u32>,
    planes: Vec<f64>,
    /// Item ids referenced by leaves.
    leaf_items: Vec<u32>,
}

struct Builder<'a> {
    dim: usize,
    unit: &'a [f64],
    leaf_size: usize,
    rng: ChaCha8Rng,
    forest: Forest,
}

impl Forest {
    /// `unit` holds `n * dim` normalized coordinates.
    pub(crate) fn build(unit: &[f64], dim: usize, trees: usize, leaf_size: usize, seed: u64) -> Self {
        let n = unit.len() / dim;
        let mut b = Builder {
            dim,
            unit,
            leaf_size: leaf_size.max(1),
            rng: ChaCha8Rng::seed_from_u64(seed),
            forest: Forest {
                dim,
                nodes: Vec::new(),
                roots: Vec::new(),
                planes: Vec::new(),
                leaf_items: Vec::with_capacity(n * trees),
            },
        };
        for _ in 0..trees.max(1) {
            let mut items: Vec<u32> = (0..n as u32).collect();
            let root = b.split(&mut items);
            b.forest.roots.push(root);
        }
        b.forest
    }

    /// Collects at least `budget` item ids (with repeats across trees) by
    /// visiting leaves in order of decreasing margin to the query.
    pub(crate) fn candidates(&self, unit_query: &[f64], budget: usize, mut visit: impl FnMut(u32) -> bool) {
        let mut heap: BinaryHeap<Pending> = self
            .roots
            .iter()
            .map(|&node| Pending {
                priority: f64::INFINITY,
                node,
            })
            .collect();
        let mut accepted = 0usize;
        while let Some(Pending { priority, node }) = heap.pop() {
            match &self.nodes[node as usize] {
                Node::Leaf { start, end } => {
                    for &item in &self.leaf_items[*start as usize..*end as usize] {
                        if visit(item) {
                            accepted += 1;
                        }
                    }
                    if accepted >= budget {
                        return;
                    }
                }
                Node::Split {
                    plane,
                    offset,
                    left,
                    right,
                } => {
                    let normal = &self.planes[*plane..*plane + self.dim];
                    let margin = dot(normal, unit_query) - offset;
                    heap.push(Pending {
                        priority: priority.min(margin),
                        node: *right,
                    });
                    heap.push(Pending {
                        priority: priority.min(-margin),
                        node: *left,
                    });
                }
            }
        }
    }
}

impl Builder<'_> {
    fn row(&self, i: u32) -> &[f64] {
        &self.unit[i as usize * self.dim..(i as usize + 1) * self.dim]
    }

    fn leaf(&mut self, items: &[u32]) -> u32 {
        let start = self.forest.leaf_items.len() as u32;
        self.forest.leaf_items.extend_from_slice(items);
        let end = self.forest.leaf_items.len() as u32;
        self.forest.nodes.push(Node::Leaf { start, end });
        (self.forest.nodes.len() - 1) as u32
    }

    fn split(&mut self, items: &mut [u32]) -> u32 {
        if items.len() <= self.leaf_size {
            return self.leaf(items);
        }
        let (normal, offset) = match self.hyperplane(items) {
            Some(h) => h,
            None => return self.leaf(items),
        };
        let mut sides: Vec<bool> = items
            .iter()
            .map(|&i| dot(&normal, self.row(i)) - offset > 0.0)
            .collect();
        let right_count = sides.iter().filter(|&&s| s).count();
        if right_count == 0 || right_count == items.len() {
            // duplicates or a degenerate plane: split at random
            for s in sides.iter_mut() {
                *s = self.rng.random_bool(0.5);
            }
        }
        let mut pairs: Vec<(bool, u32)> = sides.into_iter().zip(items.iter().copied()).collect();
        pairs.sort_by_key(|&(s, _)| s);
        for (slot, (_, item)) in items.iter_mut().zip(&pairs) {
            *slot = *item;
        }
        let mid = pairs.iter().position(|&(s, _)| s).unwrap_or(items.len());
        let mid = if mid == 0 || mid == items.len() { items.len() / 2 } else { mid };

        let plane = self.forest.planes.len();
        self.forest.planes.extend_from_slice(&normal);
        let idx = self.forest.nodes.len();
        self.forest.nodes.push(Node::Leaf { start: 0, end: 0 });
        let (lo, hi) = items.split_at_mut(mid);
        let left = self.split(lo);
        let right = self.split(hi);
        self.forest.nodes[idx] = Node::Split {
            plane,
            offset,
            left,
            right,
        };
        idx as u32
    }

    /// Plane bisecting two centroids refined by a couple of 2-means rounds
    /// seeded with random items.
    fn hyperplane(&mut self, items: &[u32]) -> Option<(Vec<f64>, f64)> {
        let pick = sample(&mut self.rng, items.len(), 2);
        let mut a = self.row(items[pick.index(0)]).to_vec();
        let mut b = self.row(items[pick.index(1)]).to_vec();
        let rounds = 2;
        let probe = items.len().min(64);
        for _ in 0..rounds {
            let mut sa = vec![0.0; self.dim];
            let mut sb = vec![0.0; self.dim];
            let (mut na, mut nb) = (0usize, 0usize);
            for _ in 0..probe {
                let pick = items[self.rng.random_range(0..items.len())];
                let v = self.row(pick);
                if sq_dist(v, &a) <= sq_dist(v, &b) {
                    add(&mut sa, v);
                    na += 1;
                } else {
                    add(&mut sb, v);
                    nb += 1;
                }
            }
            if na == 0 || nb == 0 {
                break;
            }
            a = sa.into_iter().map(|x| x / na as f64).collect();
            b = sb.into_iter().map(|x| x / nb as f64).collect();
        }
        let mut normal: Vec<f64> = a.iter().zip(&b).map(|(x, y)| y - x).collect();
        let len = dot(&normal, &normal).sqrt();
        if len == 0.0 || !len.is_finite() {
            return None;
        }
        normal.iter_mut().for_each(|x| *x /= len);
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x + y) / 2.0).collect();
        let offset = dot(&normal, &mid);
        Some((normal, offset))
    }
}

struct Pending {
    priority: f64,
    node: u32,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority
            .total_cmp(&other.priority)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn add(acc: &mut [f64], v: &[f64]) {
    acc.iter_mut().zip(v).for_each(|(a, x)| *a += x);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_item_in_every_tree() {
        let dim = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let unit: Vec<f64> = (0..200 * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = Forest::build(&unit, dim, 3, 8, 9);
        assert_eq!(f.roots.len(), 3);
        let mut counts = vec![0; 200];
        for &i in &f.leaf_items {
            counts[i as usize] += 1;
        }
        assert!(counts.iter().all(|&c| c == 3));
        for node in &f.nodes {
            if let Node::Leaf { start, end } = node {
                assert!(end - start <= 8 || end == start);
            }
        }
    }

    #[test]
    fn identical_vectors_still_terminate() {
        let unit = [1.0, 0.0].repeat(100);
        let f = Forest::build(&unit, 2, 2, 4, 3);
        let mut seen = 0;
        f.candidates(&[1.0, 0.0], usize::MAX, |_| {
            seen += 1;
            true
        });
        assert_eq!(seen, 200);
    }
}
