//! Recursive bisection by greedy graph growing.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{PartitionAssignment, PartitionError, WeightedGraph};

const GROWING_TRIALS: usize = 4;

/// Splits `graph` into `k` parts by recursive bisection. Each bisection grows
/// one side from a seeded start node, always adding the frontier node whose
/// inclusion reduces the cut the most, until that side holds its share of the
/// aggregated vertex weight. The best of a few seeded trials is kept.
pub fn initial_partition(graph: &WeightedGraph, k: usize, seed: u64) -> Result<PartitionAssignment, PartitionError> {
    let n = graph.n_nodes();
    if k == 0 {
        return Err(PartitionError::InvalidK(k));
    }
    if k > n {
        return Err(PartitionError::KExceedsNodes { k, nodes: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut part_of = vec![0usize; n];
    let nodes: Vec<usize> = (0..n).collect();
    bisect_recursive(graph, &nodes, k, 0, &mut rng, &mut part_of);
    Ok(PartitionAssignment::new(part_of, k))
}

fn bisect_recursive(
    graph: &WeightedGraph,
    nodes: &[usize],
    k: usize,
    first_part: usize,
    rng: &mut ChaCha8Rng,
    part_of: &mut [usize],
) {
    if k == 1 {
        for &v in nodes {
            part_of[v] = first_part;
        }
        return;
    }
    let k_left = k / 2;
    let k_right = k - k_left;
    let (left, right) = best_bisection(graph, nodes, k_left, k_right, rng);
    bisect_recursive(graph, &left, k_left, first_part, rng, part_of);
    bisect_recursive(graph, &right, k_right, first_part + k_left, rng, part_of);
}

fn best_bisection(
    graph: &WeightedGraph,
    nodes: &[usize],
    k_left: usize,
    k_right: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<usize>) {
    let total: u64 = nodes.iter().map(|&v| graph.vertex_weight(v)).sum();
    let target = total as f64 * k_left as f64 / (k_left + k_right) as f64;
    let mut best: Option<(f64, f64, Vec<bool>)> = None;
    let trials = GROWING_TRIALS.min(nodes.len());
    for _ in 0..trials {
        let start = rng.gen_range(0..nodes.len());
        let in_left = grow(graph, nodes, start, target, k_left, k_right);
        let (cut, imbalance) = bisection_quality(graph, nodes, &in_left, target);
        let better = match &best {
            None => true,
            Some((bc, bi, _)) => (imbalance, cut) < (*bi, *bc),
        };
        if better {
            best = Some((cut, imbalance, in_left));
        }
    }
    let (_, _, in_left) = best.expect("at least one trial");
    let mut left = Vec::new();
    let mut right = Vec::new();
    for (i, &v) in nodes.iter().enumerate() {
        if in_left[i] {
            left.push(v);
        } else {
            right.push(v);
        }
    }
    (left, right)
}

/// Returns membership flags (indexed like `nodes`) of the grown side.
fn grow(graph: &WeightedGraph, nodes: &[usize], start: usize, target: f64, k_left: usize, k_right: usize) -> Vec<bool> {
    let local: HashMap<usize, usize> = nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let m = nodes.len();
    let mut in_left = vec![false; m];
    // gain[i] = weight into grown side − weight to the rest of `nodes`
    let mut gain = vec![0.0; m];
    for (i, &v) in nodes.iter().enumerate() {
        gain[i] = -graph
            .neighbors(v)
            .filter(|(u, _)| local.contains_key(u))
            .map(|(_, w)| w)
            .sum::<f64>();
    }
    let mut frontier = vec![false; m];
    let mut weight = 0.0;
    let mut count = 0;
    let max_count = m - k_right;
    let mut next = Some(start);
    while let Some(i) = next {
        in_left[i] = true;
        frontier[i] = false;
        count += 1;
        weight += graph.vertex_weight(nodes[i]) as f64;
        for (u, w) in graph.neighbors(nodes[i]) {
            if let Some(&j) = local.get(&u) {
                gain[j] += 2.0 * w;
                if !in_left[j] {
                    frontier[j] = true;
                }
            }
        }
        if count >= max_count || (weight >= target && count >= k_left) {
            break;
        }
        // keep growing while the next node brings us closer to the target
        let candidate = (0..m)
            .filter(|&j| frontier[j])
            .max_by(|&a, &b| gain[a].total_cmp(&gain[b]).then(b.cmp(&a)))
            .or_else(|| (0..m).find(|&j| !in_left[j]));
        next = match candidate {
            Some(j) => {
                let w = graph.vertex_weight(nodes[j]) as f64;
                let overshoot = (weight + w - target).abs() > (target - weight).abs();
                if overshoot && count >= k_left {
                    None
                } else {
                    Some(j)
                }
            }
            None => None,
        };
    }
    in_left
}

fn bisection_quality(graph: &WeightedGraph, nodes: &[usize], in_left: &[bool], target: f64) -> (f64, f64) {
    let side: HashMap<usize, bool> = nodes.iter().zip(in_left).map(|(&v, &s)| (v, s)).collect();
    let mut cut = 0.0;
    let mut left_w = 0.0;
    for (i, &v) in nodes.iter().enumerate() {
        if in_left[i] {
            left_w += graph.vertex_weight(v) as f64;
        }
        for (u, w) in graph.neighbors(v) {
            if u > v {
                if let Some(&su) = side.get(&u) {
                    if su != in_left[i] {
                        cut += w;
                    }
                }
            }
        }
    }
    (cut, (left_w - target).abs())
}
