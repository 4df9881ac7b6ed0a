//! Heavy-edge matching.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::WeightedGraph;

/// One coarsening step: the coarse graph plus the fine → coarse node map.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseLevel {
    pub graph: WeightedGraph,
    pub match_map: Vec<usize>,
    pub level: usize,
}

const MIN_SHRINK: f64 = 0.10;

/// Matches every unmatched node (in `order`) to its unmatched neighbor with
/// the heaviest connecting edge, ties to the lower index. Pairs whose
/// combined vertex weight would exceed `max_vwgt` are not formed.
pub fn match_heavy_edges(graph: &WeightedGraph, order: &[usize], max_vwgt: u64) -> (WeightedGraph, Vec<usize>) {
    let n = graph.n_nodes();
    let mut mate = vec![usize::MAX; n];
    for &v in order {
        if mate[v] != usize::MAX {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (u, w) in graph.neighbors(v) {
            if mate[u] != usize::MAX || u == v {
                continue;
            }
            if graph.vertex_weight(u) + graph.vertex_weight(v) > max_vwgt {
                continue;
            }
            let better = match best {
                None => true,
                Some((bu, bw)) => w > bw || (w == bw && u < bu),
            };
            if better {
                best = Some((u, w));
            }
        }
        match best {
            Some((u, _)) => {
                mate[v] = u;
                mate[u] = v;
            }
            None => mate[v] = v,
        }
    }

    let mut cmap = vec![usize::MAX; n];
    let mut next = 0;
    let mut cvwgt = Vec::new();
    for v in 0..n {
        if cmap[v] != usize::MAX {
            continue;
        }
        cmap[v] = next;
        let mut w = graph.vertex_weight(v);
        let m = mate[v];
        if m != v {
            cmap[m] = next;
            w += graph.vertex_weight(m);
        }
        cvwgt.push(w);
        next += 1;
    }

    let mut lists: Vec<Vec<(usize, f64)>> = vec![Vec::new(); next];
    for u in 0..n {
        for (v, w) in graph.neighbors(u) {
            let (cu, cv) = (cmap[u], cmap[v]);
            if cu != cv {
                lists[cu].push((cv, w));
            }
        }
    }
    (WeightedGraph::from_lists(lists, cvwgt), cmap)
}

/// Successive heavy-edge-matching levels, finest first. Stops once the node
/// count is at most `min_size` or a round shrinks the graph by less than 10%
/// (that round is discarded).
pub fn coarsen(graph: &WeightedGraph, min_size: usize, seed: u64) -> Vec<CoarseLevel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = graph.total_vertex_weight();
    let max_vwgt = ((1.5 * total as f64) / min_size.max(1) as f64).ceil().max(2.0) as u64;
    let mut levels: Vec<CoarseLevel> = Vec::new();
    let mut current = graph.clone();
    while current.n_nodes() > min_size {
        let mut order: Vec<usize> = (0..current.n_nodes()).collect();
        order.shuffle(&mut rng);
        let (coarse, cmap) = match_heavy_edges(&current, &order, max_vwgt);
        let shrink = 1.0 - coarse.n_nodes() as f64 / current.n_nodes() as f64;
        if shrink < MIN_SHRINK {
            break;
        }
        levels.push(CoarseLevel {
            graph: coarse.clone(),
            match_map: cmap,
            level: levels.len() + 1,
        });
        current = coarse;
    }
    levels
}
