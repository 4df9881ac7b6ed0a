//! Overlapping (halo) nodes borrowed from neighboring partitions.

use std::collections::{BTreeMap, BTreeSet};

use crate::graph::{DistanceProvider, GraphError};

use super::PartitionAssignment;

/// Halo selection for one part.
///
/// Candidates are, for each member `v` of `part`, the `horizon_k` nodes
/// nearest to `v` by provider distance, minus the part's own nodes. They are
/// scanned by ascending distance to the part (minimum over members, ties by
/// node index) and a candidate is kept only if it is farther than `d_prime`
/// from every halo kept so far, in both directions.
pub fn add_overlap_nodes(
    assignment: &PartitionAssignment,
    part: usize,
    horizon_k: usize,
    d_prime: f64,
    provider: &dyn DistanceProvider,
) -> Result<Vec<usize>, GraphError> {
    assert!(horizon_k >= 1, "horizon_k must be at least 1");
    assert!(d_prime > 0.0, "d_prime must be positive");
    let n = assignment.part_of().len();
    let members: Vec<usize> = (0..n).filter(|&v| assignment.part_of()[v] == part).collect();
    let member_set: BTreeSet<usize> = members.iter().copied().collect();

    let mut dist_to_part: BTreeMap<usize, f64> = BTreeMap::new();
    for &v in &members {
        let mut ranked = Vec::with_capacity(n.saturating_sub(1));
        for u in (0..n).filter(|&u| u != v) {
            ranked.push((provider.distance(v, u)?, u));
        }
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(d, u) in ranked.iter().take(horizon_k) {
            if member_set.contains(&u) {
                continue;
            }
            let entry = dist_to_part.entry(u).or_insert(f64::INFINITY);
            *entry = entry.min(d);
        }
    }
    // exact distance-to-part uses every member, not only those that listed u
    let mut candidates = Vec::with_capacity(dist_to_part.len());
    for (&u, _) in dist_to_part.iter() {
        let mut best = f64::INFINITY;
        for &v in &members {
            best = best.min(provider.distance(v, u)?);
        }
        candidates.push((best, u));
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut kept: Vec<usize> = Vec::new();
    'scan: for (_, c) in candidates {
        for &h in &kept {
            if provider.distance(h, c)? <= d_prime || provider.distance(c, h)? <= d_prime {
                continue 'scan;
            }
        }
        kept.push(c);
    }
    Ok(kept)
}
