use crate::graph::SensorGraph;

/// Undirected weighted graph with vertex weights, used by the partitioner.
///
/// Adjacency is stored both ways (`u → v` and `v → u`) with equal weights;
/// self-loops are not kept.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    xadj: Vec<usize>,
    adjncy: Vec<usize>,
    adjwgt: Vec<f64>,
    vwgt: Vec<u64>,
}

impl WeightedGraph {
    /// From symmetric `(u, v, w)` triples (each undirected edge given once or
    /// both ways; weights of duplicates are summed per direction).
    pub fn from_undirected_edges(n: usize, edges: &[(usize, usize, f64)], vwgt: Vec<u64>) -> Self {
        assert_eq!(vwgt.len(), n);
        let mut lists: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(u, v, w) in edges {
            if u == v || w == 0.0 {
                continue;
            }
            lists[u].push((v, w));
            lists[v].push((u, w));
        }
        Self::from_lists(lists, vwgt)
    }

    pub(crate) fn from_lists(mut lists: Vec<Vec<(usize, f64)>>, vwgt: Vec<u64>) -> Self {
        let mut xadj = Vec::with_capacity(lists.len() + 1);
        let mut adjncy = Vec::new();
        let mut adjwgt = Vec::new();
        xadj.push(0);
        for list in lists.iter_mut() {
            list.sort_by_key(|a| a.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(list.len());
            for &(v, w) in list.iter() {
                match merged.last_mut() {
                    Some(last) if last.0 == v => last.1 += w,
                    _ => merged.push((v, w)),
                }
            }
            for (v, w) in merged {
                adjncy.push(v);
                adjwgt.push(w);
            }
            xadj.push(adjncy.len());
        }
        Self {
            xadj,
            adjncy,
            adjwgt,
            vwgt,
        }
    }

    /// Symmetrized, unit-vertex-weight view of a sensor graph; the undirected
    /// weight is `w(i,j) + w(j,i)`.
    pub fn from_sensor_graph(graph: &SensorGraph) -> Self {
        let n = graph.n_nodes();
        let mut lists: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (i, j, w) in graph.adjacency().triples() {
            if i == j {
                continue;
            }
            lists[i].push((j, w));
            lists[j].push((i, w));
        }
        Self::from_lists(lists, vec![1; n])
    }

    pub fn n_nodes(&self) -> usize {
        self.vwgt.len()
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.xadj[v]..self.xadj[v + 1];
        self.adjncy[span.clone()].iter().copied().zip(self.adjwgt[span].iter().copied())
    }

    pub fn degree(&self, v: usize) -> usize {
        self.xadj[v + 1] - self.xadj[v]
    }

    pub fn vertex_weight(&self, v: usize) -> u64 {
        self.vwgt[v]
    }

    pub fn vertex_weights(&self) -> &[u64] {
        &self.vwgt
    }

    pub fn total_vertex_weight(&self) -> u64 {
        self.vwgt.iter().sum()
    }

    pub fn n_edges(&self) -> usize {
        self.adjncy.len() / 2
    }

    pub fn total_edge_weight(&self) -> f64 {
        (0..self.n_nodes())
            .flat_map(|u| self.neighbors(u).filter(move |&(v, _)| v > u).map(|(_, w)| w))
            .sum()
    }

    /// Total weight of edges whose endpoints lie in different parts, each
    /// undirected edge counted once.
    pub fn cut(&self, part_of: &[usize]) -> f64 {
        let mut cut = 0.0;
        for u in 0..self.n_nodes() {
            for (v, w) in self.neighbors(u) {
                if v > u && part_of[u] != part_of[v] {
                    cut += w;
                }
            }
        }
        cut
    }

    pub fn part_weights(&self, part_of: &[usize], k: usize) -> Vec<u64> {
        let mut pw = vec![0u64; k];
        for (v, &p) in part_of.iter().enumerate() {
            pw[p] += self.vwgt[v];
        }
        pw
    }
}
