use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use traffic_dcrnn::graph::SensorGraph;
use traffic_dcrnn::model::{build_supports, seq2seq_forward, DcgruParams, FilterType, Seq2SeqConfig};
use traffic_dcrnn::numcore::{DenseTensor, Tape};

struct Case {
    edges: Vec<(usize, usize, f64)>,
    n: usize,
    batch: usize,
    inputs: Vec<DenseTensor>,
}

fn forward(case: &Case, edges: &[(usize, usize, f64)], inputs: &[DenseTensor], cfg: &Seq2SeqConfig) -> Vec<DenseTensor> {
    let graph = SensorGraph::from_edges(case.n, edges).unwrap();
    let sups = build_supports(&graph, cfg.filter_type, cfg.max_diffusion_step).batched(case.batch);
    let params = DcgruParams::init(cfg, 9).unwrap();
    let mut tape = Tape::new();
    let pv = params.record(&mut tape).unwrap();
    let xs: Vec<_> = inputs.iter().map(|x| tape.constant(x.clone()).unwrap()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let preds = seq2seq_forward(
        &mut tape,
        &sups,
        cfg.max_diffusion_step,
        &pv,
        &xs,
        None,
        cfg.look_back,
        cfg.horizon,
        0.0,
        &mut rng,
    )
    .unwrap();
    preds.iter().map(|&p| tape.value(p).clone()).collect()
}

/// Moves node `i` of every batch block to row `perm[i]`.
fn permute_rows(x: &DenseTensor, n: usize, perm: &[usize]) -> DenseTensor {
    let cols = x.cols();
    let mut out = DenseTensor::zeros(vec![x.rows(), cols]);
    for r in 0..x.rows() {
        let (b, i) = (r / n, r % n);
        for c in 0..cols {
            out.set(b * n + perm[i], c, x.get(r, c));
        }
    }
    out
}

fn case(seed: u64, n: usize, batch: usize, look_back: usize, p: usize) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.gen_bool(0.4) {
                edges.push((i, j, rng.gen_range(0.1..1.0)));
            }
        }
    }
    let inputs = (0..look_back)
        .map(|_| DenseTensor::matrix(n * batch, p, (0..n * batch * p).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap())
        .collect();
    Case { edges, n, batch, inputs }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn relabeling_nodes_permutes_forecasts(
        seed in any::<u64>(),
        n in 2usize..8,
        batch in 1usize..3,
        dual in any::<bool>(),
        k in 1usize..4,
        p in 1usize..3,
        shuffle in any::<u64>(),
    ) {
        let cfg = Seq2SeqConfig {
            input_dim: p,
            output_dim: p,
            look_back: 3,
            horizon: 2,
            layers: 2,
            units: 5,
            max_diffusion_step: k,
            filter_type: if dual { FilterType::DualRandomWalk } else { FilterType::RandomWalk },
        };
        let c = case(seed, n, batch, cfg.look_back, p);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(shuffle);
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let base = forward(&c, &c.edges, &c.inputs, &cfg);
        let edges: Vec<_> = c.edges.iter().map(|&(i, j, w)| (perm[i], perm[j], w)).collect();
        let inputs: Vec<_> = c.inputs.iter().map(|x| permute_rows(x, n, &perm)).collect();
        let relabeled = forward(&c, &edges, &inputs, &cfg);
        for (a, b) in base.iter().zip(&relabeled) {
            let expected = permute_rows(a, n, &perm);
            for (x, y) in expected.values().iter().zip(b.values()) {
                prop_assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
            }
        }
    }
}

#[test]
fn isolated_nodes_only_see_themselves() {
    // with no edges every node runs the same cell on its own history
    let cfg = Seq2SeqConfig {
        look_back: 3,
        horizon: 3,
        units: 4,
        max_diffusion_step: 2,
        filter_type: FilterType::DualRandomWalk,
        ..Seq2SeqConfig::default()
    };
    let n = 4;
    let c = Case {
        edges: Vec::new(),
        n,
        batch: 1,
        inputs: (0..3).map(|t| DenseTensor::matrix(n, 1, vec![0.5 * t as f64; n]).unwrap()).collect(),
    };
    let out = forward(&c, &[], &c.inputs, &cfg);
    for frame in &out {
        let v = frame.values();
        assert!(v.iter().all(|x| (x - v[0]).abs() < 1e-15), "{v:?}");
    }
}

#[test]
fn forecasts_are_finite_for_extreme_inputs() {
    let cfg = Seq2SeqConfig {
        look_back: 4,
        horizon: 4,
        units: 6,
        ..Seq2SeqConfig::default()
    };
    let mut c = case(3, 6, 2, 4, 1);
    for x in &mut c.inputs {
        for v in x.values_mut() {
            *v *= 1e6;
        }
    }
    let edges = c.edges.clone();
    let out = forward(&c, &edges, &c.inputs, &cfg);
    assert!(out.iter().all(DenseTensor::is_finite));
}
