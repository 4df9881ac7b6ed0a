use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AnalysisError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureColumn {
    Numeric(Vec<f64>),
    Categorical(Vec<String>),
}

impl FeatureColumn {
    fn len(&self) -> usize {
        match self {
            FeatureColumn::Numeric(v) => v.len(),
            FeatureColumn::Categorical(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub names: Vec<String>,
    pub columns: Vec<FeatureColumn>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn n_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }
}

/// Goes left when the test holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SplitTest {
    LessOrEqual(f64),
    Equals(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CartNode {
    Leaf {
        counts: Vec<usize>,
        class: usize,
    },
    Split {
        feature: usize,
        test: SplitTest,
        counts: Vec<usize>,
        left: Box<CartNode>,
        right: Box<CartNode>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartTree {
    pub feature_names: Vec<String>,
    pub root: CartNode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartConfig {
    pub max_depth: usize,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for CartConfig {
    fn default() -> Self {
        Self {
            max_depth: 8,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartResult {
    pub tree: CartTree,
    pub train_accuracy: f64,
    /// NaN when the test split is empty.
    pub test_accuracy: f64,
    /// Normalized Gini decrease per feature; all zero without splits.
    pub importances: Vec<(String, f64)>,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
}

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

fn class_counts(labels: &[usize], rows: &[usize], k: usize) -> Vec<usize> {
    let mut c = vec![0; k];
    for &r in rows {
        c[labels[r]] += 1;
    }
    c
}

fn majority(counts: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

struct Builder<'a> {
    data: &'a Dataset,
    k: usize,
    max_depth: usize,
    decrease: Vec<f64>,
}

impl Builder<'_> {
    fn goes_left(&self, feature: usize, test: &SplitTest, row: usize) -> bool {
        match (&self.data.columns[feature], test) {
            (FeatureColumn::Numeric(v), SplitTest::LessOrEqual(t)) => v[row] <= *t,
            (FeatureColumn::Categorical(v), SplitTest::Equals(c)) => &v[row] == c,
            _ => false,
        }
    }

    /// Best `(weighted impurity decrease, feature, test)` over all features.
    fn best_split(&self, rows: &[usize], parent: f64) -> Option<(f64, usize, SplitTest)> {
        let n = rows.len();
        let labels = &self.data.labels;
        let mut best: Option<(f64, usize, SplitTest)> = None;
        let mut consider = |gain: f64, feature: usize, test: SplitTest| {
            if gain > 1e-12 && best.as_ref().is_none_or(|b| gain > b.0 + 1e-12) {
                best = Some((gain, feature, test));
            }
        };
        for (f, col) in self.data.columns.iter().enumerate() {
            match col {
                FeatureColumn::Numeric(v) => {
                    let mut sorted: Vec<usize> = rows.to_vec();
                    sorted.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
                    let total = class_counts(labels, rows, self.k);
                    let mut left = vec![0; self.k];
                    for i in 0..n - 1 {
                        left[labels[sorted[i]]] += 1;
                        let (a, b) = (v[sorted[i]], v[sorted[i + 1]]);
                        if a == b {
                            continue;
                        }
                        let right: Vec<usize> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
                        let (nl, nr) = (i + 1, n - i - 1);
                        let gain = n as f64 * parent - nl as f64 * gini(&left, nl) - nr as f64 * gini(&right, nr);
                        consider(gain, f, SplitTest::LessOrEqual(a + (b - a) / 2.0));
                    }
                }
                FeatureColumn::Categorical(v) => {
                    let mut cats: Vec<&String> = rows.iter().map(|&r| &v[r]).collect();
                    cats.sort();
                    cats.dedup();
                    if cats.len() < 2 {
                        continue;
                    }
                    for c in cats {
                        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&row| &v[row] == c);
                        let gain = n as f64 * parent
                            - l.len() as f64 * gini(&class_counts(labels, &l, self.k), l.len())
                            - r.len() as f64 * gini(&class_counts(labels, &r, self.k), r.len());
                        consider(gain, f, SplitTest::Equals(c.clone()));
                    }
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: &[usize], depth: usize) -> CartNode {
        let counts = class_counts(&self.data.labels, rows, self.k);
        let parent = gini(&counts, rows.len());
        let leaf = |counts: Vec<usize>| CartNode::Leaf {
            class: majority(&counts),
            counts,
        };
        if depth >= self.max_depth || parent == 0.0 || rows.len() < 2 {
            return leaf(counts);
        }
        let Some((gain, feature, test)) = self.best_split(rows, parent) else {
            return leaf(counts);
        };
        self.decrease[feature] += gain;
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&row| self.goes_left(feature, &test, row));
        CartNode::Split {
            feature,
            left: Box::new(self.grow(&l, depth + 1)),
            right: Box::new(self.grow(&r, depth + 1)),
            test,
            counts,
        }
    }
}

impl CartTree {
    pub fn predict(&self, data: &Dataset, row: usize) -> usize {
        let mut node = &self.root;
        loop {
            match node {
                CartNode::Leaf { class, .. } => return *class,
                CartNode::Split {
                    feature,
                    test,
                    left,
                    right,
                    ..
                } => {
                    let go_left = match (&data.columns[*feature], test) {
                        (FeatureColumn::Numeric(v), SplitTest::LessOrEqual(t)) => v[row] <= *t,
                        (FeatureColumn::Categorical(v), SplitTest::Equals(c)) => &v[row] == c,
                        _ => false,
                    };
                    node = if go_left { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn d(n: &CartNode) -> usize {
            match n {
                CartNode::Leaf { .. } => 0,
                CartNode::Split { left, right, .. } => 1 + d(left).max(d(right)),
            }
        }
        d(&self.root)
    }

    pub fn accuracy(&self, data: &Dataset, rows: &[usize]) -> f64 {
        if rows.is_empty() {
            return f64::NAN;
        }
        let hits = rows.iter().filter(|&&r| self.predict(data, r) == data.labels[r]).count();
        hits as f64 / rows.len() as f64
    }
}

/// Greedy Gini CART on a seeded train/test split of `data`.
pub fn train_cart(data: &Dataset, config: &CartConfig) -> Result<CartResult, AnalysisError> {
    if data.is_empty() {
        return Err(AnalysisError::Empty);
    }
    if data.names.len() != data.columns.len() || data.columns.iter().any(|c| c.len() != data.len()) {
        return Err(AnalysisError::Shape("feature columns and labels differ in length".into()));
    }
    if !(0.0..1.0).contains(&config.test_fraction) {
        return Err(AnalysisError::Shape(format!("test fraction {}", config.test_fraction)));
    }
    let mut rows: Vec<usize> = (0..data.len()).collect();
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let n_test = (data.len() as f64 * config.test_fraction).round() as usize;
    let n_test = n_test.min(data.len() - 1);
    let test_rows = rows.split_off(data.len() - n_test);
    let train_rows = rows;

    let mut b = Builder {
        data,
        k: data.n_classes(),
        max_depth: config.max_depth,
        decrease: vec![0.0; data.columns.len()],
    };
    let root = b.grow(&train_rows, 0);
    let total: f64 = b.decrease.iter().sum();
    let importances = data
        .names
        .iter()
        .zip(&b.decrease)
        .map(|(n, &d)| (n.clone(), if total > 0.0 { d / total } else { 0.0 }))
        .collect();
    let tree = CartTree {
        feature_names: data.names.clone(),
        root,
    };
    Ok(CartResult {
        train_accuracy: tree.accuracy(data, &train_rows),
        test_accuracy: tree.accuracy(data, &test_rows),
        tree,
        importances,
        train_rows,
        test_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_feature(xs: &[f64], threshold: f64) -> Dataset {
        Dataset {
            names: vec!["cov".into()],
            columns: vec![FeatureColumn::Numeric(xs.to_vec())],
            labels: xs.iter().map(|&x| usize::from(x > threshold)).collect(),
        }
    }

    #[test]
    fn single_perfect_split() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64 / 50.0).collect();
        let r = train_cart(&one_feature(&xs, 0.3), &CartConfig::default()).unwrap();
        assert_eq!(r.train_accuracy, 1.0);
        assert_eq!(r.importances, vec![("cov".to_string(), 1.0)]);
        assert_eq!(r.tree.depth(), 1);
    }

    #[test]
    fn constant_feature_has_no_importance() {
        let xs: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let data = Dataset {
            names: vec!["x".into(), "const".into(), "cat".into()],
            columns: vec![
                FeatureColumn::Numeric(xs.clone()),
                FeatureColumn::Numeric(vec![1.0; 40]),
                FeatureColumn::Categorical(vec!["a".into(); 40]),
            ],
            labels: xs.iter().map(|&x| usize::from(x >= 20.0)).collect(),
        };
        let r = train_cart(&data, &CartConfig::default()).unwrap();
        assert_eq!(r.importances[1].1, 0.0);
        assert_eq!(r.importances[2].1, 0.0);
    }

    #[test]
    fn categorical_one_vs_rest() {
        let cats = ["x", "y", "z"];
        let data = Dataset {
            names: vec!["c".into()],
            columns: vec![FeatureColumn::Categorical((0..30).map(|i| cats[i % 3].to_string()).collect())],
            labels: (0..30).map(|i| usize::from(i % 3 == 1)).collect(),
        };
        let r = train_cart(&data, &CartConfig::default()).unwrap();
        assert_eq!(r.train_accuracy, 1.0);
        match &r.tree.root {
            CartNode::Split { test, .. } => assert_eq!(test, &SplitTest::Equals("y".into())),
            leaf => panic!("expected a split, got {leaf:?}"),
        }
    }

    #[test]
    fn single_class_gives_trivial_tree() {
        let data = Dataset {
            names: vec!["x".into()],
            columns: vec![FeatureColumn::Numeric(vec![1.0, 2.0, 3.0])],
            labels: vec![2, 2, 2],
        };
        let r = train_cart(&data, &CartConfig::default()).unwrap();
        assert!(matches!(r.tree.root, CartNode::Leaf { class: 2, .. }));
        assert_eq!(r.importances[0].1, 0.0);
        assert!(train_cart(
            &Dataset {
                names: vec![],
                columns: vec![],
                labels: vec![]
            },
            &CartConfig::default()
        )
        .is_err());
    }

    #[test]
    fn split_is_seeded() {
        let xs: Vec<f64> = (0..30).map(|i| ((i * 7) % 30) as f64).collect();
        let d = one_feature(&xs, 10.0);
        let a = train_cart(&d, &CartConfig::default()).unwrap();
        let b = train_cart(&d, &CartConfig::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.test_rows.len(), 6);
    }

    fn noisy(seed: u64) -> Dataset {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 80;
        let a: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let b: Vec<String> = (0..n).map(|_| ["p", "q", "r"][rng.gen_range(0..3)].to_string()).collect();
        let labels = (0..n).map(|_| rng.gen_range(0..3)).collect();
        Dataset {
            names: vec!["a".into(), "b".into()],
            columns: vec![FeatureColumn::Numeric(a), FeatureColumn::Categorical(b)],
            labels,
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn importances_sum_to_one(seed in 0u64..1000) {
            let r = train_cart(&noisy(seed), &CartConfig::default()).unwrap();
            let s: f64 = r.importances.iter().map(|x| x.1).sum();
            prop_assert!(r.importances.iter().all(|x| x.1 >= 0.0));
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!(r.tree.depth() <= 8);
        }

        #[test]
        fn train_accuracy_monotone_in_depth(seed in 0u64..1000) {
            let d = noisy(seed);
            let mut last = 0.0;
            for depth in 0..=8 {
                let cfg = CartConfig { max_depth: depth, ..CartConfig::default() };
                let acc = train_cart(&d, &cfg).unwrap().train_accuracy;
                prop_assert!(acc >= last - 1e-12, "depth {depth}: {acc} < {last}");
                last = acc;
            }
        }
    }
}
