#![allow(dead_code)]

use hopmem::datasetio::FeatureRow;
use hopmem::{FeatureTable, Pattern, SplitMix64};

pub fn random_bipolar(rng: &mut SplitMix64, n: usize) -> Pattern {
    Pattern::bipolar(
        (0..n)
            .map(|_| if rng.next_u64() >> 63 == 1 { 1.0 } else { -1.0 })
            .collect(),
    )
    .unwrap()
}

/// Flip `count` distinct components chosen uniformly.
pub fn corrupt(rng: &mut SplitMix64, p: &Pattern, count: usize) -> Pattern {
    let mut out = p.clone();
    for i in rng.permutation(p.dim()).into_iter().take(count) {
        out = out.flipped(i);
    }
    out
}

pub fn euclidean_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Class means in `[0, spread)^dim`, redrawn until every pair is at least
/// `min_separation` apart.
pub fn separated_means(
    rng: &mut SplitMix64,
    classes: usize,
    dim: usize,
    spread: f64,
    min_separation: f64,
) -> Vec<Vec<f64>> {
    loop {
        let means: Vec<Vec<f64>> = (0..classes)
            .map(|_| (0..dim).map(|_| spread * rng.next_f64()).collect())
            .collect();
        let ok = (0..classes).all(|a| {
            ((a + 1)..classes).all(|b| euclidean_sq(&means[a], &means[b]).sqrt() >= min_separation)
        });
        if ok {
            return means;
        }
    }
}

/// `per_class` isotropic Gaussian samples (std `sigma`) around each mean,
/// labeled `c{index}`, ids prefixed with `prefix`.
pub fn gaussian_table(
    rng: &mut SplitMix64,
    means: &[Vec<f64>],
    per_class: usize,
    sigma: f64,
    prefix: &str,
) -> FeatureTable {
    let dim = means[0].len();
    let mut rows = Vec::new();
    for (c, mean) in means.iter().enumerate() {
        for i in 0..per_class {
            rows.push(FeatureRow {
                id: format!("{prefix}{c}-{i}"),
                label: format!("c{c}"),
                values: mean
                    .iter()
                    .map(|m| m + sigma * rng.next_gaussian())
                    .collect(),
            });
        }
    }
    FeatureTable::new(dim, rows).unwrap()
}

/// Nearest class mean by Euclidean distance, computed from the training rows.
pub fn nearest_centroid_oracle(train: &FeatureTable, test: &FeatureTable) -> Vec<String> {
    let mut sums: std::collections::BTreeMap<&str, (Vec<f64>, usize)> = Default::default();
    for r in train.rows() {
        let e = sums
            .entry(r.label.as_str())
            .or_insert_with(|| (vec![0.0; train.dim()], 0));
        e.0.iter_mut().zip(&r.values).for_each(|(a, v)| *a += v);
        e.1 += 1;
    }
    let centroids: Vec<(&str, Vec<f64>)> = sums
        .into_iter()
        .map(|(l, (s, n))| (l, s.into_iter().map(|v| v / n as f64).collect()))
        .collect();
    test.rows()
        .iter()
        .map(|r| {
            centroids
                .iter()
                .min_by(|a, b| {
                    euclidean_sq(&a.1, &r.values).total_cmp(&euclidean_sq(&b.1, &r.values))
                })
                .unwrap()
                .0
                .to_string()
        })
        .collect()
}

/// Each class is three tight sub-clusters placed so that the class mean sits
/// near sub-clusters of other classes.
pub fn subclustered_tables(
    rng: &mut SplitMix64,
    classes: usize,
    dim: usize,
    train_per_sub: usize,
    test_per_sub: usize,
) -> (FeatureTable, FeatureTable) {
    let centers = separated_means(rng, classes * 3, dim, 30.0, 12.0);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (s, center) in centers.iter().enumerate() {
        let class = s % classes;
        for i in 0..(train_per_sub + test_per_sub) {
            let row = FeatureRow {
                id: format!("s{s}-{i}"),
                label: format!("c{class}"),
                values: center
                    .iter()
                    .map(|m| m + 0.5 * rng.next_gaussian())
                    .collect(),
            };
            if i < train_per_sub {
                train.push(row);
            } else {
                test.push(row);
            }
        }
    }
    (
        FeatureTable::new(dim, train).unwrap(),
        FeatureTable::new(dim, test).unwrap(),
    )
}
