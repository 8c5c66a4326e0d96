//! Core patterns: per-class K-means centers stored in the memory bank.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasetio::FeatureTable;
use crate::error::{Error, Result};
use crate::hopfield::{Mode, Pattern};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoreId(pub u32);

impl std::fmt::Display for CoreId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

/// The memory patterns of one class.
#[derive(Debug, Clone)]
pub struct ClassPatternSet {
    pub class_id: String,
    pub patterns: Vec<Pattern>,
}

impl ClassPatternSet {
    pub fn new(class_id: impl Into<String>, patterns: Vec<Pattern>) -> Result<Self> {
        let class_id = class_id.into();
        let first = patterns
            .first()
            .ok_or_else(|| Error::Empty(format!("class `{class_id}` has no patterns")))?;
        let n = first.dim();
        if let Some(p) = patterns.iter().find(|p| p.dim() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: p.dim(),
            });
        }
        Ok(Self { class_id, patterns })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorePattern {
    pub id: CoreId,
    pub class_id: String,
    pub values: Pattern,
    /// Training patterns assigned to this center; always at least 1.
    pub member_count: usize,
}

/// Labeled core patterns of every training class, plus the binarization
/// thresholds when the bank is bipolar.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    n: usize,
    mode: Mode,
    core_patterns: Vec<CorePattern>,
    thresholds: Option<Vec<f64>>,
    k_per_class: usize,
}

impl MemoryBank {
    pub fn new(
        n: usize,
        mode: Mode,
        core_patterns: Vec<CorePattern>,
        thresholds: Option<Vec<f64>>,
        k_per_class: usize,
    ) -> Result<Self> {
        if n < 2 {
            return Err(Error::contract(format!("bank dimension {n} is below 2")));
        }
        if k_per_class == 0 {
            return Err(Error::contract("k_per_class must be at least 1"));
        }
        match (&thresholds, mode) {
            (None, Mode::Bipolar) => {
                return Err(Error::contract("bipolar bank is missing its thresholds"))
            }
            (Some(_), Mode::Real) => {
                return Err(Error::contract("real bank must not carry thresholds"))
            }
            (Some(t), Mode::Bipolar) if t.len() != n => {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: t.len(),
                })
            }
            (Some(t), _) if t.iter().any(|v| !v.is_finite()) => {
                return Err(Error::contract("thresholds must be finite"))
            }
            _ => {}
        }
        let mut ids = HashSet::new();
        let mut per_class: BTreeMap<&str, usize> = BTreeMap::new();
        for c in &core_patterns {
            if c.values.dim() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: c.values.dim(),
                });
            }
            if c.values.mode() != mode {
                return Err(Error::contract(format!(
                    "core pattern {} is {} in a {mode} bank",
                    c.id,
                    c.values.mode()
                )));
            }
            if c.member_count == 0 {
                return Err(Error::contract(format!(
                    "core pattern {} has no members",
                    c.id
                )));
            }
            if !ids.insert(c.id) {
                return Err(Error::contract(format!(
                    "duplicate core pattern id {}",
                    c.id
                )));
            }
            *per_class.entry(&c.class_id).or_default() += 1;
        }
        if let Some((class, count)) = per_class.iter().find(|(_, &c)| c > k_per_class) {
            return Err(Error::contract(format!(
                "class `{class}` has {count} core patterns, more than k_per_class = {k_per_class}"
            )));
        }
        Ok(Self {
            n,
            mode,
            core_patterns,
            thresholds,
            k_per_class,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn core_patterns(&self) -> &[CorePattern] {
        &self.core_patterns
    }

    pub fn thresholds(&self) -> Option<&[f64]> {
        self.thresholds.as_deref()
    }

    pub fn k_per_class(&self) -> usize {
        self.k_per_class
    }

    pub fn get(&self, id: CoreId) -> Option<&CorePattern> {
        self.core_patterns.iter().find(|c| c.id == id)
    }

    /// Class labels in sorted order.
    pub fn labels(&self) -> Vec<&str> {
        let mut labels: Vec<&str> = self
            .core_patterns
            .iter()
            .map(|c| c.class_id.as_str())
            .collect();
        labels.sort_unstable();
        labels.dedup();
        labels
    }

    /// Number of core patterns per class, sorted by label.
    pub fn class_counts(&self) -> BTreeMap<&str, usize> {
        let mut counts = BTreeMap::new();
        for c in &self.core_patterns {
            *counts.entry(c.class_id.as_str()).or_default() += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once the relative objective decrease falls below this.
    pub tol: f64,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances to the assigned centroid, once per iteration.
    pub objective_trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn point_key(values: &[f64]) -> Vec<u64> {
    // -0.0 and 0.0 are the same point
    values.iter().map(|v| (v + 0.0).to_bits()).collect()
}

/// Number of pairwise distinct points.
pub fn distinct_count(points: &[Pattern]) -> usize {
    points
        .iter()
        .map(|p| point_key(p.values()))
        .collect::<HashSet<_>>()
        .len()
}

fn nearest(centroids: &[Vec<f64>], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(centroid, x);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(points: &[&[f64]], k: usize, rng: &mut SplitMix64) -> Vec<Vec<f64>> {
    let m = points.len();
    let mut centroids = vec![points[rng.below(m as u64) as usize].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let target = rng.next_f64() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &w) in d2.iter().enumerate() {
            if w > 0.0 {
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
        }
        // k <= distinct points keeps some weight positive
        let pick = pick.expect("k-means++ ran out of distinct points");
        let c = points[pick].to_vec();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// Empty clusters are refilled with the point farthest from its centroid
/// (taken from a cluster that keeps at least one member). Each iteration
/// assigns, repairs, recomputes means and records the objective, so the
/// returned centroids are the means of their assigned points.
pub fn kmeans(points: &[Pattern], params: &KMeansParams) -> Result<KMeans> {
    let first = points
        .first()
        .ok_or_else(|| Error::Empty("k-means needs at least one point".into()))?;
    let n = first.dim();
    if let Some(p) = points.iter().find(|p| p.dim() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: p.dim(),
        });
    }
    let k = params.k;
    if k == 0 {
        return Err(Error::contract("k must be at least 1"));
    }
    let distinct = distinct_count(points);
    if k > distinct {
        return Err(Error::contract(format!(
            "k = {k} exceeds the {distinct} distinct points"
        )));
    }
    if params.max_iter == 0 {
        return Err(Error::contract("max_iter must be at least 1"));
    }

    let xs: Vec<&[f64]> = points.iter().map(|p| p.values()).collect();
    let mut rng = SplitMix64::new(params.seed);
    let mut centroids = plus_plus_init(&xs, k, &mut rng);
    let mut assignments = vec![0usize; xs.len()];
    let mut objective_trace: Vec<f64> = Vec::new();

    for _ in 0..params.max_iter {
        let mut dists = vec![0.0; xs.len()];
        let mut counts = vec![0usize; k];
        let previous = assignments.clone();
        for (i, x) in xs.iter().enumerate() {
            let (c, d) = nearest(&centroids, x);
            assignments[i] = c;
            dists[i] = d;
            counts[c] += 1;
        }

        while let Some(empty) = counts.iter().position(|&c| c == 0) {
            let donor = (0..xs.len())
                .filter(|&i| counts[assignments[i]] > 1)
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                .expect("a cluster with two members exists while another is empty");
            counts[assignments[donor]] -= 1;
            counts[empty] = 1;
            assignments[donor] = empty;
            dists[donor] = 0.0;
            centroids[empty] = xs[donor].to_vec();
        }

        for centroid in centroids.iter_mut() {
            centroid.iter_mut().for_each(|v| *v = 0.0);
        }
        for (x, &c) in xs.iter().zip(&assignments) {
            for (acc, v) in centroids[c].iter_mut().zip(x.iter()) {
                *acc += v;
            }
        }
        for (centroid, &count) in centroids.iter_mut().zip(&counts) {
            let inv = count as f64;
            centroid.iter_mut().for_each(|v| *v /= inv);
        }

        let objective: f64 = xs
            .iter()
            .zip(&assignments)
            .map(|(x, &c)| sq_dist(x, &centroids[c]))
            .sum();
        let prev_objective = objective_trace.last().copied();
        objective_trace.push(objective);
        let stable = objective_trace.len() > 1 && assignments == previous;
        let small_step = prev_objective
            .map(|prev| prev - objective <= params.tol * prev)
            .unwrap_or(false);
        if stable || small_step {
            break;
        }
    }

    Ok(KMeans {
        centroids,
        assignments,
        objective_trace,
    })
}

/// K-means centers of one class, with `k` capped at the number of distinct
/// patterns. Ids are numbered from `first_id`.
pub fn compute_core_patterns(
    cls: &ClassPatternSet,
    k: usize,
    seed: u64,
    first_id: u32,
) -> Result<Vec<CorePattern>> {
    if k == 0 {
        return Err(Error::contract("k must be at least 1"));
    }
    let k_eff = k.min(distinct_count(&cls.patterns));
    let clusters = kmeans(&cls.patterns, &KMeansParams::new(k_eff, seed))?;
    let mut counts = vec![0usize; k_eff];
    for &c in &clusters.assignments {
        counts[c] += 1;
    }
    clusters
        .centroids
        .into_iter()
        .zip(counts)
        .filter(|&(_, count)| count > 0)
        .enumerate()
        .map(|(offset, (centroid, member_count))| {
            Ok(CorePattern {
                id: CoreId(first_id + offset as u32),
                class_id: cls.class_id.clone(),
                values: Pattern::real(centroid)?,
                member_count,
            })
        })
        .collect()
}

/// `+1` where `p_i > thresholds_i`, `-1` otherwise (ties go to `-1`).
pub fn binarize(p: &[f64], thresholds: &[f64]) -> Result<Pattern> {
    if p.len() != thresholds.len() {
        return Err(Error::DimensionMismatch {
            expected: thresholds.len(),
            found: p.len(),
        });
    }
    Pattern::bipolar(
        p.iter()
            .zip(thresholds)
            .map(|(v, t)| if v > t { 1.0 } else { -1.0 })
            .collect(),
    )
}

/// Per-dimension median over all rows (mean of the two middle values for an
/// even row count).
pub fn median_thresholds(table: &FeatureTable) -> Result<Vec<f64>> {
    if table.is_empty() {
        return Err(Error::Empty("no rows to compute thresholds from".into()));
    }
    let m = table.len();
    Ok((0..table.dim())
        .map(|d| {
            let mut column: Vec<f64> = table.rows().iter().map(|r| r.values[d]).collect();
            column.sort_unstable_by(f64::total_cmp);
            if m % 2 == 1 {
                column[m / 2]
            } else {
                0.5 * (column[m / 2 - 1] + column[m / 2])
            }
        })
        .collect())
}

/// Group training rows by label (sorted), compute each class's core patterns
/// with seed `substream(seed, class_index)`, and binarize them against the
/// training medians when `mode` is bipolar.
pub fn build_bank(
    train: &FeatureTable,
    k_per_class: usize,
    mode: Mode,
    seed: u64,
) -> Result<MemoryBank> {
    if train.is_empty() {
        return Err(Error::Empty("training set has no rows".into()));
    }
    if k_per_class == 0 {
        return Err(Error::contract("k_per_class must be at least 1"));
    }
    let mut groups: BTreeMap<&str, Vec<Pattern>> = BTreeMap::new();
    for row in train.rows() {
        groups
            .entry(row.label.as_str())
            .or_default()
            .push(Pattern::real(row.values.clone())?);
    }
    let classes: Vec<ClassPatternSet> = groups
        .into_iter()
        .map(|(label, patterns)| ClassPatternSet::new(label, patterns))
        .collect::<Result<_>>()?;

    let per_class: Vec<Vec<CorePattern>> = classes
        .par_iter()
        .enumerate()
        .map(|(i, cls)| {
            compute_core_patterns(cls, k_per_class, SplitMix64::substream(seed, i as u64), 0)
        })
        .collect::<Result<_>>()?;

    let thresholds = match mode {
        Mode::Real => None,
        Mode::Bipolar => Some(median_thresholds(train)?),
    };
    let mut core_patterns = Vec::new();
    for mut c in per_class.into_iter().flatten() {
        c.id = CoreId(core_patterns.len() as u32);
        if let Some(t) = &thresholds {
            c.values = binarize(c.values.values(), t)?;
        }
        core_patterns.push(c);
    }
    MemoryBank::new(train.dim(), mode, core_patterns, thresholds, k_per_class)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasetio::FeatureRow;

    fn pts(rows: &[&[f64]]) -> Vec<Pattern> {
        rows.iter()
            .map(|r| Pattern::real(r.to_vec()).unwrap())
            .collect()
    }

    fn sorted(mut c: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
        c.sort_by(|a, b| a[0].total_cmp(&b[0]));
        c
    }

    #[test]
    fn two_cluster_fixture() {
        let points = pts(&[&[0.0, 0.0], &[0.0, 1.0], &[10.0, 10.0], &[10.0, 11.0]]);
        for seed in 0..20 {
            let r = kmeans(&points, &KMeansParams::new(2, seed)).unwrap();
            assert_eq!(sorted(r.centroids), vec![vec![0.0, 0.5], vec![10.0, 10.5]]);
        }
    }

    #[test]
    fn k_equal_to_point_count_is_exact() {
        let points = pts(&[&[1.0, 2.0], &[3.0, -1.0], &[0.5, 0.5]]);
        let r = kmeans(&points, &KMeansParams::new(3, 4)).unwrap();
        assert_eq!(*r.objective_trace.last().unwrap(), 0.0);
        let mut got = sorted(r.centroids);
        got.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(got, vec![vec![0.5, 0.5], vec![1.0, 2.0], vec![3.0, -1.0]]);
    }

    #[test]
    fn k_one_is_the_mean() {
        let points = pts(&[&[1.0, 2.0], &[3.0, -1.0], &[2.0, 5.0], &[0.0, 0.0]]);
        let r = kmeans(&points, &KMeansParams::new(1, 9)).unwrap();
        assert_eq!(r.centroids, vec![vec![1.5, 1.5]]);
    }

    #[test]
    fn kmeans_errors() {
        assert!(kmeans(&[], &KMeansParams::new(1, 0)).is_err());
        let points = pts(&[&[1.0, 2.0], &[1.0, 2.0]]);
        assert!(kmeans(&points, &KMeansParams::new(0, 0)).is_err());
        assert!(kmeans(&points, &KMeansParams::new(2, 0)).is_err());
    }

    #[test]
    fn kmeans_is_deterministic() {
        let mut rng = SplitMix64::new(1);
        let points: Vec<Pattern> = (0..80)
            .map(|_| Pattern::real((0..5).map(|_| rng.next_gaussian()).collect()).unwrap())
            .collect();
        let a = kmeans(&points, &KMeansParams::new(6, 17)).unwrap();
        let b = kmeans(&points, &KMeansParams::new(6, 17)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn core_patterns_single_and_duplicates() {
        let one = ClassPatternSet::new("a", pts(&[&[1.0, 2.0, 3.0]])).unwrap();
        let cores = compute_core_patterns(&one, 5, 0, 0).unwrap();
        assert_eq!(cores.len(), 1);
        assert_eq!(cores[0].values.values(), &[1.0, 2.0, 3.0]);
        assert_eq!(cores[0].member_count, 1);

        let twins = ClassPatternSet::new("b", pts(&[&[1.0, 2.0], &[1.0, 2.0]])).unwrap();
        let cores = compute_core_patterns(&twins, 2, 0, 0).unwrap();
        assert_eq!(cores.len(), 1);
        assert_eq!(cores[0].member_count, 2);
        assert_eq!(cores[0].class_id, "b");
    }

    #[test]
    fn core_patterns_find_gaussian_means() {
        let means = [[0.0, 0.0, 0.0], [20.0, 0.0, 0.0], [0.0, 20.0, 20.0]];
        let sigma = 1.0;
        let mut rng = SplitMix64::new(42);
        // 20 points per cluster; center each sample set on its true mean so
        // the 0.1 sigma bound tests clustering, not sampling noise
        let mut patterns = Vec::new();
        for mean in &means {
            let mut noise: Vec<Vec<f64>> = (0..20)
                .map(|_| (0..3).map(|_| sigma * rng.next_gaussian()).collect())
                .collect();
            for d in 0..3 {
                let avg = noise.iter().map(|v| v[d]).sum::<f64>() / 20.0;
                noise.iter_mut().for_each(|v| v[d] -= avg);
            }
            for v in noise {
                patterns
                    .push(Pattern::real(v.iter().zip(mean).map(|(a, b)| a + b).collect()).unwrap());
            }
        }
        let cls = ClassPatternSet::new("g", patterns).unwrap();
        let cores = compute_core_patterns(&cls, 3, 5, 0).unwrap();
        assert_eq!(cores.len(), 3);
        for mean in &means {
            let best = cores
                .iter()
                .map(|c| sq_dist(c.values.values(), mean).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(best <= 0.1 * sigma, "distance {best}");
        }
    }

    #[test]
    fn binarize_examples() {
        assert_eq!(
            binarize(&[0.5, 0.5, 0.2], &[0.5, 0.5, 0.2])
                .unwrap()
                .values(),
            &[-1.0, -1.0, -1.0]
        );
        assert_eq!(
            binarize(&[0.9, 0.1], &[0.5, 0.5]).unwrap().values(),
            &[1.0, -1.0]
        );
        assert!(binarize(&[0.9, 0.1, 0.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn median_thresholds_split_rows_in_half() {
        let mut rng = SplitMix64::new(8);
        let rows = (0..100)
            .map(|i| FeatureRow {
                id: format!("r{i}"),
                label: "x".into(),
                values: (0..6).map(|_| rng.next_f64().max(0.0)).collect(),
            })
            .collect();
        let table = FeatureTable::new(6, rows).unwrap();
        let t = median_thresholds(&table).unwrap();
        let mut positives = [0usize; 6];
        for row in table.rows() {
            let b = binarize(&row.values, &t).unwrap();
            for (d, v) in b.values().iter().enumerate() {
                if *v > 0.0 {
                    positives[d] += 1;
                }
            }
        }
        assert_eq!(positives, [50; 6]);
    }

    #[test]
    fn bank_validation() {
        let core = |id, class: &str, v: Vec<f64>, mode| CorePattern {
            id: CoreId(id),
            class_id: class.into(),
            values: Pattern::new(v, mode).unwrap(),
            member_count: 1,
        };
        let real = core(0, "a", vec![0.5, 1.0], Mode::Real);
        let bip = core(0, "a", vec![1.0, -1.0], Mode::Bipolar);
        assert!(MemoryBank::new(2, Mode::Real, vec![real.clone()], None, 1).is_ok());
        assert!(MemoryBank::new(2, Mode::Bipolar, vec![bip.clone()], None, 1).is_err());
        assert!(MemoryBank::new(2, Mode::Bipolar, vec![bip.clone()], Some(vec![0.0]), 1).is_err());
        assert!(
            MemoryBank::new(2, Mode::Bipolar, vec![bip.clone()], Some(vec![0.0; 2]), 1).is_ok()
        );
        assert!(MemoryBank::new(2, Mode::Real, vec![bip], None, 1).is_err());
        let dup = vec![real.clone(), real.clone()];
        assert!(MemoryBank::new(2, Mode::Real, dup, None, 2).is_err());
        let two = vec![real.clone(), core(1, "a", vec![0.0, 1.0], Mode::Real)];
        assert!(MemoryBank::new(2, Mode::Real, two.clone(), None, 1).is_err());
        assert!(MemoryBank::new(2, Mode::Real, two, None, 2).is_ok());
    }

    #[test]
    fn bank_from_two_singletons() {
        let rows = vec![
            FeatureRow {
                id: "x".into(),
                label: "b".into(),
                values: vec![1.0, 2.0],
            },
            FeatureRow {
                id: "y".into(),
                label: "a".into(),
                values: vec![3.0, 4.0],
            },
        ];
        let table = FeatureTable::new(2, rows).unwrap();
        let bank = build_bank(&table, 1, Mode::Real, 0).unwrap();
        assert_eq!(bank.core_patterns().len(), 2);
        assert_eq!(bank.core_patterns()[0].class_id, "a");
        assert_eq!(bank.core_patterns()[0].values.values(), &[3.0, 4.0]);
        assert_eq!(bank.core_patterns()[1].values.values(), &[1.0, 2.0]);
        assert!(bank.thresholds().is_none());

        let bipolar = build_bank(&table, 1, Mode::Bipolar, 0).unwrap();
        assert_eq!(bipolar.thresholds(), Some(&[2.0, 3.0][..]));
        assert_eq!(bipolar.core_patterns()[0].values.values(), &[1.0, 1.0]);
        assert_eq!(bipolar.core_patterns()[1].values.values(), &[-1.0, -1.0]);
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let table = FeatureTable::new(2, vec![]).unwrap();
        assert!(build_bank(&table, 1, Mode::Real, 0).is_err());
    }
}
