//! Synthetic Gaussian-cluster classification data and shard partitioning.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Dirichlet, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::FlError;
use crate::seed;

const TEST_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub n_features: usize,
    pub n_classes: usize,
    /// Row-major `len x n_features`.
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn empty(n_features: usize, n_classes: usize) -> Self {
        Dataset {
            n_features,
            n_classes,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut out = Dataset::empty(self.n_features, self.n_classes);
        for &i in indices {
            out.features.extend_from_slice(self.row(i));
            out.labels.push(self.labels[i]);
        }
        out
    }

    fn push(&mut self, x: &[f64], label: usize) {
        self.features.extend_from_slice(x);
        self.labels.push(label);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDataset {
    pub train: Dataset,
    pub test: Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub n_samples: usize,
    pub n_features: usize,
    pub class_proportions: Vec<f64>,
    /// Distance of each class mean from the origin, in units of the
    /// per-feature noise standard deviation.
    #[serde(default = "default_separation")]
    pub separation: f64,
}

fn default_separation() -> f64 {
    3.0
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            n_samples: 4000,
            n_features: 16,
            class_proportions: vec![0.25; 4],
            separation: default_separation(),
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<(), FlError> {
        let bad = |m: &str| Err(FlError::InvalidDataset(m.to_string()));
        if self.n_samples == 0 || self.n_features == 0 {
            return bad("n_samples and n_features must be positive");
        }
        if self.class_proportions.len() < 2 {
            return bad("need at least two classes");
        }
        if self.class_proportions.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return bad("class proportions must be finite and non-negative");
        }
        let sum: f64 = self.class_proportions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return bad("class proportions must sum to 1");
        }
        if !self.separation.is_finite() || self.separation < 0.0 {
            return bad("separation must be finite and non-negative");
        }
        Ok(())
    }
}

/// Largest-remainder allocation of `total` items by `proportions`.
fn allocate(total: usize, proportions: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = raw[a] - raw[a].floor();
        let rb = raw[b] - raw[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Class-conditional Gaussian clusters with an exactly stratified 80/20 split.
pub fn make_synthetic_dataset(seed: u64, spec: &DatasetSpec) -> Result<SplitDataset, FlError> {
    spec.validate()?;
    let d = spec.n_features;
    let c = spec.class_proportions.len();
    let mut rng = seed::rng(seed, "dataset", 0);

    let means: Vec<Vec<f64>> = (0..c)
        .map(|_| {
            let dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            dir.into_iter().map(|v| v / norm * spec.separation).collect()
        })
        .collect();

    let counts = allocate(spec.n_samples, &spec.class_proportions);
    let mut train = Dataset::empty(d, c);
    let mut test = Dataset::empty(d, c);
    let mut x = vec![0.0; d];
    for (label, &n_c) in counts.iter().enumerate() {
        let n_test = (n_c as f64 * TEST_FRACTION).round() as usize;
        for k in 0..n_c {
            for (xi, mi) in x.iter_mut().zip(&means[label]) {
                let z: f64 = rng.sample(StandardNormal);
                *xi = mi + z;
            }
            if k < n_test {
                test.push(&x, label);
            } else {
                train.push(&x, label);
            }
        }
    }
    Ok(SplitDataset {
        train: shuffled(&train, &mut rng),
        test: shuffled(&test, &mut rng),
    })
}

fn shuffled(ds: &Dataset, rng: &mut impl Rng) -> Dataset {
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(rng);
    ds.subset(&idx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PartitionScheme {
    Iid,
    LabelSkew { concentration: f64 },
}

/// Disjoint cover of `data` into `n_parts` shards.
pub fn partition(
    data: &Dataset,
    n_parts: usize,
    scheme: PartitionScheme,
    seed: u64,
) -> Result<Vec<Dataset>, FlError> {
    if n_parts == 0 || n_parts > data.len() {
        return Err(FlError::InvalidPartition(format!(
            "{n_parts} parts for {} samples",
            data.len()
        )));
    }
    let mut rng = seed::rng(seed, "partition", n_parts as u64);
    let shards: Vec<Vec<usize>> = match scheme {
        PartitionScheme::Iid => {
            let mut idx: Vec<usize> = (0..data.len()).collect();
            idx.shuffle(&mut rng);
            let base = data.len() / n_parts;
            let extra = data.len() % n_parts;
            let mut out = Vec::with_capacity(n_parts);
            let mut start = 0;
            for p in 0..n_parts {
                let size = base + usize::from(p < extra);
                out.push(idx[start..start + size].to_vec());
                start += size;
            }
            out
        }
        PartitionScheme::LabelSkew { concentration } => {
            if !(concentration.is_finite() && concentration > 0.0) {
                return Err(FlError::InvalidPartition(
                    "concentration must be positive".into(),
                ));
            }
            let mut out = vec![Vec::new(); n_parts];
            for class in 0..data.n_classes {
                let mut idx: Vec<usize> =
                    (0..data.len()).filter(|&i| data.labels[i] == class).collect();
                idx.shuffle(&mut rng);
                let props = dirichlet(&mut rng, n_parts, concentration);
                let counts = allocate(idx.len(), &props);
                let mut start = 0;
                for (shard, n) in out.iter_mut().zip(counts) {
                    shard.extend_from_slice(&idx[start..start + n]);
                    start += n;
                }
            }
            for shard in &mut out {
                shard.sort_unstable();
            }
            out
        }
    };
    Ok(shards.iter().map(|s| data.subset(s)).collect())
}

fn dirichlet(rng: &mut impl Rng, n: usize, alpha: f64) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let sample = Dirichlet::new_with_size(alpha, n)
        .ok()
        .map(|d| d.sample(rng))
        .filter(|p| p.iter().all(|v| v.is_finite()) && p.iter().sum::<f64>() > 0.0);
    match sample {
        Some(p) => {
            let s: f64 = p.iter().sum();
            p.into_iter().map(|v| v / s).collect()
        }
        None => vec![1.0 / n as f64; n],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn row_key(ds: &Dataset, i: usize) -> Vec<u64> {
        ds.row(i).iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn uniform_classes_are_exact() {
        let spec = DatasetSpec {
            n_samples: 4000,
            ..DatasetSpec::default()
        };
        let ds = make_synthetic_dataset(1, &spec).unwrap();
        let train = ds.train.class_counts();
        let test = ds.test.class_counts();
        for c in 0..4 {
            assert_eq!(train[c] + test[c], 1000);
            assert_eq!(test[c], 200);
        }
    }

    #[test]
    fn imbalanced_test_supports_follow_proportions() {
        // 512/359/144/10 out of 1025 test rows
        let spec = DatasetSpec {
            n_samples: 5125,
            class_proportions: vec![0.50, 0.35, 0.14, 0.01],
            ..DatasetSpec::default()
        };
        let ds = make_synthetic_dataset(1, &spec).unwrap();
        let got = ds.test.class_counts();
        let want = [512usize, 359, 144, 10];
        for (g, w) in got.iter().zip(want) {
            assert!(g.abs_diff(w) <= 3, "{got:?} vs {want:?}");
        }
    }

    #[test]
    fn same_seed_same_data() {
        let spec = DatasetSpec::default();
        assert_eq!(
            make_synthetic_dataset(5, &spec).unwrap(),
            make_synthetic_dataset(5, &spec).unwrap()
        );
        assert_ne!(
            make_synthetic_dataset(5, &spec).unwrap(),
            make_synthetic_dataset(6, &spec).unwrap()
        );
    }

    #[test]
    fn bad_proportions_rejected() {
        let spec = DatasetSpec {
            class_proportions: vec![0.5, 0.4],
            ..DatasetSpec::default()
        };
        assert!(make_synthetic_dataset(1, &spec).is_err());
    }

    #[test]
    fn iid_shards_balanced_and_disjoint_cover() {
        let ds = make_synthetic_dataset(2, &DatasetSpec::default()).unwrap().train;
        let shards = partition(&ds, 10, PartitionScheme::Iid, 1).unwrap();
        let sizes: Vec<usize> = shards.iter().map(|s| s.len()).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert_cover(&ds, &shards);

        let shards = partition(&ds, 7, PartitionScheme::Iid, 1).unwrap();
        let sizes: Vec<usize> = shards.iter().map(|s| s.len()).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    fn assert_cover(ds: &Dataset, shards: &[Dataset]) {
        let all: HashSet<Vec<u64>> = (0..ds.len()).map(|i| row_key(ds, i)).collect();
        let mut seen = HashSet::new();
        for s in shards {
            for i in 0..s.len() {
                assert!(seen.insert(row_key(s, i)), "row in two shards");
            }
        }
        assert_eq!(seen, all);
    }

    #[test]
    fn label_skew_skews() {
        let ds = make_synthetic_dataset(1, &DatasetSpec::default()).unwrap().train;
        let shards =
            partition(&ds, 10, PartitionScheme::LabelSkew { concentration: 0.5 }, 1).unwrap();
        assert_cover(&ds, &shards);
        let global = ds.class_counts();
        let global_p: Vec<f64> = global.iter().map(|&c| c as f64 / ds.len() as f64).collect();
        let mut max_ratio: f64 = 0.0;
        for s in shards.iter().filter(|s| !s.is_empty()) {
            for (c, &n) in s.class_counts().iter().enumerate() {
                let p = n as f64 / s.len() as f64;
                max_ratio = max_ratio.max(p / global_p[c]);
            }
        }
        // seed 1 fixture: 2.65
        assert!(max_ratio >= 2.0, "max ratio {max_ratio}");
    }

    #[test]
    fn too_many_parts_rejected() {
        let ds = make_synthetic_dataset(1, &DatasetSpec { n_samples: 10, ..Default::default() })
            .unwrap()
            .train;
        assert!(partition(&ds, ds.len() + 1, PartitionScheme::Iid, 1).is_err());
        assert!(partition(&ds, 0, PartitionScheme::Iid, 1).is_err());
    }
}
