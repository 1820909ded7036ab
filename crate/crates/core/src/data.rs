//! Synthetic data, client shards and the server's auxiliary set.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::estimator::CompositionVector;
use crate::rng;

/// Distance of every class mean from the origin.
pub const MEAN_RADIUS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    /// 0-based class index.
    pub label: usize,
}

/// One client's local data.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    id: usize,
    num_classes: usize,
    samples: Vec<LabeledSample>,
}

impl ClientDataset {
    pub fn new(id: usize, num_classes: usize, samples: Vec<LabeledSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Construction(format!("client {id} has no samples")));
        }
        if let Some(s) = samples.iter().find(|s| s.label >= num_classes) {
            return Err(Error::Construction(format!(
                "client {id}: label {} out of range for {num_classes} classes",
                s.label
            )));
        }
        Ok(Self {
            id,
            num_classes,
            samples,
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Number of samples per class.
    pub fn class_counts(&self) -> Vec<usize> {
        class_counts(&self.samples, self.num_classes)
    }
}

pub fn class_counts(samples: &[LabeledSample], num_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; num_classes];
    for s in samples {
        counts[s.label] += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionConfig {
    pub num_clients: usize,
    /// Inclusive range for the number of distinct classes on a client.
    pub classes_per_client: (usize, usize),
    /// Inclusive range for the number of samples on a client.
    pub samples_per_client: (usize, usize),
    pub seed: u64,
    /// Draw without replacement from a shared pool so that shards never
    /// overlap. Off by default: shards are sampled with replacement.
    pub disjoint: bool,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            num_clients: 100,
            classes_per_client: (1, 5),
            samples_per_client: (50, 200),
            seed: 0,
            disjoint: false,
        }
    }
}

impl PartitionConfig {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let (cmin, cmax) = self.classes_per_client;
        let (smin, smax) = self.samples_per_client;
        if self.num_clients == 0 {
            return Err(Error::Config("need at least one client".into()));
        }
        if cmin == 0 || cmin > cmax || cmax > num_classes {
            return Err(Error::Config(format!(
                "classes per client [{cmin}, {cmax}] must satisfy 1 <= min <= max <= {num_classes}"
            )));
        }
        if smin == 0 || smin > smax {
            return Err(Error::Config(format!(
                "samples per client [{smin}, {smax}] must satisfy 1 <= min <= max"
            )));
        }
        Ok(())
    }
}

fn class_means(num_classes: usize, input_dim: usize) -> Vec<Vec<f64>> {
    if num_classes <= input_dim {
        return (0..num_classes)
            .map(|c| {
                let mut m = vec![0.0; input_dim];
                m[c] = MEAN_RADIUS;
                m
            })
            .collect();
    }
    // More classes than dimensions: fixed pseudo-random directions on the sphere.
    let mut rng = rng::rng_from(0x6d65_616e, &[num_classes as u64, input_dim as u64]);
    (0..num_classes)
        .map(|_| {
            let v: Vec<f64> = (0..input_dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| MEAN_RADIUS * x / norm).collect()
        })
        .collect()
}

/// `num_per_class` samples per class from isotropic Gaussians with standard
/// deviation `spread` around fixed, well separated class means. Samples are
/// ordered by class.
pub fn generate_dataset(
    num_per_class: usize,
    num_classes: usize,
    input_dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Vec<LabeledSample>> {
    if num_per_class == 0 || num_classes == 0 || input_dim == 0 {
        return Err(Error::InvalidArgument(
            "sample count, class count and dimension must be positive".into(),
        ));
    }
    let noise = Normal::new(0.0, spread)
        .ok()
        .filter(|_| spread > 0.0)
        .ok_or_else(|| Error::InvalidArgument(format!("spread must be positive, got {spread}")))?;
    let means = class_means(num_classes, input_dim);
    let mut rng = rng::rng_from(seed, &[0xda7a]);
    let mut out = Vec::with_capacity(num_per_class * num_classes);
    for (label, mean) in means.iter().enumerate() {
        for _ in 0..num_per_class {
            let features = mean.iter().map(|m| m + noise.sample(&mut rng)).collect();
            out.push(LabeledSample { features, label });
        }
    }
    Ok(out)
}

fn indices_by_class(dataset: &[LabeledSample], num_classes: usize) -> Result<Vec<Vec<usize>>> {
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, s) in dataset.iter().enumerate() {
        let slot = by_class.get_mut(s.label).ok_or_else(|| {
            Error::Construction(format!(
                "label {} out of range for {num_classes} classes",
                s.label
            ))
        })?;
        slot.push(i);
    }
    Ok(by_class)
}

/// Stratified split into `(train, test)`; `test_fraction` of each class
/// (rounded down) is held out.
pub fn train_test_split(
    dataset: &[LabeledSample],
    num_classes: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<LabeledSample>, Vec<LabeledSample>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidArgument(format!(
            "test fraction must lie in [0, 1), got {test_fraction}"
        )));
    }
    let mut rng = rng::rng_from(seed, &[0x5b17]);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for mut idx in indices_by_class(dataset, num_classes)? {
        idx.shuffle(&mut rng);
        let n_test = (idx.len() as f64 * test_fraction).floor() as usize;
        test.extend(idx[..n_test].iter().map(|&i| dataset[i].clone()));
        train.extend(idx[n_test..].iter().map(|&i| dataset[i].clone()));
    }
    Ok((train, test))
}

/// Non-IID shards: each client draws a class-subset size and a sample count
/// uniformly from the configured ranges, picks that many classes uniformly
/// without replacement and then samples uniformly from the union of those
/// classes' pools.
pub fn partition_non_iid(
    dataset: &[LabeledSample],
    num_classes: usize,
    cfg: &PartitionConfig,
) -> Result<Vec<ClientDataset>> {
    cfg.validate(num_classes)?;
    let mut pools = indices_by_class(dataset, num_classes)?;
    if let Some(c) = pools.iter().position(Vec::is_empty) {
        return Err(Error::Construction(format!(
            "class {c} has no samples to draw from"
        )));
    }
    let mut rng = rng::rng_from(cfg.seed, &[0x9a27]);
    if cfg.disjoint {
        pools.iter_mut().for_each(|p| p.shuffle(&mut rng));
    }
    let all_classes: Vec<usize> = (0..num_classes).collect();
    let mut clients = Vec::with_capacity(cfg.num_clients);
    for id in 0..cfg.num_clients {
        let n_classes = rng.gen_range(cfg.classes_per_client.0..=cfg.classes_per_client.1);
        let mut classes: Vec<usize> = all_classes
            .choose_multiple(&mut rng, n_classes)
            .copied()
            .collect();
        classes.sort_unstable();
        let n_samples = rng.gen_range(cfg.samples_per_client.0..=cfg.samples_per_client.1);

        let samples = if cfg.disjoint {
            let mut taken = Vec::with_capacity(n_samples);
            for _ in 0..n_samples {
                let available: Vec<usize> = classes
                    .iter()
                    .copied()
                    .filter(|&c| !pools[c].is_empty())
                    .collect();
                let total: usize = available.iter().map(|&c| pools[c].len()).sum();
                if total == 0 {
                    break;
                }
                let mut pick = rng.gen_range(0..total);
                for &c in &available {
                    if pick < pools[c].len() {
                        taken.push(dataset[pools[c].pop().unwrap()].clone());
                        break;
                    }
                    pick -= pools[c].len();
                }
            }
            if taken.is_empty() {
                return Err(Error::Construction(format!(
                    "client {id}: classes {classes:?} are exhausted"
                )));
            }
            taken
        } else {
            let pool: Vec<usize> = classes
                .iter()
                .flat_map(|&c| pools[c].iter().copied())
                .collect();
            (0..n_samples)
                .map(|_| dataset[pool[rng.gen_range(0..pool.len())]].clone())
                .collect()
        };
        clients.push(ClientDataset::new(id, num_classes, samples)?);
    }
    Ok(clients)
}

/// IID shards with identical class counts on every client. Each class pool is
/// shuffled and trimmed to a multiple of `num_clients`.
pub fn partition_iid(
    dataset: &[LabeledSample],
    num_classes: usize,
    num_clients: usize,
    seed: u64,
) -> Result<Vec<ClientDataset>> {
    if num_clients == 0 {
        return Err(Error::InvalidArgument("need at least one client".into()));
    }
    let mut rng = rng::rng_from(seed, &[0x11d]);
    let mut shards: Vec<Vec<LabeledSample>> = vec![Vec::new(); num_clients];
    let pools = indices_by_class(dataset, num_classes)?;
    for mut idx in pools {
        idx.shuffle(&mut rng);
        let per_client = idx.len() / num_clients;
        for (k, shard) in shards.iter_mut().enumerate() {
            shard.extend(
                idx[k * per_client..(k + 1) * per_client]
                    .iter()
                    .map(|&i| dataset[i].clone()),
            );
        }
    }
    shards
        .into_iter()
        .enumerate()
        .map(|(id, samples)| ClientDataset::new(id, num_classes, samples))
        .collect()
}

/// Balanced auxiliary set: exactly `per_class` samples of every class, drawn
/// without replacement from `dataset` (the held-out split) and ordered by
/// class.
pub fn auxiliary_set(
    dataset: &[LabeledSample],
    num_classes: usize,
    per_class: usize,
    seed: u64,
) -> Result<Vec<LabeledSample>> {
    if per_class == 0 {
        return Err(Error::InvalidArgument(
            "auxiliary set needs at least one sample per class".into(),
        ));
    }
    let mut rng = rng::rng_from(seed, &[0xa0c5]);
    let mut out = Vec::with_capacity(per_class * num_classes);
    for (c, idx) in indices_by_class(dataset, num_classes)?
        .into_iter()
        .enumerate()
    {
        if idx.len() < per_class {
            return Err(Error::Construction(format!(
                "class {c} has {} held-out samples, auxiliary set needs {per_class}",
                idx.len()
            )));
        }
        let chosen: BTreeSet<usize> = idx.choose_multiple(&mut rng, per_class).copied().collect();
        out.extend(chosen.into_iter().map(|i| dataset[i].clone()));
    }
    Ok(out)
}

/// Ground-truth squared class ratios `n_i^2 / sum_j n_j^2`.
pub fn true_composition(client: &ClientDataset) -> CompositionVector {
    composition_from_counts(&client.class_counts())
}

pub fn composition_from_counts(counts: &[usize]) -> CompositionVector {
    let total: f64 = counts.iter().map(|&n| (n * n) as f64).sum();
    if total == 0.0 {
        return CompositionVector::uniform(counts.len());
    }
    CompositionVector::from_unchecked(counts.iter().map(|&n| (n * n) as f64 / total).collect())
}

/// Writes `# C=<C> d=<d>` followed by one `label,f1,f2,...` line per sample.
/// Floats use the shortest representation that reads back exactly.
pub fn write_dataset(
    path: &Path,
    samples: &[LabeledSample],
    num_classes: usize,
    input_dim: usize,
) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "# C={num_classes} d={input_dim}")?;
        for s in samples {
            write!(w, "{}", s.label)?;
            for f in &s.features {
                write!(w, ",{f}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

/// Reads the format produced by [`write_dataset`]; returns `(samples, C, d)`.
pub fn read_dataset(path: &Path) -> Result<(Vec<LabeledSample>, usize, usize)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .transpose()
        .map_err(|e| Error::io(path, e))?
        .ok_or(Error::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
    let (num_classes, input_dim) = parse_header(&header).ok_or_else(|| Error::Parse {
        line: 1,
        msg: format!("expected `# C=<C> d=<d>`, got `{header}`"),
    })?;

    let mut samples = Vec::new();
    for (n, line) in lines.enumerate() {
        let line_no = n + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Parse { line: line_no, msg };
        let mut fields = line.split(',');
        let label: usize = fields
            .next()
            .unwrap_or_default()
            .trim()
            .parse()
            .map_err(|e| bad(format!("label: {e}")))?;
        if label >= num_classes {
            return Err(bad(format!(
                "label {label} out of range for C={num_classes}"
            )));
        }
        let features = fields
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| bad(format!("feature: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if features.len() != input_dim {
            return Err(bad(format!(
                "expected {input_dim} features, got {}",
                features.len()
            )));
        }
        samples.push(LabeledSample { features, label });
    }
    Ok((samples, num_classes, input_dim))
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let rest = line.strip_prefix('#')?.trim();
    let mut c = None;
    let mut d = None;
    for part in rest.split_whitespace() {
        match part.split_once('=')? {
            ("C", v) => c = v.parse().ok(),
            ("d", v) => d = v.parse().ok(),
            _ => return None,
        }
    }
    Some((c?, d?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nearest_centroid_accuracy(data: &[LabeledSample], num_classes: usize) -> f64 {
        let d = data[0].features.len();
        let mut centroids = vec![vec![0.0; d]; num_classes];
        let counts = class_counts(data, num_classes);
        for s in data {
            for (c, f) in centroids[s.label].iter_mut().zip(&s.features) {
                *c += f / counts[s.label] as f64;
            }
        }
        let correct = data
            .iter()
            .filter(|s| {
                let dist = |c: &Vec<f64>| -> f64 {
                    c.iter()
                        .zip(&s.features)
                        .map(|(a, b)| (a - b).powi(2))
                        .sum()
                };
                let best = (0..num_classes)
                    .min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b])))
                    .unwrap();
                best == s.label
            })
            .count();
        correct as f64 / data.len() as f64
    }

    #[test]
    fn generated_counts_and_determinism() {
        let a = generate_dataset(5, 2, 3, 1.0, 42).unwrap();
        assert_eq!(class_counts(&a, 2), vec![5, 5]);
        let b = generate_dataset(5, 2, 3, 1.0, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(5, 2, 3, 1.0, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn low_spread_classes_are_separable() {
        let data = generate_dataset(100, 4, 8, 0.1, 1).unwrap();
        assert!(nearest_centroid_accuracy(&data, 4) >= 0.95);
        // more classes than dimensions still separates at unit spread
        let data = generate_dataset(100, 12, 4, 0.1, 1).unwrap();
        assert!(nearest_centroid_accuracy(&data, 12) >= 0.95);
    }

    #[test]
    fn generate_rejects_bad_arguments() {
        assert!(generate_dataset(0, 2, 2, 1.0, 0).is_err());
        assert!(generate_dataset(2, 2, 2, 0.0, 0).is_err());
    }

    fn base(seed: u64) -> Vec<LabeledSample> {
        generate_dataset(50, 10, 16, 1.0, seed).unwrap()
    }

    #[test]
    fn full_class_range_covers_every_class() {
        let cfg = PartitionConfig {
            num_clients: 10,
            classes_per_client: (10, 10),
            samples_per_client: (400, 400),
            ..Default::default()
        };
        for client in partition_non_iid(&base(0), 10, &cfg).unwrap() {
            assert_eq!(client.len(), 400);
            assert!(client.class_counts().iter().all(|&n| n > 0));
        }
    }

    #[test]
    fn single_class_clients_are_one_hot() {
        let cfg = PartitionConfig {
            num_clients: 20,
            classes_per_client: (1, 1),
            ..Default::default()
        };
        for client in partition_non_iid(&base(0), 10, &cfg).unwrap() {
            let counts = client.class_counts();
            assert_eq!(counts.iter().filter(|&&n| n > 0).count(), 1);
            assert_eq!(counts.iter().sum::<usize>(), client.len());
            let comp = true_composition(&client);
            assert_eq!(comp.as_slice().iter().filter(|&&v| v == 1.0).count(), 1);
        }
    }

    #[test]
    fn mean_classes_per_client_matches_uniform_expectation() {
        let cfg = PartitionConfig::default();
        let clients = partition_non_iid(&base(3), 10, &cfg).unwrap();
        let mean = clients
            .iter()
            .map(|c| c.class_counts().iter().filter(|&&n| n > 0).count() as f64)
            .sum::<f64>()
            / clients.len() as f64;
        assert!((mean - 3.0).abs() <= 0.5, "mean classes per client {mean}");
    }

    #[test]
    fn partition_is_deterministic() {
        let cfg = PartitionConfig {
            seed: 17,
            ..Default::default()
        };
        let a = partition_non_iid(&base(1), 10, &cfg).unwrap();
        let b = partition_non_iid(&base(1), 10, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_class_is_a_construction_error() {
        let data: Vec<_> = base(0).into_iter().filter(|s| s.label != 4).collect();
        let err = partition_non_iid(&data, 10, &PartitionConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Construction(_)));
    }

    #[test]
    fn disjoint_shards_do_not_share_samples() {
        let cfg = PartitionConfig {
            num_clients: 10,
            samples_per_client: (10, 30),
            disjoint: true,
            ..Default::default()
        };
        let clients = partition_non_iid(&base(2), 10, &cfg).unwrap();
        let mut seen = BTreeSet::new();
        for c in &clients {
            for s in c.samples() {
                let key: Vec<u64> = s.features.iter().map(|f| f.to_bits()).collect();
                assert!(seen.insert(key));
            }
        }
    }

    #[test]
    fn iid_partition_has_identical_counts() {
        let data = base(4);
        let one = partition_iid(&data, 10, 1, 0).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].len(), data.len());
        let clients = partition_iid(&data, 10, 7, 0).unwrap();
        let first = clients[0].class_counts();
        assert_eq!(first, vec![7; 10]);
        for c in &clients {
            assert_eq!(c.class_counts(), first);
            let kl = crate::estimator::kl_to_uniform(&true_composition(c));
            assert!(kl.abs() < 1e-12);
        }
        assert!(partition_iid(&data, 10, 51, 0).is_err());
    }

    #[test]
    fn auxiliary_set_is_balanced_and_checked() {
        let data = base(5);
        let aux = auxiliary_set(&data, 10, 1, 0).unwrap();
        assert_eq!(aux.len(), 10);
        let labels: BTreeSet<_> = aux.iter().map(|s| s.label).collect();
        assert_eq!(labels.len(), 10);
        let aux = auxiliary_set(&data, 10, 7, 0).unwrap();
        assert_eq!(class_counts(&aux, 10), vec![7; 10]);
        assert!(matches!(
            auxiliary_set(&data, 10, 51, 0),
            Err(Error::Construction(_))
        ));
    }

    #[test]
    fn auxiliary_samples_never_reach_client_shards() {
        let data = base(6);
        let (train, test) = train_test_split(&data, 10, 0.2, 6).unwrap();
        assert_eq!(test.len(), 100);
        let aux = auxiliary_set(&test, 10, 5, 6).unwrap();
        let clients = partition_non_iid(&train, 10, &PartitionConfig::default()).unwrap();
        let key = |s: &LabeledSample| s.features.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        let aux_keys: BTreeSet<_> = aux.iter().map(key).collect();
        let shard_keys: BTreeSet<_> = clients
            .iter()
            .flat_map(|c| c.samples().iter().map(key))
            .collect();
        assert!(aux_keys.is_disjoint(&shard_keys));
    }

    #[test]
    fn true_composition_values() {
        let c = composition_from_counts(&[3, 4]);
        assert!((c.as_slice()[0] - 0.36).abs() < 1e-15);
        assert!((c.as_slice()[1] - 0.64).abs() < 1e-15);
        let balanced = composition_from_counts(&[5; 4]);
        assert!(balanced
            .as_slice()
            .iter()
            .all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn dataset_file_round_trip() {
        let data = generate_dataset(3, 4, 5, 1.0, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.txt");
        write_dataset(&path, &data, 4, 5).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# C=4 d=5\n"));
        let (back, c, d) = read_dataset(&path).unwrap();
        assert_eq!((c, d), (4, 5));
        assert_eq!(back, data);
    }

    #[test]
    fn dataset_reader_reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        fs::write(&path, "# C=2 d=2\n0,1.0,2.0\n1,abc,2.0\n").unwrap();
        match read_dataset(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn composition_from_counts_is_on_simplex(counts in proptest::collection::vec(0usize..500, 1..12)) {
                let c = composition_from_counts(&counts);
                let sum: f64 = c.as_slice().iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-12);
                prop_assert!(c.as_slice().iter().all(|&v| v >= 0.0));
            }
        }
    }
}
