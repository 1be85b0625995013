//! Synthetic Gaussian-mixture data and label-skewed client partitions.
//!
//! Two partitioners are provided: per-class Dirichlet proportions and a
//! "few classes per client" shard split. Each client's test set is drawn from
//! the held-out samples with the same per-class shares as its training data,
//! so accuracy is measured against the client's own label distribution.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed::{rng_for, stream};

pub const DEFAULT_NUM_CLASSES: usize = 4;
pub const DEFAULT_INPUT_DIM: usize = 16;
pub const DEFAULT_SAMPLES_PER_CLASS: usize = 300;
pub const DEFAULT_SPREAD: f64 = 6.0;
pub const DEFAULT_MIN_SAMPLES: usize = 10;
pub const DEFAULT_BATCH_SIZE: usize = 50;
pub const MAX_PARTITION_RETRIES: usize = 1000;
pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
    in_train: Vec<bool>,
    train: Vec<usize>,
    test: Vec<usize>,
}

impl SyntheticDataset {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
        in_train: Vec<bool>,
    ) -> Result<Self> {
        if features.rows() != labels.len() || labels.len() != in_train.len() {
            return Err(Error::shape("features, labels and split mask differ in length"));
        }
        if num_classes == 0 {
            return Err(Error::shape("num_classes must be positive"));
        }
        let mut seen = vec![false; num_classes];
        for &y in &labels {
            *seen
                .get_mut(y)
                .ok_or_else(|| Error::Index(format!("label {y} >= {num_classes}")))? = true;
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::shape(format!("class {c} has no samples")));
        }
        if features.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("dataset features must be finite".into()));
        }
        let train = (0..labels.len()).filter(|&i| in_train[i]).collect();
        let test = (0..labels.len()).filter(|&i| !in_train[i]).collect();
        Ok(Self {
            features,
            labels,
            num_classes,
            in_train,
            train,
            test,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn is_train(&self, i: usize) -> bool {
        self.in_train[i]
    }

    pub fn train_indices(&self) -> &[usize] {
        &self.train
    }

    pub fn test_indices(&self) -> &[usize] {
        &self.test
    }

    /// Indices of `pool` grouped by label.
    fn by_class(&self, pool: &[usize]) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for &i in pool {
            out[self.labels[i]].push(i);
        }
        out
    }

    pub fn gather(&self, indices: &[usize]) -> (Matrix, Vec<usize>) {
        (
            self.features.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    pub fn label_counts(&self, indices: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &i in indices {
            counts[self.labels[i]] += 1;
        }
        counts
    }
}

/// Class `c` is drawn from `N(mean_c, I)` with `|mean_c| = spread` in a seeded
/// random direction; 80% of each class goes to training.
pub fn gen_gaussian_mixture(
    num_classes: usize,
    input_dim: usize,
    n_per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<SyntheticDataset> {
    if num_classes == 0 || input_dim == 0 || n_per_class == 0 {
        return Err(Error::config("dataset counts must be positive"));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::config("spread must be finite and >= 0"));
    }
    let mut rng = rng_for(seed, &[stream::DATASET]);
    let means: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| {
            let dir: Vec<f64> = (0..input_dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            dir.into_iter().map(|v| spread * v / norm).collect()
        })
        .collect();

    let n = num_classes * n_per_class;
    let mut data = Vec::with_capacity(n * input_dim);
    let mut labels = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..n_per_class {
            for m in mean {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(m + z);
            }
            labels.push(c);
        }
    }

    let n_train = ((n_per_class as f64) * TRAIN_FRACTION).round() as usize;
    let mut in_train = vec![false; n];
    for c in 0..num_classes {
        let mut idx: Vec<usize> = (c * n_per_class..(c + 1) * n_per_class).collect();
        idx.shuffle(&mut rng);
        for &i in &idx[..n_train] {
            in_train[i] = true;
        }
    }
    SyntheticDataset::new(Matrix::from_vec(n, input_dim, data)?, labels, num_classes, in_train)
}

/// Per-client train and test sample indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub train: Vec<Vec<usize>>,
    pub test: Vec<Vec<usize>>,
}

impl Partition {
    pub fn num_clients(&self) -> usize {
        self.train.len()
    }

    pub fn client_train(&self, client: usize) -> Result<&[usize]> {
        self.train
            .get(client)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownClient(client))
    }

    pub fn client_test(&self, client: usize) -> Result<&[usize]> {
        self.test
            .get(client)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownClient(client))
    }

    /// Checks disjointness, coverage by the train/test masks and the per-client minimum.
    pub fn validate(&self, ds: &SyntheticDataset, min_samples: usize) -> Result<()> {
        if self.train.len() != self.test.len() {
            return Err(Error::shape("train and test lists cover different clients"));
        }
        let mut owner = vec![false; ds.len()];
        for (m, (tr, te)) in self.train.iter().zip(&self.test).enumerate() {
            if tr.len() < min_samples {
                return Err(Error::config(format!(
                    "client {m} holds {} training samples, fewer than {min_samples}",
                    tr.len()
                )));
            }
            for (&i, want_train) in tr.iter().map(|i| (i, true)).chain(te.iter().map(|i| (i, false)))
            {
                if i >= ds.len() || ds.is_train(i) != want_train {
                    return Err(Error::Index(format!(
                        "client {m} references sample {i} outside its split"
                    )));
                }
                if std::mem::replace(&mut owner[i], true) {
                    return Err(Error::Protocol(format!("sample {i} assigned twice")));
                }
            }
        }
        Ok(())
    }
}

fn dirichlet<R: Rng + ?Sized>(beta: f64, k: usize, rng: &mut R) -> Result<Vec<f64>> {
    let gamma = Gamma::new(beta, 1.0).map_err(|e| Error::config(format!("beta: {e}")))?;
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        Ok(draws.into_iter().map(|g| g / total).collect())
    } else {
        // every gamma draw underflowed; put all mass on one client
        let mut p = vec![0.0; k];
        p[rng.random_range(0..k)] = 1.0;
        Ok(p)
    }
}

/// Splits `items` into consecutive chunks with the given cumulative fractions.
fn split_by_fractions(items: &[usize], fractions: &[f64]) -> Vec<Vec<usize>> {
    let n = items.len();
    let mut out = Vec::with_capacity(fractions.len());
    let mut acc = 0.0;
    let mut start = 0;
    for (k, f) in fractions.iter().enumerate() {
        acc += f;
        let end = if k + 1 == fractions.len() {
            n
        } else {
            ((acc * n as f64).round() as usize).clamp(start, n)
        };
        out.push(items[start..end].to_vec());
        start = end;
    }
    out
}

/// Draws each client's test indices with the same class shares as its training data.
fn mirror_test_sets(
    ds: &SyntheticDataset,
    train: &[Vec<usize>],
    rng: &mut impl Rng,
) -> Vec<Vec<usize>> {
    let m = train.len();
    let mut test = vec![Vec::new(); m];
    let counts: Vec<Vec<usize>> = train.iter().map(|t| ds.label_counts(t)).collect();
    for (c, mut pool) in ds.by_class(ds.test_indices()).into_iter().enumerate() {
        let class_total: usize = counts.iter().map(|k| k[c]).sum();
        if class_total == 0 {
            continue;
        }
        pool.shuffle(rng);
        let fractions: Vec<f64> = counts
            .iter()
            .map(|k| k[c] as f64 / class_total as f64)
            .collect();
        for (client, chunk) in split_by_fractions(&pool, &fractions).into_iter().enumerate() {
            test[client].extend(chunk);
        }
    }
    for t in &mut test {
        t.sort_unstable();
    }
    test
}

fn meets_minimum(train: &[Vec<usize>], test: &[Vec<usize>], min_samples: usize) -> bool {
    train.iter().all(|t| t.len() >= min_samples) && test.iter().all(|t| !t.is_empty())
}

/// For every class, client shares are drawn from `Dirichlet(beta, ..., beta)`.
/// Draws are repeated (up to [`MAX_PARTITION_RETRIES`]) until every client holds
/// at least `min_samples` training samples and one test sample.
pub fn dirichlet_partition(
    ds: &SyntheticDataset,
    clients: usize,
    beta: f64,
    min_samples: usize,
    seed: u64,
) -> Result<Partition> {
    if clients == 0 {
        return Err(Error::config("clients must be >= 1"));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::config(format!("beta must be > 0, got {beta}")));
    }
    let mut rng = rng_for(seed, &[stream::PARTITION]);
    let classes = ds.by_class(ds.train_indices());
    for _ in 0..MAX_PARTITION_RETRIES {
        let mut train = vec![Vec::new(); clients];
        for pool in &classes {
            let mut pool = pool.clone();
            pool.shuffle(&mut rng);
            let props = dirichlet(beta, clients, &mut rng)?;
            for (m, chunk) in split_by_fractions(&pool, &props).into_iter().enumerate() {
                train[m].extend(chunk);
            }
        }
        for t in &mut train {
            t.sort_unstable();
        }
        let test = mirror_test_sets(ds, &train, &mut rng);
        if meets_minimum(&train, &test, min_samples) {
            return Ok(Partition { train, test });
        }
    }
    Err(Error::config(format!(
        "no Dirichlet(beta={beta}) draw gave all {clients} clients >= {min_samples} samples \
         after {MAX_PARTITION_RETRIES} attempts"
    )))
}

/// Each client receives `classes_per_client` distinct classes; the samples of a
/// class are divided evenly among the clients holding it.
pub fn shard_partition(
    ds: &SyntheticDataset,
    clients: usize,
    classes_per_client: usize,
    min_samples: usize,
    seed: u64,
) -> Result<Partition> {
    let k = ds.num_classes();
    if clients == 0 {
        return Err(Error::config("clients must be >= 1"));
    }
    if classes_per_client == 0 || classes_per_client > k {
        return Err(Error::config(format!(
            "classes_per_client must lie in [1, {k}], got {classes_per_client}"
        )));
    }
    if clients * classes_per_client < k {
        return Err(Error::config(format!(
            "{clients} clients x {classes_per_client} classes cannot cover {k} classes"
        )));
    }
    let mut rng = rng_for(seed, &[stream::PARTITION]);
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(&mut rng);
    let mut holders = vec![Vec::new(); k];
    for m in 0..clients {
        for j in 0..classes_per_client {
            holders[order[(m * classes_per_client + j) % k]].push(m);
        }
    }
    let mut train = vec![Vec::new(); clients];
    for (c, mut pool) in ds.by_class(ds.train_indices()).into_iter().enumerate() {
        pool.shuffle(&mut rng);
        let share = vec![1.0 / holders[c].len() as f64; holders[c].len()];
        for (chunk, &m) in split_by_fractions(&pool, &share).into_iter().zip(&holders[c]) {
            train[m].extend(chunk);
        }
    }
    for t in &mut train {
        t.sort_unstable();
    }
    let test = mirror_test_sets(ds, &train, &mut rng);
    if !meets_minimum(&train, &test, min_samples) {
        return Err(Error::config(format!(
            "shard split leaves some client below {min_samples} training samples or without test data"
        )));
    }
    Ok(Partition { train, test })
}

/// Client `m` holds exactly the classes `class_sets[m]`; the training samples
/// of a class are split evenly among the clients holding it. Used for
/// controlled probes where a few clients share the same label set.
pub fn class_set_partition(
    ds: &SyntheticDataset,
    class_sets: &[Vec<usize>],
    seed: u64,
) -> Result<Partition> {
    if class_sets.is_empty() {
        return Err(Error::config("probe needs at least one client"));
    }
    let k = ds.num_classes();
    for set in class_sets {
        if set.is_empty() {
            return Err(Error::config("every probe client needs at least one class"));
        }
        if let Some(&c) = set.iter().find(|&&c| c >= k) {
            return Err(Error::config(format!("probe class {c} does not exist")));
        }
    }
    let mut rng = rng_for(seed, &[stream::PARTITION]);
    let by_class = ds.by_class(ds.train_indices());
    let mut train = vec![Vec::new(); class_sets.len()];
    for (c, pool) in by_class.iter().enumerate() {
        let holders: Vec<usize> = (0..class_sets.len())
            .filter(|&m| class_sets[m].contains(&c))
            .collect();
        if holders.is_empty() {
            continue;
        }
        let mut pool = pool.clone();
        pool.shuffle(&mut rng);
        let share = vec![1.0 / holders.len() as f64; holders.len()];
        for (m, chunk) in holders.iter().zip(split_by_fractions(&pool, &share)) {
            train[*m].extend(chunk);
        }
    }
    for t in &mut train {
        t.sort_unstable();
    }
    let test = mirror_test_sets(ds, &train, &mut rng);
    if !meets_minimum(&train, &test, 1) {
        return Err(Error::config("probe class sets leave a client without data"));
    }
    Ok(Partition { train, test })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
}

/// One epoch of mini-batches over a client's training indices.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStream {
    batches: Vec<Batch>,
}

impl BatchStream {
    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.batches.iter().map(|b| b.labels.len()).collect()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Batch> {
        self.batches.iter()
    }
}

impl IntoIterator for BatchStream {
    type Item = Batch;
    type IntoIter = std::vec::IntoIter<Batch>;

    fn into_iter(self) -> Self::IntoIter {
        self.batches.into_iter()
    }
}

impl<'a> IntoIterator for &'a BatchStream {
    type Item = &'a Batch;
    type IntoIter = std::slice::Iter<'a, Batch>;

    fn into_iter(self) -> Self::IntoIter {
        self.batches.iter()
    }
}

/// Shuffled mini-batches of `indices`; the order depends only on `(epoch_seed, client_id)`.
pub fn batches_from_indices(
    ds: &SyntheticDataset,
    indices: &[usize],
    client_id: usize,
    batch_size: usize,
    epoch_seed: u64,
) -> Result<BatchStream> {
    if batch_size == 0 {
        return Err(Error::config("batch_size must be >= 1"));
    }
    let mut order = indices.to_vec();
    let mut rng = rng_for(epoch_seed, &[stream::BATCHES, client_id as u64]);
    order.shuffle(&mut rng);
    let batches = order
        .chunks(batch_size)
        .map(|chunk| {
            let (inputs, labels) = ds.gather(chunk);
            Batch { inputs, labels }
        })
        .collect();
    Ok(BatchStream { batches })
}

pub fn batches(
    partition: &Partition,
    client_id: usize,
    ds: &SyntheticDataset,
    batch_size: usize,
    epoch_seed: u64,
) -> Result<BatchStream> {
    let indices = partition.client_train(client_id)?;
    batches_from_indices(ds, indices, client_id, batch_size, epoch_seed)
}

const DATASET_MAGIC: &str = "# uapdfl-dataset v1";
const PARTITION_MAGIC: &str = "# uapdfl-partition v1";

/// Writes the dataset as comma-separated text.
///
/// ```text
/// # uapdfl-dataset v1
/// # num_classes=<k> input_dim=<d> rows=<n>
/// split,label,x0,...,x<d-1>
/// train,<label>,<f64>,...
/// ```
pub fn write_dataset<W: Write>(ds: &SyntheticDataset, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{DATASET_MAGIC}")?;
    writeln!(
        w,
        "# num_classes={} input_dim={} rows={}",
        ds.num_classes(),
        ds.input_dim(),
        ds.len()
    )?;
    write!(w, "split,label")?;
    for j in 0..ds.input_dim() {
        write!(w, ",x{j}")?;
    }
    writeln!(w)?;
    for (i, row) in ds.features.iter_rows().enumerate() {
        let split = if ds.in_train[i] { "train" } else { "test" };
        write!(w, "{split},{}", ds.labels[i])?;
        for v in row {
            // Display for f64 prints the shortest round-tripping representation
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn header_value(header: &str, key: &str, line: usize) -> Result<usize> {
    header
        .split_whitespace()
        .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .ok_or_else(|| parse_err(line, format!("missing {key}")))?
        .parse()
        .map_err(|_| parse_err(line, format!("bad {key}")))
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<SyntheticDataset> {
    let mut lines = r.lines().enumerate();
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, Ok(l))) => Ok((i + 1, l)),
            Some((i, Err(e))) => Err(parse_err(i + 1, e.to_string())),
            None => Err(parse_err(0, format!("missing {what}"))),
        }
    };
    let (n, magic) = next("magic line")?;
    if magic.trim() != DATASET_MAGIC {
        return Err(parse_err(n, "not a uapdfl dataset file"));
    }
    let (n, header) = next("header")?;
    let num_classes = header_value(&header, "num_classes", n)?;
    let input_dim = header_value(&header, "input_dim", n)?;
    let rows = header_value(&header, "rows", n)?;
    next("column header")?;
    let mut data = Vec::with_capacity(rows * input_dim);
    let mut labels = Vec::with_capacity(rows);
    let mut in_train = Vec::with_capacity(rows);
    for _ in 0..rows {
        let (n, line) = next("data row")?;
        let mut fields = line.split(',');
        in_train.push(match fields.next() {
            Some("train") => true,
            Some("test") => false,
            _ => return Err(parse_err(n, "split must be train or test")),
        });
        labels.push(
            fields
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| parse_err(n, "bad label"))?,
        );
        let before = data.len();
        for f in fields {
            data.push(f.parse::<f64>().map_err(|_| parse_err(n, format!("bad value {f:?}")))?);
        }
        if data.len() - before != input_dim {
            return Err(parse_err(n, format!("expected {input_dim} features")));
        }
    }
    SyntheticDataset::new(Matrix::from_vec(rows, input_dim, data)?, labels, num_classes, in_train)
}

/// Writes one line per (client, set):
///
/// ```text
/// # uapdfl-partition v1
/// # clients=<m>
/// client,set,indices
/// 0,train,3 8 15
/// 0,test,1 9
/// ```
pub fn write_partition<W: Write>(p: &Partition, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{PARTITION_MAGIC}")?;
    writeln!(w, "# clients={}", p.num_clients())?;
    writeln!(w, "client,set,indices")?;
    for (m, (tr, te)) in p.train.iter().zip(&p.test).enumerate() {
        for (name, idx) in [("train", tr), ("test", te)] {
            let joined: Vec<String> = idx.iter().map(usize::to_string).collect();
            writeln!(w, "{m},{name},{}", joined.join(" "))?;
        }
    }
    Ok(())
}

pub fn read_partition<R: BufRead>(r: R) -> Result<Partition> {
    let mut clients = None;
    let mut train: Vec<Vec<usize>> = Vec::new();
    let mut test: Vec<Vec<usize>> = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| parse_err(n, e.to_string()))?;
        match n {
            1 if line.trim() != PARTITION_MAGIC => {
                return Err(parse_err(n, "not a uapdfl partition file"))
            }
            1 | 3 => continue,
            2 => {
                let m = header_value(&line, "clients", n)?;
                clients = Some(m);
                train = vec![Vec::new(); m];
                test = vec![Vec::new(); m];
                continue;
            }
            _ => {}
        }
        if line.trim().is_empty() {
            continue;
        }
        let m = clients.ok_or_else(|| parse_err(n, "missing clients header"))?;
        let mut fields = line.splitn(3, ',');
        let client: usize = fields
            .next()
            .and_then(|s| s.parse().ok())
            .filter(|&c| c < m)
            .ok_or_else(|| parse_err(n, "bad client id"))?;
        let target = match fields.next() {
            Some("train") => &mut train[client],
            Some("test") => &mut test[client],
            _ => return Err(parse_err(n, "set must be train or test")),
        };
        for tok in fields.next().unwrap_or("").split_whitespace() {
            target.push(tok.parse().map_err(|_| parse_err(n, format!("bad index {tok:?}")))?);
        }
    }
    if clients.is_none() {
        return Err(parse_err(0, "missing clients header"));
    }
    Ok(Partition { train, test })
}
