//! Interaction data: loading, filtering, splitting, synthetic generation,
//! popularity bucketing and target-item sampling.
//!
//! The central type is [`InteractionMatrix`], a sparse binary user-by-item
//! feedback table. All operations here are pure given their seed, and the
//! matrix is immutable after construction.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sparse binary implicit-feedback matrix. Rows are per-user sorted lists of
/// interacted item indices; entries are implicitly 0/1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionMatrix {
    n_items: usize,
    rows: Vec<Vec<u32>>,
}

impl InteractionMatrix {
    /// Build from per-user item lists. Rows are sorted and deduplicated;
    /// item indices must be `< n_items`.
    pub fn from_rows(n_items: usize, mut rows: Vec<Vec<u32>>) -> Result<Self> {
        for (u, row) in rows.iter_mut().enumerate() {
            row.sort_unstable();
            row.dedup();
            if let Some(&last) = row.last() {
                if last as usize >= n_items {
                    return Err(Error::Precondition(format!(
                        "user {u} references item {last} >= n_items {n_items}"
                    )));
                }
            }
        }
        Ok(Self { n_items, rows })
    }

    pub fn n_users(&self) -> usize {
        self.rows.len()
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn row(&self, user: usize) -> &[u32] {
        &self.rows[user]
    }

    pub fn rows(&self) -> &[Vec<u32>] {
        &self.rows
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn density(&self) -> f64 {
        if self.rows.is_empty() || self.n_items == 0 {
            return 0.0;
        }
        self.nnz() as f64 / (self.rows.len() * self.n_items) as f64
    }

    pub fn contains(&self, user: usize, item: u32) -> bool {
        self.rows[user].binary_search(&item).is_ok()
    }

    /// Per-item click counts over all users.
    pub fn item_counts(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.n_items];
        for row in &self.rows {
            for &i in row {
                counts[i as usize] += 1;
            }
        }
        counts
    }

    /// Dense 0/1 copy (small instances only).
    pub fn to_dense(&self) -> Array2<f64> {
        let mut x = Array2::<f64>::zeros((self.rows.len(), self.n_items));
        for (u, row) in self.rows.iter().enumerate() {
            for &i in row {
                x[[u, i as usize]] = 1.0;
            }
        }
        x
    }

    /// New matrix with extra rows appended after the existing users.
    pub fn append_rows(&self, extra: &[Vec<u32>]) -> Result<Self> {
        let mut rows = self.rows.clone();
        rows.extend_from_slice(extra);
        Self::from_rows(self.n_items, rows)
    }

    /// Serialize in the dataset text format: one `user item` pair per line,
    /// sorted by (user, item). `user_offset` shifts the emitted user ids.
    pub fn to_text(&self, user_offset: usize) -> String {
        let mut out = String::new();
        for (u, row) in self.rows.iter().enumerate() {
            for &i in row {
                let _ = writeln!(out, "{} {}", u + user_offset, i);
            }
        }
        out
    }
}

/// A dataset loaded from disk, with the dense-index remapping retained.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub matrix: InteractionMatrix,
    /// Original user token per dense user index (order of first appearance).
    pub user_ids: Vec<String>,
    /// Original item token per dense item index (order of first appearance).
    pub item_ids: Vec<String>,
}

/// Parse dataset text: one interaction per line, whitespace- or
/// comma-separated `user item [extra columns ignored]`, `#` comments.
fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (user, item) = if line.contains(',') {
            let mut fields = line.split(',').map(str::trim);
            (fields.next(), fields.next())
        } else {
            let mut fields = line.split_whitespace();
            (fields.next(), fields.next())
        };
        match (user, item) {
            (Some(u), Some(i)) if !u.is_empty() && !i.is_empty() => {
                pairs.push((u.to_string(), i.to_string()));
            }
            _ => {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: format!("expected `user item`, got {line:?}"),
                })
            }
        }
    }
    Ok(pairs)
}

/// Load a dataset file and iteratively remove users and items with fewer
/// than `min_feedback` interactions until a fixpoint, then remap surviving
/// ids to dense 0-based indices in order of first appearance.
pub fn load_dataset(path: &Path, min_feedback: usize) -> Result<LoadedDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    load_dataset_str(&text, min_feedback)
}

/// In-memory variant of [`load_dataset`].
pub fn load_dataset_str(text: &str, min_feedback: usize) -> Result<LoadedDataset> {
    let mut pairs = parse_pairs(text)?;
    // Deduplicate repeated interactions while preserving first-appearance order.
    {
        let mut seen = std::collections::HashSet::new();
        pairs.retain(|p| seen.insert(p.clone()));
    }

    // Iterative filter to fixpoint.
    loop {
        let mut user_deg: BTreeMap<&str, usize> = BTreeMap::new();
        let mut item_deg: BTreeMap<&str, usize> = BTreeMap::new();
        for (u, i) in &pairs {
            *user_deg.entry(u).or_default() += 1;
            *item_deg.entry(i).or_default() += 1;
        }
        let before = pairs.len();
        let keep: Vec<bool> = pairs
            .iter()
            .map(|(u, i)| user_deg[u.as_str()] >= min_feedback && item_deg[i.as_str()] >= min_feedback)
            .collect();
        let mut it = keep.iter();
        pairs.retain(|_| *it.next().unwrap());
        if pairs.len() == before {
            break;
        }
    }

    if pairs.is_empty() {
        return Err(Error::Degenerate(
            "no interactions survive the min-feedback filter".into(),
        ));
    }

    // Dense remap in order of first appearance.
    let mut user_index: BTreeMap<String, u32> = BTreeMap::new();
    let mut item_index: BTreeMap<String, u32> = BTreeMap::new();
    let mut user_ids = Vec::new();
    let mut item_ids = Vec::new();
    let mut rows: Vec<Vec<u32>> = Vec::new();
    for (u, i) in &pairs {
        let uid = *user_index.entry(u.clone()).or_insert_with(|| {
            user_ids.push(u.clone());
            rows.push(Vec::new());
            (user_ids.len() - 1) as u32
        });
        let iid = *item_index.entry(i.clone()).or_insert_with(|| {
            item_ids.push(i.clone());
            (item_ids.len() - 1) as u32
        });
        rows[uid as usize].push(iid);
    }
    let matrix = InteractionMatrix::from_rows(item_ids.len(), rows)?;
    Ok(LoadedDataset {
        matrix,
        user_ids,
        item_ids,
    })
}

/// Train/test partition of a matrix. Disjoint per (user, item) pair; the
/// union equals the source and every user keeps at least one training item.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: InteractionMatrix,
    pub test: InteractionMatrix,
    pub seed: u64,
}

/// Manifest persisted next to split artifacts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitManifest {
    pub kind: String,
    pub mode: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
    pub n_users: usize,
    pub n_items: usize,
    pub train_nnz: usize,
    pub test_nnz: usize,
}

fn split_by_choice(
    x: &InteractionMatrix,
    seed: u64,
    mut pick: impl FnMut(&mut ChaCha8Rng, usize) -> usize,
) -> DatasetSplit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_rows = Vec::with_capacity(x.n_users());
    let mut test_rows = Vec::with_capacity(x.n_users());
    for row in x.rows() {
        let k = pick(&mut rng, row.len());
        if k == 0 || row.len() < 2 {
            train_rows.push(row.clone());
            test_rows.push(Vec::new());
            continue;
        }
        let chosen = sample(&mut rng, row.len(), k);
        let mut mask = vec![false; row.len()];
        for idx in chosen.iter() {
            mask[idx] = true;
        }
        let mut tr = Vec::with_capacity(row.len() - k);
        let mut te = Vec::with_capacity(k);
        for (j, &item) in row.iter().enumerate() {
            if mask[j] {
                te.push(item);
            } else {
                tr.push(item);
            }
        }
        train_rows.push(tr);
        test_rows.push(te);
    }
    DatasetSplit {
        train: InteractionMatrix::from_rows(x.n_items(), train_rows).expect("rows valid"),
        test: InteractionMatrix::from_rows(x.n_items(), test_rows).expect("rows valid"),
        seed,
    }
}

/// Per-user proportional holdout: `floor(ratio * |row|)` interactions move
/// to the test set, uniformly at random under the seed. Users with a single
/// interaction keep it in train.
pub fn holdout_split(x: &InteractionMatrix, ratio: f64, seed: u64) -> Result<DatasetSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Precondition(format!(
            "holdout ratio must be in (0, 1), got {ratio}"
        )));
    }
    Ok(split_by_choice(x, seed, |_, len| {
        (ratio * len as f64).floor() as usize
    }))
}

/// Reserve exactly one interacted item per user for testing.
pub fn leave_one_out(x: &InteractionMatrix, seed: u64) -> Result<DatasetSplit> {
    for (u, row) in x.rows().iter().enumerate() {
        if row.len() < 2 {
            return Err(Error::Precondition(format!(
                "leave-one-out requires >= 2 interactions per user; user {u} has {}",
                row.len()
            )));
        }
    }
    Ok(split_by_choice(x, seed, |_, _| 1))
}

/// Recipe for the low-rank synthetic dataset: per-user and per-item factors
/// drawn from a standard normal, thresholded at `threshold`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_users: usize,
    pub n_fake: usize,
    pub n_items: usize,
    pub rank: usize,
    pub threshold: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.n_items == 0 {
            return Err(Error::Config("n_users and n_items must be positive".into()));
        }
        if self.rank == 0 || self.rank * 2 > self.n_users.min(self.n_items) {
            return Err(Error::Config(format!(
                "rank {} must satisfy 0 < rank << min(n_users, n_items)",
                self.rank
            )));
        }
        if !self.threshold.is_finite() {
            return Err(Error::Config("threshold must be finite".into()));
        }
        Ok(())
    }
}

const SYNTH_MAX_RESAMPLE: usize = 100;

/// Generate the synthetic matrix: `x_ui = 1` iff `mu_u . nu_i >= threshold`
/// with `mu_u, nu_i ~ N(0, I_rank)`. Users whose row comes out all-zero are
/// resampled up to 100 times.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<InteractionMatrix> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.rank;
    // Item factors first, then users row by row so a user resample only
    // consumes fresh draws.
    let mut item_factors = vec![0.0f64; spec.n_items * d];
    for v in item_factors.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    let mut rows = Vec::with_capacity(spec.n_users);
    let mut mu = vec![0.0f64; d];
    for user in 0..spec.n_users {
        let mut row = Vec::new();
        let mut ok = false;
        for _ in 0..SYNTH_MAX_RESAMPLE {
            for v in mu.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            row.clear();
            for i in 0..spec.n_items {
                let nu = &item_factors[i * d..(i + 1) * d];
                let dot: f64 = mu.iter().zip(nu).map(|(a, b)| a * b).sum();
                if dot >= spec.threshold {
                    row.push(i as u32);
                }
            }
            if !row.is_empty() {
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(Error::Degenerate(format!(
                "user {user} produced an all-zero row after {SYNTH_MAX_RESAMPLE} resamples; threshold too high"
            )));
        }
        rows.push(row);
    }
    InteractionMatrix::from_rows(spec.n_items, rows)
}

/// Item popularity buckets at the 95/75/50 click-count percentiles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PopularityBuckets {
    pub head: Vec<u32>,
    pub upper_torso: Vec<u32>,
    pub lower_torso: Vec<u32>,
    pub tail: Vec<u32>,
}

/// Bucket names accepted in configs and on the API.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BucketName {
    Head,
    UpperTorso,
    LowerTorso,
    Tail,
}

impl BucketName {
    pub const ALL: [BucketName; 4] = [
        BucketName::Head,
        BucketName::UpperTorso,
        BucketName::LowerTorso,
        BucketName::Tail,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            BucketName::Head => "head",
            BucketName::UpperTorso => "upper_torso",
            BucketName::LowerTorso => "lower_torso",
            BucketName::Tail => "tail",
        }
    }
}

impl std::str::FromStr for BucketName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "head" => Ok(BucketName::Head),
            "upper_torso" => Ok(BucketName::UpperTorso),
            "lower_torso" => Ok(BucketName::LowerTorso),
            "tail" => Ok(BucketName::Tail),
            other => Err(Error::Config(format!("unknown popularity bucket {other:?}"))),
        }
    }
}

impl PopularityBuckets {
    pub fn get(&self, name: BucketName) -> &[u32] {
        match name {
            BucketName::Head => &self.head,
            BucketName::UpperTorso => &self.upper_torso,
            BucketName::LowerTorso => &self.lower_torso,
            BucketName::Tail => &self.tail,
        }
    }
}

/// Partition items into head / upper torso / lower torso / tail by click
/// count. Boundary ties resolve by ascending item index (the smaller index
/// lands in the more popular bucket).
pub fn popularity_buckets(x: &InteractionMatrix) -> PopularityBuckets {
    let counts = x.item_counts();
    let n = counts.len();
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_by(|&a, &b| {
        counts[b as usize]
            .cmp(&counts[a as usize])
            .then(a.cmp(&b))
    });
    let head_end = n * 5 / 100;
    let upper_end = n * 25 / 100;
    let lower_end = n * 50 / 100;
    let bucket = |lo: usize, hi: usize| {
        let mut v: Vec<u32> = order[lo..hi].to_vec();
        v.sort_unstable();
        v
    };
    PopularityBuckets {
        head: bucket(0, head_end),
        upper_torso: bucket(head_end, upper_end),
        lower_torso: bucket(upper_end, lower_end),
        tail: bucket(lower_end, n),
    }
}

/// Sample `n` distinct items uniformly from a bucket.
pub fn sample_target_set(bucket: &[u32], n: usize, seed: u64) -> Result<Vec<u32>> {
    if bucket.len() < n {
        return Err(Error::Precondition(format!(
            "bucket holds {} items, cannot sample {n}",
            bucket.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = sample(&mut rng, bucket.len(), n);
    let mut out: Vec<u32> = idx.iter().map(|j| bucket[j]).collect();
    out.sort_unstable();
    Ok(out)
}
