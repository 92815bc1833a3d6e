//! Worker-partitioned binary classification datasets.
//!
//! Two sources: the heterogeneous synthetic generator controlled by
//! `(alpha, beta)`, and LibSVM text files split into contiguous shards.
//! Datasets round-trip through a flat little-endian binary file:
//!
//! ```text
//! "ASGD" | u32 n | u32 m | u32 d | n*m*d f64 features (row-major) | n*m i8 labels
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::RandomStream;

pub const MAGIC: &[u8; 4] = b"ASGD";
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    m: usize,
    d: usize,
    features: Vec<f64>,
    labels: Vec<f64>,
}

impl Dataset {
    pub fn new(n: usize, m: usize, d: usize, features: Vec<f64>, labels: Vec<f64>) -> Result<Self> {
        if n == 0 || m == 0 || d == 0 {
            return Err(Error::param(format!(
                "dataset shape must be positive, got n={n} m={m} d={d}"
            )));
        }
        if features.len() != n * m * d {
            return Err(Error::Dimension {
                expected: n * m * d,
                got: features.len(),
            });
        }
        if labels.len() != n * m {
            return Err(Error::Dimension {
                expected: n * m,
                got: labels.len(),
            });
        }
        if let Some(pos) = labels.iter().position(|&b| b != 1.0 && b != -1.0) {
            return Err(Error::param(format!(
                "label {} at position {pos} is not in {{-1, +1}}",
                labels[pos]
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("features must be finite"));
        }
        Ok(Self {
            n,
            m,
            d,
            features,
            labels,
        })
    }

    /// Same shard copied to all `n` workers.
    pub fn replicated(shard_features: Vec<f64>, shard_labels: Vec<f64>, n: usize, d: usize) -> Result<Self> {
        let m = shard_labels.len();
        let features = (0..n).flat_map(|_| shard_features.iter().copied()).collect();
        let labels = (0..n).flat_map(|_| shard_labels.iter().copied()).collect();
        Self::new(n, m, d, features, labels)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Row-major `m x d` feature block of one worker.
    pub fn shard_features(&self, worker: usize) -> &[f64] {
        let len = self.m * self.d;
        &self.features[worker * len..(worker + 1) * len]
    }

    pub fn shard_labels(&self, worker: usize) -> &[f64] {
        &self.labels[worker * self.m..(worker + 1) * self.m]
    }

    pub fn sample(&self, worker: usize, j: usize) -> (&[f64], f64) {
        let row = (worker * self.m + j) * self.d;
        (&self.features[row..row + self.d], self.labels[worker * self.m + j])
    }

    /// Re-partition the first `limit` samples (worker-major order) so that
    /// every sample is its own single-point worker.
    pub fn points_as_workers(&self, limit: usize) -> Result<Self> {
        let total = self.n * self.m;
        if limit == 0 || limit > total {
            return Err(Error::param(format!("point limit {limit} outside [1, {total}]")));
        }
        Self::new(
            limit,
            1,
            self.d,
            self.features[..limit * self.d].to_vec(),
            self.labels[..limit].to_vec(),
        )
    }

    /// Fails if some shard holds a single label class.
    pub fn check_label_balance(&self) -> Result<()> {
        for w in 0..self.n {
            let labels = self.shard_labels(w);
            let pos = labels.iter().filter(|&&b| b > 0.0).count();
            if pos == 0 || pos == labels.len() {
                return Err(Error::param(format!(
                    "worker {w} has a single label class ({pos} of {} positive)",
                    labels.len()
                )));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.features.len() * 8 + self.labels.len());
        out.extend_from_slice(MAGIC);
        for v in [self.n, self.m, self.d] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for f in &self.features {
            out.extend_from_slice(&f.to_le_bytes());
        }
        for &b in &self.labels {
            out.push(b as i8 as u8);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (n, m, d, body) = read_header(bytes)?;
        let nf = n * m * d;
        let need = nf * 8 + n * m;
        if body.len() != need {
            return Err(Error::param(format!(
                "binary dataset body has {} bytes, expected {need}",
                body.len()
            )));
        }
        let features = body[..nf * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let labels = body[nf * 8..].iter().map(|&b| b as i8 as f64).collect();
        Self::new(n, m, d, features, labels)
    }

    pub fn write_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_binary(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn read_header(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::param("missing ASGD header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    Ok((word(0), word(1), word(2), &bytes[HEADER_LEN..]))
}

/// Write a list of equal-length vectors in the dataset binary layout with
/// `n = rows.len()`, `m = 1` and all labels `+1`.
pub fn write_matrix(path: impl AsRef<Path>, rows: &[Vec<f64>], d: usize) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(HEADER_LEN + rows.len() * (d * 8 + 1));
    out.extend_from_slice(MAGIC);
    for v in [rows.len(), 1, d] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for r in rows {
        if r.len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: r.len(),
            });
        }
        for f in r {
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    out.extend(std::iter::repeat_n(1u8, rows.len()));
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Inverse of [`write_matrix`]; returns `(rows, d)`.
pub fn read_matrix(path: impl AsRef<Path>) -> Result<(Vec<Vec<f64>>, usize)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (n, m, d, body) = read_header(&bytes)?;
    if body.len() != n * m * d * 8 + n * m {
        return Err(Error::param(format!("{}: truncated matrix file", path.display())));
    }
    let rows = body[..n * m * d * 8]
        .chunks_exact(d * 8)
        .map(|row| {
            row.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect()
        })
        .collect();
    Ok((rows, d))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynConfig {
    pub alpha: f64,
    pub beta: f64,
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub seed: u64,
}

impl SynConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::param("alpha and beta must be nonnegative"));
        }
        if self.n == 0 || self.m == 0 || self.d == 0 {
            return Err(Error::param("n, m, d must be at least 1"));
        }
        Ok(())
    }
}

/// Heterogeneous synthetic logistic data.
///
/// Draw order (one stream seeded with `cfg.seed`), for each worker `i` in turn:
/// `B_i`, `v_i[0..d]`, `u_i`, `c_i`, `w_i[0..d]`, then for each sample `j`:
/// `a_ij[0..d]` followed by one uniform deciding the label. Every normal draw
/// is `(mean, variance)`; the feature covariance is diagonal with entry
/// `k^-1.2` for the 1-based coordinate `k`.
pub fn generate_synthetic(cfg: &SynConfig) -> Result<Dataset> {
    cfg.validate()?;
    let SynConfig {
        alpha, beta, n, m, d, ..
    } = *cfg;
    let mut rng = RandomStream::new(cfg.seed);
    let cov: Vec<f64> = (1..=d).map(|k| (k as f64).powf(-1.2)).collect();
    let mut features = Vec::with_capacity(n * m * d);
    let mut labels = Vec::with_capacity(n * m);
    let mut v = vec![0.0; d];
    let mut w = vec![0.0; d];
    for _ in 0..n {
        let b_i = rng.normal(0.0, beta);
        for vk in v.iter_mut() {
            *vk = rng.normal(b_i, 1.0);
        }
        let u_i = rng.normal(0.0, alpha);
        let c_i = rng.normal(u_i, 1.0);
        for wk in w.iter_mut() {
            *wk = rng.normal(u_i, 1.0);
        }
        for _ in 0..m {
            let start = features.len();
            for k in 0..d {
                features.push(rng.normal(v[k], cov[k]));
            }
            let logit = crate::linalg::dot(&w, &features[start..]) + c_i;
            let p_neg = sigmoid(logit);
            labels.push(if rng.uniform() < p_neg { -1.0 } else { 1.0 });
        }
    }
    Dataset::new(n, m, d, features, labels)
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Load a LibSVM file and split it into `n` contiguous shards of
/// `floor(total / n)` samples; the remainder is dropped.
pub fn load_libsvm(path: impl AsRef<Path>, n: usize) -> Result<Dataset> {
    load_libsvm_with_dim(path, n, None)
}

/// As [`load_libsvm`], with an explicit feature dimension (indices above it
/// are an error; the maximum index is used when `None`).
pub fn load_libsvm_with_dim(path: impl AsRef<Path>, n: usize, dim: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_libsvm(&text, n, dim, path)
}

pub fn parse_libsvm(text: &str, n: usize, dim: Option<usize>, path: &Path) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::param("worker count must be at least 1"));
    }
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut rows: Vec<(f64, Vec<(usize, f64)>)> = Vec::new();
    let mut max_index = 0;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().unwrap();
        let label: f64 = label_tok
            .parse()
            .map_err(|_| parse_err(lineno + 1, format!("bad label {label_tok:?}")))?;
        let mut entries = Vec::new();
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(lineno + 1, format!("expected idx:val, got {tok:?}")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| parse_err(lineno + 1, format!("bad index {idx:?}")))?;
            if idx == 0 {
                return Err(parse_err(lineno + 1, "indices are 1-based".into()));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| parse_err(lineno + 1, format!("bad value {val:?}")))?;
            if !val.is_finite() {
                return Err(parse_err(lineno + 1, format!("non-finite value {val}")));
            }
            if let Some(d) = dim {
                if idx > d {
                    return Err(parse_err(lineno + 1, format!("index {idx} exceeds dimension {d}")));
                }
            }
            max_index = max_index.max(idx);
            entries.push((idx - 1, val));
        }
        rows.push((label, entries));
    }

    let total = rows.len();
    if total < n {
        return Err(Error::param(format!("{total} samples cannot fill {n} workers")));
    }
    let m = total / n;
    let d = dim.unwrap_or(max_index).max(1);

    let mut classes: Vec<f64> = rows.iter().map(|r| r.0).collect();
    classes.sort_by(f64::total_cmp);
    classes.dedup();
    let map_label: fn(f64) -> f64 = if classes.iter().all(|&c| c == -1.0 || c == 1.0) {
        |c| c
    } else if classes.iter().all(|&c| c == 0.0 || c == 1.0) {
        |c| 2.0 * c - 1.0
    } else {
        return Err(Error::param(format!(
            "labels {classes:?} are not binary {{-1,+1}} or {{0,1}}"
        )));
    };

    let used = n * m;
    let mut features = vec![0.0; used * d];
    let mut labels = Vec::with_capacity(used);
    for (s, (label, entries)) in rows.into_iter().take(used).enumerate() {
        for (k, v) in entries {
            features[s * d + k] = v;
        }
        labels.push(map_label(label));
    }
    Dataset::new(n, m, d, features, labels)
}
