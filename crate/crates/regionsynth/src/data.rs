//! Desk-scale benchmark generation and feature-file I/O.
//!
//! A benchmark mimics seen/unseen region-feature statistics: class means
//! come from semantic vectors through a fixed non-negative linear map
//! (plus small noise), so the semantic-to-visual relationship is
//! learnable; features are truncated-at-zero Gaussians around the class
//! mean; the proposal pool adds non-negative jitter to training features
//! (box size/location variation); backgrounds are low-magnitude and
//! class-agnostic.

use std::collections::BTreeSet;
use std::io::{BufRead, Read as _, Write as _};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::models::Label;
use crate::tensor::{Real, Tensor};

/// Scale of class-mean coordinates produced by the semantic-to-mean map.
const MEAN_GAIN: Real = 3.0;
/// Std of the per-coordinate noise added to class means.
const MEAN_NOISE: Real = 0.1;
/// Proposal jitter std as a fraction of the class covariance scale.
const JITTER_FRACTION: Real = 0.2;
/// Background features are |N(0, BG_STD^2)| per coordinate.
const BG_STD: Real = 0.1;

#[derive(Clone, Debug)]
pub struct BenchmarkConfig {
    pub num_seen: usize,
    pub num_unseen: usize,
    pub d_f: usize,
    pub d_w: usize,
    pub samples_per_class_train: usize,
    pub samples_per_class_test: usize,
    pub cov_scale: Real,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            num_seen: 8,
            num_unseen: 3,
            d_f: 32,
            d_w: 8,
            samples_per_class_train: 100,
            samples_per_class_test: 100,
            cov_scale: 0.3,
            seed: 0,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_seen < 2 {
            return Err(Error::Config("need at least 2 seen classes".into()));
        }
        if self.num_unseen < 1 {
            return Err(Error::Config("need at least 1 unseen class".into()));
        }
        if self.d_f < 2 || self.d_w < 2 {
            return Err(Error::Config("d_f and d_w must be >= 2".into()));
        }
        if self.samples_per_class_train == 0 || self.samples_per_class_test == 0 {
            return Err(Error::Config("sample counts must be >= 1".into()));
        }
        if !(self.cov_scale > 0.0) {
            return Err(Error::Config("cov_scale must be > 0".into()));
        }
        Ok(())
    }

    pub fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |e: std::num::ParseIntError| Error::Config(format!("{key}: {e}"));
        let badf = |e: std::num::ParseFloatError| Error::Config(format!("{key}: {e}"));
        match key {
            "num_seen" => self.num_seen = value.parse().map_err(bad)?,
            "num_unseen" => self.num_unseen = value.parse().map_err(bad)?,
            "d_f" => self.d_f = value.parse().map_err(bad)?,
            "d_w" => self.d_w = value.parse().map_err(bad)?,
            "samples_per_class_train" => {
                self.samples_per_class_train = value.parse().map_err(bad)?
            }
            "samples_per_class_test" => self.samples_per_class_test = value.parse().map_err(bad)?,
            "cov_scale" => self.cov_scale = value.parse().map_err(badf)?,
            "seed" => self.seed = value.parse().map_err(bad)?,
            other => return Err(Error::Config(format!("unknown benchmark key `{other}`"))),
        }
        Ok(())
    }

    pub fn to_key_values(&self) -> Vec<(String, String)> {
        vec![
            ("num_seen".into(), self.num_seen.to_string()),
            ("num_unseen".into(), self.num_unseen.to_string()),
            ("d_f".into(), self.d_f.to_string()),
            ("d_w".into(), self.d_w.to_string()),
            (
                "samples_per_class_train".into(),
                self.samples_per_class_train.to_string(),
            ),
            (
                "samples_per_class_test".into(),
                self.samples_per_class_test.to_string(),
            ),
            ("cov_scale".into(), format!("{}", self.cov_scale)),
            ("seed".into(), self.seed.to_string()),
        ]
    }
}

#[derive(Clone, Debug)]
pub struct ClassSpec {
    pub id: u32,
    pub semantic: Tensor,
    pub feature_mean: Tensor,
    pub cov_scale: Real,
    pub n_train: usize,
    pub n_test: usize,
}

/// Features with one label per row.
#[derive(Clone, Debug)]
pub struct FeatureBatch {
    pub features: Tensor,
    pub labels: Vec<Label>,
}

impl FeatureBatch {
    pub fn new(features: Tensor, labels: Vec<Label>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} rows vs {} labels",
                features.rows(),
                labels.len()
            )));
        }
        Ok(FeatureBatch { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn d_f(&self) -> usize {
        self.features.cols()
    }

    /// Rows whose label matches.
    pub fn rows_of(&self, label: Label) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == label).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Benchmark {
    pub seen: Vec<ClassSpec>,
    pub unseen: Vec<ClassSpec>,
    /// Seen-class training features.
    pub train: FeatureBatch,
    /// Labeled foreground proposals (jittered copies of train features).
    pub proposals: FeatureBatch,
    /// Training-side background pool.
    pub backgrounds: FeatureBatch,
    pub test_seen: FeatureBatch,
    pub test_unseen: FeatureBatch,
    pub test_backgrounds: FeatureBatch,
}

impl Benchmark {
    pub fn d_f(&self) -> usize {
        self.train.d_f()
    }

    pub fn d_w(&self) -> usize {
        self.seen[0].semantic.len()
    }

    pub fn seen_ids(&self) -> Vec<u32> {
        self.seen.iter().map(|c| c.id).collect()
    }

    pub fn unseen_ids(&self) -> Vec<u32> {
        self.unseen.iter().map(|c| c.id).collect()
    }

    pub fn semantic_of(&self, id: u32) -> Option<&Tensor> {
        self.seen
            .iter()
            .chain(&self.unseen)
            .find(|c| c.id == id)
            .map(|c| &c.semantic)
    }

    pub fn validate(&self) -> Result<()> {
        let seen: BTreeSet<u32> = self.seen.iter().map(|c| c.id).collect();
        let unseen: BTreeSet<u32> = self.unseen.iter().map(|c| c.id).collect();
        if seen.len() != self.seen.len() || unseen.len() != self.unseen.len() {
            return Err(Error::Data("duplicate class ids".into()));
        }
        if !seen.is_disjoint(&unseen) {
            return Err(Error::Data("seen and unseen classes overlap".into()));
        }
        let is_unseen = |l: &Label| matches!(l, Label::Class(id) if unseen.contains(id));
        for (name, batch) in [
            ("train", &self.train),
            ("proposals", &self.proposals),
            ("backgrounds", &self.backgrounds),
        ] {
            if batch.labels.iter().any(is_unseen) {
                return Err(Error::Data(format!(
                    "unseen label leaked into training-side {name}"
                )));
            }
        }
        for batch in [
            &self.train,
            &self.proposals,
            &self.backgrounds,
            &self.test_seen,
            &self.test_unseen,
            &self.test_backgrounds,
        ] {
            if batch.features.data().iter().any(|&x| x < 0.0) {
                return Err(Error::Data("negative feature coordinate".into()));
            }
        }
        Ok(())
    }
}

fn half_normal(rng: &mut ChaCha8Rng, std: Real) -> Real {
    let x: Real = StandardNormal.sample(rng);
    x.abs() * std
}

/// Per-coordinate Gaussian truncated at zero (resample, then clamp).
fn truncated_normal(rng: &mut ChaCha8Rng, mean: Real, std: Real) -> Real {
    let normal = Normal::new(mean, std).expect("valid std");
    for _ in 0..64 {
        let x = normal.sample(rng);
        if x >= 0.0 {
            return x;
        }
    }
    0.0
}

pub fn generate_benchmark(cfg: &BenchmarkConfig, seed: u64) -> Result<Benchmark> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = cfg.num_seen + cfg.num_unseen;

    // Unit-norm non-negative semantic vectors. Raw half-normal draws in
    // the positive orthant bunch together (pairwise cosine ~0.65-0.95),
    // which makes class means nearly collinear; take the most separated
    // of a fixed number of candidates per class instead.
    let mut semantics: Vec<Tensor> = Vec::with_capacity(total);
    for _ in 0..total {
        let mut best: Option<(Real, Vec<Real>)> = None;
        for _ in 0..64 {
            let raw: Vec<Real> = (0..cfg.d_w).map(|_| half_normal(&mut rng, 1.0)).collect();
            let norm = raw.iter().map(|x| x * x).sum::<Real>().sqrt();
            if norm == 0.0 {
                continue;
            }
            let v: Vec<Real> = raw.iter().map(|x| x / norm).collect();
            let max_cos = semantics
                .iter()
                .map(|u| u.data().iter().zip(&v).map(|(a, b)| a * b).sum())
                .fold(-1.0, Real::max);
            if best.as_ref().map(|(c, _)| max_cos < *c).unwrap_or(true) {
                best = Some((max_cos, v));
            }
        }
        let (max_cos, v) = best.expect("candidate draws cannot all be zero vectors");
        if max_cos >= 0.999 {
            return Err(Error::Config(
                "could not draw distinct semantic vectors".into(),
            ));
        }
        semantics.push(Tensor::vector(v));
    }

    // Non-negative linear map semantic -> feature mean.
    let map_scale = MEAN_GAIN / cfg.d_w as Real;
    let map: Vec<Real> = (0..cfg.d_f * cfg.d_w)
        .map(|_| half_normal(&mut rng, map_scale))
        .collect();
    let mean_noise = Normal::new(0.0, MEAN_NOISE).expect("valid std");

    let mut make_spec = |id: u32, w: &Tensor, n_train: usize| -> ClassSpec {
        let mut mean = vec![0.0; cfg.d_f];
        for (i, m) in mean.iter_mut().enumerate() {
            let mut s = 0.0;
            for j in 0..cfg.d_w {
                s += map[i * cfg.d_w + j] * w.data()[j];
            }
            *m = (s + mean_noise.sample(&mut rng)).max(0.0);
        }
        ClassSpec {
            id,
            semantic: w.clone(),
            feature_mean: Tensor::vector(mean),
            cov_scale: cfg.cov_scale,
            n_train,
            n_test: cfg.samples_per_class_test,
        }
    };

    let seen: Vec<ClassSpec> = (0..cfg.num_seen)
        .map(|i| make_spec(i as u32, &semantics[i].clone(), cfg.samples_per_class_train))
        .collect();
    let unseen: Vec<ClassSpec> = (0..cfg.num_unseen)
        .map(|i| {
            make_spec(
                (cfg.num_seen + i) as u32,
                &semantics[cfg.num_seen + i].clone(),
                0,
            )
        })
        .collect();

    let sample_class = |spec: &ClassSpec, n: usize, rng: &mut ChaCha8Rng| -> Vec<Tensor> {
        (0..n)
            .map(|_| {
                let data = spec
                    .feature_mean
                    .data()
                    .iter()
                    .map(|&m| truncated_normal(rng, m, spec.cov_scale))
                    .collect();
                Tensor::vector(data)
            })
            .collect()
    };

    let mut train_rows = Vec::new();
    let mut train_labels = Vec::new();
    let mut test_seen_rows = Vec::new();
    let mut test_seen_labels = Vec::new();
    for spec in &seen {
        for row in sample_class(spec, spec.n_train, &mut rng) {
            train_rows.push(row);
            train_labels.push(Label::Class(spec.id));
        }
        for row in sample_class(spec, spec.n_test, &mut rng) {
            test_seen_rows.push(row);
            test_seen_labels.push(Label::Class(spec.id));
        }
    }
    let mut test_unseen_rows = Vec::new();
    let mut test_unseen_labels = Vec::new();
    for spec in &unseen {
        for row in sample_class(spec, spec.n_test, &mut rng) {
            test_unseen_rows.push(row);
            test_unseen_labels.push(Label::Class(spec.id));
        }
    }

    // Proposals: one jittered copy per training feature.
    let jitter_std = JITTER_FRACTION * cfg.cov_scale;
    let mut proposal_rows = Vec::with_capacity(train_rows.len());
    for row in &train_rows {
        let data = row
            .data()
            .iter()
            .map(|&x| x + half_normal(&mut rng, jitter_std))
            .collect();
        proposal_rows.push(Tensor::vector(data));
    }

    let sample_bg = |n: usize, rng: &mut ChaCha8Rng| -> Vec<Tensor> {
        (0..n)
            .map(|_| Tensor::vector((0..cfg.d_f).map(|_| half_normal(rng, BG_STD)).collect()))
            .collect()
    };
    let bg_train = sample_bg(cfg.samples_per_class_train, &mut rng);
    let bg_test = sample_bg(cfg.samples_per_class_test, &mut rng);

    let bench = Benchmark {
        seen,
        unseen,
        train: FeatureBatch::new(Tensor::from_rows(&train_rows)?, train_labels.clone())?,
        proposals: FeatureBatch::new(Tensor::from_rows(&proposal_rows)?, train_labels)?,
        backgrounds: FeatureBatch::new(
            Tensor::from_rows(&bg_train)?,
            vec![Label::Background; bg_train.len()],
        )?,
        test_seen: FeatureBatch::new(Tensor::from_rows(&test_seen_rows)?, test_seen_labels)?,
        test_unseen: FeatureBatch::new(Tensor::from_rows(&test_unseen_rows)?, test_unseen_labels)?,
        test_backgrounds: FeatureBatch::new(
            Tensor::from_rows(&bg_test)?,
            vec![Label::Background; bg_test.len()],
        )?,
    };
    bench.validate()?;
    Ok(bench)
}

// ---------------------------------------------------------------------------
// Ridge-regression transfer oracle: is the semantic-to-mean map learnable
// from the seen classes alone?
// ---------------------------------------------------------------------------

/// Solve `a x = b` for square `a` by Gaussian elimination with partial
/// pivoting; `b` holds multiple right-hand sides as columns.
fn solve_multi(mut a: Vec<Vec<Real>>, mut b: Vec<Vec<Real>>) -> Result<Vec<Vec<Real>>> {
    let n = a.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        if a[pivot][col].abs() < 1e-12 {
            return Err(Error::Contract("singular system in ridge solve".into()));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in (col + 1)..n {
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            for k in 0..b[0].len() {
                b[row][k] = b[row][k] - factor * b[col][k];
            }
        }
    }
    let rhs = b[0].len();
    let mut x = vec![vec![0.0; rhs]; n];
    for row in (0..n).rev() {
        for k in 0..rhs {
            let mut s = b[row][k];
            for col in (row + 1)..n {
                s -= a[row][col] * x[col][k];
            }
            x[row][k] = s / a[row][row];
        }
    }
    Ok(x)
}

fn cosine(a: &[Real], b: &[Real]) -> Real {
    let dot: Real = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<Real>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<Real>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Fit ridge regression from seen semantics to seen class means, predict
/// unseen means, and report the cosine similarity per unseen class. High
/// cosines mean zero-shot transfer is possible at all.
pub fn ridge_transfer_cosines(bench: &Benchmark, alpha: Real) -> Result<Vec<(u32, Real)>> {
    let d_w = bench.d_w();
    let d_f = bench.d_f();
    // a = W^T W + alpha I  (d_w x d_w); rhs = W^T M (d_w x d_f)
    let mut a = vec![vec![0.0; d_w]; d_w];
    let mut rhs = vec![vec![0.0; d_f]; d_w];
    for spec in &bench.seen {
        let w = spec.semantic.data();
        let m = spec.feature_mean.data();
        for i in 0..d_w {
            for j in 0..d_w {
                a[i][j] += w[i] * w[j];
            }
            for k in 0..d_f {
                rhs[i][k] += w[i] * m[k];
            }
        }
    }
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += alpha;
    }
    let coef = solve_multi(a, rhs)?; // d_w x d_f
    let mut out = Vec::with_capacity(bench.unseen.len());
    for spec in &bench.unseen {
        let w = spec.semantic.data();
        let mut pred = vec![0.0; d_f];
        for (k, p) in pred.iter_mut().enumerate() {
            *p = (0..d_w).map(|i| w[i] * coef[i][k]).sum();
        }
        out.push((spec.id, cosine(&pred, spec.feature_mean.data())));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Feature files: binary ("RFSF" magic) or CSV by extension.
// ---------------------------------------------------------------------------

const FEAT_MAGIC: &[u8; 4] = b"RFSF";
const FEAT_VERSION: u32 = 1;

fn is_csv(path: &Path) -> bool {
    path.extension().map(|e| e == "csv").unwrap_or(false)
}

/// Lossless round trip: binary stores 64-bit little-endian floats plus
/// 32-bit labels (-1 = background); `.csv` paths use text rows
/// `label,v0,...` for interop.
pub fn save_features(batch: &FeatureBatch, path: &Path) -> Result<()> {
    if is_csv(path) {
        let mut out = String::new();
        for i in 0..batch.len() {
            out.push_str(&batch.labels[i].to_i32().to_string());
            for v in batch.features.row(i) {
                out.push(',');
                out.push_str(&format!("{v}"));
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
        return Ok(());
    }
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    w.write_all(FEAT_MAGIC)?;
    w.write_all(&FEAT_VERSION.to_le_bytes())?;
    w.write_all(&(batch.len() as u64).to_le_bytes())?;
    w.write_all(&(batch.d_f() as u32).to_le_bytes())?;
    w.write_all(&[1u8])?; // labels present
    for &x in batch.features.data() {
        w.write_all(&(x as f64).to_le_bytes())?;
    }
    for &l in &batch.labels {
        w.write_all(&l.to_i32().to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_features(path: &Path) -> Result<FeatureBatch> {
    if is_csv(path) {
        return load_features_csv(path);
    }
    let file = std::fs::File::open(path)?;
    let mut r = std::io::BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Data("malformed feature file header".into()))?;
    if &magic != FEAT_MAGIC {
        return Err(Error::Data("malformed feature file header".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)
        .map_err(|_| Error::Data("malformed feature file header".into()))?;
    let version = u32::from_le_bytes(b4);
    if version != FEAT_VERSION {
        return Err(Error::Data(format!("unknown feature file version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)
        .map_err(|_| Error::Data("malformed feature file header".into()))?;
    let count = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b4)
        .map_err(|_| Error::Data("malformed feature file header".into()))?;
    let d_f = u32::from_le_bytes(b4) as usize;
    let mut b1 = [0u8; 1];
    r.read_exact(&mut b1)
        .map_err(|_| Error::Data("malformed feature file header".into()))?;
    let has_labels = b1[0] == 1;
    if count == 0 || d_f == 0 {
        return Err(Error::Data("empty feature file".into()));
    }
    let mut data = Vec::with_capacity(count * d_f);
    for _ in 0..count * d_f {
        r.read_exact(&mut b8)
            .map_err(|_| Error::Data("truncated feature file".into()))?;
        data.push(f64::from_le_bytes(b8) as Real);
    }
    let labels = if has_labels {
        let mut ls = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut b4)
                .map_err(|_| Error::Data("truncated feature file".into()))?;
            ls.push(Label::from_i32(i32::from_le_bytes(b4))?);
        }
        ls
    } else {
        vec![Label::Background; count]
    };
    FeatureBatch::new(Tensor::from_vec(&[count, d_f], data)?, labels)
}

fn load_features_csv(path: &Path) -> Result<FeatureBatch> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let label: i32 = parts
            .next()
            .unwrap()
            .trim()
            .parse()
            .map_err(|e| Error::Data(format!("line {}: bad label: {e}", lineno + 1)))?;
        let values: Vec<Real> = parts
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|e| Error::Data(format!("line {}: bad value: {e}", lineno + 1)))
            })
            .collect::<Result<_>>()?;
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::Data(format!(
                    "line {}: dimension mismatch ({} vs {w})",
                    lineno + 1,
                    values.len()
                )))
            }
            _ => {}
        }
        labels.push(Label::from_i32(label)?);
        rows.push(Tensor::vector(values));
    }
    if rows.is_empty() {
        return Err(Error::Data("empty feature file".into()));
    }
    FeatureBatch::new(Tensor::from_rows(&rows)?, labels)
}

// ---------------------------------------------------------------------------
// Semantic vector files: CSV rows "id,v0,v1,...".
// ---------------------------------------------------------------------------

pub fn save_semantic_vectors(entries: &[(u32, Tensor)], path: &Path) -> Result<()> {
    let mut out = String::new();
    for (id, w) in entries {
        out.push_str(&id.to_string());
        for v in w.data() {
            out.push(',');
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Parse one vector per class; `normalize` rescales each to unit L2 norm.
pub fn load_semantic_vectors(path: &Path, normalize: bool) -> Result<Vec<(u32, Tensor)>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut out: Vec<(u32, Tensor)> = Vec::new();
    let mut width = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let id: u32 = parts
            .next()
            .unwrap()
            .trim()
            .parse()
            .map_err(|e| Error::Data(format!("line {}: bad class id: {e}", lineno + 1)))?;
        if out.iter().any(|(seen, _)| *seen == id) {
            return Err(Error::Data(format!("duplicate class id {id}")));
        }
        let mut values: Vec<Real> = parts
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|e| Error::Data(format!("line {}: bad value: {e}", lineno + 1)))
            })
            .collect::<Result<_>>()?;
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::Data(format!(
                    "line {}: inconsistent dimension ({} vs {w})",
                    lineno + 1,
                    values.len()
                )))
            }
            _ => {}
        }
        if normalize {
            let norm = values.iter().map(|x| x * x).sum::<Real>().sqrt();
            if norm == 0.0 {
                return Err(Error::Data(format!("class {id}: zero semantic vector")));
            }
            for v in &mut values {
                *v /= norm;
            }
        }
        out.push((id, Tensor::vector(values)));
    }
    if out.is_empty() {
        return Err(Error::Data("no semantic vectors in file".into()));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Benchmark directory round trip.
// ---------------------------------------------------------------------------

const BENCH_FILES: [&str; 6] = [
    "train_seen.feat",
    "proposals.feat",
    "backgrounds.feat",
    "test_seen.feat",
    "test_unseen.feat",
    "test_backgrounds.feat",
];

pub fn save_benchmark(bench: &Benchmark, cfg: &BenchmarkConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let cfg_path = dir.join("benchmark.cfg");
    let mut cfg_text = String::new();
    for (k, v) in cfg.to_key_values() {
        cfg_text.push_str(&format!("{k}={v}\n"));
    }
    std::fs::write(&cfg_path, cfg_text)?;
    written.push(cfg_path);

    let classes_path = dir.join("classes.csv");
    let mut classes = String::new();
    for (split, spec) in bench
        .seen
        .iter()
        .map(|s| ("seen", s))
        .chain(bench.unseen.iter().map(|s| ("unseen", s)))
    {
        classes.push_str(&format!(
            "{},{},{},{},{}",
            spec.id, split, spec.cov_scale, spec.n_train, spec.n_test
        ));
        for v in spec.semantic.data() {
            classes.push_str(&format!(",{v}"));
        }
        for v in spec.feature_mean.data() {
            classes.push_str(&format!(",{v}"));
        }
        classes.push('\n');
    }
    std::fs::write(&classes_path, classes)?;
    written.push(classes_path);

    let batches = [
        &bench.train,
        &bench.proposals,
        &bench.backgrounds,
        &bench.test_seen,
        &bench.test_unseen,
        &bench.test_backgrounds,
    ];
    for (name, batch) in BENCH_FILES.iter().zip(batches) {
        let p = dir.join(name);
        save_features(batch, &p)?;
        written.push(p);
    }

    let manifest_path = dir.join("manifest.txt");
    let mut manifest = String::new();
    for p in &written {
        manifest.push_str(&format!("{}\n", p.file_name().unwrap().to_string_lossy()));
    }
    manifest.push_str("manifest.txt\n");
    std::fs::write(&manifest_path, manifest)?;
    written.push(manifest_path);
    Ok(written)
}

pub fn load_benchmark(dir: &Path) -> Result<(Benchmark, BenchmarkConfig)> {
    let cfg_text = std::fs::read_to_string(dir.join("benchmark.cfg"))
        .map_err(|e| Error::Data(format!("benchmark.cfg: {e}")))?;
    let mut cfg = BenchmarkConfig::default();
    for line in cfg_text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Data(format!("benchmark.cfg: bad line `{line}`")))?;
        cfg.set_key(k.trim(), v.trim())
            .map_err(|e| Error::Data(format!("benchmark.cfg: {e}")))?;
    }

    let classes_text = std::fs::read_to_string(dir.join("classes.csv"))
        .map_err(|e| Error::Data(format!("classes.csv: {e}")))?;
    let mut seen = Vec::new();
    let mut unseen = Vec::new();
    for (lineno, line) in classes_text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 + cfg.d_w + cfg.d_f {
            return Err(Error::Data(format!(
                "classes.csv line {}: expected {} fields, got {}",
                lineno + 1,
                5 + cfg.d_w + cfg.d_f,
                parts.len()
            )));
        }
        let parse_reals = |slice: &[&str]| -> Result<Vec<Real>> {
            slice
                .iter()
                .map(|p| {
                    p.trim()
                        .parse()
                        .map_err(|e| Error::Data(format!("classes.csv: bad value: {e}")))
                })
                .collect()
        };
        let spec = ClassSpec {
            id: parts[0]
                .parse()
                .map_err(|e| Error::Data(format!("classes.csv: bad id: {e}")))?,
            cov_scale: parts[2]
                .parse()
                .map_err(|e| Error::Data(format!("classes.csv: bad cov: {e}")))?,
            n_train: parts[3]
                .parse()
                .map_err(|e| Error::Data(format!("classes.csv: bad n_train: {e}")))?,
            n_test: parts[4]
                .parse()
                .map_err(|e| Error::Data(format!("classes.csv: bad n_test: {e}")))?,
            semantic: Tensor::vector(parse_reals(&parts[5..5 + cfg.d_w])?),
            feature_mean: Tensor::vector(parse_reals(&parts[5 + cfg.d_w..])?),
        };
        match parts[1] {
            "seen" => seen.push(spec),
            "unseen" => unseen.push(spec),
            other => return Err(Error::Data(format!("classes.csv: bad split `{other}`"))),
        }
    }

    let mut batches = Vec::new();
    for name in BENCH_FILES {
        batches.push(load_features(&dir.join(name))?);
    }
    let mut it = batches.into_iter();
    let bench = Benchmark {
        seen,
        unseen,
        train: it.next().unwrap(),
        proposals: it.next().unwrap(),
        backgrounds: it.next().unwrap(),
        test_seen: it.next().unwrap(),
        test_unseen: it.next().unwrap(),
        test_backgrounds: it.next().unwrap(),
    };
    bench.validate()?;
    Ok((bench, cfg))
}
