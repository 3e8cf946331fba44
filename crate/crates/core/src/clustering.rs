//! Position-agnostic grouping of whitened training sequences.

use std::ops::RangeInclusive;
use std::path::Path as FsPath;

use nalgebra::DMatrix;
use pathfinding::matrix::Matrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::airlink::TrainingBurst;
use crate::channel::{ArrayConfig, Dims, Waveform};
use crate::error::{Error, Result};
use crate::estimator::{
    build_projector, extract_bases, lr_filter, uml_estimate, whiten, BasesRecord, CFactors, CorrelationAccumulator,
    Projector, RankRule, Ranks, SubspaceBases, UmlEstimate, WhitenedSeq,
};
use crate::numerics::{adjoint_mul, CMatrix, CVector, MatrixRecord, C64};
use crate::scenario::{Point2, Point3};

/// Symmetric N x N dissimilarities, zero diagonal, entries in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DissimilarityMatrix {
    /// From a full row-major table. Checks symmetry, the diagonal and range.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("dissimilarity table is not square".into()));
        }
        let d: Vec<f64> = rows.iter().flatten().copied().collect();
        for i in 0..n {
            if d[i * n + i] != 0.0 {
                return Err(Error::Domain(format!("nonzero diagonal at {i}")));
            }
            for j in 0..n {
                let v = d[i * n + j];
                if !(0.0..=1.0).contains(&v) || v != d[j * n + i] {
                    return Err(Error::Domain(format!(
                        "entry ({i}, {j}) = {v} breaks symmetry or range"
                    )));
                }
            }
        }
        Ok(Self { n, d })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.d[i * self.n..(i + 1) * self.n]
    }

    /// Rows and columns restricted to `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let n = idx.len();
        let mut d = Vec::with_capacity(n * n);
        for &i in idx {
            d.extend(idx.iter().map(|&j| self.get(i, j)));
        }
        Self { n, d }
    }
}

fn check_pair(a: &CVector, b: &CVector) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "sequences of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (a.norm_squared(), b.norm_squared());
    if na == 0.0 {
        return Err(Error::ZeroNorm { index: 0 });
    }
    if nb == 0.0 {
        return Err(Error::ZeroNorm { index: 1 });
    }
    Ok((na, nb))
}

/// d = 1 - |<a, b>|^2 / (||a||^2 ||b||^2), the trace similarity of the
/// rank-one correlations a a^H and b b^H.
pub fn dissimilarity_vec(a: &CVector, b: &CVector) -> Result<f64> {
    let (na, nb) = check_pair(a, b)?;
    let ip = a.dotc(b);
    Ok(snap(1.0 - ip.norm_sqr() / (na * nb)))
}

pub fn dissimilarity(a: &WhitenedSeq, b: &WhitenedSeq) -> Result<f64> {
    if a.dims != b.dims {
        return Err(Error::Dimension(format!("dims {:?} and {:?}", a.dims, b.dims)));
    }
    dissimilarity_vec(&a.y_ww, &b.y_ww)
}

/// Normalized sequences as the columns of one matrix.
fn unit_columns(seqs: &[WhitenedSeq]) -> Result<CMatrix> {
    let Some(first) = seqs.first() else {
        return Ok(CMatrix::zeros(0, 0));
    };
    let len = first.dims.len();
    let mut x = CMatrix::zeros(len, seqs.len());
    for (i, s) in seqs.iter().enumerate() {
        if s.dims != first.dims {
            return Err(Error::Dimension(format!(
                "sequence {i} has dims {:?}, expected {:?}",
                s.dims, first.dims
            )));
        }
        let n = s.y_ww.norm();
        if n == 0.0 {
            return Err(Error::ZeroNorm { index: i });
        }
        x.column_mut(i).copy_from(&(&s.y_ww / C64::new(n, 0.0)));
    }
    Ok(x)
}

/// 1 - |X^H Y|^2 for unit columns.
fn cross_dissimilarity(x: &CMatrix, y: &CMatrix) -> DMatrix<f64> {
    adjoint_mul(x, y).map(|g| snap(1.0 - g.norm_sqr()))
}

/// Clamps to [0, 1]; rounding residue of parallel sequences becomes 0.
fn snap(d: f64) -> f64 {
    if d < 1e-14 {
        0.0
    } else {
        d.min(1.0)
    }
}

const GRAM_BLOCK: usize = 512;

fn matrix_from_units(x: &CMatrix) -> DissimilarityMatrix {
    let n = x.ncols();
    let blocks: Vec<(usize, DMatrix<f64>)> = (0..n)
        .step_by(GRAM_BLOCK)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|j0| {
            let j1 = (j0 + GRAM_BLOCK).min(n);
            // rows 0..j1 cover the upper triangle of this column block
            let rows = x.columns(0, j1).into_owned();
            let cols = x.columns(j0, j1 - j0).into_owned();
            (j0, cross_dissimilarity(&rows, &cols))
        })
        .collect();
    let mut d = vec![0.0; n * n];
    for (j0, b) in blocks {
        for jj in 0..b.ncols() {
            let j = j0 + jj;
            for i in 0..j {
                let v = b[(i, jj)];
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
    }
    DissimilarityMatrix { n, d }
}

/// All pairwise dissimilarities, via one Gram product of the normalized
/// sequences.
pub fn dissimilarity_matrix(seqs: &[WhitenedSeq]) -> Result<DissimilarityMatrix> {
    if seqs.len() < 2 {
        return Err(Error::Config(format!("need at least 2 sequences, got {}", seqs.len())));
    }
    Ok(matrix_from_units(&unit_columns(seqs)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    /// Dataset index of each cluster's medoid.
    pub medoids: Vec<usize>,
    pub assignment: Vec<usize>,
    pub total_dissimilarity: f64,
}

impl ClusteringResult {
    pub fn k(&self) -> usize {
        self.medoids.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k()];
        for &a in &self.assignment {
            s[a] += 1;
        }
        s
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == cluster)
            .collect()
    }
}

/// Nearest-medoid assignment; ties go to the lowest cluster index and every
/// medoid stays in its own cluster.
fn assign_with(n: usize, medoids: &[usize], dist: impl Fn(usize, usize) -> f64) -> ClusteringResult {
    let mut assignment = vec![0; n];
    let mut total = 0.0;
    for (j, a) in assignment.iter_mut().enumerate() {
        if let Some(c) = medoids.iter().position(|&m| m == j) {
            *a = c;
            continue;
        }
        let mut best = (f64::INFINITY, 0);
        for c in 0..medoids.len() {
            let v = dist(c, j);
            if v < best.0 {
                best = (v, c);
            }
        }
        *a = best.1;
        total += best.0;
    }
    ClusteringResult {
        medoids: medoids.to_vec(),
        assignment,
        total_dissimilarity: total,
    }
}

pub fn assign_to_medoids(d: &DissimilarityMatrix, medoids: &[usize]) -> ClusteringResult {
    assign_with(d.n, medoids, |c, j| d.get(medoids[c], j))
}

/// Partitioning Around Medoids: greedy BUILD, then SWAP until no exchange of
/// a medoid with a non-medoid lowers the total dissimilarity. All swaps are
/// scored per sweep and the best one is applied; ties go to the lowest
/// index. Deterministic.
pub fn pam(d: &DissimilarityMatrix, k: usize) -> Result<ClusteringResult> {
    let n = d.n;
    if k == 0 || k > n {
        return Err(Error::Config(format!("k = {k} is outside 1..={n}")));
    }
    let mut medoids = Vec::with_capacity(k);
    let mut is_medoid = vec![false; n];

    let sums: Vec<f64> = (0..n).into_par_iter().map(|i| d.row(i).iter().sum()).collect();
    let first = argmin(&sums);
    medoids.push(first);
    is_medoid[first] = true;
    let mut nearest = d.row(first).to_vec();
    while medoids.len() < k {
        let gains: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|c| {
                if is_medoid[c] {
                    return f64::NEG_INFINITY;
                }
                d.row(c).iter().zip(&nearest).map(|(&dc, &dn)| (dn - dc).max(0.0)).sum()
            })
            .collect();
        let c = argmax(&gains);
        medoids.push(c);
        is_medoid[c] = true;
        for (x, &dc) in nearest.iter_mut().zip(d.row(c)) {
            *x = x.min(dc);
        }
    }

    let tol = 1e-12 * n as f64;
    loop {
        // nearest and second-nearest medoid per point
        let mut slot = vec![0usize; n];
        let mut dn = vec![f64::INFINITY; n];
        let mut ds = vec![f64::INFINITY; n];
        for j in 0..n {
            for (c, &m) in medoids.iter().enumerate() {
                let v = d.get(m, j);
                if v < dn[j] {
                    ds[j] = dn[j];
                    dn[j] = v;
                    slot[j] = c;
                } else if v < ds[j] {
                    ds[j] = v;
                }
            }
        }
        let scored: Vec<(f64, usize)> = (0..n)
            .into_par_iter()
            .map(|h| {
                if is_medoid[h] {
                    return (f64::INFINITY, 0);
                }
                let mut delta = vec![0.0; k];
                let mut shared = 0.0;
                for (j, &dh) in d.row(h).iter().enumerate() {
                    let s = (dh - dn[j]).min(0.0);
                    shared += s;
                    delta[slot[j]] += dh.min(ds[j]) - dn[j] - s;
                }
                let i = argmin(&delta);
                (delta[i] + shared, i)
            })
            .collect();
        let mut best = (f64::INFINITY, 0, 0);
        for (h, &(v, i)) in scored.iter().enumerate() {
            if v < best.0 {
                best = (v, i, h);
            }
        }
        if !(best.0 < -tol) {
            break;
        }
        is_medoid[medoids[best.1]] = false;
        medoids[best.1] = best.2;
        is_medoid[best.2] = true;
    }
    Ok(assign_to_medoids(d, &medoids))
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] < v[best] {
            best = i;
        }
    }
    best
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaraOptions {
    pub n_samples: usize,
    /// Defaults to 40 + 2k.
    pub sample_size: Option<usize>,
}

impl Default for ClaraOptions {
    fn default() -> Self {
        Self {
            n_samples: 5,
            sample_size: None,
        }
    }
}

/// PAM on random subsamples; the medoid set with the lowest total
/// dissimilarity over the full dataset wins. Needs no N x N matrix.
pub fn clara<R: Rng + ?Sized>(
    seqs: &[WhitenedSeq],
    k: usize,
    opts: &ClaraOptions,
    rng: &mut R,
) -> Result<ClusteringResult> {
    let n = seqs.len();
    let size = opts.sample_size.unwrap_or(40 + 2 * k).min(n);
    if k == 0 || size < k {
        return Err(Error::Config(format!("sample size {size} is below k = {k}")));
    }
    if opts.n_samples == 0 {
        return Err(Error::Config("CLARA needs at least one draw".into()));
    }
    let x = unit_columns(seqs)?;
    let mut best: Option<ClusteringResult> = None;
    for _ in 0..opts.n_samples {
        let mut idx = rand::seq::index::sample(rng, n, size).into_vec();
        idx.sort_unstable();
        let sub = CMatrix::from_fn(x.nrows(), size, |r, c| x[(r, idx[c])]);
        let local = pam(&matrix_from_units(&sub), k)?;
        let medoids: Vec<usize> = local.medoids.iter().map(|&m| idx[m]).collect();
        let med = CMatrix::from_fn(x.nrows(), k, |r, c| x[(r, medoids[c])]);
        let dist = cross_dissimilarity(&x, &med);
        let cand = assign_with(n, &medoids, |c, j| dist[(j, c)]);
        if best
            .as_ref()
            .is_none_or(|b| cand.total_dissimilarity < b.total_dissimilarity)
        {
            best = Some(cand);
        }
    }
    Ok(best.unwrap())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Silhouette {
    pub coefficients: Vec<f64>,
    pub mean: f64,
    /// Coefficients of each cluster, sorted descending.
    pub per_cluster: Vec<Vec<f64>>,
}

pub fn silhouette(d: &DissimilarityMatrix, assignment: &[usize]) -> Result<Silhouette> {
    let n = d.n;
    if assignment.len() != n {
        return Err(Error::Dimension(format!("{} labels for {n} points", assignment.len())));
    }
    let k = assignment.iter().max().map_or(0, |m| m + 1);
    if k < 2 {
        return Err(Error::Degenerate("silhouette needs at least two clusters".into()));
    }
    let mut sizes = vec![0usize; k];
    for &a in assignment {
        sizes[a] += 1;
    }
    if let Some(c) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::Degenerate(format!("cluster {c} is empty")));
    }
    let coefficients: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = assignment[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for (j, &v) in d.row(i).iter().enumerate() {
                sums[assignment[j]] += v;
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 {
                (b - a) / m
            } else {
                0.0
            }
        })
        .collect();
    let mut per_cluster = vec![vec![]; k];
    for (i, &s) in coefficients.iter().enumerate() {
        per_cluster[assignment[i]].push(s);
    }
    for p in &mut per_cluster {
        p.sort_by(|a, b| b.total_cmp(a));
    }
    let mean = coefficients.iter().sum::<f64>() / n as f64;
    Ok(Silhouette {
        coefficients,
        mean,
        per_cluster,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KDiagnostics {
    pub k: usize,
    pub total_dissimilarity: f64,
    pub mean_silhouette: f64,
    pub min_cluster_size: usize,
    pub admissible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KSelection {
    pub k: usize,
    pub result: ClusteringResult,
    pub silhouette: Silhouette,
    pub table: Vec<KDiagnostics>,
}

/// Clusters for each K with `cluster`, discards K whose smallest cluster is
/// below `balance_floor`, and keeps the highest mean silhouette (ties to the
/// lowest K).
pub fn select_k_by(
    d: &DissimilarityMatrix,
    k_range: RangeInclusive<usize>,
    balance_floor: usize,
    mut cluster: impl FnMut(usize) -> Result<ClusteringResult>,
) -> Result<KSelection> {
    let (lo, hi) = (*k_range.start(), *k_range.end());
    if lo < 2 || hi > d.n || lo > hi {
        return Err(Error::Config(format!(
            "K range {lo}..={hi} must lie within 2..={}",
            d.n
        )));
    }
    let mut table = vec![];
    let mut best: Option<(ClusteringResult, Silhouette)> = None;
    for k in lo..=hi {
        let r = cluster(k)?;
        let min_size = r.sizes().into_iter().min().unwrap_or(0);
        let sil = if min_size > 0 {
            silhouette(d, &r.assignment)?
        } else {
            Silhouette {
                coefficients: vec![],
                mean: f64::NEG_INFINITY,
                per_cluster: vec![],
            }
        };
        let admissible = min_size > 0 && min_size >= balance_floor;
        table.push(KDiagnostics {
            k,
            total_dissimilarity: r.total_dissimilarity,
            mean_silhouette: sil.mean,
            min_cluster_size: min_size,
            admissible,
        });
        if admissible && best.as_ref().is_none_or(|(_, s)| sil.mean > s.mean) {
            best = Some((r, sil));
        }
    }
    let (result, silhouette) = best.ok_or_else(|| {
        Error::NoAdmissibleK(format!(
            "every K in {lo}..={hi} leaves a cluster below {balance_floor} sequences; collect more data or lower the balance floor"
        ))
    })?;
    Ok(KSelection {
        k: result.k(),
        result,
        silhouette,
        table,
    })
}

pub fn select_k(d: &DissimilarityMatrix, k_range: RangeInclusive<usize>, balance_floor: usize) -> Result<KSelection> {
    select_k_by(d, k_range, balance_floor, |k| pam(d, k))
}

/// Fraction of points whose label matches under the best one-to-one
/// relabeling.
pub fn label_agreement(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Dimension(format!("{} and {} labels", pred.len(), truth.len())));
    }
    let kp = pred.iter().max().unwrap() + 1;
    let kt = truth.iter().max().unwrap() + 1;
    let m = kp.max(kt);
    let mut counts = vec![0i64; m * m];
    for (&p, &t) in pred.iter().zip(truth) {
        counts[p * m + t] += 1;
    }
    let weights = Matrix::from_vec(m, m, counts).map_err(|e| Error::Dimension(e.to_string()))?;
    let (matched, _) = pathfinding::kuhn_munkres::kuhn_munkres(&weights);
    Ok(matched as f64 / pred.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub rule: RankRule,
    /// Smallest cluster the bases may be trained from.
    pub l_min: usize,
    pub allow_undersized: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            rule: RankRule::default(),
            l_min: 100,
            allow_undersized: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub medoid: WhitenedSeq,
    pub size: usize,
    pub projector: Projector,
}

impl Cluster {
    pub fn ranks(&self) -> Ranks {
        self.projector.bases.ranks()
    }
}

/// Link parameters a model was trained for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub waveform: Waveform,
    pub tx: ArrayConfig,
    pub rx: ArrayConfig,
}

impl LinkConfig {
    pub fn dims(&self) -> Dims {
        Dims::from_config(&self.waveform, &self.tx, &self.rx)
    }
}

/// Per-cluster medoids and projectors. Immutable once trained.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub link: LinkConfig,
    pub c: CFactors,
    pub clusters: Vec<Cluster>,
    pub config_hash: Option<String>,
}

pub fn train_models(
    seqs: &[WhitenedSeq],
    clustering: &ClusteringResult,
    link: &LinkConfig,
    c: &CFactors,
    opts: &TrainOptions,
) -> Result<ClusterModel> {
    if clustering.assignment.len() != seqs.len() {
        return Err(Error::Dimension(format!(
            "{} labels for {} sequences",
            clustering.assignment.len(),
            seqs.len()
        )));
    }
    opts.rule.validate()?;
    let dims = link.dims();
    if let Some(s) = seqs.iter().find(|s| s.dims != dims) {
        return Err(Error::Dimension(format!(
            "sequence dims {:?}, link dims {:?}",
            s.dims, dims
        )));
    }
    let sizes = clustering.sizes();
    if !opts.allow_undersized {
        if let Some((cluster, &size)) = sizes.iter().enumerate().find(|(_, &s)| s < opts.l_min) {
            return Err(Error::UndersizedCluster {
                cluster,
                size,
                required: opts.l_min,
            });
        }
    }
    let clusters = (0..clustering.k())
        .into_par_iter()
        .map(|k| {
            let mut acc = CorrelationAccumulator::new(dims);
            for i in clustering.members(k) {
                acc.accumulate(&seqs[i])?;
            }
            if acc.count() == 0 {
                return Err(Error::UndersizedCluster {
                    cluster: k,
                    size: 0,
                    required: opts.l_min.max(1),
                });
            }
            let bases = extract_bases(&acc, &opts.rule)?;
            Ok(Cluster {
                medoid: seqs[clustering.medoids[k]].clone(),
                size: sizes[k],
                projector: build_projector(&bases, c)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ClusterModel {
        link: *link,
        c: c.clone(),
        clusters,
        config_hash: None,
    })
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.clusters.len()
    }

    pub fn dims(&self) -> Dims {
        self.link.dims()
    }

    /// Nearest medoid and its dissimilarity; ties go to the lowest id.
    pub fn nearest(&self, seq: &WhitenedSeq) -> Result<(usize, f64)> {
        let mut best = (0, f64::INFINITY);
        for (k, c) in self.clusters.iter().enumerate() {
            let v = dissimilarity(seq, &c.medoid).map_err(|e| match e {
                Error::ZeroNorm { .. } => Error::Degenerate("zero channel estimate".into()),
                e => e,
            })?;
            if v < best.1 {
                best = (k, v);
            }
        }
        Ok(best)
    }

    /// Cluster assignment and low-rank estimate for a U-ML estimate.
    pub fn filter(&self, est: &UmlEstimate) -> Result<(usize, CVector)> {
        if est.dims != self.dims() {
            return Err(Error::Dimension(format!(
                "estimate dims {:?}, model dims {:?}",
                est.dims,
                self.dims()
            )));
        }
        let (k, _) = self.nearest(&whiten(est, &self.c)?)?;
        Ok((k, lr_filter(&self.clusters[k].projector, est)?))
    }

    pub fn save(&self, path: &FsPath) -> Result<()> {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            k: self.k(),
            dims: self.dims(),
            link: self.link,
            pilot_power: self.c.pilot_power,
            noise_free: self.c.noise_free,
            q_n: MatrixRecord::from_matrix(&self.c.q_n),
            config_hash: self.config_hash.clone(),
            clusters: self
                .clusters
                .iter()
                .map(|c| ClusterRecord {
                    size: c.size,
                    ranks: c.ranks(),
                    medoid: c.medoid.y_ww.iter().map(|z| [z.re, z.im]).collect(),
                    medoid_noise_var: c.medoid.noise_var,
                    bases: c.projector.bases.to_record(),
                })
                .collect(),
        };
        let json = serde_json::to_string(&file).map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported model {} v{}", file.format, file.version),
            ));
        }
        let dims = file.link.dims();
        if dims != file.dims || file.clusters.len() != file.k || file.k == 0 {
            return Err(Error::format(path, "header disagrees with the model body"));
        }
        let c = CFactors::new(&file.q_n.to_matrix()?, file.pilot_power, file.noise_free)?;
        let clusters = file
            .clusters
            .iter()
            .map(|r| {
                if r.medoid.len() != dims.len() {
                    return Err(Error::format(path, "medoid length does not match the dims"));
                }
                let bases = SubspaceBases::from_record(&r.bases)?;
                if bases.ranks() != r.ranks || bases.dims() != dims {
                    return Err(Error::format(path, "bases disagree with the recorded ranks"));
                }
                Ok(Cluster {
                    medoid: WhitenedSeq {
                        dims,
                        y_ww: CVector::from_iterator(dims.len(), r.medoid.iter().map(|p| C64::new(p[0], p[1]))),
                        noise_var: r.medoid_noise_var,
                    },
                    size: r.size,
                    projector: build_projector(&bases, &c)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            link: file.link,
            c,
            clusters,
            config_hash: file.config_hash,
        })
    }
}

const MODEL_FORMAT: &str = "mvlr-model";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ClusterRecord {
    size: usize,
    ranks: Ranks,
    medoid: Vec<[f64; 2]>,
    medoid_noise_var: f64,
    bases: BasesRecord,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    k: usize,
    dims: Dims,
    link: LinkConfig,
    pilot_power: f64,
    noise_free: bool,
    q_n: MatrixRecord,
    config_hash: Option<String>,
    clusters: Vec<ClusterRecord>,
}

/// U-ML estimate, nearest medoid, then that cluster's projection.
pub fn assign_and_filter(model: &ClusterModel, burst: &TrainingBurst) -> Result<(usize, CVector)> {
    let est = uml_estimate(burst, model.link.waveform.n_taps)?;
    model.filter(&est)
}

/// Grid-cell grouping by position: the position-aware baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionGrouping {
    pub cell_size_m: f64,
    pub origin: Point2,
    /// Occupied cells and the group each one ended up in.
    pub cells: Vec<([i64; 2], usize)>,
    pub centroids: Vec<Point2>,
    pub assignment: Vec<usize>,
}

impl PositionGrouping {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    fn cell(&self, p: Point2) -> [i64; 2] {
        cell_of(p, self.origin, self.cell_size_m)
    }

    /// Group of the cell holding `p`, or of the nearest centroid for cells
    /// never seen in training.
    pub fn group_of(&self, p: Point2) -> usize {
        let c = self.cell(p);
        if let Some((_, g)) = self.cells.iter().find(|(x, _)| *x == c) {
            return *g;
        }
        nearest_point(&self.centroids, p)
    }

    /// Clustering-shaped view for training. Groups carry no medoid; the
    /// first member stands in.
    pub fn as_clustering(&self) -> ClusteringResult {
        let medoids = (0..self.k())
            .map(|g| self.assignment.iter().position(|&a| a == g).unwrap())
            .collect();
        ClusteringResult {
            medoids,
            assignment: self.assignment.clone(),
            total_dissimilarity: f64::NAN,
        }
    }
}

fn cell_of(p: Point2, origin: Point2, size: f64) -> [i64; 2] {
    [
        ((p[0] - origin[0]) / size).floor() as i64,
        ((p[1] - origin[1]) / size).floor() as i64,
    ]
}

fn nearest_point(points: &[Point2], p: Point2) -> usize {
    let d: Vec<f64> = points
        .iter()
        .map(|q| (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2))
        .collect();
    argmin(&d)
}

/// Bins positions on a square grid anchored at `origin`; groups smaller than
/// `l_min` are merged, smallest first, into the group with the nearest
/// centroid.
pub fn group_by_position(
    positions: &[Point3],
    cell_size_m: f64,
    origin: Point2,
    l_min: usize,
) -> Result<PositionGrouping> {
    if !(cell_size_m > 0.0 && cell_size_m.is_finite()) {
        return Err(Error::Config(format!("cell size must be positive, got {cell_size_m}")));
    }
    if positions.is_empty() {
        return Err(Error::Config("no positions to group".into()));
    }
    let mut cells: Vec<[i64; 2]> = positions
        .iter()
        .map(|p| cell_of([p[0], p[1]], origin, cell_size_m))
        .collect();
    cells.sort_unstable();
    cells.dedup();
    let point_cell: Vec<usize> = positions
        .iter()
        .map(|p| {
            cells
                .binary_search(&cell_of([p[0], p[1]], origin, cell_size_m))
                .unwrap()
        })
        .collect();
    // group of each cell; groups are merged by relabeling
    let mut group: Vec<usize> = (0..cells.len()).collect();
    loop {
        let mut members: Vec<Vec<usize>> = vec![vec![]; cells.len()];
        for (i, &c) in point_cell.iter().enumerate() {
            members[group[c]].push(i);
        }
        let live: Vec<usize> = (0..cells.len()).filter(|&g| !members[g].is_empty()).collect();
        if live.len() <= 1 {
            break;
        }
        let centroid = |g: usize| {
            let m = &members[g];
            let (sx, sy) = m
                .iter()
                .fold((0.0, 0.0), |a, &i| (a.0 + positions[i][0], a.1 + positions[i][1]));
            [sx / m.len() as f64, sy / m.len() as f64]
        };
        let smallest = *live.iter().min_by_key(|&&g| (members[g].len(), g)).unwrap();
        if members[smallest].len() >= l_min {
            break;
        }
        let others: Vec<usize> = live.iter().copied().filter(|&g| g != smallest).collect();
        let cents: Vec<Point2> = others.iter().map(|&g| centroid(g)).collect();
        let target = others[nearest_point(&cents, centroid(smallest))];
        for g in group.iter_mut() {
            if *g == smallest {
                *g = target;
            }
        }
    }
    // compact labels in order of first cell
    let mut label = vec![usize::MAX; cells.len()];
    let mut next = 0;
    for c in 0..cells.len() {
        let g = group[c];
        if label[g] == usize::MAX {
            label[g] = next;
            next += 1;
        }
    }
    let assignment: Vec<usize> = point_cell.iter().map(|&c| label[group[c]]).collect();
    let mut sums = vec![[0.0, 0.0, 0.0]; next];
    for (i, &a) in assignment.iter().enumerate() {
        sums[a][0] += positions[i][0];
        sums[a][1] += positions[i][1];
        sums[a][2] += 1.0;
    }
    Ok(PositionGrouping {
        cell_size_m,
        origin,
        cells: cells.iter().enumerate().map(|(c, &x)| (x, label[group[c]])).collect(),
        centroids: sums.iter().map(|s| [s[0] / s[2], s[1] / s[2]]).collect(),
        assignment,
    })
}
