//! Evaluation measures: partition agreement (ARI), inter-agent agreement
//! (Cohen's kappa), cluster quality (Davies-Bouldin), latent-structure
//! similarity (TopSim), matched recall heatmaps and 2-D PCA.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pair budget above which TopSim subsamples pairs.
pub const TOPSIM_MAX_PAIRS: usize = 100_000;
const TOPSIM_SEED: u64 = 0x7015_5117;

fn check_lengths(a: usize, b: usize, what: &'static str) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            context: what,
            expected: a,
            got: b,
        });
    }
    Ok(())
}

fn comb2(n: u64) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

type Counts<K> = BTreeMap<K, u64>;

/// Contingency counts keyed by `(x, y)` plus both marginals.
fn contingency(x: &[usize], y: &[usize]) -> (Counts<(usize, usize)>, Counts<usize>, Counts<usize>) {
    let mut table = BTreeMap::new();
    let mut rows = BTreeMap::new();
    let mut cols = BTreeMap::new();
    for (&a, &b) in x.iter().zip(y) {
        *table.entry((a, b)).or_insert(0) += 1;
        *rows.entry(a).or_insert(0) += 1;
        *cols.entry(b).or_insert(0) += 1;
    }
    (table, rows, cols)
}

/// Hubert-Arabie adjusted Rand index. Returns 1 when both partitions are
/// trivial in the same way (the index is 0/0 there).
pub fn adjusted_rand_index(x: &[usize], y: &[usize]) -> Result<f64> {
    check_lengths(x.len(), y.len(), "ARI partitions")?;
    if x.len() < 2 {
        return Err(Error::InvalidArgument("ARI needs at least two items".into()));
    }
    let (table, rows, cols) = contingency(x, y);
    let index: f64 = table.values().map(|&n| comb2(n)).sum();
    let sum_a: f64 = rows.values().map(|&n| comb2(n)).sum();
    let sum_b: f64 = cols.values().map(|&n| comb2(n)).sum();
    let total = comb2(x.len() as u64);
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if (max - expected).abs() < 1e-12 {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Cohen's kappa between two sign tables.
pub fn cohens_kappa(a: &[usize], b: &[usize]) -> Result<f64> {
    check_lengths(a.len(), b.len(), "kappa sign tables")?;
    if a.is_empty() {
        return Err(Error::InvalidArgument("kappa needs at least one item".into()));
    }
    let n = a.len() as f64;
    let (_, ma, mb) = contingency(a, b);
    let p_o = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let p_e: f64 = ma
        .iter()
        .map(|(k, &ca)| ca as f64 * mb.get(k).copied().unwrap_or(0) as f64)
        .sum::<f64>()
        / (n * n);
    if (1.0 - p_e).abs() < 1e-15 {
        if p_o == 1.0 {
            return Ok(1.0);
        }
        return Err(Error::InvalidArgument("kappa undefined: chance agreement is 1".into()));
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Davies-Bouldin score with Euclidean distances; empty clusters are skipped.
pub fn davies_bouldin(latents: &[DVector<f64>], signs: &[usize]) -> Result<f64> {
    check_lengths(latents.len(), signs.len(), "DBS latents vs signs")?;
    let mut groups: BTreeMap<usize, Vec<&DVector<f64>>> = BTreeMap::new();
    for (z, &s) in latents.iter().zip(signs) {
        groups.entry(s).or_default().push(z);
    }
    if groups.len() < 2 {
        return Err(Error::InvalidArgument(
            "Davies-Bouldin needs at least two non-empty clusters".into(),
        ));
    }
    let mut centroids = Vec::with_capacity(groups.len());
    let mut spreads = Vec::with_capacity(groups.len());
    for members in groups.values() {
        let mut c = DVector::zeros(members[0].len());
        for z in members {
            c += *z;
        }
        c /= members.len() as f64;
        let s = members.iter().map(|z| (*z - &c).norm()).sum::<f64>() / members.len() as f64;
        centroids.push(c);
        spreads.push(s);
    }
    let k = centroids.len();
    let mut total = 0.0;
    for i in 0..k {
        let worst = (0..k)
            .filter(|&j| j != i)
            .map(|j| {
                let d = (&centroids[i] - &centroids[j]).norm();
                if d == 0.0 {
                    f64::INFINITY
                } else {
                    (spreads[i] + spreads[j]) / d
                }
            })
            .fold(0.0, f64::max);
        total += worst;
    }
    Ok(total / k as f64)
}

/// Average ranks (1-based), ties share the mean rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x.len(), y.len(), "correlation inputs")?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::InvalidArgument("zero-variance input to correlation".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Index pairs `(i, j)`, `i < j`: all of them, or a fixed-seed sample of
/// `TOPSIM_MAX_PAIRS` when there are more.
fn topsim_pairs(n: usize) -> Vec<(usize, usize)> {
    let total = n * (n - 1) / 2;
    if total <= TOPSIM_MAX_PAIRS {
        return (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(TOPSIM_SEED);
    (0..TOPSIM_MAX_PAIRS)
        .map(|_| loop {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i != j {
                break (i.min(j), i.max(j));
            }
        })
        .collect()
}

/// Spearman correlation between the two agents' pairwise Euclidean distances.
pub fn topsim(a: &[DVector<f64>], b: &[DVector<f64>]) -> Result<f64> {
    check_lengths(a.len(), b.len(), "TopSim latent sets")?;
    if a.len() < 3 {
        return Err(Error::InvalidArgument("TopSim needs at least three items".into()));
    }
    let pairs = topsim_pairs(a.len());
    let da: Vec<f64> = pairs.iter().map(|&(i, j)| (&a[i] - &a[j]).norm()).collect();
    let db: Vec<f64> = pairs.iter().map(|&(i, j)| (&b[i] - &b[j]).norm()).collect();
    spearman(&da, &db)
}

/// Recall of each reference label against the signs matched to labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallHeatmap {
    /// `recall[true][matched]`, rows sum with `other` to 1 for present labels.
    pub recall: Vec<Vec<f64>>,
    /// Share of each label's items carried by signs not matched to any label.
    pub other: Vec<f64>,
    /// `sign_for_label[l]` is the sign matched to label `l`, if any.
    pub sign_for_label: Vec<Option<usize>>,
    pub counts: Vec<Vec<u64>>,
}

/// Maximum-weight one-to-one matching of rows to columns; `None` for rows
/// left unmatched when there are more rows than columns.
pub fn max_weight_matching(weights: &[Vec<i64>]) -> Vec<Option<usize>> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, |r| r.len());
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    if rows <= cols {
        let m = Matrix::from_fn(rows, cols, |(r, c)| weights[r][c]);
        kuhn_munkres(&m).1.into_iter().map(Some).collect()
    } else {
        let m = Matrix::from_fn(cols, rows, |(c, r)| weights[r][c]);
        let (_, col_to_row) = kuhn_munkres(&m);
        let mut out = vec![None; rows];
        for (c, r) in col_to_row.into_iter().enumerate() {
            out[r] = Some(c);
        }
        out
    }
}

pub fn recall_heatmap(signs: &[usize], labels: &[usize], n_labels: usize, k: usize) -> Result<RecallHeatmap> {
    check_lengths(labels.len(), signs.len(), "heatmap labels vs signs")?;
    if signs.is_empty() {
        return Err(Error::InvalidArgument("heatmap needs data".into()));
    }
    let mut counts = vec![vec![0u64; k]; n_labels];
    for (&l, &s) in labels.iter().zip(signs) {
        if l >= n_labels || s >= k {
            return Err(Error::InvalidArgument(format!("label {l} or sign {s} out of range")));
        }
        counts[l][s] += 1;
    }
    let weights: Vec<Vec<i64>> = counts
        .iter()
        .map(|r| r.iter().map(|&c| c as i64).collect())
        .collect();
    let sign_for_label = max_weight_matching(&weights);
    let mut matched = vec![false; k];
    for s in sign_for_label.iter().flatten() {
        matched[*s] = true;
    }
    let mut recall = vec![vec![0.0; n_labels]; n_labels];
    let mut other = vec![0.0; n_labels];
    for l in 0..n_labels {
        let total: u64 = counts[l].iter().sum();
        if total == 0 {
            continue;
        }
        for (j, s) in sign_for_label.iter().enumerate() {
            if let Some(s) = s {
                recall[l][j] = counts[l][*s] as f64 / total as f64;
            }
        }
        let unmatched: u64 = (0..k).filter(|&s| !matched[s]).map(|s| counts[l][s]).sum();
        other[l] = unmatched as f64 / total as f64;
    }
    Ok(RecallHeatmap {
        recall,
        other,
        sign_for_label,
        counts,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    /// `D x out_dim`.
    pub coords: DMatrix<f64>,
    pub explained_variance_ratio: Vec<f64>,
    /// Fewer than `out_dim` components carry nonzero variance.
    pub degenerate: bool,
}

/// Projection of centered data onto the leading covariance eigenvectors.
/// Each eigenvector is signed so its largest-magnitude entry is positive.
pub fn pca_project(latents: &[DVector<f64>], out_dim: usize) -> Result<PcaProjection> {
    let n = latents.len();
    if n <= out_dim {
        return Err(Error::InvalidArgument(format!("PCA needs more than {out_dim} points")));
    }
    let dim = latents[0].len();
    if out_dim == 0 || out_dim > dim {
        return Err(Error::InvalidArgument(format!("cannot project {dim}-D data to {out_dim}-D")));
    }
    let mut mean = DVector::zeros(dim);
    for z in latents {
        mean += z;
    }
    mean /= n as f64;
    let x = DMatrix::from_fn(n, dim, |r, c| latents[r][c] - mean[c]);
    let cov = x.transpose() * &x / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let tol = 1e-12 * total.max(1e-300);
    let mut basis = DMatrix::zeros(dim, out_dim);
    let mut ratios = Vec::with_capacity(out_dim);
    let mut degenerate = false;
    for (j, &k) in order.iter().take(out_dim).enumerate() {
        let val = eig.eigenvalues[k].max(0.0);
        if val <= tol {
            degenerate = true;
        }
        let mut v = eig.eigenvectors.column(k).into_owned();
        let pivot = v.iter().copied().fold(0.0f64, |m, e| if e.abs() > m.abs() { e } else { m });
        if pivot < 0.0 {
            v = -v;
        }
        basis.set_column(j, &v);
        ratios.push(if total > 0.0 { val / total } else { 0.0 });
    }
    Ok(PcaProjection {
        coords: x * basis,
        explained_variance_ratio: ratios,
        degenerate,
    })
}

/// One round's evaluation of both agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub round: usize,
    pub ari_a: f64,
    pub ari_b: f64,
    pub kappa: f64,
    pub dbs_a: f64,
    pub dbs_b: f64,
    pub topsim: f64,
}

impl MetricsReport {
    pub const COLUMNS: [&'static str; 6] = ["ari_a", "ari_b", "kappa", "dbs_a", "dbs_b", "topsim"];

    pub fn values(&self) -> [f64; 6] {
        [self.ari_a, self.ari_b, self.kappa, self.dbs_a, self.dbs_b, self.topsim]
    }
}

/// Snapshot of one agent as the metrics see it.
pub struct AgentView<'a> {
    pub latents: &'a [DVector<f64>],
    pub signs: &'a [usize],
}

/// Metrics for a round. Undefined values (e.g. DBS with one cluster) are NaN.
pub fn evaluate(round: usize, a: AgentView<'_>, b: AgentView<'_>, labels: &[usize]) -> Result<MetricsReport> {
    Ok(MetricsReport {
        round,
        ari_a: adjusted_rand_index(labels, a.signs)?,
        ari_b: adjusted_rand_index(labels, b.signs)?,
        kappa: cohens_kappa(a.signs, b.signs).unwrap_or(f64::NAN),
        dbs_a: davies_bouldin(a.latents, a.signs).unwrap_or(f64::NAN),
        dbs_b: davies_bouldin(b.latents, b.signs).unwrap_or(f64::NAN),
        topsim: topsim(a.latents, b.latents).unwrap_or(f64::NAN),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    #[test]
    fn ari_identity_and_relabel() {
        let x = [0, 0, 1, 1, 2, 2, 2];
        assert_eq!(adjusted_rand_index(&x, &x).unwrap(), 1.0);
        let y = [5, 5, 3, 3, 9, 9, 9];
        assert!((adjusted_rand_index(&x, &y).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ari_length_mismatch() {
        assert!(adjusted_rand_index(&[0, 1], &[0]).is_err());
        assert!(adjusted_rand_index(&[0], &[0]).is_err());
    }

    #[test]
    fn kappa_identical_and_opposite() {
        let a = [0, 1, 2, 2, 1];
        assert_eq!(cohens_kappa(&a, &a).unwrap(), 1.0);
        assert!((cohens_kappa(&[0, 1, 0, 1], &[1, 0, 1, 0]).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn kappa_degenerate_chance() {
        assert_eq!(cohens_kappa(&[3, 3, 3], &[3, 3, 3]).unwrap(), 1.0);
    }

    #[test]
    fn dbs_singletons_and_errors() {
        let z = [v(&[0.0]), v(&[1.0])];
        assert_eq!(davies_bouldin(&z, &[0, 1]).unwrap(), 0.0);
        assert!(davies_bouldin(&z, &[4, 4]).is_err());
    }

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn topsim_scale_invariant() {
        let a: Vec<DVector<f64>> = (0..6).map(|i| v(&[i as f64, (i * i) as f64 * 0.3])).collect();
        let b: Vec<DVector<f64>> = a.iter().map(|z| z * 5.0).collect();
        assert!((topsim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((topsim(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        let same = vec![v(&[1.0]); 4];
        assert!(topsim(&same, &a[..4]).is_err());
    }

    #[test]
    fn topsim_subsamples_deterministically() {
        assert_eq!(topsim_pairs(448).len(), TOPSIM_MAX_PAIRS);
        assert_eq!(topsim_pairs(448), topsim_pairs(448));
        assert_eq!(topsim_pairs(10).len(), 45);
    }

    #[test]
    fn heatmap_identity() {
        let labels: Vec<usize> = (0..8).flat_map(|l| [l, l]).collect();
        let h = recall_heatmap(&labels, &labels, 8, 8).unwrap();
        for l in 0..8 {
            for j in 0..8 {
                assert_eq!(h.recall[l][j], if l == j { 1.0 } else { 0.0 });
            }
            assert_eq!(h.other[l], 0.0);
        }
    }

    #[test]
    fn heatmap_split_label() {
        // Label 0 spread over signs 3 and 4; label 1 all on sign 5.
        let labels = [0, 0, 0, 0, 1, 1];
        let signs = [3, 3, 4, 4, 5, 5];
        let h = recall_heatmap(&signs, &labels, 2, 9).unwrap();
        assert_eq!(h.recall[0][0], 0.5);
        assert_eq!(h.other[0], 0.5);
        assert_eq!(h.recall[1][1], 1.0);
    }

    #[test]
    fn matching_handles_wide_and_tall() {
        let wide = vec![vec![1, 5, 0], vec![4, 4, 0]];
        assert_eq!(max_weight_matching(&wide), vec![Some(1), Some(0)]);
        let tall = vec![vec![1], vec![7], vec![3]];
        assert_eq!(max_weight_matching(&tall), vec![None, Some(0), None]);
    }

    #[test]
    fn pca_line_and_degenerate() {
        let dir = v(&[1.0, 2.0, 0.0, -1.0, 0.5, 0.0, 0.0, 0.3, 1.0]);
        let pts: Vec<DVector<f64>> = (0..50).map(|i| &dir * (i as f64 - 25.0)).collect();
        let p = pca_project(&pts, 2).unwrap();
        assert!(p.explained_variance_ratio[0] > 0.999);
        assert!(p.degenerate);
        assert!(pca_project(&pts[..2], 2).is_err());
    }
}
