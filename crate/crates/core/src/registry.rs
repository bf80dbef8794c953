//! Component bookkeeping across ICA runs, windows and eras: Icasso-style
//! consensus with stability scores, Hungarian matching, sign alignment,
//! Risk-On/Risk-Off polarity, era aggregation and persistence diagnostics.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::assignment;
use crate::group_ica::{self, ComponentMap, GroupIcaError, GroupIcaParams, PseudoSubjectStack};
use crate::stats;

/// Components scoring below this are considered noisy.
pub const NOISY_IQ: f64 = 0.8;
/// Default threshold for occurrence rates.
pub const OCCURRENCE_THRESHOLD: f64 = 0.9;
/// Relative cluster-size deviation that triggers an imbalance warning.
const IMBALANCE_TOLERANCE: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistryError {
    #[error("component {row} of {side} has zero variance")]
    ZeroVarianceComponent { side: &'static str, row: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("total variance of the stacked components is zero")]
    ZeroTotalVariance,
    #[error("empty input")]
    EmptyInput,
    #[error("reference asset set is empty")]
    EmptyReferenceSet,
    #[error("unknown asset {0}")]
    UnknownAsset(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    GroupIca(#[from] GroupIcaError),
}

pub type Result<T> = std::result::Result<T, RegistryError>;

/// Zero-mean, unit-norm copy of a vector; `None` if it is constant.
fn standardize(v: &[f64]) -> Option<Vec<f64>> {
    let m = stats::mean(v);
    let centered: Vec<f64> = v.iter().map(|x| x - m).collect();
    let norm = centered.iter().map(|x| x * x).sum::<f64>().sqrt();
    if stats::is_constant(v) || norm == 0.0 {
        return None;
    }
    Some(centered.into_iter().map(|x| x / norm).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn standardized_rows(m: &DMatrix<f64>, side: &'static str) -> Result<Vec<Vec<f64>>> {
    m.row_iter()
        .enumerate()
        .map(|(row, r)| {
            let v: Vec<f64> = r.iter().copied().collect();
            standardize(&v).ok_or(RegistryError::ZeroVarianceComponent { side, row })
        })
        .collect()
}

/// Optimal one-to-one pairing of two sets of rows by absolute correlation.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// `permutation[i]` is the row of the second set paired with row `i`.
    pub permutation: Vec<usize>,
    /// Sign of the correlation of each pair; `+1` when it is zero.
    pub signs: Vec<f64>,
    pub matched_abs_corr: Vec<f64>,
    pub mean: f64,
}

/// Short alias used by the synthetic recovery helpers.
pub type RowMatch = MatchResult;

/// Signed Pearson correlation between every row of `a` and every row of `b`.
pub fn row_correlations(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<Vec<f64>>> {
    if a.ncols() != b.ncols() {
        return Err(RegistryError::ShapeMismatch(format!(
            "rows of length {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let sa = standardized_rows(a, "first")?;
    let sb = standardized_rows(b, "second")?;
    Ok(sa
        .iter()
        .map(|x| sb.iter().map(|y| dot(x, y).clamp(-1.0, 1.0)).collect())
        .collect())
}

/// Hungarian matching maximizing the summed `|corr|` between rows of `a` and
/// rows of `b`.
pub fn match_rows(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<MatchResult> {
    if a.nrows() != b.nrows() {
        return Err(RegistryError::ShapeMismatch(format!(
            "{} rows vs {} rows",
            a.nrows(),
            b.nrows()
        )));
    }
    let corr = row_correlations(a, b)?;
    let score: Vec<Vec<f64>> = corr.iter().map(|row| row.iter().map(|c| c.abs()).collect()).collect();
    let permutation = assignment::solve_max(&score);
    let signs: Vec<f64> = permutation
        .iter()
        .enumerate()
        .map(|(i, &j)| if corr[i][j] < 0.0 { -1.0 } else { 1.0 })
        .collect();
    let matched_abs_corr: Vec<f64> = permutation.iter().enumerate().map(|(i, &j)| score[i][j]).collect();
    let mean = stats::mean(&matched_abs_corr);
    Ok(MatchResult {
        permutation,
        signs,
        matched_abs_corr,
        mean,
    })
}

fn check_compatible(a: &ComponentMap, b: &ComponentMap) -> Result<()> {
    if a.k() != b.k() {
        return Err(RegistryError::ShapeMismatch(format!(
            "{} vs {} components",
            a.k(),
            b.k()
        )));
    }
    if a.asset_order != b.asset_order {
        return Err(RegistryError::ShapeMismatch("asset orders differ".into()));
    }
    Ok(())
}

pub fn match_components(wa: &ComponentMap, wb: &ComponentMap) -> Result<MatchResult> {
    check_compatible(wa, wb)?;
    match_rows(&wa.loadings, &wb.loadings)
}

/// Reorder `wb` by `permutation` and flip each row so it correlates
/// non-negatively with its partner in `wa`. The result takes over `wa`'s
/// labels and Risk-On/Risk-Off roles.
pub fn align_signs(wa: &ComponentMap, wb: &ComponentMap, permutation: &[usize]) -> Result<ComponentMap> {
    check_compatible(wa, wb)?;
    let k = wa.k();
    let mut sorted = permutation.to_vec();
    sorted.sort_unstable();
    if sorted != (0..k).collect::<Vec<_>>() {
        return Err(RegistryError::InvalidParameter("not a permutation".into()));
    }
    let mut loadings = DMatrix::zeros(k, wb.n_assets());
    let mut iq = Vec::with_capacity(k);
    for (i, &j) in permutation.iter().enumerate() {
        let partner = wb.row(j);
        let sign = match stats::pearson(&wa.row(i), &partner) {
            Some(c) if c < 0.0 => -1.0,
            _ => 1.0,
        };
        for (col, v) in partner.iter().enumerate() {
            loadings[(i, col)] = sign * v;
        }
        iq.push(wb.iq[j]);
    }
    Ok(ComponentMap {
        loadings,
        asset_order: wb.asset_order.clone(),
        iq,
        window_len: wb.window_len,
        labels: wa.labels.clone(),
        risk_on: wa.risk_on,
        risk_off: wa.risk_off,
    })
}

/// Match `wb` to `wa` and align it in one step.
pub fn align_to(reference: &ComponentMap, other: &ComponentMap) -> Result<(ComponentMap, MatchResult)> {
    let m = match_components(reference, other)?;
    let aligned = align_signs(reference, other, &m.permutation)?;
    Ok((aligned, m))
}

fn asset_indices(map: &ComponentMap, assets: &[String]) -> Result<Vec<usize>> {
    assets
        .iter()
        .map(|a| {
            map.asset_order
                .iter()
                .position(|x| x == a)
                .ok_or_else(|| RegistryError::UnknownAsset(a.clone()))
        })
        .collect()
}

fn mean_loading(map: &ComponentMap, row: usize, cols: &[usize]) -> f64 {
    cols.iter().map(|&c| map.loadings[(row, c)]).sum::<f64>() / cols.len() as f64
}

fn argmax_abs(values: impl Iterator<Item = (usize, f64)>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values {
        if best.is_none_or(|(_, b)| v.abs() > b.abs()) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Label Risk-On and Risk-Off and fix their signs.
///
/// Risk-On is the component with the largest `|mean loading|` on
/// `risk_on_assets`, flipped so that mean is positive. Risk-Off is chosen
/// among the remaining components by the largest `|mean loading|` on
/// `risk_off_assets` (or, when that is absent, on every asset outside the
/// Risk-On set) and flipped so that mean is negative. Ties go to the lowest
/// component index. Applying it twice changes nothing.
pub fn canonical_polarity(
    map: &ComponentMap,
    risk_on_assets: &[String],
    risk_off_assets: Option<&[String]>,
) -> Result<ComponentMap> {
    if risk_on_assets.is_empty() {
        return Err(RegistryError::EmptyReferenceSet);
    }
    let on_cols = asset_indices(map, risk_on_assets)?;
    let mut out = map.clone();
    let on = argmax_abs((0..map.k()).map(|i| (i, mean_loading(map, i, &on_cols)))).expect("at least one component");
    if mean_loading(map, on, &on_cols) < 0.0 {
        out.loadings.row_mut(on).neg_mut();
    }
    out.risk_on = Some(on);
    out.risk_off = None;

    let off_cols = match risk_off_assets {
        Some(list) if !list.is_empty() => asset_indices(map, list)?,
        _ => {
            let rest: Vec<usize> = (0..map.n_assets()).filter(|c| !on_cols.contains(c)).collect();
            if rest.is_empty() {
                (0..map.n_assets()).collect()
            } else {
                rest
            }
        }
    };
    if let Some(off) = argmax_abs(
        (0..map.k())
            .filter(|&i| i != on)
            .map(|i| (i, mean_loading(map, i, &off_cols))),
    ) {
        if mean_loading(map, off, &off_cols) > 0.0 {
            out.loadings.row_mut(off).neg_mut();
        }
        out.risk_off = Some(off);
    }
    Ok(out)
}

/// Mean squared distance of the vectors to their centroid.
pub fn total_variance(vectors: &[Vec<f64>]) -> Result<f64> {
    let first = vectors.first().ok_or(RegistryError::EmptyInput)?;
    let dim = first.len();
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(RegistryError::ShapeMismatch("ragged vectors".into()));
    }
    let n = vectors.len() as f64;
    let centroid: Vec<f64> = (0..dim)
        .map(|d| vectors.iter().map(|v| v[d]).sum::<f64>() / n)
        .collect();
    Ok(vectors
        .iter()
        .map(|v| v.iter().zip(&centroid).map(|(a, c)| (a - c) * (a - c)).sum::<f64>())
        .sum::<f64>()
        / n)
}

/// `1 - intra-cluster variance / total variance`, clamped to `[0, 1]`.
///
/// `total` is the variance of the full stacked component set (see
/// [`total_variance`]).
pub fn iq_score(cluster_members: &[Vec<f64>], total: f64) -> Result<f64> {
    if total.is_nan() || total <= 0.0 {
        return Err(RegistryError::ZeroTotalVariance);
    }
    let intra = total_variance(cluster_members)?;
    Ok((1.0 - intra / total).clamp(0.0, 1.0))
}

/// Average-linkage agglomerative clustering of a symmetric distance matrix
/// into `k` clusters. Returns a cluster id per item; ids are numbered by the
/// smallest item index they contain. Equal distances merge the
/// lexicographically smallest pair first.
pub fn average_linkage(dist: &[Vec<f64>], k: usize) -> Vec<usize> {
    let n = dist.len();
    assert!(k >= 1 && k <= n, "need 1 <= k <= n");
    let mut d: Vec<Vec<f64>> = dist.to_vec();
    let mut size = vec![1usize; n];
    let mut active: Vec<bool> = vec![true; n];
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut clusters = n;
    while clusters > k {
        let mut best = (usize::MAX, usize::MAX, f64::INFINITY);
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in i + 1..n {
                if active[j] && d[i][j] < best.2 {
                    best = (i, j, d[i][j]);
                }
            }
        }
        let (a, b, _) = best;
        let (sa, sb) = (size[a] as f64, size[b] as f64);
        for x in 0..n {
            if active[x] && x != a && x != b {
                let merged = (sa * d[a][x] + sb * d[b][x]) / (sa + sb);
                d[a][x] = merged;
                d[x][a] = merged;
            }
        }
        active[b] = false;
        size[a] += size[b];
        let moved = std::mem::take(&mut members[b]);
        members[a].extend(moved);
        clusters -= 1;
    }
    let mut roots: Vec<usize> = (0..n).filter(|&i| active[i]).collect();
    roots.sort_by_key(|&r| members[r].iter().copied().min());
    let mut labels = vec![0; n];
    for (id, &r) in roots.iter().enumerate() {
        for &m in &members[r] {
            labels[m] = id;
        }
    }
    labels
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleScheme {
    /// Same data, fresh random initialization per run.
    SeedOnly,
    /// Resample pseudo-subjects with replacement per run.
    WindowBootstrap,
}

impl ResampleScheme {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "seed_only" => Some(ResampleScheme::SeedOnly),
            "window_bootstrap" => Some(ResampleScheme::WindowBootstrap),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ResampleScheme::SeedOnly => "seed_only",
            ResampleScheme::WindowBootstrap => "window_bootstrap",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcassoParams {
    pub runs: usize,
    pub scheme: ResampleScheme,
    pub group: GroupIcaParams,
    /// Run `r` uses seed `seed + r`.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Consensus {
    pub map: ComponentMap,
    pub cluster_sizes: Vec<usize>,
    /// Some cluster size deviates from the run count by more than 20%.
    pub imbalanced: bool,
    /// Runs whose solver reached the tolerance.
    pub converged_runs: usize,
}

/// Consensus of the unmixing rows produced by several ICA runs.
pub fn consensus_from_runs(runs: &[DMatrix<f64>], asset_order: Vec<String>, window_len: usize) -> Result<Consensus> {
    let r = runs.len();
    if r == 0 {
        return Err(RegistryError::EmptyInput);
    }
    let k = runs[0].nrows();
    if runs.iter().any(|m| m.shape() != runs[0].shape()) {
        return Err(RegistryError::ShapeMismatch("runs differ in shape".into()));
    }
    let raw: Vec<Vec<f64>> = runs
        .iter()
        .flat_map(|m| m.row_iter().map(|row| row.iter().copied().collect::<Vec<f64>>()))
        .collect();
    let std_rows: Vec<Vec<f64>> = raw
        .iter()
        .enumerate()
        .map(|(i, v)| {
            standardize(v).ok_or(RegistryError::ZeroVarianceComponent {
                side: "ensemble",
                row: i,
            })
        })
        .collect::<Result<_>>()?;
    let n = std_rows.len();
    let abs_corr: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        1.0
                    } else {
                        dot(&std_rows[i], &std_rows[j]).abs().min(1.0)
                    }
                })
                .collect()
        })
        .collect();
    let dist: Vec<Vec<f64>> = abs_corr
        .iter()
        .map(|row| row.iter().map(|c| (1.0 - c).max(0.0)).collect())
        .collect();
    let labels = average_linkage(&dist, k);

    let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (item, &c) in labels.iter().enumerate() {
        clusters[c].push(item);
    }
    let centroids: Vec<usize> = clusters
        .iter()
        .map(|members| {
            let mut best = (members[0], f64::NEG_INFINITY);
            for &m in members {
                let score = if members.len() == 1 {
                    1.0
                } else {
                    members
                        .iter()
                        .filter(|&&o| o != m)
                        .map(|&o| abs_corr[m][o])
                        .sum::<f64>()
                        / (members.len() - 1) as f64
                };
                if score > best.1 {
                    best = (m, score);
                }
            }
            best.0
        })
        .collect();

    // Sign-align every member to its cluster centroid before measuring spread.
    let aligned: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let c = centroids[labels[i]];
            let s = if dot(&std_rows[i], &std_rows[c]) < 0.0 {
                -1.0
            } else {
                1.0
            };
            std_rows[i].iter().map(|x| s * x).collect()
        })
        .collect();
    let total = total_variance(&aligned)?;
    let iq: Vec<f64> = clusters
        .iter()
        .map(|members| {
            let vs: Vec<Vec<f64>> = members.iter().map(|&m| aligned[m].clone()).collect();
            if total <= 0.0 {
                // Every stacked component is identical.
                Ok(1.0)
            } else {
                iq_score(&vs, total)
            }
        })
        .collect::<Result<_>>()?;

    let cluster_sizes: Vec<usize> = clusters.iter().map(Vec::len).collect();
    let imbalanced = cluster_sizes
        .iter()
        .any(|&s| (s as f64 - r as f64).abs() > IMBALANCE_TOLERANCE * r as f64);
    if imbalanced {
        log::warn!("icasso cluster sizes {cluster_sizes:?} deviate from {r} runs by more than 20%");
    }
    let loadings = DMatrix::from_fn(k, raw[0].len(), |i, j| raw[centroids[i]][j]);
    let map = ComponentMap::new(loadings, asset_order, iq, window_len)?;
    Ok(Consensus {
        map,
        cluster_sizes,
        imbalanced,
        converged_runs: 0,
    })
}

/// Run `runs` group-ICA decompositions and cluster the `K · runs` components
/// into `K` consensus components with stability scores.
pub fn icasso_consensus(stack: &PseudoSubjectStack, params: &IcassoParams) -> Result<Consensus> {
    if params.runs < 2 {
        return Err(RegistryError::InvalidParameter(format!(
            "need at least 2 runs, got {}",
            params.runs
        )));
    }
    let g = params.group;
    if g.k == 0 || g.k > g.group_rank {
        return Err(RegistryError::InvalidParameter(format!(
            "K = {} must be in 1..=group_rank ({})",
            g.k, g.group_rank
        )));
    }
    let shared = match params.scheme {
        ResampleScheme::SeedOnly => Some(group_ica::reduce_group(stack, g.subject_rank, g.group_rank)?),
        ResampleScheme::WindowBootstrap => None,
    };
    let results: Vec<(DMatrix<f64>, bool)> = (0..params.runs)
        .into_par_iter()
        .map(|r| {
            let seed = params.seed.wrapping_add(r as u64);
            let reduction = match &shared {
                Some(red) => red.clone(),
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB007_5742_u64);
                    let picks: Vec<usize> = (0..stack.len()).map(|_| rng.random_range(0..stack.len())).collect();
                    group_ica::reduce_group(&stack.select(&picks), g.subject_rank, g.group_rank)?
                }
            };
            let (loadings, unmixing) = group_ica::unmix_group(&reduction, g.k, g.tol, g.max_iter, seed)?;
            Ok((loadings, unmixing.converged))
        })
        .collect::<Result<_>>()?;
    let converged_runs = results.iter().filter(|(_, c)| *c).count();
    let runs: Vec<DMatrix<f64>> = results.into_iter().map(|(m, _)| m).collect();
    let mut consensus = consensus_from_runs(&runs, stack.asset_order.clone(), stack.w_len)?;
    consensus.converged_runs = converged_runs;
    Ok(consensus)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EraAggregate {
    pub era_label: String,
    /// Element-wise mean of the aligned loadings; its `iq` holds the medians.
    pub mean_map: ComponentMap,
    pub median_iq: Vec<f64>,
    pub iqr_iq: Vec<f64>,
    pub n_maps: usize,
}

/// Average already-aligned maps and summarize their stability scores.
pub fn aggregate_era(aligned_maps: &[ComponentMap], label: &str) -> Result<EraAggregate> {
    let first = aligned_maps.first().ok_or(RegistryError::EmptyInput)?;
    for m in &aligned_maps[1..] {
        check_compatible(first, m)?;
    }
    let n = aligned_maps.len() as f64;
    let mut loadings = DMatrix::zeros(first.k(), first.n_assets());
    for m in aligned_maps {
        loadings += &m.loadings;
    }
    loadings /= n;
    let per_component = |i: usize| -> Vec<f64> { aligned_maps.iter().map(|m| m.iq[i]).collect() };
    let median_iq: Vec<f64> = (0..first.k()).map(|i| stats::median(&per_component(i))).collect();
    let iqr_iq: Vec<f64> = (0..first.k()).map(|i| stats::iqr(&per_component(i))).collect();
    let mut mean_map = ComponentMap::new(loadings, first.asset_order.clone(), median_iq.clone(), first.window_len)?;
    mean_map.labels = first.labels.clone();
    mean_map.risk_on = first.risk_on;
    mean_map.risk_off = first.risk_off;
    Ok(EraAggregate {
        era_label: label.to_string(),
        mean_map,
        median_iq,
        iqr_iq,
        n_maps: aligned_maps.len(),
    })
}

/// Fraction of entries strictly above `threshold`.
pub fn occurrence_rate(iq_series: &[f64], threshold: f64) -> Result<f64> {
    if iq_series.is_empty() {
        return Err(RegistryError::EmptyInput);
    }
    Ok(iq_series.iter().filter(|q| **q > threshold).count() as f64 / iq_series.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSimilarity {
    pub a: usize,
    pub b: usize,
    pub result: MatchResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossEraSimilarity {
    pub labels: Vec<String>,
    /// Symmetric matrix of mean matched `|corr|`.
    pub mean_abs_corr: DMatrix<f64>,
    /// One entry per unordered pair `a <= b`.
    pub pairs: Vec<PairSimilarity>,
}

pub fn cross_era_similarity(aggregates: &[EraAggregate]) -> Result<CrossEraSimilarity> {
    if aggregates.len() < 2 {
        return Err(RegistryError::InvalidParameter(
            "need at least two era aggregates".into(),
        ));
    }
    let e = aggregates.len();
    let mut mean_abs_corr = DMatrix::zeros(e, e);
    let mut pairs = Vec::new();
    for a in 0..e {
        for b in a..e {
            let result = match_components(&aggregates[a].mean_map, &aggregates[b].mean_map)?;
            mean_abs_corr[(a, b)] = result.mean;
            mean_abs_corr[(b, a)] = result.mean;
            pairs.push(PairSimilarity { a, b, result });
        }
    }
    Ok(CrossEraSimilarity {
        labels: aggregates.iter().map(|g| g.era_label.clone()).collect(),
        mean_abs_corr,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("A{i}")).collect()
    }

    fn map_from(rows: &[&[f64]]) -> ComponentMap {
        let k = rows.len();
        let n = rows[0].len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        ComponentMap::new(DMatrix::from_row_slice(k, n, &flat), names(n), vec![1.0; k], 10).unwrap()
    }

    #[test]
    fn self_match_is_identity() {
        let m = map_from(&[&[1.0, 2.0, 0.0, -1.0], &[0.0, 1.0, 3.0, 1.0], &[2.0, -1.0, 1.0, 0.5]]);
        let r = match_components(&m, &m).unwrap();
        assert_eq!(r.permutation, vec![0, 1, 2]);
        assert!(r.matched_abs_corr.iter().all(|c| (c - 1.0).abs() < 1e-12));
    }

    #[test]
    fn swapped_and_negated_rows_are_recovered() {
        let a = map_from(&[&[1.0, 2.0, 0.0, -1.0], &[0.0, 1.0, 3.0, 1.0], &[2.0, -1.0, 1.0, 0.5]]);
        let b = map_from(&[&[0.0, 1.0, 3.0, 1.0], &[-1.0, -2.0, 0.0, 1.0], &[2.0, -1.0, 1.0, 0.5]]);
        let r = match_components(&a, &b).unwrap();
        assert_eq!(r.permutation, vec![1, 0, 2]);
        assert_eq!(r.signs, vec![-1.0, 1.0, 1.0]);
        let aligned = align_signs(&a, &b, &r.permutation).unwrap();
        assert!((&aligned.loadings - &a.loadings).amax() < 1e-15);
    }

    #[test]
    fn constant_row_is_rejected() {
        let a = map_from(&[&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]]);
        let b = map_from(&[&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]]);
        assert_eq!(
            match_components(&a, &b),
            Err(RegistryError::ZeroVarianceComponent { side: "first", row: 1 })
        );
    }

    #[test]
    fn align_negated_map_and_idempotence() {
        let a = map_from(&[&[1.0, 2.0, 0.0], &[0.0, 1.0, 3.0]]);
        let mut neg = a.clone();
        neg.loadings.neg_mut();
        let aligned = align_signs(&a, &neg, &[0, 1]).unwrap();
        assert_eq!(aligned.loadings, a.loadings);
        let again = align_signs(&a, &aligned, &[0, 1]).unwrap();
        assert_eq!(again, aligned);
    }

    #[test]
    fn polarity_single_component() {
        let m = map_from(&[&[0.9, 0.1, -0.2]]);
        let refs = vec!["A0".to_string()];
        let p = canonical_polarity(&m, &refs, None).unwrap();
        assert_eq!(p.loadings, m.loadings);
        assert_eq!(p.risk_on, Some(0));
        assert_eq!(p.risk_off, None);

        let m = map_from(&[&[-0.9, 0.1, -0.2]]);
        let p = canonical_polarity(&m, &refs, None).unwrap();
        assert_eq!(p.loadings[(0, 0)], 0.9);
        assert_eq!(canonical_polarity(&m, &[], None), Err(RegistryError::EmptyReferenceSet));
        assert_eq!(
            canonical_polarity(&m, &["ZZZ".to_string()], None),
            Err(RegistryError::UnknownAsset("ZZZ".into()))
        );
    }

    #[test]
    fn polarity_is_idempotent_and_sets_off_sign() {
        let m = map_from(&[&[0.1, 0.2, 0.3, 0.0], &[-0.8, -0.7, 0.1, 0.0], &[0.0, 0.1, 0.9, 0.8]]);
        let on = vec!["A0".to_string(), "A1".to_string()];
        let p = canonical_polarity(&m, &on, None).unwrap();
        assert_eq!(p.risk_on, Some(1));
        assert!(p.loadings[(1, 0)] > 0.0);
        assert_eq!(p.risk_off, Some(2));
        assert!(p.loadings[(2, 2)] < 0.0);
        assert_eq!(canonical_polarity(&p, &on, None).unwrap(), p);
    }

    #[test]
    fn iq_edge_cases() {
        let v = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
        assert_eq!(iq_score(&v, 0.5).unwrap(), 1.0);
        let spread = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        assert_eq!(iq_score(&spread, 1.0).unwrap(), 0.0);
        assert_eq!(iq_score(&v, 0.0), Err(RegistryError::ZeroTotalVariance));
    }

    #[test]
    fn average_linkage_two_groups() {
        let pts = [0.0, 0.1, 0.2, 5.0, 5.1];
        let dist: Vec<Vec<f64>> = pts
            .iter()
            .map(|a| pts.iter().map(|b| f64::abs(a - b)).collect())
            .collect();
        assert_eq!(average_linkage(&dist, 2), vec![0, 0, 0, 1, 1]);
        assert_eq!(average_linkage(&dist, 5), vec![0, 1, 2, 3, 4]);
        assert_eq!(average_linkage(&dist, 1), vec![0; 5]);
    }

    #[test]
    fn consensus_of_identical_runs() {
        let run = DMatrix::from_row_slice(3, 4, &[1.0, 2.0, 0.0, -1.0, 0.0, 1.0, 3.0, 1.0, 2.0, -1.0, 1.0, 0.5]);
        let c = consensus_from_runs(&[run.clone(), run.clone(), run.clone()], names(4), 10).unwrap();
        assert_eq!(c.map.loadings, run);
        assert_eq!(c.map.iq, vec![1.0; 3]);
        assert_eq!(c.cluster_sizes, vec![3; 3]);
        assert!(!c.imbalanced);
    }

    #[test]
    fn consensus_of_permuted_negated_runs() {
        let a = DMatrix::from_row_slice(3, 4, &[1.0, 2.0, 0.0, -1.0, 0.0, 1.0, 3.0, 1.0, 2.0, -1.0, 1.0, 0.5]);
        let mut b = DMatrix::zeros(3, 4);
        b.set_row(0, &(-a.row(2)));
        b.set_row(1, &a.row(0));
        b.set_row(2, &(-a.row(1)));
        let c = consensus_from_runs(&[a.clone(), b], names(4), 10).unwrap();
        assert_eq!(c.cluster_sizes, vec![2; 3]);
        assert_eq!(c.map.iq, vec![1.0; 3]);
        assert_eq!(c.map.loadings, a);
    }

    #[test]
    fn aggregate_single_and_cancelling_maps() {
        let w = map_from(&[&[1.0, 2.0, 0.0], &[0.0, 1.0, 3.0]]);
        let g = aggregate_era(&[w.clone()], "S1").unwrap();
        assert_eq!(g.mean_map.loadings, w.loadings);
        assert_eq!(g.iqr_iq, vec![0.0, 0.0]);

        let mut neg = w.clone();
        neg.loadings.neg_mut();
        let naive = aggregate_era(&[w.clone(), neg.clone()], "S1").unwrap();
        assert!(naive.mean_map.loadings.amax() == 0.0);
        let aligned = align_signs(&w, &neg, &[0, 1]).unwrap();
        let g = aggregate_era(&[w.clone(), aligned], "S1").unwrap();
        assert_eq!(g.mean_map.loadings, w.loadings);
        assert_eq!(aggregate_era(&[], "S1"), Err(RegistryError::EmptyInput));
    }

    #[test]
    fn aggregate_quantiles() {
        let base = map_from(&[&[1.0, 2.0, 0.0]]);
        let maps: Vec<ComponentMap> = [0.7, 0.8, 0.9, 0.95, 1.0]
            .iter()
            .map(|q| ComponentMap {
                iq: vec![*q],
                ..base.clone()
            })
            .collect();
        let g = aggregate_era(&maps, "S2").unwrap();
        assert!((g.median_iq[0] - 0.9).abs() < 1e-12);
        assert!((g.iqr_iq[0] - 0.15).abs() < 1e-12);
    }

    #[test]
    fn occurrence_examples() {
        assert_eq!(occurrence_rate(&[1.0; 4], 0.9).unwrap(), 1.0);
        assert_eq!(occurrence_rate(&[0.9; 4], 0.9).unwrap(), 0.0);
        assert_eq!(occurrence_rate(&[0.95, 0.85, 0.91, 0.5], 0.9).unwrap(), 0.5);
        assert_eq!(occurrence_rate(&[], 0.9), Err(RegistryError::EmptyInput));
    }

    #[test]
    fn cross_era_self_similarity() {
        let w = map_from(&[&[1.0, 2.0, 0.0], &[0.0, 1.0, 3.0]]);
        let g = aggregate_era(&[w], "S1").unwrap();
        let mut h = g.clone();
        h.era_label = "S2".into();
        let sim = cross_era_similarity(&[g, h]).unwrap();
        assert!((sim.mean_abs_corr[(0, 1)] - 1.0).abs() < 1e-12);
        assert_eq!(sim.pairs.len(), 3);
    }
}
