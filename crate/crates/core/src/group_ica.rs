//! Group ICA over sliding pseudo-subject windows.
//!
//! Each window of the panel is one pseudo-subject. A fit runs:
//!
//! 1. per-window PCA, keeping `subject_rank` directions and projecting the
//!    centered window back onto them in asset coordinates;
//! 2. horizontal concatenation of the reduced windows;
//! 3. group PCA whitening to `group_rank` dimensions;
//! 4. symmetric fixed-point ICA for `K` components.
//!
//! Loadings are reported in asset space (`K × N`), so the time course of a
//! window is simply `loadings · window`.

use chrono::NaiveDate;
use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::ica::{self, IcaError, UnmixingMatrix, WhiteningResult};
use crate::market_data::AssetPanel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroupIcaError {
    #[error("window length {w} exceeds panel length {t}")]
    WindowTooLong { w: usize, t: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("window asset order does not match the component map")]
    AssetOrderMismatch,
    #[error("pseudo-subject stack is empty")]
    EmptyStack,
    #[error(transparent)]
    Ica(#[from] IcaError),
}

pub type Result<T> = std::result::Result<T, GroupIcaError>;

/// Sliding windows of a panel, each stored assets × time.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoSubjectStack {
    pub windows: Vec<DMatrix<f64>>,
    pub start_indices: Vec<usize>,
    /// Date of the last row covered by each window.
    pub end_dates: Vec<NaiveDate>,
    pub stride: usize,
    pub w_len: usize,
    pub asset_order: Vec<String>,
}

impl PseudoSubjectStack {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn n_assets(&self) -> usize {
        self.asset_order.len()
    }

    /// Sub-stack made of the windows at `indices` (repeats allowed).
    pub fn select(&self, indices: &[usize]) -> PseudoSubjectStack {
        PseudoSubjectStack {
            windows: indices.iter().map(|&i| self.windows[i].clone()).collect(),
            start_indices: indices.iter().map(|&i| self.start_indices[i]).collect(),
            end_dates: indices.iter().map(|&i| self.end_dates[i]).collect(),
            stride: self.stride,
            w_len: self.w_len,
            asset_order: self.asset_order.clone(),
        }
    }
}

/// Contiguous windows `[t, t + w)` for `t = 0, stride, 2·stride, ...`;
/// `floor((T - w) / stride) + 1` of them.
pub fn build_pseudo_subjects(panel: &AssetPanel, w: usize, stride: usize) -> Result<PseudoSubjectStack> {
    let t = panel.n_dates();
    if stride == 0 || w == 0 {
        return Err(GroupIcaError::InvalidParameter(format!(
            "window {w} and stride {stride} must be positive"
        )));
    }
    if w > t {
        return Err(GroupIcaError::WindowTooLong { w, t });
    }
    let starts: Vec<usize> = (0..=t - w).step_by(stride).collect();
    let windows = starts.iter().map(|&s| panel.values.rows(s, w).transpose()).collect();
    Ok(PseudoSubjectStack {
        windows,
        end_dates: starts.iter().map(|&s| panel.dates[s + w - 1]).collect(),
        start_indices: starts,
        stride,
        w_len: w,
        asset_order: panel.assets.clone(),
    })
}

/// Per-window summary statistic for the alternative one-column-per-window
/// stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SummaryStat {
    Mean,
    StdDev,
    /// Least-squares slope against the within-window time index.
    Trend,
}

/// Alternative stack: every window is reduced to one summary value per
/// asset, giving an `N × n_windows` matrix.
pub fn build_summary_stack(panel: &AssetPanel, w: usize, stride: usize, stat: SummaryStat) -> Result<DMatrix<f64>> {
    if stat == SummaryStat::StdDev && w < 2 || stat == SummaryStat::Trend && w < 2 {
        return Err(GroupIcaError::InvalidParameter(
            "dispersion and trend summaries need w >= 2".into(),
        ));
    }
    let stack = build_pseudo_subjects(panel, w, stride)?;
    let n = stack.n_assets();
    let summarize = |row: Vec<f64>| -> f64 {
        match stat {
            SummaryStat::Mean => crate::stats::mean(&row),
            SummaryStat::StdDev => crate::stats::variance(&row, 1).sqrt(),
            SummaryStat::Trend => {
                let tm = (row.len() - 1) as f64 / 2.0;
                let ym = crate::stats::mean(&row);
                let (num, den) = row.iter().enumerate().fold((0.0, 0.0), |(n, d), (i, y)| {
                    let dx = i as f64 - tm;
                    (n + dx * (y - ym), d + dx * dx)
                });
                num / den
            }
        }
    };
    Ok(DMatrix::from_fn(n, stack.len(), |i, j| {
        summarize(stack.windows[j].row(i).iter().copied().collect())
    }))
}

/// A set of `K` components over `N` assets with stability scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentMap {
    /// `K × N` asset-space unmixing rows.
    pub loadings: DMatrix<f64>,
    pub asset_order: Vec<String>,
    /// Stability score per component, in `[0, 1]`.
    pub iq: Vec<f64>,
    pub window_len: usize,
    /// Component labels, `IC1..ICK` unless relabelled.
    pub labels: Vec<String>,
    pub risk_on: Option<usize>,
    pub risk_off: Option<usize>,
}

pub fn default_labels(k: usize) -> Vec<String> {
    (1..=k).map(|i| format!("IC{i}")).collect()
}

impl ComponentMap {
    pub fn new(loadings: DMatrix<f64>, asset_order: Vec<String>, iq: Vec<f64>, window_len: usize) -> Result<Self> {
        let k = loadings.nrows();
        if asset_order.len() != loadings.ncols() {
            return Err(GroupIcaError::InvalidParameter(format!(
                "{} asset names for {} loading columns",
                asset_order.len(),
                loadings.ncols()
            )));
        }
        if iq.len() != k {
            return Err(GroupIcaError::InvalidParameter(format!(
                "{} stability scores for {k} components",
                iq.len()
            )));
        }
        if loadings.iter().any(|v| !v.is_finite()) {
            return Err(GroupIcaError::InvalidParameter("non-finite loading".into()));
        }
        if iq.iter().any(|q| !(0.0..=1.0).contains(q)) {
            return Err(GroupIcaError::InvalidParameter("stability score outside [0, 1]".into()));
        }
        Ok(ComponentMap {
            loadings,
            asset_order,
            iq,
            window_len,
            labels: default_labels(k),
            risk_on: None,
            risk_off: None,
        })
    }

    pub fn k(&self) -> usize {
        self.loadings.nrows()
    }

    pub fn n_assets(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.loadings.row(i).iter().copied().collect()
    }

    /// Asset-space mixing estimate (`N × K`): the pseudo-inverse of the
    /// loadings, whose columns are the spatial patterns of the components.
    pub fn mixing_estimate(&self) -> DMatrix<f64> {
        self.loadings
            .clone()
            .pseudo_inverse(1e-12)
            .expect("non-negative epsilon")
    }
}

/// Module activations over windows, one column per window.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    /// `K × T`.
    pub values: DMatrix<f64>,
    pub labels: Vec<String>,
    pub dates: Vec<NaiveDate>,
}

impl ActivationMatrix {
    pub fn new(values: DMatrix<f64>, dates: Vec<NaiveDate>) -> Self {
        let labels = default_labels(values.nrows());
        ActivationMatrix { values, labels, dates }
    }

    pub fn k(&self) -> usize {
        self.values.nrows()
    }

    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.ncols() == 0
    }
}

/// Ranks and solver settings for one group fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupIcaParams {
    pub subject_rank: usize,
    pub group_rank: usize,
    pub k: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl GroupIcaParams {
    /// Both ranks equal to `k`, default solver settings.
    pub fn with_k(k: usize) -> Self {
        GroupIcaParams {
            subject_rank: k,
            group_rank: k,
            k,
            tol: ica::DEFAULT_TOL,
            max_iter: ica::DEFAULT_MAX_ITER,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.group_rank {
            return Err(GroupIcaError::InvalidParameter(format!(
                "K = {} must be in 1..=group_rank ({})",
                self.k, self.group_rank
            )));
        }
        if self.subject_rank == 0 {
            return Err(GroupIcaError::InvalidParameter("subject_rank must be positive".into()));
        }
        Ok(())
    }
}

/// Result of the PCA stages (steps 1-3), reusable across ICA restarts.
#[derive(Debug, Clone)]
pub struct GroupReduction {
    /// Group whitening of the concatenated, per-window-reduced data.
    pub whitening: WhiteningResult,
    pub asset_order: Vec<String>,
    pub window_len: usize,
}

pub fn reduce_group(stack: &PseudoSubjectStack, subject_rank: usize, group_rank: usize) -> Result<GroupReduction> {
    if stack.is_empty() {
        return Err(GroupIcaError::EmptyStack);
    }
    let n = stack.n_assets();
    if subject_rank == 0 || subject_rank > n.min(stack.w_len.saturating_sub(1)) {
        return Err(GroupIcaError::InvalidParameter(format!(
            "subject_rank {subject_rank} exceeds min(assets {n}, window {} - 1)",
            stack.w_len
        )));
    }
    let reduced: Vec<DMatrix<f64>> = stack
        .windows
        .par_iter()
        .map(|win| {
            let wr = ica::pca_whiten(win, subject_rank)?;
            Ok(&wr.inverse * &wr.whitened)
        })
        .collect::<Result<_>>()?;
    let total: usize = reduced.iter().map(|m| m.ncols()).sum();
    let mut concat = DMatrix::zeros(n, total);
    let mut offset = 0;
    for block in &reduced {
        concat.columns_mut(offset, block.ncols()).copy_from(block);
        offset += block.ncols();
    }
    let whitening = ica::pca_whiten(&concat, group_rank)?;
    Ok(GroupReduction {
        whitening,
        asset_order: stack.asset_order.clone(),
        window_len: stack.w_len,
    })
}

/// Run ICA on a reduction and express the unmixing rows in asset space.
pub fn unmix_group(
    reduction: &GroupReduction,
    k: usize,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<(DMatrix<f64>, UnmixingMatrix)> {
    let unmixing = ica::ica_fixed_point(&reduction.whitening.whitened, k, tol, max_iter, seed)?;
    let loadings = &unmixing.rows * &reduction.whitening.forward;
    Ok((loadings, unmixing))
}

/// Full single-run group ICA. Stability scores of the returned map are 1
/// since a single run carries no resampling information.
pub fn group_decompose(
    stack: &PseudoSubjectStack,
    params: &GroupIcaParams,
    seed: u64,
) -> Result<(ComponentMap, ActivationMatrix)> {
    params.validate()?;
    let reduction = reduce_group(stack, params.subject_rank, params.group_rank)?;
    let (loadings, _) = unmix_group(&reduction, params.k, params.tol, params.max_iter, seed)?;
    let map = ComponentMap::new(loadings, stack.asset_order.clone(), vec![1.0; params.k], stack.w_len)?;
    let activations = stack_activations(&map, stack)?;
    Ok((map, activations))
}

/// Time course and scalar activation of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    /// `K × w`, `loadings · window`.
    pub time_course: DMatrix<f64>,
    /// Mean of each component's time course.
    pub activation: Vec<f64>,
}

pub fn back_reconstruct(map: &ComponentMap, window: &DMatrix<f64>, window_assets: &[String]) -> Result<Reconstruction> {
    if window_assets != map.asset_order.as_slice() || window.nrows() != map.n_assets() {
        return Err(GroupIcaError::AssetOrderMismatch);
    }
    let time_course = &map.loadings * window;
    let activation = time_course.row_iter().map(|r| r.mean()).collect();
    Ok(Reconstruction {
        time_course,
        activation,
    })
}

/// Scalar activations of every window in the stack (`K × n_windows`).
pub fn stack_activations(map: &ComponentMap, stack: &PseudoSubjectStack) -> Result<ActivationMatrix> {
    let cols: Vec<Vec<f64>> = stack
        .windows
        .par_iter()
        .map(|w| back_reconstruct(map, w, &stack.asset_order).map(|r| r.activation))
        .collect::<Result<_>>()?;
    let values = DMatrix::from_fn(map.k(), cols.len(), |i, j| cols[j][i]);
    let mut out = ActivationMatrix::new(values, stack.end_dates.clone());
    out.labels = map.labels.clone();
    Ok(out)
}
