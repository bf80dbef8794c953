use connectome_core::dmnc::{
    build_dmnc, detect_communities, distance_to_baseline, global_efficiency, modularity, similarity_jump,
    smooth_activations, structural_volatility, ConnectivityVector, DmncError, DmncTensor, EdgeWeighting, Smoothing,
};
use connectome_core::io::{self, fmt_f64, fmt_opt};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::layout::{Layout, Universe};

pub fn smoothing_label(s: Option<Smoothing>) -> String {
    match s {
        None => "none".into(),
        Some(Smoothing::MovingAvg(n)) => format!("ma({n})"),
        Some(Smoothing::Exp(a)) => format!("exp({a})"),
        Some(Smoothing::ZScore) => "zscore".into(),
    }
}

pub fn weighting_label(w: EdgeWeighting) -> &'static str {
    match w {
        EdgeWeighting::Positive => "positive",
        EdgeWeighting::Absolute => "absolute",
    }
}

/// Per-window network statistics, aligned with the tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub similarity_jump: Vec<Option<f64>>,
    pub mahalanobis: Vec<Option<f64>>,
    pub structural_volatility: Vec<Option<f64>>,
    pub efficiency: Vec<Option<f64>>,
    pub modularity: Vec<Option<f64>>,
    pub communities: Vec<Option<usize>>,
    pub baseline_windows: usize,
}

/// Metrics that need a fully defined tensor come back missing, not as errors,
/// when some window has a constant component.
fn or_missing(r: std::result::Result<Vec<f64>, DmncError>, n: usize, what: &str) -> Result<Vec<Option<f64>>> {
    match r {
        Ok(v) => Ok(v.into_iter().map(Some).collect()),
        Err(DmncError::NonFinite) | Err(DmncError::InsufficientData { .. }) => {
            log::warn!("dmnc: {what} undefined for this tensor");
            Ok(vec![None; n])
        }
        Err(e) => Err(e.into()),
    }
}

pub fn metrics(cfg: &RunConfig, tensor: &DmncTensor) -> Result<Metrics> {
    let n = tensor.len();
    let dim = tensor.k() * (tensor.k() - 1) / 2;
    let baseline_windows = if cfg.baseline == 0 {
        (dim + 2).max(n / 4).min(n)
    } else {
        cfg.baseline
    };
    if baseline_windows > n {
        return Err(CliError::Config(format!(
            "baseline = {baseline_windows} exceeds the {n} dMNC windows"
        )));
    }
    if cfg.tau > n {
        return Err(CliError::Config(format!(
            "tau = {} exceeds the {n} dMNC windows",
            cfg.tau
        )));
    }
    let similarity_jump = match similarity_jump(tensor) {
        Ok(v) => v,
        Err(DmncError::NonFinite) | Err(DmncError::InsufficientData { .. }) => vec![None; n],
        Err(e) => return Err(e.into()),
    };
    let mahalanobis = or_missing(
        distance_to_baseline(tensor, 0..baseline_windows),
        n,
        "baseline distance",
    )?;
    let structural_volatility = match structural_volatility(tensor, cfg.tau) {
        Ok(v) => v,
        Err(DmncError::NonFinite) => vec![None; n],
        Err(e) => return Err(e.into()),
    };
    let mut efficiency = Vec::with_capacity(n);
    let mut modularity_q = Vec::with_capacity(n);
    let mut communities = Vec::with_capacity(n);
    for c in &tensor.matrices {
        efficiency.push(Some(global_efficiency(c, cfg.edge_weighting)?));
        match detect_communities(c, cfg.edge_weighting) {
            Ok(p) => {
                modularity_q.push(Some(modularity(c, &p, cfg.edge_weighting)?));
                communities.push(p.iter().max().map(|m| m + 1));
            }
            Err(DmncError::NoPositiveEdges) => {
                modularity_q.push(None);
                communities.push(None);
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(Metrics {
        similarity_jump,
        mahalanobis,
        structural_volatility,
        efficiency,
        modularity: modularity_q,
        communities,
        baseline_windows,
    })
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    era: &'a str,
    window_length: usize,
    labels: &'a [String],
    delta: usize,
    stride: usize,
    window_fn: String,
    smoothing: String,
    edge_weighting: &'static str,
    n_windows: usize,
    tau: usize,
    baseline_windows: usize,
    windows_with_constant_rows: Vec<usize>,
    conventions: Conventions,
}

#[derive(Debug, Serialize)]
struct Conventions {
    timestamp: &'static str,
    correlation: &'static str,
    constant_rows: &'static str,
    structural_volatility: &'static str,
    mahalanobis: &'static str,
    similarity_jump: &'static str,
}

const CONVENTIONS: Conventions = Conventions {
    timestamp: "date of the last activation sample in the window",
    correlation: "weighted Pearson; weights normalized to sum 1, population moments",
    constant_rows: "rows and columns of a constant component are empty (missing) cells",
    structural_volatility: "mean over all K^2 entries of the population variance across the trailing tau matrices",
    mahalanobis: "baseline sample covariance (n - 1) plus 1e-3 * trace / dim on the diagonal",
    similarity_jump: "1 - cosine similarity of consecutive upper-triangle vectors; first window missing",
};

pub fn pair_labels(labels: &[String]) -> Vec<String> {
    ConnectivityVector::pairs(labels.len())
        .into_iter()
        .map(|(i, j)| format!("{}:{}", labels[i], labels[j]))
        .collect()
}

fn write_era(cfg: &RunConfig, layout: &Layout, w: usize, era: &str, tensor: &DmncTensor, m: &Metrics) -> Result<()> {
    let dir = layout.dmnc_era(w, era);
    let pairs = ConnectivityVector::pairs(tensor.k());
    let mut header = vec!["timestamp".to_string(), "start".to_string()];
    header.extend(pair_labels(&tensor.labels));
    let rows: Vec<Vec<String>> = tensor
        .matrices
        .iter()
        .enumerate()
        .map(|(t, c)| {
            let mut row = vec![tensor.timestamps[t].to_string(), tensor.start_indices[t].to_string()];
            row.extend(pairs.iter().map(|&(i, j)| fmt_f64(c[(i, j)])));
            row
        })
        .collect();
    io::write_table(
        &dir.join("tensor.csv"),
        &[("k", tensor.k().to_string())],
        &header,
        &rows,
    )?;

    let header = [
        "timestamp",
        "similarity_jump",
        "mahalanobis",
        "structural_volatility",
        "efficiency",
        "modularity",
        "communities",
    ]
    .map(String::from);
    let rows: Vec<Vec<String>> = (0..tensor.len())
        .map(|t| {
            vec![
                tensor.timestamps[t].to_string(),
                fmt_opt(m.similarity_jump[t]),
                fmt_opt(m.mahalanobis[t]),
                fmt_opt(m.structural_volatility[t]),
                fmt_opt(m.efficiency[t]),
                fmt_opt(m.modularity[t]),
                m.communities[t].map_or_else(String::new, |c| c.to_string()),
            ]
        })
        .collect();
    io::write_table(&dir.join("metrics.csv"), &[], &header, &rows)?;

    let manifest = Manifest {
        era,
        window_length: w,
        labels: &tensor.labels,
        delta: tensor.delta,
        stride: tensor.stride,
        window_fn: tensor.window_fn.label(),
        smoothing: smoothing_label(cfg.smoothing),
        edge_weighting: weighting_label(cfg.edge_weighting),
        n_windows: tensor.len(),
        tau: cfg.tau,
        baseline_windows: m.baseline_windows,
        windows_with_constant_rows: (0..tensor.len())
            .filter(|&t| !tensor.zero_variance_rows[t].is_empty())
            .collect(),
        conventions: CONVENTIONS,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Compute(e.to_string()))?;
    let path = dir.join("manifest.json");
    std::fs::write(&path, json + "\n").map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(())
}

/// Tensor and metrics for one era's activations.
pub fn era_tensor(cfg: &RunConfig, layout: &Layout, w: usize, era: &str) -> Result<(DmncTensor, Metrics)> {
    let mut a = io::read_activations(&layout.gica_era(Universe::Stocks, w, era).join("activations.csv"))?;
    if let Some(s) = cfg.smoothing {
        a = smooth_activations(&a, s)?;
    }
    let tensor = build_dmnc(&a, cfg.delta, cfg.dmnc_stride, cfg.window_fn)?;
    let m = metrics(cfg, &tensor)?;
    Ok((tensor, m))
}

pub fn run(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    for &w in &cfg.windows {
        for era in &cfg.eras {
            let (tensor, m) = era_tensor(cfg, layout, w, &era.label)?;
            write_era(cfg, layout, w, &era.label, &tensor, &m)?;
            log::info!("dmnc w={w} {}: {} windows", era.label, tensor.len());
        }
    }
    Ok(())
}
