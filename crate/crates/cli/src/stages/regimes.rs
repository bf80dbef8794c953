use chrono::NaiveDate;
use connectome_core::dmnc::{cluster_regimes, pca_embed, Embedding, RegimeLabeling};
use connectome_core::io::{self, fmt_f64};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::layout::Layout;
use crate::seeds;

/// Fully defined connectivity vectors of every era, in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorSet {
    pub eras: Vec<String>,
    pub timestamps: Vec<NaiveDate>,
    pub vectors: Vec<Vec<f64>>,
    pub pair_labels: Vec<String>,
    pub skipped: usize,
}

pub fn load_vectors(cfg: &RunConfig, layout: &Layout, w: usize) -> Result<VectorSet> {
    let mut set = VectorSet {
        eras: Vec::new(),
        timestamps: Vec::new(),
        vectors: Vec::new(),
        pair_labels: Vec::new(),
        skipped: 0,
    };
    for era in &cfg.eras {
        let t = io::read_table(&layout.dmnc_era(w, &era.label).join("tensor.csv"))?;
        let pairs = t.header.get(2..).unwrap_or_default().to_vec();
        if set.pair_labels.is_empty() {
            set.pair_labels = pairs;
        } else if set.pair_labels != pairs {
            return Err(CliError::Input(format!(
                "{}: components differ between eras",
                t.path.display()
            )));
        }
        for r in 0..t.rows.len() {
            let v: Vec<f64> = (2..t.header.len())
                .map(|c| t.float(r, c))
                .collect::<std::result::Result<_, _>>()?;
            if v.iter().any(|x| x.is_nan()) {
                set.skipped += 1;
                continue;
            }
            set.eras.push(era.label.clone());
            set.timestamps.push(t.date(r, 0)?);
            set.vectors.push(v);
        }
    }
    Ok(set)
}

pub fn fit(cfg: &RunConfig, set: &VectorSet, w: usize) -> Result<(RegimeLabeling, Embedding)> {
    let seed = seeds::derive(cfg.seed, &format!("regimes/w{w}"));
    let labeling = cluster_regimes(&set.vectors, cfg.regimes, seed, cfg.restarts)?;
    let dims = set.pair_labels.len().min(2);
    let embedding = pca_embed(&set.vectors, dims)?;
    Ok((labeling, embedding))
}

pub fn run(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    for &w in &cfg.windows {
        let set = load_vectors(cfg, layout, w)?;
        let (labeling, embedding) = fit(cfg, &set, w)?;
        let dir = layout.regimes(w);
        let dims = embedding.explained_variance.len();
        let mut header = vec!["era".to_string(), "timestamp".to_string(), "regime".to_string()];
        header.extend((1..=dims).map(|d| format!("pc{d}")));
        let rows: Vec<Vec<String>> = (0..set.vectors.len())
            .map(|i| {
                let mut row = vec![
                    set.eras[i].clone(),
                    set.timestamps[i].to_string(),
                    labeling.labels[i].to_string(),
                ];
                row.extend(embedding.coords[i].iter().map(|v| fmt_f64(*v)));
                row
            })
            .collect();
        let meta = [
            ("k", labeling.k.to_string()),
            ("seed", labeling.seed.to_string()),
            ("inertia", fmt_f64(labeling.inertia)),
            ("skipped_windows", set.skipped.to_string()),
            (
                "explained_variance",
                embedding
                    .explained_variance
                    .iter()
                    .map(|v| fmt_f64(*v))
                    .collect::<Vec<_>>()
                    .join(" "),
            ),
        ];
        io::write_table(&dir.join("labels.csv"), &meta, &header, &rows)?;

        let mut header = vec!["regime".to_string()];
        header.extend(set.pair_labels.iter().cloned());
        let rows: Vec<Vec<String>> = labeling
            .centroids
            .iter()
            .enumerate()
            .map(|(c, centroid)| {
                let mut row = vec![c.to_string()];
                row.extend(centroid.iter().map(|v| fmt_f64(*v)));
                row
            })
            .collect();
        io::write_table(&dir.join("centroids.csv"), &[], &header, &rows)?;
        log::info!(
            "regimes w={w}: {} windows, inertia {}",
            set.vectors.len(),
            labeling.inertia
        );
    }
    Ok(())
}
