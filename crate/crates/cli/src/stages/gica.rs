use std::ops::Range;

use connectome_core::group_ica::{
    build_pseudo_subjects, stack_activations, ActivationMatrix, ComponentMap, GroupIcaParams,
};
use connectome_core::io::{self, fmt_f64};
use connectome_core::market_data::{segment_eras, AssetPanel};
use connectome_core::registry::{
    aggregate_era, align_to, canonical_polarity, cross_era_similarity, icasso_consensus, occurrence_rate,
    CrossEraSimilarity, EraAggregate, IcassoParams,
};
use connectome_core::stats;

use crate::config::RunConfig;
use crate::error::Result;
use crate::layout::{Layout, Universe};
use crate::seeds;

/// One consensus fit inside an era, scored against the final era map.
#[derive(Debug, Clone, PartialEq)]
pub struct FitRecord {
    pub windows: Range<usize>,
    pub converged_runs: usize,
    pub imbalanced: bool,
    /// Stability per final-map component.
    pub iq: Vec<f64>,
    /// Matched `|corr|` with the final-map component.
    pub abs_corr: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EraFit {
    pub label: String,
    /// Era mean map, ordered like the first era's map and polarity-labelled.
    pub map: ComponentMap,
    pub iqr_iq: Vec<f64>,
    pub fits: Vec<FitRecord>,
    pub activations: ActivationMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowFit {
    pub w: usize,
    pub eras: Vec<EraFit>,
    /// Present with two or more eras.
    pub cross_era: Option<CrossEraSimilarity>,
}

/// Consecutive blocks of `fit_block` windows; a short tail joins the
/// previous block. `0` means a single block.
pub fn fit_blocks(n_windows: usize, fit_block: usize) -> Vec<Range<usize>> {
    if fit_block == 0 || fit_block >= n_windows {
        return vec![0..n_windows];
    }
    let mut blocks: Vec<Range<usize>> = (0..n_windows)
        .step_by(fit_block)
        .map(|s| s..(s + fit_block).min(n_windows))
        .collect();
    if blocks.len() > 1 && blocks[blocks.len() - 1].len() < fit_block {
        let tail = blocks.pop().expect("non-empty");
        blocks.last_mut().expect("non-empty").end = tail.end;
    }
    blocks
}

struct Polarity {
    on: Vec<String>,
    off: Option<Vec<String>>,
}

impl Polarity {
    fn for_universe(cfg: &RunConfig, u: Universe, assets: &[String]) -> Self {
        match u {
            Universe::Stocks if !cfg.risk_on_assets.is_empty() => Polarity {
                on: cfg.risk_on_assets.clone(),
                off: (!cfg.risk_off_assets.is_empty()).then(|| cfg.risk_off_assets.clone()),
            },
            _ => Polarity {
                on: assets.to_vec(),
                off: None,
            },
        }
    }

    fn apply(&self, map: &ComponentMap) -> Result<ComponentMap> {
        Ok(canonical_polarity(map, &self.on, self.off.as_deref())?)
    }
}

fn tag(u: Universe) -> &'static str {
    match u {
        Universe::Stocks => "stocks",
        Universe::Etfs => "etf",
    }
}

/// Group ICA with consensus for every era of one feature panel.
pub fn fit_window(cfg: &RunConfig, panel: &AssetPanel, w: usize, u: Universe) -> Result<WindowFit> {
    let polarity = Polarity::for_universe(cfg, u, &panel.assets);
    let group = GroupIcaParams {
        subject_rank: cfg.subject_rank(panel.n_assets(), w),
        group_rank: cfg.group_rank(),
        k: cfg.k,
        tol: cfg.tol,
        max_iter: cfg.max_iter,
    };
    let eras = segment_eras(panel, &cfg.eras)?;
    let mut stacks = Vec::new();
    let mut aggregates: Vec<EraAggregate> = Vec::new();
    let mut fit_maps: Vec<Vec<(Range<usize>, usize, bool, ComponentMap)>> = Vec::new();
    for (label, era_panel) in &eras {
        let stack = build_pseudo_subjects(era_panel, w, cfg.stride)?;
        let mut maps = Vec::new();
        for (b, block) in fit_blocks(stack.len(), cfg.fit_block).into_iter().enumerate() {
            let sub = stack.select(&block.clone().collect::<Vec<_>>());
            let params = IcassoParams {
                runs: cfg.runs,
                scheme: cfg.resample,
                group,
                seed: seeds::derive(cfg.seed, &format!("gica/{}/w{w}/{label}/fit{b}", tag(u))),
            };
            let consensus = icasso_consensus(&sub, &params)?;
            let map = polarity.apply(&consensus.map)?;
            log::info!(
                "gica {} w={w} {label} fit {b}: windows {block:?}, I_q {:?}",
                tag(u),
                map.iq
            );
            maps.push((block, consensus.converged_runs, consensus.imbalanced, map));
        }
        let reference = maps[0].3.clone();
        let aligned: Vec<ComponentMap> = maps
            .iter()
            .map(|m| Ok(align_to(&reference, &m.3)?.0))
            .collect::<Result<_>>()?;
        aggregates.push(aggregate_era(&aligned, label)?);
        fit_maps.push(maps);
        stacks.push(stack);
    }

    // Put every era in the first era's component order before labelling roles.
    let mut finals: Vec<ComponentMap> = Vec::with_capacity(aggregates.len());
    for agg in &aggregates {
        let map = match finals.first() {
            None => polarity.apply(&agg.mean_map)?,
            Some(first) => polarity.apply(&align_to(first, &agg.mean_map)?.0)?,
        };
        finals.push(map);
    }

    let mut era_fits = Vec::with_capacity(finals.len());
    for (e, mut map) in finals.into_iter().enumerate() {
        let fits: Vec<FitRecord> = fit_maps[e]
            .iter()
            .map(|(block, converged_runs, imbalanced, fm)| {
                let (aligned, m) = align_to(&map, fm)?;
                Ok(FitRecord {
                    windows: block.clone(),
                    converged_runs: *converged_runs,
                    imbalanced: *imbalanced,
                    iq: aligned.iq,
                    abs_corr: m.matched_abs_corr,
                })
            })
            .collect::<Result<_>>()?;
        let series = |i: usize| -> Vec<f64> { fits.iter().map(|f| f.iq[i]).collect() };
        map.iq = (0..map.k()).map(|i| stats::median(&series(i))).collect();
        let iqr_iq = (0..map.k()).map(|i| stats::iqr(&series(i))).collect();
        let activations = stack_activations(&map, &stacks[e])?;
        era_fits.push(EraFit {
            label: aggregates[e].era_label.clone(),
            map,
            iqr_iq,
            fits,
            activations,
        });
    }

    let cross_era = if era_fits.len() >= 2 {
        let aggs: Vec<EraAggregate> = era_fits
            .iter()
            .zip(&aggregates)
            .map(|(f, a)| EraAggregate {
                mean_map: f.map.clone(),
                ..a.clone()
            })
            .collect();
        Some(cross_era_similarity(&aggs)?)
    } else {
        None
    };
    Ok(WindowFit {
        w,
        eras: era_fits,
        cross_era,
    })
}

fn role(map: &ComponentMap, i: usize) -> &'static str {
    if map.risk_on == Some(i) {
        "risk_on"
    } else if map.risk_off == Some(i) {
        "risk_off"
    } else {
        ""
    }
}

pub fn write(cfg: &RunConfig, layout: &Layout, u: Universe, fit: &WindowFit) -> Result<()> {
    let w = fit.w;
    let mut occurrence = Vec::new();
    for era in &fit.eras {
        let dir = layout.gica_era(u, w, &era.label);
        io::write_component_map(&dir.join("map.csv"), &era.map)?;
        io::write_activations(&dir.join("activations.csv"), &era.activations)?;
        let mut rows = Vec::new();
        for (b, f) in era.fits.iter().enumerate() {
            for i in 0..era.map.k() {
                rows.push(vec![
                    b.to_string(),
                    f.windows.start.to_string(),
                    f.windows.len().to_string(),
                    f.converged_runs.to_string(),
                    f.imbalanced.to_string(),
                    era.map.labels[i].clone(),
                    fmt_f64(f.iq[i]),
                    fmt_f64(f.abs_corr[i]),
                ]);
            }
        }
        let header = [
            "fit",
            "first_window",
            "n_windows",
            "converged_runs",
            "imbalanced",
            "component",
            "iq",
            "abs_corr",
        ];
        io::write_table(&dir.join("fits.csv"), &[], &strings(&header), &rows)?;

        for i in 0..era.map.k() {
            let series: Vec<f64> = era.fits.iter().map(|f| f.iq[i]).collect();
            occurrence.push(vec![
                era.label.clone(),
                era.map.labels[i].clone(),
                role(&era.map, i).to_string(),
                fmt_f64(era.map.iq[i]),
                fmt_f64(era.iqr_iq[i]),
                fmt_f64(occurrence_rate(&series, cfg.iq_threshold)?),
                series.len().to_string(),
            ]);
        }
    }
    let header = [
        "era",
        "component",
        "role",
        "median_iq",
        "iqr_iq",
        "occurrence_rate",
        "n_fits",
    ];
    io::write_table(
        &layout.gica(u, w).join("occurrence.csv"),
        &[("iq_threshold", fmt_f64(cfg.iq_threshold))],
        &strings(&header),
        &occurrence,
    )?;

    if let Some(cross) = &fit.cross_era {
        write_cross_era(&layout.gica(u, w), cross, &fit.eras[0].map.labels)?;
    }
    Ok(())
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn write_cross_era(dir: &std::path::Path, cross: &CrossEraSimilarity, labels: &[String]) -> Result<()> {
    let mut header = vec!["era".to_string()];
    header.extend(cross.labels.iter().cloned());
    let rows: Vec<Vec<String>> = cross
        .labels
        .iter()
        .enumerate()
        .map(|(a, l)| {
            let mut row = vec![l.clone()];
            row.extend(cross.mean_abs_corr.row(a).iter().map(|v| fmt_f64(*v)));
            row
        })
        .collect();
    io::write_table(&dir.join("cross_era.csv"), &[], &header, &rows)?;

    let mut rows = Vec::new();
    for p in &cross.pairs {
        for (i, &j) in p.result.permutation.iter().enumerate() {
            rows.push(vec![
                cross.labels[p.a].clone(),
                cross.labels[p.b].clone(),
                labels[i].clone(),
                labels[j].clone(),
                fmt_f64(p.result.matched_abs_corr[i]),
            ]);
        }
    }
    let header = strings(&["era_a", "era_b", "component_a", "component_b", "abs_corr"]);
    io::write_table(&dir.join("cross_era_pairs.csv"), &[], &header, &rows)?;
    Ok(())
}

pub fn run(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let mut universes = vec![Universe::Stocks];
    if cfg.etf_input.is_some() {
        universes.push(Universe::Etfs);
    }
    for u in universes {
        for &w in &cfg.windows {
            let panel = io::read_panel(&layout.panel(u, w))?;
            let fit = fit_window(cfg, &panel, w, u)?;
            write(cfg, layout, u, &fit)?;
        }
    }
    Ok(())
}
