//! Flat `key = value` run configuration.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use connectome_core::dmnc::{EdgeWeighting, Smoothing, WindowFn, DEFAULT_DELTA, DEFAULT_REGIMES};
use connectome_core::factors::DEFAULT_RHO_WINDOW;
use connectome_core::ica::{DEFAULT_MAX_ITER, DEFAULT_TOL};
use connectome_core::market_data::{default_eras, validate_eras, EraSpec, FeatureKind};
use connectome_core::registry::{ResampleScheme, OCCURRENCE_THRESHOLD};
use connectome_core::synth::{BarScenario, SourceDist};

use crate::error::CliError;

pub const SEED_ENV: &str = "CONNECTOME_SEED";

/// Every recognised key with its default, as shown in `--help`.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("input", "", "bars CSV (date,ticker,adj_close,close,volume)"),
    ("etf_input", "", "optional ETF bars CSV for the cross-brain comparison"),
    ("etf_weights", "", "optional ETF-to-stock weight CSV (etf,<stocks...>)"),
    ("outdir", "out", "output root; stage products go to <outdir>/<stage>/"),
    ("feature", "logret", "logret | vwap | raw_logret"),
    (
        "windows",
        "60,90,120",
        "feature/window lengths w (paper: w in {60, 90, 120})",
    ),
    ("stride", "1", "pseudo-subject stride (paper: 1)"),
    ("k", "6", "components per fit (paper: K_ICA = 6)"),
    ("subject_rank", "0", "per-window PCA rank; 0 = min(2K, assets, w - 1)"),
    ("group_rank", "0", "group PCA rank; 0 = K"),
    ("runs", "50", "ICA runs per consensus fit (paper: R_runs = 50)"),
    ("resample", "seed_only", "seed_only | window_bootstrap"),
    ("fit_block", "0", "pseudo-subjects per consensus fit; 0 = whole era"),
    ("tol", "1e-6", "fixed-point convergence tolerance"),
    ("max_iter", "4000", "fixed-point iteration cap"),
    ("eras", "paper S1-S5", "label:start:end,... with ISO dates"),
    (
        "risk_on_assets",
        "",
        "reference assets for Risk-On polarity; empty = all",
    ),
    (
        "risk_off_assets",
        "",
        "defensive assets for Risk-Off; empty = non-reference assets",
    ),
    ("rho_window", "252", "risk-shift rolling window (paper: 252 days)"),
    ("iq_threshold", "0.9", "occurrence-rate threshold on I_q (paper: 0.9)"),
    ("delta", "45", "dMNC window width in activation samples"),
    ("dmnc_stride", "1", "dMNC window stride"),
    ("window_fn", "rect", "rect | gaussian(<sigma>)"),
    ("smoothing", "none", "none | ma(<n>) | exp(<alpha>) | zscore"),
    ("tau", "20", "structural-volatility trailing window in matrices"),
    ("baseline", "0", "leading dMNC windows used as baseline; 0 = auto"),
    ("edge_weighting", "positive", "positive | absolute"),
    ("regimes", "4", "k-means clusters"),
    ("restarts", "10", "k-means restarts"),
    ("seed", "42", "root seed (env CONNECTOME_SEED overrides)"),
    ("threads", "0", "worker threads; 0 = all cores"),
    ("synth_assets", "20", "synthetic assets"),
    ("synth_sources", "4", "synthetic planted modules"),
    ("synth_days", "1500", "synthetic trading days"),
    ("synth_dist", "laplace", "laplace | uniform | signed_square | gaussian"),
    ("synth_hold", "20", "days each source draw is held"),
    ("synth_scale", "0.01", "daily return scale per unit of source"),
    ("synth_cross", "0.1", "cross-loading scale of the sector mixing"),
    ("synth_noise", "0.0005", "idiosyncratic daily return noise"),
    ("synth_start", "2005-01-03", "first synthetic date"),
];

pub fn defaults_help() -> String {
    let mut s = String::from("Config keys (default in brackets):\n");
    for (k, d, h) in KEYS {
        s.push_str(&format!("  {k:<16} [{d}] {h}\n"));
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub etf_input: Option<PathBuf>,
    pub etf_weights: Option<PathBuf>,
    pub outdir: PathBuf,
    pub feature: FeatureKind,
    pub windows: Vec<usize>,
    pub stride: usize,
    pub k: usize,
    pub subject_rank: usize,
    pub group_rank: usize,
    pub runs: usize,
    pub resample: ResampleScheme,
    pub fit_block: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub eras: Vec<EraSpec>,
    pub risk_on_assets: Vec<String>,
    pub risk_off_assets: Vec<String>,
    pub rho_window: usize,
    pub iq_threshold: f64,
    pub delta: usize,
    pub dmnc_stride: usize,
    pub window_fn: WindowFn,
    pub smoothing: Option<Smoothing>,
    pub tau: usize,
    pub baseline: usize,
    pub edge_weighting: EdgeWeighting,
    pub regimes: usize,
    pub restarts: usize,
    pub seed: u64,
    pub threads: usize,
    pub synth: BarScenario,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            etf_input: None,
            etf_weights: None,
            outdir: PathBuf::from("out"),
            feature: FeatureKind::LogRet,
            windows: vec![60, 90, 120],
            stride: 1,
            k: 6,
            subject_rank: 0,
            group_rank: 0,
            runs: 50,
            resample: ResampleScheme::SeedOnly,
            fit_block: 0,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            eras: default_eras(),
            risk_on_assets: Vec::new(),
            risk_off_assets: Vec::new(),
            rho_window: DEFAULT_RHO_WINDOW,
            iq_threshold: OCCURRENCE_THRESHOLD,
            delta: DEFAULT_DELTA,
            dmnc_stride: 1,
            window_fn: WindowFn::Rect,
            smoothing: None,
            tau: 20,
            baseline: 0,
            edge_weighting: EdgeWeighting::Positive,
            regimes: DEFAULT_REGIMES,
            restarts: 10,
            seed: 42,
            threads: 0,
            synth: BarScenario::default(),
        }
    }
}

fn bad(key: &str, value: &str, expected: &str) -> CliError {
    CliError::Config(format!("{key} = {value}: expected {expected}"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value.trim().parse().map_err(|_| bad(key, value, "a number"))
}

fn list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

fn path(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn date(key: &str, value: &str) -> Result<NaiveDate, CliError> {
    NaiveDate::parse_from_str(value.trim(), "%Y-%m-%d").map_err(|_| bad(key, value, "YYYY-MM-DD"))
}

pub fn parse_eras(value: &str) -> Result<Vec<EraSpec>, CliError> {
    list(value)
        .iter()
        .map(|item| {
            let parts: Vec<&str> = item.split(':').collect();
            if parts.len() != 3 {
                return Err(bad("eras", item, "label:start:end"));
            }
            Ok(EraSpec::new(parts[0], date("eras", parts[1])?, date("eras", parts[2])?))
        })
        .collect()
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        match key {
            "input" => self.input = path(v),
            "etf_input" => self.etf_input = path(v),
            "etf_weights" => self.etf_weights = path(v),
            "outdir" => self.outdir = path(v).ok_or_else(|| bad(key, v, "a directory"))?,
            "feature" => {
                self.feature = match v.to_ascii_lowercase().as_str() {
                    "logret" => FeatureKind::LogRet,
                    "vwap" => FeatureKind::Vwap,
                    "raw_logret" => FeatureKind::RawLogRet,
                    _ => return Err(bad(key, v, "logret | vwap | raw_logret")),
                }
            }
            "windows" => self.windows = list(v).iter().map(|w| num(key, w)).collect::<Result<_, _>>()?,
            "stride" => self.stride = num(key, v)?,
            "k" => self.k = num(key, v)?,
            "subject_rank" => self.subject_rank = num(key, v)?,
            "group_rank" => self.group_rank = num(key, v)?,
            "runs" => self.runs = num(key, v)?,
            "resample" => {
                self.resample = ResampleScheme::parse(v).ok_or_else(|| bad(key, v, "seed_only | window_bootstrap"))?
            }
            "fit_block" => self.fit_block = num(key, v)?,
            "tol" => self.tol = num(key, v)?,
            "max_iter" => self.max_iter = num(key, v)?,
            "eras" => self.eras = parse_eras(v)?,
            "risk_on_assets" => self.risk_on_assets = list(v),
            "risk_off_assets" => self.risk_off_assets = list(v),
            "rho_window" => self.rho_window = num(key, v)?,
            "iq_threshold" => self.iq_threshold = num(key, v)?,
            "delta" => self.delta = num(key, v)?,
            "dmnc_stride" => self.dmnc_stride = num(key, v)?,
            "window_fn" => {
                self.window_fn = WindowFn::parse(v).ok_or_else(|| bad(key, v, "rect | gaussian(<sigma>)"))?
            }
            "smoothing" => {
                self.smoothing =
                    Smoothing::parse(v).ok_or_else(|| bad(key, v, "none | ma(<n>) | exp(<alpha>) | zscore"))?
            }
            "tau" => self.tau = num(key, v)?,
            "baseline" => self.baseline = num(key, v)?,
            "edge_weighting" => {
                self.edge_weighting = match v.to_ascii_lowercase().as_str() {
                    "positive" => EdgeWeighting::Positive,
                    "absolute" => EdgeWeighting::Absolute,
                    _ => return Err(bad(key, v, "positive | absolute")),
                }
            }
            "regimes" => self.regimes = num(key, v)?,
            "restarts" => self.restarts = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "threads" => self.threads = num(key, v)?,
            "synth_assets" => self.synth.n_assets = num(key, v)?,
            "synth_sources" => self.synth.n_sources = num(key, v)?,
            "synth_days" => self.synth.n_days = num(key, v)?,
            "synth_dist" => {
                self.synth.dist =
                    SourceDist::parse(v).ok_or_else(|| bad(key, v, "laplace | uniform | signed_square | gaussian"))?
            }
            "synth_hold" => self.synth.hold = num(key, v)?,
            "synth_scale" => self.synth.return_scale = num(key, v)?,
            "synth_cross" => self.synth.cross_loading = num(key, v)?,
            "synth_noise" => self.synth.idio_noise = num(key, v)?,
            "synth_start" => self.synth.start = date(key, v)?,
            _ => return Err(CliError::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Apply `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("{origin}:{}: expected key = value", n + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| CliError::Config(format!("{origin}:{}: {}", n + 1, e.message())))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text, &path.display().to_string())?;
        Ok(cfg)
    }

    /// Apply `--set key=value` overrides, then the seed environment variable.
    pub fn with_overrides(mut self, sets: &[String], env_seed: Option<String>) -> Result<Self, CliError> {
        for s in sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set {s}: expected key=value")))?;
            self.set(k.trim(), v)?;
        }
        if let Some(seed) = env_seed {
            self.seed = num(SEED_ENV, &seed)?;
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |m: String| Err(CliError::Config(m));
        if self.windows.is_empty() || self.windows.iter().any(|w| *w < 3) {
            return fail("windows must list lengths of at least 3".into());
        }
        let mut sorted = self.windows.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.windows.len() {
            return fail("windows must be distinct".into());
        }
        if self.k == 0 {
            return fail("k must be positive".into());
        }
        if self.group_rank != 0 && self.group_rank < self.k {
            return fail(format!("K = {} exceeds group_rank = {}", self.k, self.group_rank));
        }
        if self.runs < 2 {
            return fail("runs must be at least 2".into());
        }
        if self.stride == 0 || self.dmnc_stride == 0 {
            return fail("strides must be positive".into());
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return fail("tol must be positive and max_iter at least 1".into());
        }
        if self.rho_window < 2 || self.delta < 3 || self.tau < 2 {
            return fail("rho_window >= 2, delta >= 3 and tau >= 2 are required".into());
        }
        if !(0.0..=1.0).contains(&self.iq_threshold) {
            return fail("iq_threshold must lie in [0, 1]".into());
        }
        if self.regimes == 0 || self.restarts == 0 {
            return fail("regimes and restarts must be positive".into());
        }
        validate_eras(&self.eras).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn group_rank(&self) -> usize {
        if self.group_rank == 0 {
            self.k
        } else {
            self.group_rank
        }
    }

    pub fn subject_rank(&self, n_assets: usize, w: usize) -> usize {
        if self.subject_rank == 0 {
            (2 * self.k).max(self.group_rank()).min(n_assets).min(w - 1)
        } else {
            self.subject_rank
        }
    }

    /// Synthetic scenario with the root seed applied.
    pub fn synth_scenario(&self) -> BarScenario {
        BarScenario {
            seed: self.seed,
            ..self.synth.clone()
        }
    }

    /// Resolved settings echoed into the report.
    pub fn describe(&self) -> Vec<(String, String)> {
        let join = |v: &[String]| v.join(",");
        vec![
            ("feature".into(), self.feature.as_str().into()),
            (
                "windows".into(),
                self.windows.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","),
            ),
            ("stride".into(), self.stride.to_string()),
            ("k".into(), self.k.to_string()),
            ("group_rank".into(), self.group_rank().to_string()),
            ("runs".into(), self.runs.to_string()),
            ("resample".into(), self.resample.as_str().into()),
            ("fit_block".into(), self.fit_block.to_string()),
            ("tol".into(), self.tol.to_string()),
            ("max_iter".into(), self.max_iter.to_string()),
            (
                "eras".into(),
                self.eras
                    .iter()
                    .map(|e| format!("{}:{}:{}", e.label, e.start, e.end))
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("risk_on_assets".into(), join(&self.risk_on_assets)),
            ("risk_off_assets".into(), join(&self.risk_off_assets)),
            ("rho_window".into(), self.rho_window.to_string()),
            ("iq_threshold".into(), self.iq_threshold.to_string()),
            ("delta".into(), self.delta.to_string()),
            ("dmnc_stride".into(), self.dmnc_stride.to_string()),
            ("window_fn".into(), self.window_fn.label()),
            ("tau".into(), self.tau.to_string()),
            ("regimes".into(), self.regimes.to_string()),
            ("restarts".into(), self.restarts.to_string()),
            ("seed".into(), self.seed.to_string()),
        ]
    }
}
