//! Output tree under `<outdir>/<stage>/`.

use std::path::{Path, PathBuf};

/// Which asset universe a product belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Universe {
    Stocks,
    Etfs,
}

impl Universe {
    fn sub(self, base: PathBuf) -> PathBuf {
        match self {
            Universe::Stocks => base,
            Universe::Etfs => base.join("etf"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Layout {
            root: root.to_path_buf(),
        }
    }

    pub fn stage(&self, stage: &str) -> PathBuf {
        self.root.join(stage)
    }

    pub fn prices(&self, u: Universe) -> PathBuf {
        u.sub(self.stage("features")).join("prices.csv")
    }

    pub fn returns(&self, u: Universe) -> PathBuf {
        u.sub(self.stage("features")).join("returns.csv")
    }

    pub fn panel(&self, u: Universe, w: usize) -> PathBuf {
        u.sub(self.stage("features")).join(format!("panel_w{w}.csv"))
    }

    pub fn gica(&self, u: Universe, w: usize) -> PathBuf {
        u.sub(self.stage("gica")).join(format!("w{w}"))
    }

    pub fn gica_era(&self, u: Universe, w: usize, era: &str) -> PathBuf {
        self.gica(u, w).join(era)
    }

    pub fn factors(&self, u: Universe, w: usize) -> PathBuf {
        u.sub(self.stage("factors")).join(format!("w{w}"))
    }

    pub fn dmnc_era(&self, w: usize, era: &str) -> PathBuf {
        self.stage("dmnc").join(format!("w{w}")).join(era)
    }

    pub fn regimes(&self, w: usize) -> PathBuf {
        self.stage("regimes").join(format!("w{w}"))
    }

    pub fn report(&self) -> PathBuf {
        self.stage("report")
    }
}
