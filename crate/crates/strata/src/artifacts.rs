//! Locations of every artifact under the artifacts directory.

use std::path::{Path, PathBuf};

use strata_core::eval::Variant;

#[derive(Clone, Debug)]
pub struct Artifacts {
    root: PathBuf,
}

impl Artifacts {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn source(&self) -> PathBuf {
        self.root.join("source.json")
    }

    pub fn target(&self) -> PathBuf {
        self.root.join("target.json")
    }

    pub fn encoder(&self) -> PathBuf {
        self.root.join("encoder.ckpt")
    }

    pub fn encoder_sidecar(&self) -> PathBuf {
        self.root.join("encoder.json")
    }

    pub fn encoder_loss(&self) -> PathBuf {
        self.root.join("encoder_loss.csv")
    }

    pub fn kb(&self) -> PathBuf {
        self.root.join("kb")
    }

    pub fn tokens_train(&self) -> PathBuf {
        self.root.join("tokens").join("train.json")
    }

    pub fn tokens_test(&self) -> PathBuf {
        self.root.join("tokens").join("test.json")
    }

    pub fn forecast(&self, v: Variant) -> PathBuf {
        self.root.join("forecasts").join(format!("{}.json", v.name()))
    }

    pub fn incidents(&self, v: Variant) -> PathBuf {
        self.root.join("forecasts").join(format!("{}_incidents.jsonl", v.name()))
    }

    pub fn sft(&self) -> PathBuf {
        self.root.join("sft.jsonl")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn heatmap(&self) -> PathBuf {
        self.root.join("heatmap.csv")
    }

    /// Resolved configuration written by `command`.
    pub fn resolved_config(&self, command: &str) -> PathBuf {
        self.root.join("configs").join(format!("{command}.toml"))
    }
}
