//! Trainers for the three model families, their serialized form, and the
//! generalization-bound calculator.

mod bound;
mod global;
mod local;
mod multitask;

pub use bound::robustness_bound;
pub use global::{fit_scml_global, GlobalModel};
pub use local::{dist_local, embed_tilde_dataset, fit_scml_local, fit_scml_local_with_embedding, local_weights, LocalModel};
pub use multitask::{fit_mt_scml, fit_mt_scml_union, MultiTaskModel, TaskData};

use serde::{Deserialize, Serialize};

use crate::dataset::Standardizer;
use crate::embed::PcaModel;
use crate::error::Result;

/// Preprocessing fitted on the training split, stored so a saved model can
/// score raw data.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Preprocessing {
    pub standardizer: Option<Standardizer>,
    pub pca: Option<PcaModel>,
}

impl Preprocessing {
    pub fn apply(&self, ds: &crate::dataset::Dataset) -> Result<crate::dataset::Dataset> {
        let mut out = ds.clone();
        if let Some(s) = &self.standardizer {
            out = s.apply(&out)?;
        }
        if let Some(p) = &self.pca {
            out = p.transform_dataset(&out)?;
        }
        Ok(out)
    }
}

/// Any trained model, tagged by kind in its JSON form.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Model {
    Global(GlobalModel),
    Multitask(MultiTaskModel),
    Local(LocalModel),
}

/// On-disk model document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(flatten)]
    pub model: Model,
    #[serde(default)]
    pub preprocessing: Preprocessing,
}

impl ModelFile {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(f)?)
    }
}
