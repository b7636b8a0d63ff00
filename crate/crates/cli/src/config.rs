//! Run configuration: a TOML file whose values command-line flags override.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use xkalign::joint::JointConfig;
use xkalign::synth::{SynthSpec, ATTR_FILES, ILL_FILE, REL_FILES};

/// Input triple and ILL files. `dir` supplies default file names.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub dir: Option<PathBuf>,
    pub rel_triples_1: Option<PathBuf>,
    pub rel_triples_2: Option<PathBuf>,
    pub attr_triples_1: Option<PathBuf>,
    pub attr_triples_2: Option<PathBuf>,
    pub ent_ills: Option<PathBuf>,
}

/// Resolved input paths.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPaths {
    pub rel: [PathBuf; 2],
    pub attr: [PathBuf; 2],
    pub ills: PathBuf,
}

impl DataConfig {
    pub fn resolve(&self) -> anyhow::Result<DataPaths> {
        let pick = |explicit: &Option<PathBuf>, name: &str| -> anyhow::Result<PathBuf> {
            match (explicit, &self.dir) {
                (Some(p), _) => Ok(p.clone()),
                (None, Some(d)) => Ok(d.join(name)),
                (None, None) => bail!("no path for `{name}`: set data.dir or data.{}", name.to_lowercase()),
            }
        };
        Ok(DataPaths {
            rel: [pick(&self.rel_triples_1, REL_FILES[0])?, pick(&self.rel_triples_2, REL_FILES[1])?],
            attr: [pick(&self.attr_triples_1, ATTR_FILES[0])?, pick(&self.attr_triples_2, ATTR_FILES[1])?],
            ills: pick(&self.ent_ills, ILL_FILE)?,
        })
    }
}

impl DataPaths {
    pub fn check_exist(&self) -> anyhow::Result<()> {
        for p in self.rel.iter().chain(&self.attr).chain([&self.ills]) {
            if !p.is_file() {
                bail!("input file not found: {}", p.display());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Training share of the ILLs; the rest is split 1:10 into validation and
    /// test. Unset means the 4:1:10 split.
    pub train_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root seed; the ILL split and TransE seeds derive from it.
    pub rng_seed: u64,
    pub output_dir: PathBuf,
    pub eval_ks: Vec<usize>,
    pub data: DataConfig,
    /// Generate the input instead of reading files.
    pub synth: Option<SynthSpec>,
    pub split: SplitConfig,
    pub joint: JointConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            rng_seed: 0,
            output_dir: PathBuf::from("xkalign-out"),
            eval_ks: vec![1, 10, 50],
            data: DataConfig::default(),
            synth: None,
            split: SplitConfig::default(),
            joint: JointConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.joint.validate()?;
        if let Some(spec) = &self.synth {
            spec.validate()?;
        } else {
            self.data.resolve()?.check_exist()?;
        }
        if let Some(f) = self.split.train_fraction {
            if !(f > 0.0 && f < 1.0) {
                bail!("split.train_fraction = {f} outside (0, 1)");
            }
        }
        if self.eval_ks.is_empty() || self.eval_ks.contains(&0) {
            bail!("eval_ks must list positive cut-offs");
        }
        Ok(())
    }

    /// The TransE seed derived from the root seed.
    pub fn transe_seed(&self) -> u64 {
        self.rng_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1)
    }
}
