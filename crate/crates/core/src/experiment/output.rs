use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{Axis, ExperimentConfig};
use super::scan::SCAN_RIG;
use super::stages::{Stage, MAIN_RIG, SP_RIG, TRAINING_RIG};
use crate::adaptive::SecondaryPathModel;
use crate::control::PrenullResult;
use crate::error::{AncError, Result};
use crate::rng::derive_seed;
use crate::signal::SampleBuffer;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const PRENULL_FILE: &str = "prenull.toml";

pub fn model_file_name(axis: Axis) -> String {
    format!("sp_model_{}.toml", axis.name())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub axis: String,
    pub taps: usize,
    pub peak_tap: usize,
    pub mu_sp: f64,
    pub residual_ratio: f64,
    pub elevated_residual: bool,
}

impl ModelSummary {
    pub fn new(axis: Axis, m: &SecondaryPathModel) -> Self {
        Self {
            axis: axis.name().to_string(),
            taps: m.taps(),
            peak_tap: m.peak_tap(),
            mu_sp: m.mu_sp,
            residual_ratio: m.residual_ratio(),
            elevated_residual: m.elevated_residual,
        }
    }
}

/// Provenance record. Holds no timestamps or paths so identical runs give
/// identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub derived_seeds: BTreeMap<String, u64>,
    pub stages: Vec<Stage>,
    pub prenull: Option<PrenullResult>,
    pub models: Vec<ModelSummary>,
    pub files: Vec<String>,
}

/// Every child seed a run can draw from the master seed.
pub fn derived_seeds(master: u64) -> BTreeMap<String, u64> {
    let mut labels: Vec<String> = [SP_RIG, TRAINING_RIG, MAIN_RIG, SCAN_RIG].iter().map(|s| s.to_string()).collect();
    labels.extend(Axis::ALL.iter().map(|a| format!("sp-drive-{}", a.name())));
    labels
        .into_iter()
        .map(|l| {
            let s = derive_seed(master, &l);
            (l, s)
        })
        .collect()
}

/// Output directory that stamps provenance on every CSV and tracks what it wrote.
#[derive(Debug)]
pub struct RunDirectory {
    root: PathBuf,
    header: String,
    files: BTreeSet<String>,
    config_hash: String,
    seed: u64,
}

impl RunDirectory {
    /// Create `root` and write the effective config into it.
    pub fn create(root: &Path, config: &ExperimentConfig) -> Result<Self> {
        fs::create_dir_all(root)?;
        let config_hash = config.hash();
        let mut dir = Self {
            root: root.to_path_buf(),
            header: format!("# config_hash={config_hash} seed={}\n", config.seed),
            files: BTreeSet::new(),
            config_hash,
            seed: config.seed,
        };
        dir.write_text(CONFIG_FILE, &config.to_toml()?)?;
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&mut self, name: &str) -> Result<PathBuf> {
        let p = self.root.join(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        self.files.insert(name.to_string());
        Ok(p)
    }

    pub fn write_text(&mut self, name: &str, body: &str) -> Result<()> {
        let p = self.path(name)?;
        fs::write(p, body)?;
        Ok(())
    }

    /// CSV body prefixed with the provenance comment line.
    pub fn write_csv(&mut self, name: &str, body: &str) -> Result<()> {
        let text = format!("{}{body}", self.header);
        self.write_text(name, &text)
    }

    pub fn write_stream(&mut self, name: &str, buffer: &SampleBuffer) -> Result<()> {
        let p = self.path(name)?;
        buffer.write_binary(BufWriter::new(fs::File::create(p)?))
    }

    pub fn write_model(&mut self, axis: Axis, model: &SecondaryPathModel) -> Result<()> {
        self.write_text(&model_file_name(axis), &model.to_text())
    }

    pub fn write_prenull(&mut self, prenull: &PrenullResult) -> Result<()> {
        let text = toml::to_string(prenull).map_err(|e| AncError::Format(e.to_string()))?;
        self.write_text(PRENULL_FILE, &text)
    }

    /// Write the manifest last, listing every file written before it.
    pub fn finish(
        mut self,
        command: &str,
        stages: &[Stage],
        prenull: Option<&PrenullResult>,
        models: Option<&[SecondaryPathModel; 3]>,
    ) -> Result<Manifest> {
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            derived_seeds: derived_seeds(self.seed),
            stages: stages.to_vec(),
            prenull: prenull.cloned(),
            models: models
                .map(|m| Axis::ALL.iter().map(|a| ModelSummary::new(*a, &m[a.index()])).collect())
                .unwrap_or_default(),
            files: self.files.iter().cloned().collect(),
        };
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| AncError::Format(e.to_string()))?;
        self.write_text(MANIFEST_FILE, &(json + "\n"))?;
        Ok(manifest)
    }
}

pub fn load_prenull(path: &Path) -> Result<PrenullResult> {
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| AncError::Format(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_files_carry_provenance_and_manifest_lists_files() {
        let tmp = tempfile::tempdir().unwrap();
        let c = ExperimentConfig::default();
        let mut d = RunDirectory::create(tmp.path(), &c).unwrap();
        d.write_csv("a.csv", "x,y\n1,2\n").unwrap();
        d.write_stream("streams/s.ancb", &SampleBuffer::new(vec![1.0, 2.0], 10.0).unwrap())
            .unwrap();
        let m = d.finish("test", &[Stage::Raw], None, None).unwrap();
        let a = fs::read_to_string(tmp.path().join("a.csv")).unwrap();
        assert_eq!(a.lines().next().unwrap(), format!("# config_hash={} seed=1", c.hash()));
        assert_eq!(m.files, vec!["a.csv", "config.toml", "streams/s.ancb"]);
        let back = SampleBuffer::read_binary(fs::File::open(tmp.path().join("streams/s.ancb")).unwrap()).unwrap();
        assert_eq!(back.samples(), &[1.0, 2.0]);
        let on_disk: Manifest =
            serde_json::from_str(&fs::read_to_string(tmp.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(on_disk, m);
        assert_eq!(m.derived_seeds.len(), 7);
    }

    #[test]
    fn prenull_round_trips() {
        let tmp = tempfile::tempdir().unwrap();
        let mut d = RunDirectory::create(tmp.path(), &ExperimentConfig::default()).unwrap();
        let p = PrenullResult {
            offsets: [1.5, -2.25, 1e-7],
            reference_baseline_nt: [48000.0, 0.1, -3.0],
            residual_mean_nt: [0.01, 0.0, -0.02],
            settle_time_s: 1.2,
        };
        d.write_prenull(&p).unwrap();
        assert_eq!(load_prenull(&tmp.path().join(PRENULL_FILE)).unwrap(), p);
    }
}
