//! `key = value` run configuration with dotted sections, e.g.
//!
//! ```text
//! # desk-scale smoke run
//! model.preset = desk
//! model.hash_bits = 16
//! training.steps = 200
//! optimizer.learning_rate = 5e-4
//! paths.dataset = data/synth
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::loss::{LossConfig, LossNormalization, WeightScope};
use crate::model::ModelConfig;
use crate::optim::RmspropConfig;

/// Parsed `key = value` lines. Keys are tracked so unknown ones can be reported.
#[derive(Clone, Debug, Default)]
pub struct KvConfig {
    entries: BTreeMap<String, (String, usize)>,
    used: std::cell::RefCell<std::collections::BTreeSet<String>>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", i + 1)))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", i + 1)));
            }
            if entries.insert(key.to_string(), (value.trim().to_string(), i + 1)).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", i + 1)));
            }
        }
        Ok(Self {
            entries,
            used: Default::default(),
        })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        let v = self.entries.get(key).map(|(v, _)| v.as_str());
        if v.is_some() {
            self.used.borrow_mut().insert(key.to_string());
        }
        v
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| {
                Error::Config(format!("line {}: cannot parse `{key} = {v}`", self.entries[key].1))
            }),
        }
    }

    pub fn set<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.get(key)? {
            *slot = v;
        }
        Ok(())
    }

    /// Comma-separated list.
    pub fn set_list<T: FromStr>(&self, key: &str, slot: &mut Vec<T>) -> Result<()> {
        if let Some(v) = self.raw(key) {
            *slot = v
                .split(',')
                .map(|s| s.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Config(format!("line {}: cannot parse list `{key} = {v}`", self.entries[key].1)))?;
        }
        Ok(())
    }

    /// Keys that were never read.
    pub fn unused(&self) -> Vec<String> {
        let used = self.used.borrow();
        self.entries.keys().filter(|k| !used.contains(*k)).cloned().collect()
    }

    pub fn reject_unused(&self) -> Result<()> {
        let unused = self.unused();
        if unused.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("unknown keys: {}", unused.join(", "))))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// 0 disables periodic checkpoints; the final one is always written.
    pub checkpoint_every: usize,
    pub resize_to: usize,
    pub crop_to: usize,
    pub hflip_prob: f64,
    pub max_resample: usize,
}

impl TrainingConfig {
    /// Pre-crop resize keeping the 256 → 224 proportion.
    pub fn resize_for(crop: usize) -> usize {
        crop * 8 / 7
    }
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            batch_size: 32,
            seed: 1,
            checkpoint_every: 0,
            resize_to: 36,
            crop_to: 32,
            hflip_prob: 0.5,
            max_resample: 100,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PathsConfig {
    /// Directory holding `train.hhds`, `query.hhds` and `database.hhds`.
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Directory receiving `query.hhc` and `database.hhc` after training.
    pub codes: Option<PathBuf>,
    /// Evaluation report written after training.
    pub report: Option<PathBuf>,
    /// TSV loss log.
    pub log: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckConfig {
    pub batch_size: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            step: 1e-5,
            tolerance: 1e-4,
            seed: 7,
        }
    }
}

/// Post-training retrieval evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { k: 10 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optimizer: RmspropConfig,
    pub training: TrainingConfig,
    pub paths: PathsConfig,
    pub gradcheck: GradcheckConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::desk(),
            loss: LossConfig::default(),
            optimizer: RmspropConfig::default(),
            training: TrainingConfig::default(),
            paths: PathsConfig::default(),
            gradcheck: GradcheckConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.paths.dataset,
            &mut cfg.paths.checkpoint,
            &mut cfg.paths.codes,
            &mut cfg.paths.report,
            &mut cfg.paths.log,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let kv = KvConfig::parse(text)?;
        let mut cfg = Self {
            model: ModelConfig::from_kv(&kv, "model.")?,
            ..Self::default()
        };

        let l = &mut cfg.loss;
        kv.set("loss.alpha", &mut l.alpha)?;
        if let Some(scope) = kv.raw("loss.weighting") {
            l.scope = match scope {
                "batch" => WeightScope::Batch,
                "global" => WeightScope::Global,
                other => return Err(Error::Config(format!("loss.weighting must be batch|global, got `{other}`"))),
            };
        }
        if let Some(norm) = kv.raw("loss.normalization") {
            l.normalization = match norm {
                "mean" => LossNormalization::MeanOverPairs,
                "sum" => LossNormalization::Sum,
                other => return Err(Error::Config(format!("loss.normalization must be mean|sum, got `{other}`"))),
            };
        }

        let o = &mut cfg.optimizer;
        kv.set("optimizer.learning_rate", &mut o.learning_rate)?;
        kv.set("optimizer.decay", &mut o.decay)?;
        kv.set("optimizer.epsilon", &mut o.epsilon)?;
        kv.set("optimizer.weight_decay", &mut o.weight_decay)?;

        let t = &mut cfg.training;
        t.crop_to = cfg.model.image_size;
        t.resize_to = TrainingConfig::resize_for(cfg.model.image_size);
        kv.set("training.steps", &mut t.steps)?;
        kv.set("training.batch_size", &mut t.batch_size)?;
        kv.set("training.seed", &mut t.seed)?;
        kv.set("training.checkpoint_every", &mut t.checkpoint_every)?;
        kv.set("training.resize_to", &mut t.resize_to)?;
        kv.set("training.crop_to", &mut t.crop_to)?;
        kv.set("training.hflip_prob", &mut t.hflip_prob)?;
        kv.set("training.max_resample", &mut t.max_resample)?;

        let p = &mut cfg.paths;
        p.dataset = kv.get("paths.dataset")?;
        p.checkpoint = kv.get("paths.checkpoint")?;
        p.codes = kv.get("paths.codes")?;
        p.report = kv.get("paths.report")?;
        p.log = kv.get("paths.log")?;

        let g = &mut cfg.gradcheck;
        kv.set("gradcheck.batch_size", &mut g.batch_size)?;
        kv.set("gradcheck.step", &mut g.step)?;
        kv.set("gradcheck.tolerance", &mut g.tolerance)?;
        kv.set("gradcheck.seed", &mut g.seed)?;

        kv.set("eval.k", &mut cfg.eval.k)?;

        kv.reject_unused()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.optimizer.validate()?;
        if self.optimizer.learning_rate > 1.0 {
            return Err(Error::Config(format!(
                "learning rate {} is outside the sane range [0, 1]",
                self.optimizer.learning_rate
            )));
        }
        let t = &self.training;
        if t.batch_size < 4 {
            return Err(Error::Config("training.batch_size must be at least 4".into()));
        }
        if t.crop_to > t.resize_to {
            return Err(Error::Config(format!(
                "training.crop_to {} exceeds training.resize_to {}",
                t.crop_to, t.resize_to
            )));
        }
        if t.crop_to != self.model.image_size {
            return Err(Error::Config(format!(
                "training.crop_to {} must equal model.image_size {}",
                t.crop_to, self.model.image_size
            )));
        }
        if !(0.0..=1.0).contains(&t.hflip_prob) {
            return Err(Error::Config("training.hflip_prob must lie in [0,1]".into()));
        }
        if self.gradcheck.batch_size < 4 || !(self.gradcheck.step > 0.0) || !(self.gradcheck.tolerance > 0.0) {
            return Err(Error::Config("gradcheck needs batch_size >= 4, step > 0, tolerance > 0".into()));
        }
        if self.eval.k == 0 {
            return Err(Error::Config("eval.k must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_comments() {
        let cfg = RunConfig::parse(
            "# smoke\nmodel.preset = desk\nmodel.hash_bits = 32 # wider\ntraining.steps=10\noptimizer.learning_rate = 5e-4\nloss.weighting = global\n",
        )
        .unwrap();
        assert_eq!(cfg.model.hash_bits, 32);
        assert_eq!(cfg.training.steps, 10);
        assert_eq!(cfg.optimizer.learning_rate, 5e-4);
        assert_eq!(cfg.loss.scope, WeightScope::Global);
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        assert!(matches!(RunConfig::parse("model.bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("training.steps = 1\ntraining.steps = 2"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("training.steps"), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_insane_learning_rate() {
        assert!(RunConfig::parse("optimizer.learning_rate = 10").is_err());
        assert!(RunConfig::parse("optimizer.learning_rate = -1").is_err());
    }

    #[test]
    fn lists_parse() {
        let cfg = RunConfig::parse("model.stage_depths = 1, 3").unwrap();
        assert_eq!(cfg.model.stage_depths, vec![1, 3]);
    }
}
