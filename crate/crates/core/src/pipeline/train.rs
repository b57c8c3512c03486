use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::data::{sample_pair_batch, AugmentConfig, Augmenter, DatasetSplits, ImageDataset, NormStats, Split};
use crate::error::{Error, Result};
use crate::loss::{wml_loss, PairBatch, PairStats, WeightScope};
use crate::model::{Checkpoint, HybridHashModel};
use crate::optim::Rmsprop;
use crate::tensor::Tape;

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    /// 1-based index of the completed optimizer step.
    pub step: u64,
    pub loss: f32,
    pub similar: usize,
    pub dissimilar: usize,
    pub grad_norm: f32,
}

impl StepRecord {
    pub const TSV_HEADER: &'static str = "step\tloss\tsimilar_pairs\tdissimilar_pairs\tgrad_norm";

    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.step, self.loss, self.similar, self.dissimilar, self.grad_norm
        )
    }
}

/// RNG for the batch of step `step` (0-based). Every step owns a stream, so
/// resuming needs only the step counter.
pub fn batch_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step + 1);
    rng
}

pub struct Trainer<'d> {
    config: RunConfig,
    data: &'d ImageDataset,
    model: HybridHashModel<f32>,
    optimizer: Rmsprop<f32>,
    augmenter: Augmenter,
    global: Option<PairStats>,
    step: u64,
}

impl<'d> Trainer<'d> {
    /// Fresh model initialised from the training seed.
    pub fn new(config: &RunConfig, data: &'d ImageDataset) -> Result<Self> {
        let model = HybridHashModel::new(&config.model, config.training.seed)?;
        let optimizer = Rmsprop::new(config.optimizer, &model.params);
        Self::assemble(config, data, model, optimizer, NormStats::from_dataset(data), 0)
    }

    /// Continues from `checkpoint`, whose model config must match.
    pub fn resume(config: &RunConfig, data: &'d ImageDataset, checkpoint: Checkpoint) -> Result<Self> {
        if checkpoint.config != config.model {
            return Err(Error::Config("checkpoint model config differs from the run config".into()));
        }
        let model = HybridHashModel::from_params(&checkpoint.config, checkpoint.params)?;
        let optimizer = match checkpoint.optimizer {
            Some(state) => Rmsprop::with_state(config.optimizer, &model.params, state)?,
            None => Rmsprop::new(config.optimizer, &model.params),
        };
        let norm = checkpoint.norm.unwrap_or_else(|| NormStats::from_dataset(data));
        Self::assemble(config, data, model, optimizer, norm, checkpoint.step)
    }

    fn assemble(
        config: &RunConfig,
        data: &'d ImageDataset,
        model: HybridHashModel<f32>,
        optimizer: Rmsprop<f32>,
        norm: NormStats,
        step: u64,
    ) -> Result<Self> {
        config.validate()?;
        if data.channels != config.model.in_channels {
            return Err(Error::Data(format!(
                "dataset has {} channels, model expects {}",
                data.channels, config.model.in_channels
            )));
        }
        let t = &config.training;
        let augmenter = Augmenter::new(
            AugmentConfig {
                resize_to: t.resize_to,
                crop_to: t.crop_to,
                hflip_prob: t.hflip_prob,
            },
            norm,
        )?;
        let global = match config.loss.scope {
            WeightScope::Global => Some(PairStats::from_population(data.labels())),
            WeightScope::Batch => None,
        };
        Ok(Self {
            config: config.clone(),
            data,
            model,
            optimizer,
            augmenter,
            global,
            step,
        })
    }

    /// Optimizer steps completed so far.
    pub fn steps_done(&self) -> u64 {
        self.step
    }

    pub fn model(&self) -> &HybridHashModel<f32> {
        &self.model
    }

    pub fn norm_stats(&self) -> &NormStats {
        self.augmenter.stats()
    }

    /// Sample, forward, loss, backward, update.
    pub fn step(&mut self) -> Result<StepRecord> {
        let t = &self.config.training;
        let mut rng = batch_rng(t.seed, self.step);
        let indices = sample_pair_batch(self.data, t.batch_size, t.max_resample, &mut rng)?;
        let images = self.augmenter.batch(self.data, &indices, Some(&mut rng))?;
        let labels: Vec<_> = indices.iter().map(|&i| self.data.labels()[i]).collect();
        let pairs = PairBatch::from_labels(&labels, self.global)?;

        let tape = Tape::new();
        let params = self.model.params.bind(&tape);
        let codes = self.model.net.forward(&params, tape.constant(images), None)?;
        let loss = wml_loss(codes, &pairs, &self.config.loss)?;
        let loss_value = loss.value().item();
        let mut grads = tape.backward(loss)?;
        let grads = params.collect_grads(&mut grads);
        drop(params);
        let grad_norm = grads.iter().map(|g| g.norm_sq() as f64).sum::<f64>().sqrt() as f32;
        self.optimizer.step(&mut self.model.params, &grads)?;
        self.step += 1;
        Ok(StepRecord {
            step: self.step,
            loss: loss_value,
            similar: pairs.stats.similar,
            dissimilar: pairs.stats.dissimilar,
            grad_norm,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.model.clone(),
            params: self.model.params.clone(),
            step: self.step,
            norm: Some(self.augmenter.stats().clone()),
            optimizer: Some(self.optimizer.state().to_vec()),
        }
    }
}

/// `run.hhck` → `run.step40.hhck`.
pub fn periodic_checkpoint_path(path: &Path, step: u64) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.step{step}.{}", ext.to_string_lossy()),
        None => format!("{stem}.step{step}"),
    };
    path.with_file_name(name)
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub records: Vec<StepRecord>,
    pub checkpoint: Checkpoint,
}

/// Trains up to `training.steps` total steps on the train split of
/// `paths.dataset`, writing the TSV log and checkpoints named in `paths`.
/// With `resume`, continues from that checkpoint and appends to the log.
pub fn run_training(config: &RunConfig, resume: Option<&Path>) -> Result<TrainSummary> {
    let dataset_dir = config
        .paths
        .dataset
        .as_deref()
        .ok_or_else(|| Error::Config("paths.dataset is required for training".into()))?;
    let data = DatasetSplits::load_split(dataset_dir, Split::Train)?;
    let mut trainer = match resume {
        Some(path) => Trainer::resume(config, &data, Checkpoint::load(path)?)?,
        None => Trainer::new(config, &data)?,
    };

    let mut log = match &config.paths.log {
        Some(path) => Some(open_log(path, resume.is_some())?),
        None => None,
    };
    let mut records = Vec::new();
    let every = config.training.checkpoint_every as u64;
    while trainer.steps_done() < config.training.steps as u64 {
        let record = trainer.step()?;
        if let Some((path, w)) = &mut log {
            writeln!(w, "{}", record.to_tsv()).map_err(|e| Error::io(&*path, e))?;
        }
        if let Some(path) = &config.paths.checkpoint {
            if every > 0 && record.step % every == 0 {
                trainer.checkpoint().save(&periodic_checkpoint_path(path, record.step))?;
            }
        }
        records.push(record);
    }
    if let Some((path, mut w)) = log {
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    let checkpoint = trainer.checkpoint();
    if let Some(path) = &config.paths.checkpoint {
        checkpoint.save(path)?;
    }
    Ok(TrainSummary { records, checkpoint })
}

fn open_log(path: &Path, append: bool) -> Result<(PathBuf, BufWriter<File>)> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let fresh = !append || !path.exists();
    let file = if fresh {
        File::create(path)
    } else {
        OpenOptions::new().append(true).open(path)
    }
    .map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    if fresh {
        writeln!(w, "{}", StepRecord::TSV_HEADER).map_err(|e| Error::io(path, e))?;
    }
    Ok((path.to_path_buf(), w))
}
