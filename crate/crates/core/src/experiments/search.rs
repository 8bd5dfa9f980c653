//! Random search over the hyperparameter space.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{prepare_experiment, write_run_artifacts};
use crate::config::{
    EmbeddingKind, ExperimentConfig, ExtractorConfig, ModelConfig, TimeEmbeddingMethod, COVER_SIZES, DROPOUTS,
    FEATURE_WIDTHS, HEADS, LSTM_DEPTHS, MEMORY_DEPTHS, TIME_WIDTHS,
};
use crate::data::Split;
use crate::error::{Error, Result};
use crate::model::build_model;
use crate::training::{fit, per_window_errors};

/// Domains of every searched hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub heads: Vec<usize>,
    pub memory_depths: Vec<usize>,
    pub feature_widths: Vec<usize>,
    pub time_widths: Vec<usize>,
    pub extractor_counts: Vec<usize>,
    pub cover_sizes: Vec<usize>,
    pub time_methods: Vec<TimeEmbeddingMethod>,
    pub embedding_kinds: Vec<EmbeddingKind>,
    pub dropouts: Vec<f64>,
    pub attention: Vec<bool>,
    pub glu: Vec<bool>,
    pub lstm_depths: Vec<usize>,
    pub joint_feature_mix: Vec<bool>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            heads: HEADS.to_vec(),
            memory_depths: MEMORY_DEPTHS.to_vec(),
            feature_widths: FEATURE_WIDTHS.to_vec(),
            time_widths: TIME_WIDTHS.to_vec(),
            extractor_counts: vec![1, 2, 3, 4, 5],
            cover_sizes: COVER_SIZES.to_vec(),
            time_methods: TimeEmbeddingMethod::all().to_vec(),
            embedding_kinds: EmbeddingKind::ALL.to_vec(),
            dropouts: DROPOUTS.to_vec(),
            attention: vec![false, true],
            glu: vec![false, true],
            lstm_depths: LSTM_DEPTHS.to_vec(),
            joint_feature_mix: vec![false, true],
        }
    }
}

const MAX_ATTEMPTS: usize = 10_000;

fn pick<T: Copy>(rng: &mut ChaCha8Rng, xs: &[T], field: &str) -> Result<T> {
    xs.choose(rng).copied().ok_or_else(|| Error::config(format!("search.{field}"), "empty domain"))
}

impl SearchSpace {
    /// One uniform draw; every other field comes from `base`.
    fn draw(&self, base: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<ModelConfig> {
        let mut cfg = base.clone();
        let k = pick(rng, &self.extractor_counts, "extractor_counts")?;
        if k > self.cover_sizes.len() {
            return Err(Error::config("search.extractor_counts", format!("{k} extractors but {} cover sizes", self.cover_sizes.len())));
        }
        let mut covers: Vec<usize> = self.cover_sizes.choose_multiple(rng, k).copied().collect();
        covers.sort_unstable();
        cfg.extractors = covers.into_iter().map(|cover| ExtractorConfig { cover, stride: None, dilation: None }).collect();
        cfg.embedding.kind = pick(rng, &self.embedding_kinds, "embedding_kinds")?;
        cfg.embedding.e_f = pick(rng, &self.feature_widths, "feature_widths")?;
        cfg.embedding.e_t = pick(rng, &self.time_widths, "time_widths")?;
        cfg.time_method = pick(rng, &self.time_methods, "time_methods")?;
        cfg.memory.n = pick(rng, &self.memory_depths, "memory_depths")?;
        cfg.memory.use_attention = pick(rng, &self.attention, "attention")?;
        cfg.memory.heads = pick(rng, &self.heads, "heads")?;
        cfg.memory.use_glu = pick(rng, &self.glu, "glu")?;
        cfg.memory.joint_feature_mix = pick(rng, &self.joint_feature_mix, "joint_feature_mix")?;
        cfg.memory.dropout = pick(rng, &self.dropouts, "dropouts")?;
        cfg.projection.r = pick(rng, &self.lstm_depths, "lstm_depths")?;
        cfg.projection.hidden = None;
        cfg.seed = rng.random();
        Ok(cfg)
    }

    /// Draws until the config is valid and geometrically realizable.
    pub fn sample(&self, base: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<ModelConfig> {
        for _ in 0..MAX_ATTEMPTS {
            let cfg = self.draw(base, rng)?;
            if cfg.validate().is_ok() && cfg.resolved_extractors().is_ok() {
                return Ok(cfg);
            }
        }
        Err(Error::config("search", format!("no valid config in {MAX_ATTEMPTS} draws")))
    }
}

/// The seeded sequence of `budget` sampled configs.
pub fn sample_configs(space: &SearchSpace, base: &ModelConfig, budget: usize, seed: u64) -> Result<Vec<ModelConfig>> {
    if budget == 0 {
        return Err(Error::config("budget", "must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..budget).map(|_| space.sample(base, &mut rng)).collect()
}

/// One trained search candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub config: ModelConfig,
    pub val_loss: f64,
    pub test_mse: f64,
    pub test_mae: f64,
    pub params: usize,
    pub diverged: bool,
    /// Test MSE of each window, for paired tests.
    pub test_window_mse: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub seed: u64,
    pub budget: usize,
    /// Trials ranked by validation loss; diverged runs last.
    pub trials: Vec<Trial>,
}

impl SearchResult {
    pub fn best(&self) -> Option<&Trial> {
        self.trials.first().filter(|t| !t.diverged)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Trains `budget` sampled configs on the data of `base` and ranks them.
/// With `out_dir`, each trial's artifacts go to `trial_<i>/`.
pub fn random_search(
    base: &ExperimentConfig,
    space: &SearchSpace,
    budget: usize,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<SearchResult> {
    let configs = sample_configs(space, &base.model, budget, seed)?;
    let prepared = prepare_experiment(base)?;
    let mut trials = Vec::with_capacity(budget);
    for (index, config) in configs.into_iter().enumerate() {
        let mut model = build_model(&config, prepared.series.channels(), prepared.frequency)?;
        let params = model.count_parameters().total;
        let outcome = fit(&mut model, &prepared, &base.train);
        let dir = out_dir.map(|d| d.join(format!("trial_{index}")));
        let trial = match outcome {
            Ok(report) => {
                let cap = base.train.max_eval_windows.unwrap_or(usize::MAX);
                let test = prepared.windows(Split::Test)?.truncated(cap);
                let errors = per_window_errors(&model, &test, base.train.eval_batch_size)?;
                if let Some(dir) = &dir {
                    let exp = ExperimentConfig { model: config.clone(), ..base.clone() };
                    write_run_artifacts(dir, &exp, &report, Some(&model))?;
                }
                Trial {
                    index,
                    config,
                    val_loss: report.best_val_loss.unwrap_or(f64::INFINITY),
                    test_mse: report.test_mse.unwrap_or(f64::NAN),
                    test_mae: report.test_mae.unwrap_or(f64::NAN),
                    params,
                    diverged: false,
                    test_window_mse: errors,
                }
            }
            Err(Error::Divergence(report)) => {
                if let Some(dir) = &dir {
                    let exp = ExperimentConfig { model: config.clone(), ..base.clone() };
                    write_run_artifacts(dir, &exp, &report, None)?;
                }
                Trial {
                    index,
                    config,
                    val_loss: f64::INFINITY,
                    test_mse: f64::NAN,
                    test_mae: f64::NAN,
                    params,
                    diverged: true,
                    test_window_mse: Vec::new(),
                }
            }
            Err(e) => return Err(e),
        };
        trials.push(trial);
    }
    trials.sort_by(|a, b| a.diverged.cmp(&b.diverged).then(a.val_loss.total_cmp(&b.val_loss)).then(a.index.cmp(&b.index)));
    Ok(SearchResult { seed, budget, trials })
}
