//! End-to-end experiment drivers.

pub mod ablation;
pub mod profile;
pub mod report;
pub mod search;

use std::path::Path;

use crate::checkpoint;
use crate::config::ExperimentConfig;
use crate::data::{self, lookup, prepare, ratio_split, synthetic, Prepared, SplitSpec, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::model::{build_model, Model};
use crate::training::{fit, RunReport};

pub use ablation::{ablation_cells, ablation_delta, band, paired_ttest, stars, AblationCell, Band, Factor, TTest};
pub use profile::{profile_efficiency, EfficiencyProfile};
pub use report::{emit_heatmap, emit_report, heatmap_csv, heatmap_image, ReportFormat};
pub use search::{random_search, sample_configs, SearchResult, SearchSpace, Trial};

/// Reads the CSV or generates the synthetic stand-in, then drops excluded
/// channels.
pub fn load_experiment_data(cfg: &ExperimentConfig) -> Result<TimeSeriesDataset> {
    let name = &cfg.model.dataset;
    let ds = match (&cfg.data.path, &cfg.data.synthetic) {
        (Some(path), _) => {
            let ds = data::load_dataset(path, name)?;
            if let Some(info) = lookup(name) {
                if ds.channels() != info.channels {
                    return Err(Error::Schema(format!(
                        "{name} has {} channels, {} holds {}",
                        info.channels,
                        path.display(),
                        ds.channels()
                    )));
                }
            }
            ds
        }
        (None, Some(syn)) => {
            let info = lookup(name).ok_or_else(|| Error::config("model.dataset", format!("unknown dataset `{name}`")))?;
            synthetic::seasonal(info.name, info.channels, info.frequency, syn.rows, syn.noise, syn.seed)
        }
        (None, None) => return Err(Error::config("data", "missing `path` or `synthetic`")),
    };
    if cfg.data.exclude_channels.is_empty() {
        Ok(ds)
    } else {
        ds.exclude_channels(&cfg.data.exclude_channels)
    }
}

/// Window counts: the override, else ratio cuts for synthetic stand-ins,
/// else the dataset's registered rule.
pub fn split_for(cfg: &ExperimentConfig, len: usize) -> Result<SplitSpec> {
    let (t, h) = (cfg.model.t, cfg.model.h);
    if let Some([train, val, test]) = cfg.data.split {
        return Ok(SplitSpec { train, val, test });
    }
    if cfg.data.synthetic.is_some() {
        let info = lookup(&cfg.model.dataset).expect("validated dataset");
        let (train, test) = info.fractions();
        return ratio_split(len, train, test, t, h);
    }
    data::resolve_split(&cfg.model.dataset, None, len, t, h)
}

pub fn prepare_experiment(cfg: &ExperimentConfig) -> Result<Prepared> {
    let ds = load_experiment_data(cfg)?;
    let spec = split_for(cfg, ds.len())?;
    prepare(&ds, spec, cfg.model.t, cfg.model.h)
}

/// Writes `config.toml`, `report.json`, `loss_curve.csv` and, with a
/// model, `model.ckpt` into `dir`.
pub fn write_run_artifacts(dir: &Path, cfg: &ExperimentConfig, report: &RunReport, model: Option<&Model>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml_string())?;
    report.save(&dir.join("report.json"))?;
    std::fs::write(dir.join("loss_curve.csv"), report.loss_curve_csv())?;
    if let Some(model) = model {
        checkpoint::save(&dir.join("model.ckpt"), model)?;
    }
    Ok(())
}

pub struct RunOutput {
    pub report: RunReport,
    pub model: Model,
}

/// Load, train, evaluate; artifacts go to `out_dir` when given, including
/// the partial report of a diverged run.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<RunOutput> {
    cfg.validate()?;
    let prepared = prepare_experiment(cfg)?;
    let mut model = build_model(&cfg.model, prepared.series.channels(), prepared.frequency)?;
    match fit(&mut model, &prepared, &cfg.train) {
        Ok(report) => {
            if let Some(dir) = out_dir {
                write_run_artifacts(dir, cfg, &report, Some(&model))?;
            }
            Ok(RunOutput { report, model })
        }
        Err(Error::Divergence(report)) => {
            if let Some(dir) = out_dir {
                write_run_artifacts(dir, cfg, &report, None)?;
            }
            Err(Error::Divergence(report))
        }
        Err(e) => Err(e),
    }
}
