//! Single training runs and the ablation matrix.

use crate::config::RunConfig;
use crate::data::{generate, load_manifest, VideoRecord};
use crate::error::Result;
use crate::model::{AblationFlags, Model};
use crate::train::{split, train, EpochRecord, EvalReport};

/// The dataset a config points at: its manifest, or freshly generated data.
pub fn dataset(cfg: &RunConfig) -> Result<Vec<VideoRecord>> {
    match &cfg.dataset {
        Some(path) => load_manifest(path, Some(&cfg.data_spec())),
        None => generate(&cfg.synthetic()),
    }
}

/// Train/eval split of [`dataset`]. An empty eval share evaluates on the training set.
pub fn dataset_split(cfg: &RunConfig) -> Result<(Vec<VideoRecord>, Vec<VideoRecord>)> {
    let (train, eval) = split(dataset(cfg)?, cfg.eval_fraction);
    if eval.is_empty() {
        let e = train.clone();
        return Ok((train, e));
    }
    Ok((train, eval))
}

/// Initialise from `cfg.train.seed` and train.
pub fn train_run(
    cfg: &RunConfig,
    train_set: &[VideoRecord],
    eval_set: &[VideoRecord],
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Model, Vec<EpochRecord>)> {
    cfg.validate()?;
    let mut model = Model::init(cfg.model.clone(), cfg.train.seed)?;
    let records = train(&mut model, train_set, eval_set, &cfg.train, &cfg.loss, on_epoch)?;
    Ok((model, records))
}

/// Which published table a row belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Table {
    /// Component ablation.
    Components,
    /// Modality ablation.
    Modalities,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub name: &'static str,
    /// Other names the same configuration goes by.
    pub aliases: &'static [&'static str],
    pub tables: &'static [Table],
    pub flags: AblationFlags,
}

/// Component rows followed by the modality rows; the full model doubles as
/// "both+L_CC", so it appears once.
pub fn ablation_rows() -> Vec<AblationRow> {
    let full = AblationFlags::default();
    let row = |name, aliases, tables, flags| AblationRow {
        name,
        aliases,
        tables,
        flags,
    };
    use Table::*;
    vec![
        row("full", &["both+L_CC"], &[Components, Modalities], full),
        row("w/o hierarchy", &[], &[Components], AblationFlags { use_hierarchy: false, ..full }),
        row("w/o HC-HUB", &[], &[Components], AblationFlags { use_hc: false, ..full }),
        row("w/o HH-HUB", &[], &[Components], AblationFlags { use_hh: false, ..full }),
        row("w/o temporal", &[], &[Components], AblationFlags { use_temporal: false, ..full }),
        row("w/o selection", &[], &[Components], AblationFlags { use_selection: false, ..full }),
        row(
            "vis-only",
            &[],
            &[Modalities],
            AblationFlags { use_key: false, use_consistency: false, ..full },
        ),
        row(
            "key-only",
            &[],
            &[Modalities],
            AblationFlags { use_vis: false, use_consistency: false, ..full },
        ),
        row("both", &[], &[Modalities], AblationFlags { use_consistency: false, ..full }),
    ]
}

/// Look a row up by name or alias.
pub fn find_row(name: &str) -> Option<AblationRow> {
    ablation_rows()
        .into_iter()
        .find(|r| r.name == name || r.aliases.contains(&name))
}

/// Final evaluations of one configuration over several seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub name: String,
    pub runs: Vec<EvalReport>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

impl CellResult {
    pub fn metrics(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.metric).collect()
    }

    pub fn metric_mean(&self) -> f64 {
        mean(&self.metrics())
    }

    /// Sample standard deviation over seeds.
    pub fn metric_sd(&self) -> f64 {
        sample_sd(&self.metrics())
    }

    pub fn alignment_mean(&self) -> Option<f64> {
        let a: Option<Vec<f64>> = self.runs.iter().map(|r| r.alignment).collect();
        a.map(|a| mean(&a))
    }

    pub fn line(&self) -> String {
        let name = self.runs.first().map_or("metric", |r| r.metric_name());
        let mut s = format!(
            "cell={:?} seeds={} {name}_mean={:.6} {name}_sd={:.6}",
            self.name,
            self.runs.len(),
            self.metric_mean(),
            self.metric_sd()
        );
        if let Some(a) = self.alignment_mean() {
            s.push_str(&format!(" alignment_mean={a:.6}"));
        }
        s
    }
}

/// Train `base` with `flags` for `seeds` seeds (`base.train.seed + s`) and
/// collect each run's final evaluation.
pub fn run_cell(
    base: &RunConfig,
    name: &str,
    flags: AblationFlags,
    train_set: &[VideoRecord],
    eval_set: &[VideoRecord],
) -> Result<CellResult> {
    let mut runs = Vec::with_capacity(base.seeds);
    for s in 0..base.seeds as u64 {
        let mut cfg = base.clone();
        cfg.model.flags = flags;
        cfg.train.seed = base.train.seed + s;
        let (model, _) = train_run(&cfg, train_set, eval_set, |_| {})?;
        runs.push(crate::train::evaluate(&model, eval_set)?);
    }
    Ok(CellResult {
        name: name.to_string(),
        runs,
    })
}

/// Every row of `rows` on one shared dataset.
pub fn run_matrix(
    base: &RunConfig,
    rows: &[AblationRow],
    mut on_cell: impl FnMut(&CellResult),
) -> Result<Vec<CellResult>> {
    base.validate()?;
    for r in rows {
        r.flags.validate()?;
    }
    let (train_set, eval_set) = dataset_split(base)?;
    let mut out = Vec::with_capacity(rows.len());
    for r in rows {
        let cell = run_cell(base, r.name, r.flags, &train_set, &eval_set)?;
        log::info!("{}", cell.line());
        on_cell(&cell);
        out.push(cell);
    }
    Ok(out)
}
