//! `hubquery`: train, evaluate, gradient-check and ablate the actor query model.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use hubquery::checkpoint;
use hubquery::config::RunConfig;
use hubquery::data::{generate, save_dataset};
use hubquery::experiment::{ablation_rows, dataset_split, find_row, run_matrix, train_run};
use hubquery::gradcheck::grad_check_with;
use hubquery::model::Model;
use hubquery::tape::OpKind;
use hubquery::train::{batch_loss, evaluate, EvalReport};

/// Largest relative gradient error `gradcheck` accepts.
const GRAD_TOLERANCE: f64 = 1e-5;

#[derive(Parser, Debug)]
#[command(name = "hubquery", version, about = "Actor query machine over human and context memories")]
struct Cli {
    /// Config file of key=value lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one setting; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    /// Training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train and write metrics.txt plus a checkpoint.
    Train,
    /// Evaluate a checkpoint on its dataset's held-out split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compare analytic and finite-difference gradients of the full loss.
    Gradcheck {
        /// Perturb the backward rule of one primitive (negative control).
        #[arg(long, hide = true)]
        fault: Option<String>,
        /// Finite-difference step.
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
    },
    /// Train every ablation row over several seeds.
    Ablate {
        /// Comma-separated row names; all rows when absent.
        #[arg(long)]
        rows: Option<String>,
    },
    /// Write a synthetic dataset and its manifest.
    GenData,
}

/// A gradient check or loss that went numerically wrong.
#[derive(Debug)]
struct NumericFailure(String);

impl std::fmt::Display for NumericFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericFailure {}

fn base_config(cli: &Cli, start: RunConfig) -> Result<RunConfig> {
    let mut cfg = start;
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg.apply(&text).with_context(|| format!("in {}", path.display()))?;
    }
    for s in &cli.sets {
        cfg.set_assignment(s).with_context(|| format!("--set {s}"))?;
    }
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cli: &Cli, default: &str) -> Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from(default));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn report_line(r: &EvalReport) -> String {
    let mut s = format!("eval_{}={:.9} eval_task_loss={:.9}", r.metric_name(), r.metric, r.task_loss);
    if let Some(a) = r.alignment {
        s.push_str(&format!(" eval_alignment={a:.9}"));
    }
    s
}

fn cmd_train(cli: &Cli) -> Result<()> {
    let cfg = base_config(cli, RunConfig::default())?;
    let dir = out_dir(cli, "run")?;
    let (train_set, eval_set) = dataset_split(&cfg)?;
    let metrics_path = dir.join("metrics.txt");
    let mut metrics = fs::File::create(&metrics_path).with_context(|| format!("creating {}", metrics_path.display()))?;
    let mut write_err = None;
    let started = std::time::Instant::now();
    let (model, records) = train_run(&cfg, &train_set, &eval_set, |r| {
        if let Err(e) = writeln!(metrics, "{}", r.line()) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e).with_context(|| format!("writing {}", metrics_path.display()));
    }
    checkpoint::save(&dir.join("checkpoint"), &cfg, &model)?;
    log::info!("trained {} epochs in {:.1}s", records.len(), started.elapsed().as_secs_f64());
    if let Some(last) = records.last() {
        println!("{}", last.line());
    }
    Ok(())
}

fn cmd_eval(cli: &Cli, ckpt: &Path) -> Result<()> {
    let (saved, model) = checkpoint::load(ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    let cfg = base_config(cli, saved)?;
    if cfg.model != model.cfg {
        anyhow::bail!("model settings cannot be overridden at evaluation time");
    }
    let (_, eval_set) = dataset_split(&cfg)?;
    let report = evaluate(&model, &eval_set)?;
    let line = report_line(&report);
    if let Some(dir) = &cli.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("eval.txt"), format!("{line}\n"))?;
    }
    println!("{line}");
    Ok(())
}

fn cmd_gradcheck(cli: &Cli, fault: Option<&str>, eps: f64) -> Result<()> {
    let mut cfg = base_config(cli, RunConfig::toy())?;
    if cfg.model.dim > 8 {
        anyhow::bail!(hubquery::Error::Config(format!(
            "gradcheck needs dim <= 8, got {}",
            cfg.model.dim
        )));
    }
    cfg.dataset = None;
    cfg.data.videos = cfg.train.batch_size;
    let videos = generate(&cfg.synthetic())?;
    let batch: Vec<_> = videos.iter().collect();
    let model = Model::init(cfg.model.clone(), cfg.train.seed)?;
    let fault: Option<OpKind> = fault.map(str::parse).transpose()?;
    let report = grad_check_with(
        &model.store,
        eps,
        |tape| {
            if let Some(kind) = fault {
                tape.inject_fault(kind);
            }
        },
        |tape| Ok(batch_loss(tape, &model, &batch, &cfg.loss)?.total),
    )?;
    let mut worst: f64 = 0.0;
    for p in &report.params {
        println!("param={} max_rel_err={:.3e}", p.name, p.max_rel_err);
        worst = worst.max(p.max_rel_err);
    }
    println!("groups={} max_rel_err={worst:.3e} tolerance={GRAD_TOLERANCE:e}", report.params.len());
    if !(worst < GRAD_TOLERANCE) {
        let p = report.worst().expect("at least one parameter");
        return Err(NumericFailure(format!(
            "gradient check failed: {} entry {} analytic {:.6e} numeric {:.6e}",
            p.name, p.worst_index, p.analytic, p.numeric
        ))
        .into());
    }
    Ok(())
}

fn cmd_ablate(cli: &Cli, rows: Option<&str>) -> Result<()> {
    let cfg = base_config(cli, RunConfig::default())?;
    let rows = match rows {
        None => ablation_rows(),
        Some(list) => list
            .split(',')
            .map(|n| find_row(n.trim()).ok_or_else(|| hubquery::Error::Config(format!("unknown ablation row {n:?}"))))
            .collect::<Result<_, _>>()?,
    };
    let dir = out_dir(cli, "ablation")?;
    let path = dir.join("ablation.txt");
    let mut file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut write_err = None;
    run_matrix(&cfg, &rows, |cell| {
        println!("{}", cell.line());
        if let Err(e) = writeln!(file, "{}", cell.line()) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e).with_context(|| format!("writing {}", path.display()));
    }
    Ok(())
}

fn cmd_gen_data(cli: &Cli) -> Result<()> {
    let cfg = base_config(cli, RunConfig::default())?;
    let dir = out_dir(cli, "data")?;
    let videos = generate(&cfg.synthetic())?;
    let manifest = save_dataset(&dir, &videos)?;
    println!("manifest={} videos={}", manifest.display(), videos.len());
    Ok(())
}

fn exit_code(e: &anyhow::Error) -> ExitCode {
    let numeric = e.chain().any(|c| {
        c.downcast_ref::<NumericFailure>().is_some()
            || c.downcast_ref::<hubquery::Error>().is_some_and(hubquery::Error::is_numeric)
    });
    ExitCode::from(if numeric { 2 } else { 1 })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Train => cmd_train(&cli),
        Command::Eval { checkpoint } => cmd_eval(&cli, checkpoint),
        Command::Gradcheck { fault, eps } => cmd_gradcheck(&cli, fault.as_deref(), *eps),
        Command::Ablate { rows } => cmd_ablate(&cli, rows.as_deref()),
        Command::GenData => cmd_gen_data(&cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
