//! The `bat` command line: `gen-data`, `train`, `track`, `eval` and
//! `count-params`.
//!
//! Every subcommand ends with one `OK key=value …` line on stdout. Exit code 2
//! means the invocation was malformed, 1 that the work itself failed.

use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use bat_core::adapter::count_trainable_params;
use bat_core::checkpoint::{load_model, save_model};
use bat_core::config::RunConfig;
use bat_core::eval::{attribute_report, overall_report, plot_data, report_csv, SequenceResult};
use bat_core::synthdata::{generate_benchmark, read_dataset, read_gt, write_dataset, BenchmarkSpec};
use bat_core::tracker::{track_dataset, train, Model};

/// Name of the file `track` leaves next to the per-sequence results.
pub const VARIANT_FILE: &str = "variant";

#[derive(Parser, Debug)]
#[command(name = "bat", version, about = "RGB + thermal tracking with bi-directional adapters")]
struct Cli {
    /// Worker threads for per-sample and per-sequence parallelism.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic RGB + thermal benchmark.
    GenData(GenData),
    /// Train adapters (and head) on a generated dataset.
    Train(Train),
    /// Track every sequence of a dataset with a checkpoint.
    Track(Track),
    /// Score tracking results against the dataset annotations.
    Eval(Eval),
    /// Count the trainable adapter parameters of a config.
    CountParams(CountParams),
}

#[derive(Args, Debug)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    sequences: usize,
    #[arg(long, default_value_t = 60)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    switch_period: usize,
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
}

#[derive(Args, Debug)]
struct Train {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `data_root` of the config.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Overrides `out_ckpt` of the config.
    #[arg(long)]
    out_ckpt: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Track {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out_results: PathBuf,
}

#[derive(Args, Debug)]
struct Eval {
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// CSV report; curve points go to `<stem>.curves.csv` beside it.
    #[arg(long)]
    report: PathBuf,
    /// Comma list of attribute tags to report (default: all present).
    #[arg(long, value_delimiter = ',')]
    attributes: Option<Vec<String>>,
}

#[derive(Args, Debug)]
struct CountParams {
    #[arg(long)]
    config: PathBuf,
}

/// A problem with the invocation rather than with the work.
#[derive(Debug)]
struct Usage(String);

impl Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

/// Runs one invocation with the process's stdout and stderr.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run(argv, &mut std::io::stdout(), &mut std::io::stderr())
}

/// Runs one invocation, writing the summary line to `out` and diagnostics to
/// `err`. Returns the exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match dispatch(cli, err) {
        Ok(summary) => {
            let _ = writeln!(out, "OK {summary}");
            0
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            if e.is::<Usage>() {
                2
            } else {
                1
            }
        }
    }
}

fn dispatch(cli: Cli, err: &mut (dyn Write + Send)) -> Result<String> {
    if cli.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .context("starting worker threads")?;
    pool.install(|| match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a, err),
        Command::Track(a) => track_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::CountParams(a) => count_params(a),
    })
}

fn load_config(path: &Path) -> Result<RunConfig> {
    if !path.is_file() {
        return Err(usage(format!("--config: no such file {}", path.display())));
    }
    RunConfig::load(path).map_err(|e| usage(format!("--config: {e}")))
}

fn require_dir(flag: &str, path: &Path) -> Result<()> {
    if !path.is_dir() {
        return Err(usage(format!("{flag}: no such directory {}", path.display())));
    }
    Ok(())
}

fn gen_data(a: GenData) -> Result<String> {
    if a.sequences == 0 {
        return Err(usage("--sequences must be at least 1"));
    }
    if a.frames < 2 {
        return Err(usage("--frames must be at least 2"));
    }
    if a.switch_period == 0 {
        return Err(usage("--switch-period must be at least 1"));
    }
    if !(0.0..=1.0).contains(&a.noise) {
        return Err(usage("--noise must lie in [0, 1]"));
    }
    let spec = BenchmarkSpec {
        sequences: a.sequences,
        frames: a.frames,
        seed: a.seed,
        switch_period: a.switch_period,
        noise: a.noise,
    };
    let records = generate_benchmark(&spec)?;
    write_dataset(&records, &a.out)?;
    Ok(format!(
        "sequences={} frames={} seed={} out={}",
        a.sequences,
        a.frames,
        a.seed,
        a.out.display()
    ))
}

fn train_cmd(a: Train, err: &mut (dyn Write + Send)) -> Result<String> {
    let cfg = load_config(&a.config)?;
    if !cfg.trainable() {
        return Err(usage(format!(
            "--config: preset `{}` is for parameter accounting only and cannot be trained",
            cfg.preset
        )));
    }
    let data = a
        .data
        .or_else(|| cfg.data_root.as_ref().map(PathBuf::from))
        .ok_or_else(|| usage("--data is required when the config has no data_root"))?;
    let ckpt = a
        .out_ckpt
        .or_else(|| cfg.out_ckpt.as_ref().map(PathBuf::from))
        .ok_or_else(|| usage("--out-ckpt is required when the config has no out_ckpt"))?;
    require_dir("--data", &data)?;
    if let Some(parent) = ckpt.parent().filter(|p| !p.as_os_str().is_empty()) {
        require_dir("--out-ckpt", parent)?;
    }

    let model_cfg = cfg.model_config()?;
    let tcfg = cfg.train_config()?;
    let records = read_dataset(&data)?;
    let mut model = Model::init(model_cfg, cfg.seed)?;
    let mut window = 0.0;
    let losses = train(&mut model, &records, &tcfg, |step, loss| {
        window += loss;
        if (step + 1) % 100 == 0 {
            let _ = writeln!(err, "step {} loss {:.4}", step + 1, window / 100.0);
            window = 0.0;
        }
    })?;
    save_model(&model, &ckpt)?;
    let last = losses.last().copied().unwrap_or(f64::NAN);
    Ok(format!(
        "variant={} steps={} trainable={} final_loss={last:.6} ckpt={}",
        model.variant(),
        tcfg.steps,
        model.params.trainable_count(),
        ckpt.display()
    ))
}

fn track_cmd(a: Track) -> Result<String> {
    if !a.ckpt.is_file() {
        return Err(usage(format!("--ckpt: no such file {}", a.ckpt.display())));
    }
    require_dir("--data", &a.data)?;
    let model = load_model(&a.ckpt)?;
    let records = read_dataset(&a.data)?;
    let boxes = track_dataset(&model, &records, &a.out_results)?;
    let path = a.out_results.join(VARIANT_FILE);
    fs::write(&path, format!("{}\n", model.variant())).with_context(|| format!("writing {}", path.display()))?;
    Ok(format!(
        "variant={} sequences={} frames={} out={}",
        model.variant(),
        records.len(),
        boxes.iter().map(Vec::len).sum::<usize>(),
        a.out_results.display()
    ))
}

fn eval_cmd(a: Eval) -> Result<String> {
    require_dir("--results", &a.results)?;
    require_dir("--data", &a.data)?;
    let records = read_dataset(&a.data)?;
    let variant_path = a.results.join(VARIANT_FILE);
    let variant = match fs::read_to_string(&variant_path) {
        Ok(s) => s.trim().to_string(),
        Err(_) => "unknown".to_string(),
    };
    let method = a
        .results
        .file_name()
        .map(|n| n.to_string_lossy().replace(',', "_"))
        .unwrap_or_else(|| "results".into());

    let mut results = Vec::with_capacity(records.len());
    for r in records {
        let path = a.results.join(format!("{}.txt", r.name));
        let pred = read_gt(&path).with_context(|| format!("reading results for {}", r.name))?;
        if pred.len() != r.len() {
            bail!(
                "{}: frame count mismatch, {} result lines for {} frames",
                path.display(),
                pred.len(),
                r.len()
            );
        }
        results.push(SequenceResult {
            name: r.name,
            attributes: r.attributes,
            pred,
            gt_rgb: r.gt_rgb,
            gt_tir: r.gt_tir,
        });
    }
    let overall = overall_report(&results)?;
    let by_attr =
        attribute_report(&results, a.attributes.as_deref()).map_err(|e| usage(format!("--attributes: {e}")))?;

    let curves = curves_path(&a.report);
    fs::write(&a.report, report_csv(&method, &variant, &overall, &by_attr))
        .with_context(|| format!("--report: writing {}", a.report.display()))?;
    fs::write(&curves, plot_data(&method, &variant, &overall))
        .with_context(|| format!("writing {}", curves.display()))?;
    Ok(format!(
        "variant={variant} sequences={} frames={} pr={:.6} sr={:.6} mpr={:.6} msr={:.6} report={}",
        results.len(),
        overall.frames,
        overall.pr,
        overall.sr,
        overall.mpr,
        overall.msr,
        a.report.display()
    ))
}

/// `report.csv` → `report.curves.csv`.
pub fn curves_path(report: &Path) -> PathBuf {
    let stem = report
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    report.with_file_name(format!("{stem}.curves.csv"))
}

fn count_params(a: CountParams) -> Result<String> {
    let cfg = load_config(&a.config)?;
    let m = cfg.model_config()?;
    Ok(format!(
        "variant={} instances={} per_instance={} trainable={}",
        m.plan.variant,
        m.plan.instance_count(),
        m.adapter.params_per_instance(),
        count_trainable_params(&m.plan, &m.adapter)
    ))
}
