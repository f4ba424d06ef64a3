//! `csslab`: generate data, run CSS experiments, re-run probing and moving
//! distance on saved snapshots, and compare runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use csslab::datagen::{build_schedule, generate_dataset, save_cssf, Dataset, SynthParams};
use csslab::metrics::{md_trajectory, MdMode};
use csslab::probing::run_probe;
use csslab::report::{compare, md_chart, md_csv};
use csslab::trainer::{
    load_data, load_run_artifacts, probe_path, run_experiment, save_probe, snapshot_path,
    ExperimentConfig, ExperimentLog,
};

#[derive(Parser)]
#[command(
    name = "csslab",
    version,
    about = "Continual semantic segmentation laboratory"
)]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset. The train split goes to --out, the eval
    /// split next to it as <stem>.eval.cssf.
    Gen(GenArgs),
    /// Run an experiment from a TOML config and write its report bundle.
    Run {
        config: PathBuf,
        /// Overrides experiment.output_dir.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Retrain probes on the snapshots of a finished run.
    Probe {
        config: PathBuf,
        /// Run directory holding snapshots/ (default: experiment.output_dir).
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
    /// Recompute moving distance from the snapshots of a finished run.
    Md {
        config: PathBuf,
        #[arg(long)]
        run_dir: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Tabulate and overlay runs that share a class schedule.
    Compare {
        /// experiment.json files.
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        /// Output prefix; writes <prefix>.csv and <prefix>.svg.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Current,
    FrozenAtLearning,
}

#[derive(clap::Args)]
struct GenArgs {
    #[arg(long, value_parser = clap::value_parser!(u16).range(1..1000))]
    classes: u16,
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u32).range(1..))]
    feat_dim: u32,
    /// Grid height and width.
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u32).range(1..))]
    size: u32,
    /// Train images per class.
    #[arg(long, default_value_t = 12, value_parser = clap::value_parser!(u32).range(1..))]
    images: u32,
    /// Eval images per class.
    #[arg(long, default_value_t = 6, value_parser = clap::value_parser!(u32).range(1..))]
    eval_images: u32,
    #[arg(long, default_value_t = SynthParams::default().noise_sigma)]
    noise: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn eval_path_for(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}.eval.cssf"))
}

fn print_histogram(name: &str, d: &Dataset) {
    let hist = d.class_histogram();
    let cells: Vec<String> = hist
        .iter()
        .enumerate()
        .map(|(c, n)| format!("{c}:{n}"))
        .collect();
    println!(
        "{name}: {} images, pixels per class {}",
        d.len(),
        cells.join(" ")
    );
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let params = SynthParams {
        classes: a.classes as usize,
        feat_dim: a.feat_dim as usize,
        height: a.size as usize,
        width: a.size as usize,
        images_per_class: a.images as usize,
        eval_images_per_class: a.eval_images as usize,
        noise_sigma: a.noise,
        seed: a.seed,
        ..SynthParams::default()
    };
    let (train, eval) = generate_dataset(&params)?;
    let eval_out = eval_path_for(&a.out);
    save_cssf(&train, &a.out)?;
    save_cssf(&eval, &eval_out)?;
    print_histogram(&a.out.display().to_string(), &train);
    print_histogram(&eval_out.display().to_string(), &eval);
    Ok(())
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    Ok(ExperimentConfig::load(path)?)
}

fn fmt_pct(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |x| format!("{x:.2}"))
}

fn cmd_run(config: &Path, out_dir: Option<PathBuf>) -> Result<()> {
    let mut cfg = load_config(config)?;
    if out_dir.is_some() {
        cfg.experiment.output_dir = out_dir;
    }
    if cfg.experiment.output_dir.is_none() {
        cfg.experiment.output_dir = Some(PathBuf::from("runs").join(cfg.name()));
    }
    let out = run_experiment(&cfg).with_context(|| format!("running {}", config.display()))?;
    let m = &out.log.final_metrics;
    println!(
        "{}: final mIoU init {} incr {} all {} | steps 2..T trained in {:.1} s",
        out.log.name,
        fmt_pct(m.miou_init),
        fmt_pct(m.miou_incr),
        fmt_pct(m.miou_all),
        out.log.incremental_seconds
    );
    println!(
        "report written to {}",
        cfg.experiment.output_dir.unwrap().display()
    );
    Ok(())
}

fn run_dir_of(cfg: &ExperimentConfig, run_dir: Option<PathBuf>) -> Result<PathBuf> {
    match run_dir.or_else(|| cfg.experiment.output_dir.clone()) {
        Some(d) => Ok(d),
        None => bail!("no run directory: pass --run-dir or set experiment.output_dir"),
    }
}

fn cmd_probe(config: &Path, run_dir: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(config)?;
    let dir = run_dir_of(&cfg, run_dir)?;
    let (train, eval) = load_data(&cfg)?;
    let e = &cfg.experiment;
    let schedule = build_schedule(&e.setting, train.num_classes, e.scenario)?;
    let mut lines = vec!["step,probe_miou_all,probe_miou_init,probe_miou_incr".to_string()];
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for t in 1..=schedule.num_steps() {
        let path = snapshot_path(&dir, t);
        let model: csslab::SegModelF64 = csslab::model::load_checkpoint(&path)
            .with_context(|| format!("loading snapshot of step {t}"))?;
        let r = run_probe(
            &model.backbone,
            model.dims.local_context,
            &train.images,
            &eval.images,
            &schedule,
            &cfg.probe_hyper(),
            cfg.model.init_std,
            e.seed,
        )?;
        save_probe(&model, &r.head, &probe_path(&dir, t))?;
        println!("step {t}: probing mIoU all {}", fmt_pct(r.metrics.miou_all));
        lines.push(format!(
            "{t},{},{},{}",
            opt(r.metrics.miou_all),
            opt(r.metrics.miou_init),
            opt(r.metrics.miou_incr)
        ));
    }
    let out = dir.join("probe.csv");
    fs::write(&out, lines.join("\n") + "\n")
        .with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_md(config: &Path, run_dir: Option<PathBuf>, mode: Option<ModeArg>) -> Result<()> {
    let cfg = load_config(config)?;
    let dir = run_dir_of(&cfg, run_dir)?;
    let (train, eval) = load_data(&cfg)?;
    let e = &cfg.experiment;
    let schedule = build_schedule(&e.setting, train.num_classes, e.scenario)?;
    let artifacts = load_run_artifacts::<f64>(&dir, schedule.num_steps())?;
    let mode = match mode {
        Some(ModeArg::Current) => MdMode::Current,
        Some(ModeArg::FrozenAtLearning) => MdMode::FrozenAtLearning,
        None => cfg.analysis.md_mode,
    };
    let images = match cfg.analysis.prototype_split {
        csslab::trainer::Split::Eval => &eval.images,
        csslab::trainer::Split::Train => &train.images,
    };
    let records = md_trajectory(&artifacts, images, &schedule, mode)?;
    let csv_path = dir.join("md.csv");
    fs::write(&csv_path, md_csv(&records)?)
        .with_context(|| format!("writing {}", csv_path.display()))?;
    let svg_path = dir.join("md.svg");
    fs::write(
        &svg_path,
        md_chart(&format!("{}: moving distance", cfg.name()), &records),
    )
    .with_context(|| format!("writing {}", svg_path.display()))?;
    println!(
        "{} MD records written to {}",
        records.len(),
        csv_path.display()
    );
    Ok(())
}

fn cmd_compare(logs: &[PathBuf], out: &Path) -> Result<()> {
    let logs: Vec<ExperimentLog> = logs
        .iter()
        .map(|p| ExperimentLog::load_json(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<_>>()?;
    let c = compare(&logs)?;
    let csv = out.with_extension("csv");
    let svg = out.with_extension("svg");
    fs::write(&csv, &c.csv).with_context(|| format!("writing {}", csv.display()))?;
    fs::write(&svg, &c.svg).with_context(|| format!("writing {}", svg.display()))?;
    for r in &c.rows {
        println!(
            "{:24} {:8} seed {:3} all {:>6} init {:>6} incr {:>6} | {:.1} s",
            r.name,
            r.strategy.name(),
            r.seed,
            fmt_pct(r.miou_all),
            fmt_pct(r.miou_init),
            fmt_pct(r.miou_incr),
            r.incremental_seconds
        );
    }
    println!("wrote {} and {}", csv.display(), svg.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Run { config, out_dir } => cmd_run(&config, out_dir),
        Command::Probe { config, run_dir } => cmd_probe(&config, run_dir),
        Command::Md {
            config,
            run_dir,
            mode,
        } => cmd_md(&config, run_dir, mode),
        Command::Compare { logs, out } => cmd_compare(&logs, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
