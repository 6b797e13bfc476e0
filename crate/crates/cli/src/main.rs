use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use priq::data::{build_dataset, export_dataset, import_dataset, split_scenes, Dataset};
use priq::harness::{ablation_run, evaluate, parse_ablation_config, train_with, Checkpoint, CroppedModel, MetricsReport, MetricsRow, RunConfig};
use priq::verify::{self, SuiteReport};
use priq::Error;

#[derive(Parser)]
#[command(name = "priq", version, about = "Set-wise image quality assessment with a learned pseudo-reference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the synthetic corpus and write manifest, metadata and PNG images.
    Synth {
        /// Run config whose `dataset.*` keys describe the corpus.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Extra `key = value` overrides, applied after the config file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model on the training scenes and write a checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Run seed; defaults to the first entry of `seeds`.
        #[arg(long)]
        seed: Option<u64>,
        /// Dataset directory written by `synth`; rebuilt from the config when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the held-out scenes with sets of size T.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "t")]
        t: usize,
        /// Partition seed; defaults to the checkpoint's `partition_seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Append the metrics row to this CSV instead of printing it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate a grid of arms, seeds and set sizes.
    Ablate {
        /// Run config plus an optional `arms = variant:toggles, ...` line.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Directory receiving metrics.csv, medians.csv and srocc_vs_t.svg.
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference checks of every differentiable operation and the full model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Oracle, pseudo-reference and architecture property suites.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> priq::Result<RunConfig> {
    let mut config = match path {
        Some(p) => RunConfig::from_kv(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => RunConfig::default(),
    };
    if !overrides.is_empty() {
        config.apply_kv(&overrides.join("\n"))?;
    }
    config.validate()?;
    Ok(config)
}

fn load_data(dir: Option<&Path>, config: &RunConfig) -> priq::Result<Dataset> {
    match dir {
        Some(d) => import_dataset(d),
        None => build_dataset(&config.dataset),
    }
}

fn write_file(path: &Path, contents: &[u8]) -> priq::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn report_suites(reports: &[SuiteReport]) -> priq::Result<()> {
    for r in reports {
        print!("{r}");
    }
    let failed: Vec<String> = reports.iter().flat_map(|r| r.failures().map(|c| format!("{}: {}", r.suite, c.name))).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{} check(s) failed: {}", failed.len(), failed.join("; "))))
    }
}

fn run(cli: Cli) -> priq::Result<()> {
    match cli.command {
        Command::Synth { config, overrides, out } => {
            let config = load_config(config.as_deref(), &overrides)?;
            let data = build_dataset(&config.dataset)?;
            export_dataset(&data, &out)?;
            eprintln!("wrote {} images from {} scenes to {}", data.image_count(), data.scenes.len(), out.display());
        }
        Command::Train { config, overrides, seed, data, out } => {
            let config = load_config(config.as_deref(), &overrides)?;
            let seed = seed.or_else(|| config.seeds.first().copied()).unwrap_or(0);
            let data = load_data(data.as_deref(), &config)?;
            let (train, _) = split_scenes(&data, config.train_fraction, config.split_seed)?;
            let ck = train_with(&config, seed, &train, |s| {
                eprintln!("epoch {:>3}  lr {:.2e}  loss {:.6}", s.epoch, s.lr, s.mean_loss)
            })?;
            ck.save(&out)?;
            eprintln!("initial loss {:.6}, final loss {:.6}", ck.initial_loss, ck.loss_curve.last().copied().unwrap_or(f64::NAN));
        }
        Command::Eval { checkpoint, t, seed, data, out } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let config = &ck.config;
            let data = load_data(data.as_deref(), config)?;
            let (_, test) = split_scenes(&data, config.train_fraction, config.split_seed)?;
            let scorer = CroppedModel { model: &ck.model, crop: config.crop };
            let ev = evaluate(&scorer, &test, t, seed.unwrap_or(config.partition_seed))?;
            let report = MetricsReport {
                rows: vec![MetricsRow {
                    variant: config.variant,
                    toggles: config.toggles.label(),
                    t,
                    seed: ck.seed,
                    lcc: ev.lcc,
                    srocc: ev.srocc,
                }],
            };
            let csv = report.to_csv();
            match out {
                None => print!("{csv}"),
                Some(path) if path.exists() => {
                    let mut f = fs::OpenOptions::new().append(true).open(&path).map_err(|e| Error::io(&path, e))?;
                    let row = csv.lines().nth(1).unwrap_or_default();
                    writeln!(f, "{row}").map_err(|e| Error::io(&path, e))?;
                }
                Some(path) => write_file(&path, csv.as_bytes())?,
            }
        }
        Command::Ablate { config, data, out } => {
            let text = fs::read_to_string(&config).map_err(|e| Error::io(&config, e))?;
            let (base, arms) = parse_ablation_config(&text)?;
            let data = load_data(data.as_deref(), &base)?;
            let report = ablation_run(&base, &arms, &data, |line| eprintln!("{line}"))?;
            report.write(&out)?;
            print!("{}", report.medians_csv()?);
        }
        Command::Gradcheck { seed } => report_suites(&[verify::gradient_suite(seed)?])?,
        Command::Selftest { seed } => report_suites(&[
            verify::oracle_suite(seed)?,
            verify::pseudo_ref_suite(seed)?,
            verify::architecture_suite(seed)?,
        ])?,
    }
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    if err.is_io() {
        3
    } else if err.is_numerical() {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
