use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand, ValueEnum};
use gammaquant::data::{
    generate_synthetic, load_csv, load_dataset_dir, write_csv, write_dataset, SynthConfig,
};
use gammaquant::harness::{
    evaluate_checkpoint, export_curves, train_joint_jobs, trajectory_csv, DataSource, TrainedRun,
};
use gammaquant::imaging::{quantize_mosaic, read_pgm, write_pgm};
use gammaquant::quant::materialize_lut;
use gammaquant::{
    Checkpoint, Error, ExperimentConfig, ExperimentResult, QuantizerSpec, Recording, Result,
};

#[derive(Parser)]
#[command(
    name = "gquant",
    version,
    about = "Learnable ADC quantization experiments"
)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic accelerometer dataset (CSV per subject + manifest).
    Gen {
        /// Synthetic generator config (JSON); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's RNG seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Jointly train quantizers and classifiers over LOSO folds.
    Train {
        /// Experiment config (JSON); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory; overrides the config's data source.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Replaces the config's seed list (repeatable).
        #[arg(long = "seed")]
        seeds: Vec<u64>,
    },
    /// Score a saved checkpoint on a dataset directory.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Subject to evaluate; defaults to the checkpoint's held-out subject.
        #[arg(long, conflicts_with = "all_subjects")]
        subject: Option<String>,
        #[arg(long)]
        all_subjects: bool,
        #[arg(long, default_value_t = 0.5)]
        overlap: f64,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply a quantizer to a CSV recording or a PGM mosaic.
    Quantize {
        /// Quantizer spec: a JSON file or inline JSON.
        #[arg(long)]
        spec: String,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// What to write for CSV input.
        #[arg(long, value_enum, default_value_t = Emit::Codes)]
        emit: Emit,
    },
    /// Export quantizer transfer curves as CSV.
    Curves {
        /// Quantizer spec (repeatable): a JSON file or inline JSON.
        #[arg(long = "spec", required = true)]
        specs: Vec<String>,
        #[arg(long, default_value_t = 1024)]
        samples: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the exhaustive lookup table of a quantizer.
    ExportLut {
        #[arg(long)]
        spec: String,
        #[arg(long, default_value_t = 12)]
        in_bits: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Side-by-side macro-F1 table of two result files.
    Compare {
        #[arg(long)]
        result_a: PathBuf,
        #[arg(long)]
        result_b: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Emit {
    /// Integer output codes.
    Codes,
    /// A representative input value for each code.
    Values,
}

fn parse_spec(arg: &str) -> Result<QuantizerSpec> {
    if arg.trim_start().starts_with('{') {
        return serde_json::from_str(arg).map_err(|e| Error::Config(format!("--spec: {e}")));
    }
    let path = Path::new(arg);
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.into(),
        line: e.line(),
        msg: e.to_string(),
    })
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.into(),
            source: e,
        }),
        None => Ok(()),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn run_name(run: &TrainedRun) -> String {
    let r = &run.record;
    let bits = r.bits.map_or("raw".to_string(), |b| format!("{b}bit"));
    format!("{}_{bits}_{}_seed{}", r.variant, r.subject, r.seed)
}

fn summary_table(res: &ExperimentResult) -> String {
    let mut s = format!(
        "{:<32} {:>5} {:>16} {:>7}\n",
        "variant", "bits", "macro-F1", "failed"
    );
    for a in &res.aggregates {
        let bits = a.bits.map_or("-".to_string(), |b| b.to_string());
        let _ = writeln!(
            s,
            "{:<32} {:>5} {:>16} {:>7}",
            a.variant,
            bits,
            format!("{:.4} ± {:.4}", a.mean_macro_f1, a.std_macro_f1),
            a.failed_runs
        );
    }
    s
}

fn compare_table(a: &ExperimentResult, b: &ExperimentResult) -> String {
    let mut depths: Vec<Option<u32>> = a
        .aggregates
        .iter()
        .chain(&b.aggregates)
        .map(|g| g.bits)
        .collect();
    depths.sort();
    depths.dedup();
    let mut s = format!("{:<36}", "variant");
    for d in &depths {
        let h = d.map_or("raw".to_string(), |b| format!("{b}-bit"));
        let _ = write!(s, " {h:>17}");
    }
    s.push('\n');
    for (tag, res) in [("A", a), ("B", b)] {
        let mut names: Vec<&str> = Vec::new();
        for g in &res.aggregates {
            if !names.contains(&g.variant.as_str()) {
                names.push(&g.variant);
            }
        }
        for name in names {
            let _ = write!(s, "{:<36}", format!("{tag}: {name}"));
            for d in &depths {
                let cell = res.aggregate(name, *d).map_or("-".to_string(), |g| {
                    format!("{:.4} ± {:.4}", g.mean_macro_f1, g.std_macro_f1)
                });
                let _ = write!(s, " {cell:>17}");
            }
            s.push('\n');
        }
    }
    s
}

fn quantize_recording(rec: &Recording, spec: &QuantizerSpec, emit: Emit) -> Result<Recording> {
    let mut out = rec.clone();
    for v in out.samples.data_mut() {
        let c = spec.quantize(*v)?;
        *v = match emit {
            Emit::Codes => f64::from(c.0),
            Emit::Values => spec.reconstruct(c),
        };
    }
    Ok(out)
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Gen { config, out, seed } => {
            let mut cfg = match config {
                Some(p) => {
                    let text = fs::read_to_string(&p).map_err(|e| Error::Io {
                        path: p.clone(),
                        source: e,
                    })?;
                    serde_json::from_str::<SynthConfig>(&text).map_err(|e| Error::Parse {
                        path: p.clone(),
                        line: e.line(),
                        msg: e.to_string(),
                    })?
                }
                None => SynthConfig::default(),
            };
            if let Some(s) = seed {
                cfg.rng_seed = s;
            }
            let recs = generate_synthetic(&cfg)?;
            let manifest = write_dataset(&out, &recs, Some(&cfg))?;
            println!(
                "wrote {} subjects, {} classes to {}",
                manifest.files.len(),
                manifest.class_names.len(),
                out.display()
            );
        }
        Cmd::Train {
            config,
            data,
            out,
            jobs,
            seeds,
        } => {
            let mut cfg = match &config {
                Some(p) => ExperimentConfig::load(p)?,
                None => ExperimentConfig::default(),
            };
            if !seeds.is_empty() {
                cfg.seeds = seeds;
            }
            if data.is_none() && cfg.data.is_none() {
                log::info!("no dataset given; using the default synthetic generator");
                cfg.data = Some(DataSource::Synthetic(SynthConfig::default()));
            }
            let ds = cfg.load_dataset(data.as_deref())?;
            log::info!(
                "{} windows from {} subjects",
                ds.len(),
                ds.subject_ids.len()
            );
            let outcome = train_joint_jobs(&cfg, &ds, jobs.max(1))?;
            let result_path = out.join("result.json");
            ensure_parent(&result_path)?;
            outcome.result.save(&result_path)?;
            for run in &outcome.runs {
                let name = run_name(run);
                write_file(
                    &out.join("trajectories").join(format!("{name}.csv")),
                    &trajectory_csv(run),
                )?;
                if let Some(ck) = &run.checkpoint {
                    let p = out.join("checkpoints").join(format!("{name}.json"));
                    ensure_parent(&p)?;
                    ck.save(&p)?;
                }
            }
            print!("{}", summary_table(&outcome.result));
        }
        Cmd::Eval {
            checkpoint,
            data,
            subject,
            all_subjects,
            overlap,
            out,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let recs = load_dataset_dir(&data)?;
            let subject = if all_subjects {
                None
            } else {
                subject.or_else(|| ck.validation_subject.clone())
            };
            let rep = evaluate_checkpoint(&ck, &recs, overlap, subject.as_deref())?;
            println!(
                "{} windows from {}: macro-F1 {:.4}",
                rep.windows,
                rep.subjects.join(", "),
                rep.macro_f1
            );
            for (name, f1) in ck.class_names.iter().zip(&rep.per_class_f1) {
                match f1 {
                    Some(v) => println!("  {name:<16} {v:.4}"),
                    None => println!("  {name:<16} absent"),
                }
            }
            if let Some(p) = out {
                write_file(&p, &(serde_json::to_string_pretty(&rep)? + "\n"))?;
            }
        }
        Cmd::Quantize {
            spec,
            input,
            out,
            emit,
        } => {
            let spec = parse_spec(&spec)?;
            let is_pgm = input
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
            if is_pgm {
                let q = quantize_mosaic(&read_pgm(&input)?, &spec)?;
                ensure_parent(&out)?;
                write_pgm(&q, &out)?;
            } else {
                let rec = load_csv(&input, None)?;
                ensure_parent(&out)?;
                write_csv(&quantize_recording(&rec, &spec, emit)?, &out)?;
            }
        }
        Cmd::Curves {
            specs,
            samples,
            out,
        } => {
            let specs = specs
                .iter()
                .map(|s| parse_spec(s))
                .collect::<Result<Vec<_>>>()?;
            write_file(&out, &export_curves(&specs, samples)?)?;
        }
        Cmd::ExportLut { spec, in_bits, out } => {
            let lut = materialize_lut(&parse_spec(&spec)?, in_bits)?;
            ensure_parent(&out)?;
            lut.write(&out)?;
        }
        Cmd::Compare { result_a, result_b } => {
            let a = ExperimentResult::load(&result_a)?;
            let b = ExperimentResult::load(&result_b)?;
            println!("A = {}", result_a.display());
            println!("B = {}", result_b.display());
            print!("{}", compare_table(&a, &b));
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Data(_)
        | Error::Domain(_)
        | Error::Parse { .. }
        | Error::Io { .. }
        | Error::Json(_) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
