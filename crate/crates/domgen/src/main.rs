use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use domgen::experiment::{compare_summary, run_experiment, ExperimentConfig, ResultsTable, RunOptions, TableFormat};
use domgen::formats::cifar::load_cifar10_binary;
use domgen::formats::csv::{load_csv, CsvLayout};
use domgen::formats::dgim::save_dgim;
use domgen::formats::idx::load_idx;
use domgen::formats::{read_file, write_file};
use domgen_core::gradcheck::{run_gradcheck, GradCheckConfig, GradOp};

#[derive(Parser)]
#[command(name = "domgen", version, about = "Ensembles of small CNNs for single-source domain generalization")]
struct Cli {
    /// Overrides the config's global seed (gradcheck: the case seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Train every learner serially on one thread.
    #[arg(long, global = true)]
    single_context: bool,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum InputFormat {
    Idx,
    Cifar10,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Dgim,
}

#[derive(Subcommand)]
enum Command {
    /// Train, fuse and evaluate every enabled learner.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// No stage progress on stderr.
        #[arg(long)]
        quiet: bool,
    },
    /// Convert a dataset to the DGIM container.
    Convert {
        #[arg(long)]
        from: InputFormat,
        #[arg(long, default_value = "dgim")]
        to: OutputFormat,
        /// idx: images then labels file; cifar10: one or more batch files; csv: one file.
        #[arg(long, num_args = 1.., required = true)]
        input: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        /// csv only: image shape as C,H,W.
        #[arg(long, value_delimiter = ',')]
        shape: Option<Vec<usize>>,
        /// csv only: comma-separated class names.
        #[arg(long, value_delimiter = ',')]
        classes: Option<Vec<String>>,
    },
    /// Re-render a results CSV.
    Table {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, value_enum, default_value = "markdown")]
        format: TableFormat,
        /// Write here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Also print ensemble deltas against their members.
        #[arg(long)]
        summary: bool,
    },
    /// Finite-difference check of every backward kernel.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        configs: usize,
    },
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, quiet } => {
            let mut cfg = ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if let Some(dir) = cli.out_dir {
                cfg.output.dir = dir;
            }
            let opts = RunOptions {
                single_context: cli.single_context,
                verbose: !quiet,
            };
            let out = run_experiment(&cfg, &opts)?;
            print!("{}", out.table.render(TableFormat::Markdown)?);
            eprintln!("results: {}", out.csv_path.display());
        }
        Command::Convert {
            from,
            to: OutputFormat::Dgim,
            input,
            output,
            shape,
            classes,
        } => {
            let set = match from {
                InputFormat::Idx => {
                    let [images, labels] = input.as_slice() else {
                        bail!("idx conversion takes an images file and a labels file");
                    };
                    load_idx(images, labels)?
                }
                InputFormat::Cifar10 => load_cifar10_binary(&input)?,
                InputFormat::Csv => {
                    let [path] = input.as_slice() else {
                        bail!("csv conversion takes one file");
                    };
                    let shape = match shape.as_deref() {
                        None => None,
                        Some(&[c, h, w]) => Some([c, h, w]),
                        Some(_) => bail!("--shape takes exactly three values: C,H,W"),
                    };
                    let layout = CsvLayout {
                        shape,
                        class_names: classes,
                    };
                    load_csv(path, &layout)?
                }
            };
            save_dgim(&set, &output)?;
            eprintln!(
                "wrote {} images of {:?} in {} classes to {}",
                set.len(),
                set.image_shape(),
                set.num_classes(),
                output.display()
            );
        }
        Command::Table {
            results,
            format,
            output,
            summary,
        } => {
            let text = String::from_utf8(read_file(&results)?).context("results file is not UTF-8")?;
            let table = ResultsTable::parse_csv(&text)?;
            let rendered = table.render(format)?;
            match output {
                Some(p) => write_file(&p, rendered.as_bytes())?,
                None => print!("{rendered}"),
            }
            if summary {
                for s in compare_summary(&table) {
                    for c in &s.columns {
                        println!(
                            "{:<5} {:<7} {:.3}  vs mean {:+.4}  vs best {:+.4}",
                            s.name, c.column, c.value, c.delta_vs_mean, c.delta_vs_best
                        );
                    }
                }
            }
        }
        Command::Gradcheck { configs } => {
            let cfg = GradCheckConfig {
                configs_per_op: configs,
                seed: cli.seed.unwrap_or(0),
                ..GradCheckConfig::default()
            };
            let report = run_gradcheck(&cfg)?;
            for op in GradOp::ALL {
                let worst = report.worst(op).unwrap_or(0.0);
                let verdict = if worst <= report.tolerance { "ok" } else { "FAIL" };
                println!("{:<22} {} cases  worst rel. error {worst:.2e}  {verdict}", op.name(), configs);
            }
            if !report.passed() {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
