use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use protcomp::composer::{compose, refinalize, tamper_program, CompositionConfig, ProtectedFile};
use protcomp::error::{Error, Result};
use protcomp::graph::{build_graph, export_dot, find_cycles};
use protcomp::ilp::{build_model, export_lp, ModelOptions};
use protcomp::metrics::{compare, corpus, write_comparison_csv};
use protcomp::passes::propose_all;
use protcomp::program::{generate_program, load_program, save_program, InstrId};

#[derive(Parser)]
#[command(
    name = "protcomp",
    version,
    about = "Compose integrity protections without conflicts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic program.
    Gen {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        functions: usize,
        #[arg(long, default_value_t = 3)]
        blocks: usize,
        #[arg(long, default_value_t = 0.6)]
        det_ratio: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Propose, select, apply and finalize protections.
    Compose {
        program: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(short, long, default_value = "out")]
        output: PathBuf,
    },
    /// Write the defense graph of all proposals as DOT.
    Graph {
        program: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dot: PathBuf,
        /// Also write node/arc/cycle counts as JSON.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Write the selection model in CPLEX LP format.
    ExportLp {
        program: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Re-run finalization on a protected program and verify every guard.
    Simulate { protected: PathBuf },
    /// Modify one instruction and list the guards that notice.
    Tamper {
        protected: PathBuf,
        #[arg(long = "inst")]
        instruction: u32,
    },
    /// Heuristic baseline versus optimized composition over a synthetic corpus.
    Compare {
        #[arg(long)]
        corpus_seed: u64,
        #[arg(long, default_value_t = 30)]
        count: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn config(path: &Option<PathBuf>) -> Result<CompositionConfig> {
    match path {
        Some(p) => CompositionConfig::load(p),
        None => Ok(CompositionConfig::default()),
    }
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable")
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Gen {
            seed,
            functions,
            blocks,
            det_ratio,
            output,
        } => {
            if functions == 0 || blocks == 0 {
                return Err(Error::Validation(
                    "--functions and --blocks must be >= 1".into(),
                ));
            }
            if !(0.0..=1.0).contains(&det_ratio) {
                return Err(Error::Validation("--det-ratio must lie in [0, 1]".into()));
            }
            let p = generate_program(seed, functions, blocks, det_ratio);
            save_program(&p, &output)?;
            println!(
                "wrote {} ({} functions, {} instructions)",
                output.display(),
                p.functions.len(),
                p.instructions().count()
            );
        }
        Command::Compose {
            program,
            config: cfg,
            output,
        } => {
            let p = load_program(&program)?;
            let cfg = config(&cfg)?;
            let r = compose(&p, &cfg)?;
            fs::create_dir_all(&output).map_err(|source| Error::Io {
                path: output.display().to_string(),
                source,
            })?;
            write(
                &output.join("protected.json"),
                &r.protected_file().to_json(),
            )?;
            write(&output.join("report.json"), &json(&r.report()))?;
            write(&output.join("manifests.json"), &json(&r.proposed))?;
            write(&output.join("graph.dot"), &export_dot(&r.graph))?;
            if let Some((model, solution)) = &r.solved {
                write(&output.join("problem.lp"), &export_lp(model))?;
                write(&output.join("solution.json"), &solution.to_json())?;
            }
            println!(
                "{}: {} proposed, {} selected, {} cycle(s) broken, {} iteration(s), cost {:.3}",
                p.name,
                r.proposed.len(),
                r.selected.len(),
                r.initial_cycles.len(),
                r.iterations_used,
                r.metrics.estimated_cost
            );
        }
        Command::Graph {
            program,
            config: cfg,
            dot,
            summary,
        } => {
            let p = load_program(&program)?;
            let ms = propose_all(&p, &config(&cfg)?.pass_config()?)?;
            let g = build_graph(&ms, &p)?;
            write(&dot, &export_dot(&g))?;
            let s = g.summary();
            if let Some(path) = summary {
                write(&path, &json(&s))?;
            }
            println!(
                "{} nodes ({} manifests), {} dependency arcs, {} present arcs, {} cyclic SCCs",
                s.nodes, s.manifest_nodes, s.dependency_arcs, s.present_arcs, s.cyclic_sccs
            );
        }
        Command::ExportLp {
            program,
            config: cfg,
            output,
        } => {
            let p = load_program(&program)?;
            let cfg = config(&cfg)?;
            let ms = propose_all(&p, &cfg.pass_config()?)?;
            let g = build_graph(&ms, &p)?;
            let costs: BTreeMap<_, _> = ms.iter().map(|m| (m.id, m.cost)).collect();
            let model = build_model(
                &g,
                &ms,
                &find_cycles(&g),
                &cfg.requirements,
                &costs,
                ModelOptions::default(),
            )?;
            write(&output, &export_lp(&model))?;
            println!(
                "wrote {} ({} variables, {} constraints)",
                output.display(),
                model.vars.len(),
                model.constraints.len()
            );
        }
        Command::Simulate { protected } => {
            let file = ProtectedFile::load(&protected)?;
            return match refinalize(&file) {
                Ok((_, state)) => {
                    println!("PASS ({} slots verified)", state.slots.len());
                    Ok(true)
                }
                Err(
                    e @ (Error::FalseAlarm(_)
                    | Error::FinalizationInconsistent(_)
                    | Error::CycleRemains(_)),
                ) => {
                    println!("FAIL {e}");
                    Ok(false)
                }
                Err(e) => Err(e),
            };
        }
        Command::Tamper {
            protected,
            instruction,
        } => {
            let file = ProtectedFile::load(&protected)?;
            let hits = tamper_program(&file.program(), &file.manifests, InstrId(instruction))?;
            let ids: Vec<u32> = hits.iter().map(|m| m.0).collect();
            println!("{}", serde_json::to_string(&ids).expect("ids serialize"));
        }
        Command::Compare {
            corpus_seed,
            count,
            config: cfg,
            output,
        } => {
            let cfg = config(&cfg)?;
            let mut records = Vec::with_capacity(count);
            for p in corpus(corpus_seed, count) {
                records.push(compare(&p, &cfg)?);
            }
            write_comparison_csv(&records, &output)?;
            let mut d: Vec<f64> = records.iter().map(|r| r.decrease_pct).collect();
            d.sort_by(f64::total_cmp);
            let median = if d.is_empty() {
                0.0
            } else if d.len() % 2 == 1 {
                d[d.len() / 2]
            } else {
                (d[d.len() / 2 - 1] + d[d.len() / 2]) / 2.0
            };
            let mean = d.iter().sum::<f64>() / d.len().max(1) as f64;
            println!(
                "{} programs, decrease median {:.2}%, mean {:.2}%",
                records.len(),
                median,
                mean
            );
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("ERROR usage: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("ERROR {}: {}", e.code(), e.to_string().replace('\n', " "));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
