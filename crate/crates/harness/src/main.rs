use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::bail;
use clap::{Args, Parser, Subcommand};
use fedcog_harness::config::ExperimentConfig;
use fedcog_harness::dataset::write_partition;
use fedcog_harness::experiment::{evaluate_modes, load_graph, lnnc_audit, partition_graph, run_experiment, verify_equivalence};
use fedcog_core::partition::partition_stats;

#[derive(Parser)]
#[command(name = "fedcog", version, about = "Federated propagation and training over partitioned graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Replace every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.override_seed(seed);
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Partition the dataset and print partition statistics.
    Partition {
        #[command(flatten)]
        common: Common,
        /// Write `node_id<TAB>party_id` lines here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Count exposed nodes and the edges LNNC adds to repair them.
    LnncAudit {
        #[command(flatten)]
        common: Common,
    },
    /// Check federated propagation against the centralized computation.
    Verify {
        #[command(flatten)]
        common: Common,
    },
    /// Run the configured pipeline and print the report.
    Train {
        #[command(flatten)]
        common: Common,
        /// Comma-separated learning rates; the one with the lowest final
        /// training loss is reported.
        #[arg(long, value_delimiter = ',')]
        lr_grid: Vec<f64>,
    },
    /// Compare federated, disconnected and centralized propagation.
    Evaluate {
        #[command(flatten)]
        common: Common,
    },
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Partition { common, out } => {
            let cfg = common.load()?;
            let g = load_graph(&cfg)?;
            let p = partition_graph(&cfg, &g)?;
            if let Some(path) = out {
                write_partition(&p, &path)?;
            }
            println!("{}", serde_json::to_string_pretty(&partition_stats(&p, &g))?);
        }
        Command::LnncAudit { common } => {
            let summary = lnnc_audit(&common.load()?)?;
            println!("party\texposed\tadded\tskipped");
            for row in &summary.parties {
                println!("{}\t{}\t{}\t{}", row.party, row.exposed_before, row.edges_added, row.skipped);
            }
            println!(
                "total\t{}\t{}\t{}\t(exposed after repair: {})",
                summary.exposed_before, summary.edges_added, summary.skipped, summary.exposed_after
            );
        }
        Command::Verify { common } => {
            let rep = verify_equivalence(&common.load()?, None)?;
            for c in &rep.per_layer {
                println!(
                    "layer {}: max relative error {:.3e} (node {}, party {})",
                    c.layer, c.max_relative_error, c.worst_node, c.worst_party
                );
            }
            println!(
                "{} {} layers={} parts={} tolerance={:.0e}",
                if rep.passed { "PASS" } else { "FAIL" },
                rep.variant,
                rep.layers,
                rep.parts,
                rep.tolerance
            );
            return Ok(rep.passed);
        }
        Command::Train { common, lr_grid } => {
            let cfg = common.load()?;
            let rep = if lr_grid.is_empty() {
                run_experiment(&cfg)?
            } else {
                let mut best = None;
                for lr in lr_grid {
                    let mut c = cfg.clone();
                    c.train.lr = lr;
                    c.output = None;
                    c.validate()?;
                    let rep = run_experiment(&c)?;
                    let loss = rep.history.last().map_or(f64::INFINITY, |r| r.loss);
                    eprintln!("lr {lr}: final loss {loss:.6}, {} {:.4}", rep.metric_name, rep.final_metric);
                    if best.as_ref().is_none_or(|(l, _)| loss < *l) {
                        best = Some((loss, rep));
                    }
                }
                let Some((_, rep)) = best else { bail!("empty learning-rate grid") };
                if let Some(path) = &cfg.output {
                    rep.write(path)?;
                }
                rep
            };
            println!("{}", rep.to_json()?);
        }
        Command::Evaluate { common } => {
            let reports = evaluate_modes(&common.load()?)?;
            println!("mode\tmetric\tvalue\tprop_floats\ttrain_floats");
            for r in &reports {
                println!(
                    "{}\t{}\t{:.4}\t{}\t{}",
                    r.mode.name(),
                    r.metric_name,
                    r.final_metric,
                    r.propagation_cost.floats_sent,
                    r.training_floats_sent
                );
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    // exit quietly when the reader of stdout goes away (e.g. `| head`)
    let default_hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(move |info| {
        let msg = info.payload().downcast_ref::<String>().map(String::as_str).unwrap_or("");
        if msg.contains("Broken pipe") {
            std::process::exit(0);
        }
        default_hook(info);
    }));
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
