//! Command-line surface: demo generation, value training, benchmark, report and trace.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::bench::{self, BenchConfig};
use crate::demogen::{generate_demos, read_dataset, write_dataset};
use crate::deploy::{run_episode, DeployConfig};
use crate::error::{Error, Result};
use crate::graspworld::{ScenarioConfig, Variant};
use crate::monitor::{write_trace_rows, MonitorConfig};
use crate::policy::{build_policy, PolicyParams};
use crate::rng::SeedStream;
use crate::valuefn::{train, Backend, TrainConfig, ValueModel};

const SCHEMAS: &str = "\
Files:
  demos (.jsonl)   line 1: {\"format\":\"retrial-demos\",\"version\":1,\"variant\",\"seed\",\"count\",
                    \"mean_length\",\"feature_mean\"[15],\"feature_std\"[15]}
                   then one trajectory per line: {\"id\",\"hidden\":{...},\"steps\":[{\"obs\"[15],
                    \"proprio\"[3],\"action\"[3],\"reward\":-1|0}]}
  value model      {\"backend\",\"input_dim\",\"hidden_dim\",\"output_dim\",\"w1\",\"b1\",\"w2\",\"b2\",
                    \"feature_mean\",\"feature_std\",\"metadata\"{dataset_hash,steps,seed,...}}
  bench config     {\"variants\":[\"blocked\",...],\"methods\":[\"base_no_recovery\",\"interval_recovery\",
                    \"ours_no_skew\",\"ours_full\"],\"trials_per_seed\":100,\"seeds\":[0,1,2],
                    \"dataset\":path,\"value_models\":[path per seed],\"out_dir\":path?,
                    \"scenario\":{...},\"deploy\":{...},\"policy\":{...},\"interval_buffer\":0.25,
                    \"keep_traces\":false,\"threads\":null}
                   relative paths resolve against the config file's directory
  eval outputs     summary.json, trials.jsonl, summary.csv, success.svg, recovery_histogram.svg
  trace (.csv)     step,delta,threshold,triggered

Exit codes: 0 success, 1 usage error, 2 runtime error.";

#[derive(Debug, Parser)]
#[command(name = "retrial", version, about = "Value-guided recovery for chunked imitation policies", after_long_help = SCHEMAS, after_help = SCHEMAS)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate expert demonstrations.
    GenDemos {
        #[arg(long, default_value = "train")]
        variant: Variant,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a value model on demonstrations.
    TrainValue {
        #[arg(long)]
        demos: PathBuf,
        #[arg(long, default_value = "categorical")]
        backend: Backend,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20_000)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the matched-pair benchmark and write the report.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild the report from a trials.jsonl file.
    Report {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the monitor trace of one monitored episode as CSV.
    Trace {
        #[arg(long)]
        demos: PathBuf,
        #[arg(long)]
        value: PathBuf,
        #[arg(long = "scenario-seed", default_value_t = 0)]
        scenario_seed: u64,
        #[arg(long, default_value = "adversarial_slip")]
        variant: Variant,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_bench_config(path: &Path) -> Result<BenchConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = BenchConfig::from_json(&text)?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(cfg)
}

pub fn execute(cmd: Command) -> Result<String> {
    match cmd {
        Command::GenDemos {
            variant,
            count,
            seed,
            out,
        } => {
            let ds = generate_demos(&ScenarioConfig::new(variant), count, SeedStream::new(seed, 0))?;
            write_dataset(&ds, &out)?;
            Ok(format!(
                "wrote {} trajectories (mean length {:.2}) to {}",
                ds.len(),
                ds.meta.mean_length,
                out.display()
            ))
        }
        Command::TrainValue {
            demos,
            backend,
            seed,
            steps,
            out,
        } => {
            let ds = read_dataset(&demos)?;
            let cfg = TrainConfig {
                seed,
                steps,
                ..TrainConfig::default()
            };
            let model = train::<f64>(&ds, backend, &cfg)?;
            model.save(&out)?;
            Ok(format!(
                "trained {:?} model: loss {:.4} -> {:.4}, saved to {}",
                backend,
                model.meta.initial_loss,
                model.meta.final_loss,
                out.display()
            ))
        }
        Command::Eval { config, out } => {
            let cfg = load_bench_config(&config)?;
            let out = out
                .or_else(|| cfg.out_dir.clone())
                .ok_or_else(|| Error::Usage("eval needs --out or out_dir in the config".into()))?;
            let records = bench::run_matched(&cfg)?;
            let summary = bench::summarize(&records)?;
            bench::write_report(&summary, &records, &out)?;
            let mut msg = format!("{} trials written to {}\n", records.len(), out.display());
            for r in &summary.rows {
                msg.push_str(&format!(
                    "{:<18} {:<18} success {:.3} ± {:.3}  steps {:.1}  recoveries {:.2}\n",
                    r.variant.name(),
                    r.method.name(),
                    r.success_mean,
                    r.success_std,
                    r.steps_mean,
                    r.recoveries_mean
                ));
            }
            Ok(msg)
        }
        Command::Report { records, out } => {
            let records = bench::read_records(&records)?;
            let summary = bench::summarize(&records)?;
            bench::write_report(&summary, &records, &out)?;
            Ok(format!(
                "report for {} trials written to {}",
                records.len(),
                out.display()
            ))
        }
        Command::Trace {
            demos,
            value,
            scenario_seed,
            variant,
            out,
        } => {
            let ds = read_dataset(&demos)?;
            let model = ValueModel::<f64>::load(&value)?;
            let policy = build_policy(&ds, PolicyParams::default())?;
            let cfg = DeployConfig {
                monitor: MonitorConfig::new(model.backend, ds.meta.mean_length),
                ..DeployConfig::default()
            };
            let result = run_episode(
                &ScenarioConfig::new(variant),
                &policy,
                &model,
                &cfg,
                SeedStream::new(scenario_seed, 0),
            )?;
            let file = fs::File::create(&out).map_err(|e| Error::io(&out, e))?;
            write_trace_rows(&result.trace, std::io::BufWriter::new(file)).map_err(|e| Error::io(&out, e))?;
            Ok(format!(
                "episode {} after {} steps with {} recoveries; trace written to {}",
                if result.success { "succeeded" } else { "failed" },
                result.steps,
                result.recoveries,
                out.display()
            ))
        }
    }
}

/// Parse `argv` and run; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(msg) => {
            println!("{}", msg.trim_end());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                1
            } else {
                2
            }
        }
    }
}
