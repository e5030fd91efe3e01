use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mmreid::config::{AdapterChoice, Overrides, PipelineConfig};
use mmreid::dataset::Dataset;
use mmreid::error::{Error, Result};
use mmreid::eval::{self, FidelitySummary, TruthIndex};
use mmreid::exposure::ExposureRecord;
use mmreid::formats::{self, AssociationRecord};
use mmreid::harness;
use mmreid::pipeline::{self, RunReport};
use mmreid::reid::ReidMode;
use mmreid::scenario::lab_replica;
use mmreid::view_adapt::bridge;

pub const ASSOCIATIONS_FILE: &str = "association.jsonl";
pub const EXPOSURES_FILE: &str = "exposure.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const HEATMAP_FILE: &str = "pm_heatmap.csv";
pub const METRICS_FILE: &str = "metrics.csv";

/// Multi-radar worker re-identification and dust exposure estimation.
///
/// Settings resolve as flag, then environment variable, then config file,
/// then built-in default.
#[derive(Debug, Parser)]
#[command(name = "mmreid", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Pipeline/scene config (TOML).
    #[arg(long, global = true, env = "MMREID_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, global = true, env = "MMREID_SEED")]
    seed: Option<u64>,
    /// analytic, off or bridge:<addr> (host:port or exec:<command>).
    #[arg(long, global = true, env = "MMREID_ADAPTER")]
    adapter: Option<AdapterChoice>,
    /// full, distance-only or correlation-only.
    #[arg(long, global = true, env = "MMREID_REID")]
    reid: Option<ReidMode>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a scene to a dataset directory.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        /// Scene length; overrides the config.
        #[arg(long)]
        duration: Option<f64>,
        /// Lab-replica worker count, used when no config is given.
        #[arg(long, default_value_t = 4)]
        users: usize,
    },
    /// Run the pipeline on a dataset.
    Run {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write every radar's signatures as an RDHM dump.
        #[arg(long)]
        dump_signatures: bool,
    },
    /// Score run outputs against a dataset's ground truth.
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// Directory written by `run`.
        #[arg(long)]
        predictions: PathBuf,
        /// Where metrics.csv goes; defaults to the predictions directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// F1 against user count for every association variant.
    Sweep {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "2,3,4")]
        users: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long, default_value_t = 20.0)]
        duration: f64,
    },
    /// Time every stage over a simulated run.
    Bench {
        #[arg(long, default_value_t = 1000)]
        frames: usize,
        #[arg(long, default_value_t = 4)]
        users: usize,
        /// Write the report here as JSON as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Identity adapter speaking the bridge protocol on stdin/stdout.
    #[command(hide = true)]
    AdapterEcho,
}

impl GlobalArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            adapter: self.adapter.clone(),
            reid: self.reid,
            duration_s: None,
        }
    }

    fn file_config(&self) -> Result<Option<PipelineConfig>> {
        self.config.as_deref().map(PipelineConfig::load).transpose()
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Simulate { out, duration, users } => {
            let mut cfg = match g.file_config()? {
                Some(c) => c,
                None => lab_replica(users, g.seed.unwrap_or(0))?,
            };
            g.overrides().apply(&mut cfg);
            if let Some(d) = duration {
                cfg.duration_s = d;
            }
            cfg.validate()?;
            Dataset::simulate(&cfg)?.write(&out)?;
            println!("wrote {} frames per radar to {}", cfg.frame_count(), out.display());
            Ok(())
        }
        Command::Run { data, out, dump_signatures } => {
            let mut ds = Dataset::read(&data, g.file_config()?)?;
            g.overrides().apply(&mut ds.config);
            let res = pipeline::run(&ds)?;
            formats::write_jsonl(&out.join(ASSOCIATIONS_FILE), &res.associations)?;
            formats::write_jsonl(&out.join(EXPOSURES_FILE), &res.exposures)?;
            formats::write_heatmap_csv(&out.join(HEATMAP_FILE), &res.fields)?;
            formats::write_json(&out.join(REPORT_FILE), &res.report)?;
            if let Some(e) = &res.report.eval {
                eval::write_metrics_csv(&out.join(METRICS_FILE), e)?;
            }
            if dump_signatures {
                for (id, sigs) in pipeline::signatures(&ds)? {
                    formats::write_signature_dump(&out.join(format!("signatures_{id}.rdhm")), &sigs)?;
                }
            }
            print_summary(&res.report);
            Ok(())
        }
        Command::Eval { data, predictions, out } => {
            let ds = Dataset::read(&data, g.file_config()?)?;
            let truth = ds
                .truth
                .as_ref()
                .ok_or_else(|| Error::Data(format!("{} has no ground truth", data.display())))?;
            let records: Vec<AssociationRecord> = formats::read_jsonl(&predictions.join(ASSOCIATIONS_FILE))?;
            let exposures: Vec<ExposureRecord> = read_if_present(&predictions.join(EXPOSURES_FILE))?;
            let cfg = &ds.config;
            let fields = eval::pm_fields(&ds.pm, cfg.exposure.window_s, &cfg.exposure.field_mode()?)?;
            let labels = TruthIndex::new(truth, cfg);
            let summary = eval::evaluate(&labels, &records, &exposures, &fields, FidelitySummary::default())?;
            let path = out.unwrap_or(predictions).join(METRICS_FILE);
            eval::write_metrics_csv(&path, &summary)?;
            println!("{}", serde_json::to_string_pretty(&summary).map_err(|e| Error::Data(e.to_string()))?);
            Ok(())
        }
        Command::Sweep { out, users, seeds, duration } => {
            let seed0 = g.seed.unwrap_or(0);
            let seeds: Vec<u64> = (seed0..seed0 + seeds).collect();
            let rows = harness::reid_sweep(&users, &seeds, duration)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            harness::write_sweep_csv(&out.join("reid_f1_by_users.csv"), &rows)?;
            formats::write_jsonl(&out.join("sweep.jsonl"), &rows)?;
            for &u in &users {
                let cells: Vec<String> = harness::Variant::ALL
                    .iter()
                    .filter_map(|&v| harness::mean_f1(&rows, u, v).map(|f| format!("{} {f:.3}", v.name())))
                    .collect();
                println!("{u} users: {}", cells.join(", "));
            }
            Ok(())
        }
        Command::Bench { frames, users, out } => {
            let mut cfg = match g.file_config()? {
                Some(c) => c,
                None => lab_replica(users, g.seed.unwrap_or(0))?,
            };
            g.overrides().apply(&mut cfg);
            let report = harness::bench(&cfg, frames)?;
            let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Data(e.to_string()))?;
            if let Some(p) = out {
                formats::write_json(&p, &report)?;
            }
            println!("{text}");
            Ok(())
        }
        Command::AdapterEcho => {
            let azimuths: Vec<f32> = (0..24).map(|k| (k as f32 * 15.0).to_radians()).collect();
            bridge::serve(std::io::stdin().lock(), std::io::stdout().lock(), &azimuths, |_, _, p| p)
        }
    }
}

fn read_if_present<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if path.exists() {
        formats::read_jsonl(path)
    } else {
        Ok(Vec::new())
    }
}

fn print_summary(r: &RunReport) {
    println!(
        "{} frames, {} radars, {} detections, {} identities, adapter {}",
        r.frames, r.radars, r.detections, r.identities, r.adapter
    );
    let l = &r.latency;
    println!(
        "mean ms: clustering {:.2}, signatures {:.2}, adaptation {:.2}, association {:.2}",
        l.clustering.mean_ms, l.signatures.mean_ms, l.adaptation.mean_ms, l.association.mean_ms
    );
    if let Some(e) = &r.eval {
        println!(
            "cluster accuracy {:.3}, localization MAE {:.3} m, re-ID F1 {:.3}",
            e.cluster_count_accuracy, e.localization_mae_m, e.reid_f1
        );
    }
}
