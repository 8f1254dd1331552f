use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lithoroute::config::PipelineConfig;
use lithoroute::pipeline;
use lithoroute::synth::{write_synthetic_facies, SynthSpec};
use lithoroute::{Error, Result};

#[derive(Parser)]
#[command(name = "lithoroute", version, about = "Confidence-routed lithology classification")]
struct Cli {
    /// Pipeline config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's output root.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load the table and write the canonical dataset bundle.
    Ingest,
    /// Train the base classifier.
    TrainBase,
    /// Compute the coverage curve and the routing threshold.
    Calibrate,
    /// Route, reason and refine every test well.
    Classify,
    /// Score the classify run, optionally against other run directories.
    Evaluate {
        #[arg(long, num_args = 1..)]
        compare: Vec<PathBuf>,
    },
    /// Run every stage and evaluate.
    Run,
    /// One full run per value of a dotted config key.
    Sweep {
        #[arg(long)]
        param: String,
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        values: Vec<String>,
    },
    /// Write a synthetic table in the benchmark's column layout.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 6)]
        wells: usize,
        #[arg(long, default_value_t = 400)]
        samples: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config <path> is required".into()))?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.run_dir {
        cfg.output_root = dir.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    if let Command::Synth { out, wells, samples, seed } = &cli.command {
        let spec = SynthSpec {
            wells: *wells,
            samples_per_well: *samples,
            seed: *seed,
        };
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::Io { path: parent.into(), source: e })?;
        }
        let file = std::fs::File::create(out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
        write_synthetic_facies(file, &spec)?;
        println!("{}", out.display());
        return Ok(());
    }
    let cfg = load_config(cli)?;
    let dir = match &cli.command {
        Command::Ingest => pipeline::cmd_ingest(&cfg)?,
        Command::TrainBase => pipeline::cmd_train_base(&cfg)?,
        Command::Calibrate => pipeline::cmd_calibrate(&cfg)?,
        Command::Classify => pipeline::cmd_classify(&cfg)?,
        Command::Evaluate { compare } => {
            let (dir, r) = pipeline::cmd_evaluate(&cfg, compare)?;
            println!(
                "f1 {:.4}  precision {:.4}  recall {:.4}  flying points {:.4}  coverage {:.4}",
                r.f1, r.precision, r.recall, r.flying_point_ratio, r.coverage
            );
            dir
        }
        Command::Run => {
            let run = pipeline::run_pipeline(&cfg)?;
            let r = &run.report;
            println!(
                "f1 {:.4}  flying points {:.4}  coverage {:.4}  routed windows {}",
                r.f1, r.flying_point_ratio, r.coverage, r.routed_windows
            );
            run.classify_dir
        }
        Command::Sweep { param, values } => pipeline::cmd_sweep(&cfg, param, values)?,
        Command::Synth { .. } => unreachable!("handled above"),
    };
    println!("{}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.class());
            ExitCode::FAILURE
        }
    }
}
