use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use isac_core::dataset;
use isac_core::pipeline::{self, RunConfig, PGM_FLOOR_DB};
use log::info;

/// Ray-traced ISAC channel simulator.
#[derive(Parser)]
#[command(name = "isac", version, about)]
struct Cli {
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true, env = "ISAC_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline and write the output directory.
    Run {
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run the SNR sweep and print the aggregated table as CSV.
    Sweep {
        config: PathBuf,
        /// Write the table here instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Trace every frame and print the path dump.
    TraceDebug {
        config: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Export the images and metrics stored in a record.
    Convert {
        record: PathBuf,
        #[command(flatten)]
        format: Format,
        /// Directory for the exported files; defaults to the record's directory.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Format {
    #[arg(long)]
    csv: bool,
    #[arg(long)]
    pgm: bool,
}

fn load(path: &Path) -> Result<RunConfig> {
    RunConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run(config: &Path, output: Option<PathBuf>) -> Result<()> {
    let config = load(config)?;
    let dir = output.unwrap_or_else(|| config.output_path());
    let started = Instant::now();
    let out = pipeline::run(&config).context("run failed")?;
    pipeline::write_outputs(&out, &dir).with_context(|| format!("writing {}", dir.display()))?;
    info!("wrote {} in {:.2?}", dir.display(), started.elapsed());
    println!(
        "{} frames, {} metric rows, {} images -> {}",
        out.record.frames.len(),
        out.record.metrics.len(),
        out.record.images.len(),
        dir.display()
    );
    Ok(())
}

fn sweep(config: &Path, output: Option<PathBuf>) -> Result<()> {
    let config = load(config)?;
    let rows = pipeline::metric_sweep(&config).context("sweep failed")?;
    let mut w = sink(output.as_deref())?;
    pipeline::write_sweep_csv(&rows, &mut w)?;
    w.flush()?;
    Ok(())
}

fn trace_debug(config: &Path, output: Option<PathBuf>) -> Result<()> {
    let config = load(config)?;
    let mut w = sink(output.as_deref())?;
    let count = pipeline::trace_debug(&config, &mut w).context("trace failed")?;
    w.flush()?;
    info!("{count} paths");
    Ok(())
}

fn convert(record: &Path, format: Format, output: Option<PathBuf>) -> Result<()> {
    let rec =
        dataset::read_record(record).with_context(|| format!("reading {}", record.display()))?;
    let dir = output.unwrap_or_else(|| record.parent().map(Path::to_path_buf).unwrap_or_default());
    fs::create_dir_all(&dir)?;
    for img in &rec.images {
        let stem = pipeline::image_file_stem(&img.name);
        let mut bytes = Vec::new();
        if format.pgm {
            img.image.write_pgm(&mut bytes, PGM_FLOOR_DB)?;
            fs::write(dir.join(format!("{stem}.pgm")), &bytes)?;
        } else {
            img.image.write_csv(&mut bytes)?;
            fs::write(dir.join(format!("{stem}.csv")), &bytes)?;
        }
    }
    if format.csv {
        let mut bytes = Vec::new();
        dataset::write_metrics_csv(&rec.metrics, &mut bytes)?;
        fs::write(dir.join("metrics.csv"), bytes)?;
    }
    println!("{} images -> {}", rec.images.len(), dir.display());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker pool")?;
    }
    match cli.command {
        Command::Run { config, output } => run(&config, output),
        Command::Sweep { config, output } => sweep(&config, output),
        Command::TraceDebug { config, output } => trace_debug(&config, output),
        Command::Convert {
            record,
            format,
            output,
        } => convert(&record, format, output),
    }
}
