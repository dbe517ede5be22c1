use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use filterforward_harness::archive::Archive;
use filterforward_harness::config::Config;
use filterforward_harness::pipeline::ARCHIVE_DIR;
use filterforward_harness::{bench, costcmd, generate, pipeline, trainer, Error, Result};

/// Shared-feature video filtering: generate data, train classifiers, run the
/// pipeline, benchmark and inspect costs.
#[derive(Parser)]
#[command(name = "filterforward", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic bright-blob stream and its label file.
    Generate(Common),
    /// Train one microclassifier and write its weight file.
    Train(Common),
    /// Filter a stream: events, frame metadata, report and archive.
    Run(Common),
    /// Measure fps and multiply-adds per frame for each mode and count.
    Bench {
        #[command(flatten)]
        common: Common,
        /// CSV destination; defaults to `[bench] output`, else stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Extract frames around an archived event into a new stream file.
    Fetch {
        #[command(flatten)]
        common: Common,
        /// Archive directory; defaults to `<run.output_dir>/archive`.
        #[arg(long)]
        archive: Option<PathBuf>,
        #[arg(long, required_unless_present = "all")]
        mc: Option<String>,
        #[arg(long, required_unless_present = "all")]
        event: Option<u64>,
        #[arg(long, default_value_t = 0)]
        context: u64,
        /// Fetch the whole archived stream.
        #[arg(long, conflicts_with_all = ["mc", "event"])]
        all: bool,
        #[arg(long)]
        output: PathBuf,
    },
    /// Print the per-layer multiply-adds of a model.
    Cost {
        #[command(flatten)]
        common: Common,
        /// Weight file, or one of base, discrete, full-dnn, ffod, lbc, wlbc.
        #[arg(long)]
        model: String,
        #[arg(long, requires = "width")]
        height: Option<usize>,
        #[arg(long, requires = "height")]
        width: Option<usize>,
    },
}

fn print_json(value: &impl serde::Serialize) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("serializable")
    );
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(c) => {
            let cfg = Config::load(&c.config)?;
            let plan = generate::run(&cfg)?;
            println!(
                "{} frames, {} positive, {} events",
                plan.labels.len(),
                plan.positives(),
                plan.events.len()
            );
        }
        Command::Train(c) => print_json(&trainer::run(&Config::load(&c.config)?)?),
        Command::Run(c) => {
            let out = pipeline::run(&Config::load(&c.config)?, None)?;
            print_json(&out.report);
        }
        Command::Bench { common, output } => {
            let cfg = Config::load(&common.config)?;
            let rows = bench::run(&cfg)?;
            match output.or_else(|| cfg.bench.as_ref().and_then(|b| b.output.clone())) {
                Some(p) => bench::save(&rows, &p)?,
                None => bench::write_csv(&rows, std::io::stdout())
                    .map_err(|e| Error::csv("<stdout>", e))?,
            }
        }
        Command::Fetch {
            common,
            archive,
            mc,
            event,
            context,
            all,
            output,
        } => {
            let cfg = Config::load(&common.config)?;
            let dir = match archive {
                Some(d) => d,
                None => cfg
                    .require(&cfg.run.output_dir, "run.output_dir")?
                    .join(ARCHIVE_DIR),
            };
            let a = Archive::open(&dir)?;
            let range = if all {
                a.full_range()
            } else {
                let mc = mc.expect("required by clap");
                Some(a.event_range(&mc, event.expect("required by clap"), context)?)
            };
            a.extract(range, &output)?;
            match range {
                Some(r) => println!(
                    "frames {}..={} ({}) -> {}",
                    r.start,
                    r.end,
                    r.len(),
                    output.display()
                ),
                None => println!("empty stream -> {}", output.display()),
            }
        }
        Command::Cost {
            common,
            model,
            height,
            width,
        } => {
            let cfg = Config::load(&common.config)?;
            let dims = height.zip(width);
            print!("{}", costcmd::run(&cfg, &model, dims)?.render());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
