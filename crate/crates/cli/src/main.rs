mod config;
mod exit;
mod manifest;
mod pipeline;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};
use eegmi_core::edf::Fetcher;

use crate::config::{FilterChoice, ModelKind, PipelineConfig, Variant};
use crate::manifest::{CommandArgs, Run, RunManifest};

/// EEG motor-imagery pipeline: fetch, epoch, featurize, train, evaluate.
#[derive(Parser, Debug)]
#[command(name = "eegmi", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON config file merged over the defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Dotted override, e.g. `--set train.max_epochs=20`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Root seed; every stage derives its own from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for artifacts and manifests.
    #[arg(long, global = true, value_name = "DIR")]
    output: Option<PathBuf>,
    /// Local mirror of the archive.
    #[arg(long, global = true, value_name = "DIR")]
    cache_dir: Option<PathBuf>,
    /// `all`, or ids and ranges such as `1-10,12`.
    #[arg(long, global = true)]
    subjects: Option<String>,
    /// Comma-separated run numbers.
    #[arg(long, global = true, value_delimiter = ',')]
    runs: Option<Vec<u32>>,
    #[arg(long, global = true, value_enum)]
    filter_kind: Option<FilterChoice>,
    #[arg(long, global = true, value_enum)]
    model: Option<ModelKind>,
    /// sgd, sgdm, adam or rmsprop.
    #[arg(long, global = true)]
    optimizer: Option<String>,
    /// Repeat for more detail on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only warnings and errors on stderr.
    #[arg(short, long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Download the configured records into the cache.
    Fetch,
    /// Filter each run, cut labeled epochs and write the epoch container.
    Epochs,
    /// Welch alpha-band features of every epoch as CSV.
    Features,
    /// Split by subject and train the configured model.
    Train {
        /// Continue from the last saved training state in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Confusion matrix of a checkpoint on the held-out items.
    Eval {
        /// Defaults to model.ckpt in the output directory.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// The whole pipeline: MLP-GD and ConvNet with SGDM, RMSProp and Adam.
    Reproduce,
    /// Write generated recordings in the archive layout into the cache.
    Synth,
    /// Re-run the command recorded in a manifest with its recorded config.
    Rerun {
        manifest: PathBuf,
    },
    /// Print the resolved config as JSON.
    ShowConfig,
}

impl Cli {
    fn overrides(&self) -> Vec<String> {
        let js = |v: &str| serde_json::Value::String(v.to_string()).to_string();
        let mut o = self.set.clone();
        if let Some(s) = self.seed {
            o.push(format!("seed={s}"));
        }
        if let Some(p) = &self.output {
            o.push(format!("output_dir={}", js(&p.to_string_lossy())));
        }
        if let Some(p) = &self.cache_dir {
            o.push(format!("cache_dir={}", js(&p.to_string_lossy())));
        }
        if let Some(s) = &self.subjects {
            o.push(format!("subjects={}", js(s)));
        }
        if let Some(r) = &self.runs {
            o.push(format!("runs={}", serde_json::to_string(r).expect("ints serialize")));
        }
        if let Some(k) = self.filter_kind {
            o.push(format!("filter.kind={}", serde_json::to_string(&k).expect("enum serializes")));
        }
        if let Some(m) = self.model {
            o.push(format!("model.kind={}", serde_json::to_string(&m).expect("enum serializes")));
        }
        if let Some(opt) = &self.optimizer {
            o.push(format!("optimizer={}", js(opt)));
        }
        o
    }
}

fn main() {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "warn",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format(|buf, rec| {
            use std::io::Write;
            match rec.level() {
                log::Level::Info => writeln!(buf, "{}", rec.args()),
                l => writeln!(buf, "[{l} {}] {}", rec.target(), rec.args()),
            }
        })
        .init();
    let code = match run(cli) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit::code_for(&e)
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<()> {
    let (name, args, cfg) = match &cli.command {
        Command::Rerun { manifest } => {
            let m = RunManifest::load(manifest)?;
            let mut cfg = m.config;
            if let Some(out) = &cli.output {
                cfg.output_dir = out.clone();
            }
            cfg.validate()?;
            (m.command, m.args, cfg)
        }
        cmd => {
            let cfg = PipelineConfig::load(cli.config.as_deref(), &cli.overrides())?;
            let (name, args) = match cmd {
                Command::Fetch => ("fetch", CommandArgs::default()),
                Command::Epochs => ("epochs", CommandArgs::default()),
                Command::Features => ("features", CommandArgs::default()),
                Command::Train { resume } => (
                    "train",
                    CommandArgs {
                        resume: *resume,
                        ..Default::default()
                    },
                ),
                Command::Eval { checkpoint } => (
                    "eval",
                    CommandArgs {
                        checkpoint: checkpoint.clone(),
                        ..Default::default()
                    },
                ),
                Command::Reproduce => ("reproduce", CommandArgs::default()),
                Command::Synth => ("synth", CommandArgs::default()),
                Command::ShowConfig => ("show-config", CommandArgs::default()),
                Command::Rerun { .. } => unreachable!("handled above"),
            };
            (name.to_string(), args, cfg)
        }
    };
    match name.as_str() {
        "show-config" => {
            println!("{}", serde_json::to_string_pretty(&cfg)?);
            Ok(())
        }
        "synth" => pipeline::synth(&cfg.cache_dir, &cfg.subjects.resolve(), &cfg.runs, cfg.seed).map(|_| ()),
        _ => {
            let mut run = Run::start(&name, args.clone(), cfg)?;
            let result = dispatch(&name, &args, &mut run);
            let path = run.finish(&result)?;
            log::info!("manifest {}", path.display());
            result
        }
    }
}

fn dispatch(name: &str, args: &CommandArgs, run: &mut Run) -> Result<()> {
    match name {
        "fetch" => {
            let fetcher = Fetcher::from_env()?;
            run.stage("fetch", |r| pipeline::fetch(r, &fetcher, true).map(|_| ()))
        }
        "epochs" => {
            let fetcher = Fetcher::from_env()?;
            run.stage("fetch", |r| pipeline::fetch(r, &fetcher, false).map(|_| ()))?;
            run.stage("epochs", |r| pipeline::epochs(r, &fetcher).map(|_| ()))
        }
        "features" => run.stage("features", pipeline::features),
        "train" => {
            let v = run.cfg.variant();
            let data = run.stage("load", |r| pipeline::load_dataset(r, v.model))?;
            let split = run.stage("split", |r| pipeline::split(r, &data))?;
            let out = run.out.clone();
            run.stage("train", |r| pipeline::train_variant(r, v, &data, &split, &out, args.resume))
        }
        "eval" => {
            let ck = args.checkpoint.clone().unwrap_or_else(|| run.path(pipeline::MODEL_FILE));
            let out = run.out.clone();
            run.stage("eval", |r| pipeline::eval_variant(r, &ck, &out).map(|_| ()))
        }
        "reproduce" => reproduce(run),
        other => Err(exit::CliError::Config(format!("manifest names unknown command `{other}`")).into()),
    }
}

fn reproduce(run: &mut Run) -> Result<()> {
    let fetcher = Fetcher::from_env()?;
    run.stage("fetch", |r| pipeline::fetch(r, &fetcher, false).map(|_| ()))?;
    run.stage("epochs", |r| pipeline::epochs(r, &fetcher).map(|_| ()))?;
    run.stage("features", pipeline::features)?;
    let mut rows = Vec::new();
    let mut split = None;
    for v in Variant::comparison() {
        let slug = v.slug();
        let dir = run.path(&slug);
        let data = run.stage(&format!("{slug}/load"), |r| pipeline::load_dataset(r, v.model))?;
        let holdout = match &split {
            Some(h) => h,
            None => split.insert(run.stage("split", |r| pipeline::split(r, &data))?),
        }
        .clone();
        run.stage(&format!("{slug}/train"), |r| {
            pipeline::train_variant(r, v, &data, &holdout, &dir, false)
        })?;
        let report = run.stage(&format!("{slug}/eval"), |r| {
            pipeline::eval_variant(r, &dir.join(pipeline::MODEL_FILE), &dir)
        })?;
        rows.push(pipeline::ComparisonRow {
            model: report.model,
            accuracy: report.accuracy,
            test_items: report.test_items,
            dir: slug,
        });
    }
    run.stage("compare", |r| pipeline::write_comparison(r, &rows))
}
