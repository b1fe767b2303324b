use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ridenet::grid::BoundingBox;
use ridenet::metrics::{EigenvalueNormalization, Feature};
use ridenet::model::TargetMode;
use ridenet::pipeline::{self, Outcome, PipelineConfig};
use ridenet::{Error, Result};

/// Tile-based rides networks, ride-sharing utilization and utilization
/// forecasting from taxi trip records.
#[derive(Debug, Parser)]
#[command(name = "ridenet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Clean raw trip files into the trip store.
    Ingest {
        /// Raw delimited trip files; replaces `inputs` from the config.
        files: Vec<PathBuf>,
    },
    /// Generate a synthetic trip store with ground truth.
    Synth {
        #[arg(long)]
        days: Option<u32>,
    },
    /// Per-window features, utilization series and aggregate statistics.
    Analyze,
    /// Regression grid, horizon sweeps and split validation.
    Forecast,
    /// Summarize existing outputs.
    Report,
}

/// Flags override the corresponding config values.
#[derive(Debug, Args)]
struct Overrides {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    trip_store: Option<PathBuf>,
    /// `min_lon,min_lat,max_lon,max_lat`.
    #[arg(long, global = true, value_parser = parse_bbox)]
    bbox: Option<BoundingBox>,
    #[arg(long, global = true)]
    analysis_edge: Option<f64>,
    #[arg(long, global = true, value_delimiter = ',')]
    merge_edges: Option<Vec<f64>>,
    /// Seconds.
    #[arg(long, global = true)]
    window_len: Option<i64>,
    /// Seconds.
    #[arg(long, global = true)]
    window_step: Option<i64>,
    #[arg(long, global = true)]
    span_start: Option<String>,
    #[arg(long, global = true)]
    span_end: Option<String>,
    /// Seconds, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    delays: Option<Vec<i64>>,
    /// Hours, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    horizons: Option<Vec<f64>>,
    #[arg(long, global = true, value_parser = parse_enum::<EigenvalueNormalization>)]
    eigenvalue_mode: Option<EigenvalueNormalization>,
    #[arg(long, global = true, value_parser = parse_enum::<TargetMode>)]
    target_mode: Option<TargetMode>,
    #[arg(long, global = true, value_delimiter = ',', value_parser = parse_enum::<Feature>)]
    features: Option<Vec<Feature>>,
    #[arg(long, global = true)]
    split_point: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Emit the comparison table against the published full-month figures.
    #[arg(long, global = true)]
    full_data: bool,
}

fn parse_bbox(s: &str) -> std::result::Result<BoundingBox, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [a, b, c, d] => BoundingBox::new(a, b, c, d).map_err(|e| e.to_string()),
        _ => Err("expected four comma-separated numbers".into()),
    }
}

/// Parses a snake_case enum name through its serde representation.
fn parse_enum<T: serde::de::DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

impl Overrides {
    fn apply(self, cfg: &mut PipelineConfig) {
        macro_rules! set {
            ($($flag:ident => $field:expr),* $(,)?) => {
                $(if let Some(v) = self.$flag { $field = v; })*
            };
        }
        set! {
            output_dir => cfg.output_dir,
            bbox => cfg.bbox,
            analysis_edge => cfg.analysis_edge_m,
            merge_edges => cfg.merge_edges_m,
            window_len => cfg.window_len_s,
            window_step => cfg.window_step_s,
            delays => cfg.delays_s,
            horizons => cfg.horizons_h,
            eigenvalue_mode => cfg.eigenvalue_mode,
            target_mode => cfg.target_mode,
            features => cfg.features,
            seed => cfg.synth.seed,
        }
        if self.trip_store.is_some() {
            cfg.trip_store = self.trip_store;
        }
        if self.span_start.is_some() {
            cfg.span_start = self.span_start;
        }
        if self.span_end.is_some() {
            cfg.span_end = self.span_end;
        }
        if self.split_point.is_some() {
            cfg.split_point = self.split_point;
        }
        if self.workers.is_some() {
            cfg.workers = self.workers;
        }
        cfg.full_data |= self.full_data;
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    let mut cfg = match &cli.overrides.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    cli.overrides.apply(&mut cfg);
    if let Some(n) = cfg.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::config(format!("worker pool: {e}")))?;
    }
    match cli.command {
        Command::Ingest { files } => {
            if !files.is_empty() {
                cfg.inputs = files;
            }
            pipeline::cmd_ingest(&cfg)
        }
        Command::Synth { days } => {
            if let Some(d) = days {
                cfg.synth.n_days = d;
            }
            pipeline::cmd_synth(&cfg)
        }
        Command::Analyze => pipeline::cmd_analyze(&cfg),
        Command::Forecast => pipeline::cmd_forecast(&cfg),
        Command::Report => pipeline::cmd_report(&cfg),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(outcome) => {
            for line in &outcome.lines {
                println!("{line}");
            }
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
