use std::io::{self, Read, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use pvss_core::feature_index::IndexMode;
use pvss_core::searcher::{QueryFeature, QueryTriplet, ScoreMode, Scope};
use pvss_core::synth_world::WorldSpec;
use pvss_core::track_store::TrackRef;

use pvss_cli::config::ServiceConfig;
use pvss_cli::error::{AppError, AppResult};
use pvss_cli::service;
use pvss_cli::workspace::{self, DataDir, SearchRequest, State, StreamFormat};

/// Progressive vehicle search over a camera network.
#[derive(Debug, Parser)]
#[command(name = "pvss", version)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Data directory (overrides the config file and PVSS_DATA).
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic world and a held-out training world.
    Gen(GenArgs),
    /// Add tracks from a track file (default: the generated world's).
    Ingest { file: Option<PathBuf> },
    /// Build the two-level feature index over the stored tracks.
    BuildIndex {
        #[arg(long)]
        mode: Option<IndexMode>,
    },
    /// Learn per-slot travel-time weights from a transit log.
    LearnWeights {
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        transits: Option<PathBuf>,
    },
    /// Train the spatio-temporal fusion model on a labeled world.
    TrainFusion {
        /// Directory holding graph.txt, tracks.txt and truth.txt.
        #[arg(long)]
        train_dir: Option<PathBuf>,
    },
    /// Run a progressive search and stream its snapshots.
    Search(SearchArgs),
    /// Evaluate App, App+Plate and Full on the generated world.
    Eval {
        #[arg(long, value_enum, default_value_t = StreamFormat::Text)]
        format: StreamFormat,
    },
    /// Serve the HTTP interface.
    Serve {
        #[arg(long)]
        listen: Option<String>,
    },
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    cameras: Option<usize>,
    #[arg(long)]
    vehicles: Option<usize>,
    #[arg(long)]
    hours: Option<f64>,
    /// No feature noise, no travel-time spread, no look-alike models.
    #[arg(long)]
    noiseless: bool,
}

#[derive(Debug, Args)]
struct SearchArgs {
    /// JSON search request file, `-` for stdin; replaces the query flags.
    #[arg(long, conflicts_with_all = ["track", "t_start", "t_end", "hops", "cameras"])]
    request: Option<PathBuf>,
    /// Query track as `<camera>:<track>`.
    #[arg(long, required_unless_present = "request")]
    track: Option<TrackRef>,
    #[arg(long, required_unless_present = "request", allow_negative_numbers = true)]
    t_start: Option<f64>,
    #[arg(long, required_unless_present = "request", allow_negative_numbers = true)]
    t_end: Option<f64>,
    /// Search up to this many hops from the query camera.
    #[arg(long, conflicts_with = "cameras")]
    hops: Option<usize>,
    /// Search exactly these cameras.
    #[arg(long, value_delimiter = ',')]
    cameras: Option<Vec<u32>>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    mode: Option<ScoreMode>,
    #[arg(long)]
    exhaustive: bool,
    #[arg(long)]
    early_stop: bool,
    #[arg(long)]
    exclude_query_camera: bool,
    #[arg(long, value_enum, default_value_t = StreamFormat::Json)]
    format: StreamFormat,
}

impl SearchArgs {
    fn request(self) -> AppResult<SearchRequest> {
        if let Some(path) = &self.request {
            let mut text = String::new();
            if path.as_os_str() == "-" {
                io::stdin().read_to_string(&mut text)?;
            } else {
                text = std::fs::read_to_string(path)?;
            }
            return serde_json::from_str(&text).map_err(|e| AppError::usage(format!("search request: {e}")));
        }
        let (track, t0, t1) = match (self.track, self.t_start, self.t_end) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => return Err(AppError::usage("--track, --t-start and --t-end are required")),
        };
        if !(t0 <= t1) {
            return Err(AppError::usage(format!("--t-start {t0} is after --t-end {t1}")));
        }
        let scope = match self.cameras {
            Some(c) => Scope::Cameras(c),
            None => Scope::Hops {
                start: track.camera_id,
                max_hops: self.hops.unwrap_or(usize::MAX),
            },
        };
        let mut req = SearchRequest::new(QueryTriplet {
            query: QueryFeature::Track(track),
            time_range: (t0, t1),
            scope,
        });
        req.k = self.k;
        req.mode = self.mode;
        req.exhaustive = self.exhaustive;
        req.early_stop = self.early_stop.then_some(true);
        req.exclude_query_camera = self.exclude_query_camera;
        Ok(req)
    }
}

fn print_json(value: &impl Serialize) -> AppResult<()> {
    let line = serde_json::to_string(value).map_err(|e| AppError::new(pvss_cli::error::ErrorKind::Internal, e.to_string()))?;
    println!("{line}");
    Ok(())
}

fn run(cli: Cli) -> AppResult<()> {
    let config = ServiceConfig::resolve(cli.config.as_deref(), cli.data.as_deref())?;
    let dir = DataDir::new(&config.data_dir);
    match cli.command {
        Command::Gen(a) => {
            let mut spec = if a.noiseless {
                WorldSpec::default().noiseless()
            } else {
                WorldSpec::default()
            };
            spec.slot_length_s = config.slot_length_s;
            spec.appearance_dim = config.appearance_dim;
            spec.plate_dim = config.plate_dim;
            if let Some(s) = a.seed {
                spec.seed = s;
            }
            if let Some(n) = a.cameras {
                spec.n_cameras = n;
            }
            if let Some(n) = a.vehicles {
                spec.n_vehicles = n;
            }
            if let Some(h) = a.hours {
                spec.sim_duration_s = h * 3600.0;
            }
            spec.validate().map_err(|e| AppError::usage(e.to_string()))?;
            print_json(&workspace::gen(&dir, &spec)?)
        }
        Command::Ingest { file } => {
            let file = file.unwrap_or_else(|| dir.world_dir().join("tracks.txt"));
            print_json(&workspace::ingest_file(&dir, &file, &config)?)
        }
        Command::BuildIndex { mode } => {
            let config = match mode {
                Some(m) => config.with_index_mode(m),
                None => config,
            };
            let state = State::load(&dir, &config)?;
            let (index, summary) = workspace::build_index(&state.store, &config)?;
            index.save(dir.index())?;
            print_json(&summary)
        }
        Command::LearnWeights { graph, transits } => {
            let graph = graph.unwrap_or_else(|| dir.world_dir().join("graph.txt"));
            let transits = transits.unwrap_or_else(|| dir.world_dir().join("transits.txt"));
            print_json(&workspace::learn_weights(&dir, &graph, &transits)?)
        }
        Command::TrainFusion { train_dir } => {
            let train_dir = train_dir.unwrap_or_else(|| dir.train_dir());
            let (params, summary) = workspace::fit_fusion(&train_dir, &config)?;
            std::fs::create_dir_all(dir.root())?;
            params.save(dir.fusion())?;
            print_json(&summary)
        }
        Command::Search(a) => {
            let format = a.format;
            let request = a.request()?;
            let state = State::load(&dir, &config)?;
            let stdout = io::stdout();
            let mut out = stdout.lock();
            let mut write_err = None;
            workspace::run_search(&state, &request, &config, |r| {
                if write_err.is_none() {
                    write_err = out.write_all(r.line(format).as_bytes()).and_then(|_| out.flush()).err();
                }
            })?;
            match write_err {
                Some(e) => Err(e.into()),
                None => Ok(()),
            }
        }
        Command::Eval { format } => {
            let state = State::load(&dir, &config)?;
            let report = workspace::evaluate(&dir, &state, &config)?;
            workspace::write_report(&dir, &report)?;
            match format {
                StreamFormat::Text => print!("{}", report.table()),
                StreamFormat::Json => print!("{}", report.json_lines()),
            }
            Ok(())
        }
        Command::Serve { listen } => {
            let mut config = config;
            if let Some(l) = listen {
                config.listen = l;
            }
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(service::serve(config))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = AppError::usage(e.render().to_string().trim_end());
            eprintln!("{}", err.json_line());
            return ExitCode::from(err.kind.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.json_line());
            ExitCode::from(e.kind.exit_code() as u8)
        }
    }
}
