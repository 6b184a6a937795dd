//! Data-directory layout and the operations behind every command and
//! endpoint. The CLI and the service both go through these functions.
//!
//! ```text
//! <data>/world/{graph,transits,tracks,truth}.txt   generated world (gen)
//! <data>/train/{graph,transits,tracks,truth}.txt   held-out labeled world (gen)
//! <data>/tracks.txt    ingested track store
//! <data>/graph.txt     camera graph with learned slot weights
//! <data>/index.txt     two-level feature index
//! <data>/fusion.txt    trained fusion parameters
//! <data>/report.txt, report.jsonl                  evaluation report
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use pvss_core::camera_graph::{read_transits, CameraGraph, RoadDistances};
use pvss_core::evaluator::{run_protocol, EvalConfig, EvalReport};
use pvss_core::feature_index::TwoLevelIndex;
use pvss_core::fusion_model::{accuracy, train, training_pairs, FusionParams};
use pvss_core::pipeline::training_seed;
use pvss_core::searcher::{
    QueryTriplet, RankedList, ScoreMode, SearchConfig, SearchProgress, Searcher,
};
use pvss_core::synth_world::{generate, load_identities, WorldSpec};
use pvss_core::track_store::{TrackMetadata, TrackRef, TrackStore};

use crate::config::ServiceConfig;
use crate::error::{AppError, AppResult};

#[derive(Debug, Clone)]
pub struct DataDir {
    root: PathBuf,
}

impl DataDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn world_dir(&self) -> PathBuf {
        self.root.join("world")
    }

    pub fn train_dir(&self) -> PathBuf {
        self.root.join("train")
    }

    pub fn tracks(&self) -> PathBuf {
        self.root.join("tracks.txt")
    }

    pub fn graph(&self) -> PathBuf {
        self.root.join("graph.txt")
    }

    pub fn index(&self) -> PathBuf {
        self.root.join("index.txt")
    }

    pub fn fusion(&self) -> PathBuf {
        self.root.join("fusion.txt")
    }

    pub fn truth(&self) -> PathBuf {
        self.world_dir().join("truth.txt")
    }

    pub fn report_table(&self) -> PathBuf {
        self.root.join("report.txt")
    }

    pub fn report_lines(&self) -> PathBuf {
        self.root.join("report.jsonl")
    }

    /// The learned graph if there is one, else the generated topology.
    pub fn load_graph(&self) -> AppResult<CameraGraph> {
        for p in [self.graph(), self.world_dir().join("graph.txt")] {
            if p.exists() {
                return Ok(CameraGraph::load(p)?);
            }
        }
        Err(AppError::not_found(format!(
            "no camera graph in {}; run gen or learn-weights",
            self.root.display()
        )))
    }
}

/// Immutable view of the loaded data; swapped wholesale on change.
#[derive(Debug, Clone)]
pub struct State {
    pub store: Arc<TrackStore>,
    pub graph: Arc<CameraGraph>,
    pub distances: Arc<RoadDistances>,
    pub index: Option<Arc<TwoLevelIndex>>,
    pub params: Option<Arc<FusionParams>>,
}

impl State {
    pub fn load(dir: &DataDir, config: &ServiceConfig) -> AppResult<Self> {
        let graph = dir.load_graph()?;
        let store = if dir.tracks().exists() {
            let mut s = TrackStore::load(dir.tracks())?;
            for n in graph.nodes() {
                s.add_camera(n.camera_id);
            }
            s
        } else {
            TrackStore::with_cameras(
                config.appearance_dim,
                config.plate_dim,
                graph.nodes().map(|n| n.camera_id),
            )
        };
        let index = if dir.index().exists() {
            Some(Arc::new(TwoLevelIndex::load(dir.index())?))
        } else {
            None
        };
        let params = if dir.fusion().exists() {
            Some(Arc::new(FusionParams::load(dir.fusion())?))
        } else {
            None
        };
        Ok(Self {
            distances: Arc::new(graph.road_distances()),
            store: Arc::new(store),
            graph: Arc::new(graph),
            index,
            params,
        })
    }

    pub fn searcher(&self) -> AppResult<Searcher<'_>> {
        let index = self
            .index
            .as_deref()
            .ok_or_else(|| AppError::conflict("index not built; run build-index"))?;
        Ok(Searcher {
            store: &self.store,
            index,
            graph: &self.graph,
            distances: &self.distances,
            params: self.params.as_deref(),
        })
    }

    /// Earliest and latest stored timestamps.
    pub fn time_span(&self) -> (f64, f64) {
        let (lo, hi) = self.store.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| {
            (lo.min(t.timestamp_s), hi.max(t.timestamp_s))
        });
        if lo <= hi {
            (lo, hi)
        } else {
            (0.0, 0.0)
        }
    }
}

/// Query triplet plus per-request search options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRequest {
    #[serde(flatten)]
    pub triplet: QueryTriplet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<ScoreMode>,
    /// Score every in-scope track instead of a coarse shortlist.
    #[serde(default)]
    pub exhaustive: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub early_stop: Option<bool>,
    #[serde(default)]
    pub exclude_query_camera: bool,
    #[serde(default)]
    pub allow_self_match: bool,
}

impl SearchRequest {
    pub fn new(triplet: QueryTriplet) -> Self {
        Self {
            triplet,
            k: None,
            mode: None,
            exhaustive: false,
            early_stop: None,
            exclude_query_camera: false,
            allow_self_match: false,
        }
    }

    pub fn search_config(&self, config: &ServiceConfig) -> SearchConfig {
        SearchConfig {
            k: self.k.unwrap_or(config.k),
            mode: self.mode.unwrap_or_default(),
            shortlist_ratio: if self.exhaustive { None } else { config.shortlist() },
            early_stop: self.early_stop.unwrap_or(config.early_stop),
            exclude_query_camera: self.exclude_query_camera,
            allow_self_match: self.allow_self_match,
            lambda: config.fusion.lambda,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum StreamFormat {
    /// One JSON object per line.
    #[default]
    Json,
    /// `layer=<l> scanned=<n> list=[...]` lines.
    Text,
}

/// One line of a search stream.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StreamRecord {
    Snapshot(SearchProgress),
    Final { list: RankedList },
    Error { error: AppError },
}

impl StreamRecord {
    /// The record with its trailing newline.
    pub fn line(&self, format: StreamFormat) -> String {
        let body = match format {
            StreamFormat::Json => serde_json::to_string(self).expect("stream records serialize"),
            StreamFormat::Text => match self {
                StreamRecord::Snapshot(p) => p.to_string(),
                StreamRecord::Final { list } => format!("final list={list}"),
                StreamRecord::Error { error } => format!("error {}", error.json_line()),
            },
        };
        body + "\n"
    }
}

/// Runs a search, handing over each snapshot and then the final list.
pub fn run_search(
    state: &State,
    request: &SearchRequest,
    config: &ServiceConfig,
    mut emit: impl FnMut(StreamRecord),
) -> AppResult<RankedList> {
    let searcher = state.searcher()?;
    let search = request.search_config(config);
    let list = searcher.search_with(&request.triplet, &search, |p| emit(StreamRecord::Snapshot(p.clone())))?;
    emit(StreamRecord::Final { list: list.clone() });
    Ok(list)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSummary {
    pub cameras: usize,
    pub edges: usize,
    pub vehicles: usize,
    pub tracks: usize,
    pub transits: usize,
    pub train_tracks: usize,
}

/// Writes the evaluation world and a held-out training world.
pub fn gen(dir: &DataDir, spec: &WorldSpec) -> AppResult<GenSummary> {
    let world = generate(spec)?;
    let train_world = generate(&WorldSpec {
        seed: training_seed(spec.seed),
        ..spec.clone()
    })?;
    world.write_dir(dir.world_dir())?;
    train_world.write_dir(dir.train_dir())?;
    Ok(GenSummary {
        cameras: world.graph.node_count(),
        edges: world.graph.edge_count(),
        vehicles: spec.n_vehicles,
        tracks: world.tracks.len(),
        transits: world.truth.transits.len(),
        train_tracks: train_world.tracks.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub ingested: usize,
    pub total: usize,
    /// Whether a built index picked up the new tracks.
    pub indexed: bool,
}

/// Validates and appends tracks to the state; nothing changes unless every
/// track is accepted.
pub fn ingest_tracks(state: &State, tracks: Vec<TrackMetadata>) -> AppResult<(State, IngestSummary)> {
    let mut store = (*state.store).clone();
    let mut index = state.index.as_deref().cloned();
    let n = tracks.len();
    for t in tracks {
        let (app, plate) = (t.appearance_feature.clone(), t.plate_feature.clone());
        let r = store.ingest(t)?;
        if let Some(ix) = index.as_mut() {
            ix.insert(r, app, plate)?;
        }
    }
    let summary = IngestSummary {
        ingested: n,
        total: store.len(),
        indexed: index.is_some(),
    };
    let next = State {
        store: Arc::new(store),
        index: index.map(Arc::new),
        ..state.clone()
    };
    Ok((next, summary))
}

/// Ingests a track file (store format) into the data directory's store.
pub fn ingest_file(dir: &DataDir, from: &Path, config: &ServiceConfig) -> AppResult<IngestSummary> {
    let state = State::load(dir, config)?;
    let incoming = TrackStore::load(from)?;
    let (next, summary) = ingest_tracks(&state, incoming.iter().cloned().collect())?;
    persist(dir, &next)?;
    Ok(summary)
}

/// Saves the store and, when present, the index.
pub fn persist(dir: &DataDir, state: &State) -> AppResult<()> {
    fs::create_dir_all(dir.root())?;
    state.store.save(dir.tracks())?;
    if let Some(ix) = &state.index {
        ix.save(dir.index())?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexSummary {
    pub tracks: usize,
    pub plated: usize,
    pub mode: String,
    pub search_budget: usize,
}

pub fn build_index(store: &TrackStore, config: &ServiceConfig) -> AppResult<(TwoLevelIndex, IndexSummary)> {
    if store.is_empty() {
        return Err(AppError::conflict("store is empty; run ingest first"));
    }
    let index = TwoLevelIndex::build(store, &config.index)?;
    let summary = IndexSummary {
        tracks: index.coarse().len(),
        plated: index.fine().map_or(0, |f| f.len()),
        mode: config.index.mode.to_string(),
        search_budget: index.coarse().search_budget(),
    };
    Ok((index, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsSummary {
    pub transits: usize,
    pub edges: usize,
    pub populated_slots: usize,
}

/// Learns slot weights for `graph_path` from `transits_path` and writes the
/// result to the data directory's graph file.
pub fn learn_weights(dir: &DataDir, graph_path: &Path, transits_path: &Path) -> AppResult<WeightsSummary> {
    let graph = CameraGraph::load(graph_path)?;
    let transits = read_transits(std::io::BufReader::new(fs::File::open(transits_path)?))?;
    let learned = graph.learn_weights(&transits)?;
    fs::create_dir_all(dir.root())?;
    learned.save(dir.graph())?;
    Ok(WeightsSummary {
        transits: transits.len(),
        edges: learned.edge_count(),
        populated_slots: learned.edges().map(|e| e.slot_weights.len()).sum(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub pairs: usize,
    pub positives: usize,
    pub epochs: usize,
    pub final_loss: f64,
    pub accuracy: f64,
}

/// Trains fusion parameters on a labeled world directory.
pub fn fit_fusion(train_dir: &Path, config: &ServiceConfig) -> AppResult<(FusionParams, TrainSummary)> {
    let store = TrackStore::load(train_dir.join("tracks.txt"))?;
    let identities = load_identities(train_dir.join("truth.txt"))?;
    let mut graph = CameraGraph::load(train_dir.join("graph.txt"))?;
    let transits_path = train_dir.join("transits.txt");
    if transits_path.exists() {
        let transits = read_transits(std::io::BufReader::new(fs::File::open(transits_path)?))?;
        graph = graph.learn_weights(&transits)?;
    }
    let distances = graph.road_distances();
    let t = &config.fusion;
    let samples = training_pairs(
        &store,
        &identities,
        &graph,
        &distances,
        t.lambda,
        t.use_slot_weights,
        config.negative_ratio,
        t.seed,
    )?;
    let outcome = train(&samples, t)?;
    let summary = TrainSummary {
        pairs: samples.len(),
        positives: samples.iter().filter(|s| s.label).count(),
        epochs: outcome.epoch_losses.len(),
        final_loss: outcome.final_loss(),
        accuracy: accuracy(&outcome.params, &samples),
    };
    Ok((outcome.params, summary))
}

/// Evaluates every method on the data directory's world, filling in a
/// missing index or fusion model in memory.
pub fn evaluate(dir: &DataDir, state: &State, config: &ServiceConfig) -> AppResult<EvalReport> {
    let identities: BTreeMap<TrackRef, u32> = if dir.truth().exists() {
        load_identities(dir.truth())?
    } else {
        return Err(AppError::not_found("no ground truth; run gen"));
    };
    let mut state = state.clone();
    if state.store.is_empty() {
        return Err(AppError::conflict("store is empty; run ingest first"));
    }
    if state.index.is_none() {
        state.index = Some(Arc::new(build_index(&state.store, config)?.0));
    }
    let mut methods = ScoreMode::ALL.to_vec();
    if state.params.is_none() {
        if dir.train_dir().join("truth.txt").exists() {
            state.params = Some(Arc::new(fit_fusion(&dir.train_dir(), config)?.0));
        } else {
            methods.retain(|m| *m != ScoreMode::Full);
        }
    }
    let eval = EvalConfig {
        k: config.k,
        shortlist_ratio: config.shortlist(),
        lambda: config.fusion.lambda,
        methods,
        seed: config.eval_seed,
    };
    Ok(run_protocol(&state.searcher()?, &identities, &eval)?)
}

pub fn write_report(dir: &DataDir, report: &EvalReport) -> AppResult<()> {
    fs::write(dir.report_table(), report.table())?;
    fs::write(dir.report_lines(), report.json_lines())?;
    Ok(())
}
