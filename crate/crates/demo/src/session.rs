//! Everything the page needs, computed natively so it can be tested without a
//! browser. Results are plain serializable views.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use pvss_core::camera_graph::GraphError;
use pvss_core::fusion_model::StPair;
use pvss_core::pipeline::{prepare_world, ExperimentConfig, PipelineError, Prepared};
use pvss_core::searcher::{pivot, ScoreMode, SearchConfig, SearchError, SearchProgress};
use pvss_core::synth_world::{World, WorldSpec};
use pvss_core::track_store::TrackRef;

#[derive(Debug, Error)]
pub enum DemoError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("no edge {0} -> {1}")]
    UnknownEdge(u32, u32),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemoSpec {
    pub seed: u64,
    pub cameras: usize,
    pub vehicles: usize,
    pub hours: f64,
    pub noiseless: bool,
}

impl Default for DemoSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            cameras: 16,
            vehicles: 80,
            hours: 3.0,
            noiseless: false,
        }
    }
}

impl DemoSpec {
    fn world_spec(&self) -> WorldSpec {
        let base = if self.noiseless {
            WorldSpec::default().noiseless()
        } else {
            WorldSpec::default()
        };
        WorldSpec {
            seed: self.seed,
            n_cameras: self.cameras,
            n_vehicles: self.vehicles,
            sim_duration_s: self.hours * 3600.0,
            ..base
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CameraView {
    pub camera_id: u32,
    pub x: f64,
    pub y: f64,
    pub tracks: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Overview {
    pub cameras: Vec<CameraView>,
    pub edges: Vec<(u32, u32)>,
    /// Query candidates: sightings of vehicles seen by more than one camera.
    pub queries: Vec<QueryView>,
}

#[derive(Debug, Clone, Serialize)]
pub struct QueryView {
    pub track: TrackRef,
    pub timestamp_s: f64,
    pub identity: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct EntryView {
    pub track: TrackRef,
    pub camera_id: u32,
    pub timestamp_s: f64,
    pub score: f64,
    /// Same vehicle as the query.
    pub hit: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SnapshotView {
    pub layer: usize,
    pub cameras_scanned: usize,
    /// Cameras of this layer.
    pub layer_cameras: Vec<u32>,
    pub entries: Vec<EntryView>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchView {
    pub query: QueryView,
    pub snapshots: Vec<SnapshotView>,
    /// Later sightings of the vehicle that were in scope.
    pub reachable: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SlotPoint {
    pub slot: i64,
    pub start_s: f64,
    pub mean_s: f64,
    pub deviation_s: f64,
    pub planted_mean_s: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SlotCurve {
    pub from: u32,
    pub to: u32,
    pub spatial_distance_m: f64,
    pub points: Vec<SlotPoint>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Heatmap {
    pub d_s_max: f64,
    pub d_t_max: f64,
    pub n: usize,
    /// `n x n`, row `i` is `d_t = i * d_t_max / (n - 1)`.
    pub values: Vec<Vec<f64>>,
}

pub struct DemoSession {
    world: World,
    prepared: Prepared,
}

impl DemoSession {
    pub fn new(spec: &DemoSpec) -> Result<Self, DemoError> {
        if spec.vehicles == 0 || spec.vehicles > 2000 || spec.cameras < 2 || spec.cameras > 200 {
            return Err(DemoError::Invalid("2-200 cameras and 1-2000 vehicles".into()));
        }
        if !(spec.hours > 0.0 && spec.hours <= 24.0) {
            return Err(DemoError::Invalid("hours must be in (0, 24]".into()));
        }
        let config = ExperimentConfig {
            world: spec.world_spec(),
            ..ExperimentConfig::default()
        };
        let (world, prepared) = prepare_world(&config)?;
        Ok(Self { world, prepared })
    }

    pub fn overview(&self) -> Overview {
        let mut seen_on: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
        for (t, id) in &self.world.truth.identities {
            seen_on.entry(*id).or_default().insert(t.camera_id);
        }
        let queries = self
            .world
            .tracks
            .iter()
            .filter_map(|t| {
                let r = t.track_ref();
                let id = *self.world.truth.identities.get(&r)?;
                (seen_on[&id].len() > 1).then_some(QueryView {
                    track: r,
                    timestamp_s: t.timestamp_s,
                    identity: id,
                })
            })
            .collect();
        Overview {
            cameras: self
                .world
                .graph
                .nodes()
                .map(|n| CameraView {
                    camera_id: n.camera_id,
                    x: n.longitude,
                    y: n.latitude,
                    tracks: self.prepared.store.table(n.camera_id).map_or(0, |t| t.len()),
                })
                .collect(),
            edges: self.world.graph.edges().map(|e| (e.from, e.to)).collect(),
            queries,
        }
    }

    /// Pivot-style search from a stored track: forward `window_s` seconds,
    /// up to `max_hops` away, excluding the query's own camera.
    pub fn search(
        &self,
        track: TrackRef,
        window_s: f64,
        max_hops: usize,
        k: usize,
        mode: ScoreMode,
    ) -> Result<SearchView, DemoError> {
        let identity = *self
            .world
            .truth
            .identities
            .get(&track)
            .ok_or(SearchError::UnknownTrack(track))?;
        let searcher = self.prepared.searcher();
        let triplet = pivot(&self.prepared.store, track, window_s, max_hops)?;
        let layers = searcher.layers(&triplet.scope, track.camera_id)?;
        let config = SearchConfig {
            k,
            mode,
            exclude_query_camera: true,
            ..SearchConfig::default()
        };
        let view = |p: &SearchProgress| SnapshotView {
            layer: p.layer,
            cameras_scanned: p.cameras_scanned,
            layer_cameras: layers.get(p.layer).cloned().unwrap_or_default(),
            entries: p
                .list
                .entries
                .iter()
                .map(|e| EntryView {
                    track: e.track,
                    camera_id: e.camera_id,
                    timestamp_s: e.timestamp_s,
                    score: e.score,
                    hit: self.world.truth.identities.get(&e.track) == Some(&identity),
                })
                .collect(),
        };
        let mut snapshots = Vec::new();
        searcher.search_with(&triplet, &config, |p| snapshots.push(view(p)))?;
        let (t0, t1) = triplet.time_range;
        let reachable = self
            .world
            .truth
            .identities
            .iter()
            .filter(|(t, id)| {
                **id == identity
                    && t.camera_id != track.camera_id
                    && layers.iter().flatten().any(|c| *c == t.camera_id)
                    && self
                        .prepared
                        .store
                        .get(**t)
                        .is_some_and(|m| (t0..=t1).contains(&m.timestamp_s))
            })
            .count();
        let timestamp_s = self.prepared.store.get(track).map_or(0.0, |m| m.timestamp_s);
        Ok(SearchView {
            query: QueryView {
                track,
                timestamp_s,
                identity,
            },
            snapshots,
            reachable,
        })
    }

    /// Learned travel-time statistics of one edge next to the simulator's
    /// planted means.
    pub fn slot_curve(&self, from: u32, to: u32) -> Result<SlotCurve, DemoError> {
        let g = &self.prepared.graph;
        let e = g.edge(from, to).ok_or(DemoError::UnknownEdge(from, to))?;
        Ok(SlotCurve {
            from,
            to,
            spatial_distance_m: e.spatial_distance_m,
            points: e
                .slot_weights
                .iter()
                .map(|s| SlotPoint {
                    slot: s.slot,
                    start_s: s.slot as f64 * g.slot_length_s(),
                    mean_s: s.mean_s,
                    deviation_s: s.deviation_s,
                    planted_mean_s: self.world.planted_mean(from, to, s.slot),
                })
                .collect(),
        })
    }

    /// Learned spatio-temporal similarity over a grid of distance pairs.
    pub fn st_heatmap(&self, d_s_max: f64, d_t_max: f64, n: usize) -> Result<Heatmap, DemoError> {
        if !(2..=200).contains(&n) || !(d_s_max > 0.0) || !(d_t_max > 0.0) {
            return Err(DemoError::Invalid("grid needs 2-200 cells and positive ranges".into()));
        }
        let params = self.prepared.params.as_ref().ok_or(SearchError::MissingFusionParams)?;
        let step = |max: f64, i: usize| max * i as f64 / (n - 1) as f64;
        let values = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| params.st_similarity(&StPair::new(step(d_s_max, j), step(d_t_max, i))))
                    .collect()
            })
            .collect();
        Ok(Heatmap {
            d_s_max,
            d_t_max,
            n,
            values,
        })
    }
}
