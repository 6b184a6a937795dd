//! Progressive vehicle search.
//!
//! The scope is expanded breadth-first from the start camera. Each layer's
//! in-range tracks are shortlisted by appearance, refined with plate
//! similarity, fused with spatiotemporal similarity and merged into a
//! constant-length ranked list; a snapshot is emitted after every layer.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera_graph::{CameraGraph, GraphError, RoadDistances};
use crate::feature_index::{pool_track, similarity, IndexError, Level, TwoLevelIndex};
use crate::fusion_model::{st_distance, st_distance_with_slots, visual_similarity, FusionError, FusionParams, DEFAULT_LAMBDA};
use crate::track_store::{StoreError, TrackRef, TrackStore};

pub const DEFAULT_K: usize = 50;
pub const DEFAULT_SHORTLIST_RATIO: usize = 5;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("search scope is empty")]
    EmptyScope,
    #[error("time range start {0} is after end {1}")]
    InvalidTimeRange(f64, f64),
    #[error("list capacity must be at least 1")]
    ZeroK,
    #[error("unknown camera {0}")]
    UnknownCamera(u32),
    #[error("unknown track {0}")]
    UnknownTrack(TrackRef),
    #[error("index has no entry for track {0}; rebuild it")]
    IndexNotBuilt(TrackRef),
    #[error("full scoring needs trained fusion parameters")]
    MissingFusionParams,
    #[error("query needs at least one appearance vector")]
    EmptyQuery,
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

impl From<StoreError> for SearchError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownCamera(c) => SearchError::UnknownCamera(c),
            other => SearchError::Index(IndexError::Config(other.to_string())),
        }
    }
}

/// What the query vehicle looks like: a stored track, or raw per-image
/// vectors observed at a camera and time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryFeature {
    Track(TrackRef),
    Raw {
        camera_id: u32,
        timestamp_s: f64,
        appearance: Vec<Vec<f64>>,
        #[serde(default)]
        plate: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    /// Breadth-first from `start`, at most `max_hops` hops out.
    Hops { start: u32, max_hops: usize },
    /// Explicit camera set, layered by hop distance from the query camera;
    /// cameras the query camera cannot reach form a final layer.
    Cameras(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryTriplet {
    pub query: QueryFeature,
    pub time_range: (f64, f64),
    pub scope: Scope,
}

/// Which similarity ranks candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Coarse appearance similarity only.
    Appearance,
    /// Appearance blended with plate similarity.
    AppearancePlate,
    /// Visual similarity fused with spatiotemporal similarity.
    #[default]
    Full,
}

impl ScoreMode {
    pub const ALL: [ScoreMode; 3] = [ScoreMode::Appearance, ScoreMode::AppearancePlate, ScoreMode::Full];

    pub fn label(self) -> &'static str {
        match self {
            ScoreMode::Appearance => "App",
            ScoreMode::AppearancePlate => "App+Plate",
            ScoreMode::Full => "Full",
        }
    }
}

impl fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for ScoreMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "app" | "appearance" => Ok(ScoreMode::Appearance),
            "app+plate" | "appearance_plate" | "plate" => Ok(ScoreMode::AppearancePlate),
            "full" => Ok(ScoreMode::Full),
            _ => Err(format!("unknown score mode {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub k: usize,
    pub mode: ScoreMode,
    /// Coarse candidates kept per layer, as a multiple of `k`; `None`
    /// scores every in-scope track.
    pub shortlist_ratio: Option<usize>,
    /// Stop once the list is full and a whole layer changed nothing.
    pub early_stop: bool,
    /// Leave the query camera's own tracks out of the gallery.
    pub exclude_query_camera: bool,
    /// Let a stored query track match itself.
    pub allow_self_match: bool,
    /// Coarse/fine blend for [`ScoreMode::AppearancePlate`]; full scoring
    /// uses the blend the fusion model was trained with.
    pub lambda: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            mode: ScoreMode::Full,
            shortlist_ratio: Some(DEFAULT_SHORTLIST_RATIO),
            early_stop: false,
            exclude_query_camera: false,
            allow_self_match: false,
            lambda: DEFAULT_LAMBDA,
        }
    }
}

impl SearchConfig {
    pub fn exhaustive(mut self) -> Self {
        self.shortlist_ratio = None;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub track: TrackRef,
    pub camera_id: u32,
    pub timestamp_s: f64,
    pub score: f64,
    pub layer: usize,
}

/// Best `capacity` entries by score descending, then track ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub capacity: usize,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    /// Merges new entries; returns how many of them made it into the list.
    pub fn merge(&mut self, new: impl IntoIterator<Item = RankedEntry>) -> usize {
        let before: BTreeSet<TrackRef> = self.entries.iter().map(|e| e.track).collect();
        self.entries.extend(new);
        self.entries.sort_by(entry_order);
        self.entries.dedup_by_key(|e| e.track);
        self.entries.truncate(self.capacity);
        self.entries.iter().filter(|e| !before.contains(&e.track)).count()
    }

    pub fn tracks(&self) -> impl Iterator<Item = TrackRef> + '_ {
        self.entries.iter().map(|e| e.track)
    }
}

pub fn entry_order(a: &RankedEntry, b: &RankedEntry) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.track.cmp(&b.track))
}

/// State of the list after a layer has been scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchProgress {
    pub layer: usize,
    /// Cameras scanned so far, over all layers.
    pub cameras_scanned: usize,
    /// Candidates scored so far, over all layers.
    pub candidates_evaluated: usize,
    pub list: RankedList,
}

impl fmt::Display for SearchProgress {
    /// `layer=<l> scanned=<n> list=[(track,camera,t,score)...]`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "layer={} scanned={} list={}", self.layer, self.cameras_scanned, self.list)
    }
}

impl fmt::Display for RankedList {
    /// `[(track,camera,t,score)...]`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for e in &self.entries {
            write!(f, "({},{},{},{})", e.track, e.camera_id, e.timestamp_s, e.score)?;
        }
        f.write_str("]")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub snapshots: Vec<SearchProgress>,
    pub list: RankedList,
}

/// A query resolved to pooled vectors and an observation point.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedQuery {
    pub track: Option<TrackRef>,
    pub camera_id: u32,
    pub timestamp_s: f64,
    pub appearance: Vec<f64>,
    pub plate: Option<Vec<f64>>,
}

/// Read-only view of everything a search needs.
#[derive(Clone, Copy)]
pub struct Searcher<'a> {
    pub store: &'a TrackStore,
    pub index: &'a TwoLevelIndex,
    pub graph: &'a CameraGraph,
    pub distances: &'a RoadDistances,
    pub params: Option<&'a FusionParams>,
}

impl<'a> Searcher<'a> {
    pub fn resolve(&self, query: &QueryFeature) -> Result<ResolvedQuery, SearchError> {
        match query {
            QueryFeature::Track(t) => {
                let meta = self.store.get(*t).ok_or(SearchError::UnknownTrack(*t))?;
                Ok(ResolvedQuery {
                    track: Some(*t),
                    camera_id: meta.camera_id,
                    timestamp_s: meta.timestamp_s,
                    appearance: meta.appearance_feature.clone(),
                    plate: meta.plate_feature.clone(),
                })
            }
            QueryFeature::Raw {
                camera_id,
                timestamp_s,
                appearance,
                plate,
            } => {
                if !self.graph.contains(*camera_id) {
                    return Err(SearchError::UnknownCamera(*camera_id));
                }
                if appearance.is_empty() {
                    return Err(SearchError::EmptyQuery);
                }
                Ok(ResolvedQuery {
                    track: None,
                    camera_id: *camera_id,
                    timestamp_s: *timestamp_s,
                    appearance: pool_track(appearance)?,
                    plate: if plate.is_empty() { None } else { Some(pool_track(plate)?) },
                })
            }
        }
    }

    /// Cameras of each layer, nearest first.
    pub fn layers(&self, scope: &Scope, query_camera: u32) -> Result<Vec<Vec<u32>>, SearchError> {
        match scope {
            Scope::Hops { start, max_hops } => Ok(self.graph.bfs_layers(*start, *max_hops)?),
            Scope::Cameras(cams) => {
                if cams.is_empty() {
                    return Err(SearchError::EmptyScope);
                }
                let wanted: BTreeSet<u32> = cams.iter().copied().collect();
                if let Some(&c) = wanted.iter().find(|c| !self.graph.contains(**c)) {
                    return Err(SearchError::UnknownCamera(c));
                }
                let mut out = Vec::new();
                let mut placed = BTreeSet::new();
                for layer in self.graph.bfs_layers(query_camera, usize::MAX)? {
                    let hit: Vec<u32> = layer.into_iter().filter(|c| wanted.contains(c)).collect();
                    if !hit.is_empty() {
                        placed.extend(hit.iter().copied());
                        out.push(hit);
                    }
                }
                let rest: Vec<u32> = wanted.difference(&placed).copied().collect();
                if !rest.is_empty() {
                    out.push(rest);
                }
                Ok(out)
            }
        }
    }

    /// In-scope gallery tracks of one camera.
    pub fn gallery(
        &self,
        camera_id: u32,
        query: &ResolvedQuery,
        time_range: (f64, f64),
        config: &SearchConfig,
    ) -> Result<Vec<TrackRef>, SearchError> {
        if config.exclude_query_camera && camera_id == query.camera_id {
            return Ok(Vec::new());
        }
        let tracks = self.store.scan(camera_id, time_range.0, time_range.1)?;
        Ok(tracks
            .iter()
            .map(|t| t.track_ref())
            .filter(|t| config.allow_self_match || Some(*t) != query.track)
            .collect())
    }

    /// Final similarity of one gallery track to the query under `config.mode`.
    pub fn score(
        &self,
        query: &ResolvedQuery,
        track: TrackRef,
        coarse: f64,
        config: &SearchConfig,
    ) -> Result<f64, SearchError> {
        if config.mode == ScoreMode::Appearance {
            return Ok(coarse);
        }
        let fine = match (&query.plate, self.index.fine().and_then(|f| f.vector(track))) {
            (Some(q), Some(g)) => Some(similarity(q, g)?),
            _ => None,
        };
        if config.mode == ScoreMode::AppearancePlate {
            return Ok(visual_similarity(coarse, fine, config.lambda)?);
        }
        let params = self.params.ok_or(SearchError::MissingFusionParams)?;
        let visual = visual_similarity(coarse, fine, params.lambda)?;
        let meta = self.store.get(track).ok_or(SearchError::UnknownTrack(track))?;
        let pair = if params.uses_slot_weights() {
            st_distance_with_slots(
                query.camera_id,
                query.timestamp_s,
                meta.camera_id,
                meta.timestamp_s,
                self.graph,
                self.distances,
            )?
        } else {
            st_distance(query.camera_id, query.timestamp_s, meta.camera_id, meta.timestamp_s, self.distances)?
        };
        Ok(params.score(visual, &pair))
    }

    /// Runs the search, handing each layer's snapshot to `on_layer` as soon
    /// as it is ready.
    pub fn search_with(
        &self,
        triplet: &QueryTriplet,
        config: &SearchConfig,
        mut on_layer: impl FnMut(&SearchProgress),
    ) -> Result<RankedList, SearchError> {
        if config.k == 0 {
            return Err(SearchError::ZeroK);
        }
        let (t0, t1) = triplet.time_range;
        if !(t0 <= t1) {
            return Err(SearchError::InvalidTimeRange(t0, t1));
        }
        if config.mode == ScoreMode::Full && self.params.is_none() {
            return Err(SearchError::MissingFusionParams);
        }
        let query = self.resolve(&triplet.query)?;
        let layers = self.layers(&triplet.scope, query.camera_id)?;

        let mut list = RankedList::new(config.k);
        let (mut scanned, mut evaluated) = (0usize, 0usize);
        for (layer, cameras) in layers.iter().enumerate() {
            let mut gallery = BTreeSet::new();
            for &c in cameras {
                gallery.extend(self.gallery(c, &query, triplet.time_range, config)?);
            }
            scanned += cameras.len();
            if let Some(missing) = gallery.iter().find(|t| !self.index.coarse().contains(**t)) {
                return Err(SearchError::IndexNotBuilt(*missing));
            }
            let mut added = 0;
            if !gallery.is_empty() {
                let shortlist = match config.shortlist_ratio {
                    Some(r) => (r.max(1) * config.k).min(gallery.len()),
                    None => gallery.len(),
                };
                let coarse = self
                    .index
                    .knn(Level::Coarse, &query.appearance, shortlist, Some(&gallery))?;
                let mut scored = Vec::with_capacity(coarse.len());
                for n in coarse {
                    let meta = self.store.get(n.track).ok_or(SearchError::UnknownTrack(n.track))?;
                    scored.push(RankedEntry {
                        track: n.track,
                        camera_id: meta.camera_id,
                        timestamp_s: meta.timestamp_s,
                        score: self.score(&query, n.track, n.similarity, config)?,
                        layer,
                    });
                }
                evaluated += scored.len();
                added = list.merge(scored);
            }
            let progress = SearchProgress {
                layer,
                cameras_scanned: scanned,
                candidates_evaluated: evaluated,
                list: list.clone(),
            };
            on_layer(&progress);
            if config.early_stop && added == 0 && list.is_full() {
                break;
            }
        }
        Ok(list)
    }

    pub fn search(&self, triplet: &QueryTriplet, config: &SearchConfig) -> Result<SearchOutcome, SearchError> {
        let mut snapshots = Vec::new();
        let list = self.search_with(triplet, config, |p| snapshots.push(p.clone()))?;
        Ok(SearchOutcome { snapshots, list })
    }

    /// Follow-on query from a result: the track's own features, searched
    /// from its camera over `window_s` seconds after (or, when negative,
    /// before) its timestamp.
    pub fn pivot(&self, track: TrackRef, window_s: f64, max_hops: usize) -> Result<QueryTriplet, SearchError> {
        pivot(self.store, track, window_s, max_hops)
    }
}

/// See [`Searcher::pivot`].
pub fn pivot(store: &TrackStore, track: TrackRef, window_s: f64, max_hops: usize) -> Result<QueryTriplet, SearchError> {
    let meta = store.get(track).ok_or(SearchError::UnknownTrack(track))?;
    let t = meta.timestamp_s;
    let end = t + window_s;
    Ok(QueryTriplet {
        query: QueryFeature::Track(track),
        time_range: (t.min(end), t.max(end)),
        scope: Scope::Hops {
            start: meta.camera_id,
            max_hops,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera_graph::{CameraNode, TopologyDescription};
    use crate::feature_index::IndexConfig;
    use crate::track_store::tests::track;
    use crate::track_store::TrackMetadata;

    struct Fixture {
        store: TrackStore,
        index: TwoLevelIndex,
        graph: CameraGraph,
        distances: RoadDistances,
        params: FusionParams,
    }

    impl Fixture {
        fn searcher(&self) -> Searcher<'_> {
            Searcher {
                store: &self.store,
                index: &self.index,
                graph: &self.graph,
                distances: &self.distances,
                params: Some(&self.params),
            }
        }
    }

    fn with_vec(mut t: TrackMetadata, v: &[f64]) -> TrackMetadata {
        t.appearance_feature = v.to_vec();
        t.appearance_feature.resize(4, 0.0);
        t.plate_feature = None;
        t.plate = crate::track_store::UNAVAILABLE_PLATE.into();
        t
    }

    /// Chain 0 -> 1 -> 2 plus an isolated camera 3.
    fn fixture() -> Fixture {
        let graph = CameraGraph::build(&TopologyDescription {
            slot_length_s: 600.0,
            nodes: (0..4).map(|c| CameraNode::new(c, 0.0, 0.0)).collect(),
            edges: vec![(0, 1, 100.0), (1, 2, 100.0)],
        })
        .unwrap();
        let mut store = TrackStore::with_cameras(4, 2, 0..4);
        store.ingest(with_vec(track(0, 0, 0.0), &[1.0, 0.0])).unwrap();
        store.ingest(with_vec(track(1, 0, 10.0), &[0.9, 0.1])).unwrap();
        store.ingest(with_vec(track(1, 1, 20.0), &[0.0, 1.0])).unwrap();
        store.ingest(with_vec(track(2, 0, 30.0), &[1.0, 0.05])).unwrap();
        store.ingest(with_vec(track(3, 0, 30.0), &[1.0, 0.0])).unwrap();
        let index = TwoLevelIndex::build(&store, &IndexConfig::default()).unwrap();
        let distances = graph.road_distances();
        // neutral spatiotemporal model: the fused score follows visual similarity
        let mut params = FusionParams::zeros(2, 4);
        params.fuse_w = [8.0, 0.0];
        Fixture {
            store,
            index,
            graph,
            distances,
            params,
        }
    }

    fn triplet(track: TrackRef, max_hops: usize) -> QueryTriplet {
        QueryTriplet {
            query: QueryFeature::Track(track),
            time_range: (0.0, 100.0),
            scope: Scope::Hops { start: track.camera_id, max_hops },
        }
    }

    #[test]
    fn layers_are_scanned_near_to_far() {
        let f = fixture();
        let out = f
            .searcher()
            .search(&triplet(TrackRef::new(0, 0), 5), &SearchConfig::default())
            .unwrap();
        assert_eq!(out.snapshots.len(), 3);
        assert_eq!(out.snapshots[0].list.len(), 0);
        assert_eq!(out.snapshots[1].cameras_scanned, 2);
        assert_eq!(out.snapshots[1].candidates_evaluated, 2);
        assert_eq!(out.snapshots[1].list.entries[0].track, TrackRef::new(1, 0));
        let order: Vec<TrackRef> = out.list.tracks().collect();
        assert_eq!(order, vec![TrackRef::new(2, 0), TrackRef::new(1, 0), TrackRef::new(1, 1)]);
        assert_eq!(out.list.entries[0].layer, 2);
        assert_eq!(out.snapshots.last().unwrap().list, out.list);
    }

    #[test]
    fn isolated_camera_gives_empty_list_and_one_snapshot() {
        let f = fixture();
        let out = f
            .searcher()
            .search(&triplet(TrackRef::new(3, 0), 5), &SearchConfig::default())
            .unwrap();
        assert_eq!(out.snapshots.len(), 1);
        assert!(out.list.is_empty());
    }

    #[test]
    fn self_match_ranks_first_when_allowed() {
        let f = fixture();
        let cfg = SearchConfig {
            allow_self_match: true,
            ..SearchConfig::default()
        };
        let out = f.searcher().search(&triplet(TrackRef::new(1, 0), 1), &cfg).unwrap();
        assert_eq!(out.list.entries[0].track, TrackRef::new(1, 0));
        let best = out.list.entries[0].score;
        assert!(out.list.entries[1..].iter().all(|e| e.score < best));
    }

    #[test]
    fn capacity_is_constant_and_displacement_only_by_better_scores() {
        let f = fixture();
        let cfg = SearchConfig {
            k: 1,
            mode: ScoreMode::Appearance,
            ..SearchConfig::default()
        };
        let out = f.searcher().search(&triplet(TrackRef::new(0, 0), 5), &cfg).unwrap();
        for pair in out.snapshots.windows(2) {
            assert!(pair[1].list.len() <= 1);
            if let (Some(a), Some(b)) = (pair[0].list.entries.first(), pair[1].list.entries.first()) {
                assert!(b.score >= a.score);
            }
        }
    }

    #[test]
    fn explicit_camera_scope_layers_by_hops() {
        let f = fixture();
        let s = f.searcher();
        assert_eq!(s.layers(&Scope::Cameras(vec![3, 2, 0]), 0).unwrap(), vec![vec![0], vec![2], vec![3]]);
        assert!(matches!(s.layers(&Scope::Cameras(vec![]), 0), Err(SearchError::EmptyScope)));
        assert!(matches!(s.layers(&Scope::Cameras(vec![9]), 0), Err(SearchError::UnknownCamera(9))));
    }

    #[test]
    fn time_range_and_errors() {
        let f = fixture();
        let s = f.searcher();
        let mut t = triplet(TrackRef::new(0, 0), 5);
        t.time_range = (15.0, 25.0);
        let out = s.search(&t, &SearchConfig::default()).unwrap();
        assert_eq!(out.list.tracks().collect::<Vec<_>>(), vec![TrackRef::new(1, 1)]);
        t.time_range = (30.0, 10.0);
        assert!(matches!(s.search(&t, &SearchConfig::default()), Err(SearchError::InvalidTimeRange(..))));
        let missing = triplet(TrackRef::new(0, 9), 1);
        assert!(matches!(s.search(&missing, &SearchConfig::default()), Err(SearchError::UnknownTrack(_))));
        let no_params = Searcher { params: None, ..s };
        assert!(matches!(
            no_params.search(&triplet(TrackRef::new(0, 0), 1), &SearchConfig::default()),
            Err(SearchError::MissingFusionParams)
        ));
    }

    #[test]
    fn pivot_maps_fields() {
        let f = fixture();
        let p = f.searcher().pivot(TrackRef::new(1, 1), 1800.0, 2).unwrap();
        assert_eq!(p.time_range, (20.0, 1820.0));
        assert_eq!(p.scope, Scope::Hops { start: 1, max_hops: 2 });
        assert_eq!(p.query, QueryFeature::Track(TrackRef::new(1, 1)));
        let back = f.searcher().pivot(TrackRef::new(1, 1), -5.0, 2).unwrap();
        assert_eq!(back.time_range, (15.0, 20.0));
        // zero-length window keeps only co-timestamped tracks
        let zero = pivot(&f.store, TrackRef::new(2, 0), 0.0, 3).unwrap();
        let out = f.searcher().search(&zero, &SearchConfig::default()).unwrap();
        assert!(out.list.is_empty());
    }

    #[test]
    fn raw_query_pools_vectors() {
        let f = fixture();
        let raw = QueryTriplet {
            query: QueryFeature::Raw {
                camera_id: 0,
                timestamp_s: 0.0,
                appearance: vec![vec![1.0, 0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0, 0.0]],
                plate: vec![],
            },
            time_range: (0.0, 100.0),
            scope: Scope::Hops { start: 0, max_hops: 0 },
        };
        let cfg = SearchConfig {
            mode: ScoreMode::Appearance,
            ..SearchConfig::default()
        };
        let out = f.searcher().search(&raw, &cfg).unwrap();
        assert_eq!(out.list.entries[0].track, TrackRef::new(0, 0));
        assert_eq!(out.list.entries[0].score, 1.0);
    }

    #[test]
    fn snapshot_text_record() {
        let p = SearchProgress {
            layer: 2,
            cameras_scanned: 4,
            candidates_evaluated: 9,
            list: RankedList {
                capacity: 3,
                entries: vec![RankedEntry {
                    track: TrackRef::new(3, 7),
                    camera_id: 3,
                    timestamp_s: 12.5,
                    score: 0.75,
                    layer: 1,
                }],
            },
        };
        assert_eq!(p.to_string(), "layer=2 scanned=4 list=[(3:7,3,12.5,0.75)]");
    }

    #[test]
    fn triplet_json_shape() {
        let t = triplet(TrackRef::new(1, 2), 3);
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(
            json,
            r#"{"query":{"track":{"camera_id":1,"vehicle_id":2}},"time_range":[0.0,100.0],"scope":{"hops":{"start":1,"max_hops":3}}}"#
        );
        assert_eq!(serde_json::from_str::<QueryTriplet>(&json).unwrap(), t);
    }
}
