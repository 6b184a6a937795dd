//! Cross-camera, track-to-track evaluation: AP, mAP and HIT@k over the
//! ranked lists the searcher returns.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::searcher::{QueryFeature, QueryTriplet, Scope, ScoreMode, SearchConfig, SearchError, Searcher};
use crate::track_store::{TrackRef, TrackStore};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("query has no ground-truth matches")]
    NoGroundTruth,
    #[error("no queries to evaluate")]
    EmptyQuerySet,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("track {0} has no identity label")]
    Unlabeled(TrackRef),
    #[error(transparent)]
    Search(#[from] SearchError),
}

/// Average precision of one ranked list: the sum of precision at each
/// relevant rank, over the number of ground truths (found or not).
pub fn average_precision(relevant: &[bool], n_gt: usize) -> Result<f64, EvalError> {
    if n_gt == 0 {
        return Err(EvalError::NoGroundTruth);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &r) in relevant.iter().enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / n_gt as f64)
}

pub fn mean_ap(aps: &[f64]) -> Result<f64, EvalError> {
    if aps.is_empty() {
        return Err(EvalError::EmptyQuerySet);
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Whether any of the first `k` results is relevant.
pub fn hit_at(relevant: &[bool], k: usize) -> bool {
    relevant.iter().take(k).any(|&r| r)
}

/// Mean of hits over queries.
pub fn hit_rate(lists: &[Vec<bool>], k: usize) -> Result<f64, EvalError> {
    if lists.is_empty() {
        return Err(EvalError::EmptyQuerySet);
    }
    Ok(lists.iter().filter(|l| hit_at(l, k)).count() as f64 / lists.len() as f64)
}

/// Ranked relevance of one query and its ground-truth count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub query: TrackRef,
    pub relevant: Vec<bool>,
    pub n_gt: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: String,
    pub queries: usize,
    pub map: f64,
    pub hit1: f64,
    pub hit5: f64,
}

impl MethodMetrics {
    pub fn from_outcomes(method: &str, outcomes: &[QueryOutcome]) -> Result<Self, EvalError> {
        let aps = outcomes
            .iter()
            .map(|o| average_precision(&o.relevant, o.n_gt))
            .collect::<Result<Vec<_>, _>>()?;
        let lists: Vec<Vec<bool>> = outcomes.iter().map(|o| o.relevant.clone()).collect();
        Ok(Self {
            method: method.to_string(),
            queries: outcomes.len(),
            map: mean_ap(&aps)?,
            hit1: hit_rate(&lists, 1)?,
            hit5: hit_rate(&lists, 5)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub gallery: usize,
    pub methods: Vec<MethodMetrics>,
}

impl EvalReport {
    pub fn method(&self, mode: ScoreMode) -> Option<&MethodMetrics> {
        self.methods.iter().find(|m| m.method == mode.label())
    }

    /// Fixed-width table, metrics in percent.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<10} {:>8} {:>8} {:>8} {:>8}", "method", "mAP", "HIT@1", "HIT@5", "queries");
        for m in &self.methods {
            let _ = writeln!(
                s,
                "{:<10} {:>8.2} {:>8.2} {:>8.2} {:>8}",
                m.method,
                m.map * 100.0,
                m.hit1 * 100.0,
                m.hit5 * 100.0,
                m.queries
            );
        }
        s
    }

    /// One JSON object per method, newline-terminated.
    pub fn json_lines(&self) -> String {
        self.methods
            .iter()
            .map(|m| {
                let mut line = serde_json::to_value(m).expect("metrics serialize");
                line["k"] = self.k.into();
                line["gallery"] = self.gallery.into();
                line.to_string() + "\n"
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Returned list length; also the `n` of the AP sum.
    pub k: usize,
    pub shortlist_ratio: Option<usize>,
    pub lambda: f64,
    pub methods: Vec<ScoreMode>,
    /// Chooses which track stands for each (vehicle, camera) pair.
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let s = SearchConfig::default();
        Self {
            k: s.k,
            shortlist_ratio: s.shortlist_ratio,
            lambda: s.lambda,
            methods: ScoreMode::ALL.to_vec(),
            seed: 0,
        }
    }
}

/// One track per (identity, camera) pair, picked with a seeded draw, keeping
/// only those whose vehicle was also seen by another camera.
pub fn select_queries(
    store: &TrackStore,
    identities: &BTreeMap<TrackRef, u32>,
    seed: u64,
) -> Result<Vec<TrackRef>, EvalError> {
    let mut groups: BTreeMap<(u32, u32), Vec<TrackRef>> = BTreeMap::new();
    let mut cameras_of: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    for t in store.iter() {
        let r = t.track_ref();
        let id = *identities.get(&r).ok_or(EvalError::Unlabeled(r))?;
        groups.entry((id, r.camera_id)).or_default().push(r);
        cameras_of.entry(id).or_default().insert(r.camera_id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<TrackRef> = groups
        .into_iter()
        .filter(|((id, _), _)| cameras_of[id].len() > 1)
        .map(|(_, tracks)| *tracks.choose(&mut rng).unwrap())
        .collect();
    out.sort();
    Ok(out)
}

/// Triplet covering every camera reachable from the query's and the whole
/// time span of the store.
pub fn protocol_triplet(store: &TrackStore, query: TrackRef) -> QueryTriplet {
    let (lo, hi) = store.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| {
        (lo.min(t.timestamp_s), hi.max(t.timestamp_s))
    });
    QueryTriplet {
        query: QueryFeature::Track(query),
        time_range: (lo.min(hi), hi.max(lo)),
        scope: Scope::Hops {
            start: query.camera_id,
            max_hops: usize::MAX,
        },
    }
}

/// Relevance of each returned track and the number of same-identity tracks
/// in the query's cross-camera gallery.
pub fn evaluate_query(
    searcher: &Searcher<'_>,
    identities: &BTreeMap<TrackRef, u32>,
    query: TrackRef,
    config: &SearchConfig,
) -> Result<QueryOutcome, EvalError> {
    let triplet = protocol_triplet(searcher.store, query);
    let id = *identities.get(&query).ok_or(EvalError::Unlabeled(query))?;
    let list = searcher.search(&triplet, config)?.list;
    let relevant = list
        .entries
        .iter()
        .map(|e| identities.get(&e.track).copied() == Some(id))
        .collect();
    let resolved = searcher.resolve(&triplet.query)?;
    let mut n_gt = 0;
    for layer in searcher.layers(&triplet.scope, query.camera_id)? {
        for c in layer {
            n_gt += searcher
                .gallery(c, &resolved, triplet.time_range, config)?
                .iter()
                .filter(|t| identities.get(t).copied() == Some(id))
                .count();
        }
    }
    Ok(QueryOutcome { query, relevant, n_gt })
}

/// Runs every configured method on the same queries with the cross-camera
/// rule.
pub fn run_protocol(
    searcher: &Searcher<'_>,
    identities: &BTreeMap<TrackRef, u32>,
    config: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    if config.k == 0 {
        return Err(EvalError::ZeroK);
    }
    let queries = select_queries(searcher.store, identities, config.seed)?;
    if queries.is_empty() {
        return Err(EvalError::EmptyQuerySet);
    }
    let mut methods = Vec::new();
    for &mode in &config.methods {
        let search = SearchConfig {
            k: config.k,
            mode,
            shortlist_ratio: config.shortlist_ratio,
            exclude_query_camera: true,
            lambda: config.lambda,
            ..SearchConfig::default()
        };
        let outcomes = queries
            .iter()
            .map(|&q| evaluate_query(searcher, identities, q, &search))
            .filter(|o| !matches!(o, Ok(o) if o.n_gt == 0))
            .collect::<Result<Vec<_>, _>>()?;
        methods.push(MethodMetrics::from_outcomes(mode.label(), &outcomes)?);
    }
    Ok(EvalReport {
        k: config.k,
        gallery: searcher.store.len(),
        methods,
    })
}
