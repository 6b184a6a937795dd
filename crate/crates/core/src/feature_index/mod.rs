//! Two-level vector index over track features.
//!
//! Level 1 (coarse) indexes appearance vectors of every track, level 2
//! (fine) indexes plate vectors of tracks whose plate was read. Each level
//! keeps an exact flat copy of its vectors; the approximate mode adds a
//! randomized partition forest whose search budget is calibrated against
//! the flat scan at build time.

mod forest;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{join_floats, parse_floats, parse_kv};
use crate::track_store::{TrackRef, TrackStore};
use forest::{dot, Forest};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot pool an empty sequence of vectors")]
    EmptySequence,
    #[error("dimension mismatch: {got} vs {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("vector has non-finite values")]
    NonFinite,
    #[error("{0} level has no vectors")]
    EmptyLevel(Level),
    #[error("{0} level is not built")]
    LevelNotBuilt(Level),
    #[error("track {0} already indexed")]
    DuplicateTrack(TrackRef),
    #[error("K must be at least 1")]
    ZeroK,
    #[error("invalid index config: {0}")]
    Config(String),
    #[error("unsupported index format: {0}")]
    FormatVersion(String),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Coarse,
    Fine,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Coarse => "coarse",
            Level::Fine => "fine",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexMode {
    #[default]
    Exact,
    Approx,
}

impl FromStr for IndexMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(Self::Exact),
            "approx" => Ok(Self::Approx),
            _ => Err(format!("index mode must be exact or approx, got {s:?}")),
        }
    }
}

impl fmt::Display for IndexMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Exact => "exact",
            Self::Approx => "approx",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexConfig {
    pub mode: IndexMode,
    pub trees: usize,
    pub leaf_size: usize,
    /// Mean recall@K the calibrated search budget must reach on held-in
    /// sample queries.
    pub recall_target: f64,
    pub seed: u64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            mode: IndexMode::Exact,
            trees: 16,
            leaf_size: 32,
            recall_target: 0.95,
            seed: 42,
        }
    }
}

impl IndexConfig {
    pub fn approx() -> Self {
        Self {
            mode: IndexMode::Approx,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<(), IndexError> {
        if self.trees == 0 || self.leaf_size == 0 {
            return Err(IndexError::Config("trees and leaf_size must be positive".into()));
        }
        if !(self.recall_target > 0.0 && self.recall_target <= 1.0) {
            return Err(IndexError::Config(format!("recall_target {} outside (0, 1]", self.recall_target)));
        }
        Ok(())
    }
}

const CALIBRATION_QUERIES: usize = 48;
const CALIBRATION_K: usize = 10;
/// Buffered insertions trigger a rebuild once they exceed this share of the
/// forest-covered items.
const REBUILD_FRACTION: f64 = 0.1;

/// Element-wise mean of per-image vectors.
pub fn pool_track(vectors: &[Vec<f64>]) -> Result<Vec<f64>, IndexError> {
    let first = vectors.first().ok_or(IndexError::EmptySequence)?;
    let dim = first.len();
    let mut acc = vec![0.0; dim];
    for v in vectors {
        if v.len() != dim {
            return Err(IndexError::DimensionMismatch {
                got: v.len(),
                expected: dim,
            });
        }
        acc.iter_mut().zip(v).for_each(|(a, x)| *a += x);
    }
    let n = vectors.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Cosine similarity mapped affinely onto `[0, 1]`.
pub fn similarity(a: &[f64], b: &[f64]) -> Result<f64, IndexError> {
    if a.len() != b.len() {
        return Err(IndexError::DimensionMismatch {
            got: b.len(),
            expected: a.len(),
        });
    }
    let (na, nb) = (dot(a, a), dot(b, b));
    if na == 0.0 || nb == 0.0 {
        return Err(IndexError::ZeroVector);
    }
    Ok(score(dot(a, b), na, nb))
}

/// `sqrt(x * x) == |x|` holds exactly in binary floating point, so identical
/// and opposite vectors land exactly on 1 and 0.
fn score(dot: f64, sq_norm_a: f64, sq_norm_b: f64) -> f64 {
    let cos = dot / (sq_norm_a * sq_norm_b).sqrt();
    ((1.0 + cos) / 2.0).clamp(0.0, 1.0)
}

fn check_query(q: &[f64], dim: usize) -> Result<f64, IndexError> {
    if q.len() != dim {
        return Err(IndexError::DimensionMismatch {
            got: q.len(),
            expected: dim,
        });
    }
    if q.iter().any(|x| !x.is_finite()) {
        return Err(IndexError::NonFinite);
    }
    let n = dot(q, q);
    if n == 0.0 {
        return Err(IndexError::ZeroVector);
    }
    Ok(n)
}

/// One ranked hit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub track: TrackRef,
    pub similarity: f64,
}

/// Ranking order: similarity descending, then track ascending.
pub fn rank_order(a: &Neighbor, b: &Neighbor) -> Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then_with(|| a.track.cmp(&b.track))
}

/// Keeps the best `k` neighbors seen so far.
struct TopK {
    k: usize,
    heap: BinaryHeap<Worst>,
}

struct Worst(Neighbor);

impl PartialEq for Worst {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Worst {}
impl Ord for Worst {
    fn cmp(&self, other: &Self) -> Ordering {
        rank_order(&self.0, &other.0)
    }
}
impl PartialOrd for Worst {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl TopK {
    fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    fn push(&mut self, n: Neighbor) {
        if self.heap.len() == self.k {
            let worst = &self.heap.peek().unwrap().0;
            if rank_order(&n, worst) != Ordering::Less {
                return;
            }
        }
        self.heap.push(Worst(n));
        if self.heap.len() > self.k {
            self.heap.pop();
        }
    }

    fn into_sorted(self) -> Vec<Neighbor> {
        self.heap.into_sorted_vec().into_iter().map(|w| w.0).collect()
    }
}

/// Vector index for one level.
#[derive(Debug, Clone)]
pub struct LevelIndex {
    level: Level,
    dim: usize,
    config: IndexConfig,
    refs: Vec<TrackRef>,
    slots: BTreeMap<TrackRef, u32>,
    vectors: Vec<f64>,
    sq_norms: Vec<f64>,
    /// Unit copies, used only for forest routing.
    unit: Vec<f64>,
    forest: Option<Forest>,
    /// Items `0..covered` are in the forest; the rest are scanned exactly.
    covered: usize,
    search_budget: usize,
}

impl LevelIndex {
    pub fn build(
        level: Level,
        dim: usize,
        items: impl IntoIterator<Item = (TrackRef, Vec<f64>)>,
        config: &IndexConfig,
    ) -> Result<Self, IndexError> {
        config.validate()?;
        let mut index = Self {
            level,
            dim,
            config: config.clone(),
            refs: Vec::new(),
            slots: BTreeMap::new(),
            vectors: Vec::new(),
            sq_norms: Vec::new(),
            unit: Vec::new(),
            forest: None,
            covered: 0,
            search_budget: 0,
        };
        for (track, v) in items {
            index.push(track, v)?;
        }
        if index.is_empty() {
            return Err(IndexError::EmptyLevel(level));
        }
        index.rebuild();
        Ok(index)
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    pub fn contains(&self, track: TrackRef) -> bool {
        self.slots.contains_key(&track)
    }

    pub fn tracks(&self) -> &[TrackRef] {
        &self.refs
    }

    pub fn vector(&self, track: TrackRef) -> Option<&[f64]> {
        self.slots.get(&track).map(|&s| self.row(s as usize))
    }

    /// Number of candidates the approximate search examines per query.
    pub fn search_budget(&self) -> usize {
        self.search_budget
    }

    fn row(&self, slot: usize) -> &[f64] {
        &self.vectors[slot * self.dim..(slot + 1) * self.dim]
    }

    fn push(&mut self, track: TrackRef, v: Vec<f64>) -> Result<(), IndexError> {
        let n = check_query(&v, self.dim)?;
        if self.slots.contains_key(&track) {
            return Err(IndexError::DuplicateTrack(track));
        }
        self.slots.insert(track, self.refs.len() as u32);
        self.refs.push(track);
        let len = n.sqrt();
        self.unit.extend(v.iter().map(|x| x / len));
        self.vectors.extend(v);
        self.sq_norms.push(n);
        Ok(())
    }

    /// Adds a track. New items are scanned exactly until they exceed a tenth
    /// of the forest, at which point the forest is rebuilt over everything.
    pub fn insert(&mut self, track: TrackRef, v: Vec<f64>) -> Result<(), IndexError> {
        self.push(track, v)?;
        let pending = self.len() - self.covered;
        if pending as f64 > REBUILD_FRACTION * self.covered as f64 {
            self.rebuild();
        }
        Ok(())
    }

    pub fn pending_inserts(&self) -> usize {
        self.len() - self.covered
    }

    fn rebuild(&mut self) {
        self.covered = self.len();
        if self.config.mode == IndexMode::Exact {
            self.forest = None;
            self.search_budget = self.len();
            return;
        }
        self.forest = Some(Forest::build(
            &self.unit,
            self.dim,
            self.config.trees,
            self.config.leaf_size,
            self.config.seed,
        ));
        self.search_budget = self.calibrate();
    }

    /// Smallest budget on a 1.25x geometric ladder whose mean recall@10 on
    /// sampled member queries (self excluded) clears the target plus half
    /// of the remaining gap.
    fn calibrate(&self) -> usize {
        let n = self.len();
        let k = CALIBRATION_K.min(n.saturating_sub(1));
        if k == 0 {
            return n;
        }
        let goal = self.config.recall_target + (1.0 - self.config.recall_target) / 2.0;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x5eed);
        let picks = sample(&mut rng, n, CALIBRATION_QUERIES.min(n));
        let cases: Vec<(usize, BTreeSet<TrackRef>)> = picks
            .iter()
            .map(|q| {
                let me = self.refs[q];
                let truth = self
                    .exact_scan(self.row(q), self.sq_norms[q], k + 1, |t| t != me)
                    .into_iter()
                    .take(k)
                    .map(|h| h.track)
                    .collect();
                (q, truth)
            })
            .collect();
        let mut budget = (k * self.config.trees).max(self.config.leaf_size);
        while budget < n {
            let mut recall = 0.0;
            for (q, truth) in &cases {
                let me = self.refs[*q];
                let got = self.forest_search(self.row(*q), self.sq_norms[*q], k, budget, |t| t != me);
                recall += got.iter().filter(|h| truth.contains(&h.track)).count() as f64 / truth.len() as f64;
            }
            if recall / cases.len() as f64 >= goal {
                return budget;
            }
            budget = budget * 5 / 4;
        }
        n
    }

    fn exact_scan(&self, q: &[f64], q_norm: f64, k: usize, keep: impl Fn(TrackRef) -> bool) -> Vec<Neighbor> {
        let mut top = TopK::new(k);
        for (slot, &track) in self.refs.iter().enumerate() {
            if keep(track) {
                top.push(Neighbor {
                    track,
                    similarity: score(dot(q, self.row(slot)), q_norm, self.sq_norms[slot]),
                });
            }
        }
        top.into_sorted()
    }

    fn forest_search(
        &self,
        q: &[f64],
        q_norm: f64,
        k: usize,
        budget: usize,
        keep: impl Fn(TrackRef) -> bool,
    ) -> Vec<Neighbor> {
        let forest = self.forest.as_ref().expect("approximate mode has a forest");
        let len = q_norm.sqrt();
        let unit_q: Vec<f64> = q.iter().map(|x| x / len).collect();
        let mut seen = vec![false; self.covered];
        let mut top = TopK::new(k);
        forest.candidates(&unit_q, budget, |item| {
            let slot = item as usize;
            if seen[slot] {
                return false;
            }
            seen[slot] = true;
            let track = self.refs[slot];
            if !keep(track) {
                return false;
            }
            top.push(Neighbor {
                track,
                similarity: score(dot(q, self.row(slot)), q_norm, self.sq_norms[slot]),
            });
            true
        });
        for slot in self.covered..self.len() {
            let track = self.refs[slot];
            if keep(track) {
                top.push(Neighbor {
                    track,
                    similarity: score(dot(q, self.row(slot)), q_norm, self.sq_norms[slot]),
                });
            }
        }
        top.into_sorted()
    }

    /// Top-`k` tracks by similarity to `query`, optionally restricted to
    /// `filter`. Filters no larger than the search budget are scanned
    /// exactly in either mode.
    pub fn knn(
        &self,
        query: &[f64],
        k: usize,
        filter: Option<&BTreeSet<TrackRef>>,
    ) -> Result<Vec<Neighbor>, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        let q_norm = check_query(query, self.dim)?;
        let exact = self.forest.is_none();
        match filter {
            Some(f) if exact || f.len() <= self.search_budget => {
                let mut top = TopK::new(k);
                for track in f {
                    if let Some(&slot) = self.slots.get(track) {
                        let slot = slot as usize;
                        top.push(Neighbor {
                            track: *track,
                            similarity: score(dot(query, self.row(slot)), q_norm, self.sq_norms[slot]),
                        });
                    }
                }
                Ok(top.into_sorted())
            }
            Some(f) => Ok(self.forest_search(query, q_norm, k, self.search_budget, |t| f.contains(&t))),
            None if exact => Ok(self.exact_scan(query, q_norm, k, |_| true)),
            None => Ok(self.forest_search(query, q_norm, k, self.search_budget, |_| true)),
        }
    }

    /// Flat-scan oracle, regardless of mode.
    pub fn knn_exact(
        &self,
        query: &[f64],
        k: usize,
        filter: Option<&BTreeSet<TrackRef>>,
    ) -> Result<Vec<Neighbor>, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        let q_norm = check_query(query, self.dim)?;
        Ok(self.exact_scan(query, q_norm, k, |t| filter.is_none_or(|f| f.contains(&t))))
    }
}

/// Coarse appearance index plus, when any plate was read, the fine plate
/// index.
#[derive(Debug, Clone)]
pub struct TwoLevelIndex {
    coarse: LevelIndex,
    fine: Option<LevelIndex>,
}

impl TwoLevelIndex {
    pub fn build(store: &TrackStore, config: &IndexConfig) -> Result<Self, IndexError> {
        let coarse = LevelIndex::build(
            Level::Coarse,
            store.appearance_dim(),
            store.iter().map(|t| (t.track_ref(), t.appearance_feature.clone())),
            config,
        )?;
        let plated: Vec<_> = store
            .iter()
            .filter_map(|t| t.plate_feature.clone().map(|p| (t.track_ref(), p)))
            .collect();
        let fine = if plated.is_empty() {
            None
        } else {
            Some(LevelIndex::build(Level::Fine, store.plate_dim(), plated, config)?)
        };
        Ok(Self { coarse, fine })
    }

    pub fn coarse(&self) -> &LevelIndex {
        &self.coarse
    }

    pub fn fine(&self) -> Option<&LevelIndex> {
        self.fine.as_ref()
    }

    pub fn level(&self, level: Level) -> Result<&LevelIndex, IndexError> {
        match level {
            Level::Coarse => Ok(&self.coarse),
            Level::Fine => self.fine.as_ref().ok_or(IndexError::LevelNotBuilt(Level::Fine)),
        }
    }

    pub fn knn(
        &self,
        level: Level,
        query: &[f64],
        k: usize,
        filter: Option<&BTreeSet<TrackRef>>,
    ) -> Result<Vec<Neighbor>, IndexError> {
        self.level(level)?.knn(query, k, filter)
    }

    /// Adds a newly ingested track to both levels.
    pub fn insert(&mut self, track: TrackRef, appearance: Vec<f64>, plate: Option<Vec<f64>>) -> Result<(), IndexError> {
        if let Some(p) = &plate {
            check_query(p, self.fine.as_ref().map_or(p.len(), |f| f.dim))?;
        }
        self.coarse.insert(track, appearance)?;
        if let Some(p) = plate {
            match &mut self.fine {
                Some(f) => f.insert(track, p)?,
                None => {
                    self.fine = Some(LevelIndex::build(Level::Fine, p.len(), [(track, p)], &self.coarse.config)?)
                }
            }
        }
        Ok(())
    }

    pub fn config(&self) -> &IndexConfig {
        &self.coarse.config
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IndexError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IndexError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// Writes vectors and build parameters; loading rebuilds the same forest
    /// from the stored seed.
    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let c = &self.coarse.config;
        writeln!(
            w,
            "pvss-index v1 mode={} trees={} leaf_size={} recall_target={} seed={}",
            c.mode, c.trees, c.leaf_size, c.recall_target, c.seed
        )?;
        for level in std::iter::once(&self.coarse).chain(self.fine.as_ref()) {
            writeln!(w, "level {} dim={} count={}", level.level, level.dim, level.len())?;
            for (slot, track) in level.refs.iter().enumerate() {
                writeln!(w, "{track} {}", join_floats(level.row(slot)))?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, IndexError> {
        let mut lines = r.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| IndexError::FormatVersion("missing header".into()))?;
        let header = header?;
        let bad = || IndexError::FormatVersion(header.clone());
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 7 || parts[0] != "pvss-index" || parts[1] != "v1" {
            return Err(bad());
        }
        let mode: String = parse_kv(parts[2], "mode").map_err(|_| bad())?;
        let config = IndexConfig {
            mode: mode.parse().map_err(|_| bad())?,
            trees: parse_kv(parts[3], "trees").map_err(|_| bad())?,
            leaf_size: parse_kv(parts[4], "leaf_size").map_err(|_| bad())?,
            recall_target: parse_kv(parts[5], "recall_target").map_err(|_| bad())?,
            seed: parse_kv(parts[6], "seed").map_err(|_| bad())?,
        };
        let mut levels: Vec<(Level, usize, Vec<(TrackRef, Vec<f64>)>)> = Vec::new();
        for (i, line) in lines {
            let line = line?;
            let err = |reason: String| IndexError::Parse { line: i + 1, reason };
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("level ") {
                let toks: Vec<&str> = rest.split_whitespace().collect();
                if toks.len() != 3 {
                    return Err(err(format!("bad level line {line:?}")));
                }
                let level = match toks[0] {
                    "coarse" => Level::Coarse,
                    "fine" => Level::Fine,
                    other => return Err(err(format!("unknown level {other:?}"))),
                };
                let dim = parse_kv(toks[1], "dim").map_err(err)?;
                let count: usize = parse_kv(toks[2], "count").map_err(err)?;
                levels.push((level, dim, Vec::with_capacity(count)));
                continue;
            }
            let (_, _, items) = levels.last_mut().ok_or_else(|| err("vector before level line".into()))?;
            let (track, floats) = line
                .split_once(' ')
                .ok_or_else(|| err(format!("bad vector line {line:?}")))?;
            items.push((track.parse().map_err(err)?, parse_floats(floats).map_err(err)?));
        }
        let mut coarse = None;
        let mut fine = None;
        for (level, dim, items) in levels {
            let built = LevelIndex::build(level, dim, items, &config)?;
            match level {
                Level::Coarse => coarse = Some(built),
                Level::Fine => fine = Some(built),
            }
        }
        Ok(Self {
            coarse: coarse.ok_or(IndexError::EmptyLevel(Level::Coarse))?,
            fine,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    fn items(vs: &[Vec<f64>]) -> Vec<(TrackRef, Vec<f64>)> {
        vs.iter()
            .enumerate()
            .map(|(i, v)| (TrackRef::new(i as u32 % 7, i as u32), v.clone()))
            .collect()
    }

    #[test]
    fn pool_identity_and_mean() {
        assert_eq!(pool_track(&[vec![1.0, -2.0, 3.5]]).unwrap(), vec![1.0, -2.0, 3.5]);
        assert_eq!(pool_track(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(), vec![0.5, 0.5]);
        assert!(matches!(pool_track(&[]), Err(IndexError::EmptySequence)));
        assert!(matches!(
            pool_track(&[vec![1.0], vec![1.0, 2.0]]),
            Err(IndexError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn pool_matches_column_oracle() {
        let vs = random_vectors(50, 2048, 3);
        let pooled = pool_track(&vs).unwrap();
        for (d, &p) in pooled.iter().enumerate() {
            let column: Vec<f64> = vs.iter().map(|v| v[d]).collect();
            let mean = column.iter().rev().sum::<f64>() / 50.0;
            assert!((p - mean).abs() <= 1e-12, "dim {d}: {p} vs {mean}");
        }
    }

    #[test]
    fn similarity_fixed_points() {
        let a = vec![0.3, -1.7, 2.2, 0.1];
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        assert_eq!(similarity(&a, &a).unwrap(), 1.0);
        assert_eq!(similarity(&a, &neg).unwrap(), 0.0);
        assert_eq!(similarity(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.5);
        assert!(matches!(similarity(&a, &[1.0]), Err(IndexError::DimensionMismatch { .. })));
        assert!(matches!(similarity(&a, &[0.0; 4]), Err(IndexError::ZeroVector)));
    }

    #[test]
    fn single_vector_always_rank_one() {
        let idx = LevelIndex::build(
            Level::Coarse,
            3,
            [(TrackRef::new(1, 1), vec![1.0, 2.0, 3.0])],
            &IndexConfig::approx(),
        )
        .unwrap();
        for q in random_vectors(10, 3, 5) {
            let hits = idx.knn(&q, 5, None).unwrap();
            assert_eq!(hits.len(), 1);
            assert_eq!(hits[0].track, TrackRef::new(1, 1));
        }
    }

    #[test]
    fn one_hot_self_match() {
        let vs: Vec<Vec<f64>> = (0..100)
            .map(|i| {
                let mut v = vec![0.0; 100];
                v[i] = 1.0;
                v
            })
            .collect();
        for config in [IndexConfig::default(), IndexConfig::approx()] {
            let idx = LevelIndex::build(Level::Coarse, 100, items(&vs), &config).unwrap();
            for (i, v) in vs.iter().enumerate() {
                let hits = idx.knn(v, 3, None).unwrap();
                assert_eq!(hits[0].track.vehicle_id, i as u32);
                assert_eq!(hits[0].similarity, 1.0);
                assert_eq!(hits[1].similarity, 0.5);
            }
        }
    }

    #[test]
    fn saturation_and_single_filter() {
        let vs = random_vectors(20, 8, 11);
        let idx = LevelIndex::build(Level::Coarse, 8, items(&vs), &IndexConfig::default()).unwrap();
        let all = idx.knn(&vs[0], 100, None).unwrap();
        assert_eq!(all.len(), 20);
        assert!(all.windows(2).all(|w| rank_order(&w[0], &w[1]) == Ordering::Less));
        let only = BTreeSet::from([TrackRef::new(5, 12)]);
        let hits = idx.knn(&vs[0], 10, Some(&only)).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].similarity, similarity(&vs[0], &vs[12]).unwrap());
        assert!(matches!(idx.knn(&vs[0], 0, None), Err(IndexError::ZeroK)));
    }

    #[test]
    fn build_errors() {
        let empty: Vec<(TrackRef, Vec<f64>)> = Vec::new();
        assert!(matches!(
            LevelIndex::build(Level::Fine, 3, empty, &IndexConfig::default()),
            Err(IndexError::EmptyLevel(Level::Fine))
        ));
        let dup = vec![(TrackRef::new(1, 1), vec![1.0]), (TrackRef::new(1, 1), vec![2.0])];
        assert!(matches!(
            LevelIndex::build(Level::Coarse, 1, dup, &IndexConfig::default()),
            Err(IndexError::DuplicateTrack(_))
        ));
    }

    #[test]
    fn ties_break_by_track_ref() {
        let items = vec![
            (TrackRef::new(2, 0), vec![1.0, 0.0]),
            (TrackRef::new(1, 5), vec![2.0, 0.0]),
            (TrackRef::new(1, 3), vec![0.5, 0.0]),
        ];
        let idx = LevelIndex::build(Level::Coarse, 2, items, &IndexConfig::default()).unwrap();
        let order: Vec<_> = idx.knn(&[1.0, 0.0], 3, None).unwrap().iter().map(|h| h.track).collect();
        assert_eq!(order, vec![TrackRef::new(1, 3), TrackRef::new(1, 5), TrackRef::new(2, 0)]);
    }

    #[test]
    fn approximate_recall_on_moderate_corpus() {
        let vs = random_vectors(5000, 32, 21);
        let idx = LevelIndex::build(Level::Coarse, 32, items(&vs), &IndexConfig::approx()).unwrap();
        let queries = random_vectors(50, 32, 22);
        let mut found = 0;
        for q in &queries {
            let truth: BTreeSet<_> = idx.knn_exact(q, 10, None).unwrap().iter().map(|h| h.track).collect();
            let got = idx.knn(q, 10, None).unwrap();
            found += got.iter().filter(|h| truth.contains(&h.track)).count();
        }
        assert!(found * 100 >= 95 * 500, "recall {}", found as f64 / 500.0);
    }

    #[test]
    fn buffered_inserts_rebuild_at_threshold() {
        let vs = random_vectors(120, 6, 31);
        let mut idx = LevelIndex::build(Level::Coarse, 6, items(&vs[..100]), &IndexConfig::approx()).unwrap();
        for (i, v) in vs[100..110].iter().enumerate() {
            idx.insert(TrackRef::new(99, i as u32), v.clone()).unwrap();
        }
        assert_eq!(idx.pending_inserts(), 10);
        // inserted items are visible before the rebuild
        let hit = idx.knn(&vs[105], 1, None).unwrap();
        assert_eq!(hit[0].track, TrackRef::new(99, 5));
        idx.insert(TrackRef::new(99, 10), vs[110].clone()).unwrap();
        assert_eq!(idx.pending_inserts(), 0);
        assert_eq!(idx.len(), 111);
        assert!(matches!(
            idx.insert(TrackRef::new(99, 10), vs[111].clone()),
            Err(IndexError::DuplicateTrack(_))
        ));
    }

    #[test]
    fn index_file_round_trip() {
        use crate::track_store::{TrackMetadata, UNAVAILABLE_PLATE};
        let mut store = TrackStore::with_cameras(4, 2, [1, 2]);
        let vs = random_vectors(30, 4, 41);
        for (i, v) in vs.iter().enumerate() {
            let plated = i % 3 != 0;
            store
                .ingest(TrackMetadata {
                    camera_id: 1 + (i as u32 % 2),
                    vehicle_id: i as u32,
                    frame_id: 0,
                    track_length: 5,
                    trajectory: vec![(0.0, 0.0); 5],
                    appearance_feature: v.clone(),
                    plate_feature: plated.then(|| vec![v[0], v[1]]),
                    duration_s: 1.0,
                    timestamp_s: i as f64,
                    plate: if plated { format!("P{i}") } else { UNAVAILABLE_PLATE.into() },
                })
                .unwrap();
        }
        let idx = TwoLevelIndex::build(&store, &IndexConfig::approx()).unwrap();
        assert_eq!(idx.coarse().len(), 30);
        assert_eq!(idx.fine().unwrap().len(), 20);
        assert!(idx.fine().unwrap().tracks().iter().all(|t| store.get(*t).unwrap().has_plate()));
        let mut buf = Vec::new();
        idx.write_to(&mut buf).unwrap();
        let back = TwoLevelIndex::read_from(&buf[..]).unwrap();
        assert_eq!(back.coarse().tracks(), idx.coarse().tracks());
        assert_eq!(back.fine().unwrap().tracks(), idx.fine().unwrap().tracks());
        for q in random_vectors(5, 4, 42) {
            assert_eq!(back.knn(Level::Coarse, &q, 5, None).unwrap(), idx.knn(Level::Coarse, &q, 5, None).unwrap());
        }
    }

    proptest! {
        #[test]
        fn similarity_symmetric_and_scale_invariant(
            a in prop::collection::vec(-10.0f64..10.0, 6),
            b in prop::collection::vec(-10.0f64..10.0, 6),
            exp in -20i32..20,
        ) {
            prop_assume!(a.iter().any(|&x| x != 0.0) && b.iter().any(|&x| x != 0.0));
            let s = 2f64.powi(exp);
            let sa: Vec<f64> = a.iter().map(|x| x * s).collect();
            let ab = similarity(&a, &b).unwrap();
            prop_assert_eq!(ab, similarity(&b, &a).unwrap());
            prop_assert_eq!(ab, similarity(&sa, &b).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn exact_knn_is_stable(seed in any::<u64>()) {
            let vs = random_vectors(40, 5, seed);
            let idx = LevelIndex::build(Level::Coarse, 5, items(&vs), &IndexConfig::default()).unwrap();
            prop_assert_eq!(idx.knn(&vs[3], 7, None).unwrap(), idx.knn(&vs[3], 7, None).unwrap());
        }
    }
}
