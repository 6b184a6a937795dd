//! Similarity fusion: a convex blend of appearance and plate scores, a small
//! ReLU/sigmoid network over spatiotemporal distances, and a sigmoid layer
//! combining the two, trained jointly with binary cross-entropy.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera_graph::{CameraGraph, GraphError, RoadDistances};
use crate::codec::{join_floats, parse_floats, parse_kv, parse_num};
use crate::feature_index::similarity;
use crate::track_store::{TrackMetadata, TrackRef, TrackStore};

/// Plate score used when either side has no readable plate.
pub const NEUTRAL_PLATE_SCORE: f64 = 0.5;
pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_HIDDEN: usize = 64;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("score {0} outside [0, 1]")]
    OutOfRangeScore(f64),
    #[error("training data needs both positive and negative pairs")]
    SingleClassData,
    #[error("training loss diverged at epoch {0}")]
    DivergedLoss(usize),
    #[error("invalid fusion parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("unsupported params format: {0}")]
    FormatVersion(String),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Spatial and temporal separation of a query/gallery pair, plus the
/// learned travel-time weight along the connecting road path when slot
/// weights are used as extra inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StPair {
    pub d_s: f64,
    pub d_t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path_mean_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path_deviation_s: Option<f64>,
}

impl StPair {
    pub fn new(d_s: f64, d_t: f64) -> Self {
        Self {
            d_s,
            d_t,
            path_mean_s: None,
            path_deviation_s: None,
        }
    }

    fn inputs(&self, n: usize) -> [f64; 4] {
        match n {
            2 => [self.d_s, self.d_t, 0.0, 0.0],
            _ => [
                self.d_s,
                self.d_t,
                self.path_mean_s.unwrap_or(0.0),
                self.path_deviation_s.unwrap_or(0.0),
            ],
        }
    }
}

/// Road distance between the two cameras and absolute time difference.
pub fn st_distance(
    query_camera: u32,
    query_time_s: f64,
    gallery_camera: u32,
    gallery_time_s: f64,
    distances: &RoadDistances,
) -> Result<StPair, GraphError> {
    Ok(StPair::new(
        distances.distance(query_camera, gallery_camera)?,
        (query_time_s - gallery_time_s).abs(),
    ))
}

/// [`st_distance`] plus the summed slot-mean travel time (and root-sum-square
/// deviation) along the road path, walked from the earlier observation.
pub fn st_distance_with_slots(
    query_camera: u32,
    query_time_s: f64,
    gallery_camera: u32,
    gallery_time_s: f64,
    graph: &CameraGraph,
    distances: &RoadDistances,
) -> Result<StPair, GraphError> {
    let mut pair = st_distance(query_camera, query_time_s, gallery_camera, gallery_time_s, distances)?;
    let (from, to, mut t) = if query_time_s <= gallery_time_s {
        (query_camera, gallery_camera, query_time_s)
    } else {
        (gallery_camera, query_camera, gallery_time_s)
    };
    let path = distances.path(from, to)?;
    let (mut mean, mut var) = (0.0, 0.0);
    for hop in path.windows(2) {
        // a road segment may only be mapped in the opposite direction
        let w = graph
            .weight_at(hop[0], hop[1], t)
            .or_else(|_| graph.weight_at(hop[1], hop[0], t))?;
        mean += w.mean_s;
        var += w.deviation_s * w.deviation_s;
        t += w.mean_s;
    }
    pair.path_mean_s = Some(mean);
    pair.path_deviation_s = Some(var.sqrt());
    Ok(pair)
}

/// Convex blend of coarse and fine scores; a missing fine score counts as
/// [`NEUTRAL_PLATE_SCORE`].
pub fn visual_similarity(coarse: f64, fine: Option<f64>, lambda: f64) -> Result<f64, FusionError> {
    for s in std::iter::once(coarse).chain(fine).chain(std::iter::once(lambda)) {
        if !(0.0..=1.0).contains(&s) {
            return Err(FusionError::OutOfRangeScore(s));
        }
    }
    let fine = fine.unwrap_or(NEUTRAL_PLATE_SCORE);
    Ok(lambda * coarse + (1.0 - lambda) * fine)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// All learned and configured values of the fusion model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub lambda: f64,
    /// Network inputs: 2 (distances only) or 4 (with path slot weights).
    pub inputs: usize,
    pub hidden: usize,
    /// `hidden x inputs`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub fuse_w: [f64; 2],
    pub fuse_b: f64,
    pub norm_mean: Vec<f64>,
    pub norm_scale: Vec<f64>,
}

/// Gradient of the mean loss, laid out like the trainable part of
/// [`FusionParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient(pub Vec<f64>);

impl FusionParams {
    pub fn zeros(inputs: usize, hidden: usize) -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            inputs,
            hidden,
            w1: vec![0.0; hidden * inputs],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
            fuse_w: [0.0; 2],
            fuse_b: 0.0,
            norm_mean: vec![0.0; inputs],
            norm_scale: vec![1.0; inputs],
        }
    }

    /// Uniform `±sqrt(6 / (fan_in + fan_out))` weights, zero biases.
    pub fn init(inputs: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(inputs, hidden);
        let mut glorot = |fan_in: usize, fan_out: usize, out: &mut [f64]| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            out.iter_mut().for_each(|w| *w = rng.random_range(-bound..bound));
        };
        glorot(inputs, hidden, &mut p.w1);
        glorot(hidden, 1, &mut p.w2);
        glorot(2, 1, &mut p.fuse_w);
        p
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        let bad = |m: String| Err(FusionError::InvalidParams(m));
        if !(self.inputs == 2 || self.inputs == 4) {
            return bad(format!("inputs must be 2 or 4, got {}", self.inputs));
        }
        if self.w1.len() != self.hidden * self.inputs
            || self.b1.len() != self.hidden
            || self.w2.len() != self.hidden
            || self.norm_mean.len() != self.inputs
            || self.norm_scale.len() != self.inputs
        {
            return bad("parameter shapes disagree with inputs/hidden".into());
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if self.norm_scale.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return bad("normalization scales must be positive".into());
        }
        if self.trainable().iter().chain(&self.norm_mean).any(|x| !x.is_finite()) {
            return bad("non-finite parameter".into());
        }
        Ok(())
    }

    pub fn uses_slot_weights(&self) -> bool {
        self.inputs == 4
    }

    /// Trainable values in a fixed order: w1, b1, w2, b2, fuse_w, fuse_b.
    pub fn trainable(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.trainable_len());
        v.extend(&self.w1);
        v.extend(&self.b1);
        v.extend(&self.w2);
        v.push(self.b2);
        v.extend(self.fuse_w);
        v.push(self.fuse_b);
        v
    }

    pub fn trainable_len(&self) -> usize {
        self.hidden * (self.inputs + 2) + 4
    }

    pub fn set_trainable(&mut self, v: &[f64]) {
        assert_eq!(v.len(), self.trainable_len());
        let (h, i) = (self.hidden, self.inputs);
        let (w1, rest) = v.split_at(h * i);
        let (b1, rest) = rest.split_at(h);
        let (w2, rest) = rest.split_at(h);
        self.w1.copy_from_slice(w1);
        self.b1.copy_from_slice(b1);
        self.w2.copy_from_slice(w2);
        self.b2 = rest[0];
        self.fuse_w = [rest[1], rest[2]];
        self.fuse_b = rest[3];
    }

    fn normalized(&self, pair: &StPair) -> [f64; 4] {
        let mut z = pair.inputs(self.inputs);
        for (i, zi) in z.iter_mut().take(self.inputs).enumerate() {
            *zi = (*zi - self.norm_mean[i]) / self.norm_scale[i];
        }
        z
    }

    fn hidden_pre(&self, z: &[f64; 4], j: usize) -> f64 {
        let row = &self.w1[j * self.inputs..(j + 1) * self.inputs];
        row.iter().zip(z).map(|(w, x)| w * x).sum::<f64>() + self.b1[j]
    }

    fn st_logit(&self, pair: &StPair) -> f64 {
        let z = self.normalized(pair);
        (0..self.hidden)
            .map(|j| self.w2[j] * self.hidden_pre(&z, j).max(0.0))
            .sum::<f64>()
            + self.b2
    }

    /// Spatiotemporal similarity in `(0, 1)`.
    pub fn st_similarity(&self, pair: &StPair) -> f64 {
        sigmoid(self.st_logit(pair))
    }

    pub fn fuse(&self, visual: f64, st: f64) -> f64 {
        sigmoid(self.fuse_logit(visual, st))
    }

    fn fuse_logit(&self, visual: f64, st: f64) -> f64 {
        self.fuse_w[0] * visual + self.fuse_w[1] * st + self.fuse_b
    }

    /// Final fused similarity of a pair.
    pub fn score(&self, visual: f64, pair: &StPair) -> f64 {
        self.fuse(visual, self.st_similarity(pair))
    }

    /// Mean binary cross-entropy of the fused score against the labels.
    pub fn loss(&self, batch: &[LabeledPair]) -> f64 {
        batch
            .iter()
            .map(|s| {
                let u = self.fuse_logit(s.visual, self.st_similarity(&s.pair));
                softplus(u) - if s.label { u } else { 0.0 }
            })
            .sum::<f64>()
            / batch.len() as f64
    }

    /// Mean loss and its analytic gradient over `batch`.
    pub fn loss_and_grad(&self, batch: &[LabeledPair]) -> (f64, Gradient) {
        let (h, ni) = (self.hidden, self.inputs);
        let mut g = vec![0.0; self.trainable_len()];
        let (o_b1, o_w2) = (h * ni, h * ni + h);
        let o_b2 = o_w2 + h;
        let mut loss = 0.0;
        let mut pre = vec![0.0; h];
        for s in batch {
            let z = self.normalized(&s.pair);
            let mut v = self.b2;
            for (j, a) in pre.iter_mut().enumerate() {
                *a = self.hidden_pre(&z, j);
                v += self.w2[j] * a.max(0.0);
            }
            let st = sigmoid(v);
            let u = self.fuse_logit(s.visual, st);
            let y = if s.label { 1.0 } else { 0.0 };
            loss += softplus(u) - y * u;

            let g_u = sigmoid(u) - y;
            g[o_b2 + 1] += g_u * s.visual;
            g[o_b2 + 2] += g_u * st;
            g[o_b2 + 3] += g_u;
            let g_v = g_u * self.fuse_w[1] * st * (1.0 - st);
            g[o_b2] += g_v;
            for (j, &a) in pre.iter().enumerate() {
                if a <= 0.0 {
                    continue;
                }
                g[o_w2 + j] += g_v * a;
                let g_a = g_v * self.w2[j];
                g[o_b1 + j] += g_a;
                for i in 0..ni {
                    g[j * ni + i] += g_a * z[i];
                }
            }
        }
        let n = batch.len() as f64;
        g.iter_mut().for_each(|x| *x /= n);
        (loss / n, Gradient(g))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FusionError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FusionError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "pvss-fusion v1 inputs={} hidden={}", self.inputs, self.hidden)?;
        writeln!(w, "lambda {}", self.lambda)?;
        writeln!(w, "norm_mean {}", join_floats(&self.norm_mean))?;
        writeln!(w, "norm_scale {}", join_floats(&self.norm_scale))?;
        writeln!(w, "w1 {}", join_floats(&self.w1))?;
        writeln!(w, "b1 {}", join_floats(&self.b1))?;
        writeln!(w, "w2 {}", join_floats(&self.w2))?;
        writeln!(w, "b2 {}", self.b2)?;
        writeln!(w, "fuse_w {}", join_floats(&self.fuse_w))?;
        writeln!(w, "fuse_b {}", self.fuse_b)
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, FusionError> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| FusionError::FormatVersion("missing header".into()))??;
        let parts: Vec<&str> = header.split_whitespace().collect();
        let bad = || FusionError::FormatVersion(header.clone());
        if parts.len() != 4 || parts[0] != "pvss-fusion" || parts[1] != "v1" {
            return Err(bad());
        }
        let inputs = parse_kv(parts[2], "inputs").map_err(|_| bad())?;
        let hidden = parse_kv(parts[3], "hidden").map_err(|_| bad())?;
        let mut p = Self::zeros(inputs, hidden);
        let mut fields: BTreeMap<String, String> = BTreeMap::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once(' ').ok_or_else(|| FusionError::Parse {
                line: i + 2,
                reason: format!("bad line {line:?}"),
            })?;
            fields.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| {
            fields.get(k).ok_or_else(|| FusionError::Parse {
                line: 0,
                reason: format!("missing field {k}"),
            })
        };
        let floats = |k: &str| -> Result<Vec<f64>, FusionError> {
            parse_floats(get(k)?).map_err(|reason| FusionError::Parse { line: 0, reason })
        };
        let scalar = |k: &str| -> Result<f64, FusionError> {
            parse_num(get(k)?, k).map_err(|reason| FusionError::Parse { line: 0, reason })
        };
        p.lambda = scalar("lambda")?;
        p.norm_mean = floats("norm_mean")?;
        p.norm_scale = floats("norm_scale")?;
        p.w1 = floats("w1")?;
        p.b1 = floats("b1")?;
        p.w2 = floats("w2")?;
        p.b2 = scalar("b2")?;
        let fw = floats("fuse_w")?;
        if fw.len() != 2 {
            return Err(FusionError::InvalidParams("fuse_w needs two values".into()));
        }
        p.fuse_w = [fw[0], fw[1]];
        p.fuse_b = scalar("fuse_b")?;
        p.validate()?;
        Ok(p)
    }
}

/// One training example.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub pair: StPair,
    pub visual: f64,
    pub label: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub hidden: usize,
    pub optimizer: Optimizer,
    /// Feed path slot-weight statistics to the network as two extra inputs.
    pub use_slot_weights: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            lr: 0.01,
            epochs: 60,
            batch: 64,
            seed: 42,
            hidden: DEFAULT_HIDDEN,
            optimizer: Optimizer::Adam,
            use_slot_weights: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: FusionParams,
    /// Full-data loss after each epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> f64 {
        *self.epoch_losses.last().unwrap()
    }
}

/// Mini-batch training of both networks on the mean BCE. Input
/// normalization statistics come from `samples`.
pub fn train(samples: &[LabeledPair], config: &TrainConfig) -> Result<TrainOutcome, FusionError> {
    let positives = samples.iter().filter(|s| s.label).count();
    if positives == 0 || positives == samples.len() {
        return Err(FusionError::SingleClassData);
    }
    if config.batch == 0 || !(config.lr.is_finite() && config.lr > 0.0) {
        return Err(FusionError::InvalidParams("batch and lr must be positive".into()));
    }
    let inputs = if config.use_slot_weights { 4 } else { 2 };
    let mut params = FusionParams::init(inputs, config.hidden, config.seed);
    params.lambda = config.lambda;
    let n = samples.len() as f64;
    for i in 0..inputs {
        let col: Vec<f64> = samples.iter().map(|s| s.pair.inputs(inputs)[i]).collect();
        let mean = col.iter().sum::<f64>() / n;
        let sd = (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        params.norm_mean[i] = mean;
        params.norm_scale[i] = if sd > 0.0 && sd.is_finite() { sd } else { 1.0 };
    }
    params.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut theta = params.trainable();
    let mut m = vec![0.0; theta.len()];
    let mut v = vec![0.0; theta.len()];
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut step = 0i32;
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut batch = Vec::with_capacity(config.batch);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| samples[i]));
            let (_, Gradient(g)) = params.loss_and_grad(&batch);
            step += 1;
            match config.optimizer {
                Optimizer::Sgd => {
                    theta.iter_mut().zip(&g).for_each(|(t, gi)| *t -= config.lr * gi);
                }
                Optimizer::Adam => {
                    let c1 = 1.0 - b1.powi(step);
                    let c2 = 1.0 - b2.powi(step);
                    for k in 0..theta.len() {
                        m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                        v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                        theta[k] -= config.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                    }
                }
            }
            params.set_trainable(&theta);
        }
        let loss = params.loss(samples);
        if !loss.is_finite() {
            return Err(FusionError::DivergedLoss(epoch));
        }
        epoch_losses.push(loss);
    }
    if epoch_losses.is_empty() {
        epoch_losses.push(params.loss(samples));
    }
    Ok(TrainOutcome { params, epoch_losses })
}

/// Fraction of samples whose fused score falls on the labeled side of 0.5.
pub fn accuracy(params: &FusionParams, samples: &[LabeledPair]) -> f64 {
    let hits = samples
        .iter()
        .filter(|s| (params.score(s.visual, &s.pair) > 0.5) == s.label)
        .count();
    hits as f64 / samples.len() as f64
}

/// Builds training pairs from labeled tracks: every cross-camera pair of the
/// same identity is a positive, and `negative_ratio` negatives per positive
/// are drawn uniformly from cross-camera pairs of different identities.
pub fn training_pairs(
    store: &TrackStore,
    identities: &BTreeMap<TrackRef, u32>,
    graph: &CameraGraph,
    distances: &RoadDistances,
    lambda: f64,
    use_slot_weights: bool,
    negative_ratio: usize,
    seed: u64,
) -> Result<Vec<LabeledPair>, FusionError> {
    let tracks: Vec<&TrackMetadata> = store
        .iter()
        .filter(|t| identities.contains_key(&t.track_ref()))
        .collect();
    let mut by_identity: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, t) in tracks.iter().enumerate() {
        by_identity.entry(identities[&t.track_ref()]).or_default().push(i);
    }
    let make = |q: &TrackMetadata, g: &TrackMetadata, label: bool| -> Result<LabeledPair, FusionError> {
        let coarse = similarity(&q.appearance_feature, &g.appearance_feature).expect("validated at ingest");
        let fine = match (&q.plate_feature, &g.plate_feature) {
            (Some(a), Some(b)) => Some(similarity(a, b).expect("validated at ingest")),
            _ => None,
        };
        let pair = if use_slot_weights {
            st_distance_with_slots(q.camera_id, q.timestamp_s, g.camera_id, g.timestamp_s, graph, distances)?
        } else {
            st_distance(q.camera_id, q.timestamp_s, g.camera_id, g.timestamp_s, distances)?
        };
        Ok(LabeledPair {
            pair,
            visual: visual_similarity(coarse, fine, lambda)?,
            label,
        })
    };
    let mut out = Vec::new();
    for members in by_identity.values() {
        for &a in members {
            for &b in members {
                if tracks[a].camera_id != tracks[b].camera_id {
                    out.push(make(tracks[a], tracks[b], true)?);
                }
            }
        }
    }
    let wanted = out.len() * negative_ratio;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut drawn = 0;
    let mut attempts = 0;
    while drawn < wanted && attempts < wanted * 50 + 1000 {
        attempts += 1;
        let a = tracks[rng.random_range(0..tracks.len())];
        let b = tracks[rng.random_range(0..tracks.len())];
        if a.camera_id == b.camera_id || identities[&a.track_ref()] == identities[&b.track_ref()] {
            continue;
        }
        out.push(make(a, b, false)?);
        drawn += 1;
    }
    Ok(out)
}
