//! Camera neighboring graph: directed view-connected edges between cameras,
//! road distances, and per-slot travel-time weights learned from transit
//! records.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{parse_kv, parse_num};

pub const DEFAULT_SLOT_LENGTH_S: f64 = 600.0;
pub const DEFAULT_SPEED_MPS: f64 = 10.0;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("unknown camera {0}")]
    UnknownCamera(u32),
    #[error("camera {0} listed twice")]
    DuplicateCamera(u32),
    #[error("edge {0}->{1} references an unknown camera")]
    DanglingEdge(u32, u32),
    #[error("edge {0}->{1} listed twice")]
    DuplicateEdge(u32, u32),
    #[error("self-loop edge on camera {0}")]
    SelfLoop(u32),
    #[error("edge {from}->{to} has non-positive distance {distance}")]
    NonPositiveDistance { from: u32, to: u32, distance: f64 },
    #[error("camera {camera}: coordinates ({lat}, {lon}) out of range")]
    InvalidCoordinates { camera: u32, lat: f64, lon: f64 },
    #[error("no edge {0}->{1}")]
    UnknownEdge(u32, u32),
    #[error("transit on {from}->{to} has non-positive cost {cost}")]
    NonPositiveCost { from: u32, to: u32, cost: f64 },
    #[error("invalid {what}: {value}")]
    InvalidParameter { what: &'static str, value: f64 },
    #[error("cameras {0} and {1} are not connected")]
    UnreachablePair(u32, u32),
    #[error("unsupported graph format: {0}")]
    FormatVersion(String),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraNode {
    pub camera_id: u32,
    pub latitude: f64,
    pub longitude: f64,
    /// Free-form settings such as heading or field-of-view notes.
    #[serde(default)]
    pub settings: BTreeMap<String, String>,
}

impl CameraNode {
    pub fn new(camera_id: u32, latitude: f64, longitude: f64) -> Self {
        Self {
            camera_id,
            latitude,
            longitude,
            settings: BTreeMap::new(),
        }
    }
}

/// Travel-time statistics of one edge in one time slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotWeight {
    pub slot: i64,
    pub mean_s: f64,
    pub deviation_s: f64,
}

/// Mean and deviation of the travel time on an edge at some instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weight {
    pub mean_s: f64,
    pub deviation_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewEdge {
    pub from: u32,
    pub to: u32,
    pub spatial_distance_m: f64,
    /// Populated slots only, strictly increasing by slot index.
    pub slot_weights: Vec<SlotWeight>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitRecord {
    pub from: u32,
    pub to: u32,
    pub depart_time_s: f64,
    pub cost_s: f64,
}

/// Input to [`CameraGraph::build`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TopologyDescription {
    pub slot_length_s: f64,
    pub nodes: Vec<CameraNode>,
    /// `(from, to, road distance in meters)`.
    pub edges: Vec<(u32, u32, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraGraph {
    nodes: BTreeMap<u32, CameraNode>,
    edges: BTreeMap<(u32, u32), ViewEdge>,
    slot_length_s: f64,
    default_speed_mps: f64,
}

impl CameraGraph {
    /// Validates a topology description into a graph without slot weights.
    pub fn build(desc: &TopologyDescription) -> Result<Self, GraphError> {
        if !(desc.slot_length_s.is_finite() && desc.slot_length_s > 0.0) {
            return Err(GraphError::InvalidParameter {
                what: "slot length",
                value: desc.slot_length_s,
            });
        }
        let mut nodes = BTreeMap::new();
        for node in &desc.nodes {
            let lat_ok = (-90.0..=90.0).contains(&node.latitude);
            let lon_ok = (-180.0..=180.0).contains(&node.longitude);
            if !lat_ok || !lon_ok {
                return Err(GraphError::InvalidCoordinates {
                    camera: node.camera_id,
                    lat: node.latitude,
                    lon: node.longitude,
                });
            }
            if nodes.insert(node.camera_id, node.clone()).is_some() {
                return Err(GraphError::DuplicateCamera(node.camera_id));
            }
        }
        let mut edges = BTreeMap::new();
        for &(from, to, distance) in &desc.edges {
            if !nodes.contains_key(&from) || !nodes.contains_key(&to) {
                return Err(GraphError::DanglingEdge(from, to));
            }
            if from == to {
                return Err(GraphError::SelfLoop(from));
            }
            if !(distance.is_finite() && distance > 0.0) {
                return Err(GraphError::NonPositiveDistance { from, to, distance });
            }
            let edge = ViewEdge {
                from,
                to,
                spatial_distance_m: distance,
                slot_weights: Vec::new(),
            };
            if edges.insert((from, to), edge).is_some() {
                return Err(GraphError::DuplicateEdge(from, to));
            }
        }
        Ok(Self {
            nodes,
            edges,
            slot_length_s: desc.slot_length_s,
            default_speed_mps: DEFAULT_SPEED_MPS,
        })
    }

    /// Speed used to derive a travel time for edges without any records.
    pub fn with_default_speed(mut self, speed_mps: f64) -> Result<Self, GraphError> {
        if !(speed_mps.is_finite() && speed_mps > 0.0) {
            return Err(GraphError::InvalidParameter {
                what: "default speed",
                value: speed_mps,
            });
        }
        self.default_speed_mps = speed_mps;
        Ok(self)
    }

    pub fn slot_length_s(&self) -> f64 {
        self.slot_length_s
    }

    pub fn default_speed_mps(&self) -> f64 {
        self.default_speed_mps
    }

    pub fn nodes(&self) -> impl Iterator<Item = &CameraNode> + '_ {
        self.nodes.values()
    }

    pub fn node(&self, camera_id: u32) -> Option<&CameraNode> {
        self.nodes.get(&camera_id)
    }

    pub fn contains(&self, camera_id: u32) -> bool {
        self.nodes.contains_key(&camera_id)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = &ViewEdge> + '_ {
        self.edges.values()
    }

    pub fn edge(&self, from: u32, to: u32) -> Option<&ViewEdge> {
        self.edges.get(&(from, to))
    }

    /// Out-neighbors of `camera_id` in ascending order.
    pub fn successors(&self, camera_id: u32) -> impl Iterator<Item = u32> + '_ {
        self.edges
            .range((camera_id, 0)..=(camera_id, u32::MAX))
            .map(|(&(_, to), _)| to)
    }

    pub fn slot_of(&self, time_s: f64) -> i64 {
        (time_s / self.slot_length_s).floor() as i64
    }

    /// Replaces every edge's slot weights with per-slot mean and population
    /// deviation of the given transit costs.
    pub fn learn_weights(&self, transits: &[TransitRecord]) -> Result<Self, GraphError> {
        let mut groups: BTreeMap<(u32, u32), BTreeMap<i64, Vec<f64>>> = BTreeMap::new();
        for t in transits {
            if !self.edges.contains_key(&(t.from, t.to)) {
                return Err(GraphError::UnknownEdge(t.from, t.to));
            }
            if !(t.cost_s.is_finite() && t.cost_s > 0.0) {
                return Err(GraphError::NonPositiveCost {
                    from: t.from,
                    to: t.to,
                    cost: t.cost_s,
                });
            }
            if !t.depart_time_s.is_finite() {
                return Err(GraphError::InvalidParameter {
                    what: "departure time",
                    value: t.depart_time_s,
                });
            }
            groups
                .entry((t.from, t.to))
                .or_default()
                .entry(self.slot_of(t.depart_time_s))
                .or_default()
                .push(t.cost_s);
        }
        let mut learned = self.clone();
        for edge in learned.edges.values_mut() {
            edge.slot_weights = groups
                .remove(&(edge.from, edge.to))
                .unwrap_or_default()
                .into_iter()
                .map(|(slot, mut costs)| {
                    // sorted so the result does not depend on record order
                    costs.sort_by(f64::total_cmp);
                    let (mean_s, deviation_s) = mean_and_population_deviation(&costs);
                    SlotWeight {
                        slot,
                        mean_s,
                        deviation_s,
                    }
                })
                .collect();
        }
        Ok(learned)
    }

    /// Step-function weight of an edge at `time_s`.
    ///
    /// Empty slots take the value of the populated slot closest in time
    /// (earlier slot on a tie). Edges without any records fall back to
    /// `distance / default_speed` with deviation half of that.
    pub fn weight_at(&self, from: u32, to: u32, time_s: f64) -> Result<Weight, GraphError> {
        let edge = self
            .edges
            .get(&(from, to))
            .ok_or(GraphError::UnknownEdge(from, to))?;
        let slots = &edge.slot_weights;
        if slots.is_empty() {
            let mean_s = edge.spatial_distance_m / self.default_speed_mps;
            return Ok(Weight {
                mean_s,
                deviation_s: mean_s / 2.0,
            });
        }
        let slot = self.slot_of(time_s);
        let pick = match slots.binary_search_by_key(&slot, |s| s.slot) {
            Ok(i) => &slots[i],
            Err(i) => {
                let before = i.checked_sub(1).map(|j| &slots[j]);
                let after = slots.get(i);
                match (before, after) {
                    (Some(b), Some(a)) => {
                        let len = self.slot_length_s;
                        let gap_before = time_s - (b.slot + 1) as f64 * len;
                        let gap_after = a.slot as f64 * len - time_s;
                        if gap_before <= gap_after {
                            b
                        } else {
                            a
                        }
                    }
                    (Some(b), None) => b,
                    (None, Some(a)) => a,
                    (None, None) => unreachable!("non-empty slot list"),
                }
            }
        };
        Ok(Weight {
            mean_s: pick.mean_s,
            deviation_s: pick.deviation_s,
        })
    }

    /// Cameras grouped by directed hop distance from `start`, up to
    /// `max_hops`. Each layer is sorted by camera id.
    pub fn bfs_layers(&self, start: u32, max_hops: usize) -> Result<Vec<Vec<u32>>, GraphError> {
        if !self.contains(start) {
            return Err(GraphError::UnknownCamera(start));
        }
        let mut seen = BTreeMap::from([(start, ())]);
        let mut layers = vec![vec![start]];
        while layers.len() <= max_hops {
            let mut next: Vec<u32> = Vec::new();
            for &c in layers.last().unwrap() {
                for s in self.successors(c) {
                    if seen.insert(s, ()).is_none() {
                        next.push(s);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            next.sort_unstable();
            layers.push(next);
        }
        Ok(layers)
    }

    /// All-pairs road distances over the undirected closure of the edges.
    pub fn road_distances(&self) -> RoadDistances {
        let ids: Vec<u32> = self.nodes.keys().copied().collect();
        let pos: BTreeMap<u32, usize> = ids.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let n = ids.len();
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for e in self.edges.values() {
            let (a, b) = (pos[&e.from], pos[&e.to]);
            adj[a].push((b, e.spatial_distance_m));
            adj[b].push((a, e.spatial_distance_m));
        }
        let mut dist = vec![f64::INFINITY; n * n];
        let mut prev = vec![usize::MAX; n * n];
        for src in 0..n {
            let row = src * n;
            dist[row + src] = 0.0;
            let mut heap = BinaryHeap::from([Frontier(0.0, src)]);
            while let Some(Frontier(d, u)) = heap.pop() {
                if d > dist[row + u] {
                    continue;
                }
                for &(v, w) in &adj[u] {
                    let nd = d + w;
                    if nd < dist[row + v] {
                        dist[row + v] = nd;
                        prev[row + v] = u;
                        heap.push(Frontier(nd, v));
                    }
                }
            }
        }
        RoadDistances {
            ids,
            pos,
            dist,
            prev,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GraphError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GraphError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// Writes the topology file. Learned slot weights follow as
    /// `W <from> <to> <slot> <mean_s> <deviation_s>` lines.
    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "pvss-graph v1 slot_length={}", self.slot_length_s)?;
        for n in self.nodes.values() {
            write!(w, "N {} {} {}", n.camera_id, n.latitude, n.longitude)?;
            for (k, v) in &n.settings {
                write!(w, " {k}={v}")?;
            }
            writeln!(w)?;
        }
        for e in self.edges.values() {
            writeln!(w, "E {} {} {}", e.from, e.to, e.spatial_distance_m)?;
        }
        for e in self.edges.values() {
            for s in &e.slot_weights {
                writeln!(w, "W {} {} {} {} {}", e.from, e.to, s.slot, s.mean_s, s.deviation_s)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, GraphError> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| GraphError::FormatVersion("missing header".into()))??;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != "pvss-graph" || parts[1] != "v1" {
            return Err(GraphError::FormatVersion(header.clone()));
        }
        let slot_length_s: f64 =
            parse_kv(parts[2], "slot_length").map_err(|_| GraphError::FormatVersion(header.clone()))?;
        let mut desc = TopologyDescription {
            slot_length_s,
            ..Default::default()
        };
        let mut weights: Vec<(u32, u32, SlotWeight)> = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            let lineno = i + 2;
            let err = |reason: String| GraphError::Parse { line: lineno, reason };
            let tokens: Vec<&str> = line.split_whitespace().collect();
            match tokens.first().copied() {
                None | Some("#") => {}
                Some("N") if tokens.len() >= 4 => {
                    let mut node = CameraNode::new(
                        parse_num(tokens[1], "camera id").map_err(err)?,
                        parse_num(tokens[2], "latitude").map_err(err)?,
                        parse_num(tokens[3], "longitude").map_err(err)?,
                    );
                    for kv in &tokens[4..] {
                        let (k, v) = kv
                            .split_once('=')
                            .ok_or_else(|| err(format!("bad setting {kv:?}")))?;
                        node.settings.insert(k.to_string(), v.to_string());
                    }
                    desc.nodes.push(node);
                }
                Some("E") if tokens.len() == 4 => desc.edges.push((
                    parse_num(tokens[1], "camera id").map_err(err)?,
                    parse_num(tokens[2], "camera id").map_err(err)?,
                    parse_num(tokens[3], "distance").map_err(err)?,
                )),
                Some("W") if tokens.len() == 6 => weights.push((
                    parse_num(tokens[1], "camera id").map_err(err)?,
                    parse_num(tokens[2], "camera id").map_err(err)?,
                    SlotWeight {
                        slot: parse_num(tokens[3], "slot").map_err(err)?,
                        mean_s: parse_num(tokens[4], "mean").map_err(err)?,
                        deviation_s: parse_num(tokens[5], "deviation").map_err(err)?,
                    },
                )),
                Some(_) => return Err(err(format!("unrecognized line {line:?}"))),
            }
        }
        let mut graph = Self::build(&desc)?;
        for (from, to, w) in weights {
            let edge = graph
                .edges
                .get_mut(&(from, to))
                .ok_or(GraphError::UnknownEdge(from, to))?;
            if !(w.mean_s > 0.0 && w.deviation_s >= 0.0) {
                return Err(GraphError::NonPositiveCost {
                    from,
                    to,
                    cost: w.mean_s,
                });
            }
            if edge.slot_weights.last().is_some_and(|l| l.slot >= w.slot) {
                return Err(GraphError::Parse {
                    line: 0,
                    reason: format!("slot weights of {from}->{to} not strictly increasing"),
                });
            }
            edge.slot_weights.push(w);
        }
        Ok(graph)
    }
}

pub(crate) fn mean_and_population_deviation(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(PartialEq)]
struct Frontier(f64, usize);

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest road distances between every pair of cameras, treating each
/// directed edge as a two-way road segment.
#[derive(Debug, Clone)]
pub struct RoadDistances {
    ids: Vec<u32>,
    pos: BTreeMap<u32, usize>,
    dist: Vec<f64>,
    prev: Vec<usize>,
}

impl RoadDistances {
    pub fn distance(&self, a: u32, b: u32) -> Result<f64, GraphError> {
        let ia = *self.pos.get(&a).ok_or(GraphError::UnknownCamera(a))?;
        let ib = *self.pos.get(&b).ok_or(GraphError::UnknownCamera(b))?;
        let d = self.dist[ia * self.ids.len() + ib];
        if d.is_finite() {
            Ok(d)
        } else {
            Err(GraphError::UnreachablePair(a, b))
        }
    }

    /// Camera sequence of a shortest road path from `a` to `b`.
    pub fn path(&self, a: u32, b: u32) -> Result<Vec<u32>, GraphError> {
        self.distance(a, b)?;
        let n = self.ids.len();
        let ia = self.pos[&a];
        let mut cur = self.pos[&b];
        let mut path = VecDeque::from([self.ids[cur]]);
        while cur != ia {
            cur = self.prev[ia * n + cur];
            path.push_front(self.ids[cur]);
        }
        Ok(path.into())
    }
}

/// Parses `T <from> <to> <depart_s> <cost_s>` lines.
pub fn read_transits<R: BufRead>(r: R) -> Result<Vec<TransitRecord>, GraphError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let err = |reason: String| GraphError::Parse { line: i + 1, reason };
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            [] => {}
            [first, ..] if first.starts_with('#') => {}
            ["T", from, to, depart, cost] => out.push(TransitRecord {
                from: parse_num(from, "camera id").map_err(err)?,
                to: parse_num(to, "camera id").map_err(err)?,
                depart_time_s: parse_num(depart, "departure").map_err(err)?,
                cost_s: parse_num(cost, "cost").map_err(err)?,
            }),
            _ => return Err(err(format!("unrecognized line {line:?}"))),
        }
    }
    Ok(out)
}

pub fn write_transits<W: Write>(w: &mut W, transits: &[TransitRecord]) -> io::Result<()> {
    for t in transits {
        writeln!(w, "T {} {} {} {}", t.from, t.to, t.depart_time_s, t.cost_s)?;
    }
    Ok(())
}
