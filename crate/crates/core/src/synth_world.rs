//! Synthetic surveillance worlds with known ground truth.
//!
//! Cameras are scattered over a square area and joined by two-way roads (a
//! spanning tree plus a few shortcuts). Vehicles make trips: a random walk
//! of a few hops starting at a random time, with travel times drawn around
//! `distance / (base_speed * slot_multiplier)`. Vehicles come in look-alike
//! groups (same make and color) so appearance alone is ambiguous and plates
//! and spatiotemporal context have something to fix.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera_graph::{
    write_transits, CameraGraph, CameraNode, GraphError, TopologyDescription, TransitRecord, DEFAULT_SLOT_LENGTH_S,
};
use crate::codec::parse_num;
use crate::track_store::{StoreError, TrackMetadata, TrackRef, TrackStore, UNAVAILABLE_PLATE};

const ORIGIN_LAT: f64 = 39.9;
const ORIGIN_LON: f64 = 116.3;
const METERS_PER_DEG_LAT: f64 = 111_320.0;
const FPS: f64 = 10.0;
/// Road length over straight-line distance.
const DETOUR: f64 = 1.3;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("infeasible world spec: {0}")]
    InfeasibleSpec(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldSpec {
    pub n_cameras: usize,
    pub n_vehicles: usize,
    pub sim_duration_s: f64,
    /// Side of the square area cameras are placed in.
    pub area_m: f64,
    /// Roads added on top of the spanning tree.
    pub extra_roads: usize,
    pub slot_length_s: f64,
    /// Speed multiplier per slot, repeated cyclically.
    pub slot_profile: Vec<f64>,
    pub base_speed_mps: f64,
    /// Coefficient of variation of travel time within a slot.
    pub travel_cv: f64,
    /// Inclusive range of hops per trip.
    pub min_hops: usize,
    pub max_hops: usize,
    pub appearance_dim: usize,
    pub plate_dim: usize,
    /// Per-coordinate gaussian noise on appearance vectors.
    pub sigma_appearance: f64,
    /// Per-coordinate gaussian noise on plate vectors.
    pub sigma_plate: f64,
    pub p_plate: f64,
    /// Number of look-alike groups vehicles are drawn from.
    pub n_models: usize,
    /// Weight of the per-vehicle direction added to its group's direction.
    pub model_spread: f64,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            n_cameras: 20,
            n_vehicles: 200,
            sim_duration_s: 6.0 * 3600.0,
            area_m: 4000.0,
            extra_roads: 10,
            slot_length_s: DEFAULT_SLOT_LENGTH_S,
            slot_profile: vec![1.0, 0.9, 0.75, 0.6, 0.7, 0.85],
            base_speed_mps: 10.0,
            travel_cv: 0.15,
            min_hops: 3,
            max_hops: 8,
            appearance_dim: 64,
            plate_dim: 32,
            sigma_appearance: 0.09,
            sigma_plate: 0.2,
            p_plate: 0.5,
            n_models: 20,
            model_spread: 0.35,
            seed: 7,
        }
    }
}

impl WorldSpec {
    /// No appearance or plate noise and every plate readable.
    pub fn noiseless(mut self) -> Self {
        self.sigma_appearance = 0.0;
        self.sigma_plate = 0.0;
        self.p_plate = 1.0;
        self
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        let fail = |m: &str| Err(WorldError::InfeasibleSpec(m.to_string()));
        if self.n_cameras == 0 || self.n_vehicles == 0 || self.n_models == 0 {
            return fail("camera, vehicle and model counts must be at least 1");
        }
        if self.appearance_dim == 0 || self.plate_dim == 0 {
            return fail("feature dimensions must be positive");
        }
        if !(self.sim_duration_s > 0.0 && self.area_m > 0.0 && self.base_speed_mps > 0.0 && self.slot_length_s > 0.0)
        {
            return fail("duration, area, speed and slot length must be positive");
        }
        if self.slot_profile.is_empty() || self.slot_profile.iter().any(|&m| !(m > 0.0)) {
            return fail("slot profile needs positive multipliers");
        }
        if self.sigma_appearance < 0.0 || self.sigma_plate < 0.0 || self.travel_cv < 0.0 || self.model_spread < 0.0 {
            return fail("noise levels must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.p_plate) {
            return fail("p_plate must lie in [0, 1]");
        }
        if self.min_hops > self.max_hops {
            return fail("min_hops exceeds max_hops");
        }
        let possible = self.n_cameras * (self.n_cameras - 1) / 2;
        if self.n_cameras - 1 + self.extra_roads > possible {
            return fail("more roads requested than camera pairs");
        }
        Ok(())
    }

    pub fn speed_multiplier(&self, slot: i64) -> f64 {
        self.slot_profile[slot.rem_euclid(self.slot_profile.len() as i64) as usize]
    }
}

/// Known identities and generating parameters of a world.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub identities: BTreeMap<TrackRef, u32>,
    pub appearance_prototypes: Vec<Vec<f64>>,
    pub plate_prototypes: Vec<Vec<f64>>,
    pub plates: Vec<String>,
    pub transits: Vec<TransitRecord>,
}

impl GroundTruth {
    pub fn identity(&self, track: TrackRef) -> Option<u32> {
        self.identities.get(&track).copied()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        for (t, id) in &self.identities {
            writeln!(w, "GT {} {} {}", t.camera_id, t.vehicle_id, id)?;
        }
        Ok(())
    }
}

/// Reads `GT <camera> <track> <identity>` lines.
pub fn read_identities<R: BufRead>(r: R) -> Result<BTreeMap<TrackRef, u32>, WorldError> {
    let mut out = BTreeMap::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let err = |reason: String| WorldError::Parse { line: i + 1, reason };
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            [] => {}
            ["GT", c, v, id] => {
                let track = TrackRef::new(parse_num(c, "camera").map_err(err)?, parse_num(v, "track").map_err(err)?);
                out.insert(track, parse_num(id, "identity").map_err(err)?);
            }
            _ => return Err(err(format!("unrecognized line {line:?}"))),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct World {
    pub spec: WorldSpec,
    pub graph: CameraGraph,
    /// Per camera, in timestamp order.
    pub tracks: Vec<TrackMetadata>,
    pub truth: GroundTruth,
}

impl World {
    /// Mean travel time the generator used for an edge departing in `slot`.
    pub fn planted_mean(&self, from: u32, to: u32, slot: i64) -> Option<f64> {
        let e = self.graph.edge(from, to)?;
        Some(e.spatial_distance_m / (self.spec.base_speed_mps * self.spec.speed_multiplier(slot)))
    }

    pub fn store(&self) -> Result<TrackStore, WorldError> {
        let mut store = TrackStore::with_cameras(
            self.spec.appearance_dim,
            self.spec.plate_dim,
            self.graph.nodes().map(|n| n.camera_id),
        );
        for t in &self.tracks {
            store.ingest(t.clone())?;
        }
        Ok(store)
    }

    /// Writes `graph.txt`, `transits.txt`, `tracks.txt` and `truth.txt`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<(), WorldError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.graph.save(dir.join("graph.txt"))?;
        let mut w = BufWriter::new(File::create(dir.join("transits.txt"))?);
        write_transits(&mut w, &self.truth.transits)?;
        w.flush()?;
        self.store()?.save(dir.join("tracks.txt"))?;
        let mut w = BufWriter::new(File::create(dir.join("truth.txt"))?);
        self.truth.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

pub fn load_identities(path: impl AsRef<Path>) -> Result<BTreeMap<TrackRef, u32>, WorldError> {
    read_identities(BufReader::new(File::open(path)?))
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn noisy_unit(rng: &mut ChaCha8Rng, proto: &[f64], sigma: f64) -> Vec<f64> {
    let v: Vec<f64> = proto
        .iter()
        .map(|&p| {
            let g: f64 = StandardNormal.sample(rng);
            p + sigma * g
        })
        .collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.into_iter().map(|x| x / n).collect()
    } else {
        proto.to_vec()
    }
}

struct Sighting {
    camera: u32,
    identity: u32,
    timestamp_s: f64,
    duration_s: f64,
}

/// Generates a world; identical specs give identical worlds.
pub fn generate(spec: &WorldSpec) -> Result<World, WorldError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let graph = build_topology(spec, &mut rng)?;

    let models: Vec<Vec<f64>> = (0..spec.n_models)
        .map(|_| unit_gaussian(&mut rng, spec.appearance_dim))
        .collect();
    let mut appearance_prototypes = Vec::with_capacity(spec.n_vehicles);
    let mut plate_prototypes = Vec::with_capacity(spec.n_vehicles);
    let mut plates = Vec::with_capacity(spec.n_vehicles);
    for v in 0..spec.n_vehicles {
        let model = &models[rng.random_range(0..spec.n_models)];
        let own = unit_gaussian(&mut rng, spec.appearance_dim);
        let mixed: Vec<f64> = model.iter().zip(&own).map(|(m, o)| m + spec.model_spread * o).collect();
        appearance_prototypes.push(noisy_unit(&mut rng, &mixed, 0.0));
        plate_prototypes.push(unit_gaussian(&mut rng, spec.plate_dim));
        plates.push(format!("PL{v:05}"));
    }

    let cameras: Vec<u32> = graph.nodes().map(|n| n.camera_id).collect();
    let mut sightings = Vec::new();
    let mut transits = Vec::new();
    for identity in 0..spec.n_vehicles as u32 {
        let hops = rng.random_range(spec.min_hops..=spec.max_hops);
        let mut camera = *cameras.choose(&mut rng).unwrap();
        let mut previous: Option<u32> = None;
        let mut t = rng.random_range(0.0..spec.sim_duration_s * 0.8);
        for hop in 0..=hops {
            let duration_s = rng.random_range(1.0..8.0);
            sightings.push(Sighting {
                camera,
                identity,
                timestamp_s: t,
                duration_s,
            });
            if hop == hops {
                break;
            }
            let mut options: Vec<u32> = graph.successors(camera).collect();
            if options.len() > 1 {
                options.retain(|&c| Some(c) != previous);
            }
            let Some(&next) = options.choose(&mut rng) else { break };
            let depart = t + duration_s;
            let slot = (depart / spec.slot_length_s).floor() as i64;
            let edge = graph.edge(camera, next).unwrap();
            let mean = edge.spatial_distance_m / (spec.base_speed_mps * spec.speed_multiplier(slot));
            let cost = if spec.travel_cv > 0.0 {
                Normal::new(mean, spec.travel_cv * mean)
                    .unwrap()
                    .sample(&mut rng)
                    .max(mean / 4.0)
            } else {
                mean
            };
            let arrive = depart + cost;
            if arrive > spec.sim_duration_s {
                break;
            }
            transits.push(TransitRecord {
                from: camera,
                to: next,
                depart_time_s: depart,
                cost_s: cost,
            });
            previous = Some(camera);
            camera = next;
            t = arrive;
        }
    }
    sightings.sort_by(|a, b| {
        a.camera
            .cmp(&b.camera)
            .then(a.timestamp_s.total_cmp(&b.timestamp_s))
            .then(a.identity.cmp(&b.identity))
    });

    let mut identities = BTreeMap::new();
    let mut tracks = Vec::with_capacity(sightings.len());
    let mut next_id: BTreeMap<u32, u32> = BTreeMap::new();
    for s in sightings {
        let id = next_id.entry(s.camera).or_insert(0);
        let vehicle_id = *id;
        *id += 1;
        let track_length = ((s.duration_s * FPS).round() as u32).max(5);
        let (x0, y0) = (rng.random_range(0.0..1920.0), rng.random_range(0.0..1080.0));
        let (dx, dy) = (rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
        let trajectory = (0..track_length).map(|f| (x0 + dx * f as f64, y0 + dy * f as f64)).collect();
        let proto = &appearance_prototypes[s.identity as usize];
        let appearance_feature = noisy_unit(&mut rng, proto, spec.sigma_appearance);
        let plate_read = rng.random_bool(spec.p_plate);
        let plate_feature =
            plate_read.then(|| noisy_unit(&mut rng, &plate_prototypes[s.identity as usize], spec.sigma_plate));
        let track = TrackMetadata {
            camera_id: s.camera,
            vehicle_id,
            frame_id: (s.timestamp_s * FPS).floor() as u64,
            track_length,
            trajectory,
            appearance_feature,
            plate_feature,
            duration_s: s.duration_s,
            timestamp_s: s.timestamp_s,
            plate: if plate_read {
                plates[s.identity as usize].clone()
            } else {
                UNAVAILABLE_PLATE.to_string()
            },
        };
        identities.insert(track.track_ref(), s.identity);
        tracks.push(track);
    }

    Ok(World {
        spec: spec.clone(),
        graph,
        tracks,
        truth: GroundTruth {
            identities,
            appearance_prototypes,
            plate_prototypes,
            plates,
            transits,
        },
    })
}

fn build_topology(spec: &WorldSpec, rng: &mut ChaCha8Rng) -> Result<CameraGraph, WorldError> {
    let n = spec.n_cameras;
    let pos: Vec<(f64, f64)> = (0..n)
        .map(|_| (rng.random_range(0.0..spec.area_m), rng.random_range(0.0..spec.area_m)))
        .collect();
    let dist = |a: usize, b: usize| {
        let (dx, dy) = (pos[a].0 - pos[b].0, pos[a].1 - pos[b].1);
        ((dx * dx + dy * dy).sqrt() * DETOUR).max(1.0)
    };

    // Prim's spanning tree, then the shortest missing pairs as shortcuts
    let mut roads: Vec<(usize, usize)> = Vec::new();
    let mut in_tree = vec![false; n];
    in_tree[0] = true;
    for _ in 1..n {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in (0..n).filter(|&a| in_tree[a]) {
            for b in (0..n).filter(|&b| !in_tree[b]) {
                let d = dist(a, b);
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, a, b));
                }
            }
        }
        let (_, a, b) = best.unwrap();
        in_tree[b] = true;
        roads.push((a.min(b), a.max(b)));
    }
    let mut candidates: Vec<(f64, usize, usize)> = (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .filter(|p| !roads.contains(p))
        .map(|(a, b)| (dist(a, b), a, b))
        .collect();
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0));
    roads.extend(candidates.iter().take(spec.extra_roads).map(|&(_, a, b)| (a, b)));

    let nodes = pos
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| {
            let lat = ORIGIN_LAT + y / METERS_PER_DEG_LAT;
            let lon = ORIGIN_LON + x / (METERS_PER_DEG_LAT * ORIGIN_LAT.to_radians().cos());
            let mut node = CameraNode::new(i as u32, lat, lon);
            node.settings.insert("heading".into(), format!("{}", rng.random_range(0..360)));
            node
        })
        .collect();
    let edges = roads
        .iter()
        .flat_map(|&(a, b)| {
            let d = dist(a, b);
            [(a as u32, b as u32, d), (b as u32, a as u32, d)]
        })
        .collect();
    let graph = CameraGraph::build(&TopologyDescription {
        slot_length_s: spec.slot_length_s,
        nodes,
        edges,
    })?
    .with_default_speed(spec.base_speed_mps)?;
    Ok(graph)
}
