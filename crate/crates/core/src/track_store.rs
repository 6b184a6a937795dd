//! Per-camera, time-ordered tables of vehicle track metadata.
//!
//! Every camera owns one append-only table. Entries arrive in time order and
//! are never re-sorted, so range scans are two binary searches.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{join_floats, parse_floats, parse_kv, parse_num};

/// Plate value for tracks whose plate could not be read.
pub const UNAVAILABLE_PLATE: &str = "UNAVAL";

/// Tracks shorter than this many frames are discarded at ingest.
pub const MIN_TRACK_LENGTH: u32 = 5;

const HEADER_MAGIC: &str = "pvss-tracks";
const FORMAT_VERSION: &str = "v1";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown camera {0}")]
    UnknownCamera(u32),
    #[error("track {track} rejected: length {length} is below the minimum of {MIN_TRACK_LENGTH}")]
    RejectedShortTrack { track: TrackRef, length: u32 },
    #[error("track {track}: {what} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        track: TrackRef,
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("track {track}: timestamp {timestamp} precedes table tail {tail}")]
    OutOfOrderTimestamp {
        track: TrackRef,
        timestamp: f64,
        tail: f64,
    },
    #[error("track {0} already stored")]
    DuplicateTrack(TrackRef),
    #[error("track {track}: {reason}")]
    InvalidTrack { track: TrackRef, reason: String },
    #[error("invalid scan range [{0}, {1}]")]
    InvalidRange(f64, f64),
    #[error("unsupported store format: {0}")]
    FormatVersion(String),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Stable reference to a stored track: camera plus the per-camera track id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TrackRef {
    pub camera_id: u32,
    pub vehicle_id: u32,
}

impl TrackRef {
    pub fn new(camera_id: u32, vehicle_id: u32) -> Self {
        Self {
            camera_id,
            vehicle_id,
        }
    }
}

impl fmt::Display for TrackRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.camera_id, self.vehicle_id)
    }
}

impl FromStr for TrackRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (c, v) = s
            .split_once(':')
            .ok_or_else(|| format!("expected <camera>:<track>, got {s:?}"))?;
        Ok(Self::new(parse_num(c, "camera id")?, parse_num(v, "track id")?))
    }
}

/// One vehicle's image sequence as seen by one camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackMetadata {
    pub camera_id: u32,
    pub vehicle_id: u32,
    pub frame_id: u64,
    pub track_length: u32,
    /// Pixel position per frame.
    pub trajectory: Vec<(f64, f64)>,
    pub appearance_feature: Vec<f64>,
    pub plate_feature: Option<Vec<f64>>,
    pub duration_s: f64,
    /// Seconds since epoch of the first frame.
    pub timestamp_s: f64,
    pub plate: String,
}

impl TrackMetadata {
    pub fn track_ref(&self) -> TrackRef {
        TrackRef::new(self.camera_id, self.vehicle_id)
    }

    pub fn has_plate(&self) -> bool {
        self.plate_feature.is_some()
    }
}

/// Time-ordered tracks of a single camera.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CameraTable {
    camera_id: u32,
    entries: Vec<TrackMetadata>,
    positions: BTreeMap<u32, usize>,
}

impl CameraTable {
    fn new(camera_id: u32) -> Self {
        Self {
            camera_id,
            ..Default::default()
        }
    }

    pub fn camera_id(&self) -> u32 {
        self.camera_id
    }

    pub fn entries(&self) -> &[TrackMetadata] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries with `t_start <= timestamp_s <= t_end`, in time order.
    pub fn range(&self, t_start: f64, t_end: f64) -> &[TrackMetadata] {
        let lo = self.entries.partition_point(|e| e.timestamp_s < t_start);
        let hi = self.entries.partition_point(|e| e.timestamp_s <= t_end);
        if lo >= hi {
            &[]
        } else {
            &self.entries[lo..hi]
        }
    }
}

/// All camera tables plus the configured feature dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackStore {
    appearance_dim: usize,
    plate_dim: usize,
    tables: BTreeMap<u32, CameraTable>,
}

impl TrackStore {
    pub fn new(appearance_dim: usize, plate_dim: usize) -> Self {
        Self {
            appearance_dim,
            plate_dim,
            tables: BTreeMap::new(),
        }
    }

    pub fn with_cameras(
        appearance_dim: usize,
        plate_dim: usize,
        cameras: impl IntoIterator<Item = u32>,
    ) -> Self {
        let mut store = Self::new(appearance_dim, plate_dim);
        for c in cameras {
            store.add_camera(c);
        }
        store
    }

    pub fn appearance_dim(&self) -> usize {
        self.appearance_dim
    }

    pub fn plate_dim(&self) -> usize {
        self.plate_dim
    }

    /// Registers a camera; returns false if it was already known.
    pub fn add_camera(&mut self, camera_id: u32) -> bool {
        if self.tables.contains_key(&camera_id) {
            return false;
        }
        self.tables.insert(camera_id, CameraTable::new(camera_id));
        true
    }

    pub fn cameras(&self) -> impl Iterator<Item = u32> + '_ {
        self.tables.keys().copied()
    }

    pub fn table(&self, camera_id: u32) -> Option<&CameraTable> {
        self.tables.get(&camera_id)
    }

    pub fn len(&self) -> usize {
        self.tables.values().map(CameraTable::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every stored track, camera by camera, in time order within a camera.
    pub fn iter(&self) -> impl Iterator<Item = &TrackMetadata> + '_ {
        self.tables.values().flat_map(|t| t.entries.iter())
    }

    pub fn get(&self, track: TrackRef) -> Option<&TrackMetadata> {
        let table = self.tables.get(&track.camera_id)?;
        table
            .positions
            .get(&track.vehicle_id)
            .map(|&i| &table.entries[i])
    }

    /// Validates `meta` and appends it to the tail of its camera table.
    pub fn ingest(&mut self, meta: TrackMetadata) -> Result<TrackRef, StoreError> {
        let track = meta.track_ref();
        let table = self
            .tables
            .get(&meta.camera_id)
            .ok_or(StoreError::UnknownCamera(meta.camera_id))?;
        if meta.track_length < MIN_TRACK_LENGTH {
            return Err(StoreError::RejectedShortTrack {
                track,
                length: meta.track_length,
            });
        }
        self.validate(&meta)?;
        if table.positions.contains_key(&meta.vehicle_id) {
            return Err(StoreError::DuplicateTrack(track));
        }
        if let Some(tail) = table.entries.last() {
            if meta.timestamp_s < tail.timestamp_s {
                return Err(StoreError::OutOfOrderTimestamp {
                    track,
                    timestamp: meta.timestamp_s,
                    tail: tail.timestamp_s,
                });
            }
        }
        let table = self.tables.get_mut(&meta.camera_id).unwrap();
        table.positions.insert(meta.vehicle_id, table.entries.len());
        table.entries.push(meta);
        Ok(track)
    }

    fn validate(&self, meta: &TrackMetadata) -> Result<(), StoreError> {
        let track = meta.track_ref();
        let invalid = |reason: String| StoreError::InvalidTrack { track, reason };
        if meta.trajectory.len() != meta.track_length as usize {
            return Err(invalid(format!(
                "trajectory has {} points for track length {}",
                meta.trajectory.len(),
                meta.track_length
            )));
        }
        if meta.appearance_feature.len() != self.appearance_dim {
            return Err(StoreError::DimensionMismatch {
                track,
                what: "appearance feature",
                got: meta.appearance_feature.len(),
                expected: self.appearance_dim,
            });
        }
        check_vector(&meta.appearance_feature).map_err(|r| invalid(format!("appearance {r}")))?;
        match (&meta.plate_feature, meta.plate == UNAVAILABLE_PLATE) {
            (Some(p), false) => {
                if p.len() != self.plate_dim {
                    return Err(StoreError::DimensionMismatch {
                        track,
                        what: "plate feature",
                        got: p.len(),
                        expected: self.plate_dim,
                    });
                }
                check_vector(p).map_err(|r| invalid(format!("plate {r}")))?;
            }
            (None, true) => {}
            (Some(_), true) => return Err(invalid("plate UNAVAL with a plate feature".into())),
            (None, false) => return Err(invalid("plate text without a plate feature".into())),
        }
        if meta.plate.is_empty() || meta.plate.chars().any(|c| c.is_whitespace() || c.is_control()) {
            return Err(invalid(format!("plate {:?} is empty or has whitespace", meta.plate)));
        }
        if !(meta.duration_s.is_finite() && meta.duration_s > 0.0) {
            return Err(invalid(format!("duration {} must be positive", meta.duration_s)));
        }
        if !meta.timestamp_s.is_finite() {
            return Err(invalid("timestamp is not finite".into()));
        }
        if meta.trajectory.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(invalid("trajectory has non-finite coordinates".into()));
        }
        Ok(())
    }

    /// Tracks of `camera_id` with `t_start <= timestamp_s <= t_end`.
    pub fn scan(&self, camera_id: u32, t_start: f64, t_end: f64) -> Result<&[TrackMetadata], StoreError> {
        if t_start.is_nan() || t_end.is_nan() || t_start > t_end {
            return Err(StoreError::InvalidRange(t_start, t_end));
        }
        let table = self
            .tables
            .get(&camera_id)
            .ok_or(StoreError::UnknownCamera(camera_id))?;
        Ok(table.range(t_start, t_end))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(
            w,
            "{HEADER_MAGIC} {FORMAT_VERSION} D_a={} D_p={}",
            self.appearance_dim, self.plate_dim
        )?;
        for meta in self.iter() {
            writeln!(w, "{}", encode_record(meta))?;
        }
        Ok(())
    }

    /// Reads a store file. Cameras are registered as their first record
    /// appears.
    pub fn read_from<R: BufRead>(r: R) -> Result<Self, StoreError> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| StoreError::FormatVersion("missing header".into()))??;
        let mut store = parse_header(&header)?;
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let meta = decode_record(&line).map_err(|reason| StoreError::Parse { line: i + 2, reason })?;
            store.add_camera(meta.camera_id);
            store.ingest(meta)?;
        }
        Ok(store)
    }
}

fn check_vector(v: &[f64]) -> Result<(), &'static str> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err("feature has non-finite values");
    }
    if v.iter().all(|&x| x == 0.0) {
        return Err("feature is a zero vector");
    }
    Ok(())
}

fn parse_header(header: &str) -> Result<TrackStore, StoreError> {
    let bad = || StoreError::FormatVersion(header.to_string());
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != HEADER_MAGIC || parts[1] != FORMAT_VERSION {
        return Err(bad());
    }
    let d_a: usize = parse_kv(parts[2], "D_a").map_err(|_| bad())?;
    let d_p: usize = parse_kv(parts[3], "D_p").map_err(|_| bad())?;
    Ok(TrackStore::new(d_a, d_p))
}

/// Tab-separated record: camera, track, frame, length, trajectory,
/// appearance, plate feature (empty when absent), duration, timestamp, plate.
pub fn encode_record(meta: &TrackMetadata) -> String {
    let trajectory = meta
        .trajectory
        .iter()
        .map(|(x, y)| format!("{x},{y}"))
        .collect::<Vec<_>>()
        .join(";");
    let plate_feature = meta.plate_feature.as_deref().map(join_floats).unwrap_or_default();
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
        meta.camera_id,
        meta.vehicle_id,
        meta.frame_id,
        meta.track_length,
        trajectory,
        join_floats(&meta.appearance_feature),
        plate_feature,
        meta.duration_s,
        meta.timestamp_s,
        meta.plate
    )
}

pub fn decode_record(line: &str) -> Result<TrackMetadata, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 10 {
        return Err(format!("expected 10 fields, found {}", fields.len()));
    }
    let trajectory = if fields[4].is_empty() {
        Vec::new()
    } else {
        fields[4]
            .split(';')
            .map(|p| {
                let (x, y) = p.split_once(',').ok_or_else(|| format!("bad point {p:?}"))?;
                Ok((parse_num(x, "x")?, parse_num(y, "y")?))
            })
            .collect::<Result<Vec<_>, String>>()?
    };
    let plate_feature = if fields[6].is_empty() {
        None
    } else {
        Some(parse_floats(fields[6])?)
    };
    Ok(TrackMetadata {
        camera_id: parse_num(fields[0], "camera id")?,
        vehicle_id: parse_num(fields[1], "track id")?,
        frame_id: parse_num(fields[2], "frame id")?,
        track_length: parse_num(fields[3], "track length")?,
        trajectory,
        appearance_feature: parse_floats(fields[5])?,
        plate_feature,
        duration_s: parse_num(fields[7], "duration")?,
        timestamp_s: parse_num(fields[8], "timestamp")?,
        plate: fields[9].to_string(),
    })
}
