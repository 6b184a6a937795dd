//! Browser bindings. Each call returns a JSON string; errors surface as
//! thrown JS errors.

pub mod session;

use serde::Serialize;
use wasm_bindgen::prelude::*;

use pvss_core::searcher::ScoreMode;
use pvss_core::track_store::TrackRef;

use crate::session::{DemoError, DemoSession, DemoSpec};

fn to_json(value: &impl Serialize) -> Result<String, JsError> {
    serde_json::to_string(value).map_err(|e| JsError::new(&e.to_string()))
}

fn js(e: DemoError) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    session: DemoSession,
}

#[wasm_bindgen]
impl Demo {
    /// Generates a world, learns its slot weights and trains the fusion model
    /// on a held-out twin.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, cameras: usize, vehicles: usize, hours: f64, noiseless: bool) -> Result<Demo, JsError> {
        let spec = DemoSpec {
            seed,
            cameras,
            vehicles,
            hours,
            noiseless,
        };
        Ok(Demo {
            session: DemoSession::new(&spec).map_err(js)?,
        })
    }

    /// Cameras, roads and query candidates.
    pub fn overview(&self) -> Result<String, JsError> {
        to_json(&self.session.overview())
    }

    /// Layer-by-layer snapshots of a pivot search from `camera:track`.
    pub fn search(
        &self,
        camera: u32,
        track: u32,
        window_s: f64,
        max_hops: usize,
        k: usize,
        mode: &str,
    ) -> Result<String, JsError> {
        let mode: ScoreMode = mode.parse().map_err(|e: String| JsError::new(&e))?;
        let view = self
            .session
            .search(TrackRef::new(camera, track), window_s, max_hops, k, mode)
            .map_err(js)?;
        to_json(&view)
    }

    /// Learned per-slot travel time of one road segment.
    pub fn slot_curve(&self, from: u32, to: u32) -> Result<String, JsError> {
        to_json(&self.session.slot_curve(from, to).map_err(js)?)
    }

    /// Spatio-temporal similarity on an `n x n` grid.
    pub fn st_heatmap(&self, d_s_max: f64, d_t_max: f64, n: usize) -> Result<String, JsError> {
        to_json(&self.session.st_heatmap(d_s_max, d_t_max, n).map_err(js)?)
    }
}
