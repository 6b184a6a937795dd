//! End-to-end wiring over a synthetic world: store, index, learned graph
//! weights, fusion training on a held-out world, and evaluation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera_graph::{CameraGraph, GraphError, RoadDistances};
use crate::evaluator::{run_protocol, EvalConfig, EvalError, EvalReport};
use crate::feature_index::{IndexConfig, IndexError, TwoLevelIndex};
use crate::fusion_model::{train, training_pairs, FusionError, FusionParams, TrainConfig};
use crate::searcher::Searcher;
use crate::synth_world::{generate, World, WorldError, WorldSpec};
use crate::track_store::{TrackRef, TrackStore};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Everything a search needs, owned.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub store: TrackStore,
    pub index: TwoLevelIndex,
    pub graph: CameraGraph,
    pub distances: RoadDistances,
    pub params: Option<FusionParams>,
}

impl Prepared {
    pub fn new(
        store: TrackStore,
        graph: CameraGraph,
        index_config: &IndexConfig,
        params: Option<FusionParams>,
    ) -> Result<Self, PipelineError> {
        let index = TwoLevelIndex::build(&store, index_config)?;
        let distances = graph.road_distances();
        Ok(Self {
            store,
            index,
            graph,
            distances,
            params,
        })
    }

    pub fn searcher(&self) -> Searcher<'_> {
        Searcher {
            store: &self.store,
            index: &self.index,
            graph: &self.graph,
            distances: &self.distances,
            params: self.params.as_ref(),
        }
    }
}

/// Trains fusion parameters on a labeled corpus.
pub fn fit_fusion(
    store: &TrackStore,
    identities: &BTreeMap<TrackRef, u32>,
    graph: &CameraGraph,
    config: &TrainConfig,
    negative_ratio: usize,
) -> Result<FusionParams, PipelineError> {
    let distances = graph.road_distances();
    let samples = training_pairs(
        store,
        identities,
        graph,
        &distances,
        config.lambda,
        config.use_slot_weights,
        negative_ratio,
        config.seed,
    )?;
    Ok(train(&samples, config)?.params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub world: WorldSpec,
    pub index: IndexConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub negative_ratio: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            world: WorldSpec::default(),
            index: IndexConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            negative_ratio: 3,
        }
    }
}

/// Seed of the training world that goes with an evaluation world.
pub fn training_seed(seed: u64) -> u64 {
    seed.wrapping_add(1_000_003)
}

/// Test world plus fusion parameters fitted on a separately seeded world of
/// the same shape.
pub fn prepare_world(config: &ExperimentConfig) -> Result<(World, Prepared), PipelineError> {
    let world = generate(&config.world)?;
    let train_world = generate(&WorldSpec {
        seed: training_seed(config.world.seed),
        ..config.world.clone()
    })?;
    let train_graph = train_world.graph.learn_weights(&train_world.truth.transits)?;
    let params = fit_fusion(
        &train_world.store()?,
        &train_world.truth.identities,
        &train_graph,
        &config.train,
        config.negative_ratio,
    )?;
    let graph = world.graph.learn_weights(&world.truth.transits)?;
    let prepared = Prepared::new(world.store()?, graph, &config.index, Some(params))?;
    Ok((world, prepared))
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<EvalReport, PipelineError> {
    let (world, prepared) = prepare_world(config)?;
    Ok(run_protocol(&prepared.searcher(), &world.truth.identities, &config.eval)?)
}
