mod codec;
pub mod camera_graph;
pub mod feature_index;
pub mod track_store;
pub mod fusion_model;
pub mod synth_world;
pub mod searcher;
pub mod evaluator;
pub mod pipeline;
