pub mod graph;
pub mod model;
pub mod tape;

pub use graph::{graph_from_system, symmetrize_triangulate, GraphData};
pub use model::{
    assemble_preconditioner, build_learned, energy_scaled_start, predict_x0, ForwardOutput, GnnHyper, GnnModel,
    Normalization, FEATURE_WIDTH,
};
pub use tape::{Tape, Tensor};
