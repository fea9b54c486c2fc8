pub mod assemble;
pub mod dataset;
pub mod element;

pub use assemble::{assemble, assemble_with, DofMap, FemOperators, LinearSystem, PdeKind, PdeProblem, StepState};
pub use dataset::{
    generate_dataset, generate_dataset_on, load_dataset, save_dataset, Dataset, DatasetConfig, DatasetTuple, MeshSpec,
    ParamDist, Trajectory, TupleMeta,
};
