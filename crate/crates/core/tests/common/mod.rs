use stmodels::models::ModelData;
use stmodels::{ModelKind, ParamState};

/// See [`stmodels::oracle::toy_problem`].
pub fn toy(kind: ModelKind, d: usize, t: usize, missing: &[usize], seed: u64) -> (ModelData, ParamState) {
    stmodels::oracle::toy_problem(kind, d, t, missing, seed).unwrap()
}
