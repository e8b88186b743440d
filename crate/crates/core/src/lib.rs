//! Separable transferable-utility matching markets: equilibrium computation,
//! identification of the joint surplus, and parametric estimation.

pub mod bench;
pub mod choice;
pub mod error;
pub mod estimate;
pub mod identify;
pub mod io;
pub mod market;
pub mod numerics;
pub mod optim;
pub mod simulate;
pub mod solvers;
pub mod transport;

pub use choice::{ChoiceModel, Model, ModelSet, ModelSpec};
pub use error::{Error, Result, Side};
pub use market::{
    conditional_probs, margin_residuals, GroupUtilities, Margins, Matching, SurplusMatrix,
    SystematicUtilities,
};
pub use estimate::{BasisSet, DistParamMap, EstimationResult, ParamModelSpec, Sample};
pub use identify::{identify, identify_surplus};
pub use io::SampleCounts;
pub use solvers::{solve, Method, Solution, SolveOptions};
