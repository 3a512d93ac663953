//! Directed polymers on a b-ary tree with complex random weights.
//!
//! * [`env`]: weight laws, their moment functions and samplers.
//! * [`phase`]: phase diagram analytics and predicted free energies.
//! * [`sim`]: exact evaluation of partition functions on one tree.
//! * [`mc`]: Monte Carlo estimators and statistical checks.
//! * [`cli`]: the `cpolymer` command line.

pub mod cli;
pub mod env;
pub mod mc;
pub mod numerics;
pub mod phase;
pub mod rng;
mod serde_ext;
pub mod sim;
