//! Membership inference auditing for synthetic tabular data.
//!
//! Given a synthetic dataset S, a reference sample R from the same population
//! and candidate records X, the attacks in [`attacks`] assign each candidate
//! a score that is larger when the candidate looks more like a member of the
//! generator's training set. [`eval`] turns scores into AUC and TPR at fixed
//! FPR, and [`harness`] runs whole benchmark grids against the toy
//! generators in [`toygen`].
//!
//! ```
//! use genlra_core::matrix::Matrix;
//! use genlra_core::encode::EncodedMatrix;
//! use genlra_core::attacks::{gen_lra, GenLraConfig, Locality};
//!
//! let s = Matrix::from_rows(&[[0.0], [0.1], [2.0], [2.1]]).unwrap();
//! let r = Matrix::from_rows(&[[0.0], [1.0], [2.0], [3.0]]).unwrap();
//! let x = Matrix::from_rows(&[[0.05], [5.0]]).unwrap();
//! let raw = |m: Matrix| EncodedMatrix::raw(m, "raw");
//! let scores = gen_lra(
//!     &raw(s),
//!     &raw(r),
//!     &raw(x),
//!     &GenLraConfig { k: Locality::Neighbors(2), ..Default::default() },
//! )
//! .unwrap();
//! assert!(scores.scores[0] > scores.scores[1]);
//! ```

pub mod attacks;
pub mod data;
pub mod density;
pub mod encode;
pub mod eval;
pub mod harness;
pub mod matrix;
pub mod neighbors;
pub mod rng;
pub mod toygen;

pub use attacks::{AttackError, AttackId, AttackScores, AttackSpec};
pub use data::{load_csv, load_csv_group, Schema, TabularDataset};
pub use encode::{fit_encoder, EncodedMatrix, Encoder, Strategy};
pub use eval::{evaluate, EvalReport};
pub use harness::{run_experiment, ExperimentConfig};
pub use matrix::Matrix;
