//! Discrete Dolbeault-Hodge theory for families of hermitian line bundles over
//! flat elliptic curves, and a numerical check of the curvature formula for the
//! L2 metric on their higher direct images.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`]: lattice, sample grid, twisted finite differences, quadrature.
//! * [`family`]: the model family of line bundles and its closed-form curvature.
//! * [`fields`], [`hodge`], [`solver`]: the fiberwise Dolbeault complex, its
//!   Laplacian, harmonic projection and Green operator.
//! * [`direct_image`]: holomorphic frames over a parameter stencil and the
//!   finite-difference Chern curvature of their Gram matrices.
//! * [`theorem`], [`lemmas`], [`studies`]: the right-hand side terms, the
//!   comparison report, the identity suite and convergence studies.
//! * [`config`], [`report`], [`cli`]: run configuration, deterministic
//!   serialization and the orchestration behind the `dolhodge` binary.

pub mod cli;
pub mod config;
pub mod direct_image;
pub mod error;
pub mod family;
pub mod fields;
pub mod grid;
pub mod hodge;
pub mod lemmas;
pub mod linalg;
pub mod report;
pub mod solver;
pub mod studies;
pub mod theorem;

pub use num_complex::Complex64 as C64;

pub use crate::config::{Command, RunConfig};
pub use crate::direct_image::{
    chern_curvature_fd, gram, harmonize_family, holo_frame_q0, holo_frame_q1,
    rank_constancy_check, FrameBuilder, FrameMode, GramField, HoloFrame, Offset, RankReport, SStencil,
};
pub use crate::error::{Error, Result};
pub use crate::family::{CurvatureBlocks, FamilySpec};
pub use crate::fields::{EndField, Field, FormKind};
pub use crate::grid::{StencilOrder, TorusGrid, WrapRule};
pub use crate::hodge::{cap, cup, endo_commutator_lambda, Fiber, HarmonicBasis};
pub use crate::lemmas::{eta_halving, lemma_suite, LemmaReport};
pub use crate::solver::SolverOptions;
pub use crate::studies::{convergence_study, rescale_demo, serre_cross_check, wp_report};
pub use crate::theorem::{theorem_terms, verify_theorem, CurvatureReport, CurvatureTensor, Terms};

/// Version string embedded in every report.
pub const LIBRARY_VERSION: &str = env!("CARGO_PKG_VERSION");
