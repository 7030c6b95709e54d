//! Tomography of multi-photon polarization states measured with detectors of
//! non-unit quantum efficiency.
//!
//! The crate covers the whole chain: building measurement protocols (ideal,
//! n-fold coincidence, and the fuzzy protocol that keeps photon-loss events),
//! Poisson simulation of counts, maximum-likelihood reconstruction of pure
//! states, and the information-matrix theory that predicts the distribution
//! of fidelity losses.
//!
//! ```
//! use polartomo::{ghz_state, information, protocol};
//!
//! let set = protocol::SingleQubitProjectorSet::octahedron();
//! let fuzzy = protocol::build_fuzzy_protocol(&set, 3, 1e5, 0.2).unwrap();
//! let ghz = ghz_state(3).unwrap();
//! let analysis = information::analyze(&fuzzy, &ghz).unwrap();
//! assert!((analysis.normalized_information - 0.216).abs() < 1e-10);
//! ```

pub mod error;
pub mod experiment;
pub mod information;
pub mod par;
pub mod protocol;
pub mod quantum;
pub mod reconstruction;
pub mod simulation;

pub use error::{Result, TomoError};
pub use protocol::{Protocol, ProtocolVariant, SingleQubitProjectorSet};
pub use quantum::{fidelity, ghz_state, PureState, C64};
pub use reconstruction::{ml_reconstruct, ReconstructionResult, SolverOptions};
pub use simulation::{sample_counts, CountsRecord};
