//! Identity-conditioned face liveness detection.
//!
//! A spoofing attack always impersonates some enrolled client, so the
//! detector gets to use that client's enrolled real face: a shared-weight
//! Siamese embedding network is trained with a contrastive loss on
//! same-client image pairs (real/real positives, real/fake negatives), and
//! at test time the probe is compared against the claimed identity's
//! reference embedding. A probe is accepted as real when its embedding
//! distance to the reference stays under a threshold calibrated on a
//! development split.
//!
//! Modules:
//! - [`tensor`], [`ops`], [`network`], [`gradcheck`]: the dense f64
//!   numerical core with reverse-mode gradients and a finite-difference
//!   checker.
//! - [`arch`], [`store`]: layer descriptors and the single shared parameter
//!   store.
//! - [`siamese`]: pair distance, contrastive loss, and the training loop.
//! - [`dataset`], [`pnm`], [`synth`]: directory-convention ingestion, PGM/PPM
//!   decoding, pair construction, and the synthetic spoof-dataset generator.
//! - [`protocol`]: gallery enrollment, verification, threshold calibration.
//! - [`eval`]: FAR/FRR/HTER metrics, threshold sweeps, report emission.

pub mod arch;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod network;
pub mod ops;
pub mod pnm;
pub mod protocol;
pub mod seeding;
pub mod siamese;
pub mod store;
pub mod synth;
pub mod tensor;

pub use arch::{Architecture, LayerDesc, LayerSpec};
pub use dataset::{
    build_pairs, load_dataset, load_image, materialize_pairs, preprocess, ClientRecord, Dataset,
    DatasetSplit, ImageRecord, Liveness, PairSample,
};
pub use error::{Error, Result};
pub use eval::{
    confusion_counts, emit_report, hter, threshold_sweep, ConfusionCounts, MetricsReport,
    ReportFormat, SweepPoint,
};
pub use gradcheck::{finite_diff_check, kink_margin, GradCheckReport};
pub use network::{ForwardTrace, Network};
pub use ops::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, maxpool2d_backward,
    maxpool2d_forward, relu_backward, relu_forward, PoolRoutes,
};
pub use pnm::{decode_image, encode_pgm, RawImage};
pub use protocol::{
    calibrate_threshold, default_threshold, model_digest, verify, Decision, Gallery, GalleryEntry,
    Verdict,
};
pub use siamese::{
    contrastive_loss, pair_distance, LabeledPair, PairLabel, SiameseModel, TrainConfig,
};
pub use store::{LayerParams, ParamStore};
pub use synth::{synth_dataset, SynthConfig, SynthSummary};
pub use tensor::Tensor;
