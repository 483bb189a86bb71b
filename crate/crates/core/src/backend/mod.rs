//! Verification back-end: trial scoring, detection metrics, embedding
//! archives and the clustering + LDA self-training classifier.

mod archive;
mod lda;
mod metrics;
mod scores;

pub use archive::{read_embeddings, sidecar_path, write_embeddings, EmbeddingTable};
pub use lda::{backend_pipeline, lda_fit, lda_transform, pseudo_label, BackendConfig, LdaModel};
pub use metrics::{compute_eer, compute_min_dcf, det_export, det_import, det_points, roc_points, DcfParams, DetCurve};
pub use scores::{cds_score, read_scores, score_trials, write_scores, ScoreSet};
