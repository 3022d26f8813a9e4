//! Training losses and evaluation metrics.

mod losses;
mod metrics;
mod report;

pub use losses::{asd_loss, si_sdr_loss, total_loss, LossWeights, LOG_CLAMP, SI_SDR_EPS};
pub use metrics::{
    asd_loss_value, average_precision, f1_at_threshold, roc_auc, sdr, si_sdr, suppression_db, SDR_EPS,
};
pub use report::{ClipOutcome, Enhancement, EvalReport, SnrBreakdown};
