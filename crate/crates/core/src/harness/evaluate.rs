use adenet_tensor::ParamStore;

use crate::error::{Error, Result};
use crate::model::{Adenet, ModelInput};
use crate::objectives::{ClipOutcome, EvalReport};
use crate::signalio::{ClipRecord, Waveform};

/// SI-SDR improvement that counts as one unit in the composite score.
pub const SI_SDR_NORM_DB: f64 = 20.0;

/// Detection scores and the enhanced waveform for one clip. Both may be
/// shorter than the clip when stream alignment trims trailing frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub scores: Vec<f64>,
    pub enhanced: Vec<f64>,
}

pub trait ClipPredictor {
    fn predict(&self, clip: &ClipRecord, mixture: &Waveform) -> Result<Prediction>;
}

pub struct ModelPredictor<'a> {
    pub net: &'a Adenet,
    pub store: &'a ParamStore,
}

impl ClipPredictor for ModelPredictor<'_> {
    fn predict(&self, clip: &ClipRecord, mixture: &Waveform) -> Result<Prediction> {
        let input = ModelInput::from_clip(clip, mixture, false, 0)?;
        let (scores, enhanced) = self.net.predict(self.store, &input)?;
        Ok(Prediction { scores, enhanced })
    }
}

/// Scores one clip at its stored mixture.
pub fn evaluate_clip(pred: &dyn ClipPredictor, clip: &ClipRecord) -> Result<ClipOutcome> {
    let p = pred.predict(clip, &clip.mixture)?;
    let (nf, ns) = (p.scores.len(), p.enhanced.len());
    if nf == 0 || nf > clip.asd_labels.len() || ns == 0 || ns > clip.mixture.len() {
        return Err(Error::Length(format!(
            "{}: prediction of {nf} frames / {ns} samples does not fit {} frames / {} samples",
            clip.clip_id,
            clip.asd_labels.len(),
            clip.mixture.len()
        )));
    }
    ClipOutcome::measure(
        &clip.clip_id,
        clip.snr_db,
        p.scores,
        clip.asd_labels[..nf].to_vec(),
        &p.enhanced,
        &clip.clean_target.samples()[..ns],
        &clip.mixture.samples()[..ns],
        clip.speaker_kind.is_speaking(),
    )
}

pub fn evaluate(pred: &dyn ClipPredictor, clips: &[ClipRecord]) -> Result<EvalReport> {
    let outcomes = clips.iter().map(|c| evaluate_clip(pred, c)).collect::<Result<Vec<_>>>()?;
    EvalReport::from_outcomes(&outcomes)
}

/// `AUC + SI-SDRi / 20 dB`; missing parts count as zero.
pub fn composite(report: &EvalReport) -> f64 {
    report.total.auc.unwrap_or(0.0) + report.total.si_sdr_improvement_db.unwrap_or(0.0) / SI_SDR_NORM_DB
}
