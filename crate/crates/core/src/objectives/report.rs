use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use super::metrics::{average_precision, f1_at_threshold, roc_auc, sdr, si_sdr, suppression_db};
use crate::error::Result;

/// Everything the report needs from one evaluated clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipOutcome {
    pub clip_id: String,
    pub snr_db: f64,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    pub enhancement: Enhancement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Enhancement {
    Speaking { sdr_db: f64, si_sdr_db: f64, si_sdr_mixture_db: f64 },
    Silent { suppression_db: f64 },
}

impl ClipOutcome {
    /// Scores one clip from its detection scores and waveforms.
    pub fn measure(
        clip_id: &str,
        snr_db: f64,
        scores: Vec<f64>,
        labels: Vec<u8>,
        enhanced: &[f64],
        clean: &[f64],
        mixture: &[f64],
        speaking: bool,
    ) -> Result<Self> {
        let enhancement = if speaking {
            Enhancement::Speaking {
                sdr_db: sdr(enhanced, clean)?,
                si_sdr_db: si_sdr(enhanced, clean)?,
                si_sdr_mixture_db: si_sdr(mixture, clean)?,
            }
        } else {
            Enhancement::Silent {
                suppression_db: suppression_db(enhanced, mixture)?,
            }
        };
        Ok(Self {
            clip_id: clip_id.to_owned(),
            snr_db,
            scores,
            labels,
            enhancement,
        })
    }
}

/// Metrics over a set of clips. Detection metrics pool all frames;
/// enhancement metrics average over speaking (or silent) clips.
/// `None` marks a metric undefined on the subset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SnrBreakdown {
    pub clips: usize,
    pub speaking_clips: usize,
    pub frames: usize,
    pub map: Option<f64>,
    pub auc: Option<f64>,
    pub f1: f64,
    pub sdr_db: Option<f64>,
    pub si_sdr_db: Option<f64>,
    pub si_sdr_improvement_db: Option<f64>,
    pub suppression_db: Option<f64>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

impl SnrBreakdown {
    pub fn from_outcomes<'a>(outcomes: impl IntoIterator<Item = &'a ClipOutcome>) -> Result<Self> {
        let (mut scores, mut labels) = (Vec::new(), Vec::new());
        let (mut sdrs, mut sis, mut imps, mut sups) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut clips = 0;
        for o in outcomes {
            clips += 1;
            scores.extend_from_slice(&o.scores);
            labels.extend_from_slice(&o.labels);
            match o.enhancement {
                Enhancement::Speaking {
                    sdr_db,
                    si_sdr_db,
                    si_sdr_mixture_db,
                } => {
                    sdrs.push(sdr_db);
                    sis.push(si_sdr_db);
                    imps.push(si_sdr_db - si_sdr_mixture_db);
                }
                Enhancement::Silent { suppression_db } => sups.push(suppression_db),
            }
        }
        Ok(Self {
            clips,
            speaking_clips: sdrs.len(),
            frames: scores.len(),
            map: average_precision(&scores, &labels).ok(),
            auc: roc_auc(&scores, &labels).ok(),
            f1: f1_at_threshold(&scores, &labels, 0.5)?,
            sdr_db: mean(&sdrs),
            si_sdr_db: mean(&sis),
            si_sdr_improvement_db: mean(&imps),
            suppression_db: mean(&sups),
        })
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_owned(), |v| format!("{v:.6}"));
        vec![
            ("clips", self.clips.to_string()),
            ("speaking_clips", self.speaking_clips.to_string()),
            ("frames", self.frames.to_string()),
            ("map", opt(self.map)),
            ("auc", opt(self.auc)),
            ("f1", format!("{:.6}", self.f1)),
            ("sdr_db", opt(self.sdr_db)),
            ("si_sdr_db", opt(self.si_sdr_db)),
            ("si_sdr_improvement_db", opt(self.si_sdr_improvement_db)),
            ("suppression_db", opt(self.suppression_db)),
        ]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub total: SnrBreakdown,
    /// One entry per distinct SNR, ascending.
    pub per_snr: Vec<(f64, SnrBreakdown)>,
}

impl EvalReport {
    pub fn from_outcomes(outcomes: &[ClipOutcome]) -> Result<Self> {
        let mut snrs: Vec<f64> = outcomes.iter().map(|o| o.snr_db).collect();
        snrs.sort_by(f64::total_cmp);
        snrs.dedup();
        let per_snr = snrs
            .into_iter()
            .map(|s| Ok((s, SnrBreakdown::from_outcomes(outcomes.iter().filter(|o| o.snr_db == s))?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            total: SnrBreakdown::from_outcomes(outcomes)?,
            per_snr,
        })
    }

    /// Flat `key = value` lines.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.total.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        for (snr, b) in &self.per_snr {
            for (k, v) in b.entries() {
                let _ = writeln!(out, "snr_{snr}.{k} = {v}");
            }
        }
        out
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut cols: Vec<(String, &SnrBreakdown)> = vec![("all".into(), &self.total)];
        cols.extend(self.per_snr.iter().map(|(s, b)| (format!("{s} dB"), b)));
        write!(f, "{:<24}", "metric")?;
        for (name, _) in &cols {
            write!(f, "{name:>12}")?;
        }
        writeln!(f)?;
        let rows: Vec<Vec<(&str, String)>> = cols.iter().map(|(_, b)| b.entries()).collect();
        for i in 0..rows[0].len() {
            write!(f, "{:<24}", rows[0][i].0)?;
            for r in &rows {
                let v = &r[i].1;
                match v.parse::<f64>() {
                    Ok(x) if v.contains('.') => write!(f, "{x:>12.4}")?,
                    _ => write!(f, "{v:>12}")?,
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
