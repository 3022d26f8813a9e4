//! Text and SVG diagnostics.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use adenet_tensor::{Ctx, Graph, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::evaluate::ClipPredictor;
use crate::error::{Error, IoContext, Result};
use crate::model::{Adenet, ModelInput};
use crate::signalio::ClipRecord;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    EmbedStats,
    Scores,
    Waveforms,
}

impl FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "embed_stats" => Ok(PlotKind::EmbedStats),
            "scores" => Ok(PlotKind::Scores),
            "waveforms" => Ok(PlotKind::Waveforms),
            other => Err(Error::Config(format!("unknown plot kind {other:?}"))),
        }
    }
}

/// Stream features around the final normalisation, each `(frames, d)`.
pub struct StreamFeatures {
    pub audio_pre: Tensor,
    pub audio_post: Tensor,
    pub visual_pre: Tensor,
    pub visual_post: Tensor,
}

pub fn stream_features(net: &Adenet, store: &ParamStore, clips: &[ClipRecord]) -> Result<StreamFeatures> {
    let mut parts: [Vec<Tensor>; 4] = Default::default();
    for clip in clips {
        let input = ModelInput::from_clip(clip, &clip.mixture, false, 0)?;
        let graph = Graph::new();
        let ctx = Ctx::inference(&graph, store);
        let out = net.forward(&ctx, &input)?;
        for (slot, v) in parts
            .iter_mut()
            .zip([out.audio_pre_norm, out.audio_post_norm, out.visual_pre_norm, out.visual_post_norm])
        {
            slot.push((*v.value()).clone());
        }
    }
    if clips.is_empty() {
        return Err(Error::Config("no clips to summarise".into()));
    }
    let cat = |v: &Vec<Tensor>| Tensor::concat(&v.iter().collect::<Vec<_>>(), 0);
    Ok(StreamFeatures {
        audio_pre: cat(&parts[0]),
        audio_post: cat(&parts[1]),
        visual_pre: cat(&parts[2]),
        visual_post: cat(&parts[3]),
    })
}

/// Per-channel (mean, biased variance) over rows.
pub fn channel_stats(x: &Tensor) -> Vec<(f64, f64)> {
    let (n, d) = (x.dim(0), x.dim(1));
    (0..d)
        .map(|c| {
            let col: Vec<f64> = (0..n).map(|r| x.data()[r * d + c]).collect();
            let m = col.iter().sum::<f64>() / n as f64;
            let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
            (m, v)
        })
        .collect()
}

/// `stream stage channel mean variance`; 2·d rows per stream.
pub fn embed_stats_text(f: &StreamFeatures) -> String {
    let mut out = String::from("# stream stage channel mean variance\n");
    for (stream, pre, post) in [("audio", &f.audio_pre, &f.audio_post), ("visual", &f.visual_pre, &f.visual_post)] {
        for (stage, x) in [("pre_norm", pre), ("post_norm", post)] {
            for (c, (m, v)) in channel_stats(x).into_iter().enumerate() {
                let _ = writeln!(out, "{stream} {stage} {c} {m:.6e} {v:.6e}");
            }
        }
    }
    out
}

fn svg_header(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

/// Scatter of post-norm frames of both streams under one seeded
/// Gaussian projection to 2-D.
pub fn projection_svg(f: &StreamFeatures, seed: u64) -> String {
    let d = f.audio_post.dim(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let proj: Vec<f64> = (0..2 * d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let project = |x: &Tensor| -> Vec<(f64, f64)> {
        x.data()
            .chunks(d)
            .map(|row| {
                let a = row.iter().zip(&proj[..d]).map(|(x, p)| x * p).sum();
                let b = row.iter().zip(&proj[d..]).map(|(x, p)| x * p).sum();
                (a, b)
            })
            .collect()
    };
    let (pa, pv) = (project(&f.audio_post), project(&f.visual_post));
    let all = pa.iter().chain(&pv);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let (w, h, m) = (480.0, 480.0, 20.0);
    let sx = |x: f64| m + (x - x0) / (x1 - x0).max(1e-12) * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - y0) / (y1 - y0).max(1e-12) * (h - 2.0 * m);
    let mut svg = svg_header(w, h);
    for (pts, colour) in [(&pa, "#d62728"), (&pv, "#1f77b4")] {
        for &(x, y) in pts {
            let _ = writeln!(svg, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\" fill=\"{colour}\" fill-opacity=\"0.6\"/>", sx(x), sy(y));
        }
    }
    svg.push_str("<text x=\"10\" y=\"15\" font-size=\"12\" fill=\"#d62728\">audio</text>\n");
    svg.push_str("<text x=\"60\" y=\"15\" font-size=\"12\" fill=\"#1f77b4\">visual</text>\n</svg>\n");
    svg
}

/// `clip_id frame score label`; one row per predicted frame.
pub fn scores_text(pred: &dyn ClipPredictor, clips: &[ClipRecord]) -> Result<String> {
    let mut out = String::from("# clip_id frame score label\n");
    for clip in clips {
        let p = pred.predict(clip, &clip.mixture)?;
        for (t, s) in p.scores.iter().enumerate() {
            let label = clip.asd_labels.get(t).copied().unwrap_or(0);
            let _ = writeln!(out, "{} {t} {s:.6} {label}", clip.clip_id);
        }
    }
    Ok(out)
}

fn polyline(x: &[f64], top: f64, height: f64, width: f64, amp: f64, colour: &str) -> String {
    let cols = width as usize;
    let per = x.len().div_ceil(cols).max(1);
    let mut pts = String::new();
    for (i, chunk) in x.chunks(per).enumerate() {
        let peak = chunk.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let _ = write!(pts, "{:.1},{:.2} ", i as f64, top + height / 2.0 - peak / amp * height / 2.0);
    }
    format!("<polyline points=\"{pts}\" fill=\"none\" stroke=\"{colour}\" stroke-width=\"1\"/>\n")
}

/// Peak envelopes of mixture, clean target and enhanced output.
pub fn waveform_svg(clip: &ClipRecord, enhanced: &[f64]) -> String {
    let (w, row) = (800.0, 120.0);
    let n = enhanced.len();
    let rows = [
        ("mixture", &clip.mixture.samples()[..n], "#7f7f7f"),
        ("clean", &clip.clean_target.samples()[..n], "#2ca02c"),
        ("enhanced", enhanced, "#1f77b4"),
    ];
    let amp = rows
        .iter()
        .flat_map(|r| r.1.iter())
        .fold(1e-12f64, |a, &b| a.max(b.abs()));
    let mut svg = svg_header(w, row * rows.len() as f64);
    for (i, (name, x, colour)) in rows.iter().enumerate() {
        let top = i as f64 * row;
        svg.push_str(&polyline(x, top, row, w, amp, colour));
        let _ = writeln!(svg, "<text x=\"5\" y=\"{}\" font-size=\"12\">{name}</text>", top + 14.0);
    }
    svg.push_str("</svg>\n");
    svg
}

fn write(path: PathBuf, text: &str) -> Result<PathBuf> {
    fs::write(&path, text).at(&path)?;
    Ok(path)
}

/// Writes the files for `kind` into `out` and returns their paths.
pub fn plot(
    kind: PlotKind,
    net: &Adenet,
    store: &ParamStore,
    clips: &[ClipRecord],
    out: &Path,
    seed: u64,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).at(out)?;
    let pred = super::evaluate::ModelPredictor { net, store };
    match kind {
        PlotKind::EmbedStats => {
            let f = stream_features(net, store, clips)?;
            Ok(vec![
                write(out.join("embed_stats.txt"), &embed_stats_text(&f))?,
                write(out.join("embed_projection.svg"), &projection_svg(&f, seed))?,
            ])
        }
        PlotKind::Scores => Ok(vec![write(out.join("scores.txt"), &scores_text(&pred, clips)?)?]),
        PlotKind::Waveforms => clips
            .iter()
            .map(|clip| {
                let p = pred.predict(clip, &clip.mixture)?;
                write(out.join(format!("{}_waveforms.svg", clip.clip_id)), &waveform_svg(clip, &p.enhanced))
            })
            .collect(),
    }
}
