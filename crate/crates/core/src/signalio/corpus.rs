//! On-disk corpus: per-split manifests (JSON Lines) plus WAV, face and
//! label files per clip.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use adenet_tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::synth::{gen_clip, ClipRecord, ClipSpec, SpeakerKind};
use super::wav::{ensure_dir, load_wav, write_wav, Waveform};
use crate::error::{Error, IoContext, Result};
use crate::features::FaceClip;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// Kind counts per split are `floor(n·ratio)` plus one extra clip for the
/// largest fractional remainders, ties going to speaking, then chewing,
/// then static.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub seed: u64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub speaking: f64,
    pub chewing: f64,
    #[serde(rename = "static")]
    pub static_: f64,
    /// Whole seconds; each clip draws uniformly from `min..=max`.
    pub min_duration_s: u32,
    pub max_duration_s: u32,
    /// Clip `i` of a split uses `snr_db[i % len]`.
    pub snr_db: Vec<f64>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train: 8,
            val: 4,
            test: 4,
            speaking: 0.5,
            chewing: 0.25,
            static_: 0.25,
            min_duration_s: 1,
            max_duration_s: 4,
            snr_db: vec![0.0, 5.0, 10.0],
        }
    }
}

impl CorpusConfig {
    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    fn validate(&self) -> Result<()> {
        let ratios = [self.speaking, self.chewing, self.static_];
        if ratios.iter().any(|r| !(*r >= 0.0)) || ratios.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config(format!("invalid kind ratios {ratios:?}")));
        }
        if self.min_duration_s < 1 || self.max_duration_s > 4 || self.min_duration_s > self.max_duration_s {
            return Err(Error::Config(format!(
                "durations {}..={} s outside 1..=4",
                self.min_duration_s, self.max_duration_s
            )));
        }
        if self.snr_db.is_empty() {
            return Err(Error::Config("empty snr list".into()));
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `n` clips over the kind ratios.
pub fn kind_counts(n: usize, speaking: f64, chewing: f64, static_: f64) -> [usize; 3] {
    let ratios = [speaking, chewing, static_];
    let total: f64 = ratios.iter().sum();
    let exact: Vec<f64> = ratios.iter().map(|r| n as f64 * r / total).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..3).collect();
    // Stable sort keeps the speaking < chewing < static tie order.
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).expect("finite ratios")
    });
    let mut left = n - counts.iter().sum::<usize>();
    for k in order {
        if left == 0 {
            break;
        }
        counts[k] += 1;
        left -= 1;
    }
    [counts[0], counts[1], counts[2]]
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-clip seed derived from the master seed, split and index.
pub fn clip_seed(master: u64, split: Split, index: usize) -> u64 {
    let s = match split {
        Split::Train => 1,
        Split::Val => 2,
        Split::Test => 3,
    };
    splitmix64(splitmix64(splitmix64(master) ^ s) ^ index as u64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub clip_id: String,
    pub split: Split,
    pub seed: u64,
    pub mixture_path: String,
    pub clean_path: String,
    pub noise_path: String,
    pub faces_path: String,
    pub labels_path: String,
    pub kind: SpeakerKind,
    pub snr_db: f64,
    pub duration_s: f64,
    pub ref_power: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusManifest {
    pub root: PathBuf,
    pub split: Split,
    pub generator_seed: u64,
    pub records: Vec<ManifestRecord>,
}

pub fn manifest_path(root: &Path, split: Split) -> PathBuf {
    root.join(format!("{}.jsonl", split.as_str()))
}

/// Generates every split, writing clip files and one manifest per split.
pub fn gen_corpus(cfg: &CorpusConfig, out: &Path) -> Result<Vec<CorpusManifest>> {
    cfg.validate()?;
    ensure_dir(out)?;
    let cfg_text = toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(out.join("corpus.toml"), cfg_text).at(out.join("corpus.toml"))?;
    Split::ALL.iter().map(|&s| gen_split(cfg, s, out)).collect()
}

fn gen_split(cfg: &CorpusConfig, split: Split, out: &Path) -> Result<CorpusManifest> {
    let n = cfg.count(split);
    let [ns, nc, nt] = kind_counts(n, cfg.speaking, cfg.chewing, cfg.static_);
    let mut kinds: Vec<SpeakerKind> = std::iter::repeat_n(SpeakerKind::Speaking, ns)
        .chain(std::iter::repeat_n(SpeakerKind::SilentChewing, nc))
        .chain(std::iter::repeat_n(SpeakerKind::SilentStatic, nt))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(clip_seed(cfg.seed, split, usize::MAX));
    kinds.shuffle(&mut rng);
    let dir = out.join(split.as_str());
    ensure_dir(&dir)?;
    let mut records = Vec::with_capacity(n);
    for (i, kind) in kinds.into_iter().enumerate() {
        let seed = clip_seed(cfg.seed, split, i);
        let span = (cfg.max_duration_s - cfg.min_duration_s + 1) as u64;
        let duration_s = (cfg.min_duration_s as u64 + splitmix64(seed ^ 0xD0) % span) as f64;
        let spec = ClipSpec {
            duration_s,
            kind,
            snr_db: cfg.snr_db[i % cfg.snr_db.len()],
        };
        let mut clip = gen_clip(seed, &spec)?;
        clip.clip_id = format!("{}-{i:04}", split.as_str());
        records.push(write_clip(&clip, split, seed, out)?);
    }
    let manifest = CorpusManifest {
        root: out.to_path_buf(),
        split,
        generator_seed: cfg.seed,
        records,
    };
    write_manifest(&manifest)?;
    Ok(manifest)
}

fn write_clip(clip: &ClipRecord, split: Split, seed: u64, root: &Path) -> Result<ManifestRecord> {
    let rel = |suffix: &str| format!("{}/{}.{suffix}", split.as_str(), clip.clip_id);
    let rec = ManifestRecord {
        clip_id: clip.clip_id.clone(),
        split,
        seed,
        mixture_path: rel("mix.wav"),
        clean_path: rel("clean.wav"),
        noise_path: rel("noise.wav"),
        faces_path: rel("faces.f32"),
        labels_path: rel("labels.txt"),
        kind: clip.speaker_kind,
        snr_db: clip.snr_db,
        duration_s: clip.mixture.duration_s(),
        ref_power: clip.ref_power,
    };
    write_wav(&root.join(&rec.mixture_path), &clip.mixture)?;
    write_wav(&root.join(&rec.clean_path), &clip.clean_target)?;
    write_wav(&root.join(&rec.noise_path), &clip.noise)?;
    write_faces(&root.join(&rec.faces_path), &clip.faces)?;
    let labels: String = clip.asd_labels.iter().map(|l| format!("{l}\n")).collect();
    let lp = root.join(&rec.labels_path);
    fs::write(&lp, labels).at(&lp)?;
    Ok(rec)
}

fn write_manifest(m: &CorpusManifest) -> Result<()> {
    let path = manifest_path(&m.root, m.split);
    let mut w = BufWriter::new(fs::File::create(&path).at(&path)?);
    for r in &m.records {
        let line = serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w, "{line}").at(&path)?;
    }
    w.flush().at(&path)
}

/// Reads one split's manifest, checking ids are unique and files exist.
pub fn load_manifest(root: &Path, split: Split) -> Result<CorpusManifest> {
    let path = manifest_path(root, split);
    let f = fs::File::open(&path).at(&path)?;
    let mut records = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.at(&path)?;
        if line.trim().is_empty() {
            continue;
        }
        let r: ManifestRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
        records.push(r);
    }
    let mut seen = HashSet::new();
    for r in &records {
        if !seen.insert(r.clip_id.clone()) {
            return Err(Error::Format(format!("duplicate clip id {}", r.clip_id)));
        }
        for p in [&r.mixture_path, &r.clean_path, &r.noise_path, &r.faces_path, &r.labels_path] {
            if !root.join(p).is_file() {
                return Err(Error::Format(format!("{}: missing file {p}", r.clip_id)));
            }
        }
    }
    let generator_seed = corpus_seed(root).unwrap_or(0);
    Ok(CorpusManifest {
        root: root.to_path_buf(),
        split,
        generator_seed,
        records,
    })
}

fn corpus_seed(root: &Path) -> Option<u64> {
    let text = fs::read_to_string(root.join("corpus.toml")).ok()?;
    toml::from_str::<CorpusConfig>(&text).ok().map(|c| c.seed)
}

impl CorpusManifest {
    pub fn find(&self, clip_id: &str) -> Option<&ManifestRecord> {
        self.records.iter().find(|r| r.clip_id == clip_id)
    }

    /// Reassembles a clip from its files.
    pub fn load_clip(&self, rec: &ManifestRecord) -> Result<ClipRecord> {
        let p = |rel: &str| self.root.join(rel);
        let faces = read_faces(&p(&rec.faces_path))?;
        let lp = p(&rec.labels_path);
        let labels = fs::read_to_string(&lp)
            .at(&lp)?
            .lines()
            .map(|l| match l.trim() {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                other => Err(Error::Format(format!("{}: label {other:?}", lp.display()))),
            })
            .collect::<Result<Vec<_>>>()?;
        if labels.len() != faces.num_frames() {
            return Err(Error::Format(format!(
                "{}: {} labels for {} frames",
                rec.clip_id,
                labels.len(),
                faces.num_frames()
            )));
        }
        Ok(ClipRecord {
            clip_id: rec.clip_id.clone(),
            mixture: load_wav(&p(&rec.mixture_path))?,
            clean_target: load_wav(&p(&rec.clean_path))?,
            noise: load_wav(&p(&rec.noise_path))?,
            faces,
            asd_labels: labels,
            speaker_kind: rec.kind,
            snr_db: rec.snr_db,
            ref_power: rec.ref_power,
        })
    }

    pub fn load_all(&self) -> Result<Vec<ClipRecord>> {
        self.records.iter().map(|r| self.load_clip(r)).collect()
    }
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("txt")
}

/// Little-endian f32 pixels plus a `T_v H W C` sidecar header.
pub fn write_faces(path: &Path, faces: &FaceClip) -> Result<()> {
    let f = faces.frames();
    let header = format!("{} {} {} 1\n", f.dim(0), f.dim(1), f.dim(2));
    fs::write(sidecar(path), header).at(sidecar(path))?;
    let mut bytes = Vec::with_capacity(f.len() * 4);
    for &v in f.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).at(path)
}

pub fn read_faces(path: &Path) -> Result<FaceClip> {
    let header = fs::read_to_string(sidecar(path)).at(sidecar(path))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::Format(format!("face header {header:?}"))))
        .collect::<Result<_>>()?;
    if dims.len() != 4 || dims[3] != 1 {
        return Err(Error::Format(format!("face header {header:?} (need T_v H W 1)")));
    }
    let bytes = fs::read(path).at(path)?;
    if bytes.len() != dims[0] * dims[1] * dims[2] * 4 {
        return Err(Error::Format(format!("{}: size does not match header", path.display())));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    FaceClip::new(Tensor::new(&dims[..3], data))
}

/// Re-mixes a stored clip at another SNR, keeping the clean target.
pub fn remix(clip: &ClipRecord, snr_db: f64) -> Result<Waveform> {
    let (mix, _) = super::synth::mix_with_power(&clip.clean_target, &clip.noise, snr_db, clip.ref_power)?;
    Ok(mix)
}
