//! WAV files, dataset manifests and segmentation into training examples.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Rng;

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BitDepth {
    Pcm16,
    Pcm24,
    Float32,
}

impl BitDepth {
    fn bytes(self) -> usize {
        match self {
            BitDepth::Pcm16 => 2,
            BitDepth::Pcm24 => 3,
            BitDepth::Float32 => 4,
        }
    }
}

/// Decoded mono audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Audio {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub bit_depth: BitDepth,
}

fn unsupported(path: &Path, message: impl Into<String>) -> Error {
    Error::UnsupportedAudio { path: path.to_path_buf(), message: message.into() }
}

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

/// Reads a mono RIFF/WAVE file holding 16- or 24-bit PCM or 32-bit float.
/// PCM samples are scaled by `1 / 2^(bits-1)`.
pub fn load_wav(path: &Path) -> Result<Audio> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes).map_err(|m| unsupported(path, m))
}

fn decode_wav(b: &[u8]) -> std::result::Result<Audio, String> {
    if b.len() < 12 || &b[0..4] != b"RIFF" || &b[8..12] != b"WAVE" {
        return Err("not a RIFF/WAVE file".into());
    }
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    let mut i = 12;
    while i + 8 <= b.len() {
        let id = &b[i..i + 4];
        let size = u32_at(b, i + 4) as usize;
        let body = i + 8;
        let end = body.checked_add(size).filter(|&e| e <= b.len()).ok_or("truncated chunk")?;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err("short fmt chunk".into());
                }
                let mut tag = u16_at(b, body);
                let bits = u16_at(b, body + 14);
                if tag == FORMAT_EXTENSIBLE {
                    if size < 40 {
                        return Err("short extensible fmt chunk".into());
                    }
                    tag = u16_at(b, body + 24);
                }
                fmt = Some((tag, u16_at(b, body + 2), u32_at(b, body + 4), bits));
            }
            b"data" => data = Some(&b[body..end]),
            _ => {}
        }
        i = end + (size & 1);
    }
    let (tag, channels, rate, bits) = fmt.ok_or("missing fmt chunk")?;
    let data = data.ok_or("missing data chunk")?;
    if channels != 1 {
        return Err(format!("expected mono audio, found {channels} channels"));
    }
    let depth = match (tag, bits) {
        (FORMAT_PCM, 16) => BitDepth::Pcm16,
        (FORMAT_PCM, 24) => BitDepth::Pcm24,
        (FORMAT_FLOAT, 32) => BitDepth::Float32,
        _ => return Err(format!("unsupported encoding: format tag {tag}, {bits} bits")),
    };
    let samples = data
        .chunks_exact(depth.bytes())
        .map(|s| match depth {
            BitDepth::Pcm16 => i16::from_le_bytes([s[0], s[1]]) as f64 / 32768.0,
            BitDepth::Pcm24 => (i32::from_le_bytes([0, s[0], s[1], s[2]]) >> 8) as f64 / 8388608.0,
            BitDepth::Float32 => f32::from_le_bytes([s[0], s[1], s[2], s[3]]) as f64,
        })
        .collect();
    Ok(Audio { samples, sample_rate: rate, bit_depth: depth })
}

/// Writes mono audio. PCM output is scaled by `2^(bits-1)`, rounded and
/// clipped to the integer range.
pub fn save_wav(path: &Path, samples: &[f64], sample_rate: u32, depth: BitDepth) -> Result<()> {
    let width = depth.bytes();
    let data_len = samples.len() * width;
    let mut b = Vec::with_capacity(44 + data_len);
    b.extend_from_slice(b"RIFF");
    b.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    b.extend_from_slice(b"WAVEfmt ");
    b.extend_from_slice(&16u32.to_le_bytes());
    let tag = if depth == BitDepth::Float32 { FORMAT_FLOAT } else { FORMAT_PCM };
    b.extend_from_slice(&tag.to_le_bytes());
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&sample_rate.to_le_bytes());
    b.extend_from_slice(&(sample_rate * width as u32).to_le_bytes());
    b.extend_from_slice(&(width as u16).to_le_bytes());
    b.extend_from_slice(&(8 * width as u16).to_le_bytes());
    b.extend_from_slice(b"data");
    b.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in samples {
        match depth {
            BitDepth::Pcm16 => b.extend_from_slice(&((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16).to_le_bytes()),
            BitDepth::Pcm24 => {
                let v = (s * 8388608.0).round().clamp(-8388608.0, 8388607.0) as i32;
                b.extend_from_slice(&v.to_le_bytes()[..3]);
            }
            BitDepth::Float32 => b.extend_from_slice(&(s as f32).to_le_bytes()),
        }
    }
    fs::write(path, b).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub input: PathBuf,
    pub target: PathBuf,
    #[serde(default)]
    pub controls: Vec<f64>,
    /// Pins the entry to a split instead of the seeded assignment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub sample_rate: u32,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn num_controls(&self) -> usize {
        self.entries.first().map_or(0, |e| e.controls.len())
    }

    /// Checks arity, control range and file existence. Relative paths are
    /// resolved against `base`.
    pub fn validate(&mut self, base: &Path) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::Data("manifest sample_rate must be positive".into()));
        }
        if self.entries.is_empty() {
            return Err(Error::Data("manifest has no entries".into()));
        }
        let arity = self.num_controls();
        for (i, e) in self.entries.iter_mut().enumerate() {
            if e.controls.len() != arity {
                return Err(Error::Data(format!("entry {i} has {} controls, entry 0 has {arity}", e.controls.len())));
            }
            if let Some(v) = e.controls.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Data(format!("entry {i} control {v} is outside [0, 1]")));
            }
            for p in [&mut e.input, &mut e.target] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
                if !p.is_file() {
                    return Err(Error::Data(format!("entry {i}: file not found: {}", p.display())));
                }
            }
        }
        Ok(())
    }
}

/// Reads and validates a manifest file.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    m.validate(path.parent().unwrap_or(Path::new(".")))?;
    Ok(m)
}

/// Input/target pair of one manifest entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub controls: Vec<f64>,
    pub split: Option<Split>,
}

/// Loads every entry's audio, checking sample rates and lengths.
pub fn load_recordings(m: &Manifest) -> Result<Vec<Recording>> {
    m.entries
        .iter()
        .map(|e| {
            let x = load_wav(&e.input)?;
            let y = load_wav(&e.target)?;
            for (a, p) in [(&x, &e.input), (&y, &e.target)] {
                if a.sample_rate != m.sample_rate {
                    return Err(Error::Data(format!(
                        "{} has sample rate {}, manifest says {}",
                        p.display(),
                        a.sample_rate,
                        m.sample_rate
                    )));
                }
            }
            if x.samples.len() != y.samples.len() {
                return Err(Error::Data(format!(
                    "{} and {} differ in length ({} vs {})",
                    e.input.display(),
                    e.target.display(),
                    x.samples.len(),
                    y.samples.len()
                )));
            }
            Ok(Recording { x: x.samples, y: y.samples, controls: e.controls.clone(), split: e.split })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub controls: Vec<f64>,
    pub entry: usize,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentConfig {
    pub seg_len: usize,
    /// Defaults to `seg_len`.
    pub hop: Option<usize>,
    /// Train, validation and test fractions of the entries.
    pub split: [f64; 3],
    pub seed: u64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self { seg_len: 48000, hop: None, split: [0.8, 0.1, 0.1], seed: 0 }
    }
}

impl SegmentConfig {
    pub fn hop(&self) -> usize {
        self.hop.unwrap_or(self.seg_len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seg_len == 0 || self.hop() == 0 {
            return Err(Error::InvalidParameter("seg_len and hop must be positive".into()));
        }
        if self.split.iter().any(|f| !(*f >= 0.0)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("split fractions must be nonnegative and sum to 1, got {:?}", self.split)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Splits {
    pub train: Vec<Segment>,
    pub val: Vec<Segment>,
    pub test: Vec<Segment>,
}

/// Cuts `x` and `y` into windows of `seg_len` every `hop` samples.
pub fn cut(rec: &Recording, entry: usize, seg_len: usize, hop: usize) -> Result<Vec<Segment>> {
    let n = rec.x.len();
    if n < seg_len {
        return Err(Error::Data(format!("entry {entry} has {n} samples, shorter than seg_len {seg_len}")));
    }
    Ok((0..=(n - seg_len) / hop)
        .map(|k| {
            let o = k * hop;
            Segment {
                x: rec.x[o..o + seg_len].to_vec(),
                y: rec.y[o..o + seg_len].to_vec(),
                controls: rec.controls.clone(),
                entry,
                offset: o,
            }
        })
        .collect())
}

/// Which split each entry belongs to. Pinned entries keep their split; the
/// rest are shuffled with `seed` and divided by the configured fractions.
pub fn assign_splits(recs: &[Recording], cfg: &SegmentConfig) -> Vec<Split> {
    let mut out: Vec<Option<Split>> = recs.iter().map(|r| r.split).collect();
    let mut free: Vec<usize> = (0..recs.len()).filter(|&i| out[i].is_none()).collect();
    free.shuffle(&mut Rng::seed_from_u64(cfg.seed));
    let n = free.len();
    let n_train = ((cfg.split[0] * n as f64).round() as usize).min(n);
    let n_val = ((cfg.split[1] * n as f64).round() as usize).min(n - n_train);
    for (k, &i) in free.iter().enumerate() {
        out[i] = Some(if k < n_train {
            Split::Train
        } else if k < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        });
    }
    out.into_iter().map(|s| s.expect("every entry assigned")).collect()
}

/// Segments every recording and groups segments by their entry's split.
pub fn segment(recs: &[Recording], cfg: &SegmentConfig) -> Result<Splits> {
    cfg.validate()?;
    let splits = assign_splits(recs, cfg);
    let mut out = Splits::default();
    for (i, rec) in recs.iter().enumerate() {
        let segs = cut(rec, i, cfg.seg_len, cfg.hop())?;
        match splits[i] {
            Split::Train => out.train.extend(segs),
            Split::Val => out.val.extend(segs),
            Split::Test => out.test.extend(segs),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("afx-data-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn pcm16_full_scale() {
        let p = tmp("full.wav");
        save_wav(&p, &[32767.0 / 32768.0, -1.0, 0.0], 48000, BitDepth::Pcm16).unwrap();
        let a = load_wav(&p).unwrap();
        assert!((a.samples[0] - 0.99997).abs() < 1e-5);
        assert_eq!(a.samples[1], -1.0);
        assert_eq!(a.sample_rate, 48000);
    }

    #[test]
    fn float_and_pcm24_round_trip() {
        let s: Vec<f64> = (0..100).map(|i| ((i as f64 * 0.37).sin() * 0.9) as f32 as f64).collect();
        let p = tmp("f.wav");
        save_wav(&p, &s, 44100, BitDepth::Float32).unwrap();
        assert_eq!(load_wav(&p).unwrap().samples, s);
        save_wav(&p, &s, 44100, BitDepth::Pcm24).unwrap();
        let back = load_wav(&p).unwrap();
        assert_eq!(back.bit_depth, BitDepth::Pcm24);
        for (a, b) in s.iter().zip(&back.samples) {
            assert!((a - b).abs() <= 0.5 / 8388608.0 + 1e-15);
        }
    }

    #[test]
    fn stereo_is_rejected() {
        let p = tmp("st.wav");
        save_wav(&p, &[0.0; 4], 48000, BitDepth::Pcm16).unwrap();
        let mut b = fs::read(&p).unwrap();
        b[22] = 2;
        fs::write(&p, b).unwrap();
        assert!(matches!(load_wav(&p), Err(Error::UnsupportedAudio { .. })));
    }

    fn rec(n: usize, split: Option<Split>) -> Recording {
        Recording { x: (0..n).map(|i| i as f64).collect(), y: (0..n).map(|i| -(i as f64)).collect(), controls: vec![], split }
    }

    #[test]
    fn segment_counts() {
        let r = rec(1000, None);
        assert_eq!(cut(&r, 0, 100, 100).unwrap().len(), 10);
        assert_eq!(cut(&r, 0, 100, 50).unwrap().len(), 19);
        assert!(cut(&r, 0, 1001, 10).is_err());
        let s = cut(&r, 0, 100, 50).unwrap();
        assert_eq!(s[3].x[0], -s[3].y[0]);
    }

    #[test]
    fn split_is_by_entry_and_seeded() {
        let recs: Vec<Recording> = (0..10).map(|_| rec(300, None)).collect();
        let cfg = SegmentConfig { seg_len: 100, ..SegmentConfig::default() };
        let a = segment(&recs, &cfg).unwrap();
        let b = segment(&recs, &cfg).unwrap();
        assert_eq!(a, b);
        let entries = |v: &[Segment]| v.iter().map(|s| s.entry).collect::<std::collections::BTreeSet<_>>();
        assert!(entries(&a.train).is_disjoint(&entries(&a.test)));
        assert!(entries(&a.train).is_disjoint(&entries(&a.val)));
        assert_eq!(entries(&a.train).len(), 8);
    }

    #[test]
    fn manifest_arity_mismatch() {
        let p = tmp("in.wav");
        save_wav(&p, &[0.0; 8], 48000, BitDepth::Pcm16).unwrap();
        let mut m = Manifest {
            sample_rate: 48000,
            entries: vec![
                ManifestEntry { input: p.clone(), target: p.clone(), controls: vec![0.5], split: None },
                ManifestEntry { input: p.clone(), target: p.clone(), controls: vec![], split: None },
            ],
        };
        assert!(m.validate(Path::new("/")).is_err());
        m.entries[1].controls = vec![0.2];
        assert!(m.validate(Path::new("/")).is_ok());
        m.entries[1].target = PathBuf::from("/nonexistent/file.wav");
        let err = m.validate(Path::new("/")).unwrap_err().to_string();
        assert!(err.contains("/nonexistent/file.wav"));
    }
}
