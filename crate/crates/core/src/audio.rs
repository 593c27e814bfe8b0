//! Waveform ingestion and normalization.
//!
//! Clips are read from RIFF/WAV (16-bit PCM or 32-bit float), averaged to
//! mono, resampled to the working rate with a polyphase Kaiser-windowed sinc
//! filter and brought to a fixed sample count by truncation or circular
//! padding.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{RaclError, Result};

/// Four-way provenance of an utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleLabel {
    #[serde(rename = "bonafide")]
    BonaFide,
    Spoof,
    #[serde(rename = "rec_bonafide")]
    RecBonaFide,
    RecSpoof,
}

impl SampleLabel {
    pub const ALL: [SampleLabel; 4] = [
        SampleLabel::BonaFide,
        SampleLabel::Spoof,
        SampleLabel::RecBonaFide,
        SampleLabel::RecSpoof,
    ];

    /// Classification target: 0 for bona fide, 1 for every other provenance.
    pub fn binary(self) -> u8 {
        match self {
            SampleLabel::BonaFide => 0,
            _ => 1,
        }
    }

    pub fn is_bona_fide(self) -> bool {
        self == SampleLabel::BonaFide
    }

    pub fn is_reconstructed(self) -> bool {
        matches!(self, SampleLabel::RecBonaFide | SampleLabel::RecSpoof)
    }

    /// Label carried by the reconstruction of a clip with this label.
    pub fn reconstructed(self) -> SampleLabel {
        match self {
            SampleLabel::BonaFide | SampleLabel::RecBonaFide => SampleLabel::RecBonaFide,
            SampleLabel::Spoof | SampleLabel::RecSpoof => SampleLabel::RecSpoof,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SampleLabel::BonaFide => "bonafide",
            SampleLabel::Spoof => "spoof",
            SampleLabel::RecBonaFide => "rec_bonafide",
            SampleLabel::RecSpoof => "rec_spoof",
        }
    }
}

impl fmt::Display for SampleLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SampleLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "bonafide" | "bona-fide" | "bona_fide" => Ok(SampleLabel::BonaFide),
            "spoof" => Ok(SampleLabel::Spoof),
            "rec_bonafide" => Ok(SampleLabel::RecBonaFide),
            "rec_spoof" => Ok(SampleLabel::RecSpoof),
            other => Err(format!("unknown provenance '{other}'")),
        }
    }
}

/// Mono waveform with its rate and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub label: SampleLabel,
    pub source_id: String,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32, label: SampleLabel, source_id: impl Into<String>) -> Self {
        Self {
            samples,
            sample_rate,
            label,
            source_id: source_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Copy of this clip's metadata with new samples.
    pub fn with_samples(&self, samples: Vec<f64>) -> AudioClip {
        AudioClip {
            samples,
            sample_rate: self.sample_rate,
            label: self.label,
            source_id: self.source_id.clone(),
        }
    }

    pub fn power(&self) -> f64 {
        mean_square(&self.samples)
    }

    pub fn rms(&self) -> f64 {
        self.power().sqrt()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }
}

pub fn mean_square(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|s| s * s).sum::<f64>() / x.len() as f64
}

/// Reads a WAV file, averaging channels to mono.
pub fn read_wav(path: &Path, label: SampleLabel, source_id: &str) -> Result<AudioClip> {
    if !path.exists() {
        return Err(RaclError::MissingFile {
            path: path.to_path_buf(),
        });
    }
    let malformed = |reason: String| RaclError::MalformedHeader {
        path: path.to_path_buf(),
        reason,
    };
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io)
            if matches!(
                io.kind(),
                std::io::ErrorKind::UnexpectedEof | std::io::ErrorKind::Other | std::io::ErrorKind::InvalidData
            ) =>
        {
            malformed(format!("truncated header: {io}"))
        }
        hound::Error::IoError(io) => RaclError::io(path, io),
        other => malformed(other.to_string()),
    })?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(malformed("zero channels".into()));
    }
    if spec.sample_rate == 0 {
        return Err(malformed("zero sample rate".into()));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| malformed(format!("data chunk: {e}")))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| malformed(format!("data chunk: {e}")))?,
        (fmt, bits) => {
            return Err(RaclError::UnsupportedEncoding {
                path: path.to_path_buf(),
                kind: match fmt {
                    hound::SampleFormat::Int => "integer PCM",
                    hound::SampleFormat::Float => "float",
                },
                bits,
            })
        }
    };
    let samples = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    Ok(AudioClip::new(samples, spec.sample_rate, label, source_id))
}

/// Quantizes to 16-bit PCM, rounding half away from zero.
pub fn quantize_i16(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Writes a mono 16-bit PCM WAV.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_io = |e: hound::Error| match e {
        hound::Error::IoError(io) => RaclError::io(path, io),
        other => RaclError::io(path, std::io::Error::other(other.to_string())),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_io)?;
    for &s in &clip.samples {
        writer.write_sample(quantize_i16(s)).map_err(to_io)?;
    }
    writer.finalize().map_err(to_io)
}

const KAISER_BETA: f64 = 8.0;
const SINC_HALF_WIDTH: f64 = 32.0;

/// Zeroth-order modified Bessel function of the first kind.
pub(crate) fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Band-limited rational resampling.
///
/// Output sample `n` sits at input time `n * down / up`; each of the `up`
/// phases owns a precomputed Kaiser-windowed sinc kernel spanning 32 zero
/// crossings of the narrower band on either side.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(RaclError::Config("target sample rate must be positive".into()));
    }
    if clip.sample_rate == target_rate {
        return Ok(clip.clone());
    }
    let g = gcd(clip.sample_rate as u64, target_rate as u64);
    let up = target_rate as u64 / g;
    let down = clip.sample_rate as u64 / g;
    let cutoff = (up as f64 / down as f64).min(1.0);
    let reach = SINC_HALF_WIDTH / cutoff;
    let half_taps = reach.ceil() as i64;
    let i0_beta = bessel_i0(KAISER_BETA);

    let phases: Vec<Vec<f64>> = (0..up)
        .map(|phase| {
            let frac = phase as f64 / up as f64;
            (-half_taps + 1..=half_taps)
                .map(|j| {
                    let x = frac - j as f64;
                    let r = x / reach;
                    if r.abs() >= 1.0 {
                        0.0
                    } else {
                        let w = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta;
                        cutoff * sinc(cutoff * x) * w
                    }
                })
                .collect()
        })
        .collect();

    let n_in = clip.samples.len() as u64;
    let n_out = (n_in * up).div_ceil(down) as usize;
    let x = &clip.samples;
    let out = (0..n_out as u64)
        .map(|n| {
            let pos = n * down;
            let base = (pos / up) as i64;
            let taps = &phases[(pos % up) as usize];
            let mut acc = 0.0;
            for (t, j) in taps.iter().zip(-half_taps + 1..=half_taps) {
                let k = base + j;
                if k >= 0 && (k as u64) < n_in {
                    acc += t * x[k as usize];
                }
            }
            acc
        })
        .collect();
    Ok(AudioClip {
        samples: out,
        sample_rate: target_rate,
        label: clip.label,
        source_id: clip.source_id.clone(),
    })
}

/// Truncates to the leading `target_len` samples or repeats the clip
/// cyclically up to `target_len`.
pub fn fix_length(clip: &AudioClip, target_len: usize) -> Result<AudioClip> {
    if clip.samples.is_empty() {
        return Err(RaclError::EmptyInput);
    }
    if target_len == 0 {
        return Err(RaclError::Config("target length must be positive".into()));
    }
    let samples = clip.samples.iter().copied().cycle().take(target_len).collect();
    Ok(clip.with_samples(samples))
}

/// Resample and length-normalize in one step.
pub fn prepare(clip: &AudioClip, sample_rate: u32, target_len: usize) -> Result<AudioClip> {
    fix_length(&resample(clip, sample_rate)?, target_len)
}

/// One row of a dataset manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// Path exactly as written in the manifest.
    pub path: String,
    pub label: SampleLabel,
    /// Columns after the provenance column (e.g. a subset tag).
    pub extra: Vec<String>,
}

impl ManifestEntry {
    pub fn new(path: impl Into<String>, label: SampleLabel) -> Self {
        Self {
            path: path.into(),
            label,
            extra: Vec::new(),
        }
    }

    /// Value of manifest column `col` (0 = path, 1 = provenance).
    pub fn column(&self, col: usize) -> Option<String> {
        match col {
            0 => Some(self.path.clone()),
            1 => Some(self.label.to_string()),
            n => self.extra.get(n - 2).cloned(),
        }
    }
}

/// UTF-8 TSV manifest: `path<TAB>provenance[<TAB>extra...]`, with optional
/// `# key=value` header lines. Relative paths resolve against the manifest's
/// directory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub meta: BTreeMap<String, String>,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            ..Default::default()
        }
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        if !path.exists() {
            return Err(RaclError::MissingFile {
                path: path.to_path_buf(),
            });
        }
        let text = fs::read_to_string(path).map_err(|e| RaclError::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, root, path)
    }

    pub fn parse(text: &str, root: PathBuf, origin: &Path) -> Result<Manifest> {
        let mut manifest = Manifest::new(root);
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some((k, v)) = comment.trim().split_once('=') {
                    manifest.meta.insert(k.trim().to_string(), v.trim().to_string());
                }
                continue;
            }
            let mut cols = line.split('\t');
            let (Some(p), Some(prov)) = (cols.next(), cols.next()) else {
                return Err(RaclError::Manifest {
                    path: origin.to_path_buf(),
                    line: i + 1,
                    reason: "expected at least two tab-separated columns".into(),
                });
            };
            let label = prov.parse().map_err(|reason| RaclError::Manifest {
                path: origin.to_path_buf(),
                line: i + 1,
                reason,
            })?;
            manifest.entries.push(ManifestEntry {
                path: p.to_string(),
                label,
                extra: cols.map(str::to_string).collect(),
            });
        }
        Ok(manifest)
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        let p = Path::new(&entry.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn read_clip(&self, entry: &ManifestEntry) -> Result<AudioClip> {
        read_wav(&self.resolve(entry), entry.label, &entry.path)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            out.push_str(&format!("# {k}={v}\n"));
        }
        for e in &self.entries {
            out.push_str(&e.path);
            out.push('\t');
            out.push_str(e.label.as_str());
            for x in &e.extra {
                out.push('\t');
                out.push_str(x);
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| RaclError::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(self.to_tsv().as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| RaclError::io(path, e))
    }

    pub fn count(&self, label: SampleLabel) -> usize {
        self.entries.iter().filter(|e| e.label == label).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(samples: Vec<f64>) -> AudioClip {
        AudioClip::new(samples, 16000, SampleLabel::BonaFide, "t")
    }

    fn write_raw_wav(path: &Path, channels: u16, bits: u16, fmt: u16, data: &[u8]) {
        let block = channels * bits / 8;
        let mut b = Vec::new();
        b.extend_from_slice(b"RIFF");
        b.extend_from_slice(&(36 + data.len() as u32).to_le_bytes());
        b.extend_from_slice(b"WAVEfmt ");
        b.extend_from_slice(&16u32.to_le_bytes());
        b.extend_from_slice(&fmt.to_le_bytes());
        b.extend_from_slice(&channels.to_le_bytes());
        b.extend_from_slice(&16000u32.to_le_bytes());
        b.extend_from_slice(&(16000 * block as u32).to_le_bytes());
        b.extend_from_slice(&block.to_le_bytes());
        b.extend_from_slice(&bits.to_le_bytes());
        b.extend_from_slice(b"data");
        b.extend_from_slice(&(data.len() as u32).to_le_bytes());
        b.extend_from_slice(data);
        fs::write(path, b).unwrap();
    }

    #[test]
    fn binary_label_is_zero_only_for_bona_fide() {
        for l in SampleLabel::ALL {
            assert_eq!(l.binary() == 0, l == SampleLabel::BonaFide);
            assert_ne!(l.reconstructed(), SampleLabel::BonaFide);
            assert_eq!(l.as_str().parse::<SampleLabel>().unwrap(), l);
        }
    }

    #[test]
    fn reads_16_bit_pcm_scaled() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let data: Vec<u8> = [0i16, 32767, -32768].iter().flat_map(|v| v.to_le_bytes()).collect();
        write_raw_wav(&p, 1, 16, 1, &data);
        let c = read_wav(&p, SampleLabel::Spoof, "a").unwrap();
        assert_eq!(c.samples, vec![0.0, 32767.0 / 32768.0, -1.0]);
        assert_eq!(c.sample_rate, 16000);
    }

    #[test]
    fn stereo_is_averaged() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let data: Vec<u8> = [1.0f32, 0.0].iter().flat_map(|v| v.to_le_bytes()).collect();
        write_raw_wav(&p, 2, 32, 3, &data);
        let c = read_wav(&p, SampleLabel::Spoof, "s").unwrap();
        assert_eq!(c.samples, vec![0.5]);
    }

    #[test]
    fn wav_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.wav");
        assert!(matches!(
            read_wav(&missing, SampleLabel::BonaFide, "x"),
            Err(RaclError::MissingFile { .. })
        ));

        let truncated = dir.path().join("t.wav");
        fs::write(&truncated, b"RIFF\x24\x00\x00\x00WAVEfm").unwrap();
        let err = read_wav(&truncated, SampleLabel::BonaFide, "x").unwrap_err();
        assert!(matches!(err, RaclError::MalformedHeader { .. }), "{err}");
        assert!(err.to_string().contains("t.wav"));

        let eight_bit = dir.path().join("u8.wav");
        write_raw_wav(&eight_bit, 1, 8, 1, &[128, 129]);
        assert!(matches!(
            read_wav(&eight_bit, SampleLabel::BonaFide, "x"),
            Err(RaclError::UnsupportedEncoding { bits: 8, .. })
        ));
    }

    #[test]
    fn pcm_grid_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.wav");
        let samples: Vec<f64> = (-32768i32..32768).step_by(97).map(|k| k as f64 / 32768.0).collect();
        write_wav(&p, &clip(samples.clone())).unwrap();
        assert_eq!(read_wav(&p, SampleLabel::BonaFide, "r").unwrap().samples, samples);
    }

    #[test]
    fn quantization_rounds_half_away_from_zero() {
        assert_eq!(quantize_i16(0.5 / 32768.0), 1);
        assert_eq!(quantize_i16(-0.5 / 32768.0), -1);
        assert_eq!(quantize_i16(2.0), 32767);
        assert_eq!(quantize_i16(-2.0), -32768);
    }

    #[test]
    fn fix_length_pads_circularly_and_truncates() {
        let c = clip(vec![1.0, 2.0, 3.0]);
        assert_eq!(fix_length(&c, 7).unwrap().samples, vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0]);
        let c = clip(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(fix_length(&c, 3).unwrap().samples, vec![1.0, 2.0, 3.0]);
        assert_eq!(fix_length(&c, 64600).unwrap().len(), 64600);
        assert!(matches!(fix_length(&clip(vec![]), 3), Err(RaclError::EmptyInput)));
    }

    #[test]
    fn resample_identity_and_lengths() {
        let c = clip((0..100).map(|i| (i as f64 * 0.1).sin()).collect());
        assert_eq!(resample(&c, 16000).unwrap(), c);
        let c48 = AudioClip::new(vec![0.0; 48000], 48000, SampleLabel::BonaFide, "x");
        let out = resample(&c48, 16000).unwrap();
        assert!((out.len() as i64 - 16000).abs() <= 1);
        assert_eq!(out.sample_rate, 16000);
        assert!(resample(&c48, 0).is_err());
    }

    #[test]
    fn bessel_matches_reference() {
        // I0(8) from tables
        assert!((bessel_i0(8.0) - 427.564_115_721_804_7).abs() < 1e-9);
        assert_eq!(bessel_i0(0.0), 1.0);
    }

    #[test]
    fn manifest_parses_meta_and_extra_columns() {
        let text = "# config_hash=abc\na.wav\tbonafide\tC1\nb.wav\trec_spoof\n";
        let m = Manifest::parse(text, PathBuf::from("/data"), Path::new("m.tsv")).unwrap();
        assert_eq!(m.meta["config_hash"], "abc");
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.entries[0].column(2).as_deref(), Some("C1"));
        assert_eq!(m.resolve(&m.entries[1]), PathBuf::from("/data/b.wav"));
        assert_eq!(Manifest::parse(&m.to_tsv(), m.root.clone(), Path::new("m")).unwrap(), m);

        let bad = Manifest::parse("a.wav\tmaybe\n", PathBuf::new(), Path::new("m.tsv"));
        assert!(matches!(bad, Err(RaclError::Manifest { line: 1, .. })));
    }
}
