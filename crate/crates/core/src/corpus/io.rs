use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use super::{articulatory_oracle, plan_corpus, synth_utterance, CorpusConfig, CorpusModel, Segment};
use crate::dsp::{read_fmtx, wav, write_fmtx, FeatureKind, FeatureMatrix, Waveform};
use crate::error::{Error, Result};
use crate::fap_predictor::{EmotionLabel, FapSequence};
use crate::phoneme_space::{PhonemeSpace, PhonemeUnit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::format("manifest", format!("unknown split tag {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentSegment {
    pub start_frame: usize,
    pub end_frame: usize,
    pub unit: PhonemeUnit,
}

/// Frame-exact phoneme spans, `[start, end)`, contiguous from frame 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    pub segments: Vec<AlignmentSegment>,
}

impl Alignment {
    pub fn from_durations(phones: &[Segment]) -> Self {
        let mut start = 0;
        let segments = phones
            .iter()
            .map(|(unit, d)| {
                let seg = AlignmentSegment {
                    start_frame: start,
                    end_frame: start + d,
                    unit: unit.clone(),
                };
                start += d;
                seg
            })
            .collect();
        Self { segments }
    }

    pub fn durations(&self) -> Vec<Segment> {
        self.segments
            .iter()
            .map(|s| (s.unit.clone(), s.end_frame - s.start_frame))
            .collect()
    }

    pub fn frames(&self) -> usize {
        self.segments.last().map_or(0, |s| s.end_frame)
    }

    /// Per-frame unit indices in `space`.
    pub fn frame_labels(&self, space: &PhonemeSpace) -> Result<Vec<usize>> {
        let mut labels = Vec::with_capacity(self.frames());
        for s in &self.segments {
            let idx = space.index_of(&s.unit.language_id, &s.unit.symbol)?;
            labels.extend(std::iter::repeat(idx).take(s.end_frame - s.start_frame));
        }
        Ok(labels)
    }

    /// Per-frame unit, in frame order.
    pub fn frame_units(&self) -> Vec<&PhonemeUnit> {
        self.segments
            .iter()
            .flat_map(|s| std::iter::repeat(&s.unit).take(s.end_frame - s.start_frame))
            .collect()
    }

    /// Frames at least `margin` frames away from any phoneme change.
    pub fn interior_mask(&self, margin: usize) -> Vec<bool> {
        let mut mask = Vec::with_capacity(self.frames());
        for s in &self.segments {
            for t in s.start_frame..s.end_frame {
                let first = s.start_frame == 0;
                let last = s.end_frame == self.frames();
                let left_ok = first || t >= s.start_frame + margin;
                let right_ok = last || t + margin < s.end_frame;
                mask.push(left_ok && right_ok);
            }
        }
        mask
    }

    pub fn to_text(&self) -> String {
        self.segments
            .iter()
            .map(|s| {
                format!(
                    "{}\t{}\t{}\t{}\n",
                    s.start_frame, s.end_frame, s.unit.language_id, s.unit.symbol
                )
            })
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let err = |line: usize, m: &str| Error::format("alignment", format!("line {line}: {m}"));
        let mut segments: Vec<AlignmentSegment> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(err(i + 1, "expected 4 tab-separated fields"));
            }
            let start: usize = f[0].parse().map_err(|_| err(i + 1, "bad start frame"))?;
            let end: usize = f[1].parse().map_err(|_| err(i + 1, "bad end frame"))?;
            let expected = segments.last().map_or(0, |s| s.end_frame);
            if start != expected || end <= start {
                return Err(err(i + 1, "segments must be contiguous and non-empty"));
            }
            segments.push(AlignmentSegment {
                start_frame: start,
                end_frame: end,
                unit: PhonemeUnit::new(f[2], f[3]),
            });
        }
        Ok(Self { segments })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub utterance_id: String,
    pub audio: PathBuf,
    pub alignment: PathBuf,
    pub fap: PathBuf,
    pub speaker_id: String,
    pub language_id: String,
    pub emotion: EmotionLabel,
    pub split: Split,
}

/// Records plus the directory their relative paths resolve against.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

const MANIFEST_HEADER: &str =
    "#utterance_id\taudio\talignment\tfap\tspeaker_id\tlanguage_id\temotion\tsplit";

impl CorpusManifest {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn load_wave(&self, r: &ManifestRecord) -> Result<Waveform> {
        wav::read_wav(&self.resolve(&r.audio))
    }

    pub fn load_alignment(&self, r: &ManifestRecord) -> Result<Alignment> {
        Alignment::load(&self.resolve(&r.alignment))
    }

    pub fn load_fap(&self, r: &ManifestRecord) -> Result<FapSequence> {
        let (m, _) = read_fmtx(&self.resolve(&r.fap))?;
        FapSequence::new(m.into_data())
    }

    /// The phoneme space written next to the manifest.
    pub fn load_space(&self) -> Result<PhonemeSpace> {
        PhonemeSpace::load(&self.root.join("phonemes.txt"))
    }

    pub fn get(&self, utterance_id: &str) -> Option<&ManifestRecord> {
        self.records.iter().find(|r| r.utterance_id == utterance_id)
    }

    /// Speaker roles from `speakers.tsv` next to the manifest, in file order.
    pub fn load_speaker_roles(&self) -> Result<Vec<(String, SpeakerRole)>> {
        let path = self.root.join("speakers.tsv");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        text.lines()
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| {
                let f: Vec<&str> = l.split('\t').collect();
                if f.len() != 5 {
                    return Err(Error::format("speakers", format!("bad line {l:?}")));
                }
                Ok((f[0].to_string(), f[4].parse()?))
            })
            .collect()
    }
}

/// What a speaker's utterances are used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpeakerRole {
    /// The single speaker with face recordings.
    Face,
    /// Audio-only speaker used to train the posteriorgram extractor.
    Train,
    /// Never seen in training.
    Heldout,
}

impl fmt::Display for SpeakerRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpeakerRole::Face => "face",
            SpeakerRole::Train => "train",
            SpeakerRole::Heldout => "heldout",
        })
    }
}

impl FromStr for SpeakerRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "face" => Ok(SpeakerRole::Face),
            "train" => Ok(SpeakerRole::Train),
            "heldout" => Ok(SpeakerRole::Heldout),
            _ => Err(Error::format("speakers", format!("unknown role {s:?}"))),
        }
    }
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut text = String::from(MANIFEST_HEADER);
    text.push('\n');
    for r in records {
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.utterance_id,
            r.audio.display(),
            r.alignment.display(),
            r.fap.display(),
            r.speaker_id,
            r.language_id,
            r.emotion,
            r.split
        ));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<CorpusManifest> {
    if !path.exists() {
        return Err(Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "manifest not found"),
        });
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 8 {
            return Err(Error::format(
                "manifest",
                format!("line {}: expected 8 tab-separated fields", i + 1),
            ));
        }
        records.push(ManifestRecord {
            utterance_id: f[0].to_string(),
            audio: f[1].into(),
            alignment: f[2].into(),
            fap: f[3].into(),
            speaker_id: f[4].to_string(),
            language_id: f[5].to_string(),
            emotion: f[6].parse()?,
            split: f[7].parse()?,
        });
    }
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(CorpusManifest { root, records })
}

/// Writes every utterance (WAV, alignment, face track), the phoneme space
/// and the manifest under `out_dir`. Content depends only on `cfg`.
pub fn gen_corpus(cfg: &CorpusConfig, out_dir: &Path) -> Result<CorpusManifest> {
    let model = CorpusModel::new(cfg)?;
    for sub in ["wav", "align", "fap"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    model.space.save(&out_dir.join("phonemes.txt"))?;
    let mut speakers = String::from("#speaker_id\tformant_shift\ttilt_db_per_oct\tgain\tsplit\n");
    for (i, s) in model.speakers.iter().enumerate() {
        speakers.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            s.id,
            s.formant_shift,
            s.spectral_tilt_db_per_oct,
            s.gain,
            if s.heldout {
                SpeakerRole::Heldout
            } else if i == model.face_speaker {
                SpeakerRole::Face
            } else {
                SpeakerRole::Train
            }
        ));
    }
    let sp = out_dir.join("speakers.tsv");
    fs::write(&sp, speakers).map_err(|e| Error::io(&sp, e))?;

    let plans = plan_corpus(&model);
    let records = plans
        .par_iter()
        .map(|plan| -> Result<ManifestRecord> {
            let speaker = &model.speakers[plan.speaker];
            let wave = synth_utterance(&model, &plan.segments, speaker, plan.seed(cfg.master_seed))?;
            let rec = ManifestRecord {
                utterance_id: plan.id.clone(),
                audio: PathBuf::from(format!("wav/{}.wav", plan.id)),
                alignment: PathBuf::from(format!("align/{}.align", plan.id)),
                fap: PathBuf::from(format!("fap/{}.fap.fmtx", plan.id)),
                speaker_id: speaker.id.clone(),
                language_id: plan.language.clone(),
                emotion: plan.emotion,
                split: plan.split,
            };
            wav::write_wav(&out_dir.join(&rec.audio), &wave)?;
            Alignment::from_durations(&plan.segments).save(&out_dir.join(&rec.alignment))?;
            let fap = articulatory_oracle(&model, &plan.segments, plan.emotion)?;
            let m = FeatureMatrix::new(fap.into_data(), 10.0, FeatureKind::Fap)?;
            write_fmtx(&out_dir.join(&rec.fap), &m, &[])?;
            Ok(rec)
        })
        .collect::<Result<Vec<_>>>()?;
    write_manifest(&out_dir.join("manifest.tsv"), &records)?;
    read_manifest(&out_dir.join("manifest.tsv"))
}
