//! Utterances, descriptors, labels and speaker-disjoint splits.
//!
//! A [`Corpus`] is loaded from a JSON-lines manifest, one utterance per line.
//! Labels live in a separate JSON-lines file holding both absolute (ACR) and
//! pairwise (CCR) records; see [`labels`]. Splits and samplers in this module
//! are pure functions of their inputs and an explicit seed.

pub mod labels;
pub mod sampling;
pub mod split;

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use labels::{
    ccr_choice_to_target, load_labels, parse_labels, AcrLabel, CcrChoice, CcrLabel, LabelRecord, LabelSet,
};
pub use sampling::{sample_ccr_pair, sample_distinct_in_scope, sample_in_scope};
pub use split::{make_split, subsample_training, SplitPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gender {
    #[serde(rename = "M")]
    Male,
    #[serde(rename = "F")]
    Female,
}

impl Gender {
    pub fn code(self) -> &'static str {
        match self {
            Gender::Male => "M",
            Gender::Female => "F",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenderScope {
    Male,
    Female,
    Any,
}

impl GenderScope {
    pub fn admits(self, gender: Gender) -> bool {
        matches!(
            (self, gender),
            (GenderScope::Any, _) | (GenderScope::Male, Gender::Male) | (GenderScope::Female, Gender::Female)
        )
    }
}

/// A subjective voice descriptor, e.g. "youthful-sounding voice" restricted
/// to female speakers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Svd {
    pub id: String,
    pub description: String,
    pub gender_scope: GenderScope,
}

impl Svd {
    pub fn new(id: impl Into<String>, description: impl Into<String>, gender_scope: GenderScope) -> Self {
        Svd {
            id: id.into(),
            description: description.into(),
            gender_scope,
        }
    }

    /// The three descriptors used in the original listening study.
    pub fn builtin(id: &str) -> Option<Svd> {
        match id {
            "youthfulF" => Some(Svd::new(id, "youthful-sounding voice", GenderScope::Female)),
            "youthfulM" => Some(Svd::new(id, "youthful-sounding voice", GenderScope::Male)),
            "resonantM" => Some(Svd::new(id, "resonant voice", GenderScope::Male)),
            _ => None,
        }
    }

    /// Builtin descriptor if the id is known, otherwise one open to both genders.
    pub fn resolve(id: &str) -> Svd {
        Svd::builtin(id).unwrap_or_else(|| Svd::new(id, id, GenderScope::Any))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    Audio(PathBuf),
    Feature(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub speaker_id: String,
    pub gender: Gender,
    pub sentence_id: String,
    pub duration_s: f64,
    pub source: Source,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestRecord {
    id: String,
    speaker_id: String,
    gender: Gender,
    sentence_id: String,
    duration_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    audio_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature_path: Option<String>,
}

impl ManifestRecord {
    fn into_utterance(self) -> std::result::Result<Utterance, String> {
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(format!("utterance {:?}: duration_s must be positive", self.id));
        }
        if self.id.is_empty() {
            return Err("empty utterance id".into());
        }
        let source = match (self.audio_path, self.feature_path) {
            (Some(a), None) => Source::Audio(a.into()),
            (None, Some(f)) => Source::Feature(f.into()),
            _ => {
                return Err(format!(
                    "utterance {:?}: exactly one of audio_path / feature_path is required",
                    self.id
                ))
            }
        };
        Ok(Utterance {
            id: self.id,
            speaker_id: self.speaker_id,
            gender: self.gender,
            sentence_id: self.sentence_id,
            duration_s: self.duration_s,
            source,
        })
    }

    fn from_utterance(u: &Utterance) -> Self {
        let (audio_path, feature_path) = match &u.source {
            Source::Audio(p) => (Some(p.to_string_lossy().into_owned()), None),
            Source::Feature(p) => (None, Some(p.to_string_lossy().into_owned())),
        };
        ManifestRecord {
            id: u.id.clone(),
            speaker_id: u.speaker_id.clone(),
            gender: u.gender,
            sentence_id: u.sentence_id.clone(),
            duration_s: u.duration_s,
            audio_path,
            feature_path,
        }
    }
}

/// An immutable, indexed collection of utterances.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    utterances: Vec<Utterance>,
    by_id: HashMap<String, usize>,
    by_speaker: BTreeMap<String, Vec<usize>>,
    groups: BTreeMap<(String, Gender), Vec<usize>>,
}

impl Corpus {
    pub fn from_utterances(utterances: Vec<Utterance>) -> Result<Self> {
        let mut corpus = Corpus::default();
        for (idx, u) in utterances.iter().enumerate() {
            if corpus.by_id.insert(u.id.clone(), idx).is_some() {
                return Err(Error::Validation(format!("duplicate utterance id {:?}", u.id)));
            }
            corpus.by_speaker.entry(u.speaker_id.clone()).or_default().push(idx);
            corpus
                .groups
                .entry((u.sentence_id.clone(), u.gender))
                .or_default()
                .push(idx);
        }
        corpus.utterances = utterances;
        Ok(corpus)
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn get(&self, id: &str) -> Option<&Utterance> {
        self.by_id.get(id).map(|&i| &self.utterances[i])
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn speaker_of(&self, id: &str) -> Option<&str> {
        self.get(id).map(|u| u.speaker_id.as_str())
    }

    /// Speaker ids in sorted order with their utterance indices.
    pub fn speakers(&self) -> impl Iterator<Item = (&str, &[usize])> {
        self.by_speaker.iter().map(|(s, v)| (s.as_str(), v.as_slice()))
    }

    /// Utterance groups sharing a (sentence, gender) key, in sorted key order.
    pub fn groups(&self) -> impl Iterator<Item = (&str, Gender, &[usize])> {
        self.groups.iter().map(|((s, g), v)| (s.as_str(), *g, v.as_slice()))
    }

    pub fn write_manifest<W: Write>(&self, mut w: W) -> Result<()> {
        for u in &self.utterances {
            let line = serde_json::to_string(&ManifestRecord::from_utterance(u))?;
            writeln!(w, "{line}").map_err(|e| Error::io("<manifest>", e))?;
        }
        Ok(())
    }
}

/// Parse a manifest from any reader; `context` names the source in errors.
pub fn parse_manifest<R: Read>(reader: R, context: &str) -> Result<Corpus> {
    let mut utterances = Vec::new();
    for (n, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| Error::parse(context, line_no, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let record: ManifestRecord = serde_json::from_str(trimmed).map_err(|e| Error::parse(context, line_no, e))?;
        let utt = record.into_utterance().map_err(|m| Error::parse(context, line_no, m))?;
        utterances.push(utt);
    }
    Corpus::from_utterances(utterances)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(file, &path.display().to_string())
}


#[cfg(test)]
mod tests {
    use super::*;

    const THREE: &str = r#"{"id":"u1","speaker_id":"s1","gender":"F","sentence_id":"a","duration_s":4.2,"audio_path":"u1.wav"}
{"id":"u2","speaker_id":"s2","gender":"F","sentence_id":"a","duration_s":5.0,"feature_path":"u2.svdf"}
{"id":"u3","speaker_id":"s3","gender":"M","sentence_id":"b","duration_s":3.1,"audio_path":"u3.wav"}
"#;

    #[test]
    fn loads_three_rows() {
        let c = parse_manifest(THREE.as_bytes(), "m").unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.get("u2").unwrap().source, Source::Feature("u2.svdf".into()));
        assert_eq!(c.speaker_of("u3"), Some("s3"));
    }

    #[test]
    fn duplicate_id_is_named() {
        let text = format!("{THREE}{}\n", THREE.lines().next().unwrap());
        let err = parse_manifest(text.as_bytes(), "m").unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("\"u1\""));
    }

    #[test]
    fn empty_manifest_is_valid() {
        let c = parse_manifest("".as_bytes(), "m").unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = format!("{}\n{{not json\n", THREE.lines().next().unwrap());
        match parse_manifest(text.as_bytes(), "m").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn rejects_both_or_neither_source() {
        let both = r#"{"id":"u","speaker_id":"s","gender":"M","sentence_id":"a","duration_s":1,"audio_path":"a","feature_path":"b"}"#;
        let neither = r#"{"id":"u","speaker_id":"s","gender":"M","sentence_id":"a","duration_s":1}"#;
        assert!(parse_manifest(both.as_bytes(), "m").is_err());
        assert!(parse_manifest(neither.as_bytes(), "m").is_err());
    }

    #[test]
    fn rejects_nonpositive_duration() {
        let zero = r#"{"id":"u","speaker_id":"s","gender":"M","sentence_id":"a","duration_s":0,"audio_path":"a"}"#;
        assert!(parse_manifest(zero.as_bytes(), "m").is_err());
    }

    #[test]
    fn manifest_write_read_roundtrip() {
        let c = parse_manifest(THREE.as_bytes(), "m").unwrap();
        let mut buf = Vec::new();
        c.write_manifest(&mut buf).unwrap();
        let back = parse_manifest(buf.as_slice(), "m").unwrap();
        assert_eq!(back.utterances(), c.utterances());
    }

    #[test]
    fn gender_scope() {
        assert!(GenderScope::Any.admits(Gender::Male));
        assert!(GenderScope::Female.admits(Gender::Female));
        assert!(!GenderScope::Female.admits(Gender::Male));
        assert_eq!(Svd::resolve("resonantM").gender_scope, GenderScope::Male);
        assert_eq!(Svd::resolve("cute").gender_scope, GenderScope::Any);
    }
}
