//! ACR and CCR label records.
//!
//! Label files are JSON lines. ACR records carry `{svd, annotator, utt, rating}`;
//! CCR records carry `{svd, annotator, utt_i, utt_j, choice}`. Records keep their
//! file order so that a [`super::SplitPlan`] can refer to them by index.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Corpus;
use crate::error::{Error, Result};

/// Forced four-way comparison outcome for an ordered pair (i, j).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CcrChoice {
    #[serde(rename = "i_more")]
    IMore,
    #[serde(rename = "i_little")]
    ILittleMore,
    #[serde(rename = "j_little")]
    JLittleMore,
    #[serde(rename = "j_more")]
    JMore,
}

impl CcrChoice {
    pub const ALL: [CcrChoice; 4] = [
        CcrChoice::IMore,
        CcrChoice::ILittleMore,
        CcrChoice::JLittleMore,
        CcrChoice::JMore,
    ];

    /// Target probability that j is perceived as exhibiting the descriptor more than i.
    pub fn target(self) -> f64 {
        match self {
            CcrChoice::IMore => 0.0,
            CcrChoice::ILittleMore => 0.25,
            CcrChoice::JLittleMore => 0.75,
            CcrChoice::JMore => 1.0,
        }
    }

    /// The same judgement expressed for the swapped pair (j, i).
    pub fn mirror(self) -> CcrChoice {
        match self {
            CcrChoice::IMore => CcrChoice::JMore,
            CcrChoice::ILittleMore => CcrChoice::JLittleMore,
            CcrChoice::JLittleMore => CcrChoice::ILittleMore,
            CcrChoice::JMore => CcrChoice::IMore,
        }
    }

    pub fn is_strong(self) -> bool {
        matches!(self, CcrChoice::IMore | CcrChoice::JMore)
    }

    /// True when the label says j is (more or a little more) so.
    pub fn prefers_j(self) -> bool {
        matches!(self, CcrChoice::JLittleMore | CcrChoice::JMore)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CcrChoice::IMore => "i_more",
            CcrChoice::ILittleMore => "i_little",
            CcrChoice::JLittleMore => "j_little",
            CcrChoice::JMore => "j_more",
        }
    }

    pub fn parse(s: &str) -> Option<CcrChoice> {
        CcrChoice::ALL.into_iter().find(|c| c.as_str() == s)
    }

    /// Index into a (a1, a2, a3, a4) response tally.
    pub fn tally_slot(self) -> usize {
        match self {
            CcrChoice::IMore => 0,
            CcrChoice::ILittleMore => 1,
            CcrChoice::JLittleMore => 2,
            CcrChoice::JMore => 3,
        }
    }
}

pub fn ccr_choice_to_target(choice: CcrChoice) -> f64 {
    choice.target()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcrLabel {
    #[serde(rename = "svd")]
    pub svd_id: String,
    #[serde(rename = "annotator")]
    pub annotator_id: String,
    #[serde(rename = "utt")]
    pub utterance_id: String,
    pub rating: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CcrLabel {
    #[serde(rename = "svd")]
    pub svd_id: String,
    #[serde(rename = "annotator")]
    pub annotator_id: String,
    pub utt_i: String,
    pub utt_j: String,
    pub choice: CcrChoice,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum LabelRecord {
    Acr(AcrLabel),
    Ccr(CcrLabel),
}

impl LabelRecord {
    pub fn svd_id(&self) -> &str {
        match self {
            LabelRecord::Acr(a) => &a.svd_id,
            LabelRecord::Ccr(c) => &c.svd_id,
        }
    }

    /// Parse one JSON object, checking field-level invariants that do not
    /// need a corpus.
    pub fn from_json(text: &str) -> std::result::Result<LabelRecord, String> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let obj = value.as_object().ok_or("label record must be a JSON object")?;
        let record = if obj.contains_key("rating") {
            // Range-check before narrowing to u8.
            match obj.get("rating").and_then(|r| r.as_i64()) {
                Some(r) if (1..=5).contains(&r) => {}
                _ => return Err(format!("rating must be an integer in 1..=5, got {}", obj["rating"])),
            }
            LabelRecord::Acr(serde_json::from_value(value).map_err(|e| e.to_string())?)
        } else if obj.contains_key("choice") {
            if let Some(s) = obj.get("choice").and_then(|c| c.as_str()) {
                if CcrChoice::parse(s).is_none() {
                    return Err(format!(
                        "choice must be one of i_more, i_little, j_little, j_more; got {s:?}"
                    ));
                }
            }
            LabelRecord::Ccr(serde_json::from_value(value).map_err(|e| e.to_string())?)
        } else {
            return Err("record is neither ACR (rating) nor CCR (choice)".into());
        };
        if let LabelRecord::Ccr(c) = &record {
            if c.utt_i == c.utt_j {
                return Err(format!("CCR pair compares {:?} with itself", c.utt_i));
            }
        }
        Ok(record)
    }

    pub fn to_json_line(&self) -> String {
        // Serialization of these plain structs cannot fail.
        serde_json::to_string(self).expect("label record serializes")
    }

    /// Check the record against a corpus: utterances exist and CCR pairs share
    /// sentence and gender.
    pub fn validate(&self, corpus: &Corpus) -> std::result::Result<(), String> {
        let lookup = |id: &str| {
            corpus
                .get(id)
                .ok_or_else(|| format!("label references unknown utterance {id:?}"))
        };
        match self {
            LabelRecord::Acr(a) => {
                lookup(&a.utterance_id)?;
                if !(1..=5).contains(&a.rating) {
                    return Err(format!("rating {} out of range 1..=5", a.rating));
                }
            }
            LabelRecord::Ccr(c) => {
                let ui = lookup(&c.utt_i)?;
                let uj = lookup(&c.utt_j)?;
                if c.utt_i == c.utt_j {
                    return Err(format!("CCR pair compares {:?} with itself", c.utt_i));
                }
                if ui.sentence_id != uj.sentence_id || ui.gender != uj.gender {
                    return Err(format!(
                        "CCR pair ({:?}, {:?}) must share sentence and gender",
                        c.utt_i, c.utt_j
                    ));
                }
            }
        }
        Ok(())
    }
}

/// All label records of a file, in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelSet {
    pub records: Vec<LabelRecord>,
}

impl LabelSet {
    pub fn new(records: Vec<LabelRecord>) -> Self {
        LabelSet { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn acr(&self, index: usize) -> Option<&AcrLabel> {
        match self.records.get(index) {
            Some(LabelRecord::Acr(a)) => Some(a),
            _ => None,
        }
    }

    pub fn ccr(&self, index: usize) -> Option<&CcrLabel> {
        match self.records.get(index) {
            Some(LabelRecord::Ccr(c)) => Some(c),
            _ => None,
        }
    }

    pub fn acr_labels<'a>(&'a self, svd_id: &'a str) -> impl Iterator<Item = (usize, &'a AcrLabel)> {
        self.records.iter().enumerate().filter_map(move |(i, r)| match r {
            LabelRecord::Acr(a) if a.svd_id == svd_id => Some((i, a)),
            _ => None,
        })
    }

    pub fn ccr_labels<'a>(&'a self, svd_id: &'a str) -> impl Iterator<Item = (usize, &'a CcrLabel)> {
        self.records.iter().enumerate().filter_map(move |(i, r)| match r {
            LabelRecord::Ccr(c) if c.svd_id == svd_id => Some((i, c)),
            _ => None,
        })
    }

    pub fn validate(&self, corpus: &Corpus) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            r.validate(corpus)
                .map_err(|m| Error::Validation(format!("label record {i}: {m}")))?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.to_json_line());
            out.push('\n');
        }
        out
    }
}

/// Parse a label file without corpus checks.
pub fn parse_labels<R: Read>(reader: R, context: &str) -> Result<LabelSet> {
    let mut records = Vec::new();
    for (n, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| Error::parse(context, line_no, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        records.push(LabelRecord::from_json(trimmed).map_err(|m| Error::parse(context, line_no, m))?);
    }
    Ok(LabelSet { records })
}

/// Load labels and reject any that reference utterances missing from `corpus`.
pub fn load_labels(path: impl AsRef<Path>, corpus: &Corpus) -> Result<LabelSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let set = parse_labels(file, &path.display().to_string())?;
    set.validate(corpus)?;
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::test_support::utt;
    use crate::dataset::Gender;

    #[test]
    fn targets_match_the_four_categories() {
        assert_eq!(ccr_choice_to_target(CcrChoice::IMore), 0.0);
        assert_eq!(ccr_choice_to_target(CcrChoice::ILittleMore), 0.25);
        assert_eq!(ccr_choice_to_target(CcrChoice::JLittleMore), 0.75);
        assert_eq!(ccr_choice_to_target(CcrChoice::JMore), 1.0);
    }

    #[test]
    fn target_is_bijective_and_mirror_complements() {
        let mut seen: Vec<f64> = CcrChoice::ALL.iter().map(|c| c.target()).collect();
        seen.dedup();
        assert_eq!(seen.len(), 4);
        for c in CcrChoice::ALL {
            assert_eq!(c.mirror().target(), 1.0 - c.target());
            assert_eq!(c.mirror().mirror(), c);
            assert_eq!(c.mirror().is_strong(), c.is_strong());
        }
    }

    #[test]
    fn parses_both_record_kinds() {
        let acr = LabelRecord::from_json(r#"{"svd":"x","annotator":"a","utt":"u1","rating":4}"#).unwrap();
        assert!(matches!(acr, LabelRecord::Acr(ref a) if a.rating == 4));
        let ccr =
            LabelRecord::from_json(r#"{"svd":"x","annotator":"a","utt_i":"u1","utt_j":"u2","choice":"j_little"}"#)
                .unwrap();
        assert!(matches!(ccr, LabelRecord::Ccr(ref c) if c.choice == CcrChoice::JLittleMore));
        assert_eq!(LabelRecord::from_json(&ccr.to_json_line()).unwrap(), ccr);
    }

    #[test]
    fn rejects_bad_records() {
        for bad in [
            r#"{"svd":"x","annotator":"a","utt":"u1","rating":6}"#,
            r#"{"svd":"x","annotator":"a","utt":"u1","rating":0}"#,
            r#"{"svd":"x","annotator":"a","utt":"u1","rating":2.5}"#,
            r#"{"svd":"x","annotator":"a","utt_i":"u1","utt_j":"u2","choice":"no_difference"}"#,
            r#"{"svd":"x","annotator":"a","utt_i":"u1","utt_j":"u1","choice":"i_more"}"#,
            r#"{"svd":"x","annotator":"a"}"#,
            r#"[1,2]"#,
        ] {
            assert!(LabelRecord::from_json(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn corpus_validation() {
        let corpus = Corpus::from_utterances(vec![
            utt("u1", "s1", Gender::Male, "a"),
            utt("u2", "s2", Gender::Male, "a"),
            utt("u3", "s3", Gender::Male, "b"),
        ])
        .unwrap();
        let ok = LabelRecord::from_json(r#"{"svd":"x","annotator":"a","utt_i":"u1","utt_j":"u2","choice":"i_more"}"#)
            .unwrap();
        assert!(ok.validate(&corpus).is_ok());
        let cross =
            LabelRecord::from_json(r#"{"svd":"x","annotator":"a","utt_i":"u1","utt_j":"u3","choice":"i_more"}"#)
                .unwrap();
        assert!(cross.validate(&corpus).is_err());
        let missing = LabelRecord::from_json(r#"{"svd":"x","annotator":"a","utt":"zz","rating":3}"#).unwrap();
        let err = LabelSet::new(vec![missing]).validate(&corpus).unwrap_err();
        assert!(err.to_string().contains("zz"));
    }
}
