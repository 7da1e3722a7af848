//! Fuzz target bodies, shared with a stable-toolchain replay test.

use svdrank::annotation::{parse_choice, parse_rating, Submission};
use svdrank::dataset::{parse_labels, parse_manifest, LabelRecord, SplitPlan};
use svdrank::features::{decode_pooled, decode_spectrogram, decode_wav, encode_pooled, encode_spectrogram, extract};
use svdrank::scorer::{decode_checkpoint, encode_checkpoint};

pub fn manifest(data: &[u8]) {
    if let Ok(corpus) = parse_manifest(data, "fuzz") {
        // Anything accepted must survive a write/parse round trip.
        let mut out = Vec::new();
        corpus.write_manifest(&mut out).unwrap();
        let again = parse_manifest(out.as_slice(), "round trip").unwrap();
        assert_eq!(again.utterances(), corpus.utterances());
    }
}

pub fn labels(data: &[u8]) {
    if let Ok(set) = parse_labels(data, "fuzz") {
        let text = set.to_jsonl();
        let again = parse_labels(text.as_bytes(), "round trip").unwrap();
        assert_eq!(again.len(), set.len());
    }
    if let Ok(line) = std::str::from_utf8(data) {
        let _ = LabelRecord::from_json(line);
    }
}

pub fn svdf(data: &[u8]) {
    if let Ok(f) = decode_pooled(data) {
        assert_eq!(decode_pooled(&encode_pooled(&f)).unwrap(), f);
    }
}

pub fn svds(data: &[u8]) {
    if let Ok(s) = decode_spectrogram(data) {
        assert_eq!(decode_spectrogram(&encode_spectrogram(&s)).unwrap(), s);
    }
}

pub fn svdm(data: &[u8]) {
    if let Ok(p) = decode_checkpoint(data) {
        assert_eq!(decode_checkpoint(&encode_checkpoint(&p)).unwrap(), p);
    }
}

pub fn wav(data: &[u8]) {
    if let Ok(w) = decode_wav(data) {
        // Decoded audio feeds the feature pipeline; it must not panic either.
        if w.samples.len() <= 1 << 16 {
            let _ = extract(&w);
        }
    }
}

const PLAN_MANIFEST: &str = r#"{"id":"a0","speaker_id":"a","gender":"F","sentence_id":"s","duration_s":1.0,"feature_path":"a0.svdf"}
{"id":"b0","speaker_id":"b","gender":"F","sentence_id":"s","duration_s":1.0,"feature_path":"b0.svdf"}
{"id":"c0","speaker_id":"c","gender":"F","sentence_id":"s","duration_s":1.0,"feature_path":"c0.svdf"}
"#;

const PLAN_LABELS: &str = r#"{"svd":"x","annotator":"p","utt":"a0","rating":3}
{"svd":"x","annotator":"p","utt_i":"a0","utt_j":"b0","choice":"j_more"}
{"svd":"x","annotator":"p","utt_i":"b0","utt_j":"c0","choice":"i_little"}
"#;

pub fn split_plan(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(plan) = SplitPlan::from_json(text) {
        let corpus = parse_manifest(PLAN_MANIFEST.as_bytes(), "fixture").unwrap();
        let labels = parse_labels(PLAN_LABELS.as_bytes(), "fixture").unwrap();
        let _ = plan.audit(&corpus, &labels);
    }
}

pub fn label_payload(data: &[u8]) {
    if let Ok(sub) = serde_json::from_slice::<Submission>(data) {
        if let Ok(r) = parse_rating(&sub.payload) {
            assert!((1..=5).contains(&r));
        }
        let _ = parse_choice(&sub.payload);
    }
}

pub const TARGETS: [(&str, fn(&[u8])); 8] = [
    ("manifest", manifest),
    ("labels", labels),
    ("svdf", svdf),
    ("svds", svds),
    ("svdm", svdm),
    ("wav", wav),
    ("split_plan", split_plan),
    ("label_payload", label_payload),
];
