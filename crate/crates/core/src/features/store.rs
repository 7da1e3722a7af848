//! Resolving corpus sources to model inputs.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{
    level_normalize, load_pooled_feature, load_spectrogram, read_wav, stft_magnitude, ModelInput, Spectrogram,
    Waveform, DEFAULT_TARGET_DBFS,
};
use crate::dataset::{Corpus, Source, Utterance};
use crate::error::Result;

/// Utterance id -> model input.
pub type FeatureStore = HashMap<String, ModelInput>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    Spectrogram,
    Pooled,
}

/// Level-normalize to -26 dBFS, then take the STFT magnitude.
pub fn extract(w: &Waveform) -> Result<Spectrogram> {
    stft_magnitude(&level_normalize(w, DEFAULT_TARGET_DBFS)?)
}

fn resolve(root: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

/// Path of an utterance's source relative to `root` when not absolute.
pub fn source_path(root: &Path, u: &Utterance) -> PathBuf {
    match &u.source {
        Source::Audio(p) | Source::Feature(p) => resolve(root, p),
    }
}

fn is_spectrogram_file(p: &Path) -> bool {
    p.extension().is_some_and(|e| e == "svds")
}

/// Load one utterance in the requested representation.
///
/// Spectrograms come from an `.svds` file, from an `.svds` sibling of an
/// `.svdf` file, or from extracting the audio. Pooled vectors come from an
/// `.svdf` file or from time-averaging a spectrogram.
pub fn load_input(root: &Path, u: &Utterance, kind: InputKind) -> Result<ModelInput> {
    let path = source_path(root, u);
    let spectrogram = |path: &Path| -> Result<Spectrogram> {
        match &u.source {
            Source::Audio(_) => extract(&read_wav(path)?),
            Source::Feature(_) if is_spectrogram_file(path) => load_spectrogram(path),
            Source::Feature(_) => load_spectrogram(path.with_extension("svds")),
        }
    };
    Ok(match kind {
        InputKind::Spectrogram => ModelInput::Spectrogram(spectrogram(&path)?),
        InputKind::Pooled => match &u.source {
            Source::Feature(_) if !is_spectrogram_file(&path) => ModelInput::Pooled(load_pooled_feature(&path)?),
            _ => ModelInput::Pooled(spectrogram(&path)?.time_average()),
        },
    })
}

/// Load every utterance accepted by `keep`, in parallel.
pub fn load_feature_store(
    corpus: &Corpus,
    root: &Path,
    kind: InputKind,
    keep: impl Fn(&Utterance) -> bool + Sync,
) -> Result<FeatureStore> {
    corpus
        .utterances()
        .par_iter()
        .filter(|u| keep(u))
        .map(|u| Ok((u.id.clone(), load_input(root, u, kind)?)))
        .collect()
}
