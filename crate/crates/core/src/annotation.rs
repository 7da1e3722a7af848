//! Annotation sessions: warm-up playback, task issuance and label persistence.
//!
//! Session state lives in a JSON store file rewritten (write + rename) after
//! every mutation, so a restarted service resumes open sessions. Accepted
//! labels are appended to a JSON-lines file with one write per record.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::{
    sample_ccr_pair, sample_distinct_in_scope, sample_in_scope, AcrLabel, CcrChoice, CcrLabel, Corpus, LabelRecord,
    Source, Svd,
};
use crate::error::Error;
use crate::rng;

pub const WARMUP_SIZE: usize = 10;
pub const ACR_SCALE: [&str; 5] = ["1: not so", "2", "3", "4", "5: so"];

#[derive(Debug, thiserror::Error)]
pub enum AnnotationError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error(transparent)]
    Internal(#[from] Error),
}

impl AnnotationError {
    pub fn status(&self) -> u16 {
        match self {
            AnnotationError::BadRequest(_) => 400,
            AnnotationError::NotFound(_) => 404,
            AnnotationError::Conflict(_) => 409,
            AnnotationError::Unprocessable(_) => 422,
            AnnotationError::Internal(_) => 500,
        }
    }
}

pub type AnnResult<T> = std::result::Result<T, AnnotationError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionMode {
    Acr,
    Ccr,
}

impl SessionMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "acr" => Some(SessionMode::Acr),
            "ccr" => Some(SessionMode::Ccr),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum TaskItem {
    Acr { utt: String },
    Ccr { utt_i: String, utt_j: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssuedTask {
    pub task_id: String,
    pub item: TaskItem,
    pub answered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub annotator_id: String,
    pub svd_id: String,
    pub mode: SessionMode,
    /// Index used to derive this session's random streams.
    pub ordinal: u64,
    pub warmup: Option<Vec<String>>,
    pub warmup_done: bool,
    pub tasks: Vec<IssuedTask>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct StoreState {
    next_ordinal: u64,
    sessions: BTreeMap<String, Session>,
    /// Annotator id -> descriptors whose warm-up they completed.
    warmed_up: BTreeMap<String, BTreeSet<String>>,
}

/// Public view of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub annotator_id: String,
    pub svd_id: String,
    pub mode: SessionMode,
    pub warmup_done: bool,
    pub answered: usize,
}

impl From<&Session> for SessionInfo {
    fn from(s: &Session) -> Self {
        SessionInfo {
            session_id: s.session_id.clone(),
            annotator_id: s.annotator_id.clone(),
            svd_id: s.svd_id.clone(),
            mode: s.mode,
            warmup_done: s.warmup_done,
            answered: s.tasks.iter().filter(|t| t.answered).count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioRef {
    pub id: String,
    pub audio_url: String,
}

impl AudioRef {
    fn new(id: &str) -> Self {
        AudioRef {
            id: id.to_string(),
            audio_url: format!("/audio/{id}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Warmup {
    pub session_id: String,
    pub utterances: Vec<AudioRef>,
    pub warmup_done: bool,
}

/// A task as presented to the client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum TaskView {
    Acr {
        task_id: String,
        utterance: AudioRef,
        scale: Vec<String>,
    },
    Ccr {
        task_id: String,
        utt_i: AudioRef,
        utt_j: AudioRef,
        options: Vec<String>,
    },
}

impl TaskView {
    fn of(task: &IssuedTask) -> Self {
        match &task.item {
            TaskItem::Acr { utt } => TaskView::Acr {
                task_id: task.task_id.clone(),
                utterance: AudioRef::new(utt),
                scale: ACR_SCALE.iter().map(|s| s.to_string()).collect(),
            },
            TaskItem::Ccr { utt_i, utt_j } => TaskView::Ccr {
                task_id: task.task_id.clone(),
                utt_i: AudioRef::new(utt_i),
                utt_j: AudioRef::new(utt_j),
                options: CcrChoice::ALL.iter().map(|c| c.as_str().to_string()).collect(),
            },
        }
    }

    pub fn task_id(&self) -> &str {
        match self {
            TaskView::Acr { task_id, .. } | TaskView::Ccr { task_id, .. } => task_id,
        }
    }
}

/// Body of a label submission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub task_id: String,
    /// CCR: a choice string or `{"choice": ...}`; ACR: an integer or `{"rating": ...}`.
    pub payload: Value,
}

#[derive(Debug)]
struct Inner {
    state: StoreState,
}

/// The annotation back end shared by all HTTP handlers.
#[derive(Debug)]
pub struct AnnotationService {
    corpus: Corpus,
    data_root: PathBuf,
    store_path: PathBuf,
    labels_path: PathBuf,
    seed: u64,
    inner: Mutex<Inner>,
    /// Serializes label appends.
    writer: Mutex<()>,
}

fn persist(path: &Path, state: &StoreState) -> Result<(), Error> {
    let tmp = path.with_extension("tmp");
    let bytes = serde_json::to_vec_pretty(state)?;
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

impl AnnotationService {
    /// Open (or create) the session store at `store_path`.
    pub fn open(
        corpus: Corpus,
        data_root: impl Into<PathBuf>,
        store_path: impl Into<PathBuf>,
        labels_path: impl Into<PathBuf>,
        seed: u64,
    ) -> Result<Self, Error> {
        let store_path = store_path.into();
        let state = if store_path.exists() {
            let bytes = fs::read(&store_path).map_err(|e| Error::io(&store_path, e))?;
            serde_json::from_slice(&bytes)?
        } else {
            StoreState::default()
        };
        Ok(AnnotationService {
            corpus,
            data_root: data_root.into(),
            store_path,
            labels_path: labels_path.into(),
            seed,
            inner: Mutex::new(Inner { state }),
            writer: Mutex::new(()),
        })
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn labels_path(&self) -> &Path {
        &self.labels_path
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Run `f` on a session and persist the store if it succeeds.
    fn with_session<T>(&self, id: &str, f: impl FnOnce(&mut StoreState, &str) -> AnnResult<T>) -> AnnResult<T> {
        let mut inner = self.lock();
        if !inner.state.sessions.contains_key(id) {
            return Err(AnnotationError::NotFound(format!("unknown session {id:?}")));
        }
        let before = inner.state.clone();
        match f(&mut inner.state, id) {
            Ok(v) => {
                if inner.state != before {
                    if let Err(e) = persist(&self.store_path, &inner.state) {
                        inner.state = before;
                        return Err(e.into());
                    }
                }
                Ok(v)
            }
            Err(e) => {
                inner.state = before;
                Err(e)
            }
        }
    }

    pub fn new_session(&self, annotator: &str, svd_id: &str, mode: &str) -> AnnResult<SessionInfo> {
        if annotator.trim().is_empty() {
            return Err(AnnotationError::BadRequest("annotator is required".into()));
        }
        if svd_id.trim().is_empty() {
            return Err(AnnotationError::BadRequest("svd is required".into()));
        }
        let mode = SessionMode::parse(mode)
            .ok_or_else(|| AnnotationError::BadRequest(format!("mode must be acr or ccr, got {mode:?}")))?;
        let mut inner = self.lock();
        let before = inner.state.clone();
        let state = &mut inner.state;
        let ordinal = state.next_ordinal;
        state.next_ordinal += 1;
        let mut r = rng::substream(self.seed, &[0x5e55, ordinal]);
        let session_id = uuid::Builder::from_random_bytes(r.random()).into_uuid().to_string();
        let returning = state.warmed_up.get(annotator).is_some_and(|s| s.contains(svd_id));
        let session = Session {
            session_id: session_id.clone(),
            annotator_id: annotator.to_string(),
            svd_id: svd_id.to_string(),
            mode,
            ordinal,
            warmup: None,
            warmup_done: returning,
            tasks: Vec::new(),
        };
        let info = SessionInfo::from(&session);
        state.sessions.insert(session_id, session);
        if let Err(e) = persist(&self.store_path, &inner.state) {
            inner.state = before;
            return Err(e.into());
        }
        Ok(info)
    }

    pub fn session(&self, id: &str) -> AnnResult<SessionInfo> {
        let inner = self.lock();
        inner
            .state
            .sessions
            .get(id)
            .map(SessionInfo::from)
            .ok_or_else(|| AnnotationError::NotFound(format!("unknown session {id:?}")))
    }

    /// The session's 10 warm-up utterances, drawn once and then repeated.
    pub fn warmup(&self, id: &str) -> AnnResult<Warmup> {
        self.with_session(id, |state, id| {
            let s = state.sessions.get_mut(id).expect("checked");
            if s.warmup.is_none() {
                let svd = Svd::resolve(&s.svd_id);
                let mut r = rng::substream(self.seed, &[0x3a4a, s.ordinal]);
                let picked = sample_distinct_in_scope(&self.corpus, &svd, WARMUP_SIZE, &mut r)
                    .map_err(|e| AnnotationError::Unprocessable(e.to_string()))?;
                s.warmup = Some(picked.into_iter().map(|u| u.id.clone()).collect());
            }
            Ok(Warmup {
                session_id: s.session_id.clone(),
                utterances: s
                    .warmup
                    .as_ref()
                    .expect("set above")
                    .iter()
                    .map(|u| AudioRef::new(u))
                    .collect(),
                warmup_done: s.warmup_done,
            })
        })
    }

    /// Confirm that the warm-up clips were played.
    pub fn complete_warmup(&self, id: &str) -> AnnResult<SessionInfo> {
        self.with_session(id, |state, id| {
            let s = state.sessions.get_mut(id).expect("checked");
            if s.warmup.is_none() && !s.warmup_done {
                return Err(AnnotationError::Conflict("warm-up has not been issued yet".into()));
            }
            s.warmup_done = true;
            let info = SessionInfo::from(&*s);
            state
                .warmed_up
                .entry(info.annotator_id.clone())
                .or_default()
                .insert(info.svd_id.clone());
            Ok(info)
        })
    }

    /// The oldest unanswered task of the session, or a freshly drawn one.
    pub fn task(&self, id: &str) -> AnnResult<TaskView> {
        self.with_session(id, |state, id| {
            let s = state.sessions.get_mut(id).expect("checked");
            if !s.warmup_done {
                return Err(AnnotationError::Conflict(
                    "warm-up must be completed before tasks are issued".into(),
                ));
            }
            if let Some(t) = s.tasks.iter().find(|t| !t.answered) {
                return Ok(TaskView::of(t));
            }
            let n = s.tasks.len() as u64;
            let svd = Svd::resolve(&s.svd_id);
            let mut r = rng::substream(self.seed, &[0x7a5c, s.ordinal, n]);
            let item = match s.mode {
                SessionMode::Acr => TaskItem::Acr {
                    utt: sample_in_scope(&self.corpus, &svd, &mut r)
                        .map_err(|e| AnnotationError::Unprocessable(e.to_string()))?
                        .id
                        .clone(),
                },
                SessionMode::Ccr => {
                    let (a, b) = sample_ccr_pair(&self.corpus, &svd, &mut r)
                        .map_err(|e| AnnotationError::Unprocessable(e.to_string()))?;
                    TaskItem::Ccr {
                        utt_i: a.id.clone(),
                        utt_j: b.id.clone(),
                    }
                }
            };
            let task = IssuedTask {
                task_id: format!("{}-t{n}", s.session_id),
                item,
                answered: false,
            };
            let view = TaskView::of(&task);
            s.tasks.push(task);
            Ok(view)
        })
    }

    /// Validate and persist one answer. A task can be answered only once.
    pub fn submit(&self, id: &str, submission: &Submission) -> AnnResult<LabelRecord> {
        let _writer = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        self.with_session(id, |state, id| {
            let s = state.sessions.get_mut(id).expect("checked");
            if !s.warmup_done {
                return Err(AnnotationError::Conflict(
                    "warm-up must be completed before labeling".into(),
                ));
            }
            let task = s
                .tasks
                .iter_mut()
                .find(|t| t.task_id == submission.task_id)
                .ok_or_else(|| AnnotationError::BadRequest(format!("unknown task_id {:?}", submission.task_id)))?;
            if task.answered {
                return Err(AnnotationError::Conflict(format!(
                    "task {:?} was already answered",
                    task.task_id
                )));
            }
            let record = match &task.item {
                TaskItem::Acr { utt } => LabelRecord::Acr(AcrLabel {
                    svd_id: s.svd_id.clone(),
                    annotator_id: s.annotator_id.clone(),
                    utterance_id: utt.clone(),
                    rating: parse_rating(&submission.payload)?,
                }),
                TaskItem::Ccr { utt_i, utt_j } => LabelRecord::Ccr(CcrLabel {
                    svd_id: s.svd_id.clone(),
                    annotator_id: s.annotator_id.clone(),
                    utt_i: utt_i.clone(),
                    utt_j: utt_j.clone(),
                    choice: parse_choice(&submission.payload)?,
                }),
            };
            record.validate(&self.corpus).map_err(AnnotationError::BadRequest)?;
            self.append(&record)?;
            task.answered = true;
            Ok(record)
        })
    }

    fn append(&self, record: &LabelRecord) -> Result<(), Error> {
        let path = &self.labels_path;
        let mut line = record.to_json_line();
        line.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        f.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
        f.sync_data().map_err(|e| Error::io(path, e))
    }

    /// Path of an utterance's original audio file.
    pub fn audio_path(&self, utterance_id: &str) -> AnnResult<PathBuf> {
        let u = self
            .corpus
            .get(utterance_id)
            .ok_or_else(|| AnnotationError::NotFound(format!("unknown utterance {utterance_id:?}")))?;
        match &u.source {
            Source::Audio(_) => Ok(crate::features::source_path(&self.data_root, u)),
            Source::Feature(_) => Err(AnnotationError::NotFound(format!(
                "utterance {utterance_id:?} has no audio"
            ))),
        }
    }
}

fn field<'a>(payload: &'a Value, key: &str) -> &'a Value {
    match payload {
        Value::Object(m) => m.get(key).unwrap_or(&Value::Null),
        other => other,
    }
}

/// ACR payload: an integer 1-5, bare or as `{"rating": n}`.
pub fn parse_rating(payload: &Value) -> AnnResult<u8> {
    let v = field(payload, "rating");
    v.as_u64()
        .filter(|r| (1..=5).contains(r))
        .map(|r| r as u8)
        .ok_or_else(|| AnnotationError::BadRequest(format!("rating must be an integer 1-5, got {v}")))
}

/// CCR payload: a choice string, bare or as `{"choice": "..."}`.
pub fn parse_choice(payload: &Value) -> AnnResult<CcrChoice> {
    let v = field(payload, "choice");
    v.as_str().and_then(CcrChoice::parse).ok_or_else(|| {
        AnnotationError::BadRequest(format!(
            "choice must be one of i_more, i_little, j_little, j_more; got {v}"
        ))
    })
}
