//! Sessions, blind presentation order and ranking ingestion.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use conceptblend::experiments::{BatchManifest, Registry};
use conceptblend::pipeline::BlendMethod;
use conceptblend::rng::{seed_from_bytes, SplitMix64};
use conceptblend::study_stats::{format_dataset, RankingRecord};
use serde::{Deserialize, Serialize};

use crate::store::{Event, EventLog, StudyState};
use crate::{ServiceConfig, ServiceError};

/// One pair to rank. `order[position]` is the method shown at that position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub pair_id: String,
    pub order: [BlendMethod; 4],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub participant_id: String,
    pub batch_id: String,
    pub tasks: Vec<Task>,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

/// Images of one study batch: per pair, one image per method in
/// [`BlendMethod::BLENDS`] order.
#[derive(Debug, Clone)]
pub struct StudyBatch {
    pub batch_id: String,
    pub seed: u64,
    pub pairs: Vec<(String, [PathBuf; 4])>,
}

impl StudyBatch {
    pub fn load(batches_dir: &Path, batch_id: &str, display_seed: Option<u64>) -> Result<Self, ServiceError> {
        if !is_plain_id(batch_id) {
            return Err(ServiceError::NotFound(format!("batch {batch_id:?}")));
        }
        let dir = batches_dir.join(batch_id);
        let manifest =
            BatchManifest::read(&dir).map_err(|_| ServiceError::NotFound(format!("batch {batch_id:?}")))?;
        let seed = display_seed
            .or_else(|| manifest.seeds.first().copied())
            .ok_or_else(|| ServiceError::Invalid(format!("batch {batch_id:?} has no seeds")))?;
        let mut pairs = Vec::with_capacity(manifest.pairs.len());
        let mut missing = Vec::new();
        for pair in &manifest.pairs {
            let images = BlendMethod::BLENDS.map(|m| match manifest.find(pair, m.slug(), seed) {
                Some(run) if run.is_ok() && dir.join(run.image()).is_file() => dir.join(run.image()),
                _ => {
                    missing.push(format!("{pair}/{}/{seed}", m.slug()));
                    PathBuf::new()
                }
            });
            pairs.push((pair.clone(), images));
        }
        if !missing.is_empty() {
            return Err(ServiceError::Invalid(format!(
                "batch {batch_id:?} lacks images: {}",
                missing.join(", ")
            )));
        }
        Ok(Self {
            batch_id: batch_id.to_string(),
            seed,
            pairs,
        })
    }

    pub fn image(&self, pair_id: &str, method: BlendMethod) -> Option<&Path> {
        let i = method.blend_index()?;
        self.pairs
            .iter()
            .find(|(p, _)| p == pair_id)
            .map(|(_, imgs)| imgs[i].as_path())
    }
}

/// Letters, digits, `-`, `_` and `.`; at most 64 characters, not starting with `.`.
pub fn is_plain_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

fn keyed_seed(secret: &str, parts: &[&str]) -> u64 {
    let mut bytes = secret.as_bytes().to_vec();
    for p in parts {
        bytes.push(0);
        bytes.extend_from_slice(p.as_bytes());
    }
    seed_from_bytes(&bytes)
}

/// Presentation order for one participant and pair: a Fisher-Yates shuffle
/// seeded from the service secret, so it can be recomputed for audits.
pub fn presentation_order(secret: &str, participant: &str, batch: &str, pair: &str) -> [BlendMethod; 4] {
    let mut rng = SplitMix64::new(keyed_seed(secret, &[participant, batch, pair]));
    let mut order = BlendMethod::BLENDS;
    for i in (1..order.len()).rev() {
        let j = (rng.next_f64() * (i + 1) as f64) as usize;
        order.swap(i, j);
    }
    order
}

/// Translate ranks given per displayed position into ranks per method.
pub fn method_ranks(order: &[BlendMethod; 4], position_ranks: &[u8]) -> Result<[u8; 4], ServiceError> {
    if position_ranks.len() != 4 {
        return Err(ServiceError::Invalid(format!(
            "expected 4 ranks, got {}",
            position_ranks.len()
        )));
    }
    let distinct: BTreeSet<u8> = position_ranks.iter().copied().collect();
    if distinct != BTreeSet::from([1, 2, 3, 4]) {
        return Err(ServiceError::Invalid(format!(
            "ranks {position_ranks:?} are not a permutation of 1..=4"
        )));
    }
    let mut ranks = [0u8; 4];
    for (pos, &method) in order.iter().enumerate() {
        ranks[method.blend_index().expect("blend method")] = position_ranks[pos];
    }
    Ok(ranks)
}

/// The next pending task, or `None` when the session is complete.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NextTask {
    pub index: usize,
    pub pair_id: String,
}

pub struct StudyService {
    config: ServiceConfig,
    state: RwLock<StudyState>,
    log: Mutex<EventLog>,
    batches: RwLock<HashMap<String, Arc<StudyBatch>>>,
    registry: Registry,
}

impl StudyService {
    pub fn open(config: ServiceConfig) -> Result<Self, ServiceError> {
        let (log, state) = EventLog::open(&config.data_dir, config.snapshot_every)?;
        Ok(Self {
            config,
            state: RwLock::new(state),
            log: Mutex::new(log),
            batches: RwLock::new(HashMap::new()),
            registry: Registry::bundled(),
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn batch(&self, batch_id: &str) -> Result<Arc<StudyBatch>, ServiceError> {
        if let Some(b) = self.batches.read().expect("batch cache lock").get(batch_id) {
            return Ok(b.clone());
        }
        let loaded = Arc::new(StudyBatch::load(
            &self.config.batches_dir,
            batch_id,
            self.config.display_seed,
        )?);
        self.batches
            .write()
            .expect("batch cache lock")
            .insert(batch_id.to_string(), loaded.clone());
        Ok(loaded)
    }

    fn session_id(&self, participant: &str, batch: &str) -> String {
        format!("{:016x}", keyed_seed(&self.config.secret, &["session", participant, batch]))
    }

    /// Creates the session, or returns the existing one for this participant
    /// and batch. The flag is true when a new session was created.
    pub fn create_session(&self, participant_id: &str, batch_id: &str) -> Result<(Session, bool), ServiceError> {
        if !is_plain_id(participant_id) {
            return Err(ServiceError::Invalid(format!(
                "participant id {participant_id:?} must be 1-64 letters, digits, '-', '_' or '.'"
            )));
        }
        let batch = self.batch(batch_id)?;
        let session_id = self.session_id(participant_id, batch_id);
        if let Some(s) = self.state.read().expect("state lock").sessions.get(&session_id) {
            return Ok((s.clone(), false));
        }
        let tasks = batch
            .pairs
            .iter()
            .map(|(pair, _)| Task {
                pair_id: pair.clone(),
                order: presentation_order(&self.config.secret, participant_id, batch_id, pair),
            })
            .collect();
        let session = Session {
            session_id: session_id.clone(),
            participant_id: participant_id.to_string(),
            batch_id: batch_id.to_string(),
            tasks,
            created_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };

        let mut log = self.log.lock().expect("log lock");
        // another request may have created it while we built the tasks
        if let Some(s) = self.state.read().expect("state lock").sessions.get(&session_id) {
            return Ok((s.clone(), false));
        }
        let event = Event::SessionCreated(session.clone());
        log.append(&event, &self.state)?;
        Ok((session, true))
    }

    pub fn session(&self, session_id: &str) -> Result<Session, ServiceError> {
        self.state
            .read()
            .expect("state lock")
            .sessions
            .get(session_id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("session {session_id:?}")))
    }

    pub fn completed(&self, session_id: &str) -> BTreeSet<String> {
        self.state
            .read()
            .expect("state lock")
            .submitted
            .get(session_id)
            .cloned()
            .unwrap_or_default()
    }

    pub fn next_task(&self, session_id: &str) -> Result<Option<NextTask>, ServiceError> {
        let session = self.session(session_id)?;
        let done = self.completed(session_id);
        Ok(session
            .tasks
            .iter()
            .enumerate()
            .find(|(_, t)| !done.contains(&t.pair_id))
            .map(|(index, t)| NextTask {
                index,
                pair_id: t.pair_id.clone(),
            }))
    }

    /// Image shown at `position` of task `index`.
    pub fn task_image(&self, session_id: &str, index: usize, position: usize) -> Result<PathBuf, ServiceError> {
        let session = self.session(session_id)?;
        let task = session
            .tasks
            .get(index)
            .ok_or_else(|| ServiceError::NotFound(format!("task {index}")))?;
        let method = *task
            .order
            .get(position)
            .ok_or_else(|| ServiceError::NotFound(format!("position {position}")))?;
        let batch = self.batch(&session.batch_id)?;
        batch
            .image(&task.pair_id, method)
            .map(Path::to_path_buf)
            .ok_or_else(|| ServiceError::NotFound(format!("image for {}", task.pair_id)))
    }

    /// Validates and stores a ranking given per displayed position.
    pub fn submit_ranking(
        &self,
        session_id: &str,
        pair_id: &str,
        position_ranks: &[u8],
    ) -> Result<RankingRecord, ServiceError> {
        let session = self.session(session_id)?;
        let task = session
            .tasks
            .iter()
            .find(|t| t.pair_id == pair_id)
            .ok_or_else(|| ServiceError::NotFound(format!("pair {pair_id:?} in session {session_id}")))?;
        let ranks = method_ranks(&task.order, position_ranks)?;
        let record = RankingRecord::new(session.participant_id.clone(), pair_id, ranks)
            .map_err(|e| ServiceError::Invalid(e.to_string()))?;

        let mut log = self.log.lock().expect("log lock");
        if self.completed(session_id).contains(pair_id) {
            return Err(ServiceError::Conflict(format!(
                "pair {pair_id:?} already ranked in session {session_id}; rankings cannot be revised"
            )));
        }
        let event = Event::RankingAccepted {
            session_id: session_id.to_string(),
            batch_id: session.batch_id.clone(),
            record: record.clone(),
        };
        log.append(&event, &self.state)?;
        Ok(record)
    }

    /// All rankings for a batch in submission order.
    pub fn records(&self, batch_id: &str) -> Vec<RankingRecord> {
        self.state
            .read()
            .expect("state lock")
            .records
            .iter()
            .filter(|r| r.batch_id == batch_id)
            .map(|r| r.record.clone())
            .collect()
    }

    /// Ranking dataset text for a batch.
    pub fn export_dataset(&self, batch_id: &str) -> Result<String, ServiceError> {
        if !self.state.read().expect("state lock").batch_known(batch_id) {
            self.batch(batch_id)?;
        }
        let records = self.records(batch_id);
        if records.is_empty() {
            return Err(ServiceError::Empty(format!("no rankings for batch {batch_id:?}")));
        }
        Ok(format_dataset(&records))
    }

    /// Per-session completion counts, for monitoring.
    pub fn progress(&self) -> BTreeMap<String, (usize, usize)> {
        let state = self.state.read().expect("state lock");
        state
            .sessions
            .values()
            .map(|s| {
                let done = state.submitted.get(&s.session_id).map_or(0, |d| d.len());
                (s.session_id.clone(), (done, s.tasks.len()))
            })
            .collect()
    }
}
