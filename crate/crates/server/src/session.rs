//! In-memory sessions with optional snapshots on disk.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use xrl::agent::{train, LearningConfig, QTable};
use xrl::foil::FoilQuery;
use xrl::pipeline::{transition_source, ExplainOptions, ExplanationPayload, PipelineError};
use xrl::rollout::{simulate, to_path, RolloutMode, TrajectoryExport};
use xrl::{Action, EmpiricalModel, EnvState, FoilContext, GridLayout};

pub fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// A trained agent on a layout, plus where the user has walked it.
#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    pub layout: GridLayout,
    pub q_t: QTable,
    pub model: EmpiricalModel,
    /// Discount the learned values were trained with.
    pub lambda: f64,
    pub current: EnvState,
    pub defaults: ExplainOptions,
    pub seed: u64,
    rng: ChaCha8Rng,
    pub last_query: Option<(FoilQuery, ExplainOptions)>,
    pub created: u64,
    pub updated: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WhichPolicy {
    Learned,
    LastFoil,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepOutcome {
    pub action: Action,
    pub state: EnvState,
    pub reward: f64,
    pub done: bool,
}

impl Session {
    pub fn new(
        id: String,
        layout: GridLayout,
        q_t: QTable,
        model: EmpiricalModel,
        lambda: f64,
        defaults: ExplainOptions,
        seed: u64,
    ) -> Self {
        let t = now();
        Self {
            id,
            current: layout.initial_state(),
            layout,
            q_t,
            model,
            lambda,
            defaults,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            last_query: None,
            created: t,
            updated: t,
        }
    }

    /// Runs the explanation pipeline from the current state. Neither the
    /// learned values nor the current state change.
    pub fn query(&mut self, query: FoilQuery, options: ExplainOptions) -> Result<ExplanationPayload, PipelineError> {
        let source = transition_source(options.transition, &self.layout, &self.model);
        let ctx = FoilContext {
            layout: &self.layout,
            source: source.as_ref(),
            q_t: &self.q_t,
            lambda: self.lambda,
        };
        let payload = xrl::explain_query(&ctx, &query, &self.current, &options)?;
        drop(source);
        self.updated = now();
        self.last_query = Some((query, options));
        Ok(payload)
    }

    /// Advances the current state with `action`, or the learned greedy action.
    pub fn step(&mut self, action: Option<Action>) -> StepOutcome {
        let action = action.unwrap_or_else(|| self.q_t.greedy(&self.layout.features(&self.current)));
        let (state, reward) = self.layout.step(&self.current, action, &mut self.rng);
        self.current = state;
        self.updated = now();
        StepOutcome {
            action,
            state,
            reward,
            done: state.is_terminal(),
        }
    }

    /// Simulates the learned policy or the foil policy of the last query from
    /// the current state. `None` when a foil is requested before any query.
    pub fn trajectory(
        &self,
        which: WhichPolicy,
        horizon: u32,
        mode: RolloutMode,
    ) -> Option<Result<TrajectoryExport, PipelineError>> {
        let options = match (which, &self.last_query) {
            (WhichPolicy::LastFoil, None) => return None,
            (WhichPolicy::LastFoil, Some((_, o))) => o.clone(),
            (WhichPolicy::Learned, _) => self.defaults.clone(),
        };
        let source = transition_source(options.transition, &self.layout, &self.model);
        let export = |policy: &dyn xrl::Policy| {
            let t = simulate(&self.layout, &self.current, policy, horizon, source.as_ref(), mode);
            TrajectoryExport::new(&t, &to_path(&self.layout, &t, source.as_ref()))
        };
        Some(match (which, &self.last_query) {
            (WhichPolicy::LastFoil, Some((query, options))) => {
                let ctx = FoilContext {
                    layout: &self.layout,
                    source: source.as_ref(),
                    q_t: &self.q_t,
                    lambda: self.lambda,
                };
                ctx.synthesize(query, &self.current, &options.params)
                    .map(|syn| export(&syn.policy()))
                    .map_err(PipelineError::from)
            }
            _ => Ok(export(&self.q_t)),
        })
    }

    fn rng_position(&self) -> String {
        self.rng.get_word_pos().to_string()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SnapshotMeta {
    id: String,
    lambda: f64,
    current: EnvState,
    defaults: ExplainOptions,
    seed: u64,
    rng_word_pos: String,
    last_query: Option<(String, ExplainOptions)>,
    created: u64,
    updated: u64,
}

/// Writes `layout.grid`, `q.qtab`, `model.tmodel` and `session.json` under
/// `dir/<id>/`.
pub fn write_snapshot(dir: &Path, s: &Session) -> io::Result<()> {
    let d = dir.join(&s.id);
    fs::create_dir_all(&d)?;
    fs::write(d.join("layout.grid"), s.layout.to_grid_text())?;
    fs::write(d.join("q.qtab"), s.q_t.to_text())?;
    fs::write(d.join("model.tmodel"), s.model.to_text())?;
    let meta = SnapshotMeta {
        id: s.id.clone(),
        lambda: s.lambda,
        current: s.current,
        defaults: s.defaults.clone(),
        seed: s.seed,
        rng_word_pos: s.rng_position(),
        last_query: s.last_query.as_ref().map(|(q, o)| (q.to_string(), o.clone())),
        created: s.created,
        updated: s.updated,
    };
    let json = serde_json::to_string_pretty(&meta).map_err(io::Error::other)?;
    fs::write(d.join("session.json"), json)
}

fn invalid(e: impl ToString) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, e.to_string())
}

pub fn read_snapshot(d: &Path) -> io::Result<Session> {
    let layout = GridLayout::parse(&fs::read_to_string(d.join("layout.grid"))?).map_err(invalid)?;
    let q_t = QTable::from_text(&fs::read_to_string(d.join("q.qtab"))?).map_err(invalid)?;
    let model = EmpiricalModel::from_text(&fs::read_to_string(d.join("model.tmodel"))?).map_err(invalid)?;
    let meta: SnapshotMeta = serde_json::from_str(&fs::read_to_string(d.join("session.json"))?).map_err(invalid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(meta.seed);
    rng.set_word_pos(meta.rng_word_pos.parse().map_err(invalid)?);
    let last_query = match meta.last_query {
        Some((text, options)) => Some((FoilQuery::parse(&text).map_err(invalid)?, options)),
        None => None,
    };
    Ok(Session {
        id: meta.id,
        layout,
        q_t,
        model,
        lambda: meta.lambda,
        current: meta.current,
        defaults: meta.defaults,
        seed: meta.seed,
        rng,
        last_query,
        created: meta.created,
        updated: meta.updated,
    })
}

#[derive(Debug)]
pub enum Slot {
    Training,
    Ready(Box<Session>),
    Failed(String),
}

/// What a new session starts from.
#[derive(Debug, Clone)]
pub struct SessionSpec {
    pub layout: GridLayout,
    /// Pre-trained values and model; trained from `learning` when absent.
    pub trained: Option<(QTable, EmpiricalModel)>,
    pub learning: LearningConfig,
    pub defaults: ExplainOptions,
    pub seed: u64,
}

pub struct SessionStore {
    sessions: RwLock<HashMap<String, Arc<Mutex<Slot>>>>,
    next_id: AtomicU64,
    snapshot_dir: Option<PathBuf>,
}

impl Default for SessionStore {
    fn default() -> Self {
        Self::new(None)
    }
}

impl SessionStore {
    pub fn new(snapshot_dir: Option<PathBuf>) -> Self {
        Self {
            sessions: RwLock::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            snapshot_dir,
        }
    }

    /// Loads every snapshot found under `dir` and keeps snapshotting there.
    pub fn restore(dir: PathBuf) -> io::Result<Self> {
        let store = Self::new(Some(dir.clone()));
        if dir.exists() {
            let mut max_id = 0;
            for entry in fs::read_dir(&dir)? {
                let path = entry?.path();
                if !path.join("session.json").exists() {
                    continue;
                }
                let s = read_snapshot(&path)?;
                if let Some(n) = s.id.strip_prefix('s').and_then(|n| n.parse::<u64>().ok()) {
                    max_id = max_id.max(n);
                }
                store.insert(s.id.clone(), Slot::Ready(Box::new(s)));
            }
            store.next_id.store(max_id + 1, Ordering::SeqCst);
        }
        Ok(store)
    }

    fn insert(&self, id: String, slot: Slot) -> Arc<Mutex<Slot>> {
        let slot = Arc::new(Mutex::new(slot));
        self.sessions
            .write()
            .expect("session table poisoned")
            .insert(id, slot.clone());
        slot
    }

    pub fn get(&self, id: &str) -> Option<Arc<Mutex<Slot>>> {
        self.sessions.read().expect("session table poisoned").get(id).cloned()
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().expect("session table poisoned").keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Forgets a session and its snapshot.
    pub fn remove(&self, id: &str) -> bool {
        let gone = self.sessions.write().expect("session table poisoned").remove(id).is_some();
        if let (true, Some(dir)) = (gone, &self.snapshot_dir) {
            let _ = fs::remove_dir_all(dir.join(id));
        }
        gone
    }

    /// Reserves an id in the training state. Call [`SessionStore::finish`]
    /// to train and publish it.
    pub fn reserve(&self) -> (String, Arc<Mutex<Slot>>) {
        let id = format!("s{}", self.next_id.fetch_add(1, Ordering::SeqCst));
        let slot = self.insert(id.clone(), Slot::Training);
        (id, slot)
    }

    /// Trains (if needed) and publishes a reserved session. Blocking.
    pub fn finish(&self, id: String, slot: &Mutex<Slot>, spec: SessionSpec) {
        let result = match spec.trained {
            Some(t) => Ok(t),
            None => train(&spec.layout, &spec.learning)
                .map(|t| (t.q, t.model))
                .map_err(|e| e.to_string()),
        };
        let new_slot = match result {
            Ok((q, model)) => {
                let s = Session::new(id, spec.layout, q, model, spec.learning.lambda, spec.defaults, spec.seed);
                self.snapshot(&s);
                Slot::Ready(Box::new(s))
            }
            Err(e) => Slot::Failed(e),
        };
        *slot.lock().expect("session poisoned") = new_slot;
    }

    /// Creates and trains a session in one blocking call.
    pub fn create(&self, spec: SessionSpec) -> String {
        let (id, slot) = self.reserve();
        self.finish(id.clone(), &slot, spec);
        id
    }

    pub fn snapshot(&self, s: &Session) {
        if let Some(dir) = &self.snapshot_dir {
            if let Err(e) = write_snapshot(dir, s) {
                tracing::warn!("snapshot of {} failed: {e}", s.id);
            }
        }
    }
}
