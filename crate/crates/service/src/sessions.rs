use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use kgsq_core::BrowseSession32;

pub const DEFAULT_TTL: Duration = Duration::from_secs(3600);
pub const DEFAULT_CAPACITY: usize = 10_000;

pub type SharedSession = Arc<Mutex<BrowseSession32>>;

struct Entry {
    created_at: Instant,
    session: SharedSession,
}

/// In-memory browse sessions keyed by an opaque token.
///
/// The map lock is held only for lookups and inserts; each session has its
/// own lock so distinct sessions never wait on each other. Methods taking
/// `now` exist so expiry can be tested without sleeping.
pub struct SessionStore {
    ttl: Duration,
    capacity: usize,
    entries: Mutex<HashMap<String, Entry>>,
}

impl SessionStore {
    /// `capacity` is clamped to at least one.
    pub fn new(ttl: Duration, capacity: usize) -> Self {
        Self {
            ttl,
            capacity: capacity.max(1),
            entries: Mutex::new(HashMap::new()),
        }
    }

    pub fn ttl(&self) -> Duration {
        self.ttl
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn insert(&self, session: BrowseSession32) -> String {
        self.insert_at(session, Instant::now())
    }

    pub fn insert_at(&self, session: BrowseSession32, now: Instant) -> String {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let mut map = self.lock();
        map.retain(|_, e| !expired(e, self.ttl, now));
        while map.len() >= self.capacity {
            let oldest = map
                .iter()
                .min_by(|a, b| a.1.created_at.cmp(&b.1.created_at).then_with(|| a.0.cmp(b.0)))
                .map(|(k, _)| k.clone());
            match oldest {
                Some(k) => map.remove(&k),
                None => break,
            };
        }
        map.insert(
            id.clone(),
            Entry {
                created_at: now,
                session: Arc::new(Mutex::new(session)),
            },
        );
        id
    }

    pub fn get(&self, id: &str) -> Option<SharedSession> {
        self.get_at(id, Instant::now())
    }

    /// Expired entries are dropped on sight and never returned.
    pub fn get_at(&self, id: &str, now: Instant) -> Option<SharedSession> {
        let mut map = self.lock();
        let hit = map.get(id).map(|e| (expired(e, self.ttl, now), e.session.clone()));
        match hit {
            Some((false, s)) => Some(s),
            Some((true, _)) => {
                map.remove(id);
                None
            }
            None => None,
        }
    }

    pub fn len(&self) -> usize {
        self.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, HashMap<String, Entry>> {
        self.entries.lock().unwrap_or_else(|p| p.into_inner())
    }
}

impl Default for SessionStore {
    fn default() -> Self {
        Self::new(DEFAULT_TTL, DEFAULT_CAPACITY)
    }
}

fn expired(e: &Entry, ttl: Duration, now: Instant) -> bool {
    now.saturating_duration_since(e.created_at) >= ttl
}
