//! The unified buffer pool.
//!
//! Every engine registers its cached memory objects here. The pool tracks
//! their sizes against one shared capacity and, when space runs out, walks
//! its LRU list asking each object's owner whether it may be evicted
//! (`is_evictable`) and, if so, to release it (`do_eviction`).
//!
//! Callbacks run while the pool holds its internal lock and must not call
//! back into the pool.
//!
//! A pool can also be built with per-engine quotas, which makes each engine
//! behave as if it owned a private pool of the quota size. The benchmark
//! harness uses this to compare one shared pool against statically split
//! ones.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObjectId(pub u64);

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Which engine owns a buffer object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EngineTag {
    /// The relational/document engine.
    Record,
    Array,
}

impl EngineTag {
    fn slot(self) -> usize {
        match self {
            EngineTag::Record => 0,
            EngineTag::Array => 1,
        }
    }
}

/// Engine-supplied eviction callbacks.
pub trait EvictionHandler: Send + Sync {
    /// Whether the object can be dropped right now (e.g. nobody has it pinned).
    fn is_evictable(&self, id: ObjectId) -> bool;
    /// Releases the object's memory, writing it back first if needed.
    fn do_eviction(&self, id: ObjectId);
}

/// Handler for objects that are never evictable while registered.
pub struct Unevictable;

impl EvictionHandler for Unevictable {
    fn is_evictable(&self, _: ObjectId) -> bool {
        false
    }
    fn do_eviction(&self, _: ObjectId) {}
}

pub struct BufferObject {
    pub id: ObjectId,
    pub size: u64,
    pub owner: EngineTag,
    pub handler: Arc<dyn EvictionHandler>,
}

impl BufferObject {
    pub fn new(id: ObjectId, size: u64, owner: EngineTag, handler: Arc<dyn EvictionHandler>) -> Self {
        BufferObject { id, size, owner, handler }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PoolStats {
    /// `touch` calls on resident objects.
    pub hits: u64,
    /// Successful `add` calls.
    pub misses: u64,
    pub evictions: u64,
    pub do_eviction_calls: u64,
    pub capacity_errors: u64,
}

impl PoolStats {
    pub fn since(&self, earlier: &PoolStats) -> PoolStats {
        PoolStats {
            hits: self.hits - earlier.hits,
            misses: self.misses - earlier.misses,
            evictions: self.evictions - earlier.evictions,
            do_eviction_calls: self.do_eviction_calls - earlier.do_eviction_calls,
            capacity_errors: self.capacity_errors - earlier.capacity_errors,
        }
    }
}

struct Entry {
    size: u64,
    owner: EngineTag,
    stamp: u64,
    handler: Arc<dyn EvictionHandler>,
}

struct PoolState {
    capacity: u64,
    quotas: Option<[u64; 2]>,
    used: u64,
    used_by: [u64; 2],
    /// High-water marks of `used` and `used_by`.
    peak: u64,
    peak_by: [u64; 2],
    entries: HashMap<ObjectId, Entry>,
    /// stamp -> id; first entry is least recently used.
    lru: BTreeMap<u64, ObjectId>,
    clock: u64,
    stats: PoolStats,
    trace: Option<Vec<ObjectId>>,
}

pub struct BufferPool {
    state: Mutex<PoolState>,
    next_id: AtomicU64,
}

impl fmt::Debug for BufferPool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let st = self.lock();
        f.debug_struct("BufferPool")
            .field("capacity", &st.capacity)
            .field("used", &st.used)
            .field("objects", &st.entries.len())
            .finish()
    }
}

impl BufferPool {
    pub fn new(capacity: u64) -> Self {
        BufferPool {
            state: Mutex::new(PoolState {
                capacity,
                quotas: None,
                used: 0,
                used_by: [0, 0],
                peak: 0,
                peak_by: [0, 0],
                entries: HashMap::new(),
                lru: BTreeMap::new(),
                clock: 0,
                stats: PoolStats::default(),
                trace: None,
            }),
            next_id: AtomicU64::new(1),
        }
    }

    /// A pool whose record and array engines each get a fixed share of the
    /// capacity and can only evict their own objects.
    pub fn with_quotas(record_bytes: u64, array_bytes: u64) -> Self {
        let pool = BufferPool::new(record_bytes + array_bytes);
        pool.lock().quotas = Some([record_bytes, array_bytes]);
        pool
    }

    fn lock(&self) -> MutexGuard<'_, PoolState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Hands out a fresh object id.
    pub fn allocate_id(&self) -> ObjectId {
        ObjectId(self.next_id.fetch_add(1, Ordering::Relaxed))
    }

    pub fn capacity(&self) -> u64 {
        self.lock().capacity
    }

    pub fn resident_bytes(&self) -> u64 {
        self.lock().used
    }

    pub fn resident_count(&self) -> usize {
        self.lock().entries.len()
    }

    /// Highest resident byte count since creation or [`reset_peak`](Self::reset_peak).
    pub fn peak_bytes(&self) -> u64 {
        self.lock().peak
    }

    /// Highest resident byte count of one engine's objects.
    pub fn peak_bytes_of(&self, owner: EngineTag) -> u64 {
        self.lock().peak_by[owner.slot()]
    }

    pub fn reset_peak(&self) {
        let mut st = self.lock();
        st.peak = st.used;
        st.peak_by = st.used_by;
    }

    /// Changes the capacity, evicting down to it first when it shrinks.
    /// Not available on pools with quotas.
    pub fn set_capacity(&self, capacity: u64) -> Result<()> {
        let mut st = self.lock();
        if st.quotas.is_some() {
            return Err(Error::Spec("cannot resize a pool with engine quotas".into()));
        }
        if st.used > capacity {
            let need = st.capacity - capacity;
            st.evict(None, need)?;
        }
        st.capacity = capacity;
        Ok(())
    }

    pub fn contains(&self, id: ObjectId) -> bool {
        self.lock().entries.contains_key(&id)
    }

    pub fn stats(&self) -> PoolStats {
        self.lock().stats
    }

    /// Starts (or stops) recording the ids of evicted objects.
    pub fn set_trace(&self, on: bool) {
        self.lock().trace = on.then(Vec::new);
    }

    pub fn take_trace(&self) -> Vec<ObjectId> {
        self.lock().trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Resident ids from least to most recently used.
    pub fn lru_order(&self) -> Vec<ObjectId> {
        self.lock().lru.values().copied().collect()
    }

    /// Registers a resident object, evicting others first if it does not fit.
    pub fn add(&self, obj: BufferObject) -> Result<()> {
        let mut st = self.lock();
        if obj.size == 0 {
            return Err(Error::Bounds(format!("buffer object {} has zero size", obj.id)));
        }
        let limit = st.limit(obj.owner);
        if obj.size > limit {
            return Err(Error::TooLarge { size: obj.size, capacity: limit });
        }
        if st.entries.contains_key(&obj.id) {
            return Err(Error::DuplicateId(obj.id.0));
        }
        let scope = st.quotas.map(|_| obj.owner);
        if st.free(scope) < obj.size {
            if let Err(e) = st.evict(scope, obj.size) {
                st.stats.capacity_errors += 1;
                return Err(e);
            }
        }
        let stamp = st.tick();
        st.used += obj.size;
        st.used_by[obj.owner.slot()] += obj.size;
        st.peak = st.peak.max(st.used);
        let slot = obj.owner.slot();
        st.peak_by[slot] = st.peak_by[slot].max(st.used_by[slot]);
        st.lru.insert(stamp, obj.id);
        st.entries.insert(obj.id, Entry { size: obj.size, owner: obj.owner, stamp, handler: obj.handler });
        st.stats.misses += 1;
        debug_assert!(st.audit().is_ok());
        Ok(())
    }

    /// Evicts least recently used evictable objects until at least `need`
    /// bytes are free. Returns the number of bytes released.
    pub fn evict(&self, need: u64) -> Result<u64> {
        let mut st = self.lock();
        if need > st.capacity {
            return Err(Error::TooLarge { size: need, capacity: st.capacity });
        }
        let res = st.evict(None, need);
        if res.is_err() {
            st.stats.capacity_errors += 1;
        }
        res
    }

    /// Marks an object most recently used.
    pub fn touch(&self, id: ObjectId) -> Result<()> {
        let mut st = self.lock();
        let old = st.entries.get(&id).map(|e| e.stamp).ok_or(Error::NotFound(id.0))?;
        let stamp = st.tick();
        st.lru.remove(&old);
        st.lru.insert(stamp, id);
        st.entries.get_mut(&id).expect("checked").stamp = stamp;
        st.stats.hits += 1;
        Ok(())
    }

    /// Unregisters an object without invoking its eviction callbacks.
    pub fn remove(&self, id: ObjectId) -> Result<()> {
        let mut st = self.lock();
        let e = st.entries.remove(&id).ok_or(Error::NotFound(id.0))?;
        st.lru.remove(&e.stamp);
        st.used -= e.size;
        st.used_by[e.owner.slot()] -= e.size;
        Ok(())
    }

    /// Checks the accounting invariants.
    pub fn audit(&self) -> Result<()> {
        self.lock().audit()
    }
}

impl PoolState {
    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    fn limit(&self, owner: EngineTag) -> u64 {
        match self.quotas {
            Some(q) => q[owner.slot()],
            None => self.capacity,
        }
    }

    fn free(&self, scope: Option<EngineTag>) -> u64 {
        match scope {
            Some(owner) => self.limit(owner) - self.used_by[owner.slot()],
            None => self.capacity - self.used,
        }
    }

    fn evict(&mut self, scope: Option<EngineTag>, need: u64) -> Result<u64> {
        let mut freed = 0;
        let candidates: Vec<(u64, ObjectId)> = self.lru.iter().map(|(s, id)| (*s, *id)).collect();
        for (stamp, id) in candidates {
            if self.free(scope) >= need {
                break;
            }
            let entry = &self.entries[&id];
            if scope.is_some_and(|o| o != entry.owner) || !entry.handler.is_evictable(id) {
                continue;
            }
            entry.handler.do_eviction(id);
            let entry = self.entries.remove(&id).expect("present");
            self.lru.remove(&stamp);
            self.used -= entry.size;
            self.used_by[entry.owner.slot()] -= entry.size;
            freed += entry.size;
            self.stats.evictions += 1;
            self.stats.do_eviction_calls += 1;
            if let Some(trace) = self.trace.as_mut() {
                trace.push(id);
            }
        }
        if self.free(scope) >= need {
            Ok(freed)
        } else {
            Err(Error::Capacity { needed: need, freed })
        }
    }

    fn audit(&self) -> Result<()> {
        let sum: u64 = self.entries.values().map(|e| e.size).sum();
        if sum != self.used || self.used > self.capacity || self.lru.len() != self.entries.len() {
            return Err(Error::Internal(format!(
                "pool accounting broken: used {} sum {} capacity {}",
                self.used, sum, self.capacity
            )));
        }
        if let Some(q) = self.quotas {
            if self.used_by[0] > q[0] || self.used_by[1] > q[1] {
                return Err(Error::Internal("engine quota exceeded".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicBool;
    use std::sync::Mutex as StdMutex;

    /// Records do_eviction calls; objects listed in `pinned` refuse eviction.
    #[derive(Default)]
    struct Recorder {
        pinned: StdMutex<Vec<ObjectId>>,
        evicted: StdMutex<Vec<ObjectId>>,
        refuse_all: AtomicBool,
    }

    impl EvictionHandler for Recorder {
        fn is_evictable(&self, id: ObjectId) -> bool {
            !self.refuse_all.load(Ordering::Relaxed) && !self.pinned.lock().unwrap().contains(&id)
        }
        fn do_eviction(&self, id: ObjectId) {
            self.evicted.lock().unwrap().push(id);
        }
    }

    fn obj(id: u64, size: u64, h: &Arc<Recorder>) -> BufferObject {
        BufferObject::new(ObjectId(id), size, EngineTag::Array, h.clone())
    }

    #[test]
    fn overflow_evicts_oldest() {
        let h = Arc::new(Recorder::default());
        let pool = BufferPool::new(100);
        pool.add(obj(1, 60, &h)).unwrap();
        pool.add(obj(2, 60, &h)).unwrap();
        assert!(!pool.contains(ObjectId(1)));
        assert!(pool.contains(ObjectId(2)));
        assert_eq!(*h.evicted.lock().unwrap(), vec![ObjectId(1)]);
    }

    #[test]
    fn nothing_evictable_is_capacity_error() {
        let h = Arc::new(Recorder::default());
        h.pinned.lock().unwrap().push(ObjectId(1));
        let pool = BufferPool::new(100);
        pool.add(obj(1, 60, &h)).unwrap();
        let err = pool.add(obj(2, 60, &h)).unwrap_err();
        assert!(matches!(err, Error::Capacity { needed: 60, freed: 0 }));
        assert_eq!(pool.stats().capacity_errors, 1);
        assert!(pool.contains(ObjectId(1)));
        assert!(!pool.contains(ObjectId(2)));
    }

    #[test]
    fn too_large_and_duplicates_rejected() {
        let h = Arc::new(Recorder::default());
        let pool = BufferPool::new(100);
        assert!(matches!(pool.add(obj(1, 101, &h)), Err(Error::TooLarge { .. })));
        pool.add(obj(1, 10, &h)).unwrap();
        assert!(matches!(pool.add(obj(1, 10, &h)), Err(Error::DuplicateId(1))));
        assert!(pool.add(obj(3, 0, &h)).is_err());
    }

    #[test]
    fn shrinking_evicts_and_peaks_stay() {
        let h = Arc::new(Recorder::default());
        let pool = BufferPool::new(100);
        for i in 1..=4 {
            pool.add(obj(i, 25, &h)).unwrap();
        }
        pool.set_capacity(50).unwrap();
        assert_eq!(pool.resident_bytes(), 50);
        assert_eq!(*h.evicted.lock().unwrap(), vec![ObjectId(1), ObjectId(2)]);
        assert_eq!(pool.peak_bytes(), 100);
        assert_eq!(pool.peak_bytes_of(EngineTag::Array), 100);
        pool.reset_peak();
        assert_eq!(pool.peak_bytes(), 50);
        assert!(pool.add(obj(5, 60, &h)).is_err());
    }

    #[test]
    fn evict_follows_lru_order() {
        let h = Arc::new(Recorder::default());
        let pool = BufferPool::new(100);
        for i in 1..=4 {
            pool.add(obj(i, 25, &h)).unwrap();
        }
        assert_eq!(pool.evict(100).unwrap(), 100);
        assert_eq!(*h.evicted.lock().unwrap(), (1..=4).map(ObjectId).collect::<Vec<_>>());
        assert_eq!(pool.resident_bytes(), 0);
    }

    #[test]
    fn unevictable_lru_head_is_skipped() {
        let h = Arc::new(Recorder::default());
        h.pinned.lock().unwrap().push(ObjectId(1));
        let pool = BufferPool::new(100);
        for i in 1..=3 {
            pool.add(obj(i, 30, &h)).unwrap();
        }
        pool.evict(40).unwrap();
        assert_eq!(*h.evicted.lock().unwrap(), vec![ObjectId(2)]);
        assert!(pool.contains(ObjectId(1)));
    }

    #[test]
    fn evict_reports_freed_on_failure() {
        let h = Arc::new(Recorder::default());
        h.pinned.lock().unwrap().push(ObjectId(2));
        let pool = BufferPool::new(100);
        pool.add(obj(1, 30, &h)).unwrap();
        pool.add(obj(2, 50, &h)).unwrap();
        let err = pool.evict(90).unwrap_err();
        assert!(matches!(err, Error::Capacity { needed: 90, freed: 30 }));
    }

    #[test]
    fn touch_refreshes_recency() {
        let h = Arc::new(Recorder::default());
        let pool = BufferPool::new(100);
        pool.add(obj(1, 50, &h)).unwrap();
        pool.add(obj(2, 50, &h)).unwrap();
        pool.touch(ObjectId(1)).unwrap();
        pool.add(obj(3, 50, &h)).unwrap();
        assert!(pool.contains(ObjectId(1)));
        assert!(!pool.contains(ObjectId(2)));
        assert!(matches!(pool.touch(ObjectId(2)), Err(Error::NotFound(2))));
        assert_eq!(pool.stats().hits, 1);
    }

    #[test]
    fn quotas_confine_eviction_to_owner() {
        let h = Arc::new(Recorder::default());
        let pool = BufferPool::with_quotas(50, 50);
        pool.add(BufferObject::new(ObjectId(1), 40, EngineTag::Record, h.clone())).unwrap();
        pool.add(BufferObject::new(ObjectId(2), 40, EngineTag::Array, h.clone())).unwrap();
        pool.add(BufferObject::new(ObjectId(3), 40, EngineTag::Array, h.clone())).unwrap();
        assert!(pool.contains(ObjectId(1)));
        assert_eq!(*h.evicted.lock().unwrap(), vec![ObjectId(2)]);
        assert!(matches!(
            pool.add(BufferObject::new(ObjectId(4), 60, EngineTag::Record, h.clone())),
            Err(Error::TooLarge { .. })
        ));
        pool.audit().unwrap();
    }

    #[test]
    fn remove_skips_callbacks() {
        let h = Arc::new(Recorder::default());
        let pool = BufferPool::new(100);
        pool.add(obj(1, 50, &h)).unwrap();
        pool.remove(ObjectId(1)).unwrap();
        assert!(h.evicted.lock().unwrap().is_empty());
        assert_eq!(pool.resident_bytes(), 0);
    }
}
