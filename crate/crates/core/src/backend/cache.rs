use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

use super::{BackendError, Provider, Request, Response};

/// Memoizes successful responses keyed by provider id and canonical request bytes.
///
/// Errors are never cached.
pub struct CachedProvider<P> {
    inner: P,
    provider_id: String,
    entries: RwLock<HashMap<(String, Vec<u8>), Response>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

/// Wraps `provider` in a response cache. Asks the provider for its id once.
pub fn cached<P: Provider>(provider: P) -> Result<CachedProvider<P>, BackendError> {
    let provider_id = match provider.handle(&Request::Describe)? {
        Response::Describe(d) => d.provider_id,
        _ => {
            return Err(BackendError::Protocol(
                "describe answered with another response kind".to_string(),
            ))
        }
    };
    Ok(CachedProvider {
        inner: provider,
        provider_id,
        entries: RwLock::new(HashMap::new()),
        hits: AtomicU64::new(0),
        misses: AtomicU64::new(0),
    })
}

impl<P> CachedProvider<P> {
    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn into_inner(self) -> P {
        self.inner
    }
}

impl<P: Provider> Provider for CachedProvider<P> {
    fn handle(&self, request: &Request) -> Result<Response, BackendError> {
        let bytes = serde_json::to_vec(request).map_err(|e| BackendError::Protocol(e.to_string()))?;
        let key = (self.provider_id.clone(), bytes);
        if let Some(hit) = self.entries.read().expect("cache lock").get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit.clone());
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let response = self.inner.handle(request)?;
        self.entries
            .write()
            .expect("cache lock")
            .entry(key)
            .or_insert_with(|| response.clone());
        Ok(response)
    }
}
