use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};

use crate::value::Value;

/// Handler of an external port: receives the caller's invocation ID and the
/// payload.
pub type PortHandler = Arc<dyn Fn(&str, &Value) -> Result<Value, String> + Send + Sync>;

/// Registry of external services reachable from function bodies. Clones
/// share the registry.
#[derive(Clone, Default)]
pub struct ExternalPorts {
    handlers: Arc<RwLock<HashMap<String, PortHandler>>>,
}

impl std::fmt::Debug for ExternalPorts {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_set().entries(self.names()).finish()
    }
}

impl ExternalPorts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&self, name: impl Into<String>, handler: PortHandler) {
        self.handlers.write().insert(name.into(), handler);
    }

    pub fn get(&self, name: &str) -> Option<PortHandler> {
        self.handlers.read().get(name).cloned()
    }

    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.handlers.read().keys().cloned().collect();
        names.sort();
        names
    }
}

/// Test double for an idempotent service: counts every delivery, acts once
/// per invocation ID, and answers repeats with the same receipt.
#[derive(Debug, Default)]
pub struct IdempotentPort {
    deliveries: AtomicU64,
    seen: Mutex<BTreeSet<String>>,
}

impl IdempotentPort {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn handler(self: &Arc<Self>) -> PortHandler {
        let port = self.clone();
        Arc::new(move |func_id, _payload| {
            port.deliveries.fetch_add(1, Ordering::SeqCst);
            port.seen.lock().insert(func_id.to_owned());
            Ok(Value::Text(format!("receipt:{func_id}")))
        })
    }

    pub fn deliveries(&self) -> u64 {
        self.deliveries.load(Ordering::SeqCst)
    }

    pub fn unique_ids(&self) -> usize {
        self.seen.lock().len()
    }

    pub fn ids(&self) -> BTreeSet<String> {
        self.seen.lock().clone()
    }
}
