//! The bridge between a running script and its engine.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::{Duration, Instant};

use crossbeam_channel::Sender;

use super::globals::GlobalStore;
use super::history::Bus;
use crate::model::StatePath;
use crate::script::{ScriptFailure, ScriptHost, ScriptResult};
use crate::value::Value;

/// Handler behind the script builtin `call(service, args)`.
pub type ServiceHandler = Arc<dyn Fn(&Value) -> Result<Value, String> + Send + Sync>;

#[derive(Clone, Default)]
pub struct ServiceRegistry {
    handlers: Arc<RwLock<HashMap<String, ServiceHandler>>>,
}

impl ServiceRegistry {
    pub fn register(&self, name: impl Into<String>, handler: ServiceHandler) {
        self.handlers.write().unwrap().insert(name.into(), handler);
    }

    pub fn get(&self, name: &str) -> Option<ServiceHandler> {
        self.handlers.read().unwrap().get(name).cloned()
    }
}

/// Wakes every waiting script whenever a flag changes.
#[derive(Default)]
pub(crate) struct Signal {
    generation: Mutex<u64>,
    cv: Condvar,
}

impl Signal {
    pub fn notify(&self) {
        *self.generation.lock().unwrap() += 1;
        self.cv.notify_all();
    }

    /// Blocks until `cond` holds (returns true) or `deadline` passes (returns false).
    pub fn wait_until(&self, deadline: Option<Instant>, cond: impl Fn() -> bool) -> bool {
        let mut g = self.generation.lock().unwrap();
        loop {
            if cond() {
                return true;
            }
            match deadline {
                None => g = self.cv.wait(g).unwrap(),
                Some(d) => {
                    let now = Instant::now();
                    if now >= d {
                        return false;
                    }
                    g = self.cv.wait_timeout(g, d - now).unwrap().0;
                }
            }
        }
    }
}

/// Per-invocation control flags, set by the engine and read by the script thread.
#[derive(Debug, Default)]
pub(crate) struct ScriptCtl {
    pub released: AtomicBool,
    pub preempted: AtomicBool,
    gated: AtomicBool,
}

impl ScriptCtl {
    pub fn is_preempted(&self) -> bool {
        self.preempted.load(Ordering::SeqCst)
    }

    pub fn is_released(&self) -> bool {
        self.released.load(Ordering::SeqCst)
    }

    pub fn preempt(&self) {
        self.preempted.store(true, Ordering::SeqCst);
        self.released.store(true, Ordering::SeqCst);
    }

    pub fn release(&self) {
        self.released.store(true, Ordering::SeqCst);
    }
}

/// First write to each global during one invocation: value before, latest value after.
pub(crate) type GlobalWrites = BTreeMap<String, (Option<Value>, Value)>;

pub(crate) enum WorkerMsg {
    /// The script reached its first blocking call and waits for release.
    Gated(u64),
    Done { ticket: u64, result: Result<ScriptResult, ScriptFailure>, writes: GlobalWrites },
}

pub(crate) struct EngineHost {
    pub ticket: u64,
    pub path: StatePath,
    pub ctl: Arc<ScriptCtl>,
    pub signal: Arc<Signal>,
    pub worker_tx: Option<Sender<WorkerMsg>>,
    pub globals: Arc<GlobalStore>,
    pub bus: Arc<Bus>,
    pub services: ServiceRegistry,
    pub call_timeout: Duration,
    pub writes: Mutex<GlobalWrites>,
}

impl EngineHost {
    /// Holds the script at its first blocking call until the engine lets it go, so that
    /// everything up to that point happens within one logical instant.
    fn gate(&self) {
        if self.ctl.is_released() {
            return;
        }
        if !self.ctl.gated.swap(true, Ordering::SeqCst) {
            if let Some(tx) = &self.worker_tx {
                let _ = tx.send(WorkerMsg::Gated(self.ticket));
            }
        }
        let ctl = &self.ctl;
        self.signal.wait_until(None, || ctl.is_released());
    }

    pub fn take_writes(&self) -> GlobalWrites {
        std::mem::take(&mut *self.writes.lock().unwrap())
    }
}

impl ScriptHost for EngineHost {
    fn get_global(&self, name: &str) -> Option<Value> {
        self.globals.get(name)
    }

    fn set_global(&self, name: &str, value: Value) {
        let mut w = self.writes.lock().unwrap();
        let before = self.globals.get(name);
        w.entry(name.to_string()).or_insert_with(|| (before, value.clone())).1 = value.clone();
        self.globals.set(name, value);
    }

    fn preempted(&self) -> bool {
        self.ctl.is_preempted()
    }

    fn wait(&self, ms: u64) -> bool {
        self.gate();
        let deadline = Instant::now() + Duration::from_millis(ms);
        let ctl = &self.ctl;
        !self.signal.wait_until(Some(deadline), || ctl.is_preempted())
    }

    fn call(&self, service: &str, args: &Value) -> Result<Value, String> {
        self.gate();
        let handler = self.services.get(service).ok_or_else(|| format!("no handler for service `{service}`"))?;
        let (tx, rx) = crossbeam_channel::bounded(1);
        let args = args.clone();
        std::thread::spawn(move || {
            let _ = tx.send(handler(&args));
        });
        rx.recv_timeout(self.call_timeout)
            .map_err(|_| format!("service `{service}` timed out after {:?}", self.call_timeout))?
    }

    fn log(&self, level: &str, message: &str) {
        let lvl = match level {
            "debug" => log::Level::Debug,
            "warn" => log::Level::Warn,
            "error" => log::Level::Error,
            _ => log::Level::Info,
        };
        log::log!(target: "orc::script", lvl, "{}: {message}", self.path);
        self.bus.log(self.path.clone(), level, message);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn host(ctl: Arc<ScriptCtl>, signal: Arc<Signal>) -> EngineHost {
        EngineHost {
            ticket: 1,
            path: "root".parse().unwrap(),
            ctl,
            signal,
            worker_tx: None,
            globals: Arc::new(GlobalStore::new()),
            bus: Arc::new(Bus::default()),
            services: ServiceRegistry::default(),
            call_timeout: Duration::from_millis(50),
            writes: Mutex::new(GlobalWrites::new()),
        }
    }

    #[test]
    fn wait_is_cut_short_by_preemption() {
        let ctl = Arc::new(ScriptCtl::default());
        ctl.release();
        let signal = Arc::new(Signal::default());
        let h = host(ctl.clone(), signal.clone());
        let t = std::thread::spawn(move || h.wait(60_000));
        std::thread::sleep(Duration::from_millis(20));
        ctl.preempt();
        signal.notify();
        assert!(!t.join().unwrap());
    }

    #[test]
    fn slow_service_times_out() {
        let ctl = Arc::new(ScriptCtl::default());
        ctl.release();
        let h = host(ctl, Arc::new(Signal::default()));
        h.services.register("slow", Arc::new(|_| {
            std::thread::sleep(Duration::from_millis(500));
            Ok(Value::Int(1))
        }));
        h.services.register("echo", Arc::new(|v| Ok(v.clone())));
        assert!(h.call("slow", &Value::Int(0)).unwrap_err().contains("timed out"));
        assert_eq!(h.call("echo", &Value::Int(3)), Ok(Value::Int(3)));
        assert!(h.call("nope", &Value::Int(0)).is_err());
    }

    #[test]
    fn writes_keep_first_before_value() {
        let h = host(Arc::new(ScriptCtl::default()), Arc::new(Signal::default()));
        h.globals.set("g", Value::Int(1));
        h.set_global("g", Value::Int(2));
        h.set_global("g", Value::Int(3));
        h.set_global("n", Value::Int(9));
        let w = h.take_writes();
        assert_eq!(w["g"], (Some(Value::Int(1)), Value::Int(3)));
        assert_eq!(w["n"], (None, Value::Int(9)));
    }
}
