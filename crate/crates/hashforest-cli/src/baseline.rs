//! The conventional-concurrency comparison arm: no owners, no
//! mailboxes. Workers pull individual messages off one shared queue and
//! take a per-partition lock for each, so any worker may touch any
//! tree. State and request semantics are identical to the engine's;
//! only the concurrency discipline differs.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam::channel::Sender;
use hashforest::dispatch::{owner_dir, PartitionExecutorState, Request, Response};
use hashforest::error::{Error, Result};
use hashforest::route::TableConfig;
use parking_lot::{Condvar, Mutex};

type Job = (usize, Request, Option<Sender<Response>>);

struct Shared {
    states: Vec<Mutex<PartitionExecutorState>>,
    queue: Mutex<VecDeque<Job>>,
    work_cond: Condvar,
    pending: AtomicUsize,
    idle_mutex: Mutex<()>,
    idle_cond: Condvar,
    shutdown: AtomicBool,
}

pub struct LockBaseline {
    shared: Arc<Shared>,
    workers: Mutex<Vec<std::thread::JoinHandle<()>>>,
}

impl LockBaseline {
    pub fn start(cfg: &TableConfig, data_dir: &Path, workers: usize) -> Result<LockBaseline> {
        assert!(workers >= 1);
        cfg.validate()?;
        let mut states = Vec::with_capacity(cfg.owner_count());
        for table in 0..=cfg.l_tables as u16 {
            for partition in 0..cfg.partitions() {
                states.push(Mutex::new(PartitionExecutorState::new(
                    cfg,
                    table,
                    partition,
                    &owner_dir(data_dir, table),
                )?));
            }
        }
        let shared = Arc::new(Shared {
            states,
            queue: Mutex::new(VecDeque::new()),
            work_cond: Condvar::new(),
            pending: AtomicUsize::new(0),
            idle_mutex: Mutex::new(()),
            idle_cond: Condvar::new(),
            shutdown: AtomicBool::new(false),
        });
        let handles = (0..workers)
            .map(|_| {
                let shared = Arc::clone(&shared);
                std::thread::spawn(move || worker_loop(shared))
            })
            .collect();
        Ok(LockBaseline { shared, workers: Mutex::new(handles) })
    }

    pub fn submit(
        &self,
        partition_index: usize,
        req: Request,
        reply: Option<Sender<Response>>,
    ) -> Result<()> {
        if self.shared.shutdown.load(Ordering::Acquire) {
            return Err(Error::EngineDown);
        }
        self.shared.pending.fetch_add(1, Ordering::AcqRel);
        let mut queue = self.shared.queue.lock();
        queue.push_back((partition_index, req, reply));
        drop(queue);
        self.shared.work_cond.notify_one();
        Ok(())
    }

    pub fn quiesce(&self, timeout: Duration) -> Result<()> {
        let deadline = Instant::now() + timeout;
        let mut guard = self.shared.idle_mutex.lock();
        while self.shared.pending.load(Ordering::Acquire) != 0 {
            if Instant::now() >= deadline {
                return Err(Error::Corruption("baseline quiesce timeout".into()));
            }
            self.shared
                .idle_cond
                .wait_until(&mut guard, deadline.min(Instant::now() + Duration::from_millis(20)));
        }
        Ok(())
    }

    pub fn shutdown(&self) {
        self.shared.shutdown.store(true, Ordering::Release);
        let _ = self.quiesce(Duration::from_secs(30));
        {
            let _guard = self.shared.queue.lock();
            self.shared.work_cond.notify_all();
        }
        let mut workers = self.workers.lock();
        for handle in workers.drain(..) {
            let _ = handle.join();
        }
    }
}

impl Drop for LockBaseline {
    fn drop(&mut self) {
        if !self.shared.shutdown.load(Ordering::Acquire) {
            self.shutdown();
        }
    }
}

fn worker_loop(shared: Arc<Shared>) {
    loop {
        let job = {
            let mut queue = shared.queue.lock();
            loop {
                if let Some(job) = queue.pop_front() {
                    break Some(job);
                }
                if shared.shutdown.load(Ordering::Acquire) {
                    break None;
                }
                shared.work_cond.wait(&mut queue);
            }
        };
        let Some((idx, req, reply)) = job else { return };
        let response = shared.states[idx].lock().apply(&req);
        if let Some(reply) = reply {
            let _ = reply.send(response);
        }
        if shared.pending.fetch_sub(1, Ordering::AcqRel) == 1 {
            let _guard = shared.idle_mutex.lock();
            shared.idle_cond.notify_all();
        }
    }
}
