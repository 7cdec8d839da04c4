//! Worker pool that maps jobs concurrently but yields results in job order.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::JoinHandle;

pub struct Prefetcher<J, O> {
    inner: Inner<J, O>,
    next: usize,
    len: usize,
}

enum Inner<J, O> {
    Inline {
        jobs: Vec<J>,
        f: Arc<dyn Fn(&J) -> O + Send + Sync>,
    },
    Pool {
        rx: Receiver<(usize, O)>,
        pending: BTreeMap<usize, O>,
        stop: Arc<AtomicBool>,
        handles: Vec<JoinHandle<()>>,
    },
}

impl<J, O> Prefetcher<J, O>
where
    J: Send + Sync + 'static,
    O: Send + 'static,
{
    /// With `workers == 0` each job runs when its result is requested.
    /// `depth` bounds the channel between workers and the consumer.
    pub fn new(jobs: Vec<J>, workers: usize, depth: usize, f: Arc<dyn Fn(&J) -> O + Send + Sync>) -> Self {
        let len = jobs.len();
        if workers == 0 || len == 0 {
            return Self {
                inner: Inner::Inline { jobs, f },
                next: 0,
                len,
            };
        }
        let jobs = Arc::new(jobs);
        let cursor = Arc::new(AtomicUsize::new(0));
        let stop = Arc::new(AtomicBool::new(false));
        let (tx, rx) = sync_channel(depth.max(1));
        let handles = (0..workers.min(len))
            .map(|_| {
                let (jobs, cursor, stop, tx, f) = (jobs.clone(), cursor.clone(), stop.clone(), tx.clone(), f.clone());
                std::thread::spawn(move || loop {
                    if stop.load(Ordering::Relaxed) {
                        return;
                    }
                    let i = cursor.fetch_add(1, Ordering::Relaxed);
                    if i >= jobs.len() {
                        return;
                    }
                    if tx.send((i, f(&jobs[i]))).is_err() {
                        return;
                    }
                })
            })
            .collect();
        Self {
            inner: Inner::Pool {
                rx,
                pending: BTreeMap::new(),
                stop,
                handles,
            },
            next: 0,
            len,
        }
    }
}

impl<J, O> Iterator for Prefetcher<J, O> {
    type Item = O;

    fn next(&mut self) -> Option<O> {
        if self.next >= self.len {
            return None;
        }
        let i = self.next;
        self.next += 1;
        match &mut self.inner {
            Inner::Inline { jobs, f } => Some(f(&jobs[i])),
            Inner::Pool { rx, pending, .. } => loop {
                if let Some(o) = pending.remove(&i) {
                    return Some(o);
                }
                let (j, o) = rx.recv().expect("workers outlive pending jobs");
                pending.insert(j, o);
            },
        }
    }
}

impl<J, O> Drop for Prefetcher<J, O> {
    fn drop(&mut self) {
        if let Inner::Pool { rx, stop, handles, .. } = &mut self.inner {
            stop.store(true, Ordering::Relaxed);
            // unblock workers waiting on a full channel
            while rx.try_recv().is_ok() {}
            for h in handles.drain(..) {
                while !h.is_finished() {
                    while rx.try_recv().is_ok() {}
                    std::thread::yield_now();
                }
                let _ = h.join();
            }
        }
    }
}
