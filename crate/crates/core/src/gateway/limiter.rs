use std::sync::{Condvar, Mutex};

#[derive(Debug, Default)]
struct State {
    inflight: usize,
    peak: usize,
}

/// Counting semaphore that never admits more than `limit` holders.
#[derive(Debug)]
pub struct InflightLimiter {
    limit: usize,
    state: Mutex<State>,
    freed: Condvar,
}

pub struct Permit<'a> {
    owner: &'a InflightLimiter,
}

impl InflightLimiter {
    pub fn new(limit: usize) -> Self {
        InflightLimiter {
            limit: limit.max(1),
            state: Mutex::new(State::default()),
            freed: Condvar::new(),
        }
    }

    pub fn limit(&self) -> usize {
        self.limit
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut state = self.state.lock().expect("limiter lock poisoned");
        while state.inflight >= self.limit {
            state = self.freed.wait(state).expect("limiter lock poisoned");
        }
        state.inflight += 1;
        state.peak = state.peak.max(state.inflight);
        Permit { owner: self }
    }

    pub fn peak(&self) -> usize {
        self.state.lock().expect("limiter lock poisoned").peak
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut state = self.owner.state.lock().expect("limiter lock poisoned");
        state.inflight -= 1;
        self.owner.freed.notify_one();
    }
}
