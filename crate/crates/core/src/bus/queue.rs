use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle, ThreadId};

use super::{Callback, Delivery};

/// Pending deliveries per subscription beyond which the oldest are dropped.
pub const QUEUE_SOFT_LIMIT: usize = 10_000;

#[derive(Default)]
struct State {
    items: VecDeque<Delivery>,
    closed: bool,
}

/// Unbounded-with-soft-limit FIFO feeding one subscription's dispatcher.
#[derive(Default)]
pub(crate) struct DeliveryQueue {
    state: Mutex<State>,
    ready: Condvar,
}

impl DeliveryQueue {
    /// Enqueues `d`, returning the oldest pending delivery if it had to be dropped.
    pub(crate) fn push(&self, d: Delivery) -> Option<Delivery> {
        let mut st = self.state.lock().unwrap();
        if st.closed {
            return None;
        }
        let dropped = if st.items.len() >= QUEUE_SOFT_LIMIT { st.items.pop_front() } else { None };
        st.items.push_back(d);
        self.ready.notify_one();
        dropped
    }

    fn pop(&self) -> Option<Delivery> {
        let mut st = self.state.lock().unwrap();
        loop {
            if st.closed {
                return None;
            }
            if let Some(d) = st.items.pop_front() {
                return Some(d);
            }
            st = self.ready.wait(st).unwrap();
        }
    }

    pub(crate) fn close(&self) {
        let mut st = self.state.lock().unwrap();
        st.closed = true;
        st.items.clear();
        self.ready.notify_all();
    }
}

/// Runs `callback` serially, in queue order, on a dedicated thread.
pub(crate) struct Dispatcher {
    queue: Arc<DeliveryQueue>,
    thread: Option<JoinHandle<()>>,
    thread_id: ThreadId,
}

impl Dispatcher {
    pub(crate) fn spawn(name: String, mut callback: Callback) -> Self {
        let queue = Arc::new(DeliveryQueue::default());
        let q = Arc::clone(&queue);
        let thread = thread::Builder::new()
            .name(name)
            .spawn(move || {
                while let Some(d) = q.pop() {
                    callback(&d);
                }
            })
            .expect("spawn dispatcher thread");
        let thread_id = thread.thread().id();
        Self { queue, thread: Some(thread), thread_id }
    }

    pub(crate) fn queue(&self) -> &Arc<DeliveryQueue> {
        &self.queue
    }

    /// Stops delivery and waits for an in-flight callback, unless called
    /// from that callback.
    pub(crate) fn stop(mut self) {
        self.queue.close();
        if let Some(t) = self.thread.take() {
            if thread::current().id() != self.thread_id {
                let _ = t.join();
            }
        }
    }
}
