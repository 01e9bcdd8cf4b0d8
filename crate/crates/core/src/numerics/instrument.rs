//! Per-thread counters for gradient machinery. Jacobian-free and
//! gradient-free code paths are verified by reading deltas of these.

use std::cell::Cell;

thread_local! {
    static TAPES: Cell<u64> = const { Cell::new(0) };
    static NODES: Cell<u64> = const { Cell::new(0) };
    static GRADS: Cell<u64> = const { Cell::new(0) };
    static SURROGATE_RECORDINGS: Cell<u64> = const { Cell::new(0) };
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counters {
    /// Tapes constructed.
    pub tapes: u64,
    /// Nodes recorded on any tape.
    pub nodes: u64,
    /// Gradient buffers allocated during reverse sweeps.
    pub grad_buffers: u64,
    /// Surrogate forward passes executed on a recording backend.
    pub surrogate_recordings: u64,
}

impl Counters {
    pub fn since(self, earlier: Counters) -> Counters {
        Counters {
            tapes: self.tapes - earlier.tapes,
            nodes: self.nodes - earlier.nodes,
            grad_buffers: self.grad_buffers - earlier.grad_buffers,
            surrogate_recordings: self.surrogate_recordings - earlier.surrogate_recordings,
        }
    }
}

pub fn snapshot() -> Counters {
    Counters {
        tapes: TAPES.with(Cell::get),
        nodes: NODES.with(Cell::get),
        grad_buffers: GRADS.with(Cell::get),
        surrogate_recordings: SURROGATE_RECORDINGS.with(Cell::get),
    }
}

fn bump(c: &'static std::thread::LocalKey<Cell<u64>>) {
    c.with(|v| v.set(v.get() + 1));
}

pub(crate) fn bump_tapes() {
    bump(&TAPES);
}

pub(crate) fn bump_nodes() {
    bump(&NODES);
}

pub(crate) fn bump_grads() {
    bump(&GRADS);
}

pub fn note_surrogate_recording() {
    bump(&SURROGATE_RECORDINGS);
}
