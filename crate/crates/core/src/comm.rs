//! In-process message passing: ranks run as threads of one process and talk
//! through a [`Communicator`].
//!
//! Every collective is a pair of barriers around a shared slot table. Each
//! rank deposits its contribution, waits for the others, reads what it
//! needs, then waits again so no slot is overwritten while a slower rank is
//! still reading. Reductions always combine contributions in ascending rank
//! order, which makes results bit-reproducible for a fixed rank count.

use std::any::Any;
use std::panic::{self, AssertUnwindSafe};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CommError {
    #[error("collective aborted because another rank failed")]
    Aborted,
    #[error("collective cannot complete: a rank exited without joining it")]
    Unmatched,
    #[error("collective mismatch: ranks called different operations or element types")]
    TypeMismatch,
    #[error("all_reduce length mismatch: rank {rank} contributed {len} values, rank 0 contributed {expected}")]
    LengthMismatch { rank: usize, len: usize, expected: usize },
    #[error("all_to_all: rank {rank} {reason}")]
    BlockShape { rank: usize, reason: String },
}

/// A job failure, naming the rank that failed first.
#[derive(Debug, Error)]
pub enum JobError<E> {
    #[error("rank count must be at least 1")]
    NoRanks,
    #[error("rank {rank} failed: {error}")]
    Rank { rank: usize, error: E },
    #[error("rank {rank} panicked: {message}")]
    Panicked { rank: usize, message: String },
}

impl<E> JobError<E> {
    pub fn rank(&self) -> Option<usize> {
        match self {
            JobError::NoRanks => None,
            JobError::Rank { rank, .. } | JobError::Panicked { rank, .. } => Some(*rank),
        }
    }
}

#[derive(Default)]
struct SyncState {
    arrived: usize,
    generation: u64,
    aborted: bool,
    finished: usize,
    first_failure: Option<usize>,
}

type Slot = Mutex<Option<Box<dyn Any + Send>>>;

struct Shared {
    size: usize,
    sync: Mutex<SyncState>,
    cv: Condvar,
    slots: Vec<Slot>,
}

impl Shared {
    fn new(size: usize) -> Self {
        Shared {
            size,
            sync: Mutex::new(SyncState::default()),
            cv: Condvar::new(),
            slots: (0..size).map(|_| Mutex::new(None)).collect(),
        }
    }

    fn sync(&self) -> MutexGuard<'_, SyncState> {
        // A poisoned lock only means some rank panicked; the state is still
        // consistent because every mutation is a single assignment.
        self.sync.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn abort(&self, rank: usize) {
        let mut st = self.sync();
        st.aborted = true;
        st.first_failure.get_or_insert(rank);
        self.cv.notify_all();
    }

    fn finish(&self) {
        let mut st = self.sync();
        st.finished += 1;
        if st.arrived > 0 {
            // Someone is parked in a barrier this rank will never reach.
            st.aborted = true;
            self.cv.notify_all();
        }
    }
}

/// Handle through which a rank participates in collectives.
pub struct Communicator {
    rank: usize,
    shared: Arc<Shared>,
}

impl Communicator {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn size(&self) -> usize {
        self.shared.size
    }

    /// Block until every rank has entered the barrier.
    pub fn barrier(&self) -> Result<(), CommError> {
        let shared = &self.shared;
        let mut st = shared.sync();
        if st.finished > 0 {
            return Err(CommError::Unmatched);
        }
        if st.aborted {
            return Err(CommError::Aborted);
        }
        let generation = st.generation;
        st.arrived += 1;
        if st.arrived == shared.size {
            st.arrived = 0;
            st.generation += 1;
            shared.cv.notify_all();
            return Ok(());
        }
        while st.generation == generation && !st.aborted {
            st = shared.cv.wait(st).unwrap_or_else(|e| e.into_inner());
        }
        if st.generation != generation {
            Ok(())
        } else if st.finished > 0 {
            Err(CommError::Unmatched)
        } else {
            Err(CommError::Aborted)
        }
    }

    fn slot(&self, rank: usize) -> MutexGuard<'_, Option<Box<dyn Any + Send>>> {
        self.shared.slots[rank].lock().unwrap_or_else(|e| e.into_inner())
    }

    fn deposit<T: Send + 'static>(&self, value: T) {
        *self.slot(self.rank) = Some(Box::new(value));
    }

    /// Element-wise sum over all ranks, accumulated in ascending rank order.
    pub fn all_reduce_sum<T>(&self, local: &[T]) -> Result<Vec<T>, CommError>
    where
        T: Copy + Send + std::ops::Add<Output = T> + 'static,
    {
        self.deposit(local.to_vec());
        self.barrier()?;
        let result = self.sum_slots::<T>();
        self.barrier()?;
        result
    }

    fn sum_slots<T>(&self) -> Result<Vec<T>, CommError>
    where
        T: Copy + Send + std::ops::Add<Output = T> + 'static,
    {
        let mut acc: Option<Vec<T>> = None;
        for r in 0..self.size() {
            let guard = self.slot(r);
            let v = guard.as_ref().and_then(|b| b.downcast_ref::<Vec<T>>()).ok_or(CommError::TypeMismatch)?;
            match acc.as_mut() {
                None => acc = Some(v.clone()),
                Some(a) => {
                    if v.len() != a.len() {
                        return Err(CommError::LengthMismatch { rank: r, len: v.len(), expected: a.len() });
                    }
                    for (x, y) in a.iter_mut().zip(v) {
                        *x = *x + *y;
                    }
                }
            }
        }
        Ok(acc.unwrap_or_default())
    }

    /// Personalized exchange: `blocks[j]` goes to rank `j`; the returned
    /// vector's entry `j` is the block rank `j` addressed to this rank.
    pub fn all_to_all<T: Send + 'static>(&self, blocks: Vec<Vec<T>>) -> Result<Vec<Vec<T>>, CommError> {
        self.deposit(blocks);
        self.barrier()?;
        // Every rank reaches the same verdict; the extra barrier keeps the
        // shape check from observing blocks another rank already took.
        let verdict = self.validate_blocks::<T>();
        self.barrier()?;
        let result = verdict.map(|()| self.collect_blocks::<T>());
        self.barrier()?;
        result
    }

    fn validate_blocks<T: Send + 'static>(&self) -> Result<(), CommError> {
        let p = self.size();
        for r in 0..p {
            let guard = self.slot(r);
            let blocks = guard.as_ref().and_then(|b| b.downcast_ref::<Vec<Vec<T>>>()).ok_or(CommError::TypeMismatch)?;
            if blocks.len() != p {
                return Err(CommError::BlockShape {
                    rank: r,
                    reason: format!("supplied {} blocks for {p} ranks", blocks.len()),
                });
            }
            if let Some(first) = blocks.first() {
                if let Some(j) = blocks.iter().position(|b| b.len() != first.len()) {
                    return Err(CommError::BlockShape {
                        rank: r,
                        reason: format!("block {j} has {} elements, block 0 has {}", blocks[j].len(), first.len()),
                    });
                }
            }
        }
        Ok(())
    }

    fn collect_blocks<T: Send + 'static>(&self) -> Vec<Vec<T>> {
        (0..self.size())
            .map(|r| {
                let mut guard = self.slot(r);
                let blocks = guard.as_mut().and_then(|b| b.downcast_mut::<Vec<Vec<T>>>()).expect("validated above");
                std::mem::take(&mut blocks[self.rank])
            })
            .collect()
    }
}

enum Outcome<R, E> {
    Done(R),
    Failed(E),
    Panicked(String),
}

fn panic_message(payload: Box<dyn Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "non-string panic payload".to_string()
    }
}

/// Run `entry` on `size` concurrent ranks and collect their results in rank
/// order. If any rank fails, the job fails with the error of the first rank
/// that failed; ranks blocked in collectives are released with
/// [`CommError::Aborted`].
pub fn spawn_ranks<R, E, F>(size: usize, entry: F) -> Result<Vec<R>, JobError<E>>
where
    F: Fn(&Communicator) -> Result<R, E> + Sync,
    R: Send,
    E: Send,
{
    if size == 0 {
        return Err(JobError::NoRanks);
    }
    let shared = Arc::new(Shared::new(size));
    let entry = &entry;
    let outcomes: Vec<Outcome<R, E>> = thread::scope(|scope| {
        let handles: Vec<_> = (0..size)
            .map(|rank| {
                let comm = Communicator { rank, shared: Arc::clone(&shared) };
                scope.spawn(move || {
                    let outcome = match panic::catch_unwind(AssertUnwindSafe(|| entry(&comm))) {
                        Ok(Ok(r)) => Outcome::Done(r),
                        Ok(Err(e)) => Outcome::Failed(e),
                        Err(payload) => Outcome::Panicked(panic_message(payload)),
                    };
                    match outcome {
                        Outcome::Done(_) => comm.shared.finish(),
                        _ => comm.shared.abort(rank),
                    }
                    outcome
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap_or_else(|p| Outcome::Panicked(panic_message(p)))).collect()
    });

    let first_failure = shared.sync().first_failure;
    match first_failure {
        None => Ok(outcomes
            .into_iter()
            .map(|o| match o {
                Outcome::Done(r) => r,
                _ => unreachable!("a failed rank always records itself"),
            })
            .collect()),
        Some(rank) => {
            let outcome = outcomes.into_iter().nth(rank).expect("rank in range");
            Err(match outcome {
                Outcome::Failed(error) => JobError::Rank { rank, error },
                Outcome::Panicked(message) => JobError::Panicked { rank, message },
                Outcome::Done(_) => unreachable!("first failure cannot have succeeded"),
            })
        }
    }
}
