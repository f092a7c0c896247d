//! Time-indexed pose history with interpolated lookup.

use std::collections::VecDeque;
use std::sync::{Arc, RwLock};

use crate::geom::Pose;
use crate::transport::TransportError;

pub const DEFAULT_CAPACITY: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lookup {
    pub pose: Pose,
    /// The query fell outside the stored span and was clamped.
    pub extrapolated: bool,
}

/// Bounded ring of `(timestamp_ns, Pose)` with strictly increasing stamps.
#[derive(Clone, Debug)]
pub struct TimedPoseBuffer {
    frame_id: u8,
    capacity: usize,
    entries: VecDeque<(u64, Pose)>,
}

impl TimedPoseBuffer {
    pub fn new(frame_id: u8, capacity: usize) -> Self {
        assert!(capacity > 0, "capacity must be positive");
        Self {
            frame_id,
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn frame_id(&self) -> u8 {
        self.frame_id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Oldest and newest stamps.
    pub fn span(&self) -> Option<(u64, u64)> {
        Some((self.entries.front()?.0, self.entries.back()?.0))
    }

    /// Appends an entry, dropping the oldest when full.
    pub fn push(&mut self, stamp_ns: u64, pose: Pose) -> Result<(), TransportError> {
        if let Some(&(last, _)) = self.entries.back() {
            if stamp_ns <= last {
                return Err(TransportError::NonMonotonic { last, got: stamp_ns });
            }
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((stamp_ns, pose));
        Ok(())
    }

    /// Pose at `stamp_ns`: exact entry, interpolation between neighbours, or
    /// the nearest end flagged as extrapolated.
    pub fn lookup(&self, stamp_ns: u64) -> Result<Lookup, TransportError> {
        let (first, last) = self.span().ok_or(TransportError::EmptyBuffer)?;
        if stamp_ns <= first || stamp_ns >= last {
            let (pose, edge) = if stamp_ns <= first {
                (self.entries[0].1, first)
            } else {
                (self.entries[self.entries.len() - 1].1, last)
            };
            return Ok(Lookup {
                pose,
                extrapolated: stamp_ns != edge,
            });
        }
        // First entry with stamp >= query; both neighbours exist here.
        let hi = self.entries.partition_point(|&(t, _)| t < stamp_ns);
        let (t1, p1) = self.entries[hi];
        if t1 == stamp_ns {
            return Ok(Lookup {
                pose: p1,
                extrapolated: false,
            });
        }
        let (t0, p0) = self.entries[hi - 1];
        let s = (stamp_ns - t0) as f64 / (t1 - t0) as f64;
        Ok(Lookup {
            pose: p0.interpolate(&p1, s),
            extrapolated: false,
        })
    }
}

/// One writer, many readers. Insertion holds the lock for a single push.
#[derive(Clone, Debug)]
pub struct SharedPoseBuffer(Arc<RwLock<TimedPoseBuffer>>);

impl SharedPoseBuffer {
    pub fn new(buffer: TimedPoseBuffer) -> Self {
        Self(Arc::new(RwLock::new(buffer)))
    }

    pub fn push(&self, stamp_ns: u64, pose: Pose) -> Result<(), TransportError> {
        self.0.write().unwrap_or_else(|e| e.into_inner()).push(stamp_ns, pose)
    }

    pub fn lookup(&self, stamp_ns: u64) -> Result<Lookup, TransportError> {
        self.0.read().unwrap_or_else(|e| e.into_inner()).lookup(stamp_ns)
    }
}
