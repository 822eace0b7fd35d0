use std::io::{self, Write};

use super::{Observer, OscState};
use crate::scalar::Scalar;

/// Writes every `stride`-th observed state as `t,x,y,z,phase`.
pub struct TrajectoryCsv<W: Write> {
    out: W,
    stride: u64,
    seen: u64,
    error: Option<io::Error>,
}

impl<W: Write> TrajectoryCsv<W> {
    pub fn new(mut out: W, stride: u64) -> io::Result<Self> {
        writeln!(out, "t,x,y,z,phase")?;
        Ok(Self {
            out,
            stride: stride.max(1),
            seen: 0,
            error: None,
        })
    }

    /// Flushes and returns the writer, or the first write error.
    pub fn finish(mut self) -> io::Result<W> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        self.out.flush()?;
        Ok(self.out)
    }
}

impl<T: Scalar, W: Write> Observer<T> for TrajectoryCsv<W> {
    fn observe(&mut self, t: T, s: &OscState<T>) {
        let keep = self.seen.is_multiple_of(self.stride);
        self.seen += 1;
        if !keep || self.error.is_some() {
            return;
        }
        if let Err(e) = writeln!(
            self.out,
            "{:.9e},{:.12e},{:.12e},{:.12e},{}",
            t,
            s.x,
            s.y,
            s.z,
            s.phase.label()
        ) {
            self.error = Some(e);
        }
    }
}
