/// Discrete choices made during a forward pass: neighbor lists, nearest-point
/// assignments, ball memberships.
///
/// Gradients treat these as constants. For finite-difference checks the
/// choices from the unperturbed pass are recorded and replayed, so the
/// perturbed passes differentiate the same piecewise-smooth branch.
#[derive(Debug, Clone, Default)]
pub struct Selections {
    mode: Mode,
    entries: Vec<Vec<usize>>,
    cursor: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
enum Mode {
    #[default]
    Live,
    Record,
    Replay,
}

impl Selections {
    /// Recompute every choice.
    pub fn live() -> Self {
        Self::default()
    }

    /// Compute choices and remember them.
    pub fn recording() -> Self {
        Self {
            mode: Mode::Record,
            ..Self::default()
        }
    }

    /// Switch a recording to replay from the start.
    pub fn into_replay(self) -> Self {
        Self {
            mode: Mode::Replay,
            entries: self.entries,
            cursor: 0,
        }
    }

    /// Rewind a replay so the next pass sees the same sequence again.
    pub fn rewind(&mut self) {
        self.cursor = 0;
    }

    pub fn recorded(&self) -> usize {
        self.entries.len()
    }

    pub fn choose(&mut self, compute: impl FnOnce() -> Vec<usize>) -> Vec<usize> {
        match self.mode {
            Mode::Live => compute(),
            Mode::Record => {
                let v = compute();
                self.entries.push(v.clone());
                v
            }
            Mode::Replay => {
                let v = self
                    .entries
                    .get(self.cursor)
                    .cloned()
                    .expect("replayed forward pass made more selections than were recorded");
                self.cursor += 1;
                v
            }
        }
    }
}
