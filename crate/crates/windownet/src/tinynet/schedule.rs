//! Validation-loss plateau scheduling and early stopping.
//!
//! "Improvement" is a strict decrease of more than `MIN_DELTA` below the
//! best loss seen so far. The decay counter resets both on improvement and
//! after a decay fires; the stop counter resets only on improvement, so a
//! single stale streak first decays the learning rate and then stops.

/// Tie-breaking margin for "the loss improved".
pub const MIN_DELTA: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlateauAction {
    Hold,
    Decay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopAction {
    Continue,
    Stop,
}

/// Counts epochs since the last improvement or decay event.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauTracker {
    patience: usize,
    best: f64,
    stale: usize,
}

impl PlateauTracker {
    pub fn new(patience: usize) -> Self {
        PlateauTracker {
            patience,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    pub fn observe(&mut self, loss: f64) -> PlateauAction {
        if loss < self.best - MIN_DELTA {
            self.best = loss;
            self.stale = 0;
            return PlateauAction::Hold;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            self.stale = 0;
            PlateauAction::Decay
        } else {
            PlateauAction::Hold
        }
    }

    pub fn state(&self) -> (f64, usize) {
        (self.best, self.stale)
    }

    pub fn restore(patience: usize, best: f64, stale: usize) -> Self {
        PlateauTracker { patience, best, stale }
    }
}

/// Counts epochs since the last improvement; never resets otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopTracker {
    patience: usize,
    best: f64,
    stale: usize,
}

impl EarlyStopTracker {
    pub fn new(patience: usize) -> Self {
        EarlyStopTracker {
            patience,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    pub fn observe(&mut self, loss: f64) -> StopAction {
        if loss < self.best - MIN_DELTA {
            self.best = loss;
            self.stale = 0;
            return StopAction::Continue;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            StopAction::Stop
        } else {
            StopAction::Continue
        }
    }

    pub fn state(&self) -> (f64, usize) {
        (self.best, self.stale)
    }

    pub fn restore(patience: usize, best: f64, stale: usize) -> Self {
        EarlyStopTracker { patience, best, stale }
    }
}

/// Action after the most recent epoch of `history` (a full replay of the
/// state machine over the validation losses).
pub fn plateau_scheduler(history: &[f64], patience: usize) -> PlateauAction {
    let mut tracker = PlateauTracker::new(patience);
    let mut last = PlateauAction::Hold;
    for &loss in history {
        last = tracker.observe(loss);
    }
    last
}

/// Terminal counterpart of `plateau_scheduler` with the stop rule.
pub fn early_stop(history: &[f64], patience: usize) -> StopAction {
    let mut tracker = EarlyStopTracker::new(patience);
    let mut last = StopAction::Continue;
    for &loss in history {
        last = tracker.observe(loss);
    }
    last
}
