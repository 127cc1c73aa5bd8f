#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Continue,
    Stop,
}

/// Tracks the best validation score and signals a stop once `patience`
/// consecutive epochs fail to beat it.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper { patience, best: None, stale: 0 }
    }

    pub fn observe(&mut self, epoch: usize, score: f64) -> Verdict {
        let improved = !score.is_nan() && self.best.is_none_or(|(_, best)| score > best);
        if improved {
            self.best = Some((epoch, score));
            self.stale = 0;
            return Verdict::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            Verdict::Stop
        } else {
            Verdict::Continue
        }
    }

    /// Epoch and score of the best observation so far.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}
