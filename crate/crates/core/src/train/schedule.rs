//! Validation-accuracy plateau decay and early stopping. "Improvement"
//! means strictly greater than the best value seen so far.

/// Multiplies the learning rate by `factor` once `patience` consecutive
/// epochs pass without improvement, then starts counting again.
#[derive(Clone, Debug)]
pub struct Plateau {
    pub factor: f64,
    pub patience: usize,
    best: Option<f64>,
    wait: usize,
}

impl Plateau {
    pub fn new(factor: f64, patience: usize) -> Self {
        Self {
            factor,
            patience,
            best: None,
            wait: 0,
        }
    }

    /// Feeds one epoch's metric; true when the rate should be reduced
    /// before the next epoch.
    pub fn observe(&mut self, metric: f64) -> bool {
        if self.best.is_none_or(|b| metric > b) {
            self.best = Some(metric);
            self.wait = 0;
            return false;
        }
        self.wait += 1;
        if self.wait >= self.patience {
            self.wait = 0;
            return true;
        }
        false
    }
}

/// Signals a stop after `patience` consecutive epochs without improvement
/// and remembers the best epoch.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: 0,
            wait: 0,
        }
    }

    /// `epoch` is 1-based. Returns true when training should stop.
    pub fn observe(&mut self, epoch: usize, metric: f64) -> bool {
        if self.best.is_none_or(|b| metric > b) {
            self.best = Some(metric);
            self.best_epoch = epoch;
            self.wait = 0;
            return false;
        }
        self.wait += 1;
        self.wait >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Outcome of running both rules over a metric trace.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    /// Learning rate in effect during each epoch (index 0 is epoch 1).
    pub lrs: Vec<f64>,
    /// Epochs at whose end the rate was reduced.
    pub reductions: Vec<usize>,
    /// Epoch at whose end training stopped early.
    pub stopped_at: Option<usize>,
    pub best_epoch: usize,
}

/// Replays the schedule the trainer applies over per-epoch validation
/// accuracies, truncated at `max_epochs` or an early stop.
pub fn simulate(metrics: &[f64], lr_init: f64, factor: f64, plateau_patience: usize, stop_patience: usize, max_epochs: usize) -> Schedule {
    let mut plateau = Plateau::new(factor, plateau_patience);
    let mut stopper = EarlyStopping::new(stop_patience);
    let mut lr = lr_init;
    let mut out = Schedule {
        lrs: Vec::new(),
        reductions: Vec::new(),
        stopped_at: None,
        best_epoch: 0,
    };
    for (i, &m) in metrics.iter().take(max_epochs).enumerate() {
        let epoch = i + 1;
        out.lrs.push(lr);
        if plateau.observe(m) {
            lr *= factor;
            out.reductions.push(epoch);
        }
        if stopper.observe(epoch, m) {
            out.stopped_at = Some(epoch);
            break;
        }
    }
    out.best_epoch = stopper.best_epoch();
    out
}
