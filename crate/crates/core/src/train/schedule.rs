/// Reduce-on-plateau learning-rate control in "min" mode.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
    pub min_lr: f64,
    best: f64,
    stagnant: usize,
}

impl PlateauScheduler {
    pub const FACTOR: f64 = 0.5;
    pub const PATIENCE: usize = 3;
    pub const THRESHOLD: f64 = 1e-8;
    pub const MIN_LR: f64 = 1e-6;

    pub fn new(lr: f64) -> Self {
        Self::with(lr, Self::FACTOR, Self::PATIENCE, Self::MIN_LR)
    }

    pub fn with(lr: f64, factor: f64, patience: usize, min_lr: f64) -> Self {
        Self {
            lr,
            factor,
            patience,
            threshold: Self::THRESHOLD,
            min_lr,
            best: f64::INFINITY,
            stagnant: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn stagnant_epochs(&self) -> usize {
        self.stagnant
    }

    /// Feeds one epoch's validation loss. An improvement is a drop of more
    /// than `threshold` below the best loss; the `patience`-th consecutive
    /// epoch without one sets `lr = max(lr * factor, min_lr)` and restarts
    /// the count. Returns whether a reduction fired.
    pub fn step(&mut self, val_loss: f64) -> bool {
        if val_loss < self.best - self.threshold {
            self.best = val_loss;
            self.stagnant = 0;
            return false;
        }
        self.stagnant += 1;
        if self.stagnant >= self.patience {
            self.lr = (self.lr * self.factor).max(self.min_lr);
            self.stagnant = 0;
            return true;
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn halves_on_third_stagnant_epoch() {
        let mut s = PlateauScheduler::new(1e-3);
        assert!(!s.step(0.4));
        assert!(!s.step(0.5));
        assert!(!s.step(0.5));
        assert!(s.step(0.5));
        assert_eq!(s.lr, 5e-4);
        assert!(!s.step(0.5));
        assert_eq!(s.lr, 5e-4);
    }

    #[test]
    fn floor_at_min_lr() {
        let mut s = PlateauScheduler::new(1.5e-6);
        s.step(1.0);
        for _ in 0..3 {
            s.step(1.0);
        }
        assert_eq!(s.lr, 1e-6);
    }

    #[test]
    fn decreasing_losses_keep_lr() {
        let mut s = PlateauScheduler::new(1e-3);
        for i in 0..50 {
            assert!(!s.step(1.0 - i as f64 * 0.01));
        }
        assert_eq!(s.lr, 1e-3);
    }

    proptest! {
        #[test]
        fn lr_nonincreasing_and_floored(losses in proptest::collection::vec(0.0f64..2.0, 1..80)) {
            let mut s = PlateauScheduler::new(1e-3);
            let mut prev = s.lr;
            for l in losses {
                s.step(l);
                prop_assert!(s.lr <= prev);
                prop_assert!(s.lr >= s.min_lr);
                prop_assert!(s.stagnant_epochs() < s.patience);
                prev = s.lr;
            }
        }
    }
}
