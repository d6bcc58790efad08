//! Step schedules for the learning rate and batch-norm momentum.

/// Epochs between halvings of the learning rate (and of `1 − momentum`).
pub const DECAY_EVERY: usize = 20;
pub const DECAY_RATE: f64 = 0.5;
pub const BN_MOMENTUM_START: f64 = 0.5;
pub const BN_MOMENTUM_MAX: f64 = 0.99;

pub fn lr_at(epoch: usize, base_lr: f64) -> f64 {
    base_lr * DECAY_RATE.powi((epoch / DECAY_EVERY) as i32)
}

/// Weight given to the old running statistics; rises 0.5 → 0.99 on the
/// same staircase as the learning rate.
pub fn bn_momentum_at(epoch: usize) -> f64 {
    let stage = (epoch / DECAY_EVERY) as i32;
    BN_MOMENTUM_MAX.min(1.0 - (1.0 - BN_MOMENTUM_START) * DECAY_RATE.powi(stage))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learning_rate_staircase() {
        assert_eq!(lr_at(0, 0.001), 0.001);
        assert_eq!(lr_at(19, 0.001), 0.001);
        assert_eq!(lr_at(20, 0.001), 0.0005);
        assert_eq!(lr_at(45, 0.001), 0.00025);
    }

    #[test]
    fn momentum_staircase() {
        assert_eq!(bn_momentum_at(0), 0.5);
        assert_eq!(bn_momentum_at(20), 0.75);
        assert_eq!(bn_momentum_at(10_000), 0.99);
        let mut prev = 0.0;
        for e in 0..400 {
            let m = bn_momentum_at(e);
            assert!(m >= prev && m <= 0.99);
            prev = m;
        }
    }
}
