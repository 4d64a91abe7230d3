//! Cosine annealing from lr_init down to lr_min, reaching lr_min exactly
//! in the last epoch.

pub fn cosine_lr(epoch: usize, total_epochs: usize, lr_init: f64, lr_min: f64) -> f64 {
    if total_epochs < 2 {
        return lr_init;
    }
    debug_assert!(epoch < total_epochs);
    let t = epoch as f64 / (total_epochs - 1) as f64;
    lr_min + 0.5 * (lr_init - lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_epoch_is_lr_init() {
        assert_eq!(cosine_lr(0, 30, 4e-4, 1e-6), 4e-4);
    }

    #[test]
    fn last_epoch_is_lr_min() {
        let lr = cosine_lr(29, 30, 4e-4, 1e-6);
        assert!((lr - 1e-6).abs() < 1e-18, "{lr}");
    }

    #[test]
    fn midpoint_is_the_average() {
        // 31 epochs: epoch 15 sits exactly at cos(pi/2) = 0
        let lr = cosine_lr(15, 31, 4e-4, 1e-6);
        assert!((lr - (4e-4 + 1e-6) / 2.0).abs() < 1e-18);
    }

    #[test]
    fn single_epoch_returns_lr_init() {
        assert_eq!(cosine_lr(0, 1, 4e-4, 1e-6), 4e-4);
    }

    #[test]
    fn monotonically_non_increasing() {
        let mut last = f64::INFINITY;
        for e in 0..50 {
            let lr = cosine_lr(e, 50, 8e-4, 1e-6);
            assert!(lr <= last);
            last = lr;
        }
    }
}
