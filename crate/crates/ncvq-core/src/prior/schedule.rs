//! Cosine mask schedule for training draws and iterative decoding.

use crate::error::{Error, Result};

/// gamma(r) = cos(pi r / 2): 1 at r=0, 0 at r=1, strictly decreasing.
pub fn mask_schedule_gamma(r: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Config(format!("schedule argument {r} outside [0, 1]")));
    }
    Ok((std::f64::consts::FRAC_PI_2 * r).cos())
}

/// Number of positions to mask for a training draw: ceil(gamma(r) * T),
/// floor-guarded so at least one position is always masked.
pub fn train_mask_count(t_lat: usize, r: f64) -> Result<usize> {
    let gamma = mask_schedule_gamma(r)?;
    Ok(((gamma * t_lat as f64).ceil() as usize).clamp(1, t_lat))
}

/// Positions still masked after decoding step `t` of `t_steps`
/// (1-based): ceil(T * gamma(t / t_steps)); zero at the final step.
///
/// gamma(1) is mathematically 0 but cos(pi/2) evaluates to ~6e-17, which
/// ceil would turn into a leftover mask; the endpoint is pinned explicitly.
pub fn masked_after_step(t_lat: usize, t: usize, t_steps: usize) -> usize {
    debug_assert!(t >= 1 && t <= t_steps);
    if t >= t_steps {
        return 0;
    }
    let gamma = (std::f64::consts::FRAC_PI_2 * t as f64 / t_steps as f64).cos();
    (gamma * t_lat as f64).ceil() as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_endpoints_and_midpoint() {
        assert!((mask_schedule_gamma(0.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(mask_schedule_gamma(1.0).unwrap().abs() < 1e-15);
        let mid = mask_schedule_gamma(0.5).unwrap();
        assert!((mid - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn gamma_strictly_decreasing() {
        let mut prev = f64::INFINITY;
        for i in 0..=100 {
            let g = mask_schedule_gamma(i as f64 / 100.0).unwrap();
            assert!(g < prev);
            prev = g;
        }
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(mask_schedule_gamma(-0.1).is_err());
        assert!(mask_schedule_gamma(1.1).is_err());
    }

    #[test]
    fn train_count_floor_guarded() {
        assert_eq!(train_mask_count(20, 1.0).unwrap(), 1);
        assert_eq!(train_mask_count(20, 0.0).unwrap(), 20);
    }

    #[test]
    fn decode_schedule_table_t20() {
        // T_lat = 20, T_steps = 10: ceil(20 * cos(pi t / 20)), 0 at the end
        let mut prev = 20usize;
        for t in 1..=10 {
            let got = masked_after_step(20, t, 10);
            let manual = if t == 10 {
                0
            } else {
                (20.0 * (std::f64::consts::FRAC_PI_2 * t as f64 / 10.0).cos()).ceil() as usize
            };
            assert_eq!(got, manual, "step {t}");
            assert!(got <= prev, "masked count increased at step {t}");
            prev = got;
        }
        assert_eq!(masked_after_step(20, 5, 10), 15); // ceil(20 * 0.70711)
        assert_eq!(masked_after_step(20, 10, 10), 0);
    }
}
