//! Gaussian kernel density estimates on a ring.

use std::f64::consts::PI;

/// Kernel values beyond this many bandwidths are dropped (below 1e-14).
const CUTOFF: f64 = 8.0;

#[inline]
pub fn gaussian(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Signed distance `x - y` folded into `[-L/2, L/2)`.
#[inline]
pub fn ring_distance(x: f64, y: f64, l: f64) -> f64 {
    (x - y + 0.5 * l).rem_euclid(l) - 0.5 * l
}

/// `sum_i K(d_i / sigma)` and `sum_i K'(d_i / sigma)` over the nearest image
/// and its two neighbours, where `d_i = x - x_i`.
#[inline]
pub(crate) fn kernel_sums(positions: &[f64], sigma: f64, l: f64, x: f64) -> (f64, f64) {
    let mut s = 0.0;
    let mut ds = 0.0;
    let reach = CUTOFF * sigma;
    for &p in positions {
        let d0 = ring_distance(x, p, l);
        for shift in [-l, 0.0, l] {
            let d = d0 + shift;
            if d.abs() > reach {
                continue;
            }
            let z = d / sigma;
            let k = gaussian(z);
            s += k;
            ds -= z * k;
        }
    }
    (s, ds)
}

/// `(1 / (sigma N)) sum_i K(d(x, x_i) / sigma)` with periodic images.
pub fn kde_density(positions: &[f64], sigma: f64, l: f64, x: f64) -> f64 {
    if positions.is_empty() {
        return 0.0;
    }
    kernel_sums(positions, sigma, l, x).0 / (sigma * positions.len() as f64)
}

/// Spatial derivative of [`kde_density`].
pub fn kde_gradient(positions: &[f64], sigma: f64, l: f64, x: f64) -> f64 {
    if positions.is_empty() {
        return 0.0;
    }
    kernel_sums(positions, sigma, l, x).1 / (sigma * sigma * positions.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_vehicle_peak() {
        let v = kde_density(&[3.0], 0.5, 40.0, 3.0);
        assert!((v - 1.0 / ((2.0 * PI).sqrt() * 0.5)).abs() < 1e-15);
        assert!((kde_density(&[3.0], 0.5, 40.0, 43.0) - v).abs() < 1e-14);
    }

    #[test]
    fn wraps_across_origin() {
        let a = kde_density(&[0.1], 0.3, 10.0, 9.9);
        let b = kde_density(&[0.1], 0.3, 10.0, 0.3);
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn integrates_to_one() {
        let l = 20.0;
        let pos = [0.0, 5.3, 19.9, 10.0];
        let m = 10_000;
        let h = l / m as f64;
        let integral: f64 = (0..m)
            .map(|i| {
                let a = kde_density(&pos, 1.0, l, i as f64 * h);
                let b = kde_density(&pos, 1.0, l, (i + 1) as f64 * h);
                0.5 * (a + b) * h
            })
            .sum();
        assert!((integral - 1.0).abs() < 1e-6);
    }

    #[test]
    fn uniform_samples_recover_flat_density() {
        let l = 10.0;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // one jittered sample per stratum
        let pos: Vec<f64> = (0..2000)
            .map(|i| (i as f64 + rng.random_range(0.0..1.0)) * l / 2000.0)
            .collect();
        for i in 0..20 {
            let x = (i as f64 + 0.5) * l / 20.0;
            let d = kde_density(&pos, 0.05 * l, l, x);
            assert!((d * l - 1.0).abs() < 0.01, "x={x} d={d}");
        }
    }

    #[test]
    fn gradient_matches_fd() {
        let pos = [1.0, 1.7, 4.2, 9.8];
        for i in 0..50 {
            let x = i as f64 * 0.2;
            let h = 1e-6;
            let fd = (kde_density(&pos, 0.6, 10.0, x + h) - kde_density(&pos, 0.6, 10.0, x - h))
                / (2.0 * h);
            let an = kde_gradient(&pos, 0.6, 10.0, x);
            assert!((fd - an).abs() < 1e-7);
        }
    }
}
