//! Quadratic B-spline interpolation by recursive filtering.
//!
//! The sampled quadratic B-spline has the symbol `(z + 6 + 1/z) / 8`. Its
//! inverse is one causal and one anti-causal first-order recursion with pole
//! `z = 2 sqrt(2) - 3` and overall gain 8. Signals are extended by
//! whole-sample symmetry at both ends.

use crate::bspline::{CoefficientVolume, VoxelVolume};

const POLE: f64 = -0.171_572_875_253_809_9; // 2 sqrt(2) - 3
const GAIN: f64 = 8.0;

/// In-place interpolation prefilter of one line.
pub fn prefilter_line(c: &mut [f64]) {
    let n = c.len();
    if n < 2 {
        return;
    }
    let z = POLE;
    for v in c.iter_mut() {
        *v *= GAIN;
    }
    // causal initialization: exact sum over one period of the mirrored signal
    let iz = 1.0 / z;
    let mut zn = z;
    let mut z2n = z.powi(n as i32 - 1);
    let mut sum = c[0] + z2n * c[n - 1];
    z2n *= z2n * iz;
    for v in &c[1..n - 1] {
        sum += (zn + z2n) * v;
        zn *= z;
        z2n *= iz;
    }
    c[0] = sum / (1.0 - zn * zn);
    for k in 1..n {
        c[k] += z * c[k - 1];
    }
    c[n - 1] = (z / (z * z - 1.0)) * (z * c[n - 2] + c[n - 1]);
    for k in (0..n - 1).rev() {
        c[k] = z * (c[k + 1] - c[k]);
    }
}

/// Coefficients whose synthesis interpolates `samples` at the lattice points.
pub fn fit_coefficients(samples: &VoxelVolume) -> CoefficientVolume {
    let [n0, n1, n2] = samples.shape();
    let mut data = samples.data().to_vec();
    let mut line = Vec::new();
    let strides = [n1 * n2, n2, 1];
    for axis in 0..3 {
        let len = samples.shape()[axis];
        let stride = strides[axis];
        for start in 0..n0 * n1 * n2 {
            // visit each line once, from its first element
            if (start / stride) % len != 0 {
                continue;
            }
            line.clear();
            line.extend((0..len).map(|j| data[start + j * stride]));
            prefilter_line(&mut line);
            for (j, v) in line.iter().enumerate() {
                data[start + j * stride] = *v;
            }
        }
    }
    samples.with_data(data).expect("same box")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recon::sample_on_lattice;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pole_is_root_of_symbol() {
        assert!((POLE - (2.0 * 2f64.sqrt() - 3.0)).abs() < 4.0 * f64::EPSILON);
        assert!((POLE * POLE + 6.0 * POLE + 1.0).abs() < 1e-15);
    }

    #[test]
    fn line_filter_inverts_mirrored_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [2, 3, 5, 17] {
            let s: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut c = s.clone();
            prefilter_line(&mut c);
            let at = |k: i64| -> f64 {
                let m = (n as i64 - 1) * 2;
                let mut j = k.rem_euclid(m);
                if j >= n as i64 {
                    j = m - j;
                }
                c[j as usize]
            };
            for k in 0..n as i64 {
                let back = 0.125 * at(k - 1) + 0.75 * at(k) + 0.125 * at(k + 1);
                assert!((back - s[k as usize]).abs() < 1e-12, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn constants_and_zeros_are_fixed() {
        let ones = VoxelVolume::from_fn([5, 6, 7], [0; 3], |_| 1.0);
        let c = fit_coefficients(&ones);
        assert!(c.data().iter().all(|v| (v - 1.0).abs() < 1e-12));
        let zeros = VoxelVolume::zeros([4, 4, 4]);
        assert!(fit_coefficients(&zeros).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn interpolates_random_samples_in_the_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = VoxelVolume::from_fn([16, 16, 16], [-8, -8, -8], |_| rng.random_range(-1.0..1.0));
        let back = sample_on_lattice(&fit_coefficients(&s));
        for i in 0..s.len() {
            let k = s.lattice_index(i);
            if (0..3).all(|a| k[a] > -8 && k[a] < 7) {
                assert!((back.data()[i] - s.data()[i]).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn fitting_samples_of_a_spline_recovers_deep_interior_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = CoefficientVolume::from_fn([26, 26, 26], [0; 3], |_| rng.random_range(-1.0..1.0));
        let fitted = fit_coefficients(&sample_on_lattice(&c));
        for i in 0..c.len() {
            let k = c.lattice_index(i);
            if (0..3).all(|a| k[a] >= 11 && k[a] <= 14) {
                assert!((fitted.data()[i] - c.data()[i]).abs() <= 1e-8);
            }
        }
    }
}
