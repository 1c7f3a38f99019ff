use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::tensor::Tensor;

/// Gain-scaled random orthogonal matrix of shape `rows × cols`.
///
/// Draws a Gaussian matrix, takes the Q factor of its QR decomposition with
/// the signs of `diag(R)` folded in (so the result is Haar-distributed) and
/// transposes when `rows < cols`. The result satisfies `M·Mᵀ = gain²·I` when
/// `rows ≤ cols` and `Mᵀ·M = gain²·I` otherwise.
pub fn orthogonal_init<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Tensor {
    let (tall, short) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    let a = DMatrix::<f64>::from_fn(tall, short, |_, _| StandardNormal.sample(rng));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..short {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    // q is tall × short with orthonormal columns.
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            let v = if rows >= cols { q[(i, j)] } else { q[(j, i)] };
            data.push(gain * v);
        }
    }
    Tensor::from_vec(&[rows, cols], data).expect("dimensions are positive")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gram_error(m: &Tensor, gain: f64) -> f64 {
        let (r, c) = (m.rows(), m.cols());
        let d = m.data();
        let mut worst: f64 = 0.0;
        if r <= c {
            for i in 0..r {
                for j in 0..r {
                    let s: f64 = (0..c).map(|k| d[i * c + k] * d[j * c + k]).sum();
                    let want = if i == j { gain * gain } else { 0.0 };
                    worst = worst.max((s - want).abs());
                }
            }
        } else {
            for i in 0..c {
                for j in 0..c {
                    let s: f64 = (0..r).map(|k| d[k * c + i] * d[k * c + j]).sum();
                    let want = if i == j { gain * gain } else { 0.0 };
                    worst = worst.max((s - want).abs());
                }
            }
        }
        worst
    }

    #[test]
    fn one_by_one_is_unit() {
        let m = orthogonal_init(1, 1, 1.0, &mut crate::rng_from_seed(3));
        assert!((m.data()[0].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn square_and_wide_examples() {
        let mut rng = crate::rng_from_seed(4);
        assert!(gram_error(&orthogonal_init(4, 4, 1.0, &mut rng), 1.0) < 1e-10);
        let m = orthogonal_init(3, 5, 2.0, &mut rng);
        assert_eq!(m.shape(), &[3, 5]);
        assert!(gram_error(&m, 2.0) < 1e-10);
    }

    proptest! {
        #[test]
        fn gain_scaled_orthogonality(rows in 1usize..12, cols in 1usize..12, gain in 0.01f64..3.0, seed: u64) {
            let m = orthogonal_init(rows, cols, gain, &mut crate::rng_from_seed(seed));
            prop_assert!(gram_error(&m, gain) < 1e-10);
        }
    }
}
