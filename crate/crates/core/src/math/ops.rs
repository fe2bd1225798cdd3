//! Forward kernels shared by the tape and by plain tensor callers.

use rand::Rng;

use super::tensor::{norm, Tensor};
use crate::error::{NrkgError, Result};

/// Conventional LeakyReLU negative slope.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Rows with a Euclidean norm at or below this are rejected by [`l2_normalize`].
pub const NORM_EPS: f64 = 1e-12;

/// `x W + b`, bias broadcast over rows.
pub fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut out = x.matmul(w)?;
    let m = out.cols();
    if b.len() != m {
        return Err(NrkgError::Dimension(format!(
            "bias {:?} against output {:?}",
            b.shape(),
            out.shape()
        )));
    }
    for row in out.values_mut().chunks_mut(m) {
        row.iter_mut().zip(b.values()).for_each(|(o, bv)| *o += bv);
    }
    Ok(out)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    let mut out = x.clone();
    out.values_mut().iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v *= slope
        }
    });
    out
}

/// Scales every row to unit Euclidean norm.
pub fn l2_normalize(v: &Tensor) -> Result<Tensor> {
    l2_normalize_with_norms(v).map(|(t, _)| t)
}

pub(crate) fn l2_normalize_with_norms(v: &Tensor) -> Result<(Tensor, Vec<f64>)> {
    let (n, _) = v.dims2();
    let mut out = v.clone();
    let mut norms = Vec::with_capacity(n);
    for i in 0..n {
        let nrm = norm(v.row(i));
        if nrm.is_nan() || nrm <= NORM_EPS {
            return Err(NrkgError::DegenerateRow { row: i, norm: nrm });
        }
        out.row_mut(i).iter_mut().for_each(|x| *x /= nrm);
        norms.push(nrm);
    }
    Ok((out, norms))
}

/// Inverted-dropout multipliers: `0` with probability `rate`, else `1/(1-rate)`.
pub(crate) fn dropout_scales<R: Rng + ?Sized>(n: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..n)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

/// Inverted dropout applied to a tensor; identity when not training.
pub fn dropout_mask<R: Rng + ?Sized>(x: &Tensor, rate: f64, rng: &mut R, training: bool) -> Tensor {
    if !training || rate == 0.0 {
        return x.clone();
    }
    let scales = dropout_scales(x.len(), rate, rng);
    let mut out = x.clone();
    out.values_mut().iter_mut().zip(scales).for_each(|(v, s)| *v *= s);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn affine_examples() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let y = affine(&x, &Tensor::identity(2), &Tensor::vector(vec![0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(y.values(), &[1.0, 2.0]);

        let x = Tensor::identity(2);
        let w = Tensor::from_rows(&[vec![2.0, 0.0], vec![0.0, 3.0]]).unwrap();
        let b = Tensor::vector(vec![1.0, 1.0]).unwrap();
        assert_eq!(affine(&x, &w, &b).unwrap().values(), &[3.0, 1.0, 1.0, 4.0]);

        let err = affine(&x, &Tensor::zeros(&[3, 2]), &b).unwrap_err();
        assert!(matches!(err, NrkgError::Dimension(_)));
    }

    #[test]
    fn leaky_relu_examples() {
        let y = leaky_relu(&Tensor::vector(vec![2.0, -1.0, 0.0]).unwrap(), LEAKY_SLOPE);
        assert_eq!(y.values(), &[2.0, -0.01, 0.0]);
    }

    #[test]
    fn l2_normalize_examples() {
        let y = l2_normalize(&Tensor::from_rows(&[vec![3.0, 4.0]]).unwrap()).unwrap();
        assert_eq!(y.values(), &[0.6, 0.8]);
        let y = l2_normalize(&Tensor::from_rows(&[vec![1.0, 0.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(y.values(), &[1.0, 0.0, 0.0]);
        let err = l2_normalize(&Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap()).unwrap_err();
        assert!(matches!(err, NrkgError::DegenerateRow { row: 1, .. }));
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::vector(vec![1.0, -2.0, 3.0]).unwrap();
        assert_eq!(dropout_mask(&x, 0.0, &mut rng, true), x);
        assert_eq!(dropout_mask(&x, 0.5, &mut rng, false), x);
    }

    #[test]
    fn dropout_preserves_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::filled(&[100_000], 1.0);
        let y = dropout_mask(&x, 0.5, &mut rng, true);
        let mean = y.sum() / y.len() as f64;
        assert!((0.98..=1.02).contains(&mean), "mean {mean}");
        assert!(y.values().iter().all(|&v| v == 0.0 || v == 2.0));
    }
}
