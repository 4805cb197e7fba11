use thiserror::Error;

use super::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("gradient for parameter {index} contains a non-finite value; training diverged")]
    Diverged { index: usize },
    #[error("parameter {index} has shape {param:?} but its gradient has shape {grad:?}")]
    ShapeMismatch {
        index: usize,
        param: Vec<usize>,
        grad: Vec<usize>,
    },
    #[error("learning rate must be positive and finite, got {0}")]
    BadLearningRate(f64),
    #[error("{params} parameters but {grads} gradients")]
    CountMismatch { params: usize, grads: usize },
}

/// Plain gradient descent: `θ ← θ − lr·g`.
///
/// Everything is validated before any parameter is touched, so a rejected
/// step leaves `params` unchanged.
pub fn sgd_step(params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<(), OptimError> {
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(OptimError::BadLearningRate(lr));
    }
    if params.len() != grads.len() {
        return Err(OptimError::CountMismatch {
            params: params.len(),
            grads: grads.len(),
        });
    }
    for (index, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(OptimError::ShapeMismatch {
                index,
                param: p.shape().to_vec(),
                grad: g.shape().to_vec(),
            });
        }
        if !g.all_finite() {
            return Err(OptimError::Diverged { index });
        }
    }
    for (p, g) in params.iter_mut().zip(grads) {
        for (theta, d) in p.data_mut().iter_mut().zip(g.data()) {
            *theta -= lr * d;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_matches_hand_arithmetic() {
        let mut p = vec![Tensor::scalar(1.0)];
        sgd_step(&mut p, &[Tensor::scalar(2.0)], 0.1).unwrap();
        assert!((p[0].data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = vec![Tensor::from_vec(vec![1.5, -2.0])];
        sgd_step(&mut p, &[Tensor::zeros(&[2])], 0.3).unwrap();
        assert_eq!(p[0].data(), &[1.5, -2.0]);
    }

    #[test]
    fn step_on_square_decreases_it() {
        for &lr in &[0.01, 0.1, 0.5, 0.99] {
            let theta = 1.7;
            let mut p = vec![Tensor::scalar(theta)];
            sgd_step(&mut p, &[Tensor::scalar(2.0 * theta)], lr).unwrap();
            let after = p[0].data()[0];
            assert!(after * after < theta * theta, "lr {lr}");
        }
    }

    #[test]
    fn non_finite_gradient_aborts_without_touching_params() {
        let mut p = vec![Tensor::scalar(1.0), Tensor::scalar(2.0)];
        let err = sgd_step(&mut p, &[Tensor::scalar(1.0), Tensor::scalar(f64::NAN)], 0.1);
        assert_eq!(err, Err(OptimError::Diverged { index: 1 }));
        assert_eq!(p[0].data(), &[1.0]);
    }
}
