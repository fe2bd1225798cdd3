//! Graph convolution over the canonical embeddings and the property decoder.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NrkgError, Result};
use crate::math::{Parameter, SparseMatrix, Tape, Tensor, Var, LEAKY_SLOPE};
use crate::model::AffineSlots;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu(f64),
    Identity,
}

/// `H <- act(A H W)` repeated once per weight slot, without bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GcnStack {
    pub layers: Vec<usize>,
    pub activation: Activation,
}

impl GcnStack {
    pub fn leaky(layers: Vec<usize>) -> Self {
        Self {
            layers,
            activation: Activation::LeakyRelu(LEAKY_SLOPE),
        }
    }

    /// Applies the stack; an empty stack returns `x` unchanged.
    pub fn forward(&self, tape: &mut Tape, params: &[Parameter], adjacency: &Arc<SparseMatrix>, x: Var) -> Result<Var> {
        let (n, _) = tape.value(x).dims2();
        if adjacency.rows() != n || adjacency.cols() != n {
            return Err(NrkgError::Dimension(format!(
                "adjacency is {}x{} but there are {n} node rows",
                adjacency.rows(),
                adjacency.cols()
            )));
        }
        let mut h = x;
        for &slot in &self.layers {
            let w = tape.param(slot, &params[slot]);
            let ax = tape.sparse_matmul(Arc::clone(adjacency), h)?;
            h = tape.matmul(ax, w)?;
            if let Activation::LeakyRelu(s) = self.activation {
                h = tape.leaky_relu(h, s);
            }
        }
        Ok(h)
    }
}

/// Two-layer regression head: affine, LeakyReLU, dropout, affine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyDecoder {
    pub layers: Vec<AffineSlots>,
    pub dropout: f64,
}

impl PropertyDecoder {
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        params: &[Parameter],
        x: Var,
        rng: &mut R,
        training: bool,
    ) -> Result<Var> {
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            let last = i + 1 == self.layers.len();
            if last {
                h = tape.dropout(h, self.dropout, rng, training)?;
            }
            let w = tape.param(l.weight, &params[l.weight]);
            let b = tape.param(l.bias, &params[l.bias]);
            h = tape.affine(h, w, b)?;
            if !last {
                h = tape.leaky_relu(h, LEAKY_SLOPE);
            }
        }
        Ok(h)
    }
}

/// Mean squared error against constant targets.
pub fn loss_mse(tape: &mut Tape, predictions: Var, targets: &Tensor) -> Result<Var> {
    if targets.is_empty() || tape.value(predictions).is_empty() {
        return Err(NrkgError::EmptyBatch("no labeled nodes in batch".into()));
    }
    let t = tape.constant(targets.clone());
    let d = tape.sub(predictions, t)?;
    let sq = tape.square(d);
    Ok(tape.mean(sq))
}

/// `L_M + a * L_C + b * L_D`.
pub fn total_loss(tape: &mut Tape, mse: Var, cll: Var, ppl: Var, gamma_a: f64, gamma_b: f64) -> Result<Var> {
    let c = tape.scale(cll, gamma_a);
    let d = tape.scale(ppl, gamma_b);
    let s = tape.add(mse, c)?;
    tape.add(s, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_with_identity_adjacency() {
        let params = vec![Parameter::new("w", Tensor::identity(2))];
        let stack = GcnStack {
            layers: vec![0],
            activation: Activation::Identity,
        };
        let a = Arc::new(SparseMatrix::from_dense(&Tensor::identity(3)));
        let mut tape = Tape::new();
        let x0 = Tensor::from_rows(&[vec![1.0, -2.0], vec![0.5, 0.0], vec![3.0, 4.0]]).unwrap();
        let x = tape.constant(x0.clone());
        let y = stack.forward(&mut tape, &params, &a, x).unwrap();
        assert_eq!(tape.value(y), &x0);
    }

    #[test]
    fn averaging_adjacency() {
        let params = vec![Parameter::new("w", Tensor::identity(1))];
        let stack = GcnStack {
            layers: vec![0],
            activation: Activation::Identity,
        };
        let a = Arc::new(SparseMatrix::from_dense(&Tensor::filled(&[2, 2], 0.5)));
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![2.0], vec![4.0]]).unwrap());
        let y = stack.forward(&mut tape, &params, &a, x).unwrap();
        assert_eq!(tape.value(y).values(), &[3.0, 3.0]);
    }

    #[test]
    fn empty_stack_and_shape_errors() {
        let stack = GcnStack::leaky(vec![]);
        let a = Arc::new(SparseMatrix::from_dense(&Tensor::identity(2)));
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![-1.0], vec![2.0]]).unwrap());
        let y = stack.forward(&mut tape, &[], &a, x).unwrap();
        assert_eq!(y, x);
        let bad = Arc::new(SparseMatrix::from_dense(&Tensor::identity(3)));
        assert!(matches!(
            stack.forward(&mut tape, &[], &bad, x),
            Err(NrkgError::Dimension(_))
        ));
    }

    #[test]
    fn mse_examples() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap());
        let l = loss_mse(&mut tape, p, &Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap()).unwrap();
        assert_eq!(tape.scalar(l), 0.0);
        let p = tape.constant(Tensor::from_rows(&[vec![0.0], vec![0.0]]).unwrap());
        let l = loss_mse(&mut tape, p, &Tensor::from_rows(&[vec![1.0], vec![3.0]]).unwrap()).unwrap();
        assert_eq!(tape.scalar(l), 5.0);
    }

    #[test]
    fn total_loss_weights() {
        let mut tape = Tape::new();
        let m = tape.constant(Tensor::scalar(1.0));
        let c = tape.constant(Tensor::scalar(2.0));
        let d = tape.constant(Tensor::scalar(3.0));
        let t = total_loss(&mut tape, m, c, d, 0.16, 0.04).unwrap();
        assert!((tape.scalar(t) - 1.44).abs() < 1e-12);
        let t = total_loss(&mut tape, m, c, d, 0.0, 0.0).unwrap();
        assert_eq!(tape.scalar(t), 1.0);
    }

    #[test]
    fn decoder_eval_is_deterministic() {
        let params = vec![
            Parameter::new("w0", Tensor::from_rows(&[vec![1.0, -1.0]]).unwrap()),
            Parameter::new("b0", Tensor::zeros(&[2])),
            Parameter::new("w1", Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap()),
            Parameter::new("b1", Tensor::filled(&[1], 0.5)),
        ];
        let dec = PropertyDecoder {
            layers: vec![AffineSlots { weight: 0, bias: 1 }, AffineSlots { weight: 2, bias: 3 }],
            dropout: 0.5,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![2.0]]).unwrap());
        let a = dec.forward(&mut tape, &params, x, &mut rng, false).unwrap();
        let b = dec.forward(&mut tape, &params, x, &mut rng, false).unwrap();
        assert_eq!(tape.value(a), tape.value(b));
        // leaky(2) + leaky(-2) + 0.5 = 2 - 0.02 + 0.5
        assert!((tape.scalar(a) - 2.48).abs() < 1e-12);
    }
}
