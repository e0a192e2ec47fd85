//! Dense layers shared by the scorers and the regressor.

use rand::Rng;

use crate::autodiff::{Bound, Tape, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Result, Tensor};

#[derive(Debug, Clone)]
struct Linear {
    weight: ParamId,
    bias: ParamId,
}

/// Multi-layer perceptron with ReLU between layers and a linear output.
/// Biases are zero-initialized.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`.
    pub fn new(store: &mut ParamStore, prefix: &str, dims: &[usize], rng: &mut impl Rng) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear {
                weight: store.add_glorot(format!("{prefix}.w{i}"), w[0], w[1], rng),
                bias: store.add(format!("{prefix}.b{i}"), Tensor::zeros(1, w[1])),
            })
            .collect();
        Self { layers }
    }

    /// Applies the MLP to every row of `x`.
    pub fn forward(&self, tape: &mut Tape, params: &Bound, x: Var) -> Result<Var> {
        let rows = tape.value(x).rows();
        let ones = tape.constant(Tensor::ones(rows, 1));
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let xw = tape.matmul(h, params.get(layer.weight))?;
            let b = tape.matmul(ones, params.get(layer.bias))?;
            h = tape.add(xw, b)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|l| [l.weight, l.bias])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", &[4, 2, 2], &mut rng);
        for id in mlp.param_ids().collect::<Vec<_>>() {
            store.value_mut(id).data_mut().fill(0.0);
        }
        let mut tape = Tape::new();
        let p = tape.bind(&store);
        let x = tape.constant(Tensor::ones(3, 4));
        let y = mlp.forward(&mut tape, &p, x).unwrap();
        assert_eq!(tape.value(y), &Tensor::zeros(3, 2));
    }
}
