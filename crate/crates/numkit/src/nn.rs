//! Affine layers, multi-layer perceptrons and temporal convolution layers.

use rand::Rng;

use crate::error::{NumError, Result};
use crate::param::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Uniform fan-in initialisation, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn uniform_fan_in<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let numel = shape.iter().product();
    let data = (0..numel).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}

/// `y = x · W + b`, with `W: [d_in, d_out]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = uniform_fan_in(&[d_in, d_out], d_in, rng);
        let b = uniform_fan_in(&[d_out], d_in, rng);
        Self::from_tensors(store, prefix, w, b)
    }

    pub fn from_tensors(
        store: &mut ParamStore,
        prefix: &str,
        weight: Tensor,
        bias: Tensor,
    ) -> Result<Self> {
        if weight.ndim() != 2 || bias.numel() != weight.shape()[1] {
            return Err(NumError::Shape {
                op: "linear",
                lhs: weight.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        let (d_in, d_out) = (weight.shape()[0], weight.shape()[1]);
        let weight = store.add(format!("{prefix}.weight"), weight, true)?;
        let bias = store.add(format!("{prefix}.bias"), bias.reshape([d_out])?, false)?;
        Ok(Self {
            weight,
            bias,
            d_in,
            d_out,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = tape.matmul(x, w)?;
        tape.add_bias(y, b)
    }
}

/// Affine layers with a rectifier between consecutive layers and no
/// activation after the last one.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// Randomly initialised MLP through the widths `dims[0] → … → dims[n]`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        dims: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(NumError::Config(format!(
                "mlp `{prefix}` needs at least input and output widths"
            )));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{prefix}.{i}"), w[0], w[1], rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    /// MLP from explicit `(weight, bias)` pairs; checks the width chain.
    pub fn from_tensors(
        store: &mut ParamStore,
        prefix: &str,
        layers: Vec<(Tensor, Tensor)>,
    ) -> Result<Self> {
        let mut built: Vec<Linear> = Vec::with_capacity(layers.len());
        for (i, (w, b)) in layers.into_iter().enumerate() {
            let lin = Linear::from_tensors(store, &format!("{prefix}.{i}"), w, b)?;
            if let Some(prev) = built.last() {
                if prev.d_out != lin.d_in {
                    return Err(NumError::LayerChain {
                        layer: i,
                        expected: prev.d_out,
                        actual: lin.d_in,
                    });
                }
            }
            built.push(lin);
        }
        if built.is_empty() {
            return Err(NumError::Config(format!("mlp `{prefix}` has no layers")));
        }
        Ok(Self { layers: built })
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].d_in
    }

    pub fn d_out(&self) -> usize {
        self.layers.last().expect("non-empty mlp").d_out
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let actual = tape.value(x).last_dim();
        if actual != self.d_in() {
            return Err(NumError::LayerChain {
                layer: 0,
                expected: self.d_in(),
                actual,
            });
        }
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, store, h)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}

/// Free-function form of [`Mlp::forward`].
pub fn mlp_forward(mlp: &Mlp, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
    mlp.forward(tape, store, x)
}

/// Temporal convolution layer: kernel `[w, d_in, d_out]` plus bias.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemporalConv {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub width: usize,
    pub d_in: usize,
    pub d_out: usize,
}

impl TemporalConv {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        width: usize,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if width % 2 == 0 {
            return Err(NumError::Config(format!(
                "temporal kernel width must be odd, got {width}"
            )));
        }
        let fan_in = width * d_in;
        let kernel = store.add(
            format!("{prefix}.kernel"),
            uniform_fan_in(&[width, d_in, d_out], fan_in, rng),
            true,
        )?;
        let bias = store.add(
            format!("{prefix}.bias"),
            uniform_fan_in(&[d_out], fan_in, rng),
            false,
        )?;
        Ok(Self {
            kernel,
            bias,
            width,
            d_in,
            d_out,
        })
    }

    /// `x: [N, T, d_in] → [N, T, d_out]` (no activation).
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let k = tape.param(store, self.kernel);
        let b = tape.param(store, self.bias);
        let y = tape.temporal_conv(x, k)?;
        tape.add_bias(y, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn eye_layer(n: usize) -> (Tensor, Tensor) {
        (Tensor::eye(n), Tensor::zeros([n]))
    }

    #[test]
    fn identity_single_layer_has_no_final_activation() {
        let mut store = ParamStore::new();
        let mlp = Mlp::from_tensors(&mut store, "m", vec![eye_layer(2)]).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new([2], vec![1.0, -1.0]).unwrap());
        let y = mlp.forward(&mut tape, &store, x).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, -1.0]);
    }

    #[test]
    fn hidden_rectifier_zeroes_negatives() {
        let mut store = ParamStore::new();
        let mlp = Mlp::from_tensors(&mut store, "m", vec![eye_layer(2), eye_layer(2)]).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new([2], vec![1.0, -2.0]).unwrap());
        let y = mlp.forward(&mut tape, &store, x).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 0.0]);
    }

    #[test]
    fn broken_chain_names_layer() {
        let mut store = ParamStore::new();
        let err = Mlp::from_tensors(
            &mut store,
            "m",
            vec![(Tensor::zeros([3, 4]), Tensor::zeros([4])), eye_layer(5)],
        )
        .unwrap_err();
        assert_eq!(
            err,
            NumError::LayerChain {
                layer: 1,
                expected: 4,
                actual: 5
            }
        );
    }

    #[test]
    fn wrong_input_width_is_layer_zero() {
        let mut store = ParamStore::new();
        let mlp = Mlp::from_tensors(&mut store, "m", vec![eye_layer(3)]).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros([2, 2]));
        assert!(matches!(
            mlp.forward(&mut tape, &store, x),
            Err(NumError::LayerChain { layer: 0, .. })
        ));
    }

    #[test]
    fn random_mlp_matches_scalar_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", &[5, 7, 3], &mut rng).unwrap();
        let x = uniform_fan_in(&[4, 5], 1, &mut rng);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = mlp.forward(&mut tape, &store, xv).unwrap();

        let w0 = store.value(mlp.layers[0].weight);
        let b0 = store.value(mlp.layers[0].bias);
        let w1 = store.value(mlp.layers[1].weight);
        let b1 = store.value(mlp.layers[1].bias);
        for r in 0..4 {
            let mut hidden = [0.0; 7];
            for (j, h) in hidden.iter_mut().enumerate() {
                let mut s = b0.data()[j];
                for i in 0..5 {
                    s += x.data()[r * 5 + i] * w0.data()[i * 7 + j];
                }
                *h = s.max(0.0);
            }
            for o in 0..3 {
                let mut s = b1.data()[o];
                for (j, h) in hidden.iter().enumerate() {
                    s += h * w1.data()[j * 3 + o];
                }
                assert!((tape.value(y).data()[r * 3 + o] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn biases_are_excluded_from_decay() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        Mlp::new(&mut store, "m", &[2, 2], &mut rng).unwrap();
        TemporalConv::new(&mut store, "c", 3, 2, 2, &mut rng).unwrap();
        for p in store.iter() {
            assert_eq!(p.decay, !p.name.ends_with(".bias"), "{}", p.name);
        }
    }
}
