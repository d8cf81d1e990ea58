use rand::Rng;

use super::{Layer, LayerSpec, Param, Tensor};
use crate::error::{Error, Result};

/// A chain of layers with an optional auxiliary input consumed by
/// [`LayerSpec::Concat`].
#[derive(Clone, Debug)]
pub struct Sequential {
    specs: Vec<LayerSpec>,
    layers: Vec<Layer>,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
}

impl Sequential {
    /// Validates the layer chain against a per-sample input shape and
    /// initializes parameters.
    pub fn new(input_shape: &[usize], specs: Vec<LayerSpec>, rng: &mut impl Rng) -> Result<Self> {
        let mut shape = input_shape.to_vec();
        for spec in &specs {
            shape = spec.output_shape(&shape)?;
        }
        let layers = specs.iter().map(|s| Layer::from_spec(s, rng)).collect();
        Ok(Sequential {
            specs,
            layers,
            input_shape: input_shape.to_vec(),
            output_shape: shape,
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            return Err(Error::shape(format!(
                "network expects [batch, {:?}], got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&mut self, x: &Tensor, aux: Option<&Tensor>, train: bool) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = layer.forward(&h, aux, train)?;
        }
        Ok(h)
    }

    /// Evaluation without touching caches or running statistics.
    pub fn infer(&self, x: &Tensor, aux: Option<&Tensor>) -> Result<Tensor> {
        self.eval(x, aux, false)
    }

    /// Like [`Sequential::infer`] but lets BatchNorm use batch statistics.
    pub fn eval(&self, x: &Tensor, aux: Option<&Tensor>, train: bool) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.eval(&h, aux, train)?;
        }
        Ok(h)
    }

    /// Backpropagates `g` (gradient of the objective w.r.t. the output of the
    /// last forward call). Parameter gradients accumulate.
    pub fn backward(&mut self, g: &Tensor) -> Result<Tensor> {
        let mut g = g.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn buffers(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.buffers()).collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.buffers_mut()).collect()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// Sign pattern of every cached LeakyReLU input. Two forward passes with
    /// equal signatures lie on the same linear piece.
    pub fn kink_signature(&self) -> Vec<bool> {
        self.layers
            .iter()
            .filter_map(Layer::leaky_input)
            .flat_map(|t| t.data().iter().map(|&v| v > 0.0))
            .collect()
    }
}
