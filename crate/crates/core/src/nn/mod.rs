//! A small reverse-mode network engine covering exactly the layers the
//! policy, discriminator and selector networks use.
//!
//! Everything is `f64`. Layers cache what they need during
//! [`Sequential::forward`]; [`Sequential::backward`] accumulates parameter
//! gradients and returns the input gradient. [`Sequential::infer`] is the
//! cache-free, `&self` evaluation path used by parallel rollout workers.

mod checkpoint;
pub mod gradcheck;
mod layers;
mod nets;
mod optim;
mod sequential;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, NamedTensor, CHECKPOINT_MAGIC};
pub use layers::{Layer, LayerSpec};
pub use nets::{DiscriminatorNet, NetConfig, PolicyValueNet};
pub use optim::{Optimizer, OptimizerKind};
pub use sequential::Sequential;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    /// Stacks equally-shaped rows into a `[rows.len(), row.len()]` matrix.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let width = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::shape("rows have different lengths"));
        }
        Ok(Tensor {
            shape: vec![rows.len(), width],
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        })
    }

    pub fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(|_| rng.random_range(-bound..bound)).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Values of sample `i` along the leading dimension.
    pub fn sample(&self, i: usize) -> &[f64] {
        let per = self.data.len() / self.batch().max(1);
        &self.data[i * per..(i + 1) * per]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "cannot add {:?} to {:?}",
                other.shape, self.shape
            )));
        }
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A trainable tensor and its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn identity_dense_passes_input_through() {
        let mut net = Sequential::new(&[3], vec![LayerSpec::Dense { inputs: 3, outputs: 3 }], &mut rng()).unwrap();
        if let Layer::Dense(d) = &mut net.layers_mut()[0] {
            d.weight.value = Tensor::new(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
            d.bias.value.fill(0.0);
        }
        let x = Tensor::new(vec![2, 3], vec![1., -2., 3., 0.5, 0., -7.]).unwrap();
        assert_eq!(net.infer(&x, None).unwrap(), x);
    }

    #[test]
    fn leaky_relu_and_softmax_values() {
        let net = Sequential::new(&[2], vec![LayerSpec::LeakyRelu { slope: 0.2 }], &mut rng()).unwrap();
        let y = net.infer(&Tensor::new(vec![1, 2], vec![-1.0, 2.0]).unwrap(), None).unwrap();
        assert_eq!(y.data(), &[-0.2, 2.0]);

        let sm = Sequential::new(&[9], vec![LayerSpec::Softmax], &mut rng()).unwrap();
        let p = sm.infer(&Tensor::full(&[1, 9], 3.0), None).unwrap();
        for v in p.data() {
            assert!((v - 1.0 / 9.0).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_net_gradient_matches_closed_form() {
        // y = w.x + b, objective y; dy/dw = x, dy/db = 1, dy/dx = w.
        let mut net = Sequential::new(&[2], vec![LayerSpec::Dense { inputs: 2, outputs: 1 }], &mut rng()).unwrap();
        let x = Tensor::new(vec![1, 2], vec![3.0, -4.0]).unwrap();
        net.forward(&x, None, true).unwrap();
        let gx = net.backward(&Tensor::full(&[1, 1], 1.0)).unwrap();
        let p = net.params();
        assert_eq!(p[0].grad.data(), &[3.0, -4.0]);
        assert_eq!(p[1].grad.data(), &[1.0]);
        assert_eq!(gx.data(), p[0].value.data());
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut net = Sequential::new(
            &[4],
            vec![
                LayerSpec::Dense { inputs: 4, outputs: 3 },
                LayerSpec::LeakyRelu { slope: 0.1 },
                LayerSpec::Dense { inputs: 3, outputs: 2 },
                LayerSpec::Softmax,
            ],
            &mut rng(),
        )
        .unwrap();
        let x = Tensor::uniform(&[5, 4], 1.0, &mut rng());
        net.forward(&x, None, true).unwrap();
        let gx = net.backward(&Tensor::zeros(&[5, 2])).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
        assert!(net.params().iter().all(|p| p.grad.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = Param::new(Tensor::full(&[1], 1.0));
        p.grad.fill(0.5);
        let mut opt = Optimizer::new(OptimizerKind::adam(), 0.1, 0.0);
        opt.step(vec![&mut p]).unwrap();
        assert!((p.value.data()[0] - 0.9).abs() < 1e-7);
    }

    #[test]
    fn weight_decay_shrinks_parameters_without_loss_gradient() {
        for kind in [OptimizerKind::adam(), OptimizerKind::rmsprop()] {
            let mut p = Param::new(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
            let before: f64 = p.value.data().iter().map(|v| v * v).sum();
            let mut opt = Optimizer::new(kind, 1e-2, 2e-3);
            for _ in 0..5 {
                opt.step(vec![&mut p]).unwrap();
            }
            let after: f64 = p.value.data().iter().map(|v| v * v).sum();
            assert!(after < before);
        }
    }

    #[test]
    fn nan_gradient_is_rejected_and_leaves_params() {
        let mut p = Param::new(Tensor::full(&[2], 1.0));
        p.grad.data_mut()[1] = f64::NAN;
        let mut opt = Optimizer::new(OptimizerKind::rmsprop(), 0.1, 0.0);
        assert!(matches!(opt.step(vec![&mut p]), Err(Error::Numerical(_))));
        assert_eq!(p.value.data(), &[1.0, 1.0]);
    }

    #[test]
    fn batchnorm_eval_uses_running_stats() {
        let mut net = Sequential::new(
            &[2],
            vec![LayerSpec::BatchNorm { features: 2, eps: 1e-5, momentum: 0.1 }],
            &mut rng(),
        )
        .unwrap();
        let x = Tensor::new(vec![2, 2], vec![1.0, 10.0, 3.0, 30.0]).unwrap();
        net.forward(&x, None, true).unwrap();
        let rm = net.buffers()[0].data().to_vec();
        let rv = net.buffers()[1].data().to_vec();
        assert!((rm[0] - 0.2).abs() < 1e-12 && (rm[1] - 2.0).abs() < 1e-12);
        // unbiased batch variances are 2 and 200
        assert!((rv[0] - (0.9 + 0.2)).abs() < 1e-12 && (rv[1] - (0.9 + 20.0)).abs() < 1e-12);
        let y = net.infer(&x, None).unwrap();
        assert!((y.data()[0] - (1.0 - 0.2) / (1.1f64 + 1e-5).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let t = Tensor::new(vec![2, 2], vec![0.1, -3.5e-300, f64::MAX, 1.0 / 3.0]).unwrap();
        let ck = Checkpoint {
            meta: serde_json::json!({"k": 1}),
            tensors: vec![NamedTensor::new("a", t), NamedTensor::new("b", Tensor::zeros(&[0]))],
        };
        write_checkpoint(&path, &ck).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back, ck);
        std::fs::write(&path, b"nope").unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Malformed { .. })));
    }
}
