use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{LayerSpec, NamedTensor, Param, Sequential, Tensor};
use crate::env::ActionId;
use crate::error::{Error, Result};

/// Shape and activation hyperparameters shared by both networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub streams: usize,
    pub policy_slope: f64,
    pub disc_slope: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl NetConfig {
    pub fn new(channels: usize, height: usize, width: usize, streams: usize) -> Self {
        NetConfig {
            channels,
            height,
            width,
            streams,
            policy_slope: 0.01,
            disc_slope: 0.2,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }

    fn obs_shape(&self) -> Vec<usize> {
        vec![self.channels, self.height, self.width]
    }

    fn conv_specs(&self, slope: f64, batch_norm: bool) -> Vec<LayerSpec> {
        let mut specs = vec![
            LayerSpec::Conv2d {
                in_channels: self.channels,
                out_channels: 16,
                kernel: 8,
                stride: 4,
            },
            LayerSpec::LeakyRelu { slope },
        ];
        if batch_norm {
            specs.push(self.bn(16));
        }
        specs.push(LayerSpec::Conv2d {
            in_channels: 16,
            out_channels: 32,
            kernel: 4,
            stride: 2,
        });
        specs.push(LayerSpec::LeakyRelu { slope });
        if batch_norm {
            specs.push(self.bn(32));
        }
        specs.push(LayerSpec::Flatten);
        specs
    }

    fn bn(&self, features: usize) -> LayerSpec {
        LayerSpec::BatchNorm {
            features,
            eps: self.bn_eps,
            momentum: self.bn_momentum,
        }
    }

    fn flat_conv_features(&self) -> Result<usize> {
        let mut shape = self.obs_shape();
        for spec in self.conv_specs(0.0, false) {
            shape = spec.output_shape(&shape)?;
        }
        Ok(shape[0])
    }

    pub fn validate(&self) -> Result<()> {
        if self.streams == 0 {
            return Err(Error::invalid("network needs at least one stream"));
        }
        self.flat_conv_features().map(|_| ())
    }
}

fn tensors_of(prefix: &str, net: &Sequential, out: &mut Vec<NamedTensor>) {
    for (i, p) in net.params().into_iter().enumerate() {
        out.push(NamedTensor::new(format!("{prefix}.param{i}"), p.value.clone()));
    }
    for (i, b) in net.buffers().into_iter().enumerate() {
        out.push(NamedTensor::new(format!("{prefix}.buffer{i}"), b.clone()));
    }
}

fn load_into(prefix: &str, net: &mut Sequential, map: &HashMap<&str, &Tensor>) -> Result<()> {
    let fetch = |name: String, dst: &mut Tensor| -> Result<()> {
        let src = map
            .get(name.as_str())
            .ok_or_else(|| Error::invalid(format!("checkpoint lacks tensor {name}")))?;
        if src.shape() != dst.shape() {
            return Err(Error::shape(format!(
                "tensor {name}: checkpoint {:?} vs model {:?}",
                src.shape(),
                dst.shape()
            )));
        }
        dst.data_mut().copy_from_slice(src.data());
        Ok(())
    };
    for (i, p) in net.params_mut().into_iter().enumerate() {
        fetch(format!("{prefix}.param{i}"), &mut p.value)?;
    }
    for (i, b) in net.buffers_mut().into_iter().enumerate() {
        fetch(format!("{prefix}.buffer{i}"), b)?;
    }
    Ok(())
}

/// Generator: observation plus one-hot stream code to action probabilities
/// and a state value.
#[derive(Clone, Debug)]
pub struct PolicyValueNet {
    pub trunk: Sequential,
    pub policy: Sequential,
    pub value: Sequential,
}

impl PolicyValueNet {
    pub fn new(cfg: &NetConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let slope = cfg.policy_slope;
        let mut specs = cfg.conv_specs(slope, false);
        specs.extend([
            LayerSpec::Dense {
                inputs: cfg.flat_conv_features()?,
                outputs: 256,
            },
            LayerSpec::LeakyRelu { slope },
            LayerSpec::Concat { extra: cfg.streams },
        ]);
        let trunk = Sequential::new(&cfg.obs_shape(), specs, rng)?;
        let feat = trunk.output_shape().to_vec();
        let policy = Sequential::new(
            &feat,
            vec![
                LayerSpec::Dense {
                    inputs: feat[0],
                    outputs: ActionId::COUNT,
                },
                LayerSpec::Softmax,
            ],
            rng,
        )?;
        let value = Sequential::new(
            &feat,
            vec![LayerSpec::Dense {
                inputs: feat[0],
                outputs: 1,
            }],
            rng,
        )?;
        Ok(PolicyValueNet {
            trunk,
            policy,
            value,
        })
    }

    /// `(probabilities [B, 9], values [B, 1])`, caching for backward.
    pub fn forward(&mut self, obs: &Tensor, code: &Tensor) -> Result<(Tensor, Tensor)> {
        let f = self.trunk.forward(obs, Some(code), true)?;
        Ok((self.policy.forward(&f, None, true)?, self.value.forward(&f, None, true)?))
    }

    pub fn infer(&self, obs: &Tensor, code: &Tensor) -> Result<(Tensor, Tensor)> {
        let f = self.trunk.infer(obs, Some(code))?;
        Ok((self.policy.infer(&f, None)?, self.value.infer(&f, None)?))
    }

    pub fn backward(&mut self, g_probs: &Tensor, g_values: &Tensor) -> Result<()> {
        let mut g = self.policy.backward(g_probs)?;
        g.add_assign(&self.value.backward(g_values)?)?;
        self.trunk.backward(&g)?;
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.trunk.zero_grad();
        self.policy.zero_grad();
        self.value.zero_grad();
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.trunk.params_mut();
        v.extend(self.policy.params_mut());
        v.extend(self.value.params_mut());
        v
    }

    pub fn kink_signature(&self) -> Vec<bool> {
        self.trunk.kink_signature()
    }

    pub fn named_tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        tensors_of("policy.trunk", &self.trunk, &mut out);
        tensors_of("policy.pi", &self.policy, &mut out);
        tensors_of("policy.v", &self.value, &mut out);
        out
    }

    pub fn load_named(&mut self, map: &HashMap<&str, &Tensor>) -> Result<()> {
        load_into("policy.trunk", &mut self.trunk, map)?;
        load_into("policy.pi", &mut self.policy, map)?;
        load_into("policy.v", &mut self.value, map)
    }
}

/// Shared trunk over (observation, one-hot action) with a real/fake head
/// and a stream-selector head.
#[derive(Clone, Debug)]
pub struct DiscriminatorNet {
    pub trunk: Sequential,
    pub disc: Sequential,
    pub selector: Sequential,
}

impl DiscriminatorNet {
    pub fn new(cfg: &NetConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let slope = cfg.disc_slope;
        let mut specs = cfg.conv_specs(slope, true);
        specs.extend([
            LayerSpec::Concat {
                extra: ActionId::COUNT,
            },
            LayerSpec::Dense {
                inputs: cfg.flat_conv_features()? + ActionId::COUNT,
                outputs: 128,
            },
            LayerSpec::LeakyRelu { slope },
        ]);
        let trunk = Sequential::new(&cfg.obs_shape(), specs, rng)?;
        let disc = Sequential::new(
            &[128],
            vec![
                LayerSpec::Dense {
                    inputs: 128,
                    outputs: 1,
                },
                LayerSpec::Sigmoid,
            ],
            rng,
        )?;
        let selector = Sequential::new(
            &[128],
            vec![
                LayerSpec::Dense {
                    inputs: 128,
                    outputs: cfg.streams,
                },
                LayerSpec::Softmax,
            ],
            rng,
        )?;
        Ok(DiscriminatorNet {
            trunk,
            disc,
            selector,
        })
    }

    /// Probability that each (observation, action) pair is expert, `[B, 1]`.
    pub fn discriminate(&mut self, obs: &Tensor, actions: &Tensor, train: bool) -> Result<Tensor> {
        let f = self.trunk.forward(obs, Some(actions), train)?;
        self.disc.forward(&f, None, train)
    }

    pub fn backward_discriminate(&mut self, g: &Tensor) -> Result<()> {
        let g = self.disc.backward(g)?;
        self.trunk.backward(&g).map(|_| ())
    }

    /// Stream posterior `[B, N]`.
    pub fn select(&mut self, obs: &Tensor, actions: &Tensor, train: bool) -> Result<Tensor> {
        let f = self.trunk.forward(obs, Some(actions), train)?;
        self.selector.forward(&f, None, train)
    }

    pub fn backward_select(&mut self, g: &Tensor) -> Result<()> {
        let g = self.selector.backward(g)?;
        self.trunk.backward(&g).map(|_| ())
    }

    /// Eval-mode `(D [B, 1], S [B, N])`.
    pub fn infer(&self, obs: &Tensor, actions: &Tensor) -> Result<(Tensor, Tensor)> {
        let f = self.trunk.infer(obs, Some(actions))?;
        Ok((self.disc.infer(&f, None)?, self.selector.infer(&f, None)?))
    }

    pub fn zero_grad(&mut self) {
        self.trunk.zero_grad();
        self.disc.zero_grad();
        self.selector.zero_grad();
    }

    pub fn disc_params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.trunk.params_mut();
        v.extend(self.disc.params_mut());
        v
    }

    pub fn selector_params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.trunk.params_mut();
        v.extend(self.selector.params_mut());
        v
    }

    pub fn kink_signature(&self) -> Vec<bool> {
        self.trunk.kink_signature()
    }

    pub fn named_tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        tensors_of("disc.trunk", &self.trunk, &mut out);
        tensors_of("disc.d", &self.disc, &mut out);
        tensors_of("disc.s", &self.selector, &mut out);
        out
    }

    pub fn load_named(&mut self, map: &HashMap<&str, &Tensor>) -> Result<()> {
        load_into("disc.trunk", &mut self.trunk, map)?;
        load_into("disc.d", &mut self.disc, map)?;
        load_into("disc.s", &mut self.selector, map)
    }
}
