//! The four-block "Simple CNN" and its parameter bookkeeping.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::checkpoint::NamedTensor;
use crate::autograd::{BatchNormMode, Graph, RunningStats, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CnnConfig {
    pub in_channels: usize,
    pub block_channels: Vec<usize>,
    pub kernel: usize,
    pub fc_hidden: usize,
    pub dropout_p: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            block_channels: vec![32, 64, 128, 256],
            kernel: 3,
            fc_hidden: 128,
            dropout_p: 0.5,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl CnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.fc_hidden == 0 || self.block_channels.is_empty() {
            return Err(Error::param("channel counts must be positive"));
        }
        if self.block_channels.contains(&0) {
            return Err(Error::param("block channel counts must be positive"));
        }
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return Err(Error::param("kernel size must be odd"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::param("dropout_p must lie in [0, 1)"));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) || self.bn_eps <= 0.0 {
            return Err(Error::param("invalid batch-norm momentum or eps"));
        }
        Ok(())
    }

    /// Closed-form trainable parameter count.
    pub fn param_count(&self) -> usize {
        let mut cin = self.in_channels;
        let mut total = 0;
        for &c in &self.block_channels {
            total += c * cin * self.kernel * self.kernel + c; // conv
            total += 2 * c; // batch norm
            cin = c;
        }
        total + cin * self.fc_hidden + self.fc_hidden + self.fc_hidden + 1
    }

    /// Each block halves the spatial extent once.
    pub fn downsampling(&self) -> usize {
        1 << self.block_channels.len()
    }
}

/// Graph handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `[B, 1]` logits.
    pub logits: Var,
    /// Output of the last convolutional block, `[B, C, Hf, Wf]`.
    pub features: Var,
    /// One handle per entry of [`SimpleCnn::params`], same order.
    pub params: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimpleCnn {
    config: CnnConfig,
    names: Vec<String>,
    params: Vec<Tensor<f32>>,
    running: Vec<RunningStats<f32>>,
}

enum Stats<'a> {
    Train(&'a mut [RunningStats<f32>]),
    Eval(&'a [RunningStats<f32>]),
}

impl SimpleCnn {
    /// Kaiming-uniform weights (bound `sqrt(6 / fan_in)`), zero biases,
    /// unit batch-norm scale.
    pub fn new(config: CnnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut params = Vec::new();
        let mut running = Vec::new();
        let kaiming = |shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng| {
            let bound = (6.0 / fan_in as f64).sqrt();
            let n = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-bound..bound) as f32).collect();
            Tensor::new(shape, data).expect("shape matches length")
        };
        let k = config.kernel;
        let mut cin = config.in_channels;
        for (i, &c) in config.block_channels.iter().enumerate() {
            let b = i + 1;
            names.push(format!("conv{b}.weight"));
            params.push(kaiming(vec![c, cin, k, k], cin * k * k, &mut rng));
            names.push(format!("conv{b}.bias"));
            params.push(Tensor::zeros(vec![c]));
            names.push(format!("bn{b}.weight"));
            params.push(Tensor::full(vec![c], 1.0));
            names.push(format!("bn{b}.bias"));
            params.push(Tensor::zeros(vec![c]));
            running.push(RunningStats::new(c));
            cin = c;
        }
        let h = config.fc_hidden;
        names.push("fc1.weight".into());
        params.push(kaiming(vec![h, cin], cin, &mut rng));
        names.push("fc1.bias".into());
        params.push(Tensor::zeros(vec![h]));
        names.push("fc2.weight".into());
        params.push(kaiming(vec![1, h], h, &mut rng));
        names.push("fc2.bias".into());
        params.push(Tensor::zeros(vec![1]));
        Ok(Self {
            config,
            names,
            params,
            running,
        })
    }

    pub fn config(&self) -> &CnnConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor<f32>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<f32>] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn running_stats(&self) -> &[RunningStats<f32>] {
        &self.running
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Index of the first parameter of the final linear layer.
    pub fn classifier_weight_index(&self) -> usize {
        self.params.len() - 2
    }

    /// Training-mode forward: batch statistics (folded into the running
    /// estimates) and active dropout.
    pub fn forward_train<R: Rng + ?Sized>(
        &mut self,
        g: &mut Graph<f32>,
        input: Tensor<f32>,
        rng: &mut R,
    ) -> Result<Forward> {
        let Self {
            config,
            params,
            running,
            ..
        } = self;
        forward(config, params, Stats::Train(running), g, input, Some(rng))
    }

    /// Evaluation-mode forward: running statistics, no dropout.
    pub fn forward_eval(&self, g: &mut Graph<f32>, input: Tensor<f32>) -> Result<Forward> {
        forward::<ChaCha8Rng>(
            &self.config,
            &self.params,
            Stats::Eval(&self.running),
            g,
            input,
            None,
        )
    }

    pub fn to_records(&self) -> Vec<NamedTensor> {
        let mut out: Vec<NamedTensor> = self
            .names
            .iter()
            .zip(&self.params)
            .map(|(name, t)| NamedTensor {
                name: name.clone(),
                tensor: t.clone(),
            })
            .collect();
        for (i, rs) in self.running.iter().enumerate() {
            let c = rs.mean.len();
            out.push(NamedTensor {
                name: format!("bn{}.running_mean", i + 1),
                tensor: Tensor::new(vec![c], rs.mean.clone()).expect("length matches"),
            });
            out.push(NamedTensor {
                name: format!("bn{}.running_var", i + 1),
                tensor: Tensor::new(vec![c], rs.var.clone()).expect("length matches"),
            });
        }
        out
    }

    /// Rebuilds a network from checkpoint records. Layer widths are read
    /// from the tensor shapes; unrelated records are ignored.
    pub fn from_records(records: &[NamedTensor], base: CnnConfig) -> Result<Self> {
        let find = |name: &str| -> Result<&Tensor<f32>> {
            records
                .iter()
                .find(|r| r.name == name)
                .map(|r| &r.tensor)
                .ok_or_else(|| Error::Format {
                    kind: "CVCK",
                    message: format!("missing record {name}"),
                })
        };
        let mut block_channels = Vec::new();
        let mut in_channels = None;
        let mut kernel = base.kernel;
        for b in 1.. {
            let Some(r) = records.iter().find(|r| r.name == format!("conv{b}.weight")) else {
                break;
            };
            let &[cout, cin, kh, _] = r.tensor.shape() else {
                return Err(Error::shape(format!("conv{b}.weight must be rank 4")));
            };
            in_channels.get_or_insert(cin);
            kernel = kh;
            block_channels.push(cout);
        }
        let fc1 = find("fc1.weight")?;
        let config = CnnConfig {
            in_channels: in_channels.unwrap_or(base.in_channels),
            block_channels,
            kernel,
            fc_hidden: fc1.shape()[0],
            ..base
        };
        let mut model = Self::new(config, 0)?;
        for (name, slot) in model.names.iter().zip(model.params.iter_mut()) {
            let t = find(name)?;
            if t.shape() != slot.shape() {
                return Err(Error::shape(format!(
                    "{name}: checkpoint shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
        }
        for (i, rs) in model.running.iter_mut().enumerate() {
            let mean = find(&format!("bn{}.running_mean", i + 1))?;
            let var = find(&format!("bn{}.running_var", i + 1))?;
            if mean.len() != rs.mean.len() || var.len() != rs.var.len() {
                return Err(Error::shape(format!("bn{} running stats have wrong length", i + 1)));
            }
            rs.mean = mean.data().to_vec();
            rs.var = var.data().to_vec();
        }
        Ok(model)
    }
}

fn forward<R: Rng + ?Sized>(
    config: &CnnConfig,
    params: &[Tensor<f32>],
    mut stats: Stats<'_>,
    g: &mut Graph<f32>,
    input: Tensor<f32>,
    rng: Option<&mut R>,
) -> Result<Forward> {
    let [_, c, h, w] = input.dims4("network input")?;
    if c != config.in_channels {
        return Err(Error::shape(format!(
            "network expects {} input channels, got {c}",
            config.in_channels
        )));
    }
    let d = config.downsampling();
    if h % d != 0 || w % d != 0 {
        return Err(Error::shape(format!(
            "input {h}x{w} is not divisible by {d}"
        )));
    }
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let pad = config.kernel / 2;
    let momentum = config.bn_momentum as f32;
    let eps = config.bn_eps as f32;
    let mut x = g.input(input);
    for (i, block) in vars.chunks(4).take(config.block_channels.len()).enumerate() {
        x = g.conv2d(x, block[0], block[1], 1, pad)?;
        let mode = match &mut stats {
            Stats::Train(r) => BatchNormMode::Train {
                running: &mut r[i],
                momentum,
            },
            Stats::Eval(r) => BatchNormMode::Eval { running: &r[i] },
        };
        x = g.batchnorm2d(x, block[2], block[3], mode, eps)?;
        x = g.relu(x);
        x = g.maxpool2d(x)?;
    }
    let features = x;
    let n = vars.len();
    let pooled = g.adaptive_avg_pool(features)?;
    let b = g.value(pooled).shape()[0];
    let flat = g.reshape(pooled, vec![b, *config.block_channels.last().expect("validated")])?;
    let hidden = g.linear(flat, vars[n - 4], vars[n - 3])?;
    let hidden = g.relu(hidden);
    let hidden = g.dropout(hidden, config.dropout_p, rng)?;
    let logits = g.linear(hidden, vars[n - 2], vars[n - 1])?;
    Ok(Forward {
        logits,
        features,
        params: vars,
    })
}
