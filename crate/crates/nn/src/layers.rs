//! Parameterized building blocks on top of the tape.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{Init, ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
pub struct Conv {
    w: ParamId,
    b: ParamId,
    pub cin: usize,
    pub cout: usize,
}

impl Conv {
    pub fn new<T: Real>(store: &mut ParamStore<T>, init: &mut Init, name: &str, cin: usize, cout: usize, alpha: f64) -> Self {
        let w = store.add_param(&format!("{name}.w"), init.he([cout, cin, 3, 3, 3], cin * 27, alpha));
        let b = store.add_param(&format!("{name}.b"), Tensor::zeros([1, cout, 1, 1, 1]));
        Conv { w, b, cin, cout }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &mut ParamStore<T>, x: NodeId) -> Result<NodeId> {
        let w = store.bind(g, self.w);
        let b = store.bind(g, self.b);
        g.conv3d(x, w, Some(b))
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    gamma: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
    pub channels: usize,
}

impl BatchNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        let shape = [1, channels, 1, 1, 1];
        BatchNorm {
            gamma: store.add_param(&format!("{name}.gamma"), Tensor::filled(shape, T::one())),
            beta: store.add_param(&format!("{name}.beta"), Tensor::zeros(shape)),
            running_mean: store.add_buffer(&format!("{name}.running_mean"), Tensor::zeros(shape)),
            running_var: store.add_buffer(&format!("{name}.running_var"), Tensor::filled(shape, T::one())),
            channels,
        }
    }

    /// Train mode normalizes with batch statistics and updates the running
    /// ones (`r ← 0.9·r + 0.1·batch`, unbiased variance); eval mode uses the
    /// running statistics.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &mut ParamStore<T>, x: NodeId, mode: Mode) -> Result<NodeId> {
        let gamma = store.bind(g, self.gamma);
        let beta = store.bind(g, self.beta);
        let eps = T::from_f64_lossy(BN_EPS);
        match mode {
            Mode::Train => {
                let (y, mean, var) = g.batch_norm_train(x, gamma, beta, eps)?;
                let n = g.value(x).batch() * g.value(x).voxels();
                let unbias = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
                let (m, keep) = (T::from_f64_lossy(BN_MOMENTUM), T::from_f64_lossy(1.0 - BN_MOMENTUM));
                let u = T::from_f64_lossy(unbias);
                for (r, &b) in store.value_mut(self.running_mean).data_mut().iter_mut().zip(&mean) {
                    *r = m * *r + keep * b;
                }
                for (r, &b) in store.value_mut(self.running_var).data_mut().iter_mut().zip(&var) {
                    *r = m * *r + keep * b * u;
                }
                Ok(y)
            }
            Mode::Eval => {
                let mean = store.value(self.running_mean).data().to_vec();
                let var = store.value(self.running_var).data().to_vec();
                g.batch_norm_eval(x, gamma, beta, &mean, &var, eps)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    w: ParamId,
    b: ParamId,
    pub fin: usize,
    pub fout: usize,
}

impl Linear {
    pub fn new<T: Real>(store: &mut ParamStore<T>, init: &mut Init, name: &str, fin: usize, fout: usize) -> Self {
        // Fan-in scaling without the rectifier gain: no activation follows.
        let w = store.add_param(&format!("{name}.w"), init.normal([fout, fin, 1, 1, 1], (1.0 / fin as f64).sqrt()));
        let b = store.add_param(&format!("{name}.b"), Tensor::zeros([1, fout, 1, 1, 1]));
        Linear { w, b, fin, fout }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &mut ParamStore<T>, x: NodeId) -> Result<NodeId> {
        let w = store.bind(g, self.w);
        let b = store.bind(g, self.b);
        g.linear(x, w, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseBlockConfig {
    /// Layers per block, `L`.
    pub layers: usize,
    /// Channels added per layer, `k`.
    pub growth: usize,
    /// Filters of the convolution in front of the first block.
    pub first_conv: usize,
}

impl DenseBlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.growth == 0 || self.first_conv == 0 {
            return Err(Error::Config(format!("dense block needs L, k and first-conv filters ≥ 1, got {self:?}")));
        }
        Ok(())
    }

    pub fn out_channels(&self, cin: usize) -> usize {
        cin + self.layers * self.growth
    }
}

/// Output of a dense block: everything, and only the layers' new features.
#[derive(Debug, Clone, Copy)]
pub struct DenseOut {
    pub all: NodeId,
    pub new: NodeId,
}

#[derive(Debug, Clone)]
pub struct DenseBlock {
    layers: Vec<(BatchNorm, Conv)>,
    pub cin: usize,
    pub cout: usize,
    alpha: f64,
}

impl DenseBlock {
    pub fn new<T: Real>(store: &mut ParamStore<T>, init: &mut Init, name: &str, cin: usize, cfg: DenseBlockConfig, alpha: f64) -> Result<Self> {
        cfg.validate()?;
        let mut layers = Vec::with_capacity(cfg.layers);
        let mut c = cin;
        for l in 0..cfg.layers {
            let bn = BatchNorm::new(store, &format!("{name}.l{l}.bn"), c);
            let conv = Conv::new(store, init, &format!("{name}.l{l}.conv"), c, cfg.growth, alpha);
            layers.push((bn, conv));
            c += cfg.growth;
        }
        let cout = cfg.out_channels(cin);
        assert_eq!(c, cout, "dense block channel count");
        Ok(DenseBlock { layers, cin, cout, alpha })
    }

    pub fn new_channels(&self) -> usize {
        self.cout - self.cin
    }

    /// Each layer sees the concatenation of the block input and all earlier
    /// layer outputs: BN → leaky ReLU → conv.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &mut ParamStore<T>, x: NodeId, mode: Mode) -> Result<DenseOut> {
        if g.value(x).channels() != self.cin {
            return Err(Error::Shape(format!("dense block for {} channels got {}", self.cin, g.value(x).channels())));
        }
        let mut features = vec![x];
        let mut new = Vec::with_capacity(self.layers.len());
        for (bn, conv) in &self.layers {
            let input = if features.len() == 1 { x } else { g.concat_channels(&features)? };
            let h = bn.forward(g, store, input, mode)?;
            let h = g.leaky_relu(h, T::from_f64_lossy(self.alpha));
            let o = conv.forward(g, store, h)?;
            features.push(o);
            new.push(o);
        }
        let all = g.concat_channels(&features)?;
        let new = if new.len() == 1 { new[0] } else { g.concat_channels(&new)? };
        assert_eq!(g.value(all).channels(), self.cout, "measured dense block output channels");
        Ok(DenseOut { all, new })
    }
}
