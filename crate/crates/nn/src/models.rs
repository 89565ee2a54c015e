//! The dense encoder-decoder segmentor and the geodesic autoencoder.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::layers::{BatchNorm, Conv, DenseBlock, DenseBlockConfig, Linear, Mode};
use crate::params::{Init, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

pub const DEFAULT_ALPHA: f64 = 0.1;

fn check_input(input: [usize; 3], blocks: usize) -> Result<()> {
    let [nz, ny, nx] = input;
    if blocks == 0 {
        return Err(Error::Config("need at least one block per path".into()));
    }
    if nz == 0 || ny == 0 || nx == 0 {
        return Err(Error::Config(format!("empty input dims {input:?}")));
    }
    let f = 1usize.checked_shl(blocks as u32).unwrap_or(usize::MAX);
    if ny % f != 0 || nx % f != 0 {
        return Err(Error::Config(format!("{blocks} poolings need x-y dims divisible by {f}, got {ny}×{nx}")));
    }
    Ok(())
}

fn expect_shape<T: Real>(g: &Graph<T>, x: NodeId, channels: usize, input: [usize; 3]) -> Result<usize> {
    let v = g.value(x);
    if v.channels() != channels || v.spatial() != input || v.batch() == 0 {
        return Err(Error::Shape(format!(
            "network expects [B,{channels},{},{},{}], got {:?}",
            input[0],
            input[1],
            input[2],
            v.shape()
        )));
    }
    Ok(v.batch())
}

/// BN → leaky ReLU → 3×3×3 conv to class scores.
#[derive(Debug, Clone)]
struct Head {
    bn: BatchNorm,
    conv: Conv,
}

impl Head {
    fn new<T: Real>(store: &mut ParamStore<T>, init: &mut Init, cin: usize, classes: usize, alpha: f64) -> Self {
        Head {
            bn: BatchNorm::new(store, "head.bn", cin),
            conv: Conv::new(store, init, "head.conv", cin, classes, alpha),
        }
    }

    fn forward<T: Real>(&self, g: &mut Graph<T>, store: &mut ParamStore<T>, x: NodeId, mode: Mode, alpha: f64) -> Result<NodeId> {
        let h = self.bn.forward(g, store, x, mode)?;
        let h = g.leaky_relu(h, T::from_f64_lossy(alpha));
        self.conv.forward(g, store, h)
    }
}

/// Encoder blocks and the channel count leaving each.
fn build_encoder<T: Real>(store: &mut ParamStore<T>, init: &mut Init, blocks: usize, dense: DenseBlockConfig, alpha: f64) -> Result<Vec<DenseBlock>> {
    let mut c = dense.first_conv;
    let mut out = Vec::with_capacity(blocks);
    for i in 0..blocks {
        let db = DenseBlock::new(store, init, &format!("down{i}"), c, dense, alpha)?;
        c = db.cout;
        out.push(db);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentorConfig {
    /// `[nz, ny, nx]`.
    pub input: [usize; 3],
    pub in_channels: usize,
    pub classes: usize,
    /// Dense blocks per path, `B`.
    pub blocks: usize,
    pub dense: DenseBlockConfig,
    pub alpha: f64,
}

impl SegmentorConfig {
    pub fn toy() -> Self {
        SegmentorConfig {
            input: [8, 32, 32],
            in_channels: 1,
            classes: 4,
            blocks: 2,
            dense: DenseBlockConfig {
                layers: 2,
                growth: 4,
                first_conv: 8,
            },
            alpha: DEFAULT_ALPHA,
        }
    }

    pub fn full(input: [usize; 3]) -> Self {
        SegmentorConfig {
            input,
            blocks: 4,
            dense: DenseBlockConfig {
                layers: 4,
                growth: 16,
                first_conv: 16,
            },
            ..Self::toy()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dense.validate()?;
        check_input(self.input, self.blocks)?;
        if self.in_channels == 0 || self.classes < 2 {
            return Err(Error::Config(format!("{} input channels, {} classes", self.in_channels, self.classes)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Segmentor<T> {
    pub cfg: SegmentorConfig,
    /// Initialization seed.
    pub seed: u64,
    pub store: ParamStore<T>,
    stem: Conv,
    down: Vec<DenseBlock>,
    up: Vec<DenseBlock>,
    head: Head,
}

impl<T: Real> Segmentor<T> {
    pub fn new(cfg: SegmentorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init::new(seed);
        let d = cfg.dense;
        let stem = Conv::new(&mut store, &mut init, "stem", cfg.in_channels, d.first_conv, cfg.alpha);
        let down = build_encoder(&mut store, &mut init, cfg.blocks, d, cfg.alpha)?;
        let mut up = Vec::with_capacity(cfg.blocks);
        // The deepest decoder block sees the upsampled bottleneck next to
        // its skip; later ones see the previous block's new features only.
        let mut carried = down[cfg.blocks - 1].cout;
        for j in 0..cfg.blocks {
            let skip = down[cfg.blocks - 1 - j].cout;
            let db = DenseBlock::new(&mut store, &mut init, &format!("up{j}"), carried + skip, d, cfg.alpha)?;
            carried = db.new_channels();
            up.push(db);
        }
        let head = Head::new(&mut store, &mut init, up[cfg.blocks - 1].cout, cfg.classes, cfg.alpha);
        Ok(Segmentor {
            cfg,
            seed,
            store,
            stem,
            down,
            up,
            head,
        })
    }

    /// Per-voxel class scores before the softmax.
    pub fn logits(&mut self, g: &mut Graph<T>, x: NodeId, mode: Mode) -> Result<NodeId> {
        expect_shape(g, x, self.cfg.in_channels, self.cfg.input)?;
        let store = &mut self.store;
        let mut h = self.stem.forward(g, store, x)?;
        let mut skips = Vec::with_capacity(self.down.len());
        for db in &self.down {
            let o = db.forward(g, store, h, mode)?;
            skips.push(o.all);
            h = g.maxpool_xy(o.all)?;
        }
        let mut last = None;
        for db in &self.up {
            let skip = skips.pop().expect("one skip per level");
            let u = g.upsample_xy(h);
            let input = g.concat_channels(&[u, skip])?;
            let o = db.forward(g, store, input, mode)?;
            h = o.new;
            last = Some(o.all);
        }
        self.head.forward(g, store, last.expect("at least one block"), mode, self.cfg.alpha)
    }

    /// Per-voxel class probabilities `P`.
    pub fn forward(&mut self, g: &mut Graph<T>, x: NodeId, mode: Mode) -> Result<NodeId> {
        let l = self.logits(g, x, mode)?;
        Ok(g.softmax(l))
    }

    /// Probabilities for a batch of images, without gradients.
    pub fn predict(&mut self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        let p = self.forward(&mut g, x, Mode::Eval)?;
        self.store.clear_bindings();
        Ok(g.value(p).clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaeConfig {
    pub input: [usize; 3],
    /// Prior channels, one per foreground class.
    pub in_channels: usize,
    pub classes: usize,
    pub blocks: usize,
    pub dense: DenseBlockConfig,
    /// Bottleneck length `L_feat`.
    pub feat_len: usize,
    pub alpha: f64,
}

impl GaeConfig {
    pub fn toy() -> Self {
        GaeConfig {
            input: [8, 32, 32],
            in_channels: 3,
            classes: 4,
            blocks: 2,
            dense: SegmentorConfig::toy().dense,
            feat_len: 64,
            alpha: DEFAULT_ALPHA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dense.validate()?;
        check_input(self.input, self.blocks)?;
        if self.in_channels == 0 || self.classes < 2 || self.feat_len == 0 {
            return Err(Error::Config(format!(
                "{} input channels, {} classes, bottleneck {}",
                self.in_channels, self.classes, self.feat_len
            )));
        }
        Ok(())
    }

    /// Spatial dims at the bottleneck.
    pub fn bottom(&self) -> [usize; 3] {
        let [nz, ny, nx] = self.input;
        [nz, ny >> self.blocks, nx >> self.blocks]
    }
}

/// Autoencoder from prior maps to label probabilities through an
/// `L_feat`-long code, without skips.
#[derive(Debug, Clone)]
pub struct Gae<T> {
    pub cfg: GaeConfig,
    /// Initialization seed.
    pub seed: u64,
    pub store: ParamStore<T>,
    stem: Conv,
    down: Vec<DenseBlock>,
    bottom_channels: usize,
    to_feat: Linear,
    from_feat: Linear,
    up: Vec<DenseBlock>,
    head: Head,
}

impl<T: Real> Gae<T> {
    pub fn new(cfg: GaeConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init::new(seed);
        let d = cfg.dense;
        let stem = Conv::new(&mut store, &mut init, "stem", cfg.in_channels, d.first_conv, cfg.alpha);
        let down = build_encoder(&mut store, &mut init, cfg.blocks, d, cfg.alpha)?;
        let bottom_channels = down[cfg.blocks - 1].cout;
        let flat = bottom_channels * cfg.bottom().iter().product::<usize>();
        let to_feat = Linear::new(&mut store, &mut init, "fc_enc", flat, cfg.feat_len);
        let from_feat = Linear::new(&mut store, &mut init, "fc_dec", cfg.feat_len, flat);
        let mut up = Vec::with_capacity(cfg.blocks);
        let mut carried = bottom_channels;
        for j in 0..cfg.blocks {
            let db = DenseBlock::new(&mut store, &mut init, &format!("up{j}"), carried, d, cfg.alpha)?;
            carried = db.new_channels();
            up.push(db);
        }
        let head = Head::new(&mut store, &mut init, up[cfg.blocks - 1].cout, cfg.classes, cfg.alpha);
        Ok(Gae {
            cfg,
            seed,
            store,
            stem,
            down,
            bottom_channels,
            to_feat,
            from_feat,
            up,
            head,
        })
    }

    /// `Feat_gae` as a `[B, L_feat, 1, 1, 1]` node.
    pub fn encode(&mut self, g: &mut Graph<T>, x: NodeId, mode: Mode) -> Result<NodeId> {
        expect_shape(g, x, self.cfg.in_channels, self.cfg.input)?;
        let store = &mut self.store;
        let mut h = self.stem.forward(g, store, x)?;
        for db in &self.down {
            let o = db.forward(g, store, h, mode)?;
            h = g.maxpool_xy(o.all)?;
        }
        self.to_feat.forward(g, store, h)
    }

    pub fn decode_logits(&mut self, g: &mut Graph<T>, feat: NodeId, mode: Mode) -> Result<NodeId> {
        let nb = g.value(feat).batch();
        let store = &mut self.store;
        let flat = self.from_feat.forward(g, store, feat)?;
        let [nz, ny, nx] = self.cfg.bottom();
        let mut h = g.reshape(flat, [nb, self.bottom_channels, nz, ny, nx])?;
        let mut last = None;
        for db in &self.up {
            let u = g.upsample_xy(h);
            let o = db.forward(g, store, u, mode)?;
            h = o.new;
            last = Some(o.all);
        }
        self.head.forward(g, store, last.expect("at least one block"), mode, self.cfg.alpha)
    }

    pub fn logits(&mut self, g: &mut Graph<T>, x: NodeId, mode: Mode) -> Result<NodeId> {
        let f = self.encode(g, x, mode)?;
        self.decode_logits(g, f, mode)
    }

    /// Reconstructed label probabilities `B̂`.
    pub fn forward(&mut self, g: &mut Graph<T>, x: NodeId, mode: Mode) -> Result<NodeId> {
        let l = self.logits(g, x, mode)?;
        Ok(g.softmax(l))
    }

    /// Codes for a batch of prior maps, without gradients.
    pub fn features(&mut self, maps: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.constant(maps.clone());
        let f = self.encode(&mut g, x, Mode::Eval)?;
        self.store.clear_bindings();
        Ok(g.value(f).clone())
    }

    pub fn predict(&mut self, maps: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.constant(maps.clone());
        let p = self.forward(&mut g, x, Mode::Eval)?;
        self.store.clear_bindings();
        Ok(g.value(p).clone())
    }
}

/// Foreground probability channels of `P`, the input `Enc_gae` sees for a
/// segmentor output.
pub fn foreground_channels<T: Real>(g: &mut Graph<T>, probs: NodeId) -> Result<NodeId> {
    let c = g.value(probs).channels();
    g.slice_channels(probs, 1, c - 1)
}
