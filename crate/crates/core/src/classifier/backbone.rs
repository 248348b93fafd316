//! Convolutional feature extractors shared by the classifier and the
//! captioner's image encoder.
//!
//! Every backbone maps an `N × C × H × W` batch to its final convolutional
//! activation maps `N × K × h × w`; those maps are what Grad-CAM inspects.
//! Parameter names follow the torchvision layout so converted pretrained
//! weights can be dropped in.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Graph, ParamStore, Var};

const BN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackboneSpec {
    /// Stack of 3×3 conv + ReLU layers with a 2×2 max-pool between
    /// consecutive layers. `padding` 0 gives valid convolutions.
    Tiny {
        channels: Vec<usize>,
        #[serde(default = "same_padding")]
        padding: usize,
    },
    /// 121-layer densely connected network (growth 32, blocks 6/12/24/16).
    DenseNet121,
    /// 101-layer bottleneck residual network (blocks 3/4/23/3).
    ResNet101,
}

impl BackboneSpec {
    pub fn tiny(channels: &[usize]) -> Self {
        BackboneSpec::Tiny {
            channels: channels.to_vec(),
            padding: 1,
        }
    }

    /// Tiny stack without zero padding; constant inputs give spatially
    /// constant activations.
    pub fn tiny_valid(channels: &[usize]) -> Self {
        BackboneSpec::Tiny {
            channels: channels.to_vec(),
            padding: 0,
        }
    }

    pub fn name(&self) -> String {
        match self {
            BackboneSpec::Tiny { channels, padding } => format!("tiny{channels:?}p{padding}"),
            BackboneSpec::DenseNet121 => "densenet121".into(),
            BackboneSpec::ResNet101 => "resnet101".into(),
        }
    }

    /// Number of feature maps `K` in the final activation.
    pub fn out_channels(&self) -> usize {
        match self {
            BackboneSpec::Tiny { channels, .. } => *channels.last().unwrap_or(&1),
            BackboneSpec::DenseNet121 => 1024,
            BackboneSpec::ResNet101 => 2048,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if let BackboneSpec::Tiny { channels, padding } = self {
            if channels.is_empty() || channels.contains(&0) || *padding > 1 {
                return Err(crate::Error::Config(
                    "tiny backbone needs non-empty conv layers and padding 0 or 1".into(),
                ));
            }
        }
        Ok(())
    }

    /// Registers freshly initialized parameters under `prefix`.
    pub fn init<R: Rng>(&self, prefix: &str, in_channels: usize, store: &mut ParamStore, rng: &mut R) {
        let mut b = Builder { prefix, store, rng };
        match self {
            BackboneSpec::Tiny { channels, .. } => {
                let mut c_in = in_channels;
                for (i, &c) in channels.iter().enumerate() {
                    b.conv(&format!("conv{i}"), c, c_in, 3);
                    b.store.init_zeros(&format!("{prefix}conv{i}.bias"), &[c]);
                    c_in = c;
                }
            }
            BackboneSpec::DenseNet121 => {
                b.conv("features.conv0", 64, in_channels, 7);
                b.bn("features.norm0", 64);
                let mut c = 64;
                for (bi, &layers) in DENSE_BLOCKS.iter().enumerate() {
                    for li in 0..layers {
                        let p = format!("features.denseblock{}.denselayer{}", bi + 1, li + 1);
                        let c_in = c + li * GROWTH;
                        b.bn(&format!("{p}.norm1"), c_in);
                        b.conv(&format!("{p}.conv1"), BN_SIZE * GROWTH, c_in, 1);
                        b.bn(&format!("{p}.norm2"), BN_SIZE * GROWTH);
                        b.conv(&format!("{p}.conv2"), GROWTH, BN_SIZE * GROWTH, 3);
                    }
                    c += layers * GROWTH;
                    if bi + 1 < DENSE_BLOCKS.len() {
                        let p = format!("features.transition{}", bi + 1);
                        b.bn(&format!("{p}.norm"), c);
                        b.conv(&format!("{p}.conv"), c / 2, c, 1);
                        c /= 2;
                    }
                }
                b.bn("features.norm5", c);
            }
            BackboneSpec::ResNet101 => {
                b.conv("conv1", 64, in_channels, 7);
                b.bn("bn1", 64);
                let mut c_in = 64;
                for (li, &(blocks, planes)) in RESNET_LAYERS.iter().enumerate() {
                    for bi in 0..blocks {
                        let p = format!("layer{}.{bi}", li + 1);
                        b.conv(&format!("{p}.conv1"), planes, c_in, 1);
                        b.bn(&format!("{p}.bn1"), planes);
                        b.conv(&format!("{p}.conv2"), planes, planes, 3);
                        b.bn(&format!("{p}.bn2"), planes);
                        b.conv(&format!("{p}.conv3"), planes * 4, planes, 1);
                        b.bn(&format!("{p}.bn3"), planes * 4);
                        if bi == 0 {
                            b.conv(&format!("{p}.downsample.0"), planes * 4, c_in, 1);
                            b.bn(&format!("{p}.downsample.1"), planes * 4);
                        }
                        c_in = planes * 4;
                    }
                }
            }
        }
    }

    /// Final activation maps for input batch `x`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, prefix: &str, x: Var) -> Var {
        let f = Forward { g, store, prefix };
        match self {
            BackboneSpec::Tiny { channels, padding } => f.tiny(x, channels.len(), *padding),
            BackboneSpec::DenseNet121 => f.densenet(x),
            BackboneSpec::ResNet101 => f.resnet(x),
        }
    }
}

fn same_padding() -> usize {
    1
}

const GROWTH: usize = 32;
const BN_SIZE: usize = 4;
const DENSE_BLOCKS: [usize; 4] = [6, 12, 24, 16];
const RESNET_LAYERS: [(usize, usize); 4] = [(3, 64), (4, 128), (23, 256), (3, 512)];

struct Builder<'a, R> {
    prefix: &'a str,
    store: &'a mut ParamStore,
    rng: &'a mut R,
}

impl<R: Rng> Builder<'_, R> {
    fn conv(&mut self, name: &str, out: usize, inp: usize, k: usize) {
        let full = format!("{}{name}.weight", self.prefix);
        self.store.init_he(&full, &[out, inp, k, k], inp * k * k, self.rng);
    }

    fn bn(&mut self, name: &str, c: usize) {
        let p = format!("{}{name}", self.prefix);
        self.store.init_const(&format!("{p}.weight"), &[c], 1.0);
        self.store.init_zeros(&format!("{p}.bias"), &[c]);
        self.store.init_zeros(&format!("{p}.running_mean"), &[c]);
        self.store.init_const(&format!("{p}.running_var"), &[c], 1.0);
        // running statistics are buffers, never trained
        self.store.freeze(&format!("{p}.running_mean"));
        self.store.freeze(&format!("{p}.running_var"));
    }
}

struct Forward<'a> {
    g: &'a mut Graph,
    store: &'a ParamStore,
    prefix: &'a str,
}

impl Forward<'_> {
    fn p(&mut self, name: &str) -> Var {
        let full = format!("{}{name}", self.prefix);
        self.g.param(self.store, &full)
    }

    fn conv(&mut self, x: Var, name: &str, stride: usize, pad: usize) -> Var {
        let w = self.p(&format!("{name}.weight"));
        self.g.conv2d(x, w, stride, pad)
    }

    /// Inference-mode batch norm with frozen running statistics.
    fn bn(&mut self, x: Var, name: &str) -> Var {
        let c = self.g.shape(x)[1];
        let var = self
            .store
            .get(&format!("{}{name}.running_var", self.prefix))
            .expect("bn running_var");
        let inv_std = ArrayD::from_shape_vec(
            IxDyn(&[1, c, 1, 1]),
            var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect(),
        )
        .unwrap();
        let inv_std = self.g.input(inv_std);
        let mean = self.p(&format!("{name}.running_mean"));
        let mean = self.g.reshape(mean, &[1, c, 1, 1]);
        let gamma = self.p(&format!("{name}.weight"));
        let gamma = self.g.reshape(gamma, &[1, c, 1, 1]);
        let beta = self.p(&format!("{name}.bias"));
        let beta = self.g.reshape(beta, &[1, c, 1, 1]);
        let centered = self.g.sub(x, mean);
        let scaled = self.g.mul(centered, inv_std);
        let scaled = self.g.mul(scaled, gamma);
        self.g.add(scaled, beta)
    }

    fn bn_relu(&mut self, x: Var, name: &str) -> Var {
        let y = self.bn(x, name);
        self.g.relu(y)
    }

    fn tiny(mut self, mut x: Var, layers: usize, pad: usize) -> Var {
        for i in 0..layers {
            if i > 0 {
                x = self.g.max_pool(x, 2, 2, 0);
            }
            x = self.conv(x, &format!("conv{i}"), 1, pad);
            let c = self.g.shape(x)[1];
            let b = self.p(&format!("conv{i}.bias"));
            let b = self.g.reshape(b, &[1, c, 1, 1]);
            x = self.g.add(x, b);
            x = self.g.relu(x);
        }
        x
    }

    fn densenet(mut self, x: Var) -> Var {
        let mut x = self.conv(x, "features.conv0", 2, 3);
        x = self.bn_relu(x, "features.norm0");
        x = self.g.max_pool(x, 3, 2, 1);
        for (bi, &layers) in DENSE_BLOCKS.iter().enumerate() {
            let mut feats = vec![x];
            for li in 0..layers {
                let p = format!("features.denseblock{}.denselayer{}", bi + 1, li + 1);
                let cat = if feats.len() == 1 { feats[0] } else { self.g.concat(&feats, 1) };
                let mut y = self.bn_relu(cat, &format!("{p}.norm1"));
                y = self.conv(y, &format!("{p}.conv1"), 1, 0);
                y = self.bn_relu(y, &format!("{p}.norm2"));
                y = self.conv(y, &format!("{p}.conv2"), 1, 1);
                feats.push(y);
            }
            x = self.g.concat(&feats, 1);
            if bi + 1 < DENSE_BLOCKS.len() {
                let p = format!("features.transition{}", bi + 1);
                x = self.bn_relu(x, &format!("{p}.norm"));
                x = self.conv(x, &format!("{p}.conv"), 1, 0);
                x = self.g.avg_pool(x, 2, 2, 0);
            }
        }
        self.bn_relu(x, "features.norm5")
    }

    fn resnet(mut self, x: Var) -> Var {
        let mut x = self.conv(x, "conv1", 2, 3);
        x = self.bn_relu(x, "bn1");
        x = self.g.max_pool(x, 3, 2, 1);
        for (li, &(blocks, _)) in RESNET_LAYERS.iter().enumerate() {
            for bi in 0..blocks {
                let p = format!("layer{}.{bi}", li + 1);
                let stride = if bi == 0 && li > 0 { 2 } else { 1 };
                let mut y = self.conv(x, &format!("{p}.conv1"), 1, 0);
                y = self.bn_relu(y, &format!("{p}.bn1"));
                y = self.conv(y, &format!("{p}.conv2"), stride, 1);
                y = self.bn_relu(y, &format!("{p}.bn2"));
                y = self.conv(y, &format!("{p}.conv3"), 1, 0);
                y = self.bn(y, &format!("{p}.bn3"));
                let shortcut = if bi == 0 {
                    let s = self.conv(x, &format!("{p}.downsample.0"), stride, 0);
                    self.bn(s, &format!("{p}.downsample.1"))
                } else {
                    x
                };
                let sum = self.g.add(y, shortcut);
                x = self.g.relu(sum);
            }
        }
        x
    }
}
