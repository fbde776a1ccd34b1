//! Model zoo: the depthwise-separable MNIST network, a small VGG-style CNN,
//! and plain MLPs for synthetic tasks.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::PoolGeom;
use crate::error::{Error, Result};
use crate::nn::layer::{LayerKind, LayerSpec, QuantLayer};
use crate::nn::network::{Network, Stage};
use crate::tensor::Tensor;

/// Architecture choice as it appears in configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "kebab-case")]
pub enum Architecture {
    MnistDwsep {
        #[serde(default = "default_dwsep_widths")]
        widths: [usize; 2],
        #[serde(default = "default_dw_multiplier")]
        dw_multiplier: usize,
    },
    VggSmall {
        depth: usize,
        #[serde(default = "default_vgg_width")]
        base_width: usize,
    },
    Mlp {
        dims: Vec<usize>,
    },
}

fn default_dwsep_widths() -> [usize; 2] {
    [16, 32]
}

fn default_dw_multiplier() -> usize {
    8
}

fn default_vgg_width() -> usize {
    16
}

impl Architecture {
    pub fn build<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Network> {
        match self {
            Architecture::MnistDwsep { widths, dw_multiplier } => build_mnist_dwsep_with(*widths, *dw_multiplier, rng),
            Architecture::VggSmall { depth, base_width } => build_vgg_small_with(*depth, *base_width, rng),
            Architecture::Mlp { dims } => build_mlp(dims, rng),
        }
    }
}

/// He-normal initialization for a weight of the given shape.
fn he_normal<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    Tensor::from_fn(shape, |_| normal.sample(rng))
}

struct Builder<'r, R: ?Sized> {
    rng: &'r mut R,
    stages: Vec<Stage>,
    layers: Vec<QuantLayer>,
}

impl<R: Rng + ?Sized> Builder<'_, R> {
    fn layer(&mut self, name: &str, kind: LayerKind, shape: Vec<usize>) -> &mut Self {
        let fan_in = match kind {
            LayerKind::Dense => shape[1],
            _ => shape[1] * shape[2] * shape[3],
        };
        let weight = he_normal(&shape, fan_in, self.rng);
        let spec = LayerSpec {
            name: name.to_string(),
            kind,
            weight_shape: shape,
            quantizable: true,
        };
        let layer = QuantLayer::new(spec, weight).expect("shape built from spec");
        self.stages.push(Stage::Layer(self.layers.len()));
        self.layers.push(layer);
        self
    }

    fn stage(&mut self, s: Stage) -> &mut Self {
        self.stages.push(s);
        self
    }

    fn finish(self, name: &str, input_shape: Vec<usize>, classes: usize) -> Network {
        Network {
            name: name.to_string(),
            input_shape,
            classes,
            stages: self.stages,
            layers: self.layers,
        }
    }
}

fn builder<R: Rng + ?Sized>(rng: &mut R) -> Builder<'_, R> {
    Builder {
        rng,
        stages: Vec::new(),
        layers: Vec::new(),
    }
}

/// Two depthwise-separable blocks (16 and 32 channels) and a dense classifier.
pub fn build_mnist_dwsep<R: Rng + ?Sized>(rng: &mut R) -> Result<Network> {
    build_mnist_dwsep_with(default_dwsep_widths(), default_dw_multiplier(), rng)
}

pub fn build_mnist_dwsep_with<R: Rng + ?Sized>(widths: [usize; 2], dw_multiplier: usize, rng: &mut R) -> Result<Network> {
    if widths.contains(&0) || dw_multiplier == 0 {
        return Err(Error::Config(format!("invalid dwsep widths {widths:?} / multiplier {dw_multiplier}")));
    }
    let [w1, w2] = widths;
    let pad1 = LayerKind::DepthwiseConv { stride: 1, padding: 1 };
    let pw = LayerKind::Conv { stride: 1, padding: 0 };
    let pool = Stage::MaxPool(PoolGeom::new(2, 2));
    let mut b = builder(rng);
    b.layer("block1.depthwise", pad1, vec![dw_multiplier, 1, 3, 3])
        .stage(Stage::Relu)
        .layer("block1.pointwise", pw, vec![w1, dw_multiplier, 1, 1])
        .stage(Stage::Relu)
        .stage(pool)
        .layer("block2.depthwise", pad1, vec![w1, 1, 3, 3])
        .stage(Stage::Relu)
        .layer("block2.pointwise", pw, vec![w2, w1, 1, 1])
        .stage(Stage::Relu)
        .stage(pool)
        .stage(Stage::Flatten)
        .layer("classifier", LayerKind::Dense, vec![10, w2 * 7 * 7]);
    Ok(b.finish("mnist-dwsep", vec![1, 28, 28], 10))
}

/// VGG-style stack of 3×3 conv/BN/ReLU with a 2×2 max pool after every
/// second conv, then a dense head over 10 classes. Input is 3×32×32.
pub fn build_vgg_small<R: Rng + ?Sized>(depth: usize, rng: &mut R) -> Result<Network> {
    build_vgg_small_with(depth, default_vgg_width(), rng)
}

pub fn build_vgg_small_with<R: Rng + ?Sized>(depth: usize, base_width: usize, rng: &mut R) -> Result<Network> {
    if ![4, 6, 8].contains(&depth) {
        return Err(Error::Config(format!("unsupported VGG depth {depth}; expected 4, 6 or 8")));
    }
    if base_width == 0 {
        return Err(Error::Config("VGG base width must be positive".into()));
    }
    let conv = LayerKind::Conv { stride: 1, padding: 1 };
    let mut b = builder(rng);
    let mut in_ch = 3;
    let mut spatial = 32;
    for i in 0..depth {
        let out_ch = base_width << (i / 2);
        b.layer(&format!("conv{}", i + 1), conv, vec![out_ch, in_ch, 3, 3]).stage(Stage::Relu);
        if i % 2 == 1 {
            b.stage(Stage::MaxPool(PoolGeom::new(2, 2)));
            spatial /= 2;
        }
        in_ch = out_ch;
    }
    b.stage(Stage::Flatten).layer("classifier", LayerKind::Dense, vec![10, in_ch * spatial * spatial]);
    Ok(b.finish(&format!("vgg-small-{depth}"), vec![3, 32, 32], 10))
}

/// Dense layers `dims[0] → dims[1] → …` with ReLU between them.
pub fn build_mlp<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Network> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::Config(format!("invalid MLP dims {dims:?}")));
    }
    let mut b = builder(rng);
    for (i, pair) in dims.windows(2).enumerate() {
        if i > 0 {
            b.stage(Stage::Relu);
        }
        b.layer(&format!("fc{}", i + 1), LayerKind::Dense, vec![pair[1], pair[0]]);
    }
    Ok(b.finish("mlp", vec![dims[0]], *dims.last().unwrap()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn output_shape(net: &Network, batch: usize) -> Vec<usize> {
        let mut g = Graph::new();
        let mut shape = vec![batch];
        shape.extend(&net.input_shape);
        let x = g.constant(Tensor::zeros(&shape));
        let b = net.bind(&mut g, false, None, false).unwrap();
        let (y, _) = net.forward(&mut g, x, &b, true).unwrap();
        g.value(y).shape().to_vec()
    }

    #[test]
    fn mnist_dwsep_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = build_mnist_dwsep(&mut rng).unwrap();
        assert_eq!(output_shape(&net, 32), vec![32, 10]);
        let depthwise = net.layers.iter().filter(|l| matches!(l.spec.kind, LayerKind::DepthwiseConv { .. })).count();
        let pointwise = net.layers.iter().filter(|l| matches!(l.spec.kind, LayerKind::Conv { .. })).count();
        assert_eq!((depthwise, pointwise), (2, 2));
        assert!(net.layers.len() >= 4);
        // 8·9 + 16·8 + 16·9 + 32·16 + 10·32·7·7
        assert_eq!(net.param_counts().iter().sum::<usize>(), 72 + 128 + 144 + 512 + 15680);
    }

    #[test]
    fn vgg_small_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = build_vgg_small(4, &mut rng).unwrap();
        assert_eq!(output_shape(&net, 16), vec![16, 10]);
        let net6 = build_vgg_small(6, &mut rng).unwrap();
        let convs = net6.layers.iter().filter(|l| matches!(l.spec.kind, LayerKind::Conv { .. })).count();
        let dense = net6.layers.iter().filter(|l| l.spec.kind == LayerKind::Dense).count();
        assert_eq!((convs, dense), (6, 1));
        assert!(net6.layers.iter().all(|l| l.spec.quantizable));
        // 3·16·9 + 16·16·9 + 16·32·9 + 32·32·9 + 32·64·9 + 64·64·9 + 10·64·4·4
        let hand = 432 + 2304 + 4608 + 9216 + 18432 + 36864 + 10240;
        assert_eq!(net6.param_counts().iter().sum::<usize>(), hand);
        assert!(build_vgg_small(5, &mut rng).is_err());
    }

    #[test]
    fn weight_count_excludes_norm_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = build_vgg_small(4, &mut rng).unwrap();
        let bn: usize = net.layers.iter().map(|l| 2 * l.spec.out_channels()).sum();
        assert_eq!(net.param_counts().iter().sum::<usize>(), net.trainable_count() - bn);
    }
}
