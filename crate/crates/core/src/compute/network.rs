use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Per-sample input layout. Flat vectors use `channels = height = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl FeatureShape {
    pub fn flat(dim: usize) -> Self {
        Self {
            channels: 1,
            height: 1,
            width: dim,
        }
    }

    pub fn image(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_image(&self) -> bool {
        self.height > 1
    }
}

/// Layer description used to assemble a [`Network`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    /// Fully connected layer with the given output width.
    Dense(usize),
    Relu,
    /// 3x3 convolution, stride 1, zero "same" padding, with the given output channels.
    Conv3x3(usize),
    /// 2x2 average pooling with stride 2.
    AvgPool2,
}

/// Which activation serves as the feature embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmbeddingSource {
    /// The logits themselves.
    #[default]
    Logits,
    /// The input of the final affine layer.
    Penultimate,
}

#[derive(Debug, Clone)]
enum Layer {
    Dense {
        input: usize,
        output: usize,
        offset: usize,
    },
    Relu,
    Conv {
        shape: FeatureShape,
        out_channels: usize,
        offset: usize,
    },
    AvgPool {
        shape: FeatureShape,
    },
}

impl Layer {
    fn param_count(&self) -> usize {
        match *self {
            Layer::Dense { input, output, .. } => output * input + output,
            Layer::Conv {
                shape, out_channels, ..
            } => out_channels * shape.channels * 9 + out_channels,
            Layer::Relu | Layer::AvgPool { .. } => 0,
        }
    }
}

/// Result of a forward pass.
#[derive(Debug, Clone)]
pub struct Outputs {
    pub logits: Tensor,
    pub embedding: Tensor,
}

/// Feed-forward classifier with a flat parameter vector.
///
/// Parameters of all layers live in one contiguous buffer so that optimizers
/// and the finite-difference checker can treat them uniformly. The gradient
/// returned by [`Network::backward`] uses the same layout.
#[derive(Debug, Clone)]
pub struct Network {
    input: FeatureShape,
    layers: Vec<Layer>,
    params: Vec<f64>,
    num_classes: usize,
    /// Index into the activation list (0 = input) holding the embedding.
    embedding_at: usize,
    trace: Option<Vec<Tensor>>,
}

impl Network {
    /// Builds a network and draws He-normal weights; biases start at zero.
    /// The last layer must be `Dense`, its width is the class count.
    pub fn new<R: Rng + ?Sized>(
        input: FeatureShape,
        specs: &[LayerSpec],
        embedding: EmbeddingSource,
        rng: &mut R,
    ) -> Result<Self> {
        let Some(LayerSpec::Dense(num_classes)) = specs.last().copied() else {
            return Err(Error::Config("the final layer must be a dense classifier".into()));
        };
        if input.is_empty() {
            return Err(Error::Config("input shape is empty".into()));
        }
        let mut layers = Vec::with_capacity(specs.len());
        let mut shape = input;
        let mut offset = 0;
        for spec in specs {
            let layer = match *spec {
                LayerSpec::Dense(output) => {
                    if output == 0 {
                        return Err(Error::Config("dense layer with zero width".into()));
                    }
                    let layer = Layer::Dense {
                        input: shape.len(),
                        output,
                        offset,
                    };
                    shape = FeatureShape::flat(output);
                    layer
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::Conv3x3(out_channels) => {
                    if !shape.is_image() || out_channels == 0 {
                        return Err(Error::Config(format!(
                            "convolution needs an image-shaped input, got {shape:?}"
                        )));
                    }
                    let layer = Layer::Conv {
                        shape,
                        out_channels,
                        offset,
                    };
                    shape = FeatureShape::image(out_channels, shape.height, shape.width);
                    layer
                }
                LayerSpec::AvgPool2 => {
                    if !shape.is_image() || !shape.height.is_multiple_of(2) || !shape.width.is_multiple_of(2) {
                        return Err(Error::Config(format!(
                            "average pooling needs even image sides, got {shape:?}"
                        )));
                    }
                    let layer = Layer::AvgPool { shape };
                    shape = FeatureShape::image(shape.channels, shape.height / 2, shape.width / 2);
                    layer
                }
            };
            offset += layer.param_count();
            layers.push(layer);
        }

        let embedding_at = match embedding {
            EmbeddingSource::Logits => layers.len(),
            EmbeddingSource::Penultimate => layers.len() - 1,
        };
        let mut net = Self {
            input,
            layers,
            params: vec![0.0; offset],
            num_classes,
            embedding_at,
            trace: None,
        };
        net.init_params(rng);
        Ok(net)
    }

    /// Two-hidden-layer rectifier perceptron.
    pub fn mlp<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        num_classes: usize,
        embedding: EmbeddingSource,
        rng: &mut R,
    ) -> Result<Self> {
        let mut specs = Vec::new();
        for &h in hidden {
            specs.push(LayerSpec::Dense(h));
            specs.push(LayerSpec::Relu);
        }
        specs.push(LayerSpec::Dense(num_classes));
        Self::new(FeatureShape::flat(input_dim), &specs, embedding, rng)
    }

    /// Two conv/relu/pool blocks followed by a rectifier hidden layer.
    pub fn conv<R: Rng + ?Sized>(
        input: FeatureShape,
        channels: [usize; 2],
        hidden: usize,
        num_classes: usize,
        embedding: EmbeddingSource,
        rng: &mut R,
    ) -> Result<Self> {
        let specs = [
            LayerSpec::Conv3x3(channels[0]),
            LayerSpec::Relu,
            LayerSpec::AvgPool2,
            LayerSpec::Conv3x3(channels[1]),
            LayerSpec::Relu,
            LayerSpec::AvgPool2,
            LayerSpec::Dense(hidden),
            LayerSpec::Relu,
            LayerSpec::Dense(num_classes),
        ];
        Self::new(input, &specs, embedding, rng)
    }

    fn init_params<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for layer in &self.layers {
            let (offset, weights, fan_in) = match *layer {
                Layer::Dense { input, output, offset } => (offset, output * input, input),
                Layer::Conv {
                    shape,
                    out_channels,
                    offset,
                } => (offset, out_channels * shape.channels * 9, shape.channels * 9),
                _ => continue,
            };
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            for w in &mut self.params[offset..offset + weights] {
                *w = normal.sample(rng);
            }
        }
    }

    pub fn input_shape(&self) -> FeatureShape {
        self.input
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn embedding_dim(&self) -> usize {
        if self.embedding_at == self.layers.len() {
            self.num_classes
        } else {
            match self.layers[self.embedding_at] {
                Layer::Dense { input, .. } => input,
                _ => unreachable!("the final layer is dense"),
            }
        }
    }

    /// Inference pass; nothing is retained for a backward pass.
    pub fn forward(&self, x: &Tensor) -> Result<Outputs> {
        let acts = self.run(x)?;
        Ok(self.outputs(&acts))
    }

    /// Forward pass that keeps the intermediates needed by [`Network::backward`].
    pub fn forward_train(&mut self, x: &Tensor) -> Result<Outputs> {
        let acts = self.run(x)?;
        let out = self.outputs(&acts);
        self.trace = Some(acts);
        Ok(out)
    }

    /// Gradient of a loss with respect to every parameter, given the loss
    /// gradients with respect to the logits and (optionally) the embedding of
    /// the most recent [`Network::forward_train`] call. The retained trace is
    /// consumed.
    pub fn backward(&mut self, d_logits: &Tensor, d_embedding: Option<&Tensor>) -> Result<Vec<f64>> {
        let acts = self
            .trace
            .take()
            .ok_or_else(|| Error::Usage("backward called without a preceding forward_train".into()))?;
        let batch = acts[0].rows();
        if d_logits.shape() != [batch, self.num_classes] {
            return Err(Error::Shape(format!(
                "logit gradient has shape {:?}, expected [{batch}, {}]",
                d_logits.shape(),
                self.num_classes
            )));
        }
        if let Some(d) = d_embedding {
            if d.shape() != [batch, self.embedding_dim()] {
                return Err(Error::Shape(format!(
                    "embedding gradient has shape {:?}, expected [{batch}, {}]",
                    d.shape(),
                    self.embedding_dim()
                )));
            }
        }

        let mut grad = vec![0.0; self.params.len()];
        let mut upstream = d_logits.data().to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if i + 1 == self.embedding_at {
                if let Some(d) = d_embedding {
                    for (u, g) in upstream.iter_mut().zip(d.data()) {
                        *u += g;
                    }
                }
            }
            let input = &acts[i];
            upstream = match *layer {
                Layer::Dense {
                    input: n_in,
                    output,
                    offset,
                } => dense_backward(
                    input.data(),
                    &upstream,
                    &self.params[offset..offset + output * n_in],
                    &mut grad[offset..offset + output * n_in + output],
                    batch,
                    n_in,
                    output,
                ),
                Layer::Relu => upstream
                    .iter()
                    .zip(input.data())
                    .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                    .collect(),
                Layer::Conv {
                    shape,
                    out_channels,
                    offset,
                } => {
                    let n = layer.param_count();
                    conv_backward(
                        input.data(),
                        &upstream,
                        &self.params[offset..offset + n],
                        &mut grad[offset..offset + n],
                        batch,
                        shape,
                        out_channels,
                    )
                }
                Layer::AvgPool { shape } => pool_backward(&upstream, batch, shape),
            };
        }
        Ok(grad)
    }

    fn outputs(&self, acts: &[Tensor]) -> Outputs {
        Outputs {
            logits: acts[acts.len() - 1].clone(),
            embedding: acts[self.embedding_at].clone(),
        }
    }

    fn run(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        if x.shape().len() != 2 || x.row_len() != self.input.len() {
            return Err(Error::Shape(format!(
                "input batch has shape {:?}, expected [batch, {}]",
                x.shape(),
                self.input.len()
            )));
        }
        let batch = x.rows();
        if batch == 0 {
            return Err(Error::Shape("input batch is empty".into()));
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for layer in &self.layers {
            let input = acts.last().expect("input pushed first").data();
            let (data, width) = match *layer {
                Layer::Dense {
                    input: n_in,
                    output,
                    offset,
                } => (
                    dense_forward(
                        input,
                        &self.params[offset..offset + output * n_in + output],
                        batch,
                        n_in,
                        output,
                    ),
                    output,
                ),
                Layer::Relu => (input.iter().map(|&v| v.max(0.0)).collect(), input.len() / batch),
                Layer::Conv {
                    shape,
                    out_channels,
                    offset,
                } => (
                    conv_forward(
                        input,
                        &self.params[offset..offset + layer.param_count()],
                        batch,
                        shape,
                        out_channels,
                    ),
                    out_channels * shape.height * shape.width,
                ),
                Layer::AvgPool { shape } => (
                    pool_forward(input, batch, shape),
                    shape.channels * (shape.height / 2) * (shape.width / 2),
                ),
            };
            acts.push(Tensor::new(vec![batch, width], data)?);
        }
        Ok(acts)
    }
}

fn dense_forward(x: &[f64], params: &[f64], batch: usize, n_in: usize, n_out: usize) -> Vec<f64> {
    let (w, b) = params.split_at(n_out * n_in);
    let mut out = vec![0.0; batch * n_out];
    for (xr, orow) in x.chunks_exact(n_in).zip(out.chunks_exact_mut(n_out)) {
        for (o, slot) in orow.iter_mut().enumerate() {
            let wr = &w[o * n_in..(o + 1) * n_in];
            *slot = b[o] + wr.iter().zip(xr).map(|(a, c)| a * c).sum::<f64>();
        }
    }
    out
}

fn dense_backward(
    x: &[f64],
    dy: &[f64],
    w: &[f64],
    grad: &mut [f64],
    batch: usize,
    n_in: usize,
    n_out: usize,
) -> Vec<f64> {
    let (gw, gb) = grad.split_at_mut(n_out * n_in);
    let mut dx = vec![0.0; batch * n_in];
    for ((xr, dyr), dxr) in x
        .chunks_exact(n_in)
        .zip(dy.chunks_exact(n_out))
        .zip(dx.chunks_exact_mut(n_in))
    {
        for (o, &g) in dyr.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            gb[o] += g;
            let wr = &w[o * n_in..(o + 1) * n_in];
            let gwr = &mut gw[o * n_in..(o + 1) * n_in];
            for i in 0..n_in {
                gwr[i] += g * xr[i];
                dxr[i] += g * wr[i];
            }
        }
    }
    dx
}

fn conv_forward(x: &[f64], params: &[f64], batch: usize, s: FeatureShape, oc: usize) -> Vec<f64> {
    let (h, w, ic) = (s.height, s.width, s.channels);
    let (weights, bias) = params.split_at(oc * ic * 9);
    let in_len = s.len();
    let out_len = oc * h * w;
    let mut out = vec![0.0; batch * out_len];
    for (xi, yo) in x.chunks_exact(in_len).zip(out.chunks_exact_mut(out_len)) {
        for o in 0..oc {
            let plane = &mut yo[o * h * w..(o + 1) * h * w];
            plane.iter_mut().for_each(|v| *v = bias[o]);
            for c in 0..ic {
                let src = &xi[c * h * w..(c + 1) * h * w];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let k = weights[((o * ic + c) * 3 + ky) * 3 + kx];
                        for y in 0..h {
                            let Some(iy) = (y + ky).checked_sub(1).filter(|&v| v < h) else {
                                continue;
                            };
                            for xx in 0..w {
                                if let Some(ix) = (xx + kx).checked_sub(1).filter(|&v| v < w) {
                                    plane[y * w + xx] += k * src[iy * w + ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_backward(
    x: &[f64],
    dy: &[f64],
    params: &[f64],
    grad: &mut [f64],
    batch: usize,
    s: FeatureShape,
    oc: usize,
) -> Vec<f64> {
    let (h, w, ic) = (s.height, s.width, s.channels);
    let weights = &params[..oc * ic * 9];
    let (gw, gb) = grad.split_at_mut(oc * ic * 9);
    let in_len = s.len();
    let out_len = oc * h * w;
    let mut dx = vec![0.0; batch * in_len];
    for ((xi, dyo), dxi) in x
        .chunks_exact(in_len)
        .zip(dy.chunks_exact(out_len))
        .zip(dx.chunks_exact_mut(in_len))
    {
        for o in 0..oc {
            let plane = &dyo[o * h * w..(o + 1) * h * w];
            gb[o] += plane.iter().sum::<f64>();
            for c in 0..ic {
                let src = &xi[c * h * w..(c + 1) * h * w];
                let dsrc = &mut dxi[c * h * w..(c + 1) * h * w];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let idx = ((o * ic + c) * 3 + ky) * 3 + kx;
                        let k = weights[idx];
                        let mut acc = 0.0;
                        for y in 0..h {
                            let Some(iy) = (y + ky).checked_sub(1).filter(|&v| v < h) else {
                                continue;
                            };
                            for xx in 0..w {
                                if let Some(ix) = (xx + kx).checked_sub(1).filter(|&v| v < w) {
                                    let g = plane[y * w + xx];
                                    acc += g * src[iy * w + ix];
                                    dsrc[iy * w + ix] += g * k;
                                }
                            }
                        }
                        gw[idx] += acc;
                    }
                }
            }
        }
    }
    dx
}

fn pool_forward(x: &[f64], batch: usize, s: FeatureShape) -> Vec<f64> {
    let (h, w) = (s.height, s.width);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(batch * s.channels * oh * ow);
    for plane in x.chunks_exact(h * w) {
        for y in 0..oh {
            for xx in 0..ow {
                let a = plane[2 * y * w + 2 * xx];
                let b = plane[2 * y * w + 2 * xx + 1];
                let c = plane[(2 * y + 1) * w + 2 * xx];
                let d = plane[(2 * y + 1) * w + 2 * xx + 1];
                out.push(0.25 * (a + b + c + d));
            }
        }
    }
    out
}

fn pool_backward(dy: &[f64], batch: usize, s: FeatureShape) -> Vec<f64> {
    let (h, w) = (s.height, s.width);
    let (oh, ow) = (h / 2, w / 2);
    let mut dx = vec![0.0; batch * s.len()];
    for (dplane, gplane) in dx.chunks_exact_mut(h * w).zip(dy.chunks_exact(oh * ow)) {
        for y in 0..oh {
            for xx in 0..ow {
                let g = 0.25 * gplane[y * ow + xx];
                dplane[2 * y * w + 2 * xx] += g;
                dplane[2 * y * w + 2 * xx + 1] += g;
                dplane[(2 * y + 1) * w + 2 * xx] += g;
                dplane[(2 * y + 1) * w + 2 * xx + 1] += g;
            }
        }
    }
    dx
}
