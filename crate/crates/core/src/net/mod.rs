//! The correction predictor: a small convolutional network over the image
//! stacked with pose heatmaps, with hand-derived forward and backward passes.
//!
//! Layer stack: conv3x3(C_in -> c1) + ReLU + maxpool2, conv3x3(c1 -> c2) +
//! ReLU + maxpool2, fully connected -> hidden + ReLU, fully connected ->
//! 2 * predicted keypoints. The last layer has no activation; its outputs are
//! Cartesian corrections in pixels.

mod checkpoint;
mod gradcheck;
mod layers;
mod scalar;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use gradcheck::{gradient_check, GradientCheck};
pub use scalar::Scalar;

use crate::error::{Error, Result};
use crate::render::AugmentedInput;

/// Shapes of the reference network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub width: usize,
    pub height: usize,
    pub image_channels: usize,
    pub heatmap_channels: usize,
    pub conv1: usize,
    pub conv2: usize,
    pub hidden: usize,
    pub outputs: usize,
}

impl Architecture {
    /// Reference layer widths for `predicted` output keypoints.
    pub fn reference(width: usize, height: usize, image_channels: usize, heatmap_channels: usize, predicted: usize) -> Self {
        Architecture { width, height, image_channels, heatmap_channels, conv1: 16, conv2: 32, hidden: 128, outputs: 2 * predicted }
    }

    pub fn in_channels(&self) -> usize {
        self.image_channels + self.heatmap_channels
    }

    fn fc_inputs(&self) -> usize {
        self.conv2 * (self.height / 4) * (self.width / 4)
    }

    fn validate(&self) -> Result<()> {
        if self.width < 4 || self.height < 4 || !self.width.is_multiple_of(4) || !self.height.is_multiple_of(4) {
            return Err(Error::InvalidArgument(format!(
                "network input must be a multiple of 4 on each side, got {}x{}",
                self.width, self.height
            )));
        }
        if self.in_channels() == 0 || self.conv1 == 0 || self.conv2 == 0 || self.hidden == 0 || self.outputs == 0 {
            return Err(Error::InvalidArgument("network layers must be non-empty".into()));
        }
        Ok(())
    }

    /// `(name, shape)` of every parameter tensor, in storage order.
    pub fn tensor_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        vec![
            ("conv1.weight", vec![self.conv1, self.in_channels(), 3, 3]),
            ("conv1.bias", vec![self.conv1]),
            ("conv2.weight", vec![self.conv2, self.conv1, 3, 3]),
            ("conv2.bias", vec![self.conv2]),
            ("fc1.weight", vec![self.hidden, self.fc_inputs()]),
            ("fc1.bias", vec![self.hidden]),
            ("fc2.weight", vec![self.outputs, self.hidden]),
            ("fc2.bias", vec![self.outputs]),
        ]
    }
}

const CONV1_W: usize = 0;
const CONV1_B: usize = 1;
const CONV2_W: usize = 2;
const CONV2_B: usize = 3;
const FC1_W: usize = 4;
const FC1_B: usize = 5;
const FC2_W: usize = 6;
const FC2_B: usize = 7;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<F>,
}

/// Network weights plus SGD momentum buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictorParams<F: Scalar = f32> {
    arch: Architecture,
    tensors: Vec<Tensor<F>>,
    momentum: Vec<Vec<F>>,
    // Bumped by every update so a stale forward cache can be detected.
    version: u64,
}

/// Standard deviation of the first-layer weights that read heatmap channels.
pub const HEATMAP_INIT_STD: f64 = 0.1;

impl<F: Scalar> PredictorParams<F> {
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let tensors: Vec<Tensor<F>> = arch
            .tensor_shapes()
            .into_iter()
            .map(|(name, shape)| Tensor { name: name.to_string(), data: vec![F::zero(); shape.iter().product()], shape })
            .collect();
        let momentum = tensors.iter().map(|t| vec![F::zero(); t.data.len()]).collect();
        Ok(PredictorParams { arch, tensors, momentum, version: 0 })
    }

    /// He-normal weights, zero biases. First-layer weights reading heatmap
    /// channels use [`HEATMAP_INIT_STD`] instead.
    pub fn init(arch: Architecture, rng: &mut impl Rng) -> Result<Self> {
        let mut params = Self::zeros(arch)?;
        let arch = params.arch.clone();
        let he = |fan_in: usize| Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let heat = Normal::new(0.0, HEATMAP_INIT_STD).expect("positive std");

        let cin = arch.in_channels();
        let image_dist = he(cin * 9);
        for (i, w) in params.tensors[CONV1_W].data.iter_mut().enumerate() {
            let channel = (i / 9) % cin;
            let v = if channel < arch.image_channels { image_dist.sample(rng) } else { heat.sample(rng) };
            *w = F::from_f64(v);
        }
        for (idx, fan_in) in [(CONV2_W, arch.conv1 * 9), (FC1_W, arch.fc_inputs()), (FC2_W, arch.hidden)] {
            let dist = he(fan_in);
            for w in params.tensors[idx].data.iter_mut() {
                *w = F::from_f64(dist.sample(rng));
            }
        }
        Ok(params)
    }

    pub fn from_tensors(arch: Architecture, tensors: Vec<Tensor<F>>) -> Result<Self> {
        let mut params = Self::zeros(arch)?;
        if tensors.len() != params.tensors.len() {
            return Err(Error::mismatch("parameter tensors", params.tensors.len(), tensors.len()));
        }
        for (slot, t) in params.tensors.iter_mut().zip(tensors) {
            if slot.name != t.name || slot.shape != t.shape || t.data.len() != slot.data.len() {
                return Err(Error::InvalidArgument(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    t.name, t.shape, slot.name, slot.shape
                )));
            }
            slot.data = t.data;
        }
        Ok(params)
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn tensors(&self) -> &[Tensor<F>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<F>] {
        self.version += 1;
        &mut self.tensors
    }

    pub fn momentum(&self) -> &[Vec<F>] {
        &self.momentum
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// Same weights in another precision; momentum is reset.
    pub fn cast<G: Scalar>(&self) -> PredictorParams<G> {
        let tensors: Vec<Tensor<G>> = self
            .tensors
            .iter()
            .map(|t| Tensor {
                name: t.name.clone(),
                shape: t.shape.clone(),
                data: t.data.iter().map(|v| G::from_f64(v.as_f64())).collect(),
            })
            .collect();
        let momentum = tensors.iter().map(|t| vec![G::zero(); t.data.len()]).collect();
        PredictorParams { arch: self.arch.clone(), tensors, momentum, version: 0 }
    }

    /// Reads the flat parameter at `index` (tensors concatenated in order).
    pub fn get_flat(&self, index: usize) -> F {
        let (t, i) = self.locate(index);
        self.tensors[t].data[i]
    }

    pub fn set_flat(&mut self, index: usize, value: F) {
        let (t, i) = self.locate(index);
        self.tensors[t].data[i] = value;
        self.version += 1;
    }

    /// `(tensor, offset)` of a flat parameter index.
    pub fn locate(&self, mut index: usize) -> (usize, usize) {
        for (t, tensor) in self.tensors.iter().enumerate() {
            if index < tensor.data.len() {
                return (t, index);
            }
            index -= tensor.data.len();
        }
        panic!("parameter index out of range");
    }

    fn check_input(&self, input: &AugmentedInput) -> Result<()> {
        let a = &self.arch;
        if input.width != a.width {
            return Err(Error::mismatch("input width", a.width, input.width));
        }
        if input.height != a.height {
            return Err(Error::mismatch("input height", a.height, input.height));
        }
        if input.image_channels != a.image_channels {
            return Err(Error::mismatch("input image channels", a.image_channels, input.image_channels));
        }
        if input.heatmap_channels != a.heatmap_channels {
            return Err(Error::mismatch("input heatmap channels", a.heatmap_channels, input.heatmap_channels));
        }
        Ok(())
    }

    /// Single-example forward pass.
    pub fn forward(&self, input: &AugmentedInput) -> Result<(Vec<F>, Activations<F>)> {
        self.forward_batch(&[input])
    }

    /// Forward pass over a batch; outputs are `batch x outputs`, row-major.
    pub fn forward_batch(&self, inputs: &[&AugmentedInput]) -> Result<(Vec<F>, Activations<F>)> {
        let mut cache = Activations::default();
        let mut output = Vec::new();
        self.forward_batch_into(inputs, &mut cache, &mut output)?;
        Ok((output, cache))
    }

    /// [`forward_batch`](Self::forward_batch) reusing the buffers of an
    /// earlier cache. Fresh allocations fault in new pages on every batch,
    /// which costs more than the arithmetic at these sizes.
    pub fn forward_batch_into(&self, inputs: &[&AugmentedInput], cache: &mut Activations<F>, output: &mut Vec<F>) -> Result<()> {
        let a = &self.arch;
        let (h, w) = (a.height, a.width);
        let (h2, w2) = (h / 2, w / 2);
        let (h4, w4) = (h / 4, w / 4);
        let cin = a.in_channels();
        let d = a.fc_inputs();
        let batch = inputs.len();
        cache.version = STALE;
        cache.batch = 0;
        for input in inputs {
            self.check_input(input)?;
        }

        let s = &mut cache.scratch;
        let fc_in = sized(&mut cache.fc_in, batch * d);
        // The unfolded matrices are rebuilt in `backward` rather than cached
        // per example: a megabyte per example costs more in memory traffic
        // than the unfold itself.
        let cols1 = sized(&mut s.cols1, cin * 9 * h * w);
        let cols2 = sized(&mut s.cols2, a.conv1 * 9 * h2 * w2);
        let conv1_out = sized(&mut s.conv1_out, a.conv1 * h * w);
        let conv2_out = sized(&mut s.conv2_out, a.conv2 * h2 * w2);
        while cache.examples.len() < batch {
            cache.examples.push(ExampleCache::default());
        }
        for (input, ex) in inputs.iter().zip(cache.examples.iter_mut()) {
            ex.x.clear();
            ex.x.extend(input.data.iter().map(|&v| F::from_f64(v as f64)));
        }
        for (b, ex) in cache.examples[..batch].iter_mut().enumerate() {
            layers::im2col(&ex.x, cin, h, w, cols1);
            conv(&self.tensors[CONV1_W].data, &self.tensors[CONV1_B].data, cols1, a.conv1, cin * 9, h * w, conv1_out);
            ex.pooled1.resize(a.conv1 * h2 * w2, F::zero());
            ex.arg1.resize(a.conv1 * h2 * w2, 0);
            layers::relu_pool(conv1_out, a.conv1, h, w, &mut ex.pooled1, &mut ex.arg1);

            layers::im2col(&ex.pooled1, a.conv1, h2, w2, cols2);
            conv(&self.tensors[CONV2_W].data, &self.tensors[CONV2_B].data, cols2, a.conv2, a.conv1 * 9, h2 * w2, conv2_out);
            ex.arg2.resize(a.conv2 * h4 * w4, 0);
            layers::relu_pool(conv2_out, a.conv2, h2, w2, &mut fc_in[b * d..(b + 1) * d], &mut ex.arg2);
        }

        let hidden = sized(&mut cache.hidden, batch * a.hidden);
        dense(fc_in, &self.tensors[FC1_W].data, &self.tensors[FC1_B].data, batch, d, a.hidden, hidden);
        for v in hidden.iter_mut() {
            if *v < F::zero() {
                *v = F::zero();
            }
        }
        let out = sized(output, batch * a.outputs);
        dense(hidden, &self.tensors[FC2_W].data, &self.tensors[FC2_B].data, batch, a.hidden, a.outputs, out);
        if !out.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("network output"));
        }
        cache.version = self.version;
        cache.batch = batch;
        Ok(())
    }

    /// Reverse-mode pass: parameter gradients of `sum(d_output * output)`.
    pub fn backward(&self, cache: &Activations<F>, d_output: &[F]) -> Result<Gradients<F>> {
        let mut grads = Gradients::zeros_like(self);
        self.backward_with(cache, &mut Scratch::default(), d_output, &mut grads)?;
        Ok(grads)
    }

    /// [`backward`](Self::backward) into reused buffers; `grads` is
    /// overwritten.
    pub fn backward_into(&self, cache: &mut Activations<F>, d_output: &[F], grads: &mut Gradients<F>) -> Result<()> {
        let mut scratch = std::mem::take(&mut cache.scratch);
        let result = self.backward_with(cache, &mut scratch, d_output, grads);
        cache.scratch = scratch;
        result
    }

    fn backward_with(&self, cache: &Activations<F>, s: &mut Scratch<F>, d_output: &[F], grads: &mut Gradients<F>) -> Result<()> {
        if cache.version != self.version {
            return Err(Error::Usage("forward cache is stale: parameters changed since the forward pass".into()));
        }
        let a = &self.arch;
        let batch = cache.batch;
        if d_output.len() != batch * a.outputs {
            return Err(Error::mismatch("output gradient", batch * a.outputs, d_output.len()));
        }
        let (h, w) = (a.height, a.width);
        let (h2, w2) = (h / 2, w / 2);
        let cin = a.in_channels();
        let d = a.fc_inputs();
        grads.tensors.resize_with(self.tensors.len(), Vec::new);
        for (g, t) in grads.tensors.iter_mut().zip(&self.tensors) {
            g.resize(t.data.len(), F::zero());
        }
        for idx in [CONV1_W, CONV1_B, CONV2_W, CONV2_B] {
            grads.tensors[idx].fill(F::zero());
        }
        let one = F::one();

        // fc2
        F::gemm(
            a.outputs,
            batch,
            a.hidden,
            one,
            d_output,
            1,
            a.outputs as isize,
            &cache.hidden,
            a.hidden as isize,
            1,
            F::zero(),
            &mut grads.tensors[FC2_W],
            a.hidden as isize,
            1,
        );
        column_sums(d_output, batch, a.outputs, &mut grads.tensors[FC2_B]);
        let d_hidden = sized(&mut s.d_hidden, batch * a.hidden);
        F::gemm(
            batch,
            a.outputs,
            a.hidden,
            one,
            d_output,
            a.outputs as isize,
            1,
            &self.tensors[FC2_W].data,
            a.hidden as isize,
            1,
            F::zero(),
            d_hidden,
            a.hidden as isize,
            1,
        );
        for (g, &v) in d_hidden.iter_mut().zip(&cache.hidden) {
            if v <= F::zero() {
                *g = F::zero();
            }
        }

        // fc1
        F::gemm(
            a.hidden,
            batch,
            d,
            one,
            d_hidden,
            1,
            a.hidden as isize,
            &cache.fc_in,
            d as isize,
            1,
            F::zero(),
            &mut grads.tensors[FC1_W],
            d as isize,
            1,
        );
        column_sums(d_hidden, batch, a.hidden, &mut grads.tensors[FC1_B]);
        let d_fc_in = sized(&mut s.d_fc_in, batch * d);
        F::gemm(
            batch,
            a.hidden,
            d,
            one,
            d_hidden,
            a.hidden as isize,
            1,
            &self.tensors[FC1_W].data,
            d as isize,
            1,
            F::zero(),
            d_fc_in,
            d as isize,
            1,
        );

        let d_conv2 = sized(&mut s.d_conv2, a.conv2 * h2 * w2);
        let d_cols2 = sized(&mut s.d_cols2, a.conv1 * 9 * h2 * w2);
        let cols1 = sized(&mut s.cols1, cin * 9 * h * w);
        let cols2 = sized(&mut s.cols2, a.conv1 * 9 * h2 * w2);
        let d_pooled1 = sized(&mut s.d_pooled1, a.conv1 * h2 * w2);
        let d_conv1 = sized(&mut s.d_conv1, a.conv1 * h * w);
        for (b, ex) in cache.examples[..batch].iter().enumerate() {
            let pooled2 = &cache.fc_in[b * d..(b + 1) * d];
            layers::relu_pool_backward(&d_fc_in[b * d..(b + 1) * d], pooled2, &ex.arg2, d_conv2);
            let (dw, db) = weight_and_bias(&mut grads.tensors, CONV2_W);
            layers::im2col(&ex.pooled1, a.conv1, h2, w2, cols2);
            conv_backward(d_conv2, cols2, a.conv2, a.conv1 * 9, h2 * w2, dw, db);
            F::gemm(
                a.conv1 * 9,
                a.conv2,
                h2 * w2,
                one,
                &self.tensors[CONV2_W].data,
                1,
                (a.conv1 * 9) as isize,
                d_conv2,
                (h2 * w2) as isize,
                1,
                F::zero(),
                d_cols2,
                (h2 * w2) as isize,
                1,
            );
            layers::col2im(d_cols2, a.conv1, h2, w2, d_pooled1);

            layers::relu_pool_backward(d_pooled1, &ex.pooled1, &ex.arg1, d_conv1);
            let (dw, db) = weight_and_bias(&mut grads.tensors, CONV1_W);
            layers::im2col(&ex.x, cin, h, w, cols1);
            conv_backward(d_conv1, cols1, a.conv1, cin * 9, h * w, dw, db);
        }
        Ok(())
    }
}

/// Marks a cache that no forward pass has completed into.
const STALE: u64 = u64::MAX;

/// Resizes `buf` to `n` elements without releasing capacity.
fn sized<F: Scalar>(buf: &mut Vec<F>, n: usize) -> &mut [F] {
    buf.resize(n, F::zero());
    buf
}

/// `out[oc, p] = bias[oc] + sum_k weight[oc, k] * cols[k, p]`.
fn conv<F: Scalar>(weight: &[F], bias: &[F], cols: &[F], out_ch: usize, k: usize, pixels: usize, out: &mut [F]) {
    for (row, &b) in out.chunks_exact_mut(pixels).zip(bias) {
        row.fill(b);
    }
    F::gemm(out_ch, k, pixels, F::one(), weight, k as isize, 1, cols, pixels as isize, 1, F::one(), out, pixels as isize, 1);
}

fn weight_and_bias<F>(tensors: &mut [Vec<F>], weight: usize) -> (&mut [F], &mut [F]) {
    let (lo, hi) = tensors.split_at_mut(weight + 1);
    (&mut lo[weight], &mut hi[0])
}

/// Accumulates weight and bias gradients of [`conv`].
fn conv_backward<F: Scalar>(d_out: &[F], cols: &[F], out_ch: usize, k: usize, pixels: usize, d_weight: &mut [F], d_bias: &mut [F]) {
    F::gemm(out_ch, pixels, k, F::one(), d_out, pixels as isize, 1, cols, 1, pixels as isize, F::one(), d_weight, k as isize, 1);
    for (row, db) in d_out.chunks_exact(pixels).zip(d_bias.iter_mut()) {
        *db = row.iter().fold(*db, |acc, &v| acc + v);
    }
}

/// `out[b, o] = bias[o] + sum_i x[b, i] * weight[o, i]`.
#[allow(clippy::too_many_arguments)]
fn dense<F: Scalar>(x: &[F], weight: &[F], bias: &[F], batch: usize, inputs: usize, outputs: usize, out: &mut [F]) {
    for row in out.chunks_exact_mut(outputs) {
        row.copy_from_slice(bias);
    }
    F::gemm(batch, inputs, outputs, F::one(), x, inputs as isize, 1, weight, 1, inputs as isize, F::one(), out, outputs as isize, 1);
}

fn column_sums<F: Scalar>(m: &[F], rows: usize, cols: usize, out: &mut [F]) {
    out.fill(F::zero());
    for row in m.chunks_exact(cols).take(rows) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o = *o + v;
        }
    }
}

struct ExampleCache<F> {
    x: Vec<F>,
    arg1: Vec<u32>,
    pooled1: Vec<F>,
    arg2: Vec<u32>,
}

impl<F> Default for ExampleCache<F> {
    fn default() -> Self {
        ExampleCache { x: Vec::new(), arg1: Vec::new(), pooled1: Vec::new(), arg2: Vec::new() }
    }
}

/// Buffers that only live for the duration of one pass.
struct Scratch<F> {
    cols1: Vec<F>,
    cols2: Vec<F>,
    conv1_out: Vec<F>,
    conv2_out: Vec<F>,
    d_hidden: Vec<F>,
    d_fc_in: Vec<F>,
    d_conv2: Vec<F>,
    d_cols2: Vec<F>,
    d_pooled1: Vec<F>,
    d_conv1: Vec<F>,
}

impl<F> Default for Scratch<F> {
    fn default() -> Self {
        Scratch {
            cols1: Vec::new(),
            cols2: Vec::new(),
            conv1_out: Vec::new(),
            conv2_out: Vec::new(),
            d_hidden: Vec::new(),
            d_fc_in: Vec::new(),
            d_conv2: Vec::new(),
            d_cols2: Vec::new(),
            d_pooled1: Vec::new(),
            d_conv1: Vec::new(),
        }
    }
}

/// Everything the backward pass needs from a forward pass, plus working
/// buffers kept for the next pass.
pub struct Activations<F> {
    version: u64,
    batch: usize,
    examples: Vec<ExampleCache<F>>,
    fc_in: Vec<F>,
    hidden: Vec<F>,
    scratch: Scratch<F>,
}

impl<F> Default for Activations<F> {
    fn default() -> Self {
        Activations { version: STALE, batch: 0, examples: Vec::new(), fc_in: Vec::new(), hidden: Vec::new(), scratch: Scratch::default() }
    }
}

impl<F> Activations<F> {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Parameter gradients, one flat buffer per tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<F> {
    pub tensors: Vec<Vec<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn zeros_like(params: &PredictorParams<F>) -> Self {
        Gradients { tensors: params.tensors.iter().map(|t| vec![F::zero(); t.data.len()]).collect() }
    }

    pub fn get_flat(&self, mut index: usize) -> F {
        for t in &self.tensors {
            if index < t.len() {
                return t[index];
            }
            index -= t.len();
        }
        panic!("gradient index out of range");
    }

    pub fn scale(&mut self, s: F) {
        for v in self.tensors.iter_mut().flatten() {
            *v = *v * s;
        }
    }
}

/// Squared error summed over both coordinates of every keypoint whose mask is
/// set. `predicted` and `target` are `[dx0, dy0, dx1, dy1, ...]`; the gradient
/// of masked-out keypoints is exactly zero.
pub fn loss_and_grad<F: Scalar>(predicted: &[F], target: &[f64], mask: &[bool]) -> Result<(F, Vec<F>)> {
    if predicted.len() != target.len() {
        return Err(Error::mismatch("loss target", predicted.len(), target.len()));
    }
    if predicted.len() != 2 * mask.len() {
        return Err(Error::mismatch("loss mask", predicted.len() / 2, mask.len()));
    }
    let two = F::from_f64(2.0);
    let mut loss = F::zero();
    let mut grad = vec![F::zero(); predicted.len()];
    for (k, &m) in mask.iter().enumerate() {
        if !m {
            continue;
        }
        for i in [2 * k, 2 * k + 1] {
            let diff = predicted[i] - F::from_f64(target[i]);
            loss = loss + diff * diff;
            grad[i] = two * diff;
        }
    }
    Ok((loss, grad))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
}

/// Whether every value is finite. Lane-wise accumulation of `v - v` (NaN for
/// any infinity or NaN) so the loop vectorizes.
#[allow(clippy::eq_op)]
fn all_finite<F: Scalar>(values: &[F]) -> bool {
    let mut acc = [F::zero(); 8];
    let chunks = values.chunks_exact(8);
    let tail = chunks.remainder();
    for c in chunks {
        for i in 0..8 {
            acc[i] = acc[i] + (c[i] - c[i]);
        }
    }
    acc.iter().all(|v| *v == F::zero()) && tail.iter().all(|v| v.is_finite())
}

/// Momentum SGD: `m <- mu * m + g; w <- w - lr * m`.
pub fn sgd_update<F: Scalar>(params: &mut PredictorParams<F>, grads: &Gradients<F>, config: &SgdConfig) -> Result<()> {
    if grads.tensors.len() != params.tensors.len() {
        return Err(Error::mismatch("gradient tensors", params.tensors.len(), grads.tensors.len()));
    }
    for (t, g) in params.tensors.iter().zip(&grads.tensors) {
        if g.len() != t.data.len() {
            return Err(Error::mismatch("gradient tensor size", t.data.len(), g.len()));
        }
        if !all_finite(g) {
            return Err(Error::GradientDivergence { layer: t.name.clone() });
        }
    }
    let lr = F::from_f64(config.learning_rate);
    let mu = F::from_f64(config.momentum);
    for ((t, m), g) in params.tensors.iter_mut().zip(params.momentum.iter_mut()).zip(&grads.tensors) {
        for ((w, m), &g) in t.data.iter_mut().zip(m.iter_mut()).zip(g) {
            *m = mu * *m + g;
            *w = *w - lr * *m;
        }
        if !all_finite(&t.data) {
            return Err(Error::GradientDivergence { layer: t.name.clone() });
        }
    }
    params.version += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny_arch() -> Architecture {
        Architecture { width: 8, height: 8, image_channels: 1, heatmap_channels: 2, conv1: 3, conv2: 4, hidden: 5, outputs: 4 }
    }

    pub(crate) fn random_input(arch: &Architecture, seed: u64) -> AugmentedInput {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AugmentedInput {
            width: arch.width,
            height: arch.height,
            image_channels: arch.image_channels,
            heatmap_channels: arch.heatmap_channels,
            data: (0..arch.in_channels() * arch.width * arch.height).map(|_| rng.gen::<f32>()).collect(),
        }
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let arch = tiny_arch();
        let params = PredictorParams::<f32>::zeros(arch.clone()).unwrap();
        let (out, _) = params.forward(&random_input(&arch, 1)).unwrap();
        assert_eq!(out, vec![0.0; 4]);
    }

    #[test]
    fn reference_output_width() {
        let arch = Architecture::reference(64, 64, 1, 7, 16);
        assert_eq!(arch.outputs, 32);
        assert_eq!(arch.in_channels(), 8);
    }

    #[test]
    fn forward_is_deterministic_and_batch_consistent() {
        let arch = tiny_arch();
        let params = PredictorParams::<f32>::init(arch.clone(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let (x1, x2) = (random_input(&arch, 1), random_input(&arch, 2));
        let (a, _) = params.forward(&x1).unwrap();
        let (b, _) = params.forward(&x1).unwrap();
        assert_eq!(a, b);
        let (both, _) = params.forward_batch(&[&x1, &x2]).unwrap();
        let (c, _) = params.forward(&x2).unwrap();
        assert_eq!(&both[..4], &a[..]);
        assert_eq!(&both[4..], &c[..]);
    }

    #[test]
    fn forward_rejects_wrong_shape() {
        let arch = tiny_arch();
        let params = PredictorParams::<f32>::zeros(arch.clone()).unwrap();
        let mut x = random_input(&arch, 1);
        x.heatmap_channels = 3;
        assert!(matches!(params.forward(&x), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn loss_examples() {
        let (l, g) = loss_and_grad::<f64>(&[1.0, 0.0], &[0.0, 0.0], &[true]).unwrap();
        assert_eq!((l, g), (1.0, vec![2.0, 0.0]));
        let (l, g) = loss_and_grad::<f64>(&[3.0, -2.0], &[3.0, -2.0], &[true]).unwrap();
        assert_eq!((l, g), (0.0, vec![0.0, 0.0]));
        let (l, g) = loss_and_grad::<f64>(&[3.0, -2.0, 1.0, 1.0], &[0.0; 4], &[false, false]).unwrap();
        assert_eq!((l, g), (0.0, vec![0.0; 4]));
    }

    #[test]
    fn backward_is_linear_in_output_gradient() {
        let arch = tiny_arch();
        let params = PredictorParams::<f64>::init(arch.clone(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let (_, cache) = params.forward(&random_input(&arch, 5)).unwrap();
        let zero = params.backward(&cache, &[0.0; 4]).unwrap();
        assert!(zero.tensors.iter().flatten().all(|&v| v == 0.0));
        let g1 = params.backward(&cache, &[0.5, -1.0, 0.25, 2.0]).unwrap();
        let g2 = params.backward(&cache, &[1.0, -2.0, 0.5, 4.0]).unwrap();
        for (a, b) in g1.tensors.iter().flatten().zip(g2.tensors.iter().flatten()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn stale_cache_is_rejected() {
        let arch = tiny_arch();
        let mut params = PredictorParams::<f64>::init(arch.clone(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let (_, cache) = params.forward(&random_input(&arch, 5)).unwrap();
        let grads = params.backward(&cache, &[1.0; 4]).unwrap();
        sgd_update(&mut params, &grads, &SgdConfig { learning_rate: 0.1, momentum: 0.0 }).unwrap();
        assert!(matches!(params.backward(&cache, &[1.0; 4]), Err(Error::Usage(_))));
    }

    #[test]
    fn sgd_examples() {
        let arch = tiny_arch();
        let base = PredictorParams::<f64>::init(arch.clone(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let (_, cache) = base.forward(&random_input(&arch, 2)).unwrap();
        let grads = base.backward(&cache, &[1.0, 1.0, -1.0, 0.5]).unwrap();

        let mut frozen = base.clone();
        sgd_update(&mut frozen, &grads, &SgdConfig { learning_rate: 0.0, momentum: 0.9 }).unwrap();
        assert_eq!(frozen.tensors(), base.tensors());

        let mut plain = base.clone();
        sgd_update(&mut plain, &grads, &SgdConfig { learning_rate: 1.0, momentum: 0.0 }).unwrap();
        for ((t, b), g) in plain.tensors().iter().zip(base.tensors()).zip(&grads.tensors) {
            for ((w, w0), g) in t.data.iter().zip(&b.data).zip(g) {
                assert_eq!(*w, w0 - g);
            }
        }

        let mut a = base.clone();
        let mut b = base.clone();
        let cfg = SgdConfig { learning_rate: 0.01, momentum: 0.9 };
        for _ in 0..2 {
            sgd_update(&mut a, &grads, &cfg).unwrap();
            sgd_update(&mut b, &grads, &cfg).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn sgd_rejects_non_finite_gradient() {
        let arch = tiny_arch();
        let mut params = PredictorParams::<f32>::zeros(arch).unwrap();
        let mut grads = Gradients::zeros_like(&params);
        grads.tensors[FC1_W][3] = f32::NAN;
        let err = sgd_update(&mut params, &grads, &SgdConfig { learning_rate: 0.1, momentum: 0.9 }).unwrap_err();
        assert!(matches!(err, Error::GradientDivergence { ref layer } if layer == "fc1.weight"));
    }

    #[test]
    fn finiteness_scan_sees_every_position() {
        for n in [0, 3, 8, 17] {
            let clean = vec![1.5f32; n];
            assert!(all_finite(&clean));
            for i in 0..n {
                for bad in [f32::NAN, f32::INFINITY, f32::NEG_INFINITY] {
                    let mut v = clean.clone();
                    v[i] = bad;
                    assert!(!all_finite(&v), "n={n} i={i}");
                }
            }
        }
        assert!(all_finite(&[f32::MAX; 9]));
    }
}
