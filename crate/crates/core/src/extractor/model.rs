use super::layers::{axpy, relu_in_place, Affine, Nonlinearity};
use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::rng::SeededRng;

/// Variance floor in statistics pooling.
pub const POOL_EPSILON: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TdnnLayerSpec {
    pub context_offsets: Vec<i32>,
    pub input_dim: usize,
    pub output_dim: usize,
    pub nonlinearity: Nonlinearity,
}

impl TdnnLayerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.context_offsets.is_empty() || self.context_offsets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "context offsets must be non-empty and strictly increasing: {:?}",
                self.context_offsets
            )));
        }
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidArgument("layer dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Frames consumed at the edges: `max(offset) - min(offset)`.
    pub fn span(&self) -> usize {
        (self.context_offsets[self.context_offsets.len() - 1] - self.context_offsets[0]) as usize
    }
}

/// One time-delay layer: an affine map over spliced context frames.
#[derive(Debug, Clone, PartialEq)]
pub struct TdnnLayer {
    pub spec: TdnnLayerSpec,
    pub affine: Affine,
}

impl TdnnLayer {
    /// Applies the layer to a `T x input_dim` block, dropping frames that
    /// lack full context. Returns the pre-activation output.
    pub fn forward(&self, input: &[f64], frames: usize) -> Vec<f64> {
        let d = self.spec.input_dim;
        let out_frames = frames - self.spec.span();
        let base = self.spec.context_offsets[0];
        let mut ctx = vec![0.0; self.affine.in_dim];
        let mut out = vec![0.0; out_frames * self.spec.output_dim];
        for t in 0..out_frames {
            self.splice(input, t, base, d, &mut ctx);
            self.affine
                .apply(&ctx, &mut out[t * self.spec.output_dim..(t + 1) * self.spec.output_dim]);
        }
        out
    }

    fn splice(&self, input: &[f64], t: usize, base: i32, d: usize, ctx: &mut [f64]) {
        for (k, &o) in self.spec.context_offsets.iter().enumerate() {
            let src = t + (o - base) as usize;
            ctx[k * d..(k + 1) * d].copy_from_slice(&input[src * d..(src + 1) * d]);
        }
    }

    /// Accumulates gradients given `dL/d(pre-activation)` and returns
    /// `dL/d(input)`.
    pub fn backward(&self, input: &[f64], frames: usize, d_out: &[f64], grad: &mut TdnnLayer) -> Vec<f64> {
        let d = self.spec.input_dim;
        let od = self.spec.output_dim;
        let out_frames = frames - self.spec.span();
        let base = self.spec.context_offsets[0];
        let mut ctx = vec![0.0; self.affine.in_dim];
        let mut d_ctx = vec![0.0; self.affine.in_dim];
        let mut d_in = vec![0.0; frames * d];
        for t in 0..out_frames {
            self.splice(input, t, base, d, &mut ctx);
            self.affine
                .backward(&ctx, &d_out[t * od..(t + 1) * od], &mut grad.affine, &mut d_ctx);
            for (k, &o) in self.spec.context_offsets.iter().enumerate() {
                let dst = t + (o - base) as usize;
                axpy(1.0, &d_ctx[k * d..(k + 1) * d], &mut d_in[dst * d..(dst + 1) * d]);
            }
        }
        d_in
    }
}

/// Layer widths and contexts of an extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorArch {
    pub input_dim: usize,
    /// Context offsets and output width of each frame-level layer.
    pub frame_layers: Vec<(Vec<i32>, usize)>,
    pub segment_dims: Vec<usize>,
    pub num_speakers: usize,
}

impl ExtractorArch {
    fn contexts() -> Vec<Vec<i32>> {
        vec![vec![-2, -1, 0, 1, 2], vec![-2, 0, 2], vec![-3, 0, 3], vec![0], vec![0]]
    }

    /// Five frame layers (512 x 4, 1500), two 512-wide segment layers.
    pub fn full(input_dim: usize, num_speakers: usize) -> Self {
        let widths = [512, 512, 512, 512, 1500];
        ExtractorArch {
            input_dim,
            frame_layers: Self::contexts().into_iter().zip(widths).collect(),
            segment_dims: vec![512, 512],
            num_speakers,
        }
    }

    /// Same topology at desk scale: widths 32 x 4, 96; segment layers 24, 24.
    pub fn desk(input_dim: usize, num_speakers: usize) -> Self {
        let widths = [32, 32, 32, 32, 96];
        ExtractorArch {
            input_dim,
            frame_layers: Self::contexts().into_iter().zip(widths).collect(),
            segment_dims: vec![24, 24],
            num_speakers,
        }
    }

    pub fn preset(name: &str, input_dim: usize, num_speakers: usize) -> Result<Self> {
        match name {
            "full" => Ok(Self::full(input_dim, num_speakers)),
            "desk" => Ok(Self::desk(input_dim, num_speakers)),
            other => Err(Error::InvalidArgument(format!("unknown extractor preset `{other}`"))),
        }
    }
}

/// TDNN frame block, statistics pooling, two affine+ReLU segment layers
/// and a softmax head. The embedding is the pre-activation output of the
/// segment layer at `embedding_tap`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorModel {
    pub frame_layers: Vec<TdnnLayer>,
    pub segment_layers: Vec<Affine>,
    pub head: Affine,
    pub embedding_tap: usize,
}

/// Activations kept from a forward pass for backpropagation.
pub(crate) struct Trace {
    /// Input to each frame layer (post-nonlinearity of the previous one).
    frame_inputs: Vec<(Vec<f64>, usize)>,
    /// Pre-activation outputs of each frame layer.
    frame_pre: Vec<Vec<f64>>,
    /// Final frame-layer activations and their frame count.
    hidden: (Vec<f64>, usize),
    pooled: Vec<f64>,
    mean: Vec<f64>,
    std: Vec<f64>,
    clamped: Vec<bool>,
    segment_inputs: Vec<Vec<f64>>,
    segment_pre: Vec<Vec<f64>>,
    head_input: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits: Vec<f64>,
    pub embedding: Vec<f64>,
}

impl ExtractorModel {
    pub fn new(arch: &ExtractorArch, seed: u64) -> Result<Self> {
        if arch.frame_layers.is_empty() {
            return Err(Error::InvalidArgument("need at least one frame layer".into()));
        }
        if arch.segment_dims.len() != 2 {
            return Err(Error::InvalidArgument("exactly two segment layers are supported".into()));
        }
        if arch.num_speakers == 0 || arch.input_dim == 0 {
            return Err(Error::InvalidArgument("input dim and speaker count must be positive".into()));
        }
        let mut rng = SeededRng::new(seed);
        let mut frame_layers = Vec::new();
        let mut dim = arch.input_dim;
        for (offsets, width) in &arch.frame_layers {
            let spec = TdnnLayerSpec {
                context_offsets: offsets.clone(),
                input_dim: dim,
                output_dim: *width,
                nonlinearity: Nonlinearity::Relu,
            };
            spec.validate()?;
            let affine = Affine::glorot(offsets.len() * dim, *width, &mut rng);
            frame_layers.push(TdnnLayer { spec, affine });
            dim = *width;
        }
        let mut segment_layers = Vec::new();
        let mut seg_in = 2 * dim;
        for &w in &arch.segment_dims {
            if w == 0 {
                return Err(Error::InvalidArgument("segment widths must be positive".into()));
            }
            segment_layers.push(Affine::glorot(seg_in, w, &mut rng));
            seg_in = w;
        }
        let head = Affine::glorot(seg_in, arch.num_speakers, &mut rng);
        let model = ExtractorModel {
            frame_layers,
            segment_layers,
            head,
            embedding_tap: 0,
        };
        model.validate()?;
        Ok(model)
    }

    /// Checks that consecutive layer shapes agree.
    pub fn validate(&self) -> Result<()> {
        let mut dim = self.input_dim();
        for l in &self.frame_layers {
            l.spec.validate()?;
            if l.spec.input_dim != dim || l.affine.in_dim != l.spec.context_offsets.len() * dim {
                return Err(Error::InvalidArgument("frame layer dimensions are inconsistent".into()));
            }
            if l.affine.out_dim != l.spec.output_dim {
                return Err(Error::InvalidArgument("frame layer output width mismatch".into()));
            }
            dim = l.spec.output_dim;
        }
        let mut seg_in = 2 * dim;
        if self.segment_layers.len() != 2 {
            return Err(Error::InvalidArgument("exactly two segment layers are supported".into()));
        }
        for s in &self.segment_layers {
            if s.in_dim != seg_in {
                return Err(Error::InvalidArgument("segment layer dimensions are inconsistent".into()));
            }
            seg_in = s.out_dim;
        }
        if self.head.in_dim != seg_in {
            return Err(Error::InvalidArgument("head input width mismatch".into()));
        }
        if self.embedding_tap >= self.segment_layers.len() {
            return Err(Error::InvalidArgument("embedding tap out of range".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.frame_layers[0].spec.input_dim
    }

    pub fn num_speakers(&self) -> usize {
        self.head.out_dim
    }

    pub fn embedding_dim(&self) -> usize {
        self.segment_layers[self.embedding_tap].out_dim
    }

    /// Total context consumed by the frame block.
    pub fn context_span(&self) -> usize {
        self.frame_layers.iter().map(|l| l.spec.span()).sum()
    }

    /// Smallest input length the model accepts.
    pub fn min_frames(&self) -> usize {
        self.context_span() + 1
    }

    /// Zero-valued copy with the same shapes, used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|t| t.iter_mut().for_each(|v| *v = 0.0));
        z
    }

    /// All parameter tensors in a fixed order: per frame layer weight and
    /// bias, per segment layer weight and bias, then the head.
    pub fn tensors(&self) -> Vec<&Vec<f64>> {
        let mut out = Vec::new();
        for l in &self.frame_layers {
            out.push(&l.affine.weight);
            out.push(&l.affine.bias);
        }
        for s in &self.segment_layers {
            out.push(&s.weight);
            out.push(&s.bias);
        }
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for l in &mut self.frame_layers {
            out.push(&mut l.affine.weight);
            out.push(&mut l.affine.bias);
        }
        for s in &mut self.segment_layers {
            out.push(&mut s.weight);
            out.push(&mut s.bias);
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    /// Human-readable tensor names matching [`Self::tensors`].
    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..self.frame_layers.len() {
            out.push(format!("frame{i}.weight"));
            out.push(format!("frame{i}.bias"));
        }
        for i in 0..self.segment_layers.len() {
            out.push(format!("segment{i}.weight"));
            out.push(format!("segment{i}.bias"));
        }
        out.push("head.weight".into());
        out.push("head.bias".into());
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn check_input(&self, frames: usize, dim: usize) -> Result<()> {
        if dim != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: dim,
            });
        }
        if frames < self.min_frames() {
            return Err(Error::Precondition(format!(
                "{frames} frames is shorter than the model context ({} frames)",
                self.min_frames()
            )));
        }
        Ok(())
    }

    pub(crate) fn forward_trace(&self, input: Vec<f64>, frames: usize, dim: usize) -> Result<Trace> {
        self.check_input(frames, dim)?;
        let mut frame_inputs = Vec::with_capacity(self.frame_layers.len());
        let mut frame_pre = Vec::with_capacity(self.frame_layers.len());
        let mut x = input;
        let mut t = frames;
        for layer in &self.frame_layers {
            let pre = layer.forward(&x, t);
            let mut post = pre.clone();
            if layer.spec.nonlinearity == Nonlinearity::Relu {
                relu_in_place(&mut post);
            }
            frame_inputs.push((x, t));
            frame_pre.push(pre);
            x = post;
            t -= layer.spec.span();
        }
        let width = self.frame_layers.last().unwrap().spec.output_dim;
        let (mean, std, clamped) = pool_statistics(&x, t, width);
        let mut pooled = mean.clone();
        pooled.extend_from_slice(&std);

        let mut segment_inputs = Vec::with_capacity(2);
        let mut segment_pre = Vec::with_capacity(2);
        let mut h = pooled.clone();
        for s in &self.segment_layers {
            let mut pre = vec![0.0; s.out_dim];
            s.apply(&h, &mut pre);
            let mut post = pre.clone();
            relu_in_place(&mut post);
            segment_inputs.push(h);
            segment_pre.push(pre);
            h = post;
        }
        Ok(Trace {
            frame_inputs,
            frame_pre,
            hidden: (x, t),
            pooled,
            mean,
            std,
            clamped,
            segment_inputs,
            segment_pre,
            head_input: h,
        })
    }

    pub fn forward(&self, features: &FeatureMatrix) -> Result<ForwardOutput> {
        let input = features.as_slice().iter().map(|&v| v as f64).collect();
        self.forward_f64(input, features.rows(), features.cols())
    }

    pub fn forward_f64(&self, input: Vec<f64>, frames: usize, dim: usize) -> Result<ForwardOutput> {
        let trace = self.forward_trace(input, frames, dim)?;
        let mut logits = vec![0.0; self.head.out_dim];
        self.head.apply(&trace.head_input, &mut logits);
        Ok(ForwardOutput {
            logits,
            embedding: trace.segment_pre[self.embedding_tap].clone(),
        })
    }

    /// Embedding without evaluating the head.
    pub fn embed(&self, features: &FeatureMatrix) -> Result<Vec<f64>> {
        let input = features.as_slice().iter().map(|&v| v as f64).collect();
        let trace = self.forward_trace(input, features.rows(), features.cols())?;
        Ok(trace.segment_pre[self.embedding_tap].clone())
    }

    /// Pooled `[mean; std]` statistics of the last frame layer.
    pub fn pooled_statistics(&self, features: &FeatureMatrix) -> Result<Vec<f64>> {
        let input = features.as_slice().iter().map(|&v| v as f64).collect();
        Ok(self.forward_trace(input, features.rows(), features.cols())?.pooled)
    }

    /// Cross-entropy of one segment; accumulates `scale * dLoss/dθ` into
    /// `grad`. Returns the unscaled loss and whether the argmax was correct.
    pub(crate) fn accumulate_gradient(
        &self,
        input: Vec<f64>,
        frames: usize,
        dim: usize,
        label: usize,
        scale: f64,
        grad: &mut ExtractorModel,
    ) -> Result<(f64, bool)> {
        if label >= self.num_speakers() {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for {} speakers",
                self.num_speakers()
            )));
        }
        let trace = self.forward_trace(input, frames, dim)?;
        let mut logits = vec![0.0; self.head.out_dim];
        self.head.apply(&trace.head_input, &mut logits);
        let lse = log_sum_exp(&logits);
        let loss = lse - logits[label];
        let correct = argmax(&logits) == label;

        // dL/dlogits = softmax - onehot
        let mut d: Vec<f64> = logits.iter().map(|&z| scale * (z - lse).exp()).collect();
        d[label] -= scale;

        let mut dx = vec![0.0; self.head.in_dim];
        self.head.backward(&trace.head_input, &d, &mut grad.head, &mut dx);
        for i in (0..self.segment_layers.len()).rev() {
            let pre = &trace.segment_pre[i];
            let d_pre: Vec<f64> = dx.iter().zip(pre).map(|(&g, &p)| if p > 0.0 { g } else { 0.0 }).collect();
            let layer = &self.segment_layers[i];
            let mut d_in = vec![0.0; layer.in_dim];
            layer.backward(&trace.segment_inputs[i], &d_pre, &mut grad.segment_layers[i], &mut d_in);
            dx = d_in;
        }

        // statistics pooling
        let (hidden, t) = &trace.hidden;
        let width = trace.mean.len();
        let tf = *t as f64;
        let mut dh = vec![0.0; hidden.len()];
        for f in 0..*t {
            for k in 0..width {
                let mut g = dx[k] / tf;
                if !trace.clamped[k] {
                    g += dx[width + k] * (hidden[f * width + k] - trace.mean[k]) / (tf * trace.std[k]);
                }
                dh[f * width + k] = g;
            }
        }
        debug_assert_eq!(trace.pooled.len(), 2 * width);

        for i in (0..self.frame_layers.len()).rev() {
            let layer = &self.frame_layers[i];
            if layer.spec.nonlinearity == Nonlinearity::Relu {
                for (g, &p) in dh.iter_mut().zip(&trace.frame_pre[i]) {
                    if p <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            let (input, frames) = &trace.frame_inputs[i];
            dh = layer.backward(input, *frames, &dh, &mut grad.frame_layers[i]);
        }
        Ok((loss, correct))
    }
}

/// Per-dimension mean and population standard deviation over `frames`
/// rows, `std = sqrt(max(E[h^2] - mean^2, eps))`. Also reports which
/// dimensions hit the floor.
pub(crate) fn pool_statistics(h: &[f64], frames: usize, width: usize) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
    // sums run over sorted values, making the result independent of frame order
    let mut sum = vec![0.0; width];
    let mut sq = vec![0.0; width];
    let mut col = Vec::with_capacity(frames);
    let mut col_sq = Vec::with_capacity(frames);
    for k in 0..width {
        col.clear();
        col_sq.clear();
        col.extend(h.chunks_exact(width).take(frames).map(|row| row[k]));
        col_sq.extend(col.iter().map(|v| v * v));
        col.sort_by(f64::total_cmp);
        col_sq.sort_by(f64::total_cmp);
        sum[k] = col.iter().sum();
        sq[k] = col_sq.iter().sum();
    }
    let n = frames as f64;
    let mut mean = vec![0.0; width];
    let mut std = vec![0.0; width];
    let mut clamped = vec![false; width];
    for k in 0..width {
        mean[k] = sum[k] / n;
        let var = sq[k] / n - mean[k] * mean[k];
        if var > POOL_EPSILON {
            std[k] = var.sqrt();
        } else {
            std[k] = POOL_EPSILON.sqrt();
            clamped[k] = true;
        }
    }
    (mean, std, clamped)
}

/// Statistics pooling: `[mean; std]` over the rows of `h`.
pub fn stats_pool(h: &FeatureMatrix) -> Result<Vec<f64>> {
    let data: Vec<f64> = h.as_slice().iter().map(|&v| v as f64).collect();
    stats_pool_f64(&data, h.rows(), h.cols())
}

pub fn stats_pool_f64(h: &[f64], frames: usize, width: usize) -> Result<Vec<f64>> {
    if frames == 0 || width == 0 || h.len() != frames * width {
        return Err(Error::EmptyMatrix);
    }
    let (mut mean, std, _) = pool_statistics(h, frames, width);
    mean.extend(std);
    Ok(mean)
}

pub(crate) fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub(crate) fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in z.iter().enumerate() {
        if *v > z[best] {
            best = i;
        }
    }
    best
}

/// Batch-mean cross-entropy `mean_n(-log softmax(logits_n)[label_n])`.
/// Labels are zero-based class indices.
pub fn ce_loss(logits: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if logits.is_empty() || logits.len() != labels.len() {
        return Err(Error::InvalidArgument("logits and labels must be non-empty and equal length".into()));
    }
    let mut total = 0.0;
    for (z, &y) in logits.iter().zip(labels) {
        if y >= z.len() {
            return Err(Error::InvalidArgument(format!("label {y} out of range for {} classes", z.len())));
        }
        total += log_sum_exp(z) - z[y];
    }
    Ok(total / logits.len() as f64)
}
