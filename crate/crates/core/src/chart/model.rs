use rand::Rng;

use super::scalar::{gemm, Scalar};
use crate::features::CirFeature;
use crate::rng::{self, Domain};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
}

/// One network layer. Convolutions are square, stride 1, zero "same"
/// padding (for even kernels the extra row/column goes bottom/right).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layer {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        activation: Activation,
    },
    Flatten {
        width: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
        activation: Activation,
    },
}

impl Layer {
    pub fn param_count(&self) -> usize {
        match *self {
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => out_channels * (in_channels * kernel * kernel + 1),
            Layer::Flatten { .. } => 0,
            Layer::Dense {
                inputs, outputs, ..
            } => outputs * (inputs + 1),
        }
    }

    /// Fan-in used for the uniform initialisation bound.
    fn fan_in(&self) -> usize {
        match *self {
            Layer::Conv2d {
                in_channels,
                kernel,
                ..
            } => in_channels * kernel * kernel,
            Layer::Flatten { .. } => 0,
            Layer::Dense { inputs, .. } => inputs,
        }
    }

    /// Number of weights (the bias follows them in the parameter vector).
    fn weight_count(&self) -> usize {
        match *self {
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => out_channels * in_channels * kernel * kernel,
            Layer::Flatten { .. } => 0,
            Layer::Dense {
                inputs, outputs, ..
            } => outputs * inputs,
        }
    }

    fn activation(&self) -> Activation {
        match *self {
            Layer::Conv2d { activation, .. } | Layer::Dense { activation, .. } => activation,
            Layer::Flatten { .. } => Activation::Linear,
        }
    }
}

/// The default chart network for an `rows x cols` input.
pub fn default_layers(rows: usize, cols: usize) -> Vec<Layer> {
    let conv = |i, o, k| Layer::Conv2d {
        in_channels: i,
        out_channels: o,
        kernel: k,
        activation: Activation::Relu,
    };
    vec![
        conv(1, 8, 3),
        conv(8, 8, 5),
        conv(8, 8, 8),
        conv(8, 16, 10),
        Layer::Flatten {
            width: 16 * rows * cols,
        },
        Layer::Dense {
            inputs: 16 * rows * cols,
            outputs: 200,
            activation: Activation::Relu,
        },
        Layer::Dense {
            inputs: 200,
            outputs: 100,
            activation: Activation::Linear,
        },
        Layer::Dense {
            inputs: 100,
            outputs: 2,
            activation: Activation::Linear,
        },
    ]
}

/// Chart function mapping an `M x C̄` CIR magnitude feature to a 2D point.
#[derive(Clone, Debug, PartialEq)]
pub struct ChartModel<T: Scalar = f32> {
    input_rows: usize,
    input_cols: usize,
    input_scale: f64,
    layers: Vec<Layer>,
    offsets: Vec<usize>,
    params: Vec<T>,
}

impl<T: Scalar> ChartModel<T> {
    /// Default architecture with seeded uniform fan-in initialisation.
    pub fn new(rows: usize, cols: usize, input_scale: f64, seed: u64) -> Result<Self> {
        Self::with_layers(rows, cols, input_scale, default_layers(rows, cols), seed)
    }

    pub fn with_layers(
        rows: usize,
        cols: usize,
        input_scale: f64,
        layers: Vec<Layer>,
        seed: u64,
    ) -> Result<Self> {
        let total = validate(rows, cols, &layers)?;
        let mut rng = rng::stream(seed, Domain::Init, 0);
        let mut params = Vec::with_capacity(total);
        for layer in &layers {
            let n = layer.param_count();
            if n == 0 {
                continue;
            }
            let bound = 1.0 / (layer.fan_in() as f64).sqrt();
            params.extend((0..n).map(|_| T::from_f64(rng.random_range(-bound..bound))));
        }
        Self::from_parts(rows, cols, input_scale, layers, params)
    }

    pub fn from_parts(
        rows: usize,
        cols: usize,
        input_scale: f64,
        layers: Vec<Layer>,
        params: Vec<T>,
    ) -> Result<Self> {
        let total = validate(rows, cols, &layers)?;
        if params.len() != total {
            return Err(Error::Shape(format!(
                "{} parameters for a model needing {total}",
                params.len()
            )));
        }
        if !(input_scale.is_finite() && input_scale > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "input scale {input_scale} must be positive"
            )));
        }
        let mut offsets = Vec::with_capacity(layers.len());
        let mut at = 0;
        for layer in &layers {
            offsets.push(at);
            at += layer.param_count();
        }
        Ok(ChartModel {
            input_rows: rows,
            input_cols: cols,
            input_scale,
            layers,
            offsets,
            params,
        })
    }

    /// Same model in another element type.
    pub fn cast<U: Scalar>(&self) -> ChartModel<U> {
        ChartModel {
            input_rows: self.input_rows,
            input_cols: self.input_cols,
            input_scale: self.input_scale,
            layers: self.layers.clone(),
            offsets: self.offsets.clone(),
            params: self
                .params
                .iter()
                .map(|v| U::from_f64(v.to_f64()))
                .collect(),
        }
    }

    pub fn input_shape(&self) -> (usize, usize) {
        (self.input_rows, self.input_cols)
    }

    pub fn input_scale(&self) -> f64 {
        self.input_scale
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|v| v.to_f64().is_finite())
    }

    /// Overwrites the bias of the final layer, e.g. to start the chart at
    /// the centre of the area of interest.
    pub fn set_output_bias(&mut self, bias: [f64; 2]) {
        let last = self.layers.len() - 1;
        let start = self.offsets[last] + self.layers[last].weight_count();
        self.params[start] = T::from_f64(bias[0]);
        self.params[start + 1] = T::from_f64(bias[1]);
    }

    pub fn forward(&self, feature: &CirFeature) -> Result<[f64; 2]> {
        if (feature.rows, feature.cols) != (self.input_rows, self.input_cols) {
            return Err(Error::Shape(format!(
                "feature is {}x{}, model expects {}x{}",
                feature.rows, feature.cols, self.input_rows, self.input_cols
            )));
        }
        Ok(self.predict(&feature.values)[0])
    }

    /// Chart points for a stack of features laid out `[n, rows, cols]`.
    pub fn predict(&self, features: &[f32]) -> Vec<[f64; 2]> {
        let per = self.input_rows * self.input_cols;
        assert_eq!(
            features.len() % per,
            0,
            "feature stack is not a whole number of samples"
        );
        let mut ws = Workspace::default();
        let mut out = Vec::with_capacity(features.len() / per);
        let mut buf = Vec::new();
        for chunk in features.chunks(256 * per) {
            buf.clear();
            buf.extend(chunk.iter().map(|&v| T::from_f64(v as f64)));
            let y = self.forward_batch(&buf, chunk.len() / per, &mut ws);
            out.extend(y.chunks(2).map(|p| [p[0].to_f64(), p[1].to_f64()]));
        }
        out
    }

    /// Batched forward pass over `[batch, rows, cols]` inputs, caching the
    /// activations in `ws` for [`ChartModel::backward`]. Returns `[batch, 2]`.
    pub fn forward_batch<'w>(
        &self,
        inputs: &[T],
        batch: usize,
        ws: &'w mut Workspace<T>,
    ) -> &'w [T] {
        let (h, w) = (self.input_rows, self.input_cols);
        assert_eq!(
            inputs.len(),
            batch * h * w,
            "input length does not match batch"
        );
        ws.batch = batch;
        ws.acts.resize_with(self.layers.len() + 1, Vec::new);
        // conv layout [channel, row, sample, column]
        let scale = T::from_f64(self.input_scale);
        let a0 = &mut ws.acts[0];
        a0.clear();
        a0.resize(batch * h * w, T::ZERO);
        for b in 0..batch {
            for y in 0..h {
                let src = &inputs[(b * h + y) * w..][..w];
                let dst = &mut a0[(y * batch + b) * w..][..w];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = s * scale;
                }
            }
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let (before, after) = ws.acts.split_at_mut(i + 1);
            let (input, out) = (&before[i], &mut after[0]);
            let p = &self.params[self.offsets[i]..][..layer.param_count()];
            match *layer {
                Layer::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => {
                    let conv = Conv {
                        cin: in_channels,
                        cout: out_channels,
                        k: kernel,
                        h,
                        w,
                        batch,
                    };
                    conv.forward(p, input, out, &mut ws.col, &mut ws.wsub);
                }
                Layer::Flatten { width } => {
                    let chans = width / (h * w);
                    out.clear();
                    out.resize(batch * width, T::ZERO);
                    for c in 0..chans {
                        for y in 0..h {
                            for b in 0..batch {
                                out[b * width + (c * h + y) * w..][..w]
                                    .copy_from_slice(&input[((c * h + y) * batch + b) * w..][..w]);
                            }
                        }
                    }
                }
                Layer::Dense {
                    inputs: fin,
                    outputs: fout,
                    ..
                } => {
                    let (wt, bias) = p.split_at(fout * fin);
                    out.clear();
                    out.resize(batch * fout, T::ZERO);
                    for row in out.chunks_mut(fout) {
                        row.copy_from_slice(bias);
                    }
                    gemm(
                        batch,
                        fin,
                        fout,
                        (input, fin, 1),
                        (wt, 1, fin),
                        T::ONE,
                        out,
                        fout,
                        1,
                    );
                }
            }
            if layer.activation() == Activation::Relu {
                for v in out.iter_mut() {
                    if *v < T::ZERO {
                        *v = T::ZERO;
                    }
                }
            }
        }
        &ws.acts[self.layers.len()]
    }

    /// Backpropagates `d_out` (`[batch, 2]`, gradient of the objective with
    /// respect to the outputs of the last [`ChartModel::forward_batch`]) and
    /// adds the parameter gradient into `grad`.
    pub fn backward(&self, ws: &mut Workspace<T>, d_out: &[T], grad: &mut [T]) {
        let (h, w, batch) = (self.input_rows, self.input_cols, ws.batch);
        assert_eq!(
            d_out.len(),
            batch * 2,
            "output gradient does not match batch"
        );
        assert_eq!(grad.len(), self.params.len(), "gradient buffer length");
        let mut g = std::mem::take(&mut ws.g0);
        let mut next = std::mem::take(&mut ws.g1);
        g.clear();
        g.extend_from_slice(d_out);
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let out = &ws.acts[i + 1];
            if layer.activation() == Activation::Relu {
                for (gv, &o) in g.iter_mut().zip(out) {
                    if o <= T::ZERO {
                        *gv = T::ZERO;
                    }
                }
            }
            let input = &ws.acts[i];
            let p = &self.params[self.offsets[i]..][..layer.param_count()];
            let gp = &mut grad[self.offsets[i]..][..layer.param_count()];
            let need_input = i > 0;
            match *layer {
                Layer::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => {
                    let conv = Conv {
                        cin: in_channels,
                        cout: out_channels,
                        k: kernel,
                        h,
                        w,
                        batch,
                    };
                    conv.backward(
                        p,
                        input,
                        &g,
                        gp,
                        need_input.then_some(&mut next),
                        &mut ws.col,
                        &mut ws.wsub,
                        &mut ws.dwsub,
                        &mut ws.dcol,
                    );
                }
                Layer::Flatten { width } => {
                    let chans = width / (h * w);
                    next.clear();
                    next.resize(batch * width, T::ZERO);
                    for c in 0..chans {
                        for y in 0..h {
                            for b in 0..batch {
                                next[((c * h + y) * batch + b) * w..][..w]
                                    .copy_from_slice(&g[b * width + (c * h + y) * w..][..w]);
                            }
                        }
                    }
                }
                Layer::Dense {
                    inputs: fin,
                    outputs: fout,
                    ..
                } => {
                    let (wt, _) = p.split_at(fout * fin);
                    let (gw, gb) = gp.split_at_mut(fout * fin);
                    gemm(
                        fout,
                        batch,
                        fin,
                        (&g, 1, fout),
                        (input, fin, 1),
                        T::ONE,
                        gw,
                        fin,
                        1,
                    );
                    for row in g.chunks(fout) {
                        for (b, &v) in gb.iter_mut().zip(row) {
                            *b += v;
                        }
                    }
                    if need_input {
                        next.clear();
                        next.resize(batch * fin, T::ZERO);
                        gemm(
                            batch,
                            fout,
                            fin,
                            (&g, fout, 1),
                            (wt, fin, 1),
                            T::ZERO,
                            &mut next,
                            fin,
                            1,
                        );
                    }
                }
            }
            std::mem::swap(&mut g, &mut next);
        }
        ws.g0 = g;
        ws.g1 = next;
    }
}

fn validate(rows: usize, cols: usize, layers: &[Layer]) -> Result<usize> {
    let bad = |msg: String| Err(Error::Shape(msg));
    if rows == 0 || cols == 0 {
        return bad(format!("input shape {rows}x{cols}"));
    }
    let mut channels = Some(1usize); // Some while in the conv stage
    let mut features = 0usize;
    for (i, layer) in layers.iter().enumerate() {
        match (*layer, channels) {
            (
                Layer::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                },
                Some(c),
            ) => {
                if in_channels != c || out_channels == 0 || kernel == 0 {
                    return bad(format!("layer {i}: conv {in_channels}->{out_channels} k{kernel} after {c} channels"));
                }
                channels = Some(out_channels);
            }
            (Layer::Flatten { width }, Some(c)) => {
                if width != c * rows * cols {
                    return bad(format!(
                        "layer {i}: flatten width {width}, expected {}",
                        c * rows * cols
                    ));
                }
                channels = None;
                features = width;
            }
            (
                Layer::Dense {
                    inputs, outputs, ..
                },
                None,
            ) => {
                if inputs != features || outputs == 0 {
                    return bad(format!(
                        "layer {i}: dense {inputs}->{outputs} after {features} features"
                    ));
                }
                features = outputs;
            }
            _ => return bad(format!("layer {i}: {layer:?} out of order")),
        }
    }
    if channels.is_some() || features != 2 {
        return bad("model must end in a flatten and dense stack with 2 outputs".into());
    }
    Ok(layers.iter().map(Layer::param_count).sum())
}

/// Reusable activation and scratch buffers for batched passes.
#[derive(Clone, Debug, Default)]
pub struct Workspace<T> {
    batch: usize,
    acts: Vec<Vec<T>>,
    col: Vec<T>,
    wsub: Vec<T>,
    dwsub: Vec<T>,
    dcol: Vec<T>,
    g0: Vec<T>,
    g1: Vec<T>,
}

/// Convolution over `[channel, row, sample, column]` activations.
///
/// Output row `y` only sees kernel rows whose input row is inside the
/// image, so each row is an im2col GEMM over that band of kernel rows.
struct Conv {
    cin: usize,
    cout: usize,
    k: usize,
    h: usize,
    w: usize,
    batch: usize,
}

impl Conv {
    fn pad(&self) -> usize {
        (self.k - 1) / 2
    }

    fn band(&self, y: usize) -> (usize, usize) {
        let pad = self.pad();
        (pad.saturating_sub(y), self.k.min(self.h + pad - y))
    }

    /// Fills `col` `[cin * band * k, batch * w]` and `wsub` `[cout, cin * band * k]`.
    fn gather<T: Scalar>(
        &self,
        weights: &[T],
        input: &[T],
        y: usize,
        col: &mut Vec<T>,
        wsub: &mut Vec<T>,
    ) -> usize {
        let (k, pad, bw) = (self.k, self.pad(), self.batch * self.w);
        let (lo, hi) = self.band(y);
        let rows = self.cin * (hi - lo) * k;
        wsub.clear();
        for o in 0..self.cout {
            for c in 0..self.cin {
                let base = (o * self.cin + c) * k * k;
                wsub.extend_from_slice(&weights[base + lo * k..base + hi * k]);
            }
        }
        col.clear();
        col.resize(rows * bw, T::ZERO);
        for c in 0..self.cin {
            for (band_row, ky) in (lo..hi).enumerate() {
                let src = &input[(c * self.h + y + ky - pad) * bw..][..bw];
                for kx in 0..k {
                    let dst = &mut col[((c * (hi - lo) + band_row) * k + kx) * bw..][..bw];
                    let (xl, xh) = self.x_range(kx);
                    for b in 0..self.batch {
                        let s = b * self.w;
                        dst[s + xl..s + xh]
                            .copy_from_slice(&src[s + xl + kx - pad..s + xh + kx - pad]);
                    }
                }
            }
        }
        rows
    }

    /// Output columns `x` whose input column `x + kx - pad` is in range.
    fn x_range(&self, kx: usize) -> (usize, usize) {
        let pad = self.pad();
        let lo = pad.saturating_sub(kx);
        (lo, (self.w + pad).saturating_sub(kx).min(self.w).max(lo))
    }

    fn forward<T: Scalar>(
        &self,
        p: &[T],
        input: &[T],
        out: &mut Vec<T>,
        col: &mut Vec<T>,
        wsub: &mut Vec<T>,
    ) {
        let (h, bw) = (self.h, self.batch * self.w);
        let (weights, bias) = p.split_at(self.cout * self.cin * self.k * self.k);
        out.clear();
        out.resize(self.cout * h * bw, T::ZERO);
        for y in 0..h {
            let rows = self.gather(weights, input, y, col, wsub);
            gemm(
                self.cout,
                rows,
                bw,
                (wsub, rows, 1),
                (col, bw, 1),
                T::ZERO,
                &mut out[y * bw..],
                h * bw,
                1,
            );
            for (o, &b) in bias.iter().enumerate() {
                for v in &mut out[(o * h + y) * bw..][..bw] {
                    *v += b;
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backward<T: Scalar>(
        &self,
        p: &[T],
        input: &[T],
        g: &[T],
        gp: &mut [T],
        mut d_input: Option<&mut Vec<T>>,
        col: &mut Vec<T>,
        wsub: &mut Vec<T>,
        dwsub: &mut Vec<T>,
        dcol: &mut Vec<T>,
    ) {
        let (h, k, pad, bw) = (self.h, self.k, self.pad(), self.batch * self.w);
        let nw = self.cout * self.cin * k * k;
        let (weights, _) = p.split_at(nw);
        let (gw, gb) = gp.split_at_mut(nw);
        if let Some(d) = d_input.as_deref_mut() {
            d.clear();
            d.resize(self.cin * h * bw, T::ZERO);
        }
        for y in 0..h {
            let rows = self.gather(weights, input, y, col, wsub);
            let (lo, hi) = self.band(y);
            dwsub.clear();
            dwsub.resize(self.cout * rows, T::ZERO);
            gemm(
                self.cout,
                bw,
                rows,
                (&g[y * bw..], h * bw, 1),
                (col, 1, bw),
                T::ZERO,
                dwsub,
                rows,
                1,
            );
            let band = (hi - lo) * k;
            for o in 0..self.cout {
                for c in 0..self.cin {
                    let dst = &mut gw[(o * self.cin + c) * k * k + lo * k..][..band];
                    for (d, &s) in dst
                        .iter_mut()
                        .zip(&dwsub[(o * self.cin + c) * band..][..band])
                    {
                        *d += s;
                    }
                }
                for &v in &g[(o * h + y) * bw..][..bw] {
                    gb[o] += v;
                }
            }
            let Some(d) = d_input.as_deref_mut() else {
                continue;
            };
            dcol.clear();
            dcol.resize(rows * bw, T::ZERO);
            gemm(
                rows,
                self.cout,
                bw,
                (wsub, 1, rows),
                (&g[y * bw..], h * bw, 1),
                T::ZERO,
                dcol,
                bw,
                1,
            );
            for c in 0..self.cin {
                for (band_row, ky) in (lo..hi).enumerate() {
                    let dst = &mut d[(c * h + y + ky - pad) * bw..][..bw];
                    for kx in 0..k {
                        let src = &dcol[((c * (hi - lo) + band_row) * k + kx) * bw..][..bw];
                        let (xl, xh) = self.x_range(kx);
                        for b in 0..self.batch {
                            let s = b * self.w;
                            for x in xl..xh {
                                dst[s + x + kx - pad] += src[s + x];
                            }
                        }
                    }
                }
            }
        }
    }
}
