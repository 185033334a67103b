//! Convolutional encoder with attention blocks.
//!
//! Three conv(3x3) + ReLU + 2x max-pool blocks take the input down to 1/8
//! resolution. Block one carries squeeze-excite channel attention between
//! its ReLU and pool; block three is followed by a spatial attention gate.
//! A fully connected head maps the latent map to one logit.
//!
//! Input layout: the 7 lookback days and V variables are flattened into
//! `7 * V` channels, day-major, so a `[7, V, H, W]` sample is already in
//! the expected memory order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::*;
use super::{Classifier, Trainable};
use crate::error::{Error, Result};
use crate::stats::sigmoid;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvAttnConfig {
    pub days: usize,
    pub variables: usize,
    pub height: usize,
    pub width: usize,
    pub widths: [usize; 3],
    pub kernel: usize,
    /// Channel reduction factor of the squeeze-excite gate.
    pub se_reduction: usize,
}

impl Default for ConvAttnConfig {
    fn default() -> Self {
        Self { days: 7, variables: 23, height: 32, width: 32, widths: [32, 64, 128], kernel: 3, se_reduction: 4 }
    }
}

impl ConvAttnConfig {
    pub fn in_channels(&self) -> usize {
        self.days * self.variables
    }

    pub fn input_len(&self) -> usize {
        self.in_channels() * self.height * self.width
    }

    fn se_hidden(&self) -> usize {
        (self.widths[0] / self.se_reduction.max(1)).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height % 8 != 0 || self.width % 8 != 0 || self.height == 0 || self.width == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid {}x{} must be a positive multiple of 8",
                self.height, self.width
            )));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::InvalidArgument("kernel size must be odd".into()));
        }
        if self.days == 0 || self.variables == 0 || self.widths.contains(&0) {
            return Err(Error::InvalidArgument("zero-sized layer".into()));
        }
        Ok(())
    }
}

/// Parameter offsets inside the flat parameter vector.
#[derive(Debug, Clone)]
struct Layout {
    conv: [(std::ops::Range<usize>, std::ops::Range<usize>); 3],
    se_w1: std::ops::Range<usize>,
    se_b1: std::ops::Range<usize>,
    se_w2: std::ops::Range<usize>,
    se_b2: std::ops::Range<usize>,
    sa_w: std::ops::Range<usize>,
    sa_b: usize,
    fc_w: std::ops::Range<usize>,
    fc_b: usize,
    total: usize,
}

impl Layout {
    fn new(cfg: &ConvAttnConfig) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let k2 = cfg.kernel * cfg.kernel;
        let [c1, c2, c3] = cfg.widths;
        let c0 = cfg.in_channels();
        let conv0 = (take(c1 * c0 * k2), take(c1));
        let r = cfg.se_hidden();
        let se_w1 = take(r * c1);
        let se_b1 = take(r);
        let se_w2 = take(c1 * r);
        let se_b2 = take(c1);
        let conv1 = (take(c2 * c1 * k2), take(c2));
        let conv2 = (take(c3 * c2 * k2), take(c3));
        let sa_w = take(c3);
        let sa_b = take(1).start;
        let fc_w = take(c3 * (cfg.height / 8) * (cfg.width / 8));
        let fc_b = take(1).start;
        Self { conv: [conv0, conv1, conv2], se_w1, se_b1, se_w2, se_b2, sa_w, sa_b, fc_w, fc_b, total: at }
    }
}

#[derive(Debug, Clone)]
pub struct ConvAttnModel {
    config: ConvAttnConfig,
    layout: Layout,
    params: Vec<f64>,
}

/// Forward intermediates needed by [`ConvAttnModel::backward`].
#[derive(Debug, Clone)]
pub struct Trace {
    input: Vec<f64>,
    pre: [Vec<f64>; 3],
    post_relu1: Vec<f64>,
    se: ChannelAttnCache,
    argmax: [Vec<usize>; 3],
    block_out: [Vec<f64>; 2],
    pooled3: Vec<f64>,
    sa_gate: Vec<f64>,
    latent: Vec<f64>,
    pub logit: f64,
}

impl Trace {
    pub fn probability(&self) -> f64 {
        sigmoid(self.logit)
    }
}

/// Gradients of one backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

fn finite(v: &[f64], what: &str) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(Error::NonFinite { what: what.into(), index }),
        None => Ok(()),
    }
}

impl ConvAttnModel {
    /// He-uniform weights from `seed`, zero biases.
    pub fn new(config: ConvAttnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k2 = config.kernel * config.kernel;
        let [c1, c2, c3] = config.widths;
        let fan_ins = [config.in_channels() * k2, c1 * k2, c2 * k2];
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize, rng: &mut ChaCha8Rng| {
            let bound = (6.0 / fan_in as f64).sqrt();
            for p in &mut params[range] {
                *p = rng.random_range(-bound..bound);
            }
        };
        for (i, (w, _)) in layout.conv.iter().enumerate() {
            fill(w.clone(), fan_ins[i], &mut rng);
        }
        fill(layout.se_w1.clone(), c1, &mut rng);
        fill(layout.se_w2.clone(), config.se_hidden(), &mut rng);
        fill(layout.sa_w.clone(), c3, &mut rng);
        fill(layout.fc_w.clone(), layout.fc_w.len(), &mut rng);
        Ok(Self { config, layout, params })
    }

    pub fn from_params(config: ConvAttnConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        Ok(Self { config, layout, params })
    }

    pub fn config(&self) -> &ConvAttnConfig {
        &self.config
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    fn shapes(&self) -> [Chw; 3] {
        let cfg = &self.config;
        let [c1, c2, _] = cfg.widths;
        [
            Chw::new(cfg.in_channels(), cfg.height, cfg.width),
            Chw::new(c1, cfg.height / 2, cfg.width / 2),
            Chw::new(c2, cfg.height / 4, cfg.width / 4),
        ]
    }

    /// Accepts `[7*V, H, W]` or `[7, V, H, W]`.
    pub fn forward_tensor(&self, input: &Tensor) -> Result<(f64, Trace)> {
        let cfg = &self.config;
        let ok = input.shape() == [cfg.in_channels(), cfg.height, cfg.width]
            || input.shape() == [cfg.days, cfg.variables, cfg.height, cfg.width];
        if !ok {
            return Err(Error::ShapeMismatch(format!("input shape {:?} does not match model", input.shape())));
        }
        self.forward(input.data())
    }

    /// Probability and the trace needed for a backward pass.
    pub fn forward(&self, x: &[f64]) -> Result<(f64, Trace)> {
        let trace = self.trace(x)?;
        Ok((trace.probability(), trace))
    }

    fn trace(&self, x: &[f64]) -> Result<Trace> {
        if x.len() != self.config.input_len() {
            return Err(Error::ShapeMismatch(format!(
                "input has {} values, model expects {}",
                x.len(),
                self.config.input_len()
            )));
        }
        finite(x, "model input")?;
        let p = &self.params;
        let l = &self.layout;
        let k = self.config.kernel;
        let shapes = self.shapes();
        let widths = self.config.widths;

        let mut pre: [Vec<f64>; 3] = Default::default();
        let mut argmax: [Vec<usize>; 3] = Default::default();
        let mut block_out: [Vec<f64>; 2] = Default::default();
        let mut post_relu1 = Vec::new();
        let mut se = None;
        let mut act = x.to_vec();
        for b in 0..3 {
            let s = shapes[b];
            let (w, bias) = &l.conv[b];
            let z = conv2d_forward(&act, s, &p[w.clone()], &p[bias.clone()], widths[b], k);
            finite(&z, "conv output")?;
            let r = relu_forward(&z);
            let out_s = Chw::new(widths[b], s.h, s.w);
            let gated = if b == 0 {
                let (g, cache) = channel_attn_forward(
                    &r,
                    out_s,
                    &p[l.se_w1.clone()],
                    &p[l.se_b1.clone()],
                    &p[l.se_w2.clone()],
                    &p[l.se_b2.clone()],
                );
                finite(&g, "channel attention")?;
                se = Some(cache);
                post_relu1 = r;
                g
            } else {
                r
            };
            let (pooled, idx) = maxpool2_forward(&gated, out_s);
            pre[b] = z;
            argmax[b] = idx;
            if b < 2 {
                block_out[b] = pooled.clone();
            }
            act = pooled;
        }
        let lat_s = Chw::new(widths[2], self.config.height / 8, self.config.width / 8);
        let (latent, sa_gate) = spatial_attn_forward(&act, lat_s, &p[l.sa_w.clone()], p[l.sa_b]);
        let logit = dense_forward(&latent, &p[l.fc_w.clone()], &p[l.fc_b..l.fc_b + 1])[0];
        if !logit.is_finite() {
            return Err(Error::NonFinite { what: "logit".into(), index: 0 });
        }
        Ok(Trace {
            input: x.to_vec(),
            pre,
            post_relu1,
            se: se.expect("block one always runs"),
            argmax,
            block_out,
            pooled3: act,
            sa_gate,
            latent,
            logit,
        })
    }

    /// Reverse pass for `upstream = dL/d(probability)`.
    pub fn backward(&self, trace: &Trace, upstream: f64) -> Gradients {
        let p = sigmoid(trace.logit);
        self.backward_logit(trace, upstream * p * (1.0 - p))
    }

    /// Reverse pass for `upstream = dL/d(logit)`.
    pub fn backward_logit(&self, trace: &Trace, upstream: f64) -> Gradients {
        let p = &self.params;
        let l = &self.layout;
        let k = self.config.kernel;
        let shapes = self.shapes();
        let widths = self.config.widths;
        let mut g = vec![0.0; l.total];

        let mut fc_b = [0.0];
        let d_latent = dense_backward(&trace.latent, &p[l.fc_w.clone()], &[upstream], &mut g[l.fc_w.clone()], &mut fc_b);
        g[l.fc_b] += fc_b[0];

        let lat_s = Chw::new(widths[2], self.config.height / 8, self.config.width / 8);
        let mut sa_b = 0.0;
        let mut grad = spatial_attn_backward(
            &trace.pooled3,
            lat_s,
            &p[l.sa_w.clone()],
            &trace.sa_gate,
            &d_latent,
            &mut g[l.sa_w.clone()],
            &mut sa_b,
        );
        g[l.sa_b] += sa_b;

        for b in (0..3).rev() {
            let s = shapes[b];
            let out_s = Chw::new(widths[b], s.h, s.w);
            let mut d = maxpool2_backward(&trace.argmax[b], out_s.len(), &grad);
            if b == 0 {
                let (mut gw1, mut gb1) = (vec![0.0; l.se_w1.len()], vec![0.0; l.se_b1.len()]);
                let (mut gw2, mut gb2) = (vec![0.0; l.se_w2.len()], vec![0.0; l.se_b2.len()]);
                d = channel_attn_backward(
                    &trace.post_relu1,
                    out_s,
                    &p[l.se_w1.clone()],
                    &p[l.se_w2.clone()],
                    &trace.se,
                    &d,
                    &mut gw1,
                    &mut gb1,
                    &mut gw2,
                    &mut gb2,
                );
                accumulate(&mut g[l.se_w1.clone()], &gw1);
                accumulate(&mut g[l.se_b1.clone()], &gb1);
                accumulate(&mut g[l.se_w2.clone()], &gw2);
                accumulate(&mut g[l.se_b2.clone()], &gb2);
            }
            let d = relu_backward(&trace.pre[b], &d);
            let input: &[f64] = if b == 0 { &trace.input } else { &trace.block_out[b - 1] };
            let (w, bias) = &l.conv[b];
            let (mut gw, mut gb) = (vec![0.0; w.len()], vec![0.0; bias.len()]);
            grad = conv2d_backward(input, s, &p[w.clone()], widths[b], k, &d, &mut gw, &mut gb);
            accumulate(&mut g[w.clone()], &gw);
            accumulate(&mut g[bias.clone()], &gb);
        }
        Gradients { params: g, input: grad }
    }
}

fn accumulate(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl Classifier for ConvAttnModel {
    fn input_len(&self) -> usize {
        self.config.input_len()
    }

    fn logit(&self, x: &[f64]) -> Result<f64> {
        Ok(self.trace(x)?.logit)
    }

    fn logit_input_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let t = self.trace(x)?;
        let g = self.backward_logit(&t, 1.0);
        Ok((t.logit, g.input))
    }
}

impl Trainable for ConvAttnModel {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn logit_param_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let t = self.trace(x)?;
        let g = self.backward_logit(&t, 1.0);
        Ok((t.logit, g.params))
    }
}
