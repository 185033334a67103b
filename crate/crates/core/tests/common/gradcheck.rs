//! Finite-difference checks of every layer's backward pass and of the full
//! model. Each check contracts the layer output with a fixed random vector
//! `r`, so the scalar loss is `r . out` and the upstream gradient is `r`.

use heatxai::model::layers::*;
use heatxai::model::{Classifier, ConvAttnConfig, ConvAttnModel, Trainable};

use super::{dot, fd_grad, normal_vec, rel_error, rng};

pub const EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub rel_error: f64,
}

fn check(name: &str, f: &dyn Fn(&[f64]) -> f64, at: &[f64], analytic: &[f64]) -> Check {
    let numeric = fd_grad(f, at, EPS);
    Check { name: name.to_string(), rel_error: rel_error(analytic, &numeric) }
}

/// Small offset that keeps inputs away from ReLU kinks and pooling ties.
fn nudge(v: &mut [f64]) {
    for x in v.iter_mut() {
        if x.abs() < 1e-3 {
            *x += 1e-2;
        }
    }
}

fn conv_checks(out: &mut Vec<Check>, seed: u64) {
    let mut g = rng(seed);
    let s = Chw::new(3, 6, 5);
    let (c_out, k) = (4, 3);
    let x = normal_vec(&mut g, s.len(), 1.0);
    let w = normal_vec(&mut g, c_out * s.c * k * k, 0.5);
    let b = normal_vec(&mut g, c_out, 0.5);
    let r = normal_vec(&mut g, c_out * s.plane(), 1.0);
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; b.len()];
    let gx = conv2d_backward(&x, s, &w, c_out, k, &r, &mut gw, &mut gb);
    out.push(check("conv2d/input", &|v| dot(&r, &conv2d_forward(v, s, &w, &b, c_out, k)), &x, &gx));
    out.push(check("conv2d/weight", &|v| dot(&r, &conv2d_forward(&x, s, v, &b, c_out, k)), &w, &gw));
    out.push(check("conv2d/bias", &|v| dot(&r, &conv2d_forward(&x, s, &w, v, c_out, k)), &b, &gb));
}

fn relu_checks(out: &mut Vec<Check>, seed: u64) {
    let mut g = rng(seed);
    let mut x = normal_vec(&mut g, 40, 1.0);
    nudge(&mut x);
    let r = normal_vec(&mut g, 40, 1.0);
    let gx = relu_backward(&x, &r);
    out.push(check("relu/input", &|v| dot(&r, &relu_forward(v)), &x, &gx));
}

fn pool_checks(out: &mut Vec<Check>, seed: u64) {
    let mut g = rng(seed);
    let s = Chw::new(2, 6, 4);
    let x = normal_vec(&mut g, s.len(), 1.0);
    let (_, arg) = maxpool2_forward(&x, s);
    let r = normal_vec(&mut g, arg.len(), 1.0);
    let gx = maxpool2_backward(&arg, s.len(), &r);
    out.push(check("maxpool2/input", &|v| dot(&r, &maxpool2_forward(v, s).0), &x, &gx));
}

fn channel_attn_checks(out: &mut Vec<Check>, seed: u64) {
    let mut g = rng(seed);
    let s = Chw::new(6, 4, 4);
    let red = 3;
    let x = normal_vec(&mut g, s.len(), 1.0);
    let w1 = normal_vec(&mut g, red * s.c, 1.0);
    let mut b1 = normal_vec(&mut g, red, 0.5);
    nudge(&mut b1);
    let w2 = normal_vec(&mut g, s.c * red, 1.0);
    let b2 = normal_vec(&mut g, s.c, 0.5);
    let r = normal_vec(&mut g, s.len(), 1.0);
    let (_, cache) = channel_attn_forward(&x, s, &w1, &b1, &w2, &b2);
    let (mut gw1, mut gb1, mut gw2, mut gb2) =
        (vec![0.0; w1.len()], vec![0.0; b1.len()], vec![0.0; w2.len()], vec![0.0; b2.len()]);
    let gx = channel_attn_backward(&x, s, &w1, &w2, &cache, &r, &mut gw1, &mut gb1, &mut gw2, &mut gb2);
    let f = |x: &[f64], w1: &[f64], b1: &[f64], w2: &[f64], b2: &[f64]| {
        dot(&r, &channel_attn_forward(x, s, w1, b1, w2, b2).0)
    };
    out.push(check("channel_attn/input", &|v| f(v, &w1, &b1, &w2, &b2), &x, &gx));
    out.push(check("channel_attn/w1", &|v| f(&x, v, &b1, &w2, &b2), &w1, &gw1));
    out.push(check("channel_attn/b1", &|v| f(&x, &w1, v, &w2, &b2), &b1, &gb1));
    out.push(check("channel_attn/w2", &|v| f(&x, &w1, &b1, v, &b2), &w2, &gw2));
    out.push(check("channel_attn/b2", &|v| f(&x, &w1, &b1, &w2, v), &b2, &gb2));
}

fn spatial_attn_checks(out: &mut Vec<Check>, seed: u64) {
    let mut g = rng(seed);
    let s = Chw::new(5, 4, 3);
    let x = normal_vec(&mut g, s.len(), 1.0);
    let w = normal_vec(&mut g, s.c, 1.0);
    let b = 0.3;
    let r = normal_vec(&mut g, s.len(), 1.0);
    let (_, gate) = spatial_attn_forward(&x, s, &w, b);
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    let gx = spatial_attn_backward(&x, s, &w, &gate, &r, &mut gw, &mut gb);
    out.push(check("spatial_attn/input", &|v| dot(&r, &spatial_attn_forward(v, s, &w, b).0), &x, &gx));
    out.push(check("spatial_attn/weight", &|v| dot(&r, &spatial_attn_forward(&x, s, v, b).0), &w, &gw));
    out.push(check("spatial_attn/bias", &|v| dot(&r, &spatial_attn_forward(&x, s, &w, v[0]).0), &[b], &[gb]));
}

fn dense_checks(out: &mut Vec<Check>, seed: u64) {
    let mut g = rng(seed);
    let (n_in, n_out) = (12, 5);
    let x = normal_vec(&mut g, n_in, 1.0);
    let w = normal_vec(&mut g, n_in * n_out, 1.0);
    let b = normal_vec(&mut g, n_out, 1.0);
    let r = normal_vec(&mut g, n_out, 1.0);
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; b.len()];
    let gx = dense_backward(&x, &w, &r, &mut gw, &mut gb);
    out.push(check("dense/input", &|v| dot(&r, &dense_forward(v, &w, &b)), &x, &gx));
    out.push(check("dense/weight", &|v| dot(&r, &dense_forward(&x, v, &b)), &w, &gw));
    out.push(check("dense/bias", &|v| dot(&r, &dense_forward(&x, &w, v)), &b, &gb));
}

pub fn toy_config() -> ConvAttnConfig {
    ConvAttnConfig { days: 7, variables: 2, height: 8, width: 8, widths: [4, 6, 8], kernel: 3, se_reduction: 2 }
}

fn model_checks(out: &mut Vec<Check>, seed: u64) {
    let cfg = toy_config();
    let model = ConvAttnModel::new(cfg.clone(), seed).unwrap();
    let mut g = rng(seed ^ 0xA5A5);
    let x = normal_vec(&mut g, cfg.input_len(), 1.0);

    let (_, gx) = model.logit_input_grad(&x).unwrap();
    out.push(check("conv_attn/input", &|v| model.logit(v).unwrap(), &x, &gx));

    let (_, gp) = model.logit_param_grad(&x).unwrap();
    let params = model.params().to_vec();
    let f = |p: &[f64]| ConvAttnModel::from_params(cfg.clone(), p.to_vec()).unwrap().logit(&x).unwrap();
    out.push(check("conv_attn/params", &f, &params, &gp));

    let (_, trace) = model.forward(&x).unwrap();
    let grads = model.backward(&trace, 1.0);
    out.push(check("conv_attn/probability_input", &|v| model.probability(v).unwrap(), &x, &grads.input));
}

/// Every layer check and the full-model check, seeded.
pub fn all_checks(seed: u64) -> Vec<Check> {
    let mut out = Vec::new();
    conv_checks(&mut out, seed);
    relu_checks(&mut out, seed + 1);
    pool_checks(&mut out, seed + 2);
    channel_attn_checks(&mut out, seed + 3);
    spatial_attn_checks(&mut out, seed + 4);
    dense_checks(&mut out, seed + 5);
    model_checks(&mut out, seed + 6);
    out
}
