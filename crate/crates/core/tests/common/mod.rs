//! Shared fixtures and brute-force references for the integration suites.

#![allow(dead_code)]

use pcp_core::config::{MapStrategy, ModelConfig};
use pcp_core::data::ObservationSample;
use pcp_core::model::ModelParams;
use pcp_tensor::{Padding, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Random sample shaped for `config`.
pub fn random_sample(config: &ModelConfig, rng: &mut ChaCha8Rng, label: u8) -> ObservationSample {
    let (h, w) = config.map_size;
    ObservationSample {
        track_id: format!("r{}", rng.gen::<u32>()),
        window: 0,
        last_frame: 4,
        map_stack: Tensor::from_fn([config.map_channels(), h, w], |_| rng.gen_range(0.0..1.0)),
        scene_stack: Tensor::from_fn([config.scene_channels(), h, w], |_| rng.gen_range(0.0..1.0)),
        ped_motion: (0..config.obs_len)
            .map(|_| random_vec(rng, config.ped_feature_dim))
            .collect(),
        veh_motion: (0..config.obs_len)
            .map(|_| random_vec(rng, config.veh_feature_dim))
            .collect(),
        label,
        tte: 1.0,
    }
}

/// Parameters with every tensor (biases included) drawn uniformly in ±scale.
pub fn random_params(specs: &[pcp_core::model::ParamSpec], rng: &mut ChaCha8Rng, scale: f64) -> ModelParams {
    let mut p = ModelParams::new();
    for s in specs {
        p.insert(s.name.clone(), Tensor::from_fn(s.shape.clone(), |_| rng.gen_range(-scale..scale)));
    }
    p
}

pub fn tiny(strategy: MapStrategy) -> ModelConfig {
    ModelConfig::test_profile(strategy)
}

/// Direct loop over output position, channel and tap.
pub fn naive_conv(x: &Tensor, k: &Tensor, b: &[f64], stride: usize, rate: usize, pad: Padding) -> Tensor {
    let (ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let eh = kh + (kh - 1) * (rate - 1);
    let ew = kw + (kw - 1) * (rate - 1);
    let oh = (h + pad.top + pad.bottom - eh) / stride + 1;
    let ow = (w + pad.left + pad.right - ew) / stride + 1;
    let mut out = Tensor::zeros([co, oh, ow]);
    for o in 0..co {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = b[o];
                for c in 0..ci {
                    for a in 0..kh {
                        for bb in 0..kw {
                            let y = (i * stride + a * rate) as isize - pad.top as isize;
                            let xx = (j * stride + bb * rate) as isize - pad.left as isize;
                            if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
                                continue;
                            }
                            acc += k.get(&[o, c, a, bb]).unwrap() * x.get(&[c, y as usize, xx as usize]).unwrap();
                        }
                    }
                }
                out.data_mut()[(o * oh + i) * ow + j] = acc;
            }
        }
    }
    out
}

/// Every input pixel scatters `value * kernel[c, o]` onto its output footprint.
pub fn scatter_transpose(x: &Tensor, k: &Tensor, b: &[f64], stride: usize) -> Tensor {
    let (ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, kh, kw) = (k.shape()[1], k.shape()[2], k.shape()[3]);
    let (oh, ow) = ((h - 1) * stride + kh, (w - 1) * stride + kw);
    let mut out = Tensor::from_fn([co, oh, ow], |i| b[i / (oh * ow)]);
    for c in 0..ci {
        for i in 0..h {
            for j in 0..w {
                let v = x.get(&[c, i, j]).unwrap();
                for o in 0..co {
                    for a in 0..kh {
                        for bb in 0..kw {
                            let idx = (o * oh + i * stride + a) * ow + j * stride + bb;
                            out.data_mut()[idx] += v * k.get(&[c, o, a, bb]).unwrap();
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn loop_dense(w: &Tensor, x: &[f64], b: &[f64]) -> Vec<f64> {
    let (m, n) = (w.shape()[0], w.shape()[1]);
    (0..m)
        .map(|i| b[i] + (0..n).map(|j| w.get(&[i, j]).unwrap() * x[j]).sum::<f64>())
        .collect()
}

pub fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Scalar-indexed LSTM step with gates stacked `i, f, g, o`.
pub fn lstm_step(x: &[f64], h: &[f64], c: &[f64], wih: &Tensor, whh: &Tensor, b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = h.len();
    let pre: Vec<f64> = (0..4 * n)
        .map(|r| {
            let mut s = b[r];
            for (j, xv) in x.iter().enumerate() {
                s += wih.get(&[r, j]).unwrap() * xv;
            }
            for (j, hv) in h.iter().enumerate() {
                s += whh.get(&[r, j]).unwrap() * hv;
            }
            s
        })
        .collect();
    let mut h2 = vec![0.0; n];
    let mut c2 = vec![0.0; n];
    for u in 0..n {
        let i = sig(pre[u]);
        let f = sig(pre[n + u]);
        let g = pre[2 * n + u].tanh();
        let o = sig(pre[3 * n + u]);
        c2[u] = f * c[u] + i * g;
        h2[u] = o * c2[u].tanh();
    }
    (h2, c2)
}

/// Softmax with the maximum subtracted before exponentiation.
pub fn softmax_oracle(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Mann-Whitney statistic by explicit enumeration of positive/negative pairs.
pub fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0usize);
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1;
            if si > sj {
                num += 1.0;
            } else if si == sj {
                num += 0.5;
            }
        }
    }
    num / pairs as f64
}

/// Exhaustive scan of every last-frame index satisfying the window rules:
/// full window inside the track, gap of 10 to 20 frames, stride 3 from the
/// earliest eligible window.
pub fn enumerate_windows(event: usize) -> Vec<usize> {
    let eligible: Vec<usize> = (0..=event)
        .filter(|&l| l >= 4 && event - l >= 10 && event - l <= 20)
        .collect();
    match eligible.first() {
        None => Vec::new(),
        Some(&first) => eligible.into_iter().filter(|l| (l - first) % 3 == 0).collect(),
    }
}

/// Finite-difference check of the whole network output with respect to
/// every parameter, on the given sample.
pub fn full_model_gradcheck(
    net: &pcp_core::model::Network,
    params: &ModelParams,
    sample: &ObservationSample,
) -> pcp_tensor::gradcheck::GradCheck {
    use pcp_core::model::{Bound, Classifier};
    let names: Vec<String> = params.names().map(str::to_owned).collect();
    let inputs: Vec<Tensor> = names.iter().map(|n| params.get(n).unwrap().clone()).collect();
    pcp_tensor::gradcheck::check_gradients(&inputs, 1e-5, 1e-6, |g, vars| {
        let bound: Bound = names.iter().cloned().zip(vars.iter().copied()).collect();
        net.forward(g, &bound, sample).map_err(|e| pcp_tensor::TensorError::InvalidArgument {
            op: "forward",
            reason: e.to_string(),
        })
    })
    .expect("gradient check runs")
}
