mod common;

use common::*;
use pcp_core::config::{MapStrategy, ModelConfig};
use pcp_core::model::{Activation, Classifier, Modalities, ModelParams, Network, TrajectoryBaseline};
use pcp_tensor::{ConvSpec, Graph, Padding, Tensor};
use rand::Rng;

fn net(strategy: MapStrategy) -> Network {
    Network::new(tiny(strategy)).unwrap()
}

fn values(g: &Graph, v: pcp_tensor::Var) -> Vec<f64> {
    g.value(v).data().to_vec()
}

#[test]
fn vam_weights_sum_to_one_and_ignore_a_shift() {
    let n = net(MapStrategy::Atrous);
    let mut r = rng(1);
    for trial in 0..20 {
        let mut params = random_params(&n.param_specs(), &mut r, 1.0);
        let z = random(&mut r, &[n.config().visual_embed]);
        let run = |p: &ModelParams| {
            let mut g = Graph::new();
            let b = p.bind(&mut g, |_| false);
            let zv = g.constant(z.clone());
            let a = n.vam(&mut g, &b, zv).unwrap();
            (values(&g, a.weights), values(&g, a.output))
        };
        let (w, out) = run(&params);
        assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-9, "trial {trial}");
        for i in 0..w.len() {
            assert!((out[i] - w[i] * z.data()[i]).abs() <= 1e-15);
        }
        let shift = r.gen_range(-5.0..5.0);
        params.get_mut("vam.bias").unwrap().data_mut().iter_mut().for_each(|b| *b += shift);
        let (shifted, _) = run(&params);
        for (a, b) in w.iter().zip(&shifted) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn dam_single_state_returns_it() {
    let n = net(MapStrategy::Atrous);
    let mut r = rng(2);
    let params = random_params(&n.param_specs(), &mut r, 1.0);
    let mut g = Graph::new();
    let b = params.bind(&mut g, |_| false);
    let h = random(&mut r, &[n.config().dynamics_width()]);
    let hv = g.constant(h.clone());
    let a = n.dam(&mut g, &b, &[hv]).unwrap();
    assert_eq!(g.value(a.weights).data(), &[1.0]);
    let c = n.dam_context(&mut g, a.weights, &[hv]).unwrap();
    assert_eq!(g.value(c).data(), h.data());
}

#[test]
fn dam_identical_states_return_the_state() {
    let n = net(MapStrategy::Atrous);
    let mut r = rng(3);
    let params = random_params(&n.param_specs(), &mut r, 1.0);
    for len in 1..=8 {
        let mut g = Graph::new();
        let b = params.bind(&mut g, |_| false);
        let h = random(&mut r, &[n.config().dynamics_width()]);
        let hs: Vec<_> = (0..len).map(|_| g.constant(h.clone())).collect();
        let a = n.dam(&mut g, &b, &hs).unwrap();
        let c = n.dam_context(&mut g, a.weights, &hs).unwrap();
        assert_eq!(g.value(c).data(), h.data(), "length {len}");
    }
}

#[test]
fn dam_matches_unrolled_oracle() {
    let n = net(MapStrategy::Atrous);
    let mut r = rng(4);
    let width = n.config().dynamics_width();
    for _ in 0..10 {
        let params = random_params(&n.param_specs(), &mut r, 1.0);
        let states: Vec<Tensor> = (0..5).map(|_| random(&mut r, &[width])).collect();
        let mut g = Graph::new();
        let b = params.bind(&mut g, |_| false);
        let hs: Vec<_> = states.iter().map(|h| g.constant(h.clone())).collect();
        let a = n.dam(&mut g, &b, &hs).unwrap();

        let wa = params.get("dam.w_a").unwrap();
        let wc = params.get("dam.w_c").unwrap();
        let q = states[4].data();
        let zeros = vec![0.0; width];
        let scores: Vec<f64> = states
            .iter()
            .map(|h| {
                let proj = loop_dense(wa, h.data(), &zeros);
                q.iter().zip(&proj).map(|(x, y)| x * y).sum()
            })
            .collect();
        let alpha = softmax_oracle(&scores);
        let mut joined: Vec<f64> = (0..width)
            .map(|k| (0..5).map(|i| alpha[i] * states[i].data()[k]).sum())
            .collect();
        joined.extend_from_slice(q);
        let out: Vec<f64> = loop_dense(wc, &joined, &zeros).iter().map(|v| v.tanh()).collect();

        for (x, y) in values(&g, a.weights).iter().zip(&alpha) {
            assert!((x - y).abs() <= 1e-12);
        }
        for (x, y) in values(&g, a.output).iter().zip(&out) {
            assert!((x - y).abs() <= 1e-12);
        }
    }
}

#[test]
fn zero_parameters_predict_one_half() {
    let mut r = rng(5);
    for s in MapStrategy::ALL {
        let n = net(s);
        let p = ModelParams::zeros(&n.param_specs());
        for _ in 0..3 {
            let sample = random_sample(n.config(), &mut r, 1);
            assert_eq!(n.predict(&p, &sample).unwrap(), 0.5);
        }
    }
    let prod = Network::new(ModelConfig::production(MapStrategy::Atrous)).unwrap();
    let sample = random_sample(prod.config(), &mut r, 0);
    assert_eq!(prod.predict(&ModelParams::zeros(&prod.param_specs()), &sample).unwrap(), 0.5);
}

#[test]
fn production_encoders_reach_an_eighth_resolution() {
    let mut r = rng(6);
    for s in MapStrategy::ALL {
        let n = Network::new(ModelConfig::production(s)).unwrap();
        let p = n.init_params(0).unwrap();
        let sample = random_sample(n.config(), &mut r, 0);
        let mut g = Graph::new();
        let b = p.bind(&mut g, |_| false);
        let maps = g.constant(sample.map_stack.clone());
        let scenes = g.constant(sample.scene_stack.clone());
        let m = n.encode_map(&mut g, &b, maps).unwrap();
        let sc = n.encode_scene(&mut g, &b, scenes).unwrap();
        assert_eq!(g.shape(m), &[64, 8, 8], "{s}");
        assert_eq!(g.shape(sc), &[64, 8, 8], "{s}");
    }
}

#[test]
fn zero_input_with_zero_biases_encodes_to_zero() {
    for s in MapStrategy::ALL {
        let n = net(s);
        let p = n.init_params(3).unwrap();
        let c = n.config();
        let mut g = Graph::new();
        let b = p.bind(&mut g, |_| false);
        let (h, w) = c.map_size;
        let maps = g.constant(Tensor::zeros([c.map_channels(), h, w]));
        let out = n.encode_map(&mut g, &b, maps).unwrap();
        assert!(g.value(out).data().iter().all(|&v| v == 0.0), "{s}");
    }
}

fn encode(n: &Network, p: &ModelParams, maps: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let b = p.bind(&mut g, |_| false);
    let m = g.constant(maps.clone());
    let out = n.encode_map(&mut g, &b, m).unwrap();
    g.value(out).clone()
}

#[test]
fn strategies_encode_differently() {
    let mut r = rng(7);
    let cfg = tiny(MapStrategy::Sequential);
    let sample = random_sample(&cfg, &mut r, 0);
    let outs: Vec<Tensor> = MapStrategy::ALL
        .iter()
        .map(|&s| {
            let n = net(s);
            let p = random_params(&n.param_specs(), &mut rng(70), 0.5);
            encode(&n, &p, &sample.map_stack)
        })
        .collect();
    for i in 0..3 {
        for j in i + 1..3 {
            assert_eq!(outs[i].shape(), outs[j].shape());
            assert!(outs[i].max_abs_diff(&outs[j]).unwrap() > 1e-6, "{i} vs {j}");
        }
    }
}

/// Atrous wiring with unit rates is four plain 3x3 "same" convolutions, the
/// last at stride 8.
#[test]
fn unit_rate_atrous_matches_hand_wired_stack() {
    let mut cfg = tiny(MapStrategy::Atrous);
    cfg.atrous_rates = [1, 1, 1];
    let n = Network::new(cfg.clone()).unwrap();
    let mut r = rng(8);
    let (c1, c2) = cfg.conv_filters;
    let relu = |t: Tensor| t.map(|v| v.max(0.0));
    for _ in 0..5 {
        // Integer values keep every sum exact whatever the accumulation order.
        let mut p = ModelParams::new();
        for s in n.param_specs() {
            p.insert(s.name.clone(), Tensor::from_fn(s.shape.clone(), |_| f64::from(r.gen_range(-2i32..=2))));
        }
        let (h, w) = cfg.map_size;
        let x = Tensor::from_fn([cfg.map_channels(), h, w], |_| f64::from(r.gen_range(0i32..=3)));
        let layer = |x: &Tensor, name: &str, stride: usize| {
            let k = p.get(&format!("{name}.weight")).unwrap();
            let b = p.get(&format!("{name}.bias")).unwrap();
            relu(naive_conv(x, k, b.data(), stride, 1, Padding::uniform(1)))
        };
        let y = layer(&x, "map.atrous1", 1);
        let y = layer(&y, "map.atrous2", 1);
        let y = layer(&y, "map.atrous3", 1);
        let reference = layer(&y, "map.tail", 8);
        assert_eq!(reference.shape(), &[c2, 1, 1]);
        assert_eq!(encode(&n, &p, &x), reference);

        // The same stack built from graph primitives agrees bit for bit on real data too.
        let p = random_params(&n.param_specs(), &mut r, 0.5);
        let x = random(&mut r, &[cfg.map_channels(), h, w]);
        let mut g = Graph::new();
        let b = p.bind(&mut g, |_| false);
        let mut v = g.constant(x.clone());
        for (name, co, stride) in [("map.atrous1", c1, 1), ("map.atrous2", c1, 1), ("map.atrous3", c2, 1), ("map.tail", c2, 8)] {
            let spec = ConvSpec::new(co, 3, stride).padded(Padding::uniform(1));
            let k = b.get(&format!("{name}.weight")).unwrap();
            let bias = b.get(&format!("{name}.bias")).unwrap();
            let y = g.conv2d(v, k, Some(bias), &spec).unwrap();
            v = g.relu(y).unwrap();
        }
        assert_eq!(&encode(&n, &p, &x), g.value(v));
    }
}

#[test]
fn identity_activation_makes_scene_encoder_affine() {
    let n = net(MapStrategy::Atrous).with_activation(Activation::Identity);
    let mut r = rng(9);
    let specs = n.param_specs();
    let mut p = random_params(&specs, &mut r, 0.5);
    for s in specs.iter().filter(|s| s.name.ends_with(".bias")) {
        p.insert(s.name.clone(), Tensor::zeros(s.shape.clone()));
    }
    let c = n.config();
    let shape = [c.scene_channels(), c.scene_size.0, c.scene_size.1];
    let enc = |x: &Tensor| {
        let mut g = Graph::new();
        let b = p.bind(&mut g, |_| false);
        let v = g.constant(x.clone());
        let out = n.encode_scene(&mut g, &b, v).unwrap();
        g.value(out).clone()
    };
    let (x, y) = (random(&mut r, &shape), random(&mut r, &shape));
    let (a, bb) = (1.7, -0.4);
    let mix = Tensor::from_fn(shape, |i| a * x.data()[i] + bb * y.data()[i]);
    let (ex, ey, em) = (enc(&x), enc(&y), enc(&mix));
    for i in 0..em.numel() {
        assert!((em.data()[i] - (a * ex.data()[i] + bb * ey.data()[i])).abs() <= 1e-10);
    }
}

#[test]
fn fusion_order_matters() {
    let n = net(MapStrategy::Atrous);
    let mut r = rng(10);
    let p = random_params(&n.param_specs(), &mut r, 0.5);
    let (fh, fw) = n.config().feature_size();
    let c2 = n.config().conv_filters.1;
    let (m, s) = (random(&mut r, &[c2, fh, fw]), random(&mut r, &[c2, fh, fw]));
    let fuse = |a: &Tensor, b: &Tensor| {
        let mut g = Graph::new();
        let bound = p.bind(&mut g, |_| false);
        let (av, bv) = (g.constant(a.clone()), g.constant(b.clone()));
        let z = n.fuse_visual(&mut g, &bound, av, bv).unwrap();
        g.value(z).clone()
    };
    assert!(fuse(&m, &s).max_abs_diff(&fuse(&s, &m)).unwrap() > 1e-6);
    let mut g = Graph::new();
    let bound = p.bind(&mut g, |_| false);
    let a = g.constant(m);
    let b = g.constant(Tensor::zeros([c2, fh + 1, fw]));
    assert!(n.fuse_visual(&mut g, &bound, a, b).is_err());
}

#[test]
fn zero_dynamics_parameters_give_zero_output() {
    let n = net(MapStrategy::Atrous);
    let mut r = rng(11);
    let p = ModelParams::zeros(&n.param_specs());
    let sample = random_sample(n.config(), &mut r, 0);
    let mut g = Graph::new();
    let b = p.bind(&mut g, |_| false);
    let f = n.forward_full(&mut g, &b, &sample).unwrap();
    assert!(g.value(f.dynamics.output).data().iter().all(|&v| v == 0.0));
}

#[test]
fn vehicle_input_only_moves_the_vehicle_half() {
    let n = net(MapStrategy::Atrous);
    let mut r = rng(12);
    let p = random_params(&n.param_specs(), &mut r, 1.0);
    let c = n.config();
    let hidden = c.lstm_hidden;
    let ped: Vec<Tensor> = (0..c.obs_len).map(|_| random(&mut r, &[c.ped_feature_dim])).collect();
    let run = |veh: &[Tensor]| {
        let mut g = Graph::new();
        let b = p.bind(&mut g, |_| false);
        let pv: Vec<_> = ped.iter().map(|t| g.constant(t.clone())).collect();
        let vv: Vec<_> = veh.iter().map(|t| g.constant(t.clone())).collect();
        let hs = n.encode_dynamics(&mut g, &b, &pv, &vv).unwrap();
        hs.iter().map(|&h| values(&g, h)).collect::<Vec<_>>()
    };
    let veh: Vec<Tensor> = (0..c.obs_len).map(|_| random(&mut r, &[c.veh_feature_dim])).collect();
    let mut moved = veh.clone();
    moved[0].data_mut()[0] += 0.5;
    let (a, b) = (run(&veh), run(&moved));
    for (ha, hb) in a.iter().zip(&b) {
        assert_eq!(ha.len(), 2 * hidden);
        assert_eq!(ha[..hidden], hb[..hidden]);
        assert!(ha[hidden..].iter().zip(&hb[hidden..]).any(|(x, y)| x != y));
    }
    let mut g = Graph::new();
    let bnd = p.bind(&mut g, |_| false);
    let pv: Vec<_> = ped.iter().map(|t| g.constant(t.clone())).collect();
    let vv: Vec<_> = veh[1..].iter().map(|t| g.constant(t.clone())).collect();
    assert!(n.encode_dynamics(&mut g, &bnd, &pv, &vv).is_err());
}

#[test]
fn ablation_equals_zeroed_inputs() {
    let mut r = rng(13);
    let full = net(MapStrategy::Multiscale);
    let p = random_params(&full.param_specs(), &mut r, 0.5);
    for name in ["scene", "map", "ped", "veh", "visual", "dynamics"] {
        let m: Modalities = name.parse().unwrap();
        let ablated = net(MapStrategy::Multiscale).with_modalities(m);
        let sample = random_sample(full.config(), &mut r, 1);
        let masked = {
            let mut s = sample.clone();
            if !m.map {
                s.map_stack = s.map_stack.map(|_| 0.0);
            }
            if !m.scene {
                s.scene_stack = s.scene_stack.map(|_| 0.0);
            }
            if !m.ped {
                s.ped_motion.iter_mut().flatten().for_each(|v| *v = 0.0);
            }
            if !m.veh {
                s.veh_motion.iter_mut().flatten().for_each(|v| *v = 0.0);
            }
            s
        };
        assert_eq!(ablated.predict(&p, &sample).unwrap(), full.predict(&p, &masked).unwrap(), "{name}");
        for spec in full.param_specs() {
            let shared = !["map.", "scene.", "fusion", "embed", "vam", "ped_lstm", "veh_lstm", "dam"]
                .iter()
                .any(|pre| spec.name.starts_with(pre));
            if shared {
                assert!(ablated.trainable(&spec.name), "{name}: {}", spec.name);
            }
        }
        assert_eq!(ablated.trainable("map.conv1.weight"), m.map);
        assert_eq!(ablated.trainable("scene.conv1.weight"), m.scene);
        assert_eq!(ablated.trainable("ped_lstm.w_ih"), m.ped);
        assert_eq!(ablated.trainable("veh_lstm.w_ih"), m.veh);
    }
}

#[test]
fn initialisation_respects_bounds_and_seed() {
    for s in MapStrategy::ALL {
        let n = net(s);
        let specs = n.param_specs();
        let p = n.init_params(4).unwrap();
        let mut reversed = specs.clone();
        reversed.reverse();
        assert_eq!(ModelParams::init(&reversed, 4).unwrap(), p);
        assert_ne!(n.init_params(5).unwrap(), p);
        for spec in &specs {
            let t = p.get(&spec.name).unwrap();
            match spec.bound() {
                Some(bound) => assert!(t.data().iter().all(|v| v.abs() <= bound), "{}", spec.name),
                None if spec.name.ends_with("lstm.bias") => {
                    let h = spec.shape[0] / 4;
                    for (i, &v) in t.data().iter().enumerate() {
                        assert_eq!(v, if (h..2 * h).contains(&i) { 1.0 } else { 0.0 });
                    }
                }
                None => assert!(t.data().iter().all(|&v| v == 0.0), "{}", spec.name),
            }
        }
    }
}

#[test]
fn regularised_scope_is_recurrent_weights_and_output() {
    let n = net(MapStrategy::Atrous);
    let scoped: Vec<String> = n.param_specs().into_iter().map(|s| s.name).filter(|s| n.regularized(s)).collect();
    assert_eq!(scoped, ["ped_lstm.w_ih", "ped_lstm.w_hh", "veh_lstm.w_ih", "veh_lstm.w_hh", "output.weight"]);
}

#[test]
fn wrong_sample_shapes_are_rejected() {
    let n = net(MapStrategy::Atrous);
    let p = n.init_params(0).unwrap();
    let mut r = rng(14);
    let good = random_sample(n.config(), &mut r, 0);
    let mut s = good.clone();
    s.map_stack = Tensor::zeros([1, 8, 8]);
    assert!(n.predict(&p, &s).is_err());
    let mut s = good.clone();
    s.ped_motion.pop();
    assert!(n.predict(&p, &s).is_err());
    let mut s = good;
    s.veh_motion[2].push(0.0);
    assert!(n.predict(&p, &s).is_err());
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let mut r = rng(15);
    for s in MapStrategy::ALL {
        let n = net(s);
        let p = random_params(&n.param_specs(), &mut r, 0.5);
        let sample = random_sample(n.config(), &mut r, 1);
        let report = full_model_gradcheck(&n, &p, &sample);
        assert_eq!(report.checked, p.census());
        assert!(report.max_rel_error <= 1e-3, "{s}: {report:?}");
    }
}

#[test]
fn baseline_zero_parameters_predict_one_half() {
    let b = TrajectoryBaseline::new(2, 6).unwrap();
    let p = ModelParams::zeros(&b.param_specs());
    let sample = random_sample(&tiny(MapStrategy::Atrous), &mut rng(16), 1);
    assert_eq!(b.predict(&p, &sample).unwrap(), 0.5);
}

#[test]
fn baseline_single_unit_matches_hand_recurrence() {
    let b = TrajectoryBaseline::new(1, 1).unwrap();
    let mut r = rng(17);
    let p = random_params(&b.param_specs(), &mut r, 1.0);
    let sample = random_sample(&tiny(MapStrategy::Atrous), &mut r, 0);
    let (mut h, mut c) = (vec![0.0], vec![0.0]);
    for step in &sample.ped_motion {
        (h, c) = lstm_step(
            &step[..1],
            &h,
            &c,
            p.get("tf_lstm.w_ih").unwrap(),
            p.get("tf_lstm.w_hh").unwrap(),
            p.get("tf_lstm.bias").unwrap().data(),
        );
    }
    let w = p.get("tf_output.weight").unwrap().data()[0];
    let bias = p.get("tf_output.bias").unwrap().data()[0];
    let expected = sig(w * h[0] + bias);
    assert!((b.predict(&p, &sample).unwrap() - expected).abs() <= 1e-14);
    assert!(TrajectoryBaseline::new(0, 3).is_err());
}
