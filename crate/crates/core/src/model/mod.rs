//! The multi-modal crossing network and the trajectory-only baseline.
//!
//! Every graph-building function reads its weights from a [`Bound`] set,
//! so the same code serves inference, training and gradient checks.

mod baseline;
mod params;

use std::fmt;
use std::str::FromStr;

use pcp_tensor::{ConvSpec, Graph, LstmWeights, Tensor, Var};

pub use baseline::TrajectoryBaseline;
pub use params::{Bound, ModelParams, ParamKind, ParamSpec};

use crate::config::{MapStrategy, ModelConfig};
use crate::data::ObservationSample;
use crate::error::{Error, Result};
use params::{conv_specs, dense_specs, lstm_specs};

/// Anything trainable by [`crate::training`]: a named parameter set and a
/// graph mapping one sample to a crossing probability.
pub trait Classifier {
    fn param_specs(&self) -> Vec<ParamSpec>;

    /// Builds the forward graph and returns the probability as a `[1]` node.
    fn forward(&self, g: &mut Graph, params: &Bound, sample: &ObservationSample) -> Result<Var>;

    /// Whether a parameter receives updates.
    fn trainable(&self, _name: &str) -> bool {
        true
    }

    /// Parameters subject to the L2 penalty.
    fn regularized(&self, name: &str) -> bool;

    fn init_params(&self, seed: u64) -> Result<ModelParams> {
        ModelParams::init(&self.param_specs(), seed)
    }

    fn predict(&self, params: &ModelParams, sample: &ObservationSample) -> Result<f64> {
        let mut g = Graph::new();
        let bound = params.bind(&mut g, |_| false);
        let p = self.forward(&mut g, &bound, sample)?;
        Ok(g.value(p).data()[0])
    }
}

/// Input branches kept by an ablation; the others are zero-masked and frozen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Modalities {
    pub map: bool,
    pub scene: bool,
    pub ped: bool,
    pub veh: bool,
}

impl Modalities {
    pub const ALL: Self = Self {
        map: true,
        scene: true,
        ped: true,
        veh: true,
    };
    pub const NONE: Self = Self {
        map: false,
        scene: false,
        ped: false,
        veh: false,
    };

    /// The subsets compared by a standard ablation study, weakest first.
    pub const STUDY: [Self; 5] = [
        Self { scene: true, ..Self::NONE },
        Self { map: true, scene: true, ..Self::NONE },
        Self { ped: true, ..Self::NONE },
        Self { ped: true, veh: true, ..Self::NONE },
        Self::ALL,
    ];

    pub fn visual(self) -> bool {
        self.map || self.scene
    }

    pub fn dynamics(self) -> bool {
        self.ped || self.veh
    }

    /// Whether a parameter of [`Network`] belongs to a kept branch.
    ///
    /// Shared stages train when any branch feeding them is kept.
    pub fn keeps(self, name: &str) -> bool {
        let prefix = name.split('.').next().unwrap_or(name);
        match prefix {
            "map" => self.map,
            "scene" => self.scene,
            "fusion" | "embed" | "vam" => self.visual(),
            "ped_lstm" => self.ped,
            "veh_lstm" => self.veh,
            "dam" => self.dynamics(),
            _ => true,
        }
    }
}

impl Default for Modalities {
    fn default() -> Self {
        Self::ALL
    }
}

impl fmt::Display for Modalities {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == Self::ALL {
            return f.write_str("all");
        }
        let names: Vec<&str> = [(self.map, "map"), (self.scene, "scene"), (self.ped, "ped"), (self.veh, "veh")]
            .into_iter()
            .filter_map(|(on, n)| on.then_some(n))
            .collect();
        f.write_str(&names.join("+"))
    }
}

impl FromStr for Modalities {
    type Err = Error;

    /// `all`, `dynamics`, `visual`, or `+`-joined branch names such as `map+scene`.
    fn from_str(s: &str) -> Result<Self> {
        let mut m = Self::NONE;
        for token in s.split('+').map(str::trim) {
            match token {
                "all" => m = Self::ALL,
                "map" => m.map = true,
                "scene" => m.scene = true,
                "ped" => m.ped = true,
                "veh" => m.veh = true,
                "visual" => (m.map, m.scene) = (true, true),
                "dynamics" => (m.ped, m.veh) = (true, true),
                other => return Err(Error::Config(format!("unknown modality `{other}` in `{s}`"))),
            }
        }
        if m == Self::NONE {
            return Err(Error::Config("empty modality set".into()));
        }
        Ok(m)
    }
}

/// Activation after hidden conv and dense layers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Activation {
    #[default]
    Relu,
    /// Linear probe of the encoders; not used for training.
    Identity,
}

/// An attention stage's output together with its weights.
#[derive(Clone, Copy, Debug)]
pub struct Attended {
    pub output: Var,
    pub weights: Var,
}

/// Nodes of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub probability: Var,
    pub logit: Var,
    pub visual: Attended,
    pub dynamics: Attended,
}

/// The full crossing network for one configuration and branch mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    config: ModelConfig,
    modalities: Modalities,
    activation: Activation,
}

impl Network {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            modalities: Modalities::ALL,
            activation: Activation::Relu,
        })
    }

    pub fn with_modalities(mut self, modalities: Modalities) -> Self {
        self.modalities = modalities;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn modalities(&self) -> Modalities {
        self.modalities
    }

    fn map_specs(&self) -> Vec<ParamSpec> {
        let c = &self.config;
        let (c1, c2) = c.conv_filters;
        let cin = c.map_channels();
        let mut v = Vec::new();
        match c.map_strategy {
            MapStrategy::Sequential => {
                v.extend(conv_specs("map.conv1", cin, c1, 5));
                v.extend(conv_specs("map.conv2", c1, c2, 3));
                v.extend(conv_specs("map.conv3", c2, c2, 3));
            }
            MapStrategy::Atrous => {
                v.extend(conv_specs("map.atrous1", cin, c1, 3));
                v.extend(conv_specs("map.atrous2", c1, c1, 3));
                v.extend(conv_specs("map.atrous3", c1, c2, 3));
                v.extend(conv_specs("map.tail", c2, c2, 3));
            }
            MapStrategy::Multiscale => {
                v.extend(conv_specs("map.conv1", cin, c1, 5));
                v.extend(conv_specs("map.conv2", c1, c2, 3));
                v.extend(conv_specs("map.conv3", c2, c2, 3));
                v.push(ParamSpec::weight("map.deconv.weight", vec![c2, c2, 4, 4], c2 * 16, c2 * 16));
                v.push(ParamSpec::bias("map.deconv.bias", c2));
                v.extend(conv_specs("map.joint", c1 + c2, c2, 3));
            }
        }
        v
    }

    fn conv(&self, g: &mut Graph, p: &Bound, name: &str, x: Var, spec: ConvSpec) -> Result<Var> {
        let spec = spec.same()?;
        let w = p.get(&format!("{name}.weight"))?;
        let b = p.get(&format!("{name}.bias"))?;
        let y = g.conv2d(x, w, Some(b), &spec)?;
        self.activate(g, y)
    }

    fn activate(&self, g: &mut Graph, x: Var) -> Result<Var> {
        Ok(match self.activation {
            Activation::Relu => g.relu(x)?,
            Activation::Identity => x,
        })
    }

    /// `[C_map * obs_len, H, W]` to `[c2, H/8, W/8]` with the configured strategy.
    pub fn encode_map(&self, g: &mut Graph, p: &Bound, maps: Var) -> Result<Var> {
        let (c1, c2) = self.config.conv_filters;
        let [r1, r2, r3] = self.config.atrous_rates;
        match self.config.map_strategy {
            MapStrategy::Sequential => {
                let x = self.conv(g, p, "map.conv1", maps, ConvSpec::new(c1, 5, 2))?;
                let x = self.conv(g, p, "map.conv2", x, ConvSpec::new(c2, 3, 2))?;
                self.conv(g, p, "map.conv3", x, ConvSpec::new(c2, 3, 2))
            }
            MapStrategy::Atrous => {
                let x = self.conv(g, p, "map.atrous1", maps, ConvSpec::new(c1, 3, 1).dilated(r1))?;
                let x = self.conv(g, p, "map.atrous2", x, ConvSpec::new(c1, 3, 1).dilated(r2))?;
                let x = self.conv(g, p, "map.atrous3", x, ConvSpec::new(c2, 3, 1).dilated(r3))?;
                self.conv(g, p, "map.tail", x, ConvSpec::new(c2, 3, 8))
            }
            MapStrategy::Multiscale => {
                let fine = self.conv(g, p, "map.conv1", maps, ConvSpec::new(c1, 5, 2))?;
                let x = self.conv(g, p, "map.conv2", fine, ConvSpec::new(c2, 3, 2))?;
                let coarse = self.conv(g, p, "map.conv3", x, ConvSpec::new(c2, 3, 2))?;
                let (w, b) = (p.get("map.deconv.weight")?, p.get("map.deconv.bias")?);
                let up = g.conv2d_transpose(coarse, w, Some(b), &ConvSpec::new(c2, 4, 4))?;
                let up = self.activate(g, up)?;
                let joint = g.concat(&[fine, up], 0)?;
                self.conv(g, p, "map.joint", joint, ConvSpec::new(c2, 3, 4))
            }
        }
    }

    /// `[3 * obs_len, H, W]` to `[c2, H/8, W/8]`.
    pub fn encode_scene(&self, g: &mut Graph, p: &Bound, scenes: Var) -> Result<Var> {
        let (c1, c2) = self.config.conv_filters;
        let x = self.conv(g, p, "scene.conv1", scenes, ConvSpec::new(c1, 5, 2))?;
        let x = self.conv(g, p, "scene.conv2", x, ConvSpec::new(c2, 3, 2))?;
        self.conv(g, p, "scene.conv3", x, ConvSpec::new(c2, 3, 2))
    }

    /// Channel concatenation (map first), fusion conv, flatten and embedding.
    pub fn fuse_visual(&self, g: &mut Graph, p: &Bound, map_feat: Var, scene_feat: Var) -> Result<Var> {
        let (ms, ss) = (g.shape(map_feat).to_vec(), g.shape(scene_feat).to_vec());
        if ms.len() != 3 || ss.len() != 3 || ms[1..] != ss[1..] {
            return Err(Error::Data(format!("cannot fuse features of shapes {ms:?} and {ss:?}")));
        }
        let cat = g.concat(&[map_feat, scene_feat], 0)?;
        let fused = self.conv(g, p, "fusion", cat, ConvSpec::new(self.config.conv_filters.1, 3, 1))?;
        let flat = g.flatten(fused)?;
        let (w, b) = (p.get("embed.weight")?, p.get("embed.bias")?);
        Ok(g.dense(flat, w, Some(b))?)
    }

    /// `α = softmax(ω z + b)`, output `α ⊙ z`.
    pub fn vam(&self, g: &mut Graph, p: &Bound, z: Var) -> Result<Attended> {
        let (w, b) = (p.get("vam.weight")?, p.get("vam.bias")?);
        let f = g.dense(z, w, Some(b))?;
        let weights = g.softmax(f)?;
        let output = g.mul(weights, z)?;
        Ok(Attended { output, weights })
    }

    fn lstm(&self, p: &Bound, name: &str) -> Result<LstmWeights> {
        Ok(LstmWeights {
            w_ih: p.get(&format!("{name}.w_ih"))?,
            w_hh: p.get(&format!("{name}.w_hh"))?,
            bias: p.get(&format!("{name}.bias"))?,
        })
    }

    /// Per-step concatenation `[h_ped ⊕ h_veh]` of the two recurrent encoders.
    pub fn encode_dynamics(&self, g: &mut Graph, p: &Bound, ped: &[Var], veh: &[Var]) -> Result<Vec<Var>> {
        if ped.len() != veh.len() {
            return Err(Error::Data(format!(
                "pedestrian sequence has {} steps but vehicle sequence has {}",
                ped.len(),
                veh.len()
            )));
        }
        let hidden = self.config.lstm_hidden;
        let run = |g: &mut Graph, name: &str, xs: &[Var]| -> Result<Vec<Var>> {
            let w = self.lstm(p, name)?;
            let h0 = g.constant(Tensor::zeros([hidden]));
            let c0 = g.constant(Tensor::zeros([hidden]));
            Ok(g.lstm_sequence(xs, &w, h0, c0)?)
        };
        let hp = run(g, "ped_lstm", ped)?;
        let hv = run(g, "veh_lstm", veh)?;
        hp.into_iter()
            .zip(hv)
            .map(|(a, b)| Ok(g.concat(&[a, b], 0)?))
            .collect()
    }

    /// Attention over the sequence queried by its last state:
    /// `s_i = h_tᵀ W_a h_i`, `c = Σ softmax(s)_i h_i`, output `tanh(W_c [c ⊕ h_t])`.
    pub fn dam(&self, g: &mut Graph, p: &Bound, hs: &[Var]) -> Result<Attended> {
        let Some(&query) = hs.last() else {
            return Err(Error::Data("attention over an empty sequence".into()));
        };
        let (wa, wc) = (p.get("dam.w_a")?, p.get("dam.w_c")?);
        let mut scores = Vec::with_capacity(hs.len());
        for &h in hs {
            let projected = g.dense(h, wa, None)?;
            let s = g.dot(query, projected)?;
            scores.push(g.reshape(s, &[1])?);
        }
        let scores = g.concat(&scores, 0)?;
        let weights = g.softmax(scores)?;
        let context = self.dam_context(g, weights, hs)?;
        let joined = g.concat(&[context, query], 0)?;
        let mixed = g.dense(joined, wc, None)?;
        let output = g.tanh(mixed)?;
        Ok(Attended { output, weights })
    }

    /// Context vector `c = Σ weights_i h_i` of [`Network::dam`].
    ///
    /// Evaluated as `h_t + Σ weights_i (h_i - h_t)`, equal because the
    /// weights sum to one, so a single or repeated state comes back exactly.
    pub fn dam_context(&self, g: &mut Graph, weights: Var, hs: &[Var]) -> Result<Var> {
        let Some(&query) = hs.last() else {
            return Err(Error::Data("attention over an empty sequence".into()));
        };
        let mut acc = query;
        for (i, &h) in hs.iter().enumerate() {
            let a = g.slice(weights, 0, i, 1)?;
            let delta = g.sub(h, query)?;
            let term = g.mul(a, delta)?;
            acc = g.add(acc, term)?;
        }
        Ok(acc)
    }

    fn check_sample(&self, s: &ObservationSample) -> Result<()> {
        let c = &self.config;
        let (h, w) = c.map_size;
        let expect = |name: &str, t: &Tensor, ch: usize| {
            if t.shape() != [ch, h, w] {
                return Err(Error::Data(format!(
                    "{name} has shape {:?}, model expects {:?}",
                    t.shape(),
                    [ch, h, w]
                )));
            }
            Ok(())
        };
        expect("map stack", &s.map_stack, c.map_channels())?;
        expect("scene stack", &s.scene_stack, c.scene_channels())?;
        for (name, seq, dim) in [
            ("pedestrian motion", &s.ped_motion, c.ped_feature_dim),
            ("vehicle motion", &s.veh_motion, c.veh_feature_dim),
        ] {
            if seq.len() != c.obs_len || seq.iter().any(|v| v.len() != dim) {
                return Err(Error::Data(format!(
                    "{name} must be {} steps of length {dim}",
                    c.obs_len
                )));
            }
        }
        Ok(())
    }

    /// Full forward pass; masked branches see all-zero inputs.
    pub fn forward_full(&self, g: &mut Graph, p: &Bound, sample: &ObservationSample) -> Result<Forward> {
        self.check_sample(sample)?;
        let m = self.modalities;
        let image = |g: &mut Graph, keep: bool, t: &Tensor| {
            g.constant(if keep { t.clone() } else { Tensor::zeros(t.shape().to_vec()) })
        };
        let maps = image(g, m.map, &sample.map_stack);
        let scenes = image(g, m.scene, &sample.scene_stack);
        let steps = |g: &mut Graph, keep: bool, seq: &[Vec<f64>]| -> Vec<Var> {
            seq.iter()
                .map(|v| {
                    let t = Tensor::vector(if keep { v.clone() } else { vec![0.0; v.len()] });
                    g.constant(t)
                })
                .collect()
        };
        let ped = steps(g, m.ped, &sample.ped_motion);
        let veh = steps(g, m.veh, &sample.veh_motion);

        let map_feat = self.encode_map(g, p, maps)?;
        let scene_feat = self.encode_scene(g, p, scenes)?;
        let z = self.fuse_visual(g, p, map_feat, scene_feat)?;
        let visual = self.vam(g, p, z)?;
        let hs = self.encode_dynamics(g, p, &ped, &veh)?;
        let dynamics = self.dam(g, p, &hs)?;

        let joined = g.concat(&[visual.output, dynamics.output], 0)?;
        let (w, b) = (p.get("penult.weight")?, p.get("penult.bias")?);
        let hidden = g.dense(joined, w, Some(b))?;
        let hidden = self.activate(g, hidden)?;
        let (w, b) = (p.get("output.weight")?, p.get("output.bias")?);
        let logit = g.dense(hidden, w, Some(b))?;
        let probability = g.sigmoid(logit)?;
        Ok(Forward {
            probability,
            logit,
            visual,
            dynamics,
        })
    }
}

impl Classifier for Network {
    fn param_specs(&self) -> Vec<ParamSpec> {
        let c = &self.config;
        let (c1, c2) = c.conv_filters;
        let (fh, fw) = c.feature_size();
        let hidden = c.lstm_hidden;
        let dyn_width = c.dynamics_width();
        let mut v = self.map_specs();
        v.extend(conv_specs("scene.conv1", c.scene_channels(), c1, 5));
        v.extend(conv_specs("scene.conv2", c1, c2, 3));
        v.extend(conv_specs("scene.conv3", c2, c2, 3));
        v.extend(conv_specs("fusion", 2 * c2, c2, 3));
        v.extend(dense_specs("embed", c2 * fh * fw, c.visual_embed));
        v.extend(dense_specs("vam", c.visual_embed, c.visual_embed));
        v.extend(lstm_specs("ped_lstm", c.ped_feature_dim, hidden));
        v.extend(lstm_specs("veh_lstm", c.veh_feature_dim, hidden));
        v.push(ParamSpec::weight("dam.w_a", vec![dyn_width, dyn_width], dyn_width, dyn_width));
        v.push(ParamSpec::weight("dam.w_c", vec![dyn_width, 2 * dyn_width], 2 * dyn_width, dyn_width));
        v.extend(dense_specs("penult", c.visual_embed + dyn_width, c.penult_dense));
        v.extend(dense_specs("output", c.penult_dense, 1));
        v
    }

    fn forward(&self, g: &mut Graph, params: &Bound, sample: &ObservationSample) -> Result<Var> {
        Ok(self.forward_full(g, params, sample)?.probability)
    }

    fn trainable(&self, name: &str) -> bool {
        self.modalities.keeps(name)
    }

    /// Both recurrent encoders and the output layer; biases excluded.
    fn regularized(&self, name: &str) -> bool {
        matches!(
            name,
            "ped_lstm.w_ih" | "ped_lstm.w_hh" | "veh_lstm.w_ih" | "veh_lstm.w_hh" | "output.weight"
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modality_names_round_trip() {
        for s in ["scene", "map+scene", "ped", "ped+veh", "all"] {
            let m: Modalities = s.parse().unwrap();
            assert_eq!(m.to_string(), s);
        }
        assert_eq!("dynamics".parse::<Modalities>().unwrap().to_string(), "ped+veh");
        assert!("sound".parse::<Modalities>().is_err());
    }

    #[test]
    fn scene_only_freezes_other_branches() {
        let m: Modalities = "scene".parse().unwrap();
        assert!(m.keeps("scene.conv1.weight"));
        assert!(m.keeps("fusion.weight"));
        assert!(m.keeps("output.bias"));
        assert!(!m.keeps("map.conv1.weight"));
        assert!(!m.keeps("ped_lstm.w_ih"));
        assert!(!m.keeps("dam.w_a"));
    }

    #[test]
    fn production_census_is_stable() {
        for strategy in MapStrategy::ALL {
            let net = Network::new(ModelConfig::production(strategy)).unwrap();
            let specs = net.param_specs();
            let mut names: Vec<_> = specs.iter().map(|s| s.name.as_str()).collect();
            names.sort_unstable();
            names.dedup();
            assert_eq!(names.len(), specs.len(), "{strategy}: duplicate names");
            let dam = specs.iter().find(|s| s.name == "dam.w_c").unwrap();
            assert_eq!(dam.shape, vec![512, 1024]);
            let penult = specs.iter().find(|s| s.name == "penult.weight").unwrap();
            assert_eq!(penult.shape, vec![256, 1024]);
        }
    }
}
