use pcp_tensor::{Graph, LstmWeights, Tensor, Var};

use super::params::{dense_specs, lstm_specs};
use super::{Bound, Classifier, ParamSpec};
use crate::data::ObservationSample;
use crate::error::{Error, Result};

/// Trajectory-only reference: one LSTM over pedestrian coordinates, then a
/// dense layer on the final hidden state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrajectoryBaseline {
    /// Leading entries of each pedestrian motion step taken as coordinates.
    pub coord_dim: usize,
    pub hidden: usize,
}

impl TrajectoryBaseline {
    pub fn new(coord_dim: usize, hidden: usize) -> Result<Self> {
        if coord_dim == 0 || hidden == 0 {
            return Err(Error::Config("baseline dimensions must be positive".into()));
        }
        Ok(Self { coord_dim, hidden })
    }

    /// Probability from explicit coordinate steps.
    pub fn forward_coords(&self, g: &mut Graph, p: &Bound, coords: &[Var]) -> Result<Var> {
        let w = LstmWeights {
            w_ih: p.get("tf_lstm.w_ih")?,
            w_hh: p.get("tf_lstm.w_hh")?,
            bias: p.get("tf_lstm.bias")?,
        };
        let h0 = g.constant(Tensor::zeros([self.hidden]));
        let c0 = g.constant(Tensor::zeros([self.hidden]));
        let hs = g.lstm_sequence(coords, &w, h0, c0)?;
        let last = *hs.last().expect("nonempty sequence");
        let logit = g.dense(last, p.get("tf_output.weight")?, Some(p.get("tf_output.bias")?))?;
        Ok(g.sigmoid(logit)?)
    }
}

impl Classifier for TrajectoryBaseline {
    fn param_specs(&self) -> Vec<ParamSpec> {
        let mut v = Vec::new();
        v.extend(lstm_specs("tf_lstm", self.coord_dim, self.hidden));
        v.extend(dense_specs("tf_output", self.hidden, 1));
        v
    }

    fn forward(&self, g: &mut Graph, params: &Bound, sample: &ObservationSample) -> Result<Var> {
        let coords = sample
            .ped_motion
            .iter()
            .map(|step| {
                let c = step.get(..self.coord_dim).ok_or_else(|| {
                    Error::Data(format!(
                        "pedestrian step of length {} has fewer than {} coordinates",
                        step.len(),
                        self.coord_dim
                    ))
                })?;
                Ok(g.constant(Tensor::vector(c.to_vec())))
            })
            .collect::<Result<Vec<_>>>()?;
        self.forward_coords(g, params, &coords)
    }

    fn regularized(&self, name: &str) -> bool {
        matches!(name, "tf_lstm.w_ih" | "tf_lstm.w_hh" | "tf_output.weight")
    }
}
