//! LSTM recurrence composed from primitive graph operations.
//!
//! Gate rows are stacked in the order input, forget, candidate, output:
//! `w_ih` is `[4H, D]`, `w_hh` is `[4H, H]` and `bias` is `[4H]`.

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};

#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
}

impl LstmWeights {
    pub fn hidden(&self, g: &Graph) -> usize {
        g.shape(self.w_hh)[1]
    }
}

impl Graph {
    /// One step: returns `(h, c)`.
    pub fn lstm_cell(&mut self, x: Var, h: Var, c: Var, w: &LstmWeights) -> Result<(Var, Var)> {
        let hidden = w.hidden(self);
        let zx = self.dense(x, w.w_ih, Some(w.bias))?;
        let zh = self.dense(h, w.w_hh, None)?;
        let z = self.add(zx, zh)?;
        let zi = self.slice(z, 0, 0, hidden)?;
        let zf = self.slice(z, 0, hidden, hidden)?;
        let zg = self.slice(z, 0, 2 * hidden, hidden)?;
        let zo = self.slice(z, 0, 3 * hidden, hidden)?;
        let i = self.sigmoid(zi)?;
        let f = self.sigmoid(zf)?;
        let cand = self.tanh(zg)?;
        let o = self.sigmoid(zo)?;
        let keep = self.mul(f, c)?;
        let write = self.mul(i, cand)?;
        let c_next = self.add(keep, write)?;
        let squashed = self.tanh(c_next)?;
        let h_next = self.mul(o, squashed)?;
        Ok((h_next, c_next))
    }

    /// Runs the recurrence over `inputs` and returns every hidden state `h^1..h^t`.
    pub fn lstm_sequence(&mut self, inputs: &[Var], w: &LstmWeights, h0: Var, c0: Var) -> Result<Vec<Var>> {
        const OP: &str = "lstm_sequence";
        let Some(&first) = inputs.first() else {
            return Err(TensorError::Empty { op: OP });
        };
        let hidden = w.hidden(self);
        let dim = self.shape(first).to_vec();
        let gates = self.shape(w.w_ih).to_vec();
        if gates.len() != 2 || gates[0] != 4 * hidden {
            return Err(TensorError::ShapeMismatch {
                op: OP,
                left: vec![4 * hidden, dim[0]],
                right: gates,
            });
        }
        for &x in inputs {
            if self.shape(x) != dim.as_slice() {
                return Err(TensorError::ShapeMismatch {
                    op: OP,
                    left: dim.clone(),
                    right: self.shape(x).to_vec(),
                });
            }
        }
        for state in [h0, c0] {
            if self.shape(state) != [hidden] {
                return Err(TensorError::ShapeMismatch {
                    op: OP,
                    left: vec![hidden],
                    right: self.shape(state).to_vec(),
                });
            }
        }
        let (mut h, mut c) = (h0, c0);
        let mut states = Vec::with_capacity(inputs.len());
        for &x in inputs {
            (h, c) = self.lstm_cell(x, h, c, w)?;
            states.push(h);
        }
        Ok(states)
    }
}
