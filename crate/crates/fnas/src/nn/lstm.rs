//! Single LSTM cell with the standard input/forget/output gating.
//!
//! Gate pre-activations are stacked as [input, forget, candidate, output] in
//! one 4H vector so the cell is two matvecs plus a bias add per step.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::kernels;
use crate::nn::params::{LayoutBuilder, Params};
use crate::nn::tape::{ParamLeaves, Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden_units: usize) -> Self {
        LstmState {
            hidden: vec![0.0; hidden_units],
            cell: vec![0.0; hidden_units],
        }
    }

    fn check(&self, hidden_units: usize) -> Result<()> {
        if self.hidden.len() != hidden_units || self.cell.len() != hidden_units {
            return Err(Error::Dimension {
                segment: "lstm.state".to_string(),
                expected: hidden_units,
                got: self.hidden.len(),
            });
        }
        if self.hidden.iter().chain(&self.cell).any(|v| !v.is_finite()) {
            return Err(Error::Numeric { context: "lstm.state".to_string() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmSpec {
    pub input: usize,
    pub hidden: usize,
}

impl LstmSpec {
    pub fn extend_layout(&self, b: LayoutBuilder, prefix: &str) -> LayoutBuilder {
        b.matrix(&format!("{prefix}w_x"), 4 * self.hidden, self.input)
            .matrix(&format!("{prefix}w_h"), 4 * self.hidden, self.hidden)
            .vector(&format!("{prefix}b"), 4 * self.hidden)
    }

    pub fn init_segments<R: Rng>(&self, params: &mut Params, prefix: &str, rng: &mut R) {
        let bound = (1.0 / self.hidden as f64).sqrt();
        for name in ["w_x", "w_h"] {
            for w in params.segment_mut(&format!("{prefix}{name}")).unwrap() {
                *w = rng.gen_range(-bound..bound);
            }
        }
    }

    /// One cell step; returns (output, next state). The output is the new
    /// hidden vector.
    pub fn step(
        &self,
        params: &Params,
        prefix: &str,
        input: &[f64],
        state: &LstmState,
    ) -> Result<(Vec<f64>, LstmState)> {
        let h = self.hidden;
        state.check(h)?;
        if input.len() != self.input {
            return Err(Error::Dimension {
                segment: format!("{prefix}input"),
                expected: self.input,
                got: input.len(),
            });
        }
        let w_x = params.segment(&format!("{prefix}w_x"))?;
        let w_h = params.segment(&format!("{prefix}w_h"))?;
        let b = params.segment(&format!("{prefix}b"))?;

        let mut from_x = vec![0.0; 4 * h];
        let mut from_h = vec![0.0; 4 * h];
        kernels::matvec_into(w_x, input, 4 * h, self.input, &mut from_x);
        kernels::matvec_into(w_h, &state.hidden, 4 * h, h, &mut from_h);
        let gates: Vec<f64> = (0..4 * h).map(|k| (from_x[k] + from_h[k]) + b[k]).collect();

        let mut next = LstmState::zeros(h);
        for k in 0..h {
            let i = kernels::sigmoid(gates[k]);
            let f = kernels::sigmoid(gates[h + k]);
            let g = gates[2 * h + k].tanh();
            let o = kernels::sigmoid(gates[3 * h + k]);
            let c2 = f * state.cell[k] + i * g;
            next.cell[k] = c2;
            next.hidden[k] = o * c2.tanh();
        }
        Ok((next.hidden.clone(), next))
    }

    /// Same step on the tape. `h` and `c` are the incoming state nodes;
    /// returns (hidden, cell) nodes.
    pub fn graph_step(
        &self,
        tape: &mut Tape,
        leaves: &ParamLeaves,
        prefix: &str,
        input: Var,
        h: Var,
        c: Var,
    ) -> (Var, Var) {
        let n = self.hidden;
        let w_x = leaves.get(&format!("{prefix}w_x"));
        let w_h = leaves.get(&format!("{prefix}w_h"));
        let b = leaves.get(&format!("{prefix}b"));

        let from_x = tape.matvec(w_x, input, 4 * n, self.input);
        let from_h = tape.matvec(w_h, h, 4 * n, n);
        let summed = tape.add(from_x, from_h);
        let gates = tape.add(summed, b);

        let i_pre = tape.slice(gates, 0, n);
        let f_pre = tape.slice(gates, n, n);
        let g_pre = tape.slice(gates, 2 * n, n);
        let o_pre = tape.slice(gates, 3 * n, n);
        let i = tape.sigmoid(i_pre);
        let f = tape.sigmoid(f_pre);
        let g = tape.tanh(g_pre);
        let o = tape.sigmoid(o_pre);

        let fc = tape.mul(f, c);
        let ig = tape.mul(i, g);
        let c2 = tape.add(fc, ig);
        let tc = tape.tanh(c2);
        let h2 = tape.mul(o, tc);
        (h2, c2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Layout;
    use crate::rng;

    fn zero_lstm(input: usize, hidden: usize) -> (LstmSpec, Params) {
        let spec = LstmSpec { input, hidden };
        let layout = spec.extend_layout(Layout::builder(), "lstm.").build();
        (spec, Params::zeros(layout))
    }

    #[test]
    fn zero_params_zero_cell_give_zero_hidden() {
        // All gate pre-activations are 0: sigmoid -> 0.5, tanh candidate -> 0,
        // so the new cell is 0.5*0 + 0.5*0 = 0 and the hidden is 0.
        let (spec, params) = zero_lstm(3, 4);
        let (out, state) = spec
            .step(&params, "lstm.", &[1.0, -2.0, 0.5], &LstmState::zeros(4))
            .unwrap();
        assert_eq!(out, vec![0.0; 4]);
        assert_eq!(state.cell, vec![0.0; 4]);
    }

    #[test]
    fn zero_params_halve_the_cell() {
        // forget gate sigmoid(0) = 0.5 and the input term is zero.
        let (spec, params) = zero_lstm(2, 3);
        let state = LstmState { hidden: vec![0.0; 3], cell: vec![2.0, -4.0, 1.0] };
        let (_, next) = spec.step(&params, "lstm.", &[0.0, 0.0], &state).unwrap();
        assert_eq!(next.cell, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn state_is_threaded_between_steps() {
        let spec = LstmSpec { input: 2, hidden: 5 };
        let layout = spec.extend_layout(Layout::builder(), "lstm.").build();
        let mut params = Params::zeros(layout);
        let mut r = rng::derive(9, &[rng::stream::POLICY_INIT]);
        spec.init_segments(&mut params, "lstm.", &mut r);
        // A nonzero bias makes the first step produce nonzero state for the
        // recurrent weights to act on.
        use rand::Rng;
        for b in params.segment_mut("lstm.b").unwrap() {
            *b = r.gen_range(-0.5..0.5);
        }

        let s0 = LstmState::zeros(5);
        let (out1, s1) = spec.step(&params, "lstm.", &[0.0, 0.0], &s0).unwrap();
        let (out2, _) = spec.step(&params, "lstm.", &[0.0, 0.0], &s1).unwrap();
        assert_ne!(out1, out2, "recurrent weights must feed the next step");
    }

    #[test]
    fn non_finite_state_is_rejected() {
        let (spec, params) = zero_lstm(2, 2);
        let state = LstmState { hidden: vec![f64::NAN, 0.0], cell: vec![0.0, 0.0] };
        assert!(matches!(
            spec.step(&params, "lstm.", &[0.0, 0.0], &state),
            Err(Error::Numeric { .. })
        ));
    }

    #[test]
    fn tape_step_matches_plain_step_bitwise() {
        let spec = LstmSpec { input: 3, hidden: 6 };
        let layout = spec.extend_layout(Layout::builder(), "lstm.").build();
        let mut params = Params::zeros(layout);
        let mut r = rng::derive(4, &[rng::stream::POLICY_INIT]);
        spec.init_segments(&mut params, "lstm.", &mut r);
        use rand::Rng;
        let input: Vec<f64> = (0..3).map(|_| r.gen_range(-1.0..1.0)).collect();
        let state = LstmState {
            hidden: (0..6).map(|_| r.gen_range(-1.0..1.0)).collect(),
            cell: (0..6).map(|_| r.gen_range(-1.0..1.0)).collect(),
        };

        let (out, next) = spec.step(&params, "lstm.", &input, &state).unwrap();

        let (mut tape, leaves) = crate::nn::tape::tape_over(&params);
        let x = tape.constant(&input);
        let h = tape.constant(&state.hidden);
        let c = tape.constant(&state.cell);
        let (h2, c2) = spec.graph_step(&mut tape, &leaves, "lstm.", x, h, c);
        assert_eq!(tape.value(h2), out.as_slice());
        assert_eq!(tape.value(c2), next.cell.as_slice());
    }
}
