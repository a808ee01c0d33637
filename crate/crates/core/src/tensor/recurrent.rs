//! LSTM cells assembled from primitive graph operations.

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::scalar::Float;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Hidden and cell state, each `[B, H]`.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// Output of a bidirectional stack.
#[derive(Debug, Clone, Copy)]
pub struct BiLstmOutput {
    /// `[B, T, 2H]`, forward half first.
    pub sequence: Var,
    /// Last forward step of the top layer, `[B, H]`.
    pub final_forward: Var,
    /// Last reverse step (time 0) of the top layer, `[B, H]`.
    pub final_backward: Var,
}

impl<T: Float> Graph<T> {
    fn lstm_gates(&mut self, gates: Var, state: LstmState, hidden: usize) -> Result<LstmState> {
        let i = self.slice_last(gates, 0, hidden)?;
        let f = self.slice_last(gates, hidden, hidden)?;
        let g = self.slice_last(gates, 2 * hidden, hidden)?;
        let o = self.slice_last(gates, 3 * hidden, hidden)?;
        let i = self.sigmoid(i)?;
        let f = self.sigmoid(f)?;
        let g = self.tanh(g)?;
        let o = self.sigmoid(o)?;
        let keep = self.mul(f, state.c)?;
        let write = self.mul(i, g)?;
        let c = self.add(keep, write)?;
        let tc = self.tanh(c)?;
        let h = self.mul(o, tc)?;
        Ok(LstmState { h, c })
    }

    fn hidden_size(store: &ParamStore<T>, prefix: &str) -> Result<usize> {
        let name = format!("{prefix}.w_hh");
        let w = store
            .param(&name)
            .ok_or_else(|| Error::Usage(format!("unknown parameter {name:?}")))?;
        Ok(w.dim(1))
    }

    /// One step: `[i f g o] = x W_ih^T + h W_hh^T + b`, then
    /// `C = f*C_prev + i*g` and `h = o*tanh(C)`.
    pub fn lstm_step(&mut self, store: &ParamStore<T>, prefix: &str, x: Var, state: LstmState) -> Result<LstmState> {
        let hidden = Self::hidden_size(store, prefix)?;
        let w_ih = self.param(store, &format!("{prefix}.w_ih"))?;
        let w_hh = self.param(store, &format!("{prefix}.w_hh"))?;
        let b = self.param(store, &format!("{prefix}.bias"))?;
        let xi = self.linear(x, w_ih, Some(b))?;
        let hh = self.linear(state.h, w_hh, None)?;
        let gates = self.add(xi, hh)?;
        self.lstm_gates(gates, state, hidden)
    }

    /// Runs one direction over `[B, T, D]` from zero state. Returns the
    /// per-step hidden states in original time order and the final state.
    pub fn lstm_sequence(
        &mut self,
        store: &ParamStore<T>,
        prefix: &str,
        seq: Var,
        reverse: bool,
    ) -> Result<(Vec<Var>, LstmState)> {
        self.check(seq)?;
        let &[b, steps, d] = self.shape(seq) else {
            return Err(Error::Shape(format!("lstm needs [B,T,D], got {:?}", self.shape(seq))));
        };
        if steps == 0 {
            return Err(Error::Shape("lstm over an empty sequence".into()));
        }
        let hidden = Self::hidden_size(store, prefix)?;
        let w_ih = self.param(store, &format!("{prefix}.w_ih"))?;
        let w_hh = self.param(store, &format!("{prefix}.w_hh"))?;
        let bias = self.param(store, &format!("{prefix}.bias"))?;

        // Input projections of every step in one product.
        let flat = self.reshape(seq, &[b * steps, d])?;
        let proj = self.linear(flat, w_ih, Some(bias))?;
        let proj = self.reshape(proj, &[b, steps, 4 * hidden])?;

        let zeros = Tensor::zeros(&[b, hidden]);
        let mut state = LstmState {
            h: self.constant(zeros.clone()),
            c: self.constant(zeros),
        };
        let mut outputs = vec![None; steps];
        let order: Vec<usize> = if reverse { (0..steps).rev().collect() } else { (0..steps).collect() };
        for t in order {
            let xt = self.select_time(proj, t)?;
            let hh = self.linear(state.h, w_hh, None)?;
            let gates = self.add(xt, hh)?;
            state = self.lstm_gates(gates, state, hidden)?;
            outputs[t] = Some(state.h);
        }
        Ok((outputs.into_iter().map(Option::unwrap).collect(), state))
    }

    /// Stacked bidirectional LSTM. Layer `l` reads `{prefix}.l{l}.fwd` and
    /// `{prefix}.l{l}.bwd`; dropout applies between layers in train mode.
    pub fn bilstm(&mut self, store: &ParamStore<T>, prefix: &str, seq: Var, layers: usize, dropout: f64) -> Result<BiLstmOutput> {
        if layers == 0 {
            return Err(Error::Config("bilstm needs at least one layer".into()));
        }
        let mut input = seq;
        let mut finals = None;
        for l in 0..layers {
            if l > 0 {
                input = self.dropout(input, dropout)?;
            }
            let (fwd, fs) = self.lstm_sequence(store, &format!("{prefix}.l{l}.fwd"), input, false)?;
            let (bwd, bs) = self.lstm_sequence(store, &format!("{prefix}.l{l}.bwd"), input, true)?;
            let steps: Vec<Var> = fwd
                .iter()
                .zip(&bwd)
                .map(|(&f, &b)| self.concat_last(&[f, b]))
                .collect::<Result<_>>()?;
            input = self.stack_time(&steps)?;
            finals = Some((fs.h, bs.h));
        }
        let (final_forward, final_backward) = finals.unwrap();
        Ok(BiLstmOutput {
            sequence: input,
            final_forward,
            final_backward,
        })
    }
}

impl<T: Float> ParamStore<T> {
    /// Parameters for [`Graph::bilstm`].
    pub fn add_bilstm(
        &mut self,
        rng: &mut impl rand::Rng,
        prefix: &str,
        inputs: usize,
        hidden: usize,
        layers: usize,
    ) -> Result<()> {
        for l in 0..layers {
            let d = if l == 0 { inputs } else { 2 * hidden };
            self.add_lstm(rng, &format!("{prefix}.l{l}.fwd"), d, hidden)?;
            self.add_lstm(rng, &format!("{prefix}.l{l}.bwd"), d, hidden)?;
        }
        Ok(())
    }
}
