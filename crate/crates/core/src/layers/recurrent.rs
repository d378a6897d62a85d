use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellKind {
    Lstm,
    Gru,
}

impl CellKind {
    fn gates(self) -> usize {
        match self {
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
        }
    }
}

/// LSTM (gates i, f, g, o) or GRU (gates r, z, n) cell with separate
/// input-to-hidden and hidden-to-hidden weights.
#[derive(Clone, Debug)]
pub struct RecurrentCell {
    pub kind: CellKind,
    pub input_size: usize,
    pub hidden_size: usize,
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
}

/// Hidden (and, for LSTM, cell) state; both `[batch × hidden]`.
#[derive(Clone, Copy, Debug)]
pub struct CellState {
    pub h: Var,
    pub c: Option<Var>,
}

impl RecurrentCell {
    /// Uniform init with bound sqrt(1/fan_in). The retain-gate bias (LSTM
    /// forget gate, GRU update gate) starts at 1.0.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        kind: CellKind,
        input_size: usize,
        hidden_size: usize,
        rng: &mut R,
    ) -> Self {
        let g = kind.gates() * hidden_size;
        let bi = (1.0 / input_size as f64).sqrt();
        let bh = (1.0 / hidden_size as f64).sqrt();
        let w_ih = store.add_uniform(format!("{name}/w_ih"), vec![g, input_size], bi, rng);
        let w_hh = store.add_uniform(format!("{name}/w_hh"), vec![g, hidden_size], bh, rng);
        let b_ih = store.add_uniform(format!("{name}/b_ih"), vec![g], bh, rng);
        let b_hh = store.add_uniform(format!("{name}/b_hh"), vec![g], bh, rng);
        // second gate slot: LSTM forget gate, GRU update gate
        let retain = hidden_size..2 * hidden_size;
        store.get_mut(b_ih).data_mut()[retain.clone()].fill(1.0);
        store.get_mut(b_hh).data_mut()[retain].fill(0.0);
        RecurrentCell {
            kind,
            input_size,
            hidden_size,
            w_ih,
            w_hh,
            b_ih,
            b_hh,
        }
    }

    pub fn zero_state(&self, tape: &mut Tape, batch: usize) -> CellState {
        let h = tape.constant(Tensor::zeros(vec![batch, self.hidden_size]));
        let c = (self.kind == CellKind::Lstm).then(|| tape.constant(Tensor::zeros(vec![batch, self.hidden_size])));
        CellState { h, c }
    }

    pub fn step(&self, tape: &mut Tape, store: &ParamStore, x: Var, state: CellState) -> Result<CellState> {
        let s = tape.shape(x);
        if s.len() != 2 || s[1] != self.input_size {
            return Err(Error::shape(
                "recurrent step",
                format!("expected [batch, {}], got {s:?}", self.input_size),
            ));
        }
        let hs = self.hidden_size;
        let (w_ih, w_hh) = (tape.param(store, self.w_ih), tape.param(store, self.w_hh));
        let (b_ih, b_hh) = (tape.param(store, self.b_ih), tape.param(store, self.b_hh));
        let gi = tape.linear(x, w_ih, b_ih)?;
        let gh = tape.linear(state.h, w_hh, b_hh)?;
        match self.kind {
            CellKind::Lstm => {
                let gates = tape.add(gi, gh)?;
                let i = tape.slice(gates, 1, 0, hs)?;
                let f = tape.slice(gates, 1, hs, hs)?;
                let g = tape.slice(gates, 1, 2 * hs, hs)?;
                let o = tape.slice(gates, 1, 3 * hs, hs)?;
                let i = tape.sigmoid(i)?;
                let f = tape.sigmoid(f)?;
                let g = tape.tanh(g)?;
                let o = tape.sigmoid(o)?;
                let c_prev = state.c.expect("lstm state carries a cell vector");
                let keep = tape.mul(f, c_prev)?;
                let write = tape.mul(i, g)?;
                let c = tape.add(keep, write)?;
                let tc = tape.tanh(c)?;
                let h = tape.mul(o, tc)?;
                Ok(CellState { h, c: Some(c) })
            }
            CellKind::Gru => {
                let ir = tape.slice(gi, 1, 0, hs)?;
                let iz = tape.slice(gi, 1, hs, hs)?;
                let inn = tape.slice(gi, 1, 2 * hs, hs)?;
                let hr = tape.slice(gh, 1, 0, hs)?;
                let hz = tape.slice(gh, 1, hs, hs)?;
                let hn = tape.slice(gh, 1, 2 * hs, hs)?;
                let r = tape.add(ir, hr)?;
                let r = tape.sigmoid(r)?;
                let z = tape.add(iz, hz)?;
                let z = tape.sigmoid(z)?;
                let rh = tape.mul(r, hn)?;
                let n = tape.add(inn, rh)?;
                let n = tape.tanh(n)?;
                // h' = (1 - z)·n + z·h = n + z·(h - n)
                let diff = tape.sub(state.h, n)?;
                let zd = tape.mul(z, diff)?;
                let h = tape.add(n, zd)?;
                Ok(CellState { h, c: None })
            }
        }
    }

    /// Runs the cell over `sequence` from a zero state and returns the final hidden state.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, sequence: &[Var]) -> Result<Var> {
        let first = sequence
            .first()
            .ok_or_else(|| Error::Empty("recurrent input sequence".into()))?;
        let batch = tape.shape(*first)[0];
        let mut state = self.zero_state(tape, batch);
        for &x in sequence {
            state = self.step(tape, store, x, state)?;
        }
        Ok(state.h)
    }
}
