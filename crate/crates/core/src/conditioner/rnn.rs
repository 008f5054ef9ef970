use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

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

#[derive(Clone, Debug)]
struct Cell {
    input: Linear,
    recurrent: Linear,
}

/// Per-layer recurrent state. `c` is only populated for LSTM cells.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnState<T> {
    pub h: Vec<T>,
    pub c: Vec<T>,
}

impl<T> RnnState<T> {
    pub fn top(&self) -> &T {
        self.h.last().expect("at least one layer")
    }
}

impl RnnState<Tensor> {
    /// Select rows of every state tensor.
    pub fn rows(&self, start: usize, end: usize) -> Self {
        let pick = |t: &Tensor| {
            Tensor::matrix(
                end - start,
                t.cols(),
                t.data()[start * t.cols()..end * t.cols()].to_vec(),
            )
        };
        Self {
            h: self.h.iter().map(pick).collect(),
            c: self.c.iter().map(pick).collect(),
        }
    }

    /// Repeat a single-row state `n` times.
    pub fn repeat(&self, n: usize) -> Self {
        let rep = |t: &Tensor| Tensor::matrix(n, t.cols(), t.data().repeat(n));
        Self {
            h: self.h.iter().map(rep).collect(),
            c: self.c.iter().map(rep).collect(),
        }
    }
}

/// Stacked LSTM/GRU producing the conditioning sequence
/// `h_t = RNN(concat(x_{t-1}, c_{t-1}), h_{t-1})` with `h_1 = 0`.
#[derive(Clone, Debug)]
pub struct RecurrentConditioner {
    pub cell: CellKind,
    pub input_dim: usize,
    pub hidden: usize,
    cells: Vec<Cell>,
}

impl RecurrentConditioner {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cell: CellKind,
        input_dim: usize,
        hidden: usize,
        layers: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if layers == 0 || hidden == 0 {
            return Err(Error::Config(
                "recurrent conditioner needs at least one layer and unit".into(),
            ));
        }
        let g = cell.gates();
        let cells = (0..layers)
            .map(|l| {
                let in_dim = if l == 0 { input_dim } else { hidden };
                Cell {
                    input: Linear::new(
                        store,
                        &format!("{name}.{l}.input"),
                        in_dim,
                        g * hidden,
                        1.0,
                        rng,
                    ),
                    recurrent: Linear::new(
                        store,
                        &format!("{name}.{l}.recurrent"),
                        hidden,
                        g * hidden,
                        1.0,
                        rng,
                    ),
                }
            })
            .collect();
        Ok(Self {
            cell,
            input_dim,
            hidden,
            cells,
        })
    }

    pub fn layers(&self) -> usize {
        self.cells.len()
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.cells
            .iter()
            .flat_map(|c| c.input.params().into_iter().chain(c.recurrent.params()))
            .collect()
    }

    pub fn zero_state_values(&self, rows: usize) -> RnnState<Tensor> {
        let z = || Tensor::zeros(rows, self.hidden);
        RnnState {
            h: (0..self.layers()).map(|_| z()).collect(),
            c: match self.cell {
                CellKind::Lstm => (0..self.layers()).map(|_| z()).collect(),
                CellKind::Gru => Vec::new(),
            },
        }
    }

    pub fn state_vars(&self, g: &mut Graph, state: &RnnState<Tensor>) -> RnnState<Var> {
        RnnState {
            h: state.h.iter().map(|t| g.constant(t.clone())).collect(),
            c: state.c.iter().map(|t| g.constant(t.clone())).collect(),
        }
    }

    /// One time step through every layer.
    pub fn step(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        input: Var,
        state: &RnnState<Var>,
    ) -> Result<RnnState<Var>> {
        let (_, w) = g.dims(input);
        if w != self.input_dim {
            return Err(Error::ShapeMismatch {
                op: "rnn step",
                left: vec![g.dims(input).0, w],
                right: vec![g.dims(input).0, self.input_dim],
            });
        }
        g.counters_mut().rnn_steps += 1;
        let n = self.hidden;
        let mut x = input;
        let mut next = RnnState {
            h: Vec::with_capacity(self.layers()),
            c: Vec::new(),
        };
        for (l, cell) in self.cells.iter().enumerate() {
            let h = state.h[l];
            let gx = cell.input.forward(g, store, x)?;
            let gh = cell.recurrent.forward(g, store, h)?;
            let h_new = match self.cell {
                CellKind::Gru => {
                    let pre = g.add(gx, gh)?;
                    let rz = g.slice_cols(pre, 0, 2 * n)?;
                    let rz = g.sigmoid(rz);
                    let r = g.slice_cols(rz, 0, n)?;
                    let z = g.slice_cols(rz, n, 2 * n)?;
                    let xn = g.slice_cols(gx, 2 * n, 3 * n)?;
                    let hn = g.slice_cols(gh, 2 * n, 3 * n)?;
                    let rhn = g.mul(r, hn)?;
                    let cand = g.add(xn, rhn)?;
                    let cand = g.tanh(cand);
                    // h' = (1 - z) * n + z * h = n + z * (h - n)
                    let diff = g.sub(h, cand)?;
                    let zd = g.mul(z, diff)?;
                    g.add(cand, zd)?
                }
                CellKind::Lstm => {
                    let pre = g.add(gx, gh)?;
                    let ifo_i = g.slice_cols(pre, 0, 2 * n)?;
                    let ifo_i = g.sigmoid(ifo_i);
                    let i_gate = g.slice_cols(ifo_i, 0, n)?;
                    let f_gate = g.slice_cols(ifo_i, n, 2 * n)?;
                    let cand = g.slice_cols(pre, 2 * n, 3 * n)?;
                    let cand = g.tanh(cand);
                    let o_gate = g.slice_cols(pre, 3 * n, 4 * n)?;
                    let o_gate = g.sigmoid(o_gate);
                    let fc = g.mul(f_gate, state.c[l])?;
                    let ic = g.mul(i_gate, cand)?;
                    let c_new = g.add(fc, ic)?;
                    next.c.push(c_new);
                    let tc = g.tanh(c_new);
                    g.mul(o_gate, tc)?
                }
            };
            next.h.push(h_new);
            x = h_new;
        }
        Ok(next)
    }

    /// Unroll over a window. `x[t]` and `c[t]` are `[B, D]` and `[B, C]`;
    /// returns `h[0..T]` with `h[0] = 0` and `h[t]` built from step `t - 1`.
    pub fn condition(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: &[Var],
        c: &[Var],
    ) -> Result<Vec<Var>> {
        if x.len() != c.len() {
            return Err(Error::LengthMismatch(format!(
                "{} observation steps vs {} covariate steps",
                x.len(),
                c.len()
            )));
        }
        let first = *x
            .first()
            .ok_or_else(|| Error::Empty("window of length 0".into()))?;
        let rows = g.dims(first).0;
        let zero = self.zero_state_values(rows);
        let mut state = self.state_vars(g, &zero);
        let mut out = Vec::with_capacity(x.len());
        out.push(*state.top());
        for t in 1..x.len() {
            let inp = g.concat_cols(&[x[t - 1], c[t - 1]])?;
            state = self.step(g, store, inp, &state)?;
            out.push(*state.top());
        }
        Ok(out)
    }

    /// Advance a detached state by one step; no gradients are kept.
    pub fn step_values(
        &self,
        store: &ParamStore,
        input: &Tensor,
        state: &RnnState<Tensor>,
    ) -> Result<RnnState<Tensor>> {
        let mut g = Graph::new();
        let inp = g.constant(input.clone());
        let sv = self.state_vars(&mut g, state);
        let next = self.step(&mut g, store, inp, &sv)?;
        Ok(RnnState {
            h: next.h.iter().map(|&v| g.value(v).clone()).collect(),
            c: next.c.iter().map(|&v| g.value(v).clone()).collect(),
        })
    }
}
