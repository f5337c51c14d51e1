//! Layers shared by the representation, flat and graph modules.

use rand::Rng;

use crate::numerics::{uniform_init, ParamGroup, ParamId, ParamStore, Tape, Tensor, Var};

/// Affine map `x W + b` on row vectors; `W` is `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            group,
            uniform_init(&[in_dim, out_dim], in_dim, rng),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), group, Tensor::zeros(&[out_dim])));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Var {
        let w = tape.param(self.weight);
        let y = tape.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = tape.param(b);
                tape.add_row(y, b)
            }
            None => y,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

/// Single-direction LSTM with gates ordered input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

impl Lstm {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        in_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            w_ih: store.add(
                format!("{name}.w_ih"),
                group,
                uniform_init(&[in_dim, 4 * hidden], in_dim, rng),
            ),
            w_hh: store.add(
                format!("{name}.w_hh"),
                group,
                uniform_init(&[hidden, 4 * hidden], hidden, rng),
            ),
            bias: store.add(format!("{name}.bias"), group, Tensor::zeros(&[4 * hidden])),
            hidden,
        }
    }

    /// Runs over the rows of `inputs` (`[N, in]`), right to left when
    /// `reverse`. Returns hidden states `[N, h]` in input order.
    pub fn forward(&self, tape: &mut Tape<'_>, inputs: Var, reverse: bool) -> Var {
        let n = tape.value(inputs).rows();
        let w_ih = tape.param(self.w_ih);
        let bias = tape.param(self.bias);
        let projected = tape.matmul(inputs, w_ih);
        let projected = tape.add_row(projected, bias);
        let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
        let steps: Vec<Var> = order.iter().map(|&t| tape.rows(projected, &[t])).collect();
        let mut hs = self.run(tape, &steps, 1);
        if reverse {
            hs.reverse();
        }
        tape.concat_rows(&hs)
    }

    /// Runs a batch of equal-length sequences given per-step gate
    /// pre-activations from the input (`[B, 4h]` each); returns the hidden
    /// state of every step.
    pub fn run(&self, tape: &mut Tape<'_>, input_gates: &[Var], batch: usize) -> Vec<Var> {
        let w_hh = tape.param(self.w_hh);
        let mut c = tape.constant(Tensor::zeros(&[batch, self.hidden]));
        let mut h: Option<Var> = None;
        let mut out = Vec::with_capacity(input_gates.len());
        for &x in input_gates {
            let pre = match h {
                Some(h) => {
                    let rec = tape.matmul(h, w_hh);
                    tape.add(x, rec)
                }
                None => x,
            };
            let cell = tape.lstm_cell(pre, c);
            let h_new = tape.slice_cols(cell, 0, self.hidden);
            c = tape.slice_cols(cell, self.hidden, 2 * self.hidden);
            h = Some(h_new);
            out.push(h_new);
        }
        out
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.w_ih, self.w_hh, self.bias]
    }
}

/// Two independent LSTMs whose outputs are concatenated per position.
#[derive(Debug, Clone)]
pub struct BiLstm {
    pub forward: Lstm,
    pub backward: Lstm,
}

impl BiLstm {
    /// `out_dim` is the concatenated width; each direction gets half.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(out_dim % 2 == 0, "BiLSTM width must be even, got {out_dim}");
        Self {
            forward: Lstm::new(store, &format!("{name}.fwd"), group, in_dim, out_dim / 2, rng),
            backward: Lstm::new(store, &format!("{name}.bwd"), group, in_dim, out_dim / 2, rng),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.forward.hidden + self.backward.hidden
    }

    pub fn forward(&self, tape: &mut Tape<'_>, inputs: Var) -> Var {
        let f = self.forward.forward(tape, inputs, false);
        let b = self.backward.forward(tape, inputs, true);
        tape.concat_cols(&[f, b])
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.forward.params();
        p.extend(self.backward.params());
        p
    }
}

/// Inverted dropout; identity when `rng` is `None` or `rate` is zero.
pub fn dropout<R: Rng>(tape: &mut Tape<'_>, x: Var, rate: f64, rng: Option<&mut R>) -> Var {
    let Some(rng) = rng else { return x };
    if rate <= 0.0 {
        return x;
    }
    let keep = 1.0 - rate;
    let mut mask = Tensor::zeros(tape.value(x).shape());
    for m in mask.data_mut() {
        if rng.gen::<f64>() < keep {
            *m = 1.0 / keep;
        }
    }
    let mask = tape.constant(mask);
    tape.mul(x, mask)
}
