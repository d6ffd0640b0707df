//! LSTM memory cell and the stacked recurrent runner.
//!
//! One step computes, with `σ` the logistic function:
//!
//! ```text
//! i = σ(Wxi·x + Whi·h + bi)        input gate
//! f = σ(Wxf·x + Whf·h + bf)        forget gate
//! o = σ(Wxo·x + Who·h + bo)        output gate
//! g = tanh(Wxc·x + Whc·h + bc)     candidate
//! c' = i ⊙ g + f ⊙ c
//! h' = o ⊙ tanh(c')
//! ```
//!
//! No peepholes and no cell clipping.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::uniform;
use crate::tensor::{Tape, Tensor, Var};

/// Input-to-gate weight `[q×p]`, hidden-to-gate weight `[q×q]` and bias `[q]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub input_weight: Tensor,
    pub hidden_weight: Tensor,
    pub bias: Tensor,
}

impl Gate {
    fn zeros(p: usize, q: usize) -> Self {
        Self {
            input_weight: Tensor::zeros(&[q, p]),
            hidden_weight: Tensor::zeros(&[q, q]),
            bias: Tensor::zeros(&[q]),
        }
    }

    fn init<R: Rng + ?Sized>(p: usize, q: usize, bias: f64, rng: &mut R) -> Self {
        let limit = 1.0 / (q as f64).sqrt();
        Self {
            input_weight: uniform(&[q, p], limit, rng),
            hidden_weight: uniform(&[q, q], limit, rng),
            bias: Tensor::full(&[q], bias),
        }
    }

    fn tensors(&self) -> [&Tensor; 3] {
        [&self.input_weight, &self.hidden_weight, &self.bias]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 3] {
        [&mut self.input_weight, &mut self.hidden_weight, &mut self.bias]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GateVars {
    pub input_weight: Var,
    pub hidden_weight: Var,
    pub bias: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmCellParams {
    pub input: Gate,
    pub forget: Gate,
    pub output: Gate,
    pub candidate: Gate,
}

#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub input: GateVars,
    pub forget: GateVars,
    pub output: GateVars,
    pub candidate: GateVars,
}

impl LstmVars {
    pub fn all(&self) -> Vec<Var> {
        [self.input, self.forget, self.output, self.candidate]
            .iter()
            .flat_map(|g| [g.input_weight, g.hidden_weight, g.bias])
            .collect()
    }
}

/// Hidden output `h` and cell state `c`, either `[q]` or row-batched `[N×q]`.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    /// Zero state matching the leading shape of `x` (`[p]` or `[N×p]`).
    pub fn zeros(tape: &mut Tape, x_shape: &[usize], hidden: usize) -> Self {
        let shape = match x_shape {
            [_] => vec![hidden],
            [n, ..] => vec![*n, hidden],
            [] => vec![hidden],
        };
        Self {
            h: tape.constant(Tensor::zeros(&shape)),
            c: tape.constant(Tensor::zeros(&shape)),
        }
    }
}

impl LstmCellParams {
    /// Uniform(±1/√q) weights, zero biases except the forget gate at 1.
    pub fn init<R: Rng + ?Sized>(p: usize, q: usize, rng: &mut R) -> Self {
        Self {
            input: Gate::init(p, q, 0.0, rng),
            forget: Gate::init(p, q, 1.0, rng),
            output: Gate::init(p, q, 0.0, rng),
            candidate: Gate::init(p, q, 0.0, rng),
        }
    }

    pub fn zeros(p: usize, q: usize) -> Self {
        Self {
            input: Gate::zeros(p, q),
            forget: Gate::zeros(p, q),
            output: Gate::zeros(p, q),
            candidate: Gate::zeros(p, q),
        }
    }

    pub fn input_size(&self) -> usize {
        self.input.input_weight.shape()[1]
    }

    pub fn hidden_size(&self) -> usize {
        self.input.input_weight.shape()[0]
    }

    /// Gate order: input, forget, output, candidate; within each gate:
    /// input weight, hidden weight, bias.
    pub fn tensors(&self) -> Vec<&Tensor> {
        [&self.input, &self.forget, &self.output, &self.candidate]
            .into_iter()
            .flat_map(Gate::tensors)
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        [&mut self.input, &mut self.forget, &mut self.output, &mut self.candidate]
            .into_iter()
            .flat_map(Gate::tensors_mut)
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn bind(&self, tape: &mut Tape) -> LstmVars {
        let mut gate = |g: &Gate| GateVars {
            input_weight: tape.param(g.input_weight.clone()),
            hidden_weight: tape.param(g.hidden_weight.clone()),
            bias: tape.param(g.bias.clone()),
        };
        LstmVars {
            input: gate(&self.input),
            forget: gate(&self.forget),
            output: gate(&self.output),
            candidate: gate(&self.candidate),
        }
    }
}

fn preactivation(tape: &mut Tape, g: &GateVars, x: Var, h: Var) -> Result<Var> {
    let from_x = tape.linear(x, g.input_weight, Some(g.bias))?;
    let from_h = tape.linear(h, g.hidden_weight, None)?;
    tape.add(from_x, from_h)
}

/// One memory-cell update.
pub fn cell_step(tape: &mut Tape, vars: &LstmVars, x: Var, prev: &LstmState) -> Result<LstmState> {
    let pre_i = preactivation(tape, &vars.input, x, prev.h)?;
    let input_gate = tape.sigmoid(pre_i)?;
    let pre_f = preactivation(tape, &vars.forget, x, prev.h)?;
    let forget_gate = tape.sigmoid(pre_f)?;
    let pre_o = preactivation(tape, &vars.output, x, prev.h)?;
    let output_gate = tape.sigmoid(pre_o)?;
    let pre_c = preactivation(tape, &vars.candidate, x, prev.h)?;
    let candidate = tape.tanh(pre_c)?;

    let admitted = tape.mul(input_gate, candidate)?;
    let kept = tape.mul(forget_gate, prev.c)?;
    let c = tape.add(admitted, kept)?;
    let squashed = tape.tanh(c)?;
    let h = tape.mul(output_gate, squashed)?;
    Ok(LstmState { h, c })
}

/// Result of running a layer stack over a sequence.
#[derive(Debug, Clone)]
pub struct StackRun {
    /// Final state of every layer, bottom first.
    pub finals: Vec<LstmState>,
    /// Top layer `h` at every step.
    pub top_outputs: Vec<Var>,
}

impl StackRun {
    pub fn top(&self) -> LstmState {
        *self.finals.last().expect("at least one layer")
    }
}

/// Runs the stack from zero initial states.
pub fn run_stacked(tape: &mut Tape, layers: &[(&LstmCellParams, LstmVars)], sequence: &[Var]) -> Result<StackRun> {
    let first = sequence.first().ok_or_else(|| Error::shape("LSTM sequence is empty"))?;
    let x_shape = tape.shape(*first).to_vec();
    let init = layers
        .iter()
        .map(|(p, _)| LstmState::zeros(tape, &x_shape, p.hidden_size()))
        .collect();
    run_stacked_from(tape, layers, sequence, init)
}

/// Runs the stack from explicit initial states (one per layer).
///
/// Layer 1 consumes the sequence in order; each higher layer consumes the
/// per-step `h` of the layer below.
pub fn run_stacked_from(
    tape: &mut Tape,
    layers: &[(&LstmCellParams, LstmVars)],
    sequence: &[Var],
    init: Vec<LstmState>,
) -> Result<StackRun> {
    if sequence.is_empty() {
        return Err(Error::shape("LSTM sequence is empty"));
    }
    if layers.is_empty() || init.len() != layers.len() {
        return Err(Error::shape(format!(
            "{} initial states for {} LSTM layers",
            init.len(),
            layers.len()
        )));
    }
    for pair in layers.windows(2) {
        if pair[1].0.input_size() != pair[0].0.hidden_size() {
            return Err(Error::shape(format!(
                "LSTM layer input size {} does not match previous hidden size {}",
                pair[1].0.input_size(),
                pair[0].0.hidden_size()
            )));
        }
    }
    let mut finals = Vec::with_capacity(layers.len());
    let mut current: Vec<Var> = sequence.to_vec();
    for ((_, vars), start) in layers.iter().zip(init) {
        let mut state = start;
        let mut outputs = Vec::with_capacity(current.len());
        for &x in &current {
            state = cell_step(tape, vars, x, &state)?;
            outputs.push(state.h);
        }
        finals.push(state);
        current = outputs;
    }
    Ok(StackRun { finals, top_outputs: current })
}
