//! Stacked LSTM with a dense readout head and exact backprop through time.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::SimRng;
use crate::error::{Result, SimError};

use super::dense::{sigmoid, Activation, DenseLayer};
use super::Parameterized;

/// One 4-gate LSTM cell. Gate rows are stacked `[input; forget; cell; output]`
/// in `w_x` (`4H x in_dim`), `w_h` (`4H x H`) and `b` (`4H`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LstmCell {
    pub in_dim: usize,
    pub hidden: usize,
    pub w_x: Vec<f64>,
    pub w_h: Vec<f64>,
    pub b: Vec<f64>,
}

/// Everything the backward pass needs from one cell step.
#[derive(Debug, Clone)]
pub struct GateCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
    c: Vec<f64>,
}

/// Per-cell gradients in (w_x, w_h, b) order.
struct CellGrads {
    w_x: Vec<f64>,
    w_h: Vec<f64>,
    b: Vec<f64>,
}

impl CellGrads {
    fn zeros(cell: &LstmCell) -> Self {
        Self {
            w_x: vec![0.0; cell.w_x.len()],
            w_h: vec![0.0; cell.w_h.len()],
            b: vec![0.0; cell.b.len()],
        }
    }
}

impl LstmCell {
    pub fn new(in_dim: usize, hidden: usize, rng: &mut SimRng) -> Self {
        let sx = 1.0 / (in_dim as f64).sqrt();
        let sh = 1.0 / (hidden as f64).sqrt();
        let w_x = (0..4 * hidden * in_dim).map(|_| rng.gen_range(-sx..sx)).collect();
        let w_h = (0..4 * hidden * hidden).map(|_| rng.gen_range(-sh..sh)).collect();
        // forget-gate bias starts at 1 so early training does not flush state
        let mut b = vec![0.0; 4 * hidden];
        for v in b.iter_mut().take(2 * hidden).skip(hidden) {
            *v = 1.0;
        }
        Self { in_dim, hidden, w_x, w_h, b }
    }

    pub fn zeros(in_dim: usize, hidden: usize) -> Self {
        Self {
            in_dim,
            hidden,
            w_x: vec![0.0; 4 * hidden * in_dim],
            w_h: vec![0.0; 4 * hidden * hidden],
            b: vec![0.0; 4 * hidden],
        }
    }

    fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> GateCache {
        let hsz = self.hidden;
        let mut z = self.b.clone();
        for row in 0..4 * hsz {
            let mut acc = 0.0;
            let xb = row * self.in_dim;
            for (col, xv) in x.iter().enumerate() {
                acc += self.w_x[xb + col] * xv;
            }
            let hb = row * hsz;
            for (col, hv) in h_prev.iter().enumerate() {
                acc += self.w_h[hb + col] * hv;
            }
            z[row] += acc;
        }
        let mut i = vec![0.0; hsz];
        let mut f = vec![0.0; hsz];
        let mut g = vec![0.0; hsz];
        let mut o = vec![0.0; hsz];
        let mut c = vec![0.0; hsz];
        let mut tanh_c = vec![0.0; hsz];
        let mut h = vec![0.0; hsz];
        for j in 0..hsz {
            i[j] = sigmoid(z[j]);
            f[j] = sigmoid(z[hsz + j]);
            g[j] = z[2 * hsz + j].tanh();
            o[j] = sigmoid(z[3 * hsz + j]);
            c[j] = f[j] * c_prev[j] + i[j] * g[j];
            tanh_c[j] = c[j].tanh();
            h[j] = o[j] * tanh_c[j];
        }
        GateCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            i,
            f,
            g,
            o,
            tanh_c,
            h,
            c,
        }
    }

    /// Backward through one step. `dh`/`dc` are dL/dh_t and dL/dc_t (the
    /// latter accumulated from future steps). Returns (dx, dh_prev, dc_prev)
    /// and adds the parameter gradients into `grads`.
    fn backward_step(
        &self,
        cache: &GateCache,
        dh: &[f64],
        dc_in: &[f64],
        grads: &mut CellGrads,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hsz = self.hidden;
        let mut dz = vec![0.0; 4 * hsz];
        let mut dc_prev = vec![0.0; hsz];
        for j in 0..hsz {
            let do_j = dh[j] * cache.tanh_c[j];
            let dc = dc_in[j] + dh[j] * cache.o[j] * (1.0 - cache.tanh_c[j] * cache.tanh_c[j]);
            let di = dc * cache.g[j];
            let df = dc * cache.c_prev[j];
            let dg = dc * cache.i[j];
            dz[j] = di * cache.i[j] * (1.0 - cache.i[j]);
            dz[hsz + j] = df * cache.f[j] * (1.0 - cache.f[j]);
            dz[2 * hsz + j] = dg * (1.0 - cache.g[j] * cache.g[j]);
            dz[3 * hsz + j] = do_j * cache.o[j] * (1.0 - cache.o[j]);
            dc_prev[j] = dc * cache.f[j];
        }
        let mut dx = vec![0.0; self.in_dim];
        let mut dh_prev = vec![0.0; hsz];
        for row in 0..4 * hsz {
            let d = dz[row];
            if d == 0.0 {
                continue;
            }
            grads.b[row] += d;
            let xb = row * self.in_dim;
            for col in 0..self.in_dim {
                grads.w_x[xb + col] += d * cache.x[col];
                dx[col] += d * self.w_x[xb + col];
            }
            let hb = row * hsz;
            for col in 0..hsz {
                grads.w_h[hb + col] += d * cache.h_prev[col];
                dh_prev[col] += d * self.w_h[hb + col];
            }
        }
        (dx, dh_prev, dc_prev)
    }

    fn param_count(&self) -> usize {
        self.w_x.len() + self.w_h.len() + self.b.len()
    }
}

/// Hidden and cell state for every layer of a [`RecurrentNet`], owned by the
/// caller (one per rollout).
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub h: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

/// Stacked LSTM cells plus a dense readout applied at every step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecurrentNet {
    pub cells: Vec<LstmCell>,
    pub head: DenseLayer,
}

/// Caches for backprop through time: `steps[t][layer]`.
#[derive(Debug, Clone)]
pub struct RnnCache {
    steps: Vec<Vec<GateCache>>,
    head_out: Vec<Vec<f64>>,
}

impl RecurrentNet {
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        head_out: usize,
        head_act: Activation,
        rng: &mut SimRng,
    ) -> Result<Self> {
        if hidden.is_empty() {
            return Err(SimError::Config("recurrent net needs at least one cell".into()));
        }
        if input_dim == 0 || hidden.iter().any(|&h| h == 0) || head_out == 0 {
            return Err(SimError::Config("zero-width recurrent layer".into()));
        }
        let mut cells = Vec::with_capacity(hidden.len());
        let mut in_dim = input_dim;
        for &h in hidden {
            cells.push(LstmCell::new(in_dim, h, rng));
            in_dim = h;
        }
        let head = DenseLayer::new(in_dim, head_out, head_act, rng);
        Ok(Self { cells, head })
    }

    pub fn zeros(
        input_dim: usize,
        hidden: &[usize],
        head_out: usize,
        head_act: Activation,
    ) -> Result<Self> {
        let mut rng = crate::domain::seeded_rng(0);
        let mut net = Self::new(input_dim, hidden, head_out, head_act, &mut rng)?;
        let zeros = vec![0.0; net.param_count()];
        net.set_params(&zeros)?;
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.cells[0].in_dim
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.cells.iter().map(|c| c.hidden).collect()
    }

    pub fn output_dim(&self) -> usize {
        self.head.out_dim
    }

    pub fn init_state(&self) -> RecurrentState {
        RecurrentState {
            h: self.cells.iter().map(|c| vec![0.0; c.hidden]).collect(),
            c: self.cells.iter().map(|c| vec![0.0; c.hidden]).collect(),
        }
    }

    fn check_state(&self, state: &RecurrentState) -> Result<()> {
        if state.h.len() != self.cells.len() || state.c.len() != self.cells.len() {
            return Err(SimError::DimMismatch {
                expected: self.cells.len(),
                got: state.h.len(),
            });
        }
        for (cell, (h, c)) in self.cells.iter().zip(state.h.iter().zip(&state.c)) {
            if h.len() != cell.hidden || c.len() != cell.hidden {
                return Err(SimError::DimMismatch { expected: cell.hidden, got: h.len() });
            }
        }
        Ok(())
    }

    /// Advances the state by one input and returns the head output.
    pub fn step(&self, state: &mut RecurrentState, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(SimError::DimMismatch { expected: self.input_dim(), got: x.len() });
        }
        self.check_state(state)?;
        let mut cur = x.to_vec();
        for (l, cell) in self.cells.iter().enumerate() {
            let cache = cell.step(&cur, &state.h[l], &state.c[l]);
            state.h[l] = cache.h.clone();
            state.c[l] = cache.c;
            cur = cache.h;
        }
        Ok(self.head.forward(&cur))
    }

    /// Full-sequence forward; step-t output depends only on inputs `0..=t`.
    pub fn forward(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if inputs.is_empty() {
            return Err(SimError::EmptyInput("recurrent forward"));
        }
        let mut state = self.init_state();
        inputs.iter().map(|x| self.step(&mut state, x)).collect()
    }

    pub fn forward_cached(&self, inputs: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, RnnCache)> {
        if inputs.is_empty() {
            return Err(SimError::EmptyInput("recurrent forward"));
        }
        let mut state = self.init_state();
        let mut steps = Vec::with_capacity(inputs.len());
        let mut head_out = Vec::with_capacity(inputs.len());
        for x in inputs {
            if x.len() != self.input_dim() {
                return Err(SimError::DimMismatch { expected: self.input_dim(), got: x.len() });
            }
            let mut layer_caches = Vec::with_capacity(self.cells.len());
            let mut cur = x.clone();
            for (l, cell) in self.cells.iter().enumerate() {
                let cache = cell.step(&cur, &state.h[l], &state.c[l]);
                state.h[l] = cache.h.clone();
                state.c[l] = cache.c.clone();
                cur = cache.h.clone();
                layer_caches.push(cache);
            }
            head_out.push(self.head.forward(&cur));
            steps.push(layer_caches);
        }
        Ok((head_out.clone(), RnnCache { steps, head_out }))
    }

    /// Backprop through time. `upstream[t]` is dL/d(head output at step t).
    /// Returns the flat parameter gradient aligned with `params()`.
    pub fn backward(&self, cache: &RnnCache, upstream: &[Vec<f64>]) -> Vec<f64> {
        assert_eq!(upstream.len(), cache.steps.len(), "upstream length");
        let layers = self.cells.len();
        let steps = cache.steps.len();

        let mut cell_grads: Vec<CellGrads> =
            self.cells.iter().map(CellGrads::zeros).collect();
        let mut head_dw = vec![0.0; self.head.w.len()];
        let mut head_db = vec![0.0; self.head.out_dim];

        let mut dh_next: Vec<Vec<f64>> =
            self.cells.iter().map(|c| vec![0.0; c.hidden]).collect();
        let mut dc_next: Vec<Vec<f64>> =
            self.cells.iter().map(|c| vec![0.0; c.hidden]).collect();

        for t in (0..steps).rev() {
            let top_h = &cache.steps[t][layers - 1].h;
            let (dw, db, mut d_above) =
                self.head.backward(top_h, &cache.head_out[t], &upstream[t]);
            for (acc, g) in head_dw.iter_mut().zip(&dw) {
                *acc += g;
            }
            for (acc, g) in head_db.iter_mut().zip(&db) {
                *acc += g;
            }

            for l in (0..layers).rev() {
                let dh: Vec<f64> =
                    d_above.iter().zip(&dh_next[l]).map(|(a, b)| a + b).collect();
                let (dx, dh_prev, dc_prev) = self.cells[l].backward_step(
                    &cache.steps[t][l],
                    &dh,
                    &dc_next[l],
                    &mut cell_grads[l],
                );
                dh_next[l] = dh_prev;
                dc_next[l] = dc_prev;
                d_above = dx;
            }
        }

        let mut flat = Vec::with_capacity(self.param_count());
        for grads in cell_grads {
            flat.extend(grads.w_x);
            flat.extend(grads.w_h);
            flat.extend(grads.b);
        }
        flat.extend(head_dw);
        flat.extend(head_db);
        flat
    }
}

impl Parameterized for RecurrentNet {
    fn param_count(&self) -> usize {
        self.cells.iter().map(LstmCell::param_count).sum::<usize>() + self.head.param_count()
    }

    fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for cell in &self.cells {
            out.extend_from_slice(&cell.w_x);
            out.extend_from_slice(&cell.w_h);
            out.extend_from_slice(&cell.b);
        }
        out.extend_from_slice(&self.head.w);
        out.extend_from_slice(&self.head.b);
        out
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(SimError::DimMismatch {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let mut offset = 0;
        let mut take = |buf: &mut Vec<f64>, params: &[f64]| {
            let n = buf.len();
            buf.copy_from_slice(&params[offset..offset + n]);
            offset += n;
        };
        for cell in &mut self.cells {
            take(&mut cell.w_x, params);
            take(&mut cell.w_h, params);
            take(&mut cell.b, params);
        }
        take(&mut self.head.w, params);
        take(&mut self.head.b, params);
        Ok(())
    }

    fn arch_signature(&self) -> String {
        let hidden: Vec<String> =
            self.cells.iter().map(|c| c.hidden.to_string()).collect();
        format!(
            "lstm:in{}:h{}:head{}{}",
            self.input_dim(),
            hidden.join(","),
            self.head.out_dim,
            match self.head.act {
                Activation::Identity => "id",
                Activation::Relu => "relu",
                Activation::Sigmoid => "sig",
            }
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::seeded_rng;
    use crate::neural::fdcheck;
    use rand::Rng;

    fn random_inputs(rng: &mut SimRng, steps: usize, dim: usize) -> Vec<Vec<f64>> {
        (0..steps).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn default_paper_scale_config_is_constructible() {
        let mut rng = seeded_rng(0);
        let net = RecurrentNet::new(8, &[500, 200, 200], 3, Activation::Sigmoid, &mut rng);
        assert!(net.is_ok());
    }

    #[test]
    fn empty_sequence_errors() {
        let mut rng = seeded_rng(1);
        let net = RecurrentNet::new(2, &[3], 1, Activation::Sigmoid, &mut rng).unwrap();
        assert!(net.forward(&[]).is_err());
    }

    #[test]
    fn single_step_sequence_is_finite() {
        let mut rng = seeded_rng(2);
        let net = RecurrentNet::new(4, &[5, 3], 3, Activation::Sigmoid, &mut rng).unwrap();
        let out = net.forward(&[vec![0.1, -0.4, 0.9, 0.0]]).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].iter().all(|v| v.is_finite()));
    }

    #[test]
    fn causality_outputs_ignore_future_inputs() {
        let mut rng = seeded_rng(3);
        let net = RecurrentNet::new(3, &[6, 4], 2, Activation::Sigmoid, &mut rng).unwrap();
        let inputs = random_inputs(&mut rng, 6, 3);
        let base = net.forward(&inputs).unwrap();

        let mut permuted = inputs.clone();
        permuted.swap(4, 5);
        permuted[4].iter_mut().for_each(|v| *v += 0.5);
        let altered = net.forward(&permuted).unwrap();

        for t in 0..4 {
            assert_eq!(base[t], altered[t], "step {t} changed by future input");
        }
        assert_ne!(base[5], altered[5]);
    }

    #[test]
    fn cached_forward_matches_stepwise_forward() {
        let mut rng = seeded_rng(4);
        let net = RecurrentNet::new(3, &[4, 3], 2, Activation::Sigmoid, &mut rng).unwrap();
        let inputs = random_inputs(&mut rng, 5, 3);
        let stepwise = net.forward(&inputs).unwrap();
        let (cached, _) = net.forward_cached(&inputs).unwrap();
        assert_eq!(stepwise, cached);
    }

    #[test]
    fn bptt_matches_finite_differences_on_two_step_cell() {
        let mut rng = seeded_rng(5);
        let net = RecurrentNet::new(2, &[3], 2, Activation::Sigmoid, &mut rng).unwrap();
        let inputs = random_inputs(&mut rng, 2, 2);
        let max_err = fdcheck::rnn_loss_grad_error(&net, &inputs);
        assert!(max_err < 1e-4, "max rel err {max_err}");
    }

    #[test]
    fn bptt_matches_finite_differences_stacked() {
        let mut rng = seeded_rng(6);
        let net = RecurrentNet::new(3, &[4, 3], 3, Activation::Sigmoid, &mut rng).unwrap();
        let inputs = random_inputs(&mut rng, 4, 3);
        let max_err = fdcheck::rnn_loss_grad_error(&net, &inputs);
        assert!(max_err < 1e-4, "max rel err {max_err}");
    }
}
