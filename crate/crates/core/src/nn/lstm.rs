//! LSTM cell with explicit step caches for truncated-free BPTT.

use rand::Rng;

use super::gemm::{matmul, matmul_into, Op};
use super::tensor::Mat;

/// Gate order in the packed pre-activation matrix: input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub in_dim: usize,
    pub hidden: usize,
    pub w_ih: Mat, // (4H, I)
    pub w_hh: Mat, // (4H, H)
    pub b: Vec<f64>,
    pub gw_ih: Mat,
    pub gw_hh: Mat,
    pub gb: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LstmStepCache {
    x: Mat,
    h_prev: Mat,
    c_prev: Mat,
    gates: Mat, // post-activation (N, 4H)
    c_new: Mat,
}

#[derive(Debug, Clone)]
pub struct LstmState {
    pub h: Mat,
    pub c: Mat,
}

impl LstmState {
    pub fn zeros(batch: usize, hidden: usize) -> Self {
        LstmState {
            h: Mat::zeros(batch, hidden),
            c: Mat::zeros(batch, hidden),
        }
    }
}

impl LstmCell {
    pub fn new(in_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut init = |rows: usize, cols: usize| {
            let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
            Mat::from_data(rows, cols, data)
        };
        let w_ih = init(4 * hidden, in_dim);
        let w_hh = init(4 * hidden, hidden);
        let b = (0..4 * hidden).map(|_| rng.gen_range(-bound..bound)).collect();
        LstmCell {
            in_dim,
            hidden,
            gw_ih: Mat::zeros(4 * hidden, in_dim),
            gw_hh: Mat::zeros(4 * hidden, hidden),
            gb: vec![0.0; 4 * hidden],
            w_ih,
            w_hh,
            b,
        }
    }

    fn gates(&self, x: &Mat, state: &LstmState) -> (Mat, Mat) {
        let h = self.hidden;
        let mut pre = matmul(x, Op::None, &self.w_ih, Op::Transpose);
        matmul_into(&state.h, Op::None, &self.w_hh, Op::Transpose, &mut pre, 1.0);
        for r in 0..pre.rows {
            for (v, b) in pre.row_mut(r).iter_mut().zip(&self.b) {
                *v += b;
            }
        }
        let mut gates = pre;
        let mut c_new = Mat::zeros(gates.rows, h);
        for r in 0..gates.rows {
            let row = gates.row_mut(r);
            for j in 0..h {
                row[j] = sigmoid(row[j]); // i
                row[h + j] = sigmoid(row[h + j]); // f
                row[2 * h + j] = row[2 * h + j].tanh(); // g
                row[3 * h + j] = sigmoid(row[3 * h + j]); // o
            }
            let c_prev = state.c.row(r);
            let c_row = c_new.row_mut(r);
            for j in 0..h {
                c_row[j] = row[h + j] * c_prev[j] + row[j] * row[2 * h + j];
            }
        }
        (gates, c_new)
    }

    /// One step without caching (generation / frozen snapshots).
    pub fn step_infer(&self, x: &Mat, state: &LstmState) -> LstmState {
        let (gates, c_new) = self.gates(x, state);
        let h = self.hidden;
        let mut h_new = Mat::zeros(x.rows, h);
        for r in 0..x.rows {
            let g = gates.row(r);
            let c_row = c_new.row(r);
            let h_row = h_new.row_mut(r);
            for j in 0..h {
                h_row[j] = g[3 * h + j] * c_row[j].tanh();
            }
        }
        LstmState { h: h_new, c: c_new }
    }

    /// One training step; the returned cache feeds [`LstmCell::backward_step`].
    pub fn step_train(&self, x: &Mat, state: &LstmState) -> (LstmState, LstmStepCache) {
        let (gates, c_new) = self.gates(x, state);
        let h = self.hidden;
        let mut h_new = Mat::zeros(x.rows, h);
        for r in 0..x.rows {
            let g = gates.row(r);
            let c_row = c_new.row(r);
            let h_row = h_new.row_mut(r);
            for j in 0..h {
                h_row[j] = g[3 * h + j] * c_row[j].tanh();
            }
        }
        let cache = LstmStepCache {
            x: x.clone(),
            h_prev: state.h.clone(),
            c_prev: state.c.clone(),
            gates,
            c_new: c_new.clone(),
        };
        (LstmState { h: h_new, c: c_new }, cache)
    }

    /// Backprop one step. `gh`/`gc` are gradients w.r.t. the step's outputs;
    /// returns (gx, gh_prev, gc_prev) and accumulates weight grads.
    pub fn backward_step(&mut self, cache: &LstmStepCache, gh: &Mat, gc: &Mat) -> (Mat, Mat, Mat) {
        let h = self.hidden;
        let n = gh.rows;
        let mut dpre = Mat::zeros(n, 4 * h);
        let mut gc_prev = Mat::zeros(n, h);
        for r in 0..n {
            let g = cache.gates.row(r);
            let c_new = cache.c_new.row(r);
            let c_prev = cache.c_prev.row(r);
            let gh_r = gh.row(r);
            let gc_r = gc.row(r);
            let dp = dpre.row_mut(r);
            let gcp = gc_prev.row_mut(r);
            for j in 0..h {
                let (ig, fg, gg, og) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let tc = c_new[j].tanh();
                let go = gh_r[j] * tc;
                let gc_total = gc_r[j] + gh_r[j] * og * (1.0 - tc * tc);
                let gf = gc_total * c_prev[j];
                let gi = gc_total * gg;
                let gg_grad = gc_total * ig;
                gcp[j] = gc_total * fg;
                dp[j] = gi * ig * (1.0 - ig);
                dp[h + j] = gf * fg * (1.0 - fg);
                dp[2 * h + j] = gg_grad * (1.0 - gg * gg);
                dp[3 * h + j] = go * og * (1.0 - og);
            }
        }
        matmul_into(&dpre, Op::Transpose, &cache.x, Op::None, &mut self.gw_ih, 1.0);
        matmul_into(&dpre, Op::Transpose, &cache.h_prev, Op::None, &mut self.gw_hh, 1.0);
        for r in 0..n {
            for (acc, g) in self.gb.iter_mut().zip(dpre.row(r)) {
                *acc += g;
            }
        }
        let gx = matmul(&dpre, Op::None, &self.w_ih, Op::None);
        let gh_prev = matmul(&dpre, Op::None, &self.w_hh, Op::None);
        (gx, gh_prev, gc_prev)
    }
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn step_shapes_and_determinism() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let cell = LstmCell::new(5, 7, &mut rng);
        let x = Mat::from_data(2, 5, (0..10).map(|i| i as f64 * 0.1).collect());
        let s0 = LstmState::zeros(2, 7);
        let s1 = cell.step_infer(&x, &s0);
        let s2 = cell.step_infer(&x, &s0);
        assert_eq!(s1.h.data, s2.h.data);
        assert_eq!((s1.h.rows, s1.h.cols), (2, 7));
    }
}
