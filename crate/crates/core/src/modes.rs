//! Multi-mode recurrent landmark generator: a bank of K LSTMs that map the
//! conditional embedding sequence to K distinct sequences of the same
//! class, trained with the cooperative push-pull loss. The bank has no
//! label input, so its behavior is identical for either class given equal
//! inputs.

use crate::error::{validation, Error, Result};
use crate::nn::layers::softmax_rows;
use crate::nn::lstm::{LstmCell, LstmState, LstmStepCache};
use crate::nn::optim::{HasParams, HasState};
use crate::nn::tensor::Mat;
use crate::nn::Linear;
use crate::seqgen::{EmbeddingSequence, SeqOrigin};
use crate::vae::Embedding;

const PROB_EPS: f64 = 1e-7;

/// K independent generators sharing the architecture, not the weights.
#[derive(Debug, Clone)]
pub struct ModeBank {
    pub k: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    cells: Vec<LstmCell>,
    heads: Vec<Linear>,
}

/// Output bundle of one bank rollout.
#[derive(Debug, Clone)]
pub struct ModeOutputs {
    pub sequences: Vec<EmbeddingSequence>,
    /// Per-timestep mean across the K sequences.
    pub mode_wise_average: EmbeddingSequence,
    /// Per-mode mean across the T timesteps.
    pub temporal_averages: Vec<Embedding>,
}

pub struct ModeRolloutCache {
    steps: Vec<Vec<LstmStepCache>>, // [k][t]
    states: Vec<Vec<Mat>>,          // [k][t] hidden outputs
}

impl ModeBank {
    pub fn new(k: usize, embed_dim: usize, hidden: usize, rng: &mut impl rand::Rng) -> Result<Self> {
        if k < 2 {
            return Err(Error::Config(format!("mode bank needs K >= 2, got {k}")));
        }
        // sequential draws give every generator its own initialization;
        // heads start small so untrained outputs sit near the origin
        let cells = (0..k).map(|_| LstmCell::new(embed_dim, hidden, rng)).collect();
        let heads = (0..k)
            .map(|_| Linear::with_std(hidden, embed_dim, 0.01, rng))
            .collect();
        Ok(ModeBank {
            k,
            embed_dim,
            hidden,
            cells,
            heads,
        })
    }

    fn averages(&self, sequences: &[EmbeddingSequence]) -> (EmbeddingSequence, Vec<Embedding>) {
        let t = sequences[0].len();
        let k = sequences.len() as f64;
        let mut mode_wise = Vec::with_capacity(t);
        for step in 0..t {
            let mut acc = vec![0.0; self.embed_dim];
            for seq in sequences {
                crate::nn::tensor::axpy(&mut acc, &seq.embeddings[step].0);
            }
            crate::nn::tensor::scale(&mut acc, 1.0 / k);
            mode_wise.push(Embedding(acc));
        }
        let temporal = sequences
            .iter()
            .map(|seq| {
                let mut acc = vec![0.0; self.embed_dim];
                for e in &seq.embeddings {
                    crate::nn::tensor::axpy(&mut acc, &e.0);
                }
                crate::nn::tensor::scale(&mut acc, 1.0 / t as f64);
                Embedding(acc)
            })
            .collect();
        (
            EmbeddingSequence::new(mode_wise, SeqOrigin::Conditional),
            temporal,
        )
    }

    /// Run every generator over the conditional sequence (inference).
    pub fn rollout_modes(&self, cond: &EmbeddingSequence) -> Result<ModeOutputs> {
        if cond.is_empty() {
            return Err(validation("empty conditional sequence".into()));
        }
        let mut sequences = Vec::with_capacity(self.k);
        for (ki, (cell, head)) in self.cells.iter().zip(&self.heads).enumerate() {
            let mut state = LstmState::zeros(1, self.hidden);
            let mut embs = Vec::with_capacity(cond.len());
            for h_t in &cond.embeddings {
                let x = Mat::from_data(1, self.embed_dim, h_t.0.clone());
                state = cell.step_infer(&x, &state);
                embs.push(Embedding(head.infer(&state.h).row(0).to_vec()));
            }
            sequences.push(EmbeddingSequence::new(embs, SeqOrigin::Mode(ki)));
        }
        let (mode_wise_average, temporal_averages) = self.averages(&sequences);
        Ok(ModeOutputs {
            sequences,
            mode_wise_average,
            temporal_averages,
        })
    }

    /// Training rollout with caches for [`ModeBank::backward`].
    pub fn rollout_modes_train(&self, cond: &EmbeddingSequence) -> Result<(ModeOutputs, ModeRolloutCache)> {
        if cond.is_empty() {
            return Err(validation("empty conditional sequence".into()));
        }
        let t = cond.len();
        let mut sequences = Vec::with_capacity(self.k);
        let mut cache = ModeRolloutCache {
            steps: Vec::with_capacity(self.k),
            states: Vec::with_capacity(self.k),
        };
        for (ki, (cell, head)) in self.cells.iter().zip(&self.heads).enumerate() {
            let mut state = LstmState::zeros(1, self.hidden);
            let mut embs = Vec::with_capacity(t);
            let mut steps = Vec::with_capacity(t);
            let mut states = Vec::with_capacity(t);
            for h_t in &cond.embeddings {
                let x = Mat::from_data(1, self.embed_dim, h_t.0.clone());
                let (next, sc) = cell.step_train(&x, &state);
                steps.push(sc);
                states.push(next.h.clone());
                embs.push(Embedding(head.infer(&next.h).row(0).to_vec()));
                state = next;
            }
            sequences.push(EmbeddingSequence::new(embs, SeqOrigin::Mode(ki)));
            cache.steps.push(steps);
            cache.states.push(states);
        }
        let (mode_wise_average, temporal_averages) = self.averages(&sequences);
        Ok((
            ModeOutputs {
                sequences,
                mode_wise_average,
                temporal_averages,
            },
            cache,
        ))
    }

    /// BPTT through every generator. `g_outputs[k][t]` is the loss gradient
    /// w.r.t. mode k's output embedding at step t. Returns per-step
    /// gradients w.r.t. the conditional inputs.
    pub fn backward(&mut self, cache: &ModeRolloutCache, g_outputs: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
        let t = cache.steps[0].len();
        let mut g_cond = vec![vec![0.0; self.embed_dim]; t];
        for ki in 0..self.k {
            let mut gh_next = Mat::zeros(1, self.hidden);
            let mut gc_next = Mat::zeros(1, self.hidden);
            for step in (0..t).rev() {
                let gy = Mat::from_data(1, self.embed_dim, g_outputs[ki][step].clone());
                let mut gh = self.heads[ki].backward_explicit(&cache.states[ki][step], &gy);
                crate::nn::tensor::axpy(&mut gh.data, &gh_next.data);
                let (gx, gh_prev, gc_prev) =
                    self.cells[ki].backward_step(&cache.steps[ki][step], &gh, &gc_next);
                crate::nn::tensor::axpy(&mut g_cond[step], gx.row(0));
                gh_next = gh_prev;
                gc_next = gc_prev;
            }
        }
        g_cond
    }
}

impl HasParams for ModeBank {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut [f64], &mut [f64])) {
        for ki in 0..self.k {
            let cell = &mut self.cells[ki];
            f(&format!("mode_bank.{ki}.w_ih"), &mut cell.w_ih.data, &mut cell.gw_ih.data);
            f(&format!("mode_bank.{ki}.w_hh"), &mut cell.w_hh.data, &mut cell.gw_hh.data);
            f(&format!("mode_bank.{ki}.b"), &mut cell.b, &mut cell.gb);
            let head = &mut self.heads[ki];
            f(&format!("mode_bank.{ki}.head.w"), &mut head.w.data, &mut head.gw.data);
            f(&format!("mode_bank.{ki}.head.b"), &mut head.b, &mut head.gb);
        }
    }
}

impl HasState for ModeBank {
    fn visit_state(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.visit_params(&mut |name, w, _| f(name, w));
    }
}

/// One fully connected layer followed by a soft-max over the K modes.
#[derive(Debug, Clone)]
pub struct ModeDiscriminator {
    pub k: usize,
    pub fc: Linear,
}

impl ModeDiscriminator {
    pub fn new(k: usize, embed_dim: usize, rng: &mut impl rand::Rng) -> Result<Self> {
        if k < 2 {
            return Err(Error::Config(format!("mode discriminator needs K >= 2, got {k}")));
        }
        Ok(ModeDiscriminator {
            k,
            fc: Linear::new(embed_dim, k, rng),
        })
    }

    /// Soft-max class probabilities for one embedding.
    pub fn classify(&self, h: &Embedding) -> Vec<f64> {
        let x = Mat::from_data(1, h.dim(), h.0.clone());
        softmax_rows(&self.fc.infer(&x)).row(0).to_vec()
    }
}

impl HasParams for ModeDiscriminator {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut [f64], &mut [f64])) {
        f("mode_disc.w", &mut self.fc.w.data, &mut self.fc.gw.data);
        f("mode_disc.b", &mut self.fc.b, &mut self.fc.gb);
    }
}

impl HasState for ModeDiscriminator {
    fn visit_state(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.visit_params(&mut |name, w, _| f(name, w));
    }
}

/// Pull loss: mean over timesteps of the squared distance between the
/// conditional sequence and the mode-wise average.
pub fn pull_loss(cond: &EmbeddingSequence, mode_wise_average: &EmbeddingSequence) -> Result<f64> {
    if cond.len() != mode_wise_average.len() {
        return Err(validation(format!(
            "pull loss lengths {} vs {}",
            cond.len(),
            mode_wise_average.len()
        )));
    }
    let t = cond.len() as f64;
    let mut acc = 0.0;
    for (a, b) in cond.embeddings.iter().zip(&mode_wise_average.embeddings) {
        acc += a
            .0
            .iter()
            .zip(&b.0)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>();
    }
    Ok(acc / t)
}

/// Gradients of [`pull_loss`] w.r.t. (cond, mode_wise_average), scaled.
pub fn pull_loss_grad(
    cond: &EmbeddingSequence,
    mode_wise_average: &EmbeddingSequence,
    scale: f64,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let t = cond.len() as f64;
    let mut g_cond = Vec::with_capacity(cond.len());
    let mut g_avg = Vec::with_capacity(cond.len());
    for (a, b) in cond.embeddings.iter().zip(&mode_wise_average.embeddings) {
        let gc: Vec<f64> = a
            .0
            .iter()
            .zip(&b.0)
            .map(|(x, y)| scale * 2.0 / t * (x - y))
            .collect();
        let ga: Vec<f64> = gc.iter().map(|v| -v).collect();
        g_cond.push(gc);
        g_avg.push(ga);
    }
    (g_cond, g_avg)
}

/// Push loss: -sum_k log phi_k(h_{*k}), the cooperative K-way
/// cross-entropy over temporal averages.
pub fn push_loss(temporal_averages: &[Embedding], disc: &ModeDiscriminator) -> Result<f64> {
    if temporal_averages.len() != disc.k {
        return Err(Error::Config(format!(
            "push loss arity {} vs discriminator K {}",
            temporal_averages.len(),
            disc.k
        )));
    }
    let mut acc = 0.0;
    for (ki, h) in temporal_averages.iter().enumerate() {
        let p = disc.classify(h)[ki].max(PROB_EPS);
        acc -= p.ln();
    }
    Ok(acc)
}

/// Push loss with gradients: returns (loss, d/d h_{*k}, parameter grads
/// accumulated into `disc`). Discriminator and generators minimize the same
/// objective (they cooperate).
pub fn push_loss_backward(
    temporal_averages: &[Embedding],
    disc: &mut ModeDiscriminator,
    scale: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if temporal_averages.len() != disc.k {
        return Err(Error::Config(format!(
            "push loss arity {} vs discriminator K {}",
            temporal_averages.len(),
            disc.k
        )));
    }
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(disc.k);
    for (ki, h) in temporal_averages.iter().enumerate() {
        let x = Mat::from_data(1, h.dim(), h.0.clone());
        let logits = disc.fc.infer(&x);
        let probs = softmax_rows(&logits);
        let p = probs.row(0)[ki].max(PROB_EPS);
        loss -= p.ln();
        // d(-log p_k)/dlogits = probs - onehot(k)
        let mut dlogits = probs.row(0).to_vec();
        dlogits[ki] -= 1.0;
        for v in dlogits.iter_mut() {
            *v *= scale;
        }
        let dl = Mat::from_data(1, disc.k, dlogits);
        let gx = disc.fc.backward_explicit(&x, &dl);
        grads.push(gx.row(0).to_vec());
    }
    Ok((loss, grads))
}

/// Phase-3 objective: sum of per-mode BCE terms plus weighted pull and push.
pub fn multimode_objective(bce_k: &[f64], pull: f64, push: f64, lambda_pull: f64, lambda_push: f64) -> f64 {
    bce_k.iter().sum::<f64>() + lambda_pull * pull + lambda_push * push
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rng::seeded_rng;
    use approx::assert_abs_diff_eq;

    fn seq(vals: &[Vec<f64>]) -> EmbeddingSequence {
        EmbeddingSequence::new(vals.iter().cloned().map(Embedding).collect(), SeqOrigin::Conditional)
    }

    #[test]
    fn bank_requires_k_at_least_two() {
        let mut rng = seeded_rng(20, "modes");
        assert!(matches!(ModeBank::new(1, 4, 8, &mut rng), Err(Error::Config(_))));
        assert!(matches!(ModeDiscriminator::new(0, 4, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn identical_weights_collapse_to_average() {
        let mut rng = seeded_rng(21, "modes");
        let mut bank = ModeBank::new(3, 4, 8, &mut rng).unwrap();
        let proto_cell = bank.cells[0].clone();
        let proto_head = bank.heads[0].clone();
        for ki in 1..3 {
            bank.cells[ki] = proto_cell.clone();
            bank.heads[ki] = proto_head.clone();
        }
        let cond = seq(&[vec![0.1, -0.2, 0.3, 0.0], vec![0.2, 0.0, -0.1, 0.4]]);
        let out = bank.rollout_modes(&cond).unwrap();
        for ki in 0..3 {
            for (a, b) in out.sequences[ki]
                .embeddings
                .iter()
                .zip(&out.mode_wise_average.embeddings)
            {
                for (x, y) in a.0.iter().zip(&b.0) {
                    assert_abs_diff_eq!(*x, *y, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn output_arities_and_average_consistency() {
        let mut rng = seeded_rng(22, "modes");
        let bank = ModeBank::new(3, 5, 8, &mut rng).unwrap();
        let cond = seq(&(0..7).map(|t| vec![t as f64 * 0.1; 5]).collect::<Vec<_>>());
        let out = bank.rollout_modes(&cond).unwrap();
        assert_eq!(out.sequences.len(), 3);
        assert!(out.sequences.iter().all(|s| s.len() == 7));
        assert_eq!(out.temporal_averages.len(), 3);
        assert!(out.temporal_averages.iter().all(|e| e.dim() == 5));
        // brute-force re-summation oracle
        for step in 0..7 {
            for d in 0..5 {
                let mut acc = 0.0;
                for ki in 0..3 {
                    acc += out.sequences[ki].embeddings[step].0[d];
                }
                assert_abs_diff_eq!(
                    out.mode_wise_average.embeddings[step].0[d],
                    acc / 3.0,
                    epsilon = 1e-6
                );
            }
        }
        for ki in 0..3 {
            for d in 0..5 {
                let mut acc = 0.0;
                for step in 0..7 {
                    acc += out.sequences[ki].embeddings[step].0[d];
                }
                assert_abs_diff_eq!(out.temporal_averages[ki].0[d], acc / 7.0, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn label_transparency_same_inputs_same_outputs() {
        // the bank has no label input: equal conditional sequences give
        // bitwise-equal outputs regardless of which class produced them
        let mut rng = seeded_rng(23, "modes");
        let bank = ModeBank::new(2, 4, 8, &mut rng).unwrap();
        let cond_a = seq(&[vec![0.5, -0.5, 0.25, 0.0]]);
        let cond_b = seq(&[vec![0.5, -0.5, 0.25, 0.0]]);
        let out_a = bank.rollout_modes(&cond_a).unwrap();
        let out_b = bank.rollout_modes(&cond_b).unwrap();
        for (sa, sb) in out_a.sequences.iter().zip(&out_b.sequences) {
            for (ea, eb) in sa.embeddings.iter().zip(&sb.embeddings) {
                assert_eq!(ea.0, eb.0);
            }
        }
    }

    #[test]
    fn pull_loss_oracles() {
        let cond = seq(&[vec![1.0, 0.0]]);
        let same = seq(&[vec![1.0, 0.0]]);
        assert_eq!(pull_loss(&cond, &same).unwrap(), 0.0);
        let origin = seq(&[vec![0.0, 0.0]]);
        assert_abs_diff_eq!(pull_loss(&cond, &origin).unwrap(), 1.0, epsilon = 1e-12);
        let long = seq(&[vec![0.0, 0.0], vec![0.0, 0.0]]);
        assert!(pull_loss(&cond, &long).is_err());
        // non-negative on arbitrary data
        let a = seq(&[vec![0.3, -0.4], vec![0.1, 0.9]]);
        let b = seq(&[vec![-0.2, 0.4], vec![0.0, -0.7]]);
        assert!(pull_loss(&a, &b).unwrap() >= 0.0);
    }

    #[test]
    fn push_loss_oracles() {
        let mut rng = seeded_rng(24, "modes");
        let mut disc = ModeDiscriminator::new(3, 4, &mut rng).unwrap();
        // zero weights -> uniform probabilities -> 3 ln 3
        disc.fc.w.data.fill(0.0);
        disc.fc.b.fill(0.0);
        let avgs: Vec<Embedding> = (0..3).map(|i| Embedding(vec![i as f64; 4])).collect();
        let p = disc.classify(&avgs[0]);
        assert_eq!(p.len(), 3);
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-12));
        let loss = push_loss(&avgs, &disc).unwrap();
        assert_abs_diff_eq!(loss, 3.0 * 3.0f64.ln(), epsilon = 1e-9);
        assert_abs_diff_eq!(loss, 3.2958, epsilon = 1e-4);
        // near-one-hot correct outputs -> loss ~ 0
        disc.fc.b = vec![0.0; 3];
        let mut w = Mat::zeros(3, 4);
        for ki in 0..3 {
            *w.at_mut(ki, 0) = 0.0;
        }
        // craft logits via bias: make class k hugely likely for its own average
        let onehot_like: Vec<Embedding> = (0..3)
            .map(|ki| {
                let mut v = vec![0.0; 4];
                v[ki.min(3)] = 1.0;
                Embedding(v)
            })
            .collect();
        let mut big = Mat::zeros(3, 4);
        for ki in 0..3 {
            *big.at_mut(ki, ki) = 50.0;
        }
        disc.fc.w = big;
        let tiny = push_loss(&onehot_like, &disc).unwrap();
        assert!(tiny < 1e-6, "{tiny}");
        // arity mismatch
        let two = vec![Embedding(vec![0.0; 4]), Embedding(vec![1.0; 4])];
        assert!(push_loss(&two, &disc).is_err());
    }

    #[test]
    fn objective_weighted_sum() {
        assert_eq!(multimode_objective(&[0.0, 0.0], 0.0, 0.0, 1.0, 0.1), 0.0);
        let v = multimode_objective(&[1.0, 1.0, 1.0], 2.0, 3.0, 1.0, 0.1);
        assert_abs_diff_eq!(v, 5.3, epsilon = 1e-12);
        // monotone in each term
        assert!(multimode_objective(&[1.1, 1.0, 1.0], 2.0, 3.0, 1.0, 0.1) > v);
        assert!(multimode_objective(&[1.0, 1.0, 1.0], 2.1, 3.0, 1.0, 0.1) > v);
        assert!(multimode_objective(&[1.0, 1.0, 1.0], 2.0, 3.1, 1.0, 0.1) > v);
    }
}
