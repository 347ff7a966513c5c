//! Conditional recurrent landmark-embedding generator: a single-layer LSTM
//! that consumes the previous embedding concatenated with a learned label
//! embedding at every step and emits a T-step embedding sequence.

use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};
use crate::landmark::LandmarkImage;
use crate::nn::lstm::{LstmCell, LstmState, LstmStepCache};
use crate::nn::optim::{HasParams, HasState};
use crate::nn::tensor::Mat;
use crate::nn::Linear;
use crate::vae::{bce_sum, Embedding, LandmarkVae};
use crate::EMBED_DIM;

/// Conditioning classes. The architecture is label-count agnostic; the
/// bundled corpus uses these two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpressionLabel {
    Spontaneous,
    Posed,
}

impl ExpressionLabel {
    pub const ALL: [ExpressionLabel; 2] = [ExpressionLabel::Spontaneous, ExpressionLabel::Posed];

    pub fn id(self) -> usize {
        match self {
            ExpressionLabel::Spontaneous => 0,
            ExpressionLabel::Posed => 1,
        }
    }

    pub fn from_id(id: usize) -> Result<Self> {
        match id {
            0 => Ok(ExpressionLabel::Spontaneous),
            1 => Ok(ExpressionLabel::Posed),
            other => Err(validation(format!("unknown label id {other}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ExpressionLabel::Spontaneous => "spontaneous",
            ExpressionLabel::Posed => "posed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "spontaneous" => Ok(ExpressionLabel::Spontaneous),
            "posed" => Ok(ExpressionLabel::Posed),
            other => Err(validation(format!("unknown label {other:?}"))),
        }
    }

    pub fn one_hot(self) -> Vec<f64> {
        let mut v = vec![0.0; Self::ALL.len()];
        v[self.id()] = 1.0;
        v
    }
}

/// Where an embedding sequence came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeqOrigin {
    GroundTruth,
    Conditional,
    Mode(usize),
}

#[derive(Debug, Clone)]
pub struct EmbeddingSequence {
    pub embeddings: Vec<Embedding>,
    pub origin: SeqOrigin,
}

impl EmbeddingSequence {
    pub fn new(embeddings: Vec<Embedding>, origin: SeqOrigin) -> Self {
        EmbeddingSequence { embeddings, origin }
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    /// (T, embed_dim) matrix view.
    pub fn to_mat(&self) -> Mat {
        Mat::from_rows(&self.embeddings.iter().map(|e| e.0.clone()).collect::<Vec<_>>())
    }
}

pub const LABEL_EMBED_DIM: usize = 16;
pub const COND_HIDDEN: usize = 256;

/// The conditional generator: label table + LSTM + output head.
#[derive(Debug, Clone)]
pub struct CondGenerator {
    pub embed_dim: usize,
    pub label_dim: usize,
    pub hidden: usize,
    pub num_labels: usize,
    label_table: Mat,
    g_label_table: Mat,
    pub cell: LstmCell,
    pub head: Linear,
}

/// Per-rollout training cache for BPTT.
pub struct CondRolloutCache {
    steps: Vec<LstmStepCache>,
    inputs: Vec<Mat>,
    states: Vec<Mat>, // hidden outputs per step (1, hidden)
    label: ExpressionLabel,
}

impl CondGenerator {
    pub fn new(embed_dim: usize, label_dim: usize, hidden: usize, rng: &mut impl rand::Rng) -> Self {
        let num_labels = ExpressionLabel::ALL.len();
        let mut label_table = Mat::zeros(num_labels, label_dim);
        for v in label_table.data.iter_mut() {
            *v = rng.gen_range(-0.1..0.1);
        }
        CondGenerator {
            embed_dim,
            label_dim,
            hidden,
            num_labels,
            g_label_table: Mat::zeros(num_labels, label_dim),
            label_table,
            cell: LstmCell::new(embed_dim + label_dim, hidden, rng),
            head: Linear::new(hidden, embed_dim, rng),
        }
    }

    /// Learned label embedding; deterministic per label.
    pub fn encode_label(&self, label: ExpressionLabel) -> &[f64] {
        self.label_table.row(label.id())
    }

    fn step_input(&self, prev: &[f64], label: ExpressionLabel) -> Mat {
        let mut v = Vec::with_capacity(self.embed_dim + self.label_dim);
        v.extend_from_slice(prev);
        v.extend_from_slice(self.encode_label(label));
        Mat::from_data(1, self.embed_dim + self.label_dim, v)
    }

    /// Free-running generation: deterministic in (h0, label, parameters).
    pub fn rollout(&self, h0: &Embedding, label: ExpressionLabel, t: usize) -> Result<EmbeddingSequence> {
        if t == 0 {
            return Err(validation("rollout needs T >= 1".into()));
        }
        let mut state = LstmState::zeros(1, self.hidden);
        let mut prev = h0.0.clone();
        let mut out = Vec::with_capacity(t);
        for _ in 0..t {
            let x = self.step_input(&prev, label);
            state = self.cell.step_infer(&x, &state);
            let y = self.head.infer(&state.h);
            prev = y.row(0).to_vec();
            out.push(Embedding(prev.clone()));
        }
        Ok(EmbeddingSequence::new(out, SeqOrigin::Conditional))
    }

    /// Teacher-forced rollout: step t consumes the ground-truth embedding of
    /// frame t-1 (h0 at t=0). Teacher inputs are treated as constants.
    pub fn rollout_teacher(
        &self,
        h0: &Embedding,
        label: ExpressionLabel,
        teacher: &EmbeddingSequence,
    ) -> Result<(EmbeddingSequence, CondRolloutCache)> {
        let t = teacher.len();
        if t == 0 {
            return Err(validation("empty teacher sequence".into()));
        }
        let mut state = LstmState::zeros(1, self.hidden);
        let mut out = Vec::with_capacity(t);
        let mut cache = CondRolloutCache {
            steps: Vec::with_capacity(t),
            inputs: Vec::with_capacity(t),
            states: Vec::with_capacity(t),
            label,
        };
        for step in 0..t {
            let prev = if step == 0 {
                &h0.0
            } else {
                &teacher.embeddings[step - 1].0
            };
            let x = self.step_input(prev, label);
            let (next, step_cache) = self.cell.step_train(&x, &state);
            cache.steps.push(step_cache);
            cache.inputs.push(x);
            cache.states.push(next.h.clone());
            out.push(Embedding(self.head.infer(&next.h).row(0).to_vec()));
            state = next;
        }
        Ok((
            EmbeddingSequence::new(out, SeqOrigin::Conditional),
            cache,
        ))
    }

    /// BPTT over a teacher-forced rollout. `g_outputs[t]` is the gradient of
    /// the loss w.r.t. output embedding t. Returns the gradient w.r.t. h0.
    pub fn backward(&mut self, cache: &CondRolloutCache, g_outputs: &[Vec<f64>]) -> Vec<f64> {
        let t = cache.steps.len();
        assert_eq!(g_outputs.len(), t, "gradient count");
        let mut gh_next = Mat::zeros(1, self.hidden);
        let mut gc_next = Mat::zeros(1, self.hidden);
        let mut g_h0 = vec![0.0; self.embed_dim];
        for step in (0..t).rev() {
            let gy = Mat::from_data(1, self.embed_dim, g_outputs[step].clone());
            let mut gh = self.head.backward_explicit(&cache.states[step], &gy);
            crate::nn::tensor::axpy(&mut gh.data, &gh_next.data);
            let (gx, gh_prev, gc_prev) = self.cell.backward_step(&cache.steps[step], &gh, &gc_next);
            // input = concat(prev embedding, label embedding)
            let grow = gx.row(0);
            if step == 0 {
                crate::nn::tensor::axpy(&mut g_h0, &grow[..self.embed_dim]);
            }
            let label_row = cache.label.id();
            crate::nn::tensor::axpy(
                self.g_label_table.row_mut(label_row),
                &grow[self.embed_dim..],
            );
            gh_next = gh_prev;
            gc_next = gc_prev;
        }
        g_h0
    }
}

impl HasParams for CondGenerator {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut [f64], &mut [f64])) {
        f(
            "cond_gen.label_table",
            &mut self.label_table.data,
            &mut self.g_label_table.data,
        );
        f("cond_gen.w_ih", &mut self.cell.w_ih.data, &mut self.cell.gw_ih.data);
        f("cond_gen.w_hh", &mut self.cell.w_hh.data, &mut self.cell.gw_hh.data);
        f("cond_gen.b", &mut self.cell.b, &mut self.cell.gb);
        f("cond_gen.head.w", &mut self.head.w.data, &mut self.head.gw.data);
        f("cond_gen.head.b", &mut self.head.b, &mut self.head.gb);
    }
}

impl HasState for CondGenerator {
    fn visit_state(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.visit_params(&mut |name, w, _| f(name, w));
    }
}

/// Decode a generated sequence and accumulate the negated pixel BCE against
/// the target landmark images (inference path; training phases decode with
/// gradients instead).
pub fn sequence_bce_loss(
    vae: &LandmarkVae,
    seq: &EmbeddingSequence,
    targets: &[LandmarkImage],
) -> Result<f64> {
    if seq.len() != targets.len() {
        return Err(validation(format!(
            "sequence length {} != target count {}",
            seq.len(),
            targets.len()
        )));
    }
    let z = seq.to_mat();
    let decoded = vae.decode(&z);
    let mut total = 0.0;
    for (t, target) in targets.iter().enumerate() {
        total += bce_sum(decoded.sample(t), &target.data);
    }
    Ok(total)
}

/// Negated pixel BCE between already-decoded images and targets.
pub fn decoded_sequence_bce(decoded: &crate::nn::Tensor4, targets: &[LandmarkImage]) -> Result<f64> {
    if decoded.n != targets.len() {
        return Err(validation(format!(
            "decoded count {} != target count {}",
            decoded.n,
            targets.len()
        )));
    }
    let mut total = 0.0;
    for (t, target) in targets.iter().enumerate() {
        total += bce_sum(decoded.sample(t), &target.data);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rng::seeded_rng;

    #[test]
    fn one_hot_and_ids() {
        assert_eq!(ExpressionLabel::Spontaneous.one_hot(), vec![1.0, 0.0]);
        assert_eq!(ExpressionLabel::Posed.one_hot(), vec![0.0, 1.0]);
        assert!(ExpressionLabel::from_id(2).is_err());
        assert!(ExpressionLabel::parse("smirk").is_err());
        assert_eq!(ExpressionLabel::parse("posed").unwrap(), ExpressionLabel::Posed);
    }

    #[test]
    fn label_embeddings_deterministic_and_distinct() {
        let mut rng = seeded_rng(11, "cond");
        let gen = CondGenerator::new(8, 4, 16, &mut rng);
        let a = gen.encode_label(ExpressionLabel::Spontaneous).to_vec();
        let b = gen.encode_label(ExpressionLabel::Spontaneous).to_vec();
        assert_eq!(a, b);
        let c = gen.encode_label(ExpressionLabel::Posed).to_vec();
        let dist: f64 = a.iter().zip(&c).map(|(x, y)| (x - y) * (x - y)).sum();
        assert!(dist > 0.0);
    }

    #[test]
    fn rollout_length_and_determinism() {
        let mut rng = seeded_rng(12, "cond");
        let gen = CondGenerator::new(EMBED_DIM, LABEL_EMBED_DIM, 32, &mut rng);
        let h0 = Embedding(vec![0.1; EMBED_DIM]);
        let a = gen.rollout(&h0, ExpressionLabel::Posed, 32).unwrap();
        assert_eq!(a.len(), 32);
        let b = gen.rollout(&h0, ExpressionLabel::Posed, 32).unwrap();
        for (x, y) in a.embeddings.iter().zip(&b.embeddings) {
            assert_eq!(x.0, y.0);
        }
        assert!(gen.rollout(&h0, ExpressionLabel::Posed, 0).is_err());
    }

    #[test]
    fn teacher_rollout_validates_and_runs() {
        let mut rng = seeded_rng(13, "cond");
        let gen = CondGenerator::new(6, 3, 10, &mut rng);
        let h0 = Embedding(vec![0.0; 6]);
        let teacher = EmbeddingSequence::new(
            (0..5).map(|i| Embedding(vec![i as f64 * 0.1; 6])).collect(),
            SeqOrigin::GroundTruth,
        );
        let (seq, _) = gen.rollout_teacher(&h0, ExpressionLabel::Spontaneous, &teacher).unwrap();
        assert_eq!(seq.len(), 5);
    }
}
