//! The full network: embedder + relation head, with a training pass over a
//! group of videos (one episode, or one batch of queries sharing a sample set).

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{self, ConfigSnapshot, OptimizerState, ParamSet, ParamTensor};
pub use crate::embedding::Summarizer;
use crate::embedding::{EmbedTranscript, Embedder, EmbeddingConfig, StatOp};
use crate::episodic::{wbce_loss, LossKind};
use crate::error::{Error, Result};
use crate::features::FrameMatrix;
use crate::relation::{Comparison, EpisodeProbs, HeadTranscript, RelationHead, RelationInit};
use crate::NUM_CLASSES;

/// Redraw budget per relation unit during the init probe.
const PROBE_TRIES: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub au_count: usize,
    pub hidden: usize,
    pub seg_len: usize,
    pub summarizer: Summarizer,
    pub dropout: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub comparison: Comparison,
    pub relation_init: RelationInit,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            au_count: 20,
            hidden: 16,
            seg_len: 16,
            summarizer: Summarizer::Stats(StatOp::defaults()),
            dropout: 0.5,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            comparison: Comparison::EucCos,
            relation_init: RelationInit::Probe,
        }
    }
}

impl ModelConfig {
    pub fn embedding(&self) -> EmbeddingConfig {
        EmbeddingConfig {
            input: self.au_count,
            hidden: self.hidden,
            seg_len: self.seg_len,
            summarizer: self.summarizer.clone(),
            dropout: self.dropout,
            bn_momentum: self.bn_momentum,
            bn_eps: self.bn_eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PainNet {
    pub config: ModelConfig,
    pub embedder: Embedder,
    pub head: RelationHead,
}

/// Forward state of one training group, consumed by [`PainNet::backward_group`].
#[derive(Debug, Clone)]
pub struct GroupPass {
    embed: EmbedTranscript,
    heads: Vec<(HeadTranscript, Vec<f64>)>,
    pub probs: Vec<EpisodeProbs>,
    /// Mean loss over the group's queries.
    pub loss: f64,
}

impl PainNet {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Self {
        let embedder = Embedder::new(config.embedding(), rng);
        let mut head = RelationHead::new(config.comparison, embedder.out_dim(), rng);
        if config.relation_init == RelationInit::Probe {
            head.mlp.w2.values.iter_mut().for_each(|v| *v = 0.0);
        }
        Self {
            config,
            embedder,
            head,
        }
    }

    /// Forward pass in train mode. `videos` holds the queries first (one per
    /// entry of `labels`) followed by the 11 sample videos ordered by class.
    pub fn forward_group<R: Rng + ?Sized>(
        &self,
        videos: &[&FrameMatrix],
        labels: &[u8],
        loss: LossKind,
        rng: &mut R,
    ) -> Result<GroupPass> {
        let nq = labels.len();
        if nq == 0 || videos.len() != nq + NUM_CLASSES {
            return Err(Error::DimensionMismatch {
                expected: nq.max(1) + NUM_CLASSES,
                got: videos.len(),
            });
        }
        let (vectors, embed) = self.embedder.forward_train(videos, rng)?;
        let samples = &vectors[nq..];
        let mut heads = Vec::with_capacity(nq);
        let mut probs = Vec::with_capacity(nq);
        let mut total = 0.0;
        for (q, &label) in labels.iter().enumerate() {
            let (p, tr) = self.head.episode_probs(&vectors[q], samples)?;
            let (l, d_scores) = wbce_loss(&p.probs, label, loss);
            total += l;
            heads.push((tr, d_scores));
            probs.push(p);
        }
        let mean = total / nq as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite("training loss".into()));
        }
        Ok(GroupPass {
            embed,
            heads,
            probs,
            loss: mean,
        })
    }

    /// Adds the gradient of the group's mean loss into the parameter grads.
    pub fn backward_group(&mut self, pass: &GroupPass) {
        let nq = pass.heads.len();
        let dim = self.embedder.out_dim();
        let mut d_vectors = vec![vec![0.0; dim]; nq + NUM_CLASSES];
        for (q, (tr, d_scores)) in pass.heads.iter().enumerate() {
            let scaled: Vec<f64> = d_scores.iter().map(|g| g / nq as f64).collect();
            let (dq, ds) = self.head.backward(tr, &scaled);
            for (a, b) in d_vectors[q].iter_mut().zip(&dq) {
                *a += b;
            }
            for (c, d) in ds.iter().enumerate() {
                for (a, b) in d_vectors[nq + c].iter_mut().zip(d) {
                    *a += b;
                }
            }
        }
        self.embedder.backward(&pass.embed, &d_vectors);
    }

    /// Forward, backward and batch-norm running-statistic update.
    pub fn train_group<R: Rng + ?Sized>(
        &mut self,
        videos: &[&FrameMatrix],
        labels: &[u8],
        loss: LossKind,
        rng: &mut R,
    ) -> Result<f64> {
        let pass = self.forward_group(videos, labels, loss, rng)?;
        self.backward_group(&pass);
        self.embedder.update_running(&pass.embed);
        Ok(pass.loss)
    }

    /// Probe step of [`RelationInit::Probe`]: embeds one group in train mode
    /// (query first, then 11 samples) and redraws relation units that none of
    /// the pairs activate. Returns the number of redrawn rows.
    pub fn probe_relation_init<R: Rng + ?Sized>(
        &mut self,
        videos: &[&FrameMatrix],
        rng: &mut R,
    ) -> Result<usize> {
        if self.config.relation_init != RelationInit::Probe {
            return Ok(0);
        }
        if videos.len() != 1 + NUM_CLASSES {
            return Err(Error::DimensionMismatch {
                expected: 1 + NUM_CLASSES,
                got: videos.len(),
            });
        }
        let (vectors, _) = self.embedder.forward_train(videos, rng)?;
        self.head
            .revive_dead_units(&vectors[0], &vectors[1..], PROBE_TRIES, rng)
    }

    /// Inference embedding of a centered video.
    pub fn embed(&self, fm: &FrameMatrix) -> Result<Vec<f64>> {
        self.embedder.forward_eval(fm)
    }

    pub fn probs(&self, query: &[f64], samples: &[Vec<f64>]) -> Result<EpisodeProbs> {
        Ok(self.head.episode_probs(query, samples)?.0)
    }

    pub fn save(&self, path: &Path, state: &OptimizerState, meta: &ConfigSnapshot) -> Result<()> {
        diffcore::save_checkpoint(path, &self.params(), state, meta)
    }

    /// Fresh model for `config` with weights read from `path`; the file's
    /// tensors must match the shapes `config` implies.
    pub fn load(
        config: ModelConfig,
        path: &Path,
    ) -> Result<(Self, OptimizerState, ConfigSnapshot)> {
        let mut model = Self::new(config, &mut ChaCha8Rng::seed_from_u64(0));
        let (state, meta) = diffcore::load_checkpoint(path, &mut model.params_mut())?;
        Ok((model, state, meta))
    }
}

impl ParamSet for PainNet {
    fn params(&self) -> Vec<&ParamTensor> {
        let mut ps = self.embedder.params();
        ps.extend(self.head.params());
        ps
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut ps = self.embedder.params_mut();
        ps.extend(self.head.params_mut());
        ps
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::default_au_names;

    fn video(frames: usize, seed: u64) -> FrameMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let names = default_au_names();
        let values = (0..frames * names.len())
            .map(|_| rng.random_range(-0.3..0.3))
            .collect();
        FrameMatrix::new(values, names).unwrap()
    }

    fn group(n: usize) -> Vec<FrameMatrix> {
        (0..n).map(|i| video(32 + 8 * (i % 5), i as u64)).collect()
    }

    #[test]
    fn group_size_is_checked() {
        let model = PainNet::new(ModelConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
        let vids = group(11);
        let refs: Vec<&FrameMatrix> = vids.iter().collect();
        let err = model.forward_group(
            &refs,
            &[3],
            LossKind::Wbce,
            &mut ChaCha8Rng::seed_from_u64(1),
        );
        assert!(matches!(
            err,
            Err(Error::DimensionMismatch {
                expected: 12,
                got: 11
            })
        ));
    }

    #[test]
    fn probe_init_zeroes_output_layer() {
        let probe = PainNet::new(ModelConfig::default(), &mut ChaCha8Rng::seed_from_u64(3));
        assert!(probe.head.mlp.w2.values.iter().all(|v| *v == 0.0));
        let plain = PainNet::new(
            ModelConfig {
                relation_init: RelationInit::Uniform,
                ..ModelConfig::default()
            },
            &mut ChaCha8Rng::seed_from_u64(3),
        );
        assert!(plain.head.mlp.w2.values.iter().any(|v| *v != 0.0));
        assert_eq!(probe.head.mlp.w1, plain.head.mlp.w1);
    }

    #[test]
    fn probe_revives_dead_units() {
        let mut model = PainNet::new(ModelConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
        // Negative weight on the distance input silences both units.
        for j in 0..2 {
            model.head.mlp.w1.values[2 * j] = -0.5;
            model.head.mlp.w1.values[2 * j + 1] = 0.0;
        }
        let vids = group(12);
        let refs: Vec<&FrameMatrix> = vids.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let redraws = model.probe_relation_init(&refs, &mut rng).unwrap();
        assert!(redraws >= 2);
        let (vectors, _) = model
            .embedder
            .forward_train(&refs, &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap();
        let (_, _, mt) = model.head.score_pair(&vectors[0], &vectors[1]).unwrap();
        assert!(!mt.all_dead());
    }

    #[test]
    fn loss_decreases_along_negative_gradient() {
        let mut model = PainNet::new(
            ModelConfig {
                relation_init: RelationInit::Uniform,
                dropout: 0.0,
                ..ModelConfig::default()
            },
            &mut ChaCha8Rng::seed_from_u64(1),
        );
        let vids = group(12);
        let refs: Vec<&FrameMatrix> = vids.iter().collect();
        let pass = model
            .forward_group(
                &refs,
                &[4],
                LossKind::Wbce,
                &mut ChaCha8Rng::seed_from_u64(0),
            )
            .unwrap();
        model.backward_group(&pass);
        for p in model.params_mut().into_iter().filter(|p| p.learnable) {
            for (v, g) in p.values.iter_mut().zip(p.grad.clone()) {
                *v -= 1e-3 * g;
            }
        }
        let after = model
            .forward_group(
                &refs,
                &[4],
                LossKind::Wbce,
                &mut ChaCha8Rng::seed_from_u64(0),
            )
            .unwrap();
        assert!(after.loss < pass.loss, "{} -> {}", pass.loss, after.loss);
    }

    #[test]
    fn checkpoint_round_trip_and_shape_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = PainNet::new(ModelConfig::default(), &mut ChaCha8Rng::seed_from_u64(5));
        let state = OptimizerState::new(&model.params());
        model
            .save(&path, &state, &vec![("gru.hidden".into(), "16".into())])
            .unwrap();
        let (loaded, _, meta) = PainNet::load(ModelConfig::default(), &path).unwrap();
        assert_eq!(loaded, model);
        assert_eq!(meta[0].1, "16");
        let other = ModelConfig {
            hidden: 8,
            ..ModelConfig::default()
        };
        assert!(matches!(
            PainNet::load(other, &path),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
