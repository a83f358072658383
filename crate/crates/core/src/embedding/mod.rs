//! Embedding module: GRU over fixed-length segments, dropout, batch norm,
//! statistical pooling (or a second GRU), batch norm on the video vector.

mod batchnorm;
mod gru;
mod stats;

pub use batchnorm::{BatchNorm, BnTranscript};
pub use gru::{stacked_gru_summarize, Gru, GruTranscript};
pub use stats::{
    parse_ops, statistical_layer, statistical_layer_backward, StatLayer, StatOp, StatTranscript,
};

use rand::Rng;

use crate::diffcore::{ParamSet, ParamTensor};
use crate::error::{Error, Result};
use crate::features::{segment, FrameMatrix};

/// How segment embeddings are summarized into one vector per video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Summarizer {
    /// Statistical layer with the given operators (flattened operator-major).
    Stats(Vec<StatOp>),
    /// A second GRU over the segment embeddings.
    StackedGru,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingConfig {
    pub input: usize,
    pub hidden: usize,
    pub seg_len: usize,
    pub summarizer: Summarizer,
    pub dropout: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl EmbeddingConfig {
    pub fn out_dim(&self) -> usize {
        match &self.summarizer {
            Summarizer::Stats(ops) => ops.len() * self.hidden,
            Summarizer::StackedGru => self.hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedder {
    pub config: EmbeddingConfig,
    pub gru: Gru,
    pub bn_segments: BatchNorm,
    pub gru2: Option<Gru>,
    pub bn_video: BatchNorm,
}

#[derive(Debug, Clone)]
enum SummaryTranscript {
    Stats(StatTranscript),
    Gru(GruTranscript),
}

/// Everything the embedding backward pass needs for one batch of videos.
#[derive(Debug, Clone)]
pub struct EmbedTranscript {
    /// Row offset of each video's first segment in the stacked segment matrix.
    offsets: Vec<usize>,
    segments: Vec<GruTranscript>,
    /// Inverted-dropout multipliers, one per segment-embedding entry.
    mask: Vec<f64>,
    bn_segments: BnTranscript,
    summaries: Vec<SummaryTranscript>,
    bn_video: BnTranscript,
}

impl Embedder {
    pub fn new<R: Rng + ?Sized>(config: EmbeddingConfig, rng: &mut R) -> Self {
        let d = config.hidden;
        let gru = Gru::new("gru", config.input, d, rng);
        let gru2 = match config.summarizer {
            Summarizer::StackedGru => Some(Gru::new("gru2", d, d, rng)),
            Summarizer::Stats(_) => None,
        };
        let bn_segments = BatchNorm::new("bn_segments", d, config.bn_momentum, config.bn_eps);
        let bn_video = BatchNorm::new(
            "bn_video",
            config.out_dim(),
            config.bn_momentum,
            config.bn_eps,
        );
        Self {
            config,
            gru,
            bn_segments,
            gru2,
            bn_video,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.config.out_dim()
    }

    fn check_input(&self, fm: &FrameMatrix) -> Result<()> {
        if fm.aus() != self.config.input {
            return Err(Error::DimensionMismatch {
                expected: self.config.input,
                got: fm.aus(),
            });
        }
        Ok(())
    }

    fn summarize(&self, q: &[f64], m: usize) -> Result<(Vec<f64>, SummaryTranscript)> {
        match (&self.config.summarizer, &self.gru2) {
            (Summarizer::Stats(ops), _) => {
                let (s, tr) = statistical_layer(q, m, self.config.hidden, ops);
                Ok((s, SummaryTranscript::Stats(tr)))
            }
            (Summarizer::StackedGru, Some(g2)) => {
                let (h, tr) = stacked_gru_summarize(q, g2)?;
                Ok((h, SummaryTranscript::Gru(tr)))
            }
            (Summarizer::StackedGru, None) => unreachable!("stacked summarizer without gru2"),
        }
    }

    /// Embeds a batch of centered videos with batch statistics and dropout.
    /// Segment batch norm runs across all segments of all videos; the video
    /// batch norm runs across the returned vectors.
    pub fn forward_train<R: Rng + ?Sized>(
        &self,
        videos: &[&FrameMatrix],
        rng: &mut R,
    ) -> Result<(Vec<Vec<f64>>, EmbedTranscript)> {
        let d = self.config.hidden;
        let mut offsets = Vec::with_capacity(videos.len() + 1);
        let mut segments = Vec::new();
        let mut rows = Vec::new();
        for fm in videos {
            self.check_input(fm)?;
            offsets.push(segments.len());
            for seg in segment(fm, self.config.seg_len)? {
                let (h, tr) = self.gru.forward(seg)?;
                rows.extend_from_slice(&h);
                segments.push(tr);
            }
        }
        offsets.push(segments.len());

        let p = self.config.dropout;
        let mask: Vec<f64> = if p > 0.0 {
            (0..rows.len())
                .map(|_| {
                    if rng.random::<f64>() < p {
                        0.0
                    } else {
                        1.0 / (1.0 - p)
                    }
                })
                .collect()
        } else {
            vec![1.0; rows.len()]
        };
        for (v, m) in rows.iter_mut().zip(&mask) {
            *v *= m;
        }
        let (normed, bn_segments) = self.bn_segments.forward_train(&rows);

        let mut flat = Vec::with_capacity(videos.len() * self.out_dim());
        let mut summaries = Vec::with_capacity(videos.len());
        for w in offsets.windows(2) {
            let q = &normed[w[0] * d..w[1] * d];
            let (s, tr) = self.summarize(q, w[1] - w[0])?;
            flat.extend_from_slice(&s);
            summaries.push(tr);
        }
        let (out, bn_video) = self.bn_video.forward_train(&flat);
        let vectors = out
            .chunks_exact(self.out_dim())
            .map(<[f64]>::to_vec)
            .collect();
        Ok((
            vectors,
            EmbedTranscript {
                offsets,
                segments,
                mask,
                bn_segments,
                summaries,
                bn_video,
            },
        ))
    }

    /// Inference embedding of one centered video (running statistics, no dropout).
    pub fn forward_eval(&self, fm: &FrameMatrix) -> Result<Vec<f64>> {
        self.check_input(fm)?;
        let mut rows = Vec::new();
        let segs = segment(fm, self.config.seg_len)?;
        let m = segs.len();
        for seg in segs {
            rows.extend(self.gru.forward(seg)?.0);
        }
        let normed = self.bn_segments.forward_eval(&rows);
        let (s, _) = self.summarize(&normed, m)?;
        Ok(self.bn_video.forward_eval(&s))
    }

    /// Backpropagates gradients w.r.t. the output vectors into the parameters.
    pub fn backward(&mut self, tr: &EmbedTranscript, d_vectors: &[Vec<f64>]) {
        let d = self.config.hidden;
        let d_flat: Vec<f64> = d_vectors.concat();
        let d_summary = self.bn_video.backward_rows(&tr.bn_video, &d_flat);
        let out_dim = self.out_dim();
        let total_rows = *tr.offsets.last().unwrap_or(&0);
        let mut d_normed = vec![0.0; total_rows * d];
        for (v, w) in tr.offsets.windows(2).enumerate() {
            let up = &d_summary[v * out_dim..(v + 1) * out_dim];
            let dq = match (&tr.summaries[v], self.gru2.as_mut()) {
                (SummaryTranscript::Stats(st), _) => statistical_layer_backward(st, up),
                (SummaryTranscript::Gru(gt), Some(g2)) => g2.backward_seq(gt, up, true),
                (SummaryTranscript::Gru(_), None) => unreachable!("gru transcript without gru2"),
            };
            d_normed[w[0] * d..w[1] * d].copy_from_slice(&dq);
        }
        let mut d_rows = self.bn_segments.backward_rows(&tr.bn_segments, &d_normed);
        for (g, m) in d_rows.iter_mut().zip(&tr.mask) {
            *g *= m;
        }
        for (s, seg_tr) in tr.segments.iter().enumerate() {
            self.gru
                .backward_seq(seg_tr, &d_rows[s * d..(s + 1) * d], false);
        }
    }

    pub fn update_running(&mut self, tr: &EmbedTranscript) {
        self.bn_segments.update_running(&tr.bn_segments);
        self.bn_video.update_running(&tr.bn_video);
    }
}

/// Embeds a single centered video. In train mode the video forms its own
/// batch (so the video-level batch norm sees one row).
pub fn embed_video<R: Rng + ?Sized>(
    embedder: &Embedder,
    fm: &FrameMatrix,
    mode: Mode,
    rng: &mut R,
) -> Result<Vec<f64>> {
    match mode {
        Mode::Eval => embedder.forward_eval(fm),
        Mode::Train => Ok(embedder.forward_train(&[fm], rng)?.0.remove(0)),
    }
}

impl ParamSet for Embedder {
    fn params(&self) -> Vec<&ParamTensor> {
        let mut ps = self.gru.params();
        ps.extend(self.bn_segments.params());
        if let Some(g2) = &self.gru2 {
            ps.extend(g2.params());
        }
        ps.extend(self.bn_video.params());
        ps
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut ps = self.gru.params_mut();
        ps.extend(self.bn_segments.params_mut());
        if let Some(g2) = &mut self.gru2 {
            ps.extend(g2.params_mut());
        }
        ps.extend(self.bn_video.params_mut());
        ps
    }
}
