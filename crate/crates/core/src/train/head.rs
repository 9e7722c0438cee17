//! Small trainable heads over frame embeddings: pooling, an affine or
//! one-hidden-layer map, and (for projection heads) L2 normalization.
//!
//! Parameters live in one flat `Vec<f64>` per head with a fixed layout
//! (`w1, b1, [w2, b2,] [attention]`), which keeps the optimizer, the
//! checkpoint format, and finite-difference checks trivially aligned.
//! All math runs in f64; every backward pass is hand-derived and checked
//! against central differences in the test suites.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::View;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Head body: a single affine map or a one-hidden-layer MLP (tanh).
///
/// Tanh is used for the hidden layer so that loss surfaces stay smooth
/// everywhere, which keeps finite-difference gradient checks exact-tolerance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    #[default]
    Linear,
    OneHiddenMlp,
}

impl Architecture {
    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::Linear => "linear",
            Architecture::OneHiddenMlp => "one_hidden_mlp",
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Architecture::Linear),
            "one_hidden_mlp" | "mlp" => Ok(Architecture::OneHiddenMlp),
            other => Err(Error::InvalidInput(format!(
                "unknown architecture '{other}' (expected linear or mlp)"
            ))),
        }
    }
}

/// How frame rows collapse into one clip vector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Plain average over frames.
    #[default]
    Mean,
    /// Softmax over learned per-frame scores `<attention, frame>`.
    Attention,
}

impl Pooling {
    pub fn as_str(self) -> &'static str {
        match self {
            Pooling::Mean => "mean",
            Pooling::Attention => "attention",
        }
    }
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "attention" => Ok(Pooling::Attention),
            other => Err(Error::InvalidInput(format!(
                "unknown pooling '{other}' (expected mean or attention)"
            ))),
        }
    }
}

/// Intermediate values cached by a forward pass, consumed by backward.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Attention weights per frame (None for mean pooling).
    alphas: Option<Array1<f64>>,
    /// Pooled clip vector fed to the affine stack.
    pooled: Array1<f64>,
    /// Hidden activations `tanh(w1 p + b1)` (MLP only).
    hidden: Option<Array1<f64>>,
}

/// Pooling plus affine stack with a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadCore {
    architecture: Architecture,
    pooling: Pooling,
    input_dim: usize,
    hidden_dim: usize,
    output_dim: usize,
    params: Vec<f64>,
}

impl HeadCore {
    /// Zero-initialized head. Use [`HeadCore::init`] to randomize weights.
    pub fn new(
        architecture: Architecture,
        pooling: Pooling,
        input_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::InvalidConfig("head dims must be positive".into()));
        }
        if architecture == Architecture::OneHiddenMlp && hidden_dim == 0 {
            return Err(Error::InvalidConfig("mlp head needs a positive hidden_dim".into()));
        }
        let hidden_dim = if architecture == Architecture::Linear { 0 } else { hidden_dim };
        let mut head =
            HeadCore { architecture, pooling, input_dim, hidden_dim, output_dim, params: Vec::new() };
        head.params = vec![0.0; head.param_count()];
        Ok(head)
    }

    /// Randomize weights uniformly in `+-1/sqrt(fan_in)`; biases start at zero.
    pub fn init(&mut self, rng: &mut SeededRng) {
        let w1_bound = 1.0 / (self.input_dim as f64).sqrt();
        for i in self.w1_off()..self.w1_off() + self.w1_len() {
            self.params[i] = rng.uniform_in(-w1_bound, w1_bound);
        }
        if self.architecture == Architecture::OneHiddenMlp {
            let w2_bound = 1.0 / (self.hidden_dim as f64).sqrt();
            for i in self.w2_off()..self.w2_off() + self.w2_len() {
                self.params[i] = rng.uniform_in(-w2_bound, w2_bound);
            }
        }
        if self.pooling == Pooling::Attention {
            for i in self.attn_off()..self.attn_off() + self.attn_len() {
                self.params[i] = rng.uniform_in(-w1_bound, w1_bound);
            }
        }
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn pooling(&self) -> Pooling {
        self.pooling
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} head parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    // Flat layout: [w1 (rows x input)] [b1 (rows)] [w2 (out x hidden)] [b2 (out)] [attn (input)]
    fn w1_rows(&self) -> usize {
        match self.architecture {
            Architecture::Linear => self.output_dim,
            Architecture::OneHiddenMlp => self.hidden_dim,
        }
    }
    fn w1_off(&self) -> usize {
        0
    }
    fn w1_len(&self) -> usize {
        self.w1_rows() * self.input_dim
    }
    fn b1_off(&self) -> usize {
        self.w1_len()
    }
    fn b1_len(&self) -> usize {
        self.w1_rows()
    }
    fn w2_off(&self) -> usize {
        self.b1_off() + self.b1_len()
    }
    fn w2_len(&self) -> usize {
        match self.architecture {
            Architecture::Linear => 0,
            Architecture::OneHiddenMlp => self.output_dim * self.hidden_dim,
        }
    }
    fn b2_off(&self) -> usize {
        self.w2_off() + self.w2_len()
    }
    fn b2_len(&self) -> usize {
        match self.architecture {
            Architecture::Linear => 0,
            Architecture::OneHiddenMlp => self.output_dim,
        }
    }
    fn attn_off(&self) -> usize {
        self.b2_off() + self.b2_len()
    }
    fn attn_len(&self) -> usize {
        match self.pooling {
            Pooling::Mean => 0,
            Pooling::Attention => self.input_dim,
        }
    }

    pub fn param_count(&self) -> usize {
        self.attn_off() + self.attn_len()
    }

    fn w1(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape(
            (self.w1_rows(), self.input_dim),
            &self.params[self.w1_off()..self.w1_off() + self.w1_len()],
        )
        .expect("layout is consistent")
    }

    fn b1(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[self.b1_off()..self.b1_off() + self.b1_len()])
    }

    fn w2(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape(
            (self.output_dim, self.hidden_dim),
            &self.params[self.w2_off()..self.w2_off() + self.w2_len()],
        )
        .expect("layout is consistent")
    }

    fn b2(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[self.b2_off()..self.b2_off() + self.b2_len()])
    }

    fn attn(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[self.attn_off()..self.attn_off() + self.attn_len()])
    }

    fn check_frames(&self, frames: &Array2<f64>) -> Result<()> {
        if frames.ncols() != self.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "frames are {}-dimensional, head expects {}",
                frames.ncols(),
                self.input_dim
            )));
        }
        if frames.nrows() == 0 {
            return Err(Error::InvalidInput("cannot pool zero frames".into()));
        }
        Ok(())
    }

    /// Collapse frames into one clip vector with this head's pooling.
    pub fn pool(&self, frames: &Array2<f64>) -> Result<Array1<f64>> {
        self.check_frames(frames)?;
        Ok(self.pool_traced(frames).1)
    }

    /// Pooling with the attention weights kept for backward.
    fn pool_traced(&self, frames: &Array2<f64>) -> (Option<Array1<f64>>, Array1<f64>) {
        match self.pooling {
            Pooling::Mean => {
                let n = frames.nrows() as f64;
                let mut pooled = Array1::zeros(self.input_dim);
                for row in frames.rows() {
                    pooled += &row;
                }
                (None, pooled / n)
            }
            Pooling::Attention => {
                let attn = self.attn();
                let scores: Array1<f64> = frames.dot(&attn);
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut alphas: Array1<f64> = scores.mapv(|s| (s - max).exp());
                let z = alphas.sum();
                alphas /= z;
                let pooled = alphas.dot(frames);
                (Some(alphas), pooled)
            }
        }
    }

    /// Raw head output (pre-normalization, pre-softmax) plus its trace.
    pub fn forward(&self, frames: &Array2<f64>) -> Result<(Array1<f64>, Trace)> {
        self.check_frames(frames)?;
        let (alphas, pooled) = self.pool_traced(frames);
        match self.architecture {
            Architecture::Linear => {
                let out = self.w1().dot(&pooled) + self.b1();
                Ok((out, Trace { alphas, pooled, hidden: None }))
            }
            Architecture::OneHiddenMlp => {
                let pre = self.w1().dot(&pooled) + self.b1();
                let hidden = pre.mapv(f64::tanh);
                let out = self.w2().dot(&hidden) + self.b2();
                Ok((out, Trace { alphas, pooled, hidden: Some(hidden) }))
            }
        }
    }

    /// Chain `d_out = dL/d(output)` back through the head.
    ///
    /// Parameter gradients accumulate into `grads` (same layout as `params`);
    /// when `d_frames` is given, input gradients accumulate there too.
    pub fn backward(
        &self,
        frames: &Array2<f64>,
        trace: &Trace,
        d_out: &Array1<f64>,
        grads: &mut [f64],
        mut d_frames: Option<&mut Array2<f64>>,
    ) {
        assert_eq!(grads.len(), self.param_count(), "gradient buffer layout mismatch");
        let rows = self.w1_rows();

        // Affine stack: reduce d_out to d1 = dL/d(w1 p + b1) and d_pooled.
        let d1: Array1<f64> = match self.architecture {
            Architecture::Linear => d_out.clone(),
            Architecture::OneHiddenMlp => {
                let hidden = trace.hidden.as_ref().expect("mlp trace has hidden");
                // w2 / b2 gradients.
                let w2_off = self.w2_off();
                for r in 0..self.output_dim {
                    for c in 0..self.hidden_dim {
                        grads[w2_off + r * self.hidden_dim + c] += d_out[r] * hidden[c];
                    }
                    grads[self.b2_off() + r] += d_out[r];
                }
                let d_hidden = self.w2().t().dot(d_out);
                // d tanh(u) / du = 1 - tanh(u)^2.
                let mut d_pre = d_hidden;
                for (dp, h) in d_pre.iter_mut().zip(hidden.iter()) {
                    *dp *= 1.0 - h * h;
                }
                d_pre
            }
        };

        let w1_off = self.w1_off();
        for r in 0..rows {
            for c in 0..self.input_dim {
                grads[w1_off + r * self.input_dim + c] += d1[r] * trace.pooled[c];
            }
            grads[self.b1_off() + r] += d1[r];
        }
        let d_pooled = self.w1().t().dot(&d1);

        // Pooling backward.
        match self.pooling {
            Pooling::Mean => {
                if let Some(df) = d_frames.as_deref_mut() {
                    let inv_n = 1.0 / frames.nrows() as f64;
                    for mut row in df.rows_mut() {
                        for c in 0..self.input_dim {
                            row[c] += d_pooled[c] * inv_n;
                        }
                    }
                }
            }
            Pooling::Attention => {
                let alphas = trace.alphas.as_ref().expect("attention trace has alphas");
                // q_t = <d_pooled, frame_t>; d_score = alpha .* (q - <alpha, q>).
                let q: Array1<f64> = frames.dot(&d_pooled);
                let mix = alphas.dot(&q);
                let d_scores: Array1<f64> = alphas * &(q - mix);
                let attn_off = self.attn_off();
                for (t, frame) in frames.rows().into_iter().enumerate() {
                    for c in 0..self.input_dim {
                        grads[attn_off + c] += d_scores[t] * frame[c];
                    }
                }
                if let Some(df) = d_frames.as_deref_mut() {
                    let attn = self.attn();
                    for (t, mut row) in df.rows_mut().into_iter().enumerate() {
                        let a = alphas[t];
                        for c in 0..self.input_dim {
                            row[c] += a * d_pooled[c] + d_scores[t] * attn[c];
                        }
                    }
                }
            }
        }
    }
}

/// Projection head: [`HeadCore`] followed by L2 normalization, mapping a clip
/// into the shared ego/exo embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    core: HeadCore,
}

/// Trace of a projection forward pass.
#[derive(Debug, Clone)]
pub struct ProjTrace {
    core: Trace,
    z: Array1<f64>,
    norm: f64,
}

impl ProjectionHead {
    pub fn new(
        architecture: Architecture,
        pooling: Pooling,
        input_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
    ) -> Result<Self> {
        Ok(ProjectionHead { core: HeadCore::new(architecture, pooling, input_dim, hidden_dim, output_dim)? })
    }

    pub fn from_core(core: HeadCore) -> Self {
        ProjectionHead { core }
    }

    pub fn core(&self) -> &HeadCore {
        &self.core
    }

    pub fn core_mut(&mut self) -> &mut HeadCore {
        &mut self.core
    }

    pub fn init(&mut self, rng: &mut SeededRng) {
        self.core.init(rng);
    }

    pub fn pool(&self, frames: &Array2<f64>) -> Result<Array1<f64>> {
        self.core.pool(frames)
    }

    /// Unit-normalized embedding of a clip's frames.
    pub fn embed(&self, frames: &Array2<f64>) -> Result<Array1<f64>> {
        Ok(self.embed_traced(frames)?.0)
    }

    pub fn embed_traced(&self, frames: &Array2<f64>) -> Result<(Array1<f64>, ProjTrace)> {
        let (out, core_trace) = self.core.forward(frames)?;
        let norm = out.dot(&out).sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroVector);
        }
        let z = out / norm;
        Ok((z.clone(), ProjTrace { core: core_trace, z, norm }))
    }

    /// Chain `d_z = dL/dz` through normalization and the head body.
    pub fn backward(
        &self,
        frames: &Array2<f64>,
        trace: &ProjTrace,
        d_z: &Array1<f64>,
        grads: &mut [f64],
        d_frames: Option<&mut Array2<f64>>,
    ) {
        // z = y / |y|  =>  dL/dy = (d_z - <d_z, z> z) / |y|.
        let radial = trace.z.dot(d_z);
        let d_out: Array1<f64> = (d_z - &(&trace.z * radial)) / trace.norm;
        self.core.backward(frames, &trace.core, &d_out, grads, d_frames);
    }
}

/// Ego and exo projection heads trained jointly into one embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadPair {
    pub ego: ProjectionHead,
    pub exo: ProjectionHead,
    /// Optimizer steps the pair has been trained for.
    pub step: u64,
}

impl HeadPair {
    pub fn head(&self, view: View) -> &ProjectionHead {
        match view {
            View::Ego => &self.ego,
            View::Exo => &self.exo,
        }
    }
}
