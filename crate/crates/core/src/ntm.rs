//! The logistic-normal topic model, its losses and the joint forward pass.
//!
//! Parameter layout (`H` is the encoder width, `e` the embedding dimension):
//!
//! | name | shape | present |
//! |---|---|---|
//! | `encoder.trunk.w_bow` | `v × H` | always |
//! | `encoder.trunk.w_ctx` | `v × H` | contextual mode |
//! | `encoder.trunk.b` | `1 × H` | always |
//! | `encoder.{mu,logvar}.{w,b}` | `H × k`, `1 × k` | always |
//! | `encoder.adapter.{w,b}` | `k × H`, `1 × H` | `gcn` mode |
//! | `context.proj.{w,b}` | `e × v`, `1 × v` | contextual mode |
//! | `decoder.beta` | `k × v` | always |
//! | `decoder.background` | `1 × v` | when enabled |
//! | `gcn.{pos,neg}.w{l}` | `dims[l] × dims[l+1]` | `gcn` mode |
//!
//! The trunk acts on the `2v` prototype `[tfidf, proj(emb)]` through the two
//! row blocks `w_bow` and `w_ctx` of one `2v × H` matrix.

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::augment::{edge_perturbation, GcnStack, GraphPair};
use crate::config::{Ablation, Activation, GctmConfig, ReconTarget, SampleMode};
use crate::corpus::{compute_bow, compute_tfidf, Corpus, DocEmbeddingTable};
use crate::error::{Error, Result};
use crate::graphs::Polarity;
use crate::params::{glorot_uniform, ParamStore};
use crate::sparse::SparseMatrix;
use crate::tape::{self, Bound, Tape, Var};

pub const LOGVAR_BOUND: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub vocab: usize,
    pub topics: usize,
    pub encoder_hidden: usize,
    /// Embedding dimension when the contextual channel is on.
    pub context_dim: Option<usize>,
    pub background: bool,
    pub mode: SampleMode,
    pub gcn_layers: usize,
    pub gcn_hidden: usize,
    pub gcn_hidden_activation: Activation,
    pub gcn_final_activation: Activation,
}

impl ModelSpec {
    pub fn from_config(cfg: &GctmConfig, vocab: usize, context_dim: Option<usize>) -> Self {
        Self {
            vocab,
            topics: cfg.model.k,
            encoder_hidden: cfg.model.encoder_hidden,
            context_dim,
            background: cfg.model.background,
            mode: cfg.augment.mode,
            gcn_layers: cfg.augment.gcn_layers,
            gcn_hidden: cfg.augment.hidden_dim,
            gcn_hidden_activation: cfg.augment.hidden_activation,
            gcn_final_activation: cfg.augment.final_activation,
        }
    }

    fn shapes(&self) -> Vec<(String, (usize, usize))> {
        let (v, h, k) = (self.vocab, self.encoder_hidden, self.topics);
        let mut s = vec![
            ("encoder.trunk.w_bow".to_string(), (v, h)),
            ("encoder.trunk.b".to_string(), (1, h)),
            ("encoder.mu.w".to_string(), (h, k)),
            ("encoder.mu.b".to_string(), (1, k)),
            ("encoder.logvar.w".to_string(), (h, k)),
            ("encoder.logvar.b".to_string(), (1, k)),
            ("decoder.beta".to_string(), (k, v)),
        ];
        if let Some(e) = self.context_dim {
            s.push(("encoder.trunk.w_ctx".into(), (v, h)));
            s.push(("context.proj.w".into(), (e, v)));
            s.push(("context.proj.b".into(), (1, v)));
        }
        if self.background {
            s.push(("decoder.background".into(), (1, v)));
        }
        if self.mode == SampleMode::Gcn {
            s.push(("encoder.adapter.w".into(), (k, h)));
            s.push(("encoder.adapter.b".into(), (1, h)));
            for p in [Polarity::Positive, Polarity::Negative] {
                let stack = self.gcn_stack(p);
                for l in 0..stack.layers() {
                    s.push((stack.weight_name(l), (stack.dims[l], stack.dims[l + 1])));
                }
            }
        }
        s
    }

    pub fn gcn_stack(&self, polarity: Polarity) -> GcnStack {
        GcnStack::new(
            polarity,
            self.vocab,
            self.gcn_hidden,
            self.topics,
            self.gcn_layers,
            self.gcn_hidden_activation,
            self.gcn_final_activation,
        )
    }
}

/// Model specification plus every trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Gctm {
    pub spec: ModelSpec,
    pub params: ParamStore,
}

impl Gctm {
    /// Glorot-uniform weights, zero biases. `background` seeds the background
    /// log-frequency term when `spec.background` is set.
    pub fn init<R: Rng>(spec: ModelSpec, background: Option<&[f64]>, rng: &mut R) -> Self {
        let mut params = ParamStore::new();
        for (name, (r, c)) in spec.shapes() {
            let t = if name == "decoder.background" {
                match background {
                    Some(b) => Array2::from_shape_vec((1, c), b.to_vec())
                        .expect("background has one entry per word"),
                    None => Array2::zeros((1, c)),
                }
            } else if r == 1 {
                Array2::zeros((1, c))
            } else {
                glorot_uniform(r, c, rng)
            };
            params.insert(name, t);
        }
        Self { spec, params }
    }

    /// Wraps loaded tensors after checking that names and shapes match `spec`.
    pub fn from_params(spec: ModelSpec, params: ParamStore) -> Result<Self> {
        let shapes = spec.shapes();
        if shapes.len() != params.len() {
            return Err(Error::Dimension(format!(
                "model expects {} tensors, found {}",
                shapes.len(),
                params.len()
            )));
        }
        for (name, dim) in shapes {
            match params.get(&name) {
                Some(t) if t.dim() == dim => {}
                Some(t) => {
                    return Err(Error::Dimension(format!(
                        "`{name}` is {:?}, expected {dim:?}",
                        t.dim()
                    )))
                }
                None => return Err(Error::Dimension(format!("missing tensor `{name}`"))),
            }
        }
        Ok(Self { spec, params })
    }

    pub fn gcn_stack(&self, polarity: Polarity) -> GcnStack {
        self.spec.gcn_stack(polarity)
    }

    pub fn beta(&self) -> &Array2<f64> {
        self.params.get("decoder.beta").expect("decoder.beta exists")
    }

    /// The `B × v` contextual channel of the prototype, if enabled.
    pub fn project_context(&self, batch: &Batch) -> Result<Option<Array2<f64>>> {
        match (self.spec.context_dim, &batch.context) {
            (None, _) => Ok(None),
            (Some(_), None) => Err(Error::Config(
                "contextual mode is on but the batch carries no embeddings".into(),
            )),
            (Some(_), Some(c)) => {
                let w = self.params.get("context.proj.w").expect("projection exists");
                let b = self.params.get("context.proj.b").expect("projection bias exists");
                Ok(Some(c.dot(w) + b))
            }
        }
    }
}

/// Per-document model inputs for the whole corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub tfidf: SparseMatrix,
    pub target: SparseMatrix,
    /// One embedding row per document in contextual mode.
    pub context: Option<Array2<f64>>,
}

impl Features {
    pub fn build(corpus: &Corpus, target: ReconTarget, embeddings: Option<&DocEmbeddingTable>) -> Result<Self> {
        let tfidf = compute_tfidf(corpus);
        let target = match target {
            ReconTarget::Tfidf => tfidf.clone(),
            ReconTarget::Bow => compute_bow(corpus),
        };
        let context = match embeddings {
            None => None,
            Some(table) => {
                table.require_coverage(corpus.documents().iter().map(|d| d.id.as_str()))?;
                let mut m = Array2::zeros((corpus.len(), table.dim));
                for (r, doc) in corpus.documents().iter().enumerate() {
                    let e = table.get(&doc.id).expect("coverage checked");
                    m.row_mut(r).assign(&ndarray::ArrayView1::from(e));
                }
                Some(m)
            }
        };
        Ok(Self {
            tfidf,
            target,
            context,
        })
    }

    pub fn len(&self) -> usize {
        self.tfidf.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn context_dim(&self) -> Option<usize> {
        self.context.as_ref().map(Array2::ncols)
    }

    /// Log-frequency of each word in the reconstruction target over `docs`,
    /// with add-one smoothing.
    pub fn background_log_frequencies(&self, docs: &[usize]) -> Vec<f64> {
        let v = self.target.cols();
        let mut counts = vec![0.0; v];
        for &d in docs {
            for &(_, w, x) in self.target.row(d) {
                counts[w] += x;
            }
        }
        let total: f64 = counts.iter().sum::<f64>() + v as f64;
        counts.iter().map(|c| ((c + 1.0) / total).ln()).collect()
    }

    pub fn batch(&self, docs: &[usize]) -> Batch {
        Batch {
            docs: docs.to_vec(),
            tfidf: self.tfidf.select_rows(docs),
            target: self.target.select_rows(docs).to_dense(),
            context: self
                .context
                .as_ref()
                .map(|c| c.select(Axis(0), docs)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub docs: Vec<usize>,
    pub tfidf: SparseMatrix,
    pub target: Array2<f64>,
    pub context: Option<Array2<f64>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

/// Standard-normal draws for the prototype and both samples, `B × k` each.
#[derive(Debug, Clone, PartialEq)]
pub struct Noise {
    pub prototype: Array2<f64>,
    pub positive: Array2<f64>,
    pub negative: Array2<f64>,
}

impl Noise {
    pub fn sample<R: Rng>(rows: usize, k: usize, rng: &mut R) -> Self {
        let mut draw = || Array2::from_shape_simple_fn((rows, k), || rng.sample(StandardNormal));
        Self {
            prototype: draw(),
            positive: draw(),
            negative: draw(),
        }
    }
}

pub enum EncoderInput<'a> {
    /// TF-IDF rows and, in contextual mode, the projected embedding (`B × v`).
    Prototype {
        tfidf: &'a SparseMatrix,
        context: Option<Var>,
    },
    /// A dense `B × v` sample with the contextual channel zeroed.
    Dense(Var),
    /// A `B × k` propagated sample, routed through the adapter.
    Augmented(Var),
}

#[derive(Debug, Clone, Copy)]
pub struct Posterior {
    pub mu: Var,
    pub logvar: Var,
}

fn affine(tape: &mut Tape<'_>, bound: &Bound, x: Var, prefix: &str) -> Var {
    let z = tape.matmul(x, bound.get(&format!("{prefix}.w")));
    tape.add_row(z, bound.get(&format!("{prefix}.b")))
}

pub fn encode<'a>(tape: &mut Tape<'a>, bound: &Bound, input: EncoderInput<'a>) -> Posterior {
    let pre = match input {
        EncoderInput::Prototype { tfidf, context } => {
            let mut z = tape.sp_matmul(tfidf, bound.get("encoder.trunk.w_bow"));
            if let Some(c) = context {
                let zc = tape.matmul(c, bound.get("encoder.trunk.w_ctx"));
                z = tape.add(z, zc);
            }
            tape.add_row(z, bound.get("encoder.trunk.b"))
        }
        EncoderInput::Dense(x) => {
            let z = tape.matmul(x, bound.get("encoder.trunk.w_bow"));
            tape.add_row(z, bound.get("encoder.trunk.b"))
        }
        EncoderInput::Augmented(h) => affine(tape, bound, h, "encoder.adapter"),
    };
    let hidden = tape.softplus(pre);
    let mu = affine(tape, bound, hidden, "encoder.mu");
    let raw = affine(tape, bound, hidden, "encoder.logvar");
    let logvar = tape.clamp(raw, -LOGVAR_BOUND, LOGVAR_BOUND);
    Posterior { mu, logvar }
}

/// `θ = softmax(μ + σ ⊙ ε)` with `σ = exp(logvar / 2)`; no noise gives `softmax(μ)`.
pub fn reparameterize<'a>(tape: &mut Tape<'a>, post: Posterior, eps: Option<&'a Array2<f64>>) -> Var {
    let z = match eps {
        None => post.mu,
        Some(e) => {
            let half = tape.scale(post.logvar, 0.5);
            let sigma = tape.exp(half);
            let e = tape.constant_ref(e);
            let noise = tape.mul(sigma, e);
            tape.add(post.mu, noise)
        }
    };
    tape.softmax_rows(z)
}

/// `log softmax(θ·β [+ background])`, `B × v`.
pub fn decode(tape: &mut Tape<'_>, bound: &Bound, theta: Var) -> Var {
    let mut logits = tape.matmul(theta, bound.get("decoder.beta"));
    if let Some(bg) = bound.try_get("decoder.background") {
        logits = tape.add_row(logits, bg);
    }
    tape.log_softmax_rows(logits)
}

/// Closed-form `KL(N(μ, diag σ²) ‖ N(0, I))` per row, `B × 1`.
pub fn kl_divergence(tape: &mut Tape<'_>, post: Posterior) -> Var {
    let var = tape.exp(post.logvar);
    let mu2 = tape.mul(post.mu, post.mu);
    let a = tape.add(var, mu2);
    let b = tape.sub(a, post.logvar);
    let c = tape.add_scalar(b, -1.0);
    let s = tape.row_sum(c);
    tape.scale(s, 0.5)
}

#[derive(Debug, Clone, Copy)]
pub struct ElboTerms {
    /// Batch mean of `KL − Σ x·log p`.
    pub loss: Var,
    pub kl: Var,
    pub recon: Var,
}

pub fn elbo_loss<'a>(tape: &mut Tape<'a>, target: &'a Array2<f64>, logp: Var, post: Posterior) -> ElboTerms {
    let kl_rows = kl_divergence(tape, post);
    let x = tape.constant_ref(target);
    let ll = tape.row_dot(x, logp);
    let nll = tape.scale(ll, -1.0);
    let per_doc = tape.add(kl_rows, nll);
    ElboTerms {
        loss: tape.mean(per_doc),
        kl: tape.mean(kl_rows),
        recon: tape.mean(nll),
    }
}

/// Batch mean of `−log[e^{θ·θ⁺} / (e^{θ·θ⁺} + α e^{θ·θ⁻})]`, evaluated as
/// `softplus(θ·θ⁻ − θ·θ⁺ + ln α)`.
pub fn contrastive_loss(tape: &mut Tape<'_>, theta: Var, pos: Var, neg: Var, alpha: f64) -> Var {
    let sp = tape.row_dot(theta, pos);
    let sn = tape.row_dot(theta, neg);
    let d = tape.sub(sn, sp);
    let z = tape.add_scalar(d, alpha.ln());
    let l = tape.softplus(z);
    tape.mean(l)
}

/// The contrastive term of `ablation`; `None` for `no_cl`.
pub fn ablated_contrastive_loss(
    tape: &mut Tape<'_>,
    ablation: Ablation,
    theta: Var,
    pos: Option<Var>,
    neg: Option<Var>,
    alpha: f64,
) -> Option<Var> {
    match (ablation, pos, neg) {
        (Ablation::Full, Some(p), Some(n)) => Some(contrastive_loss(tape, theta, p, n, alpha)),
        (Ablation::NoNeg, Some(p), _) => {
            let s = tape.row_dot(theta, p);
            let m = tape.mean(s);
            Some(tape.scale(m, -1.0))
        }
        (Ablation::NoPos, _, Some(n)) => {
            let s = tape.row_dot(theta, n);
            Some(tape.mean(s))
        }
        (Ablation::NoCl, _, _) => None,
        _ => panic!("samples required by {ablation:?} were not generated"),
    }
}

/// `L_NTM + γ · L_CL`.
pub fn total_loss(tape: &mut Tape<'_>, elbo: Var, cl: Option<Var>, gamma: f64) -> Var {
    match cl {
        Some(cl) if gamma != 0.0 => {
            let w = tape.scale(cl, gamma);
            tape.add(elbo, w)
        }
        _ => elbo,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSettings {
    pub alpha: f64,
    pub gamma: f64,
    pub ablation: Ablation,
}

impl LossSettings {
    pub fn from_config(cfg: &GctmConfig) -> Self {
        Self {
            alpha: cfg.train.alpha,
            gamma: cfg.train.gamma,
            ablation: cfg.train.ablation,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardPass {
    pub total: Var,
    pub elbo: ElboTerms,
    pub cl: Option<Var>,
    pub theta: Var,
    pub theta_pos: Option<Var>,
    pub theta_neg: Option<Var>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub elbo: f64,
    pub kl: f64,
    pub recon: f64,
    /// Zero when the ablation has no contrastive term.
    pub cl: f64,
}

impl ForwardPass {
    pub fn values(&self, tape: &Tape<'_>) -> LossValues {
        LossValues {
            total: tape.scalar(self.total),
            elbo: tape.scalar(self.elbo.loss),
            kl: tape.scalar(self.elbo.kl),
            recon: tape.scalar(self.elbo.recon),
            cl: self.cl.map_or(0.0, |c| tape.scalar(c)),
        }
    }
}

impl Gctm {
    /// Records the joint objective for `batch` on `tape`. `bound` must come
    /// from `tape.bind(&self.params)`. Without `noise`, every sample uses `ε = 0`.
    pub fn forward<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        bound: &Bound,
        batch: &'a Batch,
        graphs: &'a GraphPair,
        noise: Option<&'a Noise>,
        settings: LossSettings,
    ) -> Result<ForwardPass> {
        graphs.check_vocab(self.spec.vocab)?;
        if batch.tfidf.cols() != self.spec.vocab {
            return Err(Error::Dimension(format!(
                "batch has {} columns, model vocabulary is {}",
                batch.tfidf.cols(),
                self.spec.vocab
            )));
        }
        let context = match (self.spec.context_dim, &batch.context) {
            (None, _) => None,
            (Some(e), Some(c)) if c.ncols() == e => {
                let c = tape.constant_ref(c);
                Some(affine(tape, bound, c, "context.proj"))
            }
            (Some(e), Some(c)) => {
                return Err(Error::Dimension(format!(
                    "embeddings have dimension {}, model expects {e}",
                    c.ncols()
                )))
            }
            (Some(_), None) => {
                return Err(Error::Config(
                    "contextual mode is on but the batch carries no embeddings".into(),
                ))
            }
        };
        let post = encode(
            tape,
            bound,
            EncoderInput::Prototype {
                tfidf: &batch.tfidf,
                context,
            },
        );
        let theta = reparameterize(tape, post, noise.map(|n| &n.prototype));
        let logp = decode(tape, bound, theta);
        let elbo = elbo_loss(tape, &batch.target, logp, post);

        let ablation = settings.ablation;
        let theta_pos = ablation
            .uses_positive()
            .then(|| self.sample_theta(tape, bound, batch, graphs, Polarity::Positive, noise.map(|n| &n.positive)))
            .transpose()?;
        let theta_neg = ablation
            .uses_negative()
            .then(|| self.sample_theta(tape, bound, batch, graphs, Polarity::Negative, noise.map(|n| &n.negative)))
            .transpose()?;
        let cl = ablated_contrastive_loss(tape, ablation, theta, theta_pos, theta_neg, settings.alpha);
        let total = total_loss(tape, elbo.loss, cl, settings.gamma);
        Ok(ForwardPass {
            total,
            elbo,
            cl,
            theta,
            theta_pos,
            theta_neg,
        })
    }

    fn sample_theta<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        bound: &Bound,
        batch: &'a Batch,
        graphs: &'a GraphPair,
        polarity: Polarity,
        eps: Option<&'a Array2<f64>>,
    ) -> Result<Var> {
        let graph = &graphs.get(polarity).normalized;
        let post = match self.spec.mode {
            SampleMode::Gcn => {
                let h = self.gcn_stack(polarity).forward(tape, bound, graph);
                let beta_v = tape.softmax_rows(h);
                let h_d = tape.sp_matmul(&batch.tfidf, beta_v);
                encode(tape, bound, EncoderInput::Augmented(h_d))
            }
            SampleMode::EdgePerturb => {
                let x = tape.constant(edge_perturbation(&batch.tfidf, graph)?);
                encode(tape, bound, EncoderInput::Dense(x))
            }
        };
        Ok(reparameterize(tape, post, eps))
    }

    /// Loss values and per-parameter gradients of the total loss.
    pub fn loss_and_gradients(
        &self,
        batch: &Batch,
        graphs: &GraphPair,
        noise: Option<&Noise>,
        settings: LossSettings,
    ) -> Result<(LossValues, BTreeMap<String, Array2<f64>>)> {
        let mut tape = Tape::new();
        let bound = tape.bind(&self.params);
        let pass = self.forward(&mut tape, &bound, batch, graphs, noise, settings)?;
        let values = pass.values(&tape);
        let grads = tape.backward(pass.total).collect(&tape, &bound);
        Ok((values, grads))
    }

    /// Loss values only.
    pub fn loss(
        &self,
        batch: &Batch,
        graphs: &GraphPair,
        noise: Option<&Noise>,
        settings: LossSettings,
    ) -> Result<LossValues> {
        let mut tape = Tape::new();
        let bound = tape.bind(&self.params);
        let pass = self.forward(&mut tape, &bound, batch, graphs, noise, settings)?;
        Ok(pass.values(&tape))
    }

    /// Encoder posterior `(μ, σ)` of the prototypes, `B × k` each.
    pub fn posterior(&self, batch: &Batch) -> Result<(Array2<f64>, Array2<f64>)> {
        let mut tape = Tape::new();
        let bound = tape.bind(&self.params);
        let context = match (self.spec.context_dim, &batch.context) {
            (None, _) => None,
            (Some(_), Some(c)) => {
                let c = tape.constant_ref(c);
                Some(affine(&mut tape, &bound, c, "context.proj"))
            }
            (Some(_), None) => {
                return Err(Error::Config(
                    "contextual mode is on but the batch carries no embeddings".into(),
                ))
            }
        };
        let post = encode(
            &mut tape,
            &bound,
            EncoderInput::Prototype {
                tfidf: &batch.tfidf,
                context,
            },
        );
        let mu = tape.value(post.mu).clone();
        let sigma = tape.value(post.logvar).mapv(|lv| (0.5 * lv).exp());
        Ok((mu, sigma))
    }

    /// Evaluation-mode `θ = softmax(μ)` for every document of the batch.
    pub fn infer_theta(&self, batch: &Batch) -> Result<Array2<f64>> {
        let (mu, _) = self.posterior(batch)?;
        Ok(tape::softmax_rows(&mu))
    }
}
