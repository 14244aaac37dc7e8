//! The joint optimization loop, multi-seed runs and ablations.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::GraphPair;
use crate::config::{Ablation, GctmConfig};
use crate::corpus::{Corpus, Split};
use crate::error::{Error, Result};
use crate::eval::{
    classify, export_representations, extract_topics, topic_coherence_npmi, CoherenceReference,
    CoherenceReport, MetricReport, SeedValue, TopicList,
};
use crate::ntm::{Features, Gctm, LossSettings, LossValues, ModelSpec, Noise};
use crate::optim::{Adam, AdamConfig};
use crate::params::Checkpoint;

/// Everything a training run reads.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub corpus: &'a Corpus,
    pub features: &'a Features,
    pub graphs: &'a GraphPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Means over the epoch's batches, weighted by batch size.
    pub losses: LossValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationPoint {
    pub epoch: usize,
    pub npmi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub ablation: Ablation,
    pub config_hash: String,
    pub epochs: Vec<EpochRecord>,
    pub validation: Vec<ValidationPoint>,
    pub best_epoch: usize,
    pub best_validation_npmi: f64,
    pub best_checkpoint: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_secs: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the epoch with the best validation NPMI.
    pub model: Gctm,
    pub record: RunRecord,
}

/// Training documents with at least one vocabulary token.
pub fn training_documents(corpus: &Corpus) -> Vec<usize> {
    corpus
        .split_indices(Split::Train)
        .into_iter()
        .filter(|&d| !corpus.token_ids(d).is_empty())
        .collect()
}

/// The validation split, or the training split when validation is empty.
pub fn selection_reference(corpus: &Corpus) -> Result<CoherenceReference> {
    let val = corpus.split_indices(Split::Validation);
    if val.is_empty() {
        CoherenceReference::new(corpus, &corpus.split_indices(Split::Train), "train")
    } else {
        CoherenceReference::new(corpus, &val, "validation")
    }
}

fn check_inputs(data: &TrainData<'_>, cfg: &GctmConfig) -> Result<()> {
    cfg.validate()?;
    let v = data.corpus.vocab_size();
    data.graphs.check_vocab(v)?;
    if data.features.tfidf.shape() != (data.corpus.len(), v) {
        return Err(Error::Dimension(format!(
            "features are {:?}, corpus is {} documents over {v} words",
            data.features.tfidf.shape(),
            data.corpus.len()
        )));
    }
    if cfg.contextual_enabled() && data.features.context.is_none() {
        return Err(Error::Config(
            "contextual mode is on but no document embeddings were loaded".into(),
        ));
    }
    Ok(())
}

pub fn model_spec(data: &TrainData<'_>, cfg: &GctmConfig) -> ModelSpec {
    let context_dim = if cfg.contextual_enabled() {
        data.features.context_dim()
    } else {
        None
    };
    ModelSpec::from_config(cfg, data.corpus.vocab_size(), context_dim)
}

pub fn adam_config(cfg: &GctmConfig) -> AdamConfig {
    AdamConfig {
        lr: cfg.train.lr,
        beta1: cfg.train.beta1,
        beta2: cfg.train.beta2,
        clip_norm: (cfg.train.clip_norm > 0.0).then_some(cfg.train.clip_norm),
        ..AdamConfig::default()
    }
}

fn validation_npmi(model: &Gctm, corpus: &Corpus, reference: &CoherenceReference, top_n: usize) -> Result<f64> {
    let topics = extract_topics(model.beta(), corpus.vocabulary(), top_n)?;
    Ok(topic_coherence_npmi(&topics, reference).mean)
}

/// Trains one model. With `checkpoint_dir`, the best parameters are written to
/// `best.json` there, and to `last_good.json` if the loss turns non-finite.
pub fn train(data: &TrainData<'_>, cfg: &GctmConfig, seed: u64, checkpoint_dir: Option<&Path>) -> Result<TrainOutcome> {
    check_inputs(data, cfg)?;
    let started = Instant::now();
    let corpus = data.corpus;
    let mut order = training_documents(corpus);
    if order.is_empty() {
        return Err(Error::Data("no non-empty training documents".into()));
    }
    let reference = selection_reference(corpus)?;
    let config_hash = cfg.config_hash();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = model_spec(data, cfg);
    let k = spec.topics;
    let background = data.features.background_log_frequencies(&order);
    let mut model = Gctm::init(spec, Some(&background), &mut rng);
    let mut adam = Adam::new(adam_config(cfg));
    let settings = LossSettings::from_config(cfg);

    let save = |model: &Gctm, name: &str| -> Result<Option<PathBuf>> {
        let Some(dir) = checkpoint_dir else { return Ok(None) };
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(name);
        Checkpoint::new(&model.params, config_hash.clone(), seed).save(&path)?;
        Ok(Some(path))
    };

    let mut epochs = Vec::with_capacity(cfg.train.epochs);
    let mut validation = Vec::new();
    let mut best = (0usize, validation_npmi(&model, corpus, &reference, cfg.train.top_n)?, model.clone());
    if cfg.train.epochs == 0 {
        validation.push(ValidationPoint { epoch: 0, npmi: best.1 });
    }

    for epoch in 1..=cfg.train.epochs {
        order.shuffle(&mut rng);
        let mut sums = LossValues::default();
        for (b, chunk) in order.chunks(cfg.train.batch_size).enumerate() {
            let batch = data.features.batch(chunk);
            let noise = Noise::sample(chunk.len(), k, &mut rng);
            let (values, grads) = model.loss_and_gradients(&batch, data.graphs, Some(&noise), settings)?;
            let finite = values.total.is_finite() && grads.values().all(|g| g.iter().all(|x| x.is_finite()));
            if !finite {
                let saved = save(&model, "last_good.json")?;
                return Err(Error::Numeric {
                    epoch,
                    batch: b,
                    message: format!(
                        "loss {} (elbo {}, cl {}); last good parameters {}",
                        values.total,
                        values.elbo,
                        values.cl,
                        saved.map_or_else(|| "not saved".into(), |p| format!("at {}", p.display()))
                    ),
                });
            }
            adam.step(&mut model.params, grads);
            let w = chunk.len() as f64;
            sums.total += w * values.total;
            sums.elbo += w * values.elbo;
            sums.kl += w * values.kl;
            sums.recon += w * values.recon;
            sums.cl += w * values.cl;
        }
        let n = order.len() as f64;
        let losses = LossValues {
            total: sums.total / n,
            elbo: sums.elbo / n,
            kl: sums.kl / n,
            recon: sums.recon / n,
            cl: sums.cl / n,
        };
        log::debug!("seed {seed} epoch {epoch}: {losses:?}");
        epochs.push(EpochRecord { epoch, losses });

        if epoch % cfg.train.eval_every == 0 || epoch == cfg.train.epochs {
            let npmi = validation_npmi(&model, corpus, &reference, cfg.train.top_n)?;
            log::info!("seed {seed} epoch {epoch}: {} NPMI {npmi:.4}", reference.description);
            validation.push(ValidationPoint { epoch, npmi });
            if best.0 == 0 || npmi > best.1 {
                best = (epoch, npmi, model.clone());
            }
        }
    }

    let (best_epoch, best_validation_npmi, best_model) = best;
    let best_checkpoint = save(&best_model, "best.json")?;
    Ok(TrainOutcome {
        model: best_model,
        record: RunRecord {
            seed,
            ablation: cfg.train.ablation,
            config_hash,
            epochs,
            validation,
            best_epoch,
            best_validation_npmi,
            best_checkpoint,
            wall_time_secs: Some(started.elapsed().as_secs_f64()),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub topics: TopicList,
    /// Document-level NPMI against the training split.
    pub coherence: CoherenceReport,
    /// Random-forest test accuracy when every train/test document is labelled.
    pub accuracy: Option<f64>,
}

/// Final metrics of a trained model.
pub fn evaluate(model: &Gctm, data: &TrainData<'_>, cfg: &GctmConfig, seed: u64, with_classification: bool) -> Result<EvalSummary> {
    let corpus = data.corpus;
    let topics = extract_topics(model.beta(), corpus.vocabulary(), cfg.train.top_n)?;
    let reference = CoherenceReference::new(corpus, &corpus.split_indices(Split::Train), "train")?;
    let coherence = topic_coherence_npmi(&topics, &reference);
    let accuracy = if with_classification {
        let train = export_representations(model, corpus, data.features, &corpus.split_indices(Split::Train))?;
        let test = export_representations(model, corpus, data.features, &corpus.split_indices(Split::Test))?;
        match (&train.labels, &test.labels) {
            (Some(a), Some(b)) if !b.is_empty() => Some(classify(&train.theta, a, &test.theta, b, seed)?),
            _ => None,
        }
    } else {
        None
    };
    Ok(EvalSummary {
        topics,
        coherence,
        accuracy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub record: RunRecord,
    pub eval: EvalSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiSeedReport {
    pub runs: Vec<SeedRun>,
    pub failures: Vec<SeedFailure>,
    pub npmi: MetricReport,
    pub accuracy: Option<MetricReport>,
}

impl MultiSeedReport {
    /// Aggregates completed runs; `runs` may come in any order.
    pub fn from_runs(mut runs: Vec<SeedRun>, failures: Vec<SeedFailure>, config_hash: &str) -> Self {
        runs.sort_by_key(|r| r.record.seed);
        let npmi = MetricReport::new(
            "npmi",
            runs.iter()
                .map(|r| SeedValue {
                    seed: r.record.seed,
                    value: r.eval.coherence.mean,
                })
                .collect(),
            config_hash,
        );
        let acc: Option<Vec<SeedValue>> = runs
            .iter()
            .map(|r| {
                r.eval.accuracy.map(|a| SeedValue {
                    seed: r.record.seed,
                    value: a,
                })
            })
            .collect();
        let accuracy = acc
            .filter(|a| !a.is_empty())
            .map(|a| MetricReport::new("accuracy", a, config_hash));
        Self {
            runs,
            failures,
            npmi,
            accuracy,
        }
    }
}

/// Trains and evaluates one model per seed in `seeds`. A failing seed is
/// recorded and skipped; the run fails only if every seed does.
pub fn run_multi_seed(
    data: &TrainData<'_>,
    cfg: &GctmConfig,
    seeds: &[u64],
    with_classification: bool,
    checkpoint_root: Option<&Path>,
) -> Result<MultiSeedReport> {
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config(format!("seeds must be distinct: {seeds:?}")));
    }
    if seeds.is_empty() {
        return Err(Error::Config("no seeds given".into()));
    }
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for &seed in seeds {
        let dir = checkpoint_root.map(|r| r.join(format!("seed-{seed}")));
        let result = train(data, cfg, seed, dir.as_deref())
            .and_then(|out| Ok(SeedRun {
                eval: evaluate(&out.model, data, cfg, seed, with_classification)?,
                record: out.record,
            }));
        match result {
            Ok(run) => runs.push(run),
            Err(e @ (Error::Config(_) | Error::Dimension(_))) => return Err(e),
            Err(e) => {
                log::error!("seed {seed} failed: {e}");
                failures.push(SeedFailure {
                    seed,
                    error: e.to_string(),
                });
            }
        }
    }
    if runs.is_empty() {
        return Err(Error::Data(format!(
            "all {} seeds failed; first error: {}",
            failures.len(),
            failures[0].error
        )));
    }
    Ok(MultiSeedReport::from_runs(runs, failures, &cfg.config_hash()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub ablation: Ablation,
    pub report: MultiSeedReport,
}

/// The four loss variants on the same seeds and data order.
pub fn ablate(
    data: &TrainData<'_>,
    cfg: &GctmConfig,
    with_classification: bool,
    checkpoint_root: Option<&Path>,
) -> Result<Vec<AblationResult>> {
    Ablation::ALL
        .iter()
        .map(|&ablation| {
            let mut c = cfg.clone();
            c.train.ablation = ablation;
            let root = checkpoint_root.map(|r| r.join(ablation.to_string()));
            Ok(AblationResult {
                ablation,
                report: run_multi_seed(data, &c, &cfg.train.seeds, with_classification, root.as_deref())?,
            })
        })
        .collect()
}
