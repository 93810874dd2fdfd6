//! Run configuration and the end-to-end commands behind the command line.
//!
//! Every command is a plain function returning its artifacts, so the same
//! code path is available to library users, examples and tests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{
    Ablation, AttributeSpec, EncoderConfig, LossConfig, ModelConfig, TrainConfig, DEFAULT_LAYER_NORM_EPS,
};
use crate::encoders::{EncoderWeights, Vocab, ENCODER_LAYER_NORM_EPS, INIT_SCALE};
use crate::error::{Error, Result};
use crate::fusion::AlignmentScore;
use crate::io::cache::{embed_cache, load_cache};
use crate::io::container::TensorContainer;
use crate::io::dataset::{load_prompts, Dataset, PROMPTS_FILE};
use crate::io::synthetic::{generate_to_dir, SyntheticSpec};
use crate::metrics::{per_attribute_accuracy, MetricsReport};
use crate::model::{predict_all, zero_shot_scores, FeatureSet, FrozenEncoders, SampleFeatures, TrainableParams};
use crate::rng::Prng;
use crate::tensor::Tensor;
use crate::training::{self, gradient_check, EpochRecord, GradCheckOptions, GradCheckReport};

pub const WEIGHTS_FILE: &str = "weights.vlmw";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const ABLATION_JSON: &str = "ablation.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub encoder: EncoderConfig,
    /// Defaults to the encoder head count.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fusion_heads: Option<usize>,
    pub layer_norm_eps: f64,
    /// Seed of the frozen encoder weights when no weight file is given.
    pub encoder_seed: u64,
    /// Defaults to the dataset's `prompts.json`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attributes: Option<Vec<AttributeSpec>>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            fusion_heads: None,
            layer_norm_eps: DEFAULT_LAYER_NORM_EPS,
            encoder_seed: 0,
            attributes: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub encoder_weights: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vocab: Option<PathBuf>,
    /// Encoder-output cache for the training set; built on first use.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache: Option<PathBuf>,
}

/// JSON run configuration. Relative paths resolve against the config file's directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed of the trainable parameter initialization.
    pub seed: u64,
    pub model: ModelSection,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub paths: PathsConfig,
}

/// A parsed config together with the directory its paths are relative to.
#[derive(Clone, Debug)]
pub struct Session {
    pub config: RunConfig,
    pub base_dir: PathBuf,
}

impl Session {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { config, base_dir })
    }

    pub fn new(config: RunConfig, base_dir: impl Into<PathBuf>) -> Self {
        Self { config, base_dir: base_dir.into() }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn dataset_dir(&self) -> Result<PathBuf> {
        self.config
            .paths
            .dataset
            .as_deref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| Error::Config("paths.dataset is not set".into()))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(self.config.paths.output_dir.as_deref().unwrap_or(Path::new("run")))
    }

    /// Attributes from the config, else from `prompts.json` in `fallback_data`
    /// or the configured dataset.
    pub fn attributes(&self, fallback_data: Option<&Path>) -> Result<Vec<AttributeSpec>> {
        if let Some(a) = &self.config.model.attributes {
            return Ok(a.clone());
        }
        let dir = match fallback_data {
            Some(d) => d.to_path_buf(),
            None => self.dataset_dir()?,
        };
        load_prompts(dir.join(PROMPTS_FILE))
    }

    pub fn model_config(&self, attributes: Vec<AttributeSpec>) -> Result<ModelConfig> {
        let m = &self.config.model;
        let cfg = ModelConfig {
            encoder: m.encoder.clone(),
            fusion_heads: m.fusion_heads.unwrap_or(m.encoder.num_heads),
            layer_norm_eps: m.layer_norm_eps,
            attributes,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The config with every optional value filled in.
    pub fn resolved(&self, cfg: &ModelConfig) -> RunConfig {
        let mut r = self.config.clone();
        r.model.fusion_heads = Some(cfg.fusion_heads);
        r.model.attributes = Some(cfg.attributes.clone());
        if r.paths.output_dir.is_none() {
            r.paths.output_dir = Some(PathBuf::from("run"));
        }
        r
    }

    pub fn encoders(&self, cfg: &ModelConfig) -> Result<FrozenEncoders> {
        let enc = &cfg.encoder;
        let weights = match &self.config.paths.encoder_weights {
            Some(p) => EncoderWeights::from_container(enc, &TensorContainer::load(self.resolve(p))?)?,
            None => EncoderWeights::seeded(enc, self.config.model.encoder_seed)?,
        };
        let vocab = match &self.config.paths.vocab {
            Some(p) => Vocab::load(self.resolve(p))?,
            None => Vocab::from_texts(&cfg.attributes.iter().map(|a| a.prompt.as_str()).collect::<Vec<_>>()),
        };
        FrozenEncoders::new(weights, vocab)
    }

    /// Features of `dataset`, through the configured cache when `use_cache`.
    pub fn features(
        &self,
        dataset: &Dataset,
        cfg: &ModelConfig,
        encoders: &FrozenEncoders,
        use_cache: bool,
    ) -> Result<FeatureSet> {
        check_attributes(cfg, dataset)?;
        match (&self.config.paths.cache, use_cache) {
            (Some(p), true) => {
                let path = self.resolve(p);
                if path.exists() {
                    load_cache(&path, dataset, cfg)
                } else {
                    embed_cache(dataset, encoders, cfg, &path)
                }
            }
            _ => encoders.extract(dataset),
        }
    }
}

fn check_attributes(cfg: &ModelConfig, dataset: &Dataset) -> Result<()> {
    if dataset.attributes != cfg.attributes {
        return Err(Error::Config(
            "dataset prompts.json does not match the configured attributes".into(),
        ));
    }
    Ok(())
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

/// Choices the model makes that are not hyperparameters in the config.
pub fn resolved_defaults() -> serde_json::Value {
    json!({
        "activation": "gelu_exact",
        "alignment_image_embedding": "cls_token",
        "alignment_text_embedding": "mean_over_prompt_tokens",
        "encoder_init_std": INIT_SCALE,
        "encoder_layer_norm_eps": ENCODER_LAYER_NORM_EPS,
        "encoder_layer_norm": "post",
        "fusion_init": "normal(0, 1/d_model), gamma=1, beta=0",
        "head_init": "normal(0, 1/d_model), bias=0",
        "pooling": "mean_over_patches",
        "precision": "f64 compute, f32 storage",
        "prompt_padding": "none",
        "tie_break": "lowest_index",
        "zero_shot_scores_in_loss": false,
    })
}

pub fn cmd_gen_data(spec: &Path, out: &Path) -> Result<Dataset> {
    generate_to_dir(&SyntheticSpec::load(spec)?, out)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub output_dir: PathBuf,
    pub params: TrainableParams,
    pub ablation: Ablation,
    pub history: Vec<EpochRecord>,
    pub encoder_checksum_before: String,
    pub encoder_checksum_after: String,
}

struct Trained {
    params: TrainableParams,
    history: Vec<EpochRecord>,
}

fn fit(session: &Session, cfg: &ModelConfig, data: &FeatureSet, ablation: Ablation) -> Result<Trained> {
    let mut params = TrainableParams::init(cfg, session.config.seed);
    let train_cfg = TrainConfig { ablation, ..session.config.train.clone() };
    let history = training::train(&mut params, data, cfg, &train_cfg, &session.config.loss)?;
    Ok(Trained { params, history })
}

/// Trains on the configured dataset and writes weights, manifest and history
/// into the output directory.
pub fn cmd_train(config: &Path, ablation: Option<Ablation>) -> Result<TrainOutcome> {
    let session = Session::load(config)?;
    train_session(&session, ablation)
}

pub fn train_session(session: &Session, ablation: Option<Ablation>) -> Result<TrainOutcome> {
    let ablation = ablation.unwrap_or(session.config.train.ablation);
    let cfg = session.model_config(session.attributes(None)?)?;
    let dataset = Dataset::load(session.dataset_dir()?)?;
    let encoders = session.encoders(&cfg)?;
    let before = encoders.weights.checksum();
    let data = session.features(&dataset, &cfg, &encoders, true)?;
    let trained = fit(session, &cfg, &data, ablation)?;
    let after = encoders.weights.checksum();

    let out = session.output_dir();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    trained.params.to_container(ablation)?.save(out.join(WEIGHTS_FILE))?;
    write(&out.join(HISTORY_FILE), training::history_csv(&trained.history))?;
    let mut resolved = session.resolved(&cfg);
    resolved.train.ablation = ablation;
    let manifest = json!({
        "command": "train",
        "config": resolved,
        "ablation": ablation.as_str(),
        "seeds": {
            "parameter_init": session.config.seed,
            "batch_order": session.config.train.seed,
            "encoder": session.config.model.encoder_seed,
        },
        "resolved_defaults": resolved_defaults(),
        "encoder_checksum_before": before,
        "encoder_checksum_after": after,
        "num_samples": data.len(),
        "final_epoch": trained.history.last(),
    });
    write(&out.join(MANIFEST_FILE), to_json(&manifest))?;
    Ok(TrainOutcome {
        output_dir: out,
        params: trained.params,
        ablation,
        history: trained.history,
        encoder_checksum_before: before,
        encoder_checksum_after: after,
    })
}

/// Paths of the JSON and CSV halves of a report.
pub fn report_paths(report: &Path) -> (PathBuf, PathBuf) {
    if report.extension().is_some_and(|e| e == "csv") {
        (report.with_extension("json"), report.to_path_buf())
    } else {
        (report.to_path_buf(), report.with_extension("csv"))
    }
}

fn load_eval_inputs(
    session: &Session,
    weights: Option<&Path>,
    data: &Path,
) -> Result<(ModelConfig, FeatureSet, Option<(TrainableParams, Ablation)>)> {
    let cfg = session.model_config(session.attributes(Some(data))?)?;
    let params = weights
        .map(|w| TrainableParams::from_container(&cfg, &TensorContainer::load(w)?))
        .transpose()?;
    let dataset = Dataset::load(data)?;
    let encoders = session.encoders(&cfg)?;
    let features = session.features(&dataset, &cfg, &encoders, false)?;
    Ok((cfg, features, params))
}

/// Evaluates a weight file on a dataset directory; writes `report` as JSON
/// and its `.csv` sibling.
pub fn cmd_eval(config: &Path, weights: &Path, data: &Path, report: &Path) -> Result<MetricsReport> {
    let session = Session::load(config)?;
    let (cfg, features, params) = load_eval_inputs(&session, Some(weights), data)?;
    let (params, ablation) = params.expect("weights given");
    let metrics = training::evaluate(&params, &features, &cfg, ablation)?;
    let (json_path, csv_path) = report_paths(report);
    write(&json_path, metrics.to_json())?;
    write(&csv_path, metrics.to_csv())?;
    Ok(metrics)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub attribute: String,
    pub without_cross_attention: f64,
    pub with_cross_attention: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationReport {
    pub seed: u64,
    pub batch_order_seed: u64,
    pub rows: Vec<AblationRow>,
    pub average: AblationRow,
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("attribute,acc_without_cross_attention,acc_with_cross_attention,delta\n");
        for r in self.rows.iter().chain(std::iter::once(&self.average)) {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.attribute, r.without_cross_attention, r.with_cross_attention, r.delta
            ));
        }
        out
    }
}

/// Trains both variants from the same seeds on the configured dataset and
/// compares per-attribute accuracy on `data`.
pub fn cmd_ablate(config: &Path, data: &Path, report_dir: &Path) -> Result<AblationReport> {
    let session = Session::load(config)?;
    let cfg = session.model_config(session.attributes(None)?)?;
    let encoders = session.encoders(&cfg)?;
    let train_data = session.features(&Dataset::load(session.dataset_dir()?)?, &cfg, &encoders, true)?;
    let eval_data = session.features(&Dataset::load(data)?, &cfg, &encoders, false)?;

    let accuracy = |ablation: Ablation| -> Result<Vec<f64>> {
        let trained = fit(&session, &cfg, &train_data, ablation)?;
        let preds: Vec<Vec<usize>> = predict_all(&trained.params, &cfg, &eval_data, ablation)?
            .into_iter()
            .map(|row| row.into_iter().map(|p| p.class).collect())
            .collect();
        Ok(per_attribute_accuracy(&preds, &eval_data.labels, cfg.num_attributes()))
    };
    let without = accuracy(Ablation::NoCrossAttention)?;
    let with = accuracy(Ablation::Full)?;

    let rows: Vec<AblationRow> = cfg
        .attributes
        .iter()
        .zip(without.iter().zip(&with))
        .map(|(a, (&w0, &w1))| AblationRow {
            attribute: a.name.clone(),
            without_cross_attention: w0,
            with_cross_attention: w1,
            delta: w1 - w0,
        })
        .collect();
    let n = rows.len() as f64;
    let avg0 = without.iter().sum::<f64>() / n;
    let avg1 = with.iter().sum::<f64>() / n;
    let report = AblationReport {
        seed: session.config.seed,
        batch_order_seed: session.config.train.seed,
        rows,
        average: AblationRow {
            attribute: "AVERAGE".into(),
            without_cross_attention: avg0,
            with_cross_attention: avg1,
            delta: avg1 - avg0,
        },
    };
    write(&report_dir.join(ABLATION_CSV), report.to_csv())?;
    let manifest = json!({
        "command": "ablate",
        "config": session.resolved(&cfg),
        "resolved_defaults": resolved_defaults(),
        "encoder_checksum": encoders.weights.checksum(),
        "report": report,
    });
    write(&report_dir.join(ABLATION_JSON), to_json(&manifest))?;
    Ok(report)
}

/// Number of random samples in the gradient-check batch.
pub const GRADCHECK_SAMPLES: usize = 3;

/// Random features with the configured shapes and three-token prompts.
pub fn random_features(cfg: &ModelConfig, samples: usize, seed: u64) -> FeatureSet {
    let d = cfg.d_model();
    let n = cfg.encoder.num_patches();
    let mut rng = Prng::new(seed);
    let mut normal = |shape: &[usize]| {
        let len = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..len).map(|_| rng.normal_pair().0).collect()).expect("shape")
    };
    let text = (0..cfg.num_attributes())
        .map(|_| normal(&[3.min(cfg.encoder.max_tokens), d]))
        .collect();
    let samples_vec: Vec<SampleFeatures> = (0..samples)
        .map(|_| SampleFeatures { cls: normal(&[d]), f_img: normal(&[n, d]) })
        .collect();
    let labels = (0..samples)
        .map(|_| cfg.attributes.iter().map(|a| rng.below(a.num_classes)).collect())
        .collect();
    FeatureSet {
        ids: (0..samples).map(|i| format!("g{i}")).collect(),
        samples: samples_vec,
        text,
        labels,
    }
}

/// Central-difference check of the analytic gradients on random features.
/// Tensors with many entries are subsampled.
pub fn cmd_gradcheck(config: &Path, corrupt_gradient: bool) -> Result<GradCheckReport> {
    let session = Session::load(config)?;
    let attrs = match session.attributes(None) {
        Ok(a) => a,
        Err(_) => default_gradcheck_attributes(),
    };
    let cfg = session.model_config(attrs)?;
    gradcheck_model(&cfg, &session.config.loss, session.config.seed, session.config.train.ablation, corrupt_gradient)
}

pub fn gradcheck_model(
    cfg: &ModelConfig,
    loss: &LossConfig,
    seed: u64,
    ablation: Ablation,
    corrupt_gradient: bool,
) -> Result<GradCheckReport> {
    let data = random_features(cfg, GRADCHECK_SAMPLES, seed ^ 0x4752_4144);
    let params = TrainableParams::init(cfg, seed);
    let batch: Vec<usize> = (0..data.len()).collect();
    let opts = GradCheckOptions {
        max_entries_per_tensor: (cfg.d_model() > 16).then_some(48),
        seed,
        corrupt_gradient,
        ..GradCheckOptions::default()
    };
    gradient_check(&params, &data, &batch, cfg, loss, ablation, &opts)
}

fn default_gradcheck_attributes() -> Vec<AttributeSpec> {
    vec![
        AttributeSpec { name: "hat".into(), prompt: "hat ?".into(), num_classes: 2 },
        AttributeSpec { name: "color".into(), prompt: "color ?".into(), num_classes: 3 },
    ]
}

/// Cosine alignment per sample and attribute, written as
/// `sample_id,attribute,score`. A weight file, when given, is only checked
/// for compatibility.
pub fn cmd_zeroshot(
    config: &Path,
    weights: Option<&Path>,
    data: &Path,
    report: &Path,
) -> Result<Vec<(String, Vec<AlignmentScore>)>> {
    let session = Session::load(config)?;
    let (cfg, features, _) = load_eval_inputs(&session, weights, data)?;
    let scores = zero_shot_scores(&features)?;
    let mut csv = String::from("sample_id,attribute,score\n");
    for (id, row) in features.ids.iter().zip(&scores) {
        for s in row {
            csv.push_str(&format!("{id},{},{}\n", cfg.attributes[s.attribute].name, s.score));
        }
    }
    write(report, csv)?;
    Ok(features.ids.into_iter().zip(scores).collect())
}
