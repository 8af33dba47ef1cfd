use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use verifkit_core::config::KvConfig;
use verifkit_core::eval::{compute_det, fa_breakdown, fuse, AttributeKind, Eer, ScoreSet, DEFAULT_FUSION_WEIGHTS};
use verifkit_core::extractor::{fine_tune, train, ExtractorArch, ExtractorModel, TrainConfig, TrainLog, TrainingSet};
use verifkit_core::features::{extract_fbank, feature_path, read_raw_audio, FbankConfig};
use verifkit_core::matrix::{write_embeddings, write_matrix};
use verifkit_core::plda::{adapt, fit_plda, fit_preprocess, AdaptConfig, EmConfig, PreprocessOptions};
use verifkit_core::trials::{build_enrolments, generate_trials, score_trials, RestrictionSet, SectionEMode};
use verifkit_core::{Error, FeatureMatrix, Manifest, Result};

use crate::report::{ConditionResult, FusedResult, Report};
use crate::units::{embed_for_scoring, group_by_speaker, labelled, load_features, preprocess};
use crate::{StageError, StageExt};

/// Which of the three systems the run builds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SystemKind {
    /// Extractor and PLDA from the training set only.
    #[default]
    Baseline,
    /// Baseline PLDA adapted to the in-domain set without labels.
    Adapt,
    /// Extractor fine-tuned on the labelled in-domain set, PLDA refit on it.
    FineTune,
}

impl SystemKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SystemKind::Baseline => "baseline",
            SystemKind::Adapt => "adapt",
            SystemKind::FineTune => "fine-tune",
        }
    }
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SystemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(SystemKind::Baseline),
            "adapt" => Ok(SystemKind::Adapt),
            "fine-tune" => Ok(SystemKind::FineTune),
            _ => Err(Error::UnknownToken {
                kind: "system",
                token: s.to_string(),
            }),
        }
    }
}

/// Display name of a restriction set: `all`, or its flags joined by `+`
/// (`gender+L1+>grade`).
pub fn condition_name(r: &RestrictionSet) -> String {
    let mut parts = Vec::new();
    if r.gender {
        parts.push("gender");
    }
    if r.l1 {
        parts.push("L1");
    }
    if r.grade_equal {
        parts.push("grade");
    }
    if r.grade_higher {
        parts.push(">grade");
    }
    if parts.is_empty() {
        "all".into()
    } else {
        parts.join("+")
    }
}

/// File-name form of a condition name.
pub fn condition_slug(name: &str) -> String {
    name.replace(">grade", "gtgrade").replace('+', "_")
}

/// `;`-separated restriction sets, each in the comma form accepted by
/// [`RestrictionSet`]'s parser. `standard` expands to the six evaluation
/// conditions.
pub fn parse_conditions(text: &str) -> Result<Vec<(String, RestrictionSet)>> {
    let mut out: Vec<(String, RestrictionSet)> = Vec::new();
    for item in text.split(';').map(str::trim).filter(|s| !s.is_empty()) {
        let sets: Vec<RestrictionSet> = if item == "standard" {
            RestrictionSet::evaluation_conditions().iter().map(|(_, r)| *r).collect()
        } else {
            vec![item.parse()?]
        };
        for r in sets {
            let name = condition_name(&r);
            if out.iter().any(|(n, _)| *n == name) {
                return Err(Error::InvalidArgument(format!("condition `{name}` listed twice")));
            }
            out.push((name, r));
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument("no trial conditions configured".into()));
    }
    Ok(out)
}

const UNDEFINED_EER: Eer = Eer {
    rate: f64::NAN,
    threshold: f64::NAN,
};

pub const PIPELINE_KEYS: &[&str] = &[
    "train_manifest",
    "train_features",
    "eval_manifest",
    "eval_features",
    "in_domain_manifest",
    "in_domain_features",
    "audio_base",
    "num_filters",
    "frame_length_ms",
    "frame_shift_ms",
    "fft_size",
    "low_freq",
    "high_freq",
    "preemphasis",
    "extractor_model",
    "preset",
    "learning_rate",
    "momentum",
    "minibatch_size",
    "segment_frames",
    "epochs",
    "crops_per_recording",
    "fine_tune_epochs",
    "fine_tune_learning_rate",
    "lda_dim",
    "length_norm",
    "em_iterations",
    "em_tolerance",
    "system",
    "alpha_within",
    "alpha_between",
    "conditions",
    "section_e",
    "breakdown",
    "breakdown_condition",
    "fuse_with",
    "fusion_weights",
    "seed",
    "out_dir",
    "jobs",
];

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub train_manifest: PathBuf,
    /// `None` extracts features from audio under `audio_base`.
    pub train_features: Option<PathBuf>,
    pub eval_manifest: PathBuf,
    pub eval_features: Option<PathBuf>,
    /// Labelled target-domain data for adaptation or fine-tuning.
    pub in_domain_manifest: Option<PathBuf>,
    pub in_domain_features: Option<PathBuf>,
    pub audio_base: Option<PathBuf>,
    pub fbank: FbankConfig,
    /// Pre-trained extractor; skips extractor training when set.
    pub extractor_model: Option<PathBuf>,
    pub preset: String,
    pub train: TrainConfig,
    pub fine_tune_epochs: usize,
    pub fine_tune_learning_rate: f64,
    pub preprocess: PreprocessOptions,
    pub em: EmConfig,
    pub system: SystemKind,
    pub adapt: AdaptConfig,
    pub conditions: Vec<(String, RestrictionSet)>,
    pub section_e: SectionEMode,
    pub breakdown: Vec<AttributeKind>,
    /// Condition whose EER threshold drives the breakdown tables.
    pub breakdown_condition: Option<String>,
    /// Output directory of a second run whose scores are fused with these.
    pub fuse_with: Option<PathBuf>,
    pub fusion_weights: (f64, f64),
    pub seed: u64,
    pub out_dir: PathBuf,
    pub jobs: usize,
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl PipelineConfig {
    /// Builds a configuration from flat keys. Relative paths resolve
    /// against `base`; `seed` falls back to `default_seed`.
    pub fn from_kv(kv: &KvConfig, base: &Path, default_seed: u64) -> Result<Self> {
        kv.check_keys(PIPELINE_KEYS)?;
        let path = |k: &str| kv.get(k).filter(|v| !v.is_empty()).map(|v| resolve(base, v));
        let required = |k: &str| path(k).ok_or_else(|| Error::InvalidArgument(format!("missing config key `{k}`")));
        let seed = kv.get_or("seed", default_seed)?;
        let mut train = TrainConfig::from_kv(kv, &TrainConfig::default())?;
        train.rng_seed = seed;
        train.jobs = kv.get_or("jobs", 1usize)?;
        let fbank_kv = {
            let mut f = KvConfig::new();
            for (k, v) in kv.iter().filter(|(k, _)| FbankConfig::KEYS.contains(k)) {
                f.set(k, v);
            }
            f
        };
        let weights: Vec<f64> = kv
            .get_list("fusion_weights")?
            .unwrap_or_else(|| vec![DEFAULT_FUSION_WEIGHTS.0, DEFAULT_FUSION_WEIGHTS.1]);
        if weights.len() != 2 {
            return Err(Error::InvalidArgument("fusion_weights takes two values".into()));
        }
        let adapt_cfg = AdaptConfig::from_kv(kv)?;
        adapt_cfg.validate()?;
        let cfg = PipelineConfig {
            train_manifest: required("train_manifest")?,
            train_features: path("train_features"),
            eval_manifest: required("eval_manifest")?,
            eval_features: path("eval_features"),
            in_domain_manifest: path("in_domain_manifest"),
            in_domain_features: path("in_domain_features"),
            audio_base: path("audio_base"),
            fbank: FbankConfig::from_kv(&fbank_kv)?,
            extractor_model: path("extractor_model"),
            preset: kv.get("preset").unwrap_or("desk").to_string(),
            fine_tune_epochs: kv.get_or("fine_tune_epochs", train.epochs)?,
            fine_tune_learning_rate: kv.get_or("fine_tune_learning_rate", train.learning_rate)?,
            train,
            preprocess: PreprocessOptions {
                lda_dim: kv.get_parsed("lda_dim")?,
                length_norm: kv.get_or("length_norm", true)?,
            },
            em: EmConfig::from_kv(kv)?,
            system: kv.get_or("system", SystemKind::Baseline)?,
            adapt: adapt_cfg,
            conditions: parse_conditions(kv.get("conditions").unwrap_or("none;standard"))?,
            section_e: kv.get_or("section_e", SectionEMode::Concatenated)?,
            breakdown: kv.get_list("breakdown")?.unwrap_or_else(|| vec![AttributeKind::Grade, AttributeKind::L1]),
            breakdown_condition: kv.get("breakdown_condition").map(String::from),
            fuse_with: path("fuse_with"),
            fusion_weights: (weights[0], weights[1]),
            seed,
            out_dir: path("out_dir").unwrap_or_else(|| base.join("verifkit-out")),
            jobs: kv.get_or("jobs", 1usize)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.jobs == 0 {
            return Err(Error::InvalidArgument("jobs must be at least 1".into()));
        }
        ExtractorArch::preset(&self.preset, 1, 2)?;
        if self.system != SystemKind::Baseline && self.in_domain_manifest.is_none() {
            return Err(Error::InvalidArgument(format!(
                "system `{}` needs `in_domain_manifest`",
                self.system
            )));
        }
        if let Some(name) = &self.breakdown_condition {
            if !self.conditions.iter().any(|(n, _)| n == name) {
                return Err(Error::InvalidArgument(format!("breakdown condition `{name}` is not configured")));
            }
        }
        Ok(())
    }

    /// Canonical flat form: every set key, defaults included.
    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        let opt = |kv: &mut KvConfig, k: &str, v: Option<String>| {
            if let Some(v) = v {
                kv.set(k, v);
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        kv.set("train_manifest", self.train_manifest.display());
        opt(&mut kv, "train_features", path(&self.train_features));
        kv.set("eval_manifest", self.eval_manifest.display());
        opt(&mut kv, "eval_features", path(&self.eval_features));
        opt(&mut kv, "in_domain_manifest", path(&self.in_domain_manifest));
        opt(&mut kv, "in_domain_features", path(&self.in_domain_features));
        opt(&mut kv, "audio_base", path(&self.audio_base));
        let f = &self.fbank;
        kv.set("num_filters", f.num_filters);
        kv.set("frame_length_ms", f.frame_length_ms);
        kv.set("frame_shift_ms", f.frame_shift_ms);
        opt(&mut kv, "fft_size", f.fft_size.map(|v| v.to_string()));
        kv.set("low_freq", f.low_freq);
        opt(&mut kv, "high_freq", f.high_freq.map(|v| v.to_string()));
        kv.set("preemphasis", f.preemphasis);
        opt(&mut kv, "extractor_model", path(&self.extractor_model));
        kv.set("preset", &self.preset);
        let t = &self.train;
        kv.set("learning_rate", t.learning_rate);
        kv.set("momentum", t.momentum);
        kv.set("minibatch_size", t.minibatch_size);
        kv.set("segment_frames", t.segment_frames);
        kv.set("epochs", t.epochs);
        kv.set("crops_per_recording", t.crops_per_recording);
        kv.set("fine_tune_epochs", self.fine_tune_epochs);
        kv.set("fine_tune_learning_rate", self.fine_tune_learning_rate);
        opt(&mut kv, "lda_dim", self.preprocess.lda_dim.map(|v| v.to_string()));
        kv.set("length_norm", self.preprocess.length_norm);
        kv.set("em_iterations", self.em.iterations);
        kv.set("em_tolerance", self.em.tolerance);
        kv.set("system", self.system);
        kv.set("alpha_within", self.adapt.alpha_within);
        kv.set("alpha_between", self.adapt.alpha_between);
        kv.set(
            "conditions",
            self.conditions.iter().map(|(_, r)| r.to_string()).collect::<Vec<_>>().join(";"),
        );
        kv.set(
            "section_e",
            match self.section_e {
                SectionEMode::Concatenated => "concatenated",
                SectionEMode::PerResponse => "per-response",
            },
        );
        kv.set(
            "breakdown",
            self.breakdown.iter().map(|a| a.as_str()).collect::<Vec<_>>().join(","),
        );
        opt(&mut kv, "breakdown_condition", self.breakdown_condition.clone());
        opt(&mut kv, "fuse_with", path(&self.fuse_with));
        kv.set("fusion_weights", format!("{},{}", self.fusion_weights.0, self.fusion_weights.1));
        kv.set("seed", self.seed);
        kv.set("out_dir", self.out_dir.display());
        kv.set("jobs", self.jobs);
        kv
    }

    /// SHA-256 over the canonical configuration, leaving out the settings
    /// that cannot change results (`jobs`, `out_dir`).
    pub fn config_hash(&self) -> String {
        let text: String = self
            .to_kv()
            .iter()
            .filter(|(k, _)| *k != "jobs" && *k != "out_dir")
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    fn breakdown_condition(&self) -> &str {
        match &self.breakdown_condition {
            Some(n) => n,
            None => self
                .conditions
                .iter()
                .find(|(n, _)| n == "gender")
                .unwrap_or(&self.conditions[0])
                .0
                .as_str(),
        }
    }
}

struct DataSet {
    name: &'static str,
    manifest: Manifest,
    features: BTreeMap<String, FeatureMatrix>,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads a manifest and its features, extracting them from audio first
/// when no feature directory is configured.
fn load_set(cfg: &PipelineConfig, name: &'static str, manifest: &Path, features: Option<&Path>) -> Result<DataSet> {
    let m = Manifest::read(manifest)?;
    let feats = match features {
        Some(dir) => load_features(&m, dir)?,
        None => {
            let base = cfg.audio_base.as_deref().ok_or_else(|| {
                Error::InvalidArgument(format!("`{name}` has neither a feature directory nor `audio_base`"))
            })?;
            let dir = cfg.out_dir.join("features").join(name);
            create_dir(&dir)?;
            let feats = extract_manifest_features(&m, base, &cfg.fbank, cfg.jobs)?;
            for (id, f) in &feats {
                write_matrix(feature_path(&dir, id), f)?;
            }
            log::info!(target: "features", "{name}: extracted {} feature matrices", feats.len());
            feats
        }
    };
    Ok(DataSet {
        name,
        manifest: m,
        features: feats,
    })
}

/// Filterbank features of every manifest recording.
pub(crate) fn extract_manifest_features(
    manifest: &Manifest,
    audio_base: &Path,
    cfg: &FbankConfig,
    jobs: usize,
) -> Result<BTreeMap<String, FeatureMatrix>> {
    let run = |r: &verifkit_core::RecordingRecord| -> Result<(String, FeatureMatrix)> {
        let signal = read_raw_audio(audio_base, &r.source_path)?;
        Ok((r.recording_id.clone(), extract_fbank(&signal, cfg)?))
    };
    let recs = manifest.recordings();
    let results: Vec<Result<(String, FeatureMatrix)>> = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
        .install(|| recs.par_iter().map(run).collect());
    results.into_iter().collect()
}

fn training_set(data: &DataSet) -> Result<TrainingSet> {
    TrainingSet::from_manifest(&data.manifest, |id| {
        data.features
            .get(id)
            .cloned()
            .ok_or_else(|| Error::Precondition(format!("no features for recording `{id}`")))
    })
}

fn summarize_log(log: &TrainLog) -> String {
    match log.epochs.last() {
        Some(e) => format!("epochs={}\tfinal_loss={:.6}\tfinal_accuracy={:.4}", log.epochs.len(), e.loss, e.accuracy),
        None => "epochs=0".into(),
    }
}

/// Runs every stage and writes `report.txt` plus the per-stage artifacts
/// under `out_dir`. Artifacts of completed stages stay on disk when a
/// later stage fails.
pub fn run_pipeline(cfg: &PipelineConfig) -> std::result::Result<Report, StageError> {
    let out = &cfg.out_dir;
    create_dir(out).stage("setup")?;
    let mut stages: Vec<(String, String)> = Vec::new();
    let config_hash = cfg.config_hash();
    write_text(&out.join("config.txt"), &cfg.to_kv().to_text()).stage("setup")?;
    log::info!(target: "pipeline", "system {} seed {} config {}", cfg.system, cfg.seed, &config_hash[..12]);

    let train_set = load_set(cfg, "train", &cfg.train_manifest, cfg.train_features.as_deref()).stage("features")?;
    let eval_set = load_set(cfg, "eval", &cfg.eval_manifest, cfg.eval_features.as_deref()).stage("features")?;
    let in_domain = match (&cfg.in_domain_manifest, cfg.system) {
        (Some(m), SystemKind::Adapt | SystemKind::FineTune) => {
            Some(load_set(cfg, "in_domain", m, cfg.in_domain_features.as_deref()).stage("features")?)
        }
        _ => None,
    };
    for set in [Some(&train_set), Some(&eval_set), in_domain.as_ref()].into_iter().flatten() {
        stages.push((
            "features".into(),
            format!(
                "{}\tspeakers={}\trecordings={}",
                set.name,
                set.manifest.speakers().len(),
                set.manifest.recordings().len()
            ),
        ));
    }

    // extractor
    let mut model = match &cfg.extractor_model {
        Some(path) => {
            let m = ExtractorModel::load(path).stage("extractor")?;
            stages.push(("extractor".into(), "loaded".into()));
            m
        }
        None => {
            let data = training_set(&train_set).stage("extractor")?;
            let dim = data.items[0].1.cols();
            let arch = ExtractorArch::preset(&cfg.preset, dim, data.num_speakers()).stage("extractor")?;
            let mut m = ExtractorModel::new(&arch, cfg.seed).stage("extractor")?;
            let log = train(&mut m, &data, &cfg.train).stage("extractor")?;
            write_text(&out.join("train_log.tsv"), &log.to_tsv()).stage("extractor")?;
            stages.push((
                "extractor".into(),
                format!("trained\tspeakers={}\t{}", data.num_speakers(), summarize_log(&log)),
            ));
            m
        }
    };
    model.save(out.join("extractor.svx")).stage("extractor")?;
    if cfg.system == SystemKind::FineTune {
        let target = in_domain.as_ref().expect("validated");
        let data = training_set(target).stage("fine-tune")?;
        let tcfg = TrainConfig {
            epochs: cfg.fine_tune_epochs,
            learning_rate: cfg.fine_tune_learning_rate,
            ..cfg.train.clone()
        };
        let (tuned, log) = fine_tune(&model, &data, &tcfg).stage("fine-tune")?;
        write_text(&out.join("fine_tune_log.tsv"), &log.to_tsv()).stage("fine-tune")?;
        tuned.save(out.join("extractor_tuned.svx")).stage("fine-tune")?;
        stages.push((
            "fine-tune".into(),
            format!("speakers={}\t{}", data.num_speakers(), summarize_log(&log)),
        ));
        model = tuned;
    }

    // embeddings and back end
    let plda_source = if cfg.system == SystemKind::FineTune {
        in_domain.as_ref().expect("validated")
    } else {
        &train_set
    };
    let (plda_emb, skipped) =
        embed_for_scoring(&model, &plda_source.manifest, &plda_source.features, SectionEMode::PerResponse, cfg.jobs)
            .stage("embeddings")?;
    stages.push((
        "embeddings".into(),
        format!("{}\tembedded={}\tskipped={}", plda_source.name, plda_emb.len(), skipped.len()),
    ));
    let (eval_emb, skipped) =
        embed_for_scoring(&model, &eval_set.manifest, &eval_set.features, cfg.section_e, cfg.jobs).stage("embeddings")?;
    write_embeddings(out.join("eval_embeddings.emb"), &eval_emb).stage("embeddings")?;
    stages.push((
        "embeddings".into(),
        format!("eval\tembedded={}\tskipped={}", eval_emb.len(), skipped.len()),
    ));

    let (xs, labels) = labelled(&plda_source.manifest, &plda_emb).stage("plda")?;
    let mut chain = fit_preprocess(&xs, &labels, &cfg.preprocess).stage("plda")?;
    let groups = group_by_speaker(&plda_source.manifest, &plda_emb, &chain).stage("plda")?;
    let fit = fit_plda(&groups, &cfg.em).stage("plda")?;
    let mut plda = fit.model;
    stages.push((
        "plda".into(),
        format!(
            "fit\tspeakers={}\tdim={}\titerations={}\tlog_likelihood={:.6}",
            groups.len(),
            plda.dim(),
            fit.log_likelihoods.len() - 1,
            fit.log_likelihoods.last().copied().unwrap_or(f64::NAN)
        ),
    ));
    if cfg.system == SystemKind::Adapt {
        let target = in_domain.as_ref().expect("validated");
        let (adapt_emb, _) =
            embed_for_scoring(&model, &target.manifest, &target.features, SectionEMode::PerResponse, cfg.jobs)
                .stage("adapt")?;
        let raw: Vec<Vec<f64>> = adapt_emb.iter().map(|e| e.to_f64()).collect();
        let d = chain.input_dim();
        let mut mean = nalgebra::DVector::zeros(d);
        for x in &raw {
            mean += nalgebra::DVector::from_column_slice(x);
        }
        mean /= raw.len().max(1) as f64;
        chain = chain.with_mean(mean).stage("adapt")?;
        let processed = raw.iter().map(|x| chain.apply(x)).collect::<Result<Vec<_>>>().stage("adapt")?;
        plda = adapt(&plda, &processed, &cfg.adapt).stage("adapt")?;
        stages.push(("adapt".into(), format!("embeddings={}", processed.len())));
    }
    plda.save(out.join("plda.svp")).stage("plda")?;
    chain.save(out.join("chain.svc")).stage("plda")?;

    // scoring
    let scorer = plda.scorer().stage("scoring")?;
    let processed = preprocess(&eval_emb, &chain).stage("scoring")?;
    let enrolments = build_enrolments(&eval_set.manifest, &processed, chain.target_norm()).stage("scoring")?;
    let scores_dir = out.join("scores");
    let det_dir = out.join("det");
    create_dir(&scores_dir).stage("scoring")?;
    create_dir(&det_dir).stage("eval")?;
    let mut conditions = Vec::new();
    let mut score_sets: Vec<ScoreSet> = Vec::new();
    for (name, r) in &cfg.conditions {
        let trials = generate_trials(&eval_set.manifest, *r, cfg.section_e).stage("trials")?;
        let mut set = ScoreSet::default();
        let summary = score_trials(trials, &enrolments, &processed, &scorer, cfg.jobs, |t, s| set.push(t.clone(), s))
            .stage("scoring")?;
        let slug = condition_slug(name);
        let score_file = format!("scores/{slug}.tsv");
        write_text(&out.join(&score_file), &set.to_text()).stage("scoring")?;
        let (tar, non) = set.split();
        let (eer, det_file) = if tar.is_empty() || non.is_empty() {
            log::warn!(
                target: "eval",
                "{name}: {} target and {} nontarget trials; EER is undefined",
                tar.len(),
                non.len()
            );
            (UNDEFINED_EER, String::new())
        } else {
            let det = compute_det(&set).stage("eval")?;
            let det_file = format!("det/{slug}.tsv");
            det.write(out.join(&det_file)).stage("eval")?;
            log::info!(target: "eval", "{name}: EER {:.4}% over {} trials", 100.0 * det.eer().rate, set.len());
            (det.eer(), det_file)
        };
        conditions.push(ConditionResult {
            name: name.clone(),
            restrictions: *r,
            targets: tar.len() as u64,
            nontargets: non.len() as u64,
            skipped: summary.skipped,
            eer,
            score_file,
            det_file,
        });
        score_sets.push(set);
    }

    // fusion
    let mut fused = Vec::new();
    if let Some(other_dir) = &cfg.fuse_with {
        for ((name, _), set) in cfg.conditions.iter().zip(&score_sets) {
            let slug = condition_slug(name);
            let other = ScoreSet::read(other_dir.join("scores").join(format!("{slug}.tsv"))).stage("fusion")?;
            let f = fuse(set, &other, cfg.fusion_weights.0, cfg.fusion_weights.1).stage("fusion")?;
            let score_file = format!("scores/fused_{slug}.tsv");
            write_text(&out.join(&score_file), &f.to_text()).stage("fusion")?;
            let eer = match f.split() {
                (t, n) if t.is_empty() || n.is_empty() => UNDEFINED_EER,
                _ => compute_det(&f).stage("fusion")?.eer(),
            };
            fused.push(FusedResult {
                name: name.clone(),
                weights: cfg.fusion_weights,
                eer,
                score_file,
            });
        }
    }

    // breakdowns
    let mut breakdowns = Vec::new();
    let name = cfg.breakdown_condition();
    let idx = cfg.conditions.iter().position(|(n, _)| n == name).expect("validated");
    let threshold = conditions[idx].eer.threshold;
    if !threshold.is_finite() && !cfg.breakdown.is_empty() {
        log::warn!(target: "eval", "EER threshold of `{name}` is not finite; skipping breakdowns");
    } else if !cfg.breakdown.is_empty() {
        create_dir(&out.join("breakdown")).stage("eval")?;
        for attr in &cfg.breakdown {
            let table = fa_breakdown(&score_sets[idx], &eval_set.manifest, *attr, threshold).stage("eval")?;
            let file = format!("breakdown/{}_{}.tsv", attr.as_str(), condition_slug(name));
            table.write(out.join(&file)).stage("eval")?;
            breakdowns.push((name.to_string(), table, file));
        }
    }

    let report = Report {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config_hash,
        system: cfg.system.to_string(),
        stages,
        conditions,
        fused,
        breakdowns,
    };
    write_text(&out.join("report.txt"), &report.to_text()).stage("report")?;
    Ok(report)
}
