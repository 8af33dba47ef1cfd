use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use verifkit_cli::units::{embed_for_scoring, group_by_speaker, labelled, load_features, preprocess};
use verifkit_cli::{exit_code, logging, resolve_seed, run_pipeline, PipelineConfig, StageError, SystemKind};
use verifkit_core::config::KvConfig;
use verifkit_core::eval::{
    compute_det, fa_breakdown, fuse, stratified_sample, AttributeKind, ScoreSet, DEFAULT_FUSION_WEIGHTS,
};
use verifkit_core::extractor::{fine_tune, train, ExtractorArch, ExtractorModel, TrainConfig, TrainingSet};
use verifkit_core::features::{
    double_corpus, extract_fbank, feature_path, read_raw_audio, AugmentPolicy, FbankConfig,
};
use verifkit_core::matrix::{read_embeddings, write_embeddings, write_matrix};
use verifkit_core::plda::{adapt, fit_plda, fit_preprocess, AdaptConfig, EmConfig, PldaModel, PreprocessChain, PreprocessOptions};
use verifkit_core::synth::{sample_corpus, sample_plda, SynthCorpusConfig, SynthPldaConfig};
use verifkit_core::trials::{
    build_enrolments, count_trials, generate_trials, read_trials, score_trials, write_trials, RestrictionSet,
    SectionEMode,
};
use verifkit_core::{Error, Manifest, Result};

/// Speaker verification toolkit: features, embedding extractor, PLDA
/// back end, trial lists and evaluation.
#[derive(Parser)]
#[command(name = "verifkit", version, about)]
struct Cli {
    /// Log level for standard error (RUST_LOG overrides).
    #[arg(long, global = true, default_value = "info")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filterbank extraction and waveform augmentation.
    #[command(subcommand)]
    Features(FeaturesCmd),
    /// Train, fine-tune and run the embedding extractor.
    #[command(subcommand)]
    Extractor(ExtractorCmd),
    /// Fit, adapt and score with the PLDA back end.
    #[command(subcommand)]
    Plda(PldaCmd),
    /// Generate and count verification trials.
    #[command(subcommand)]
    Trials(TrialsCmd),
    /// Error rates, DET curves, breakdowns and fusion.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Synthetic data with known ground truth.
    #[command(subcommand)]
    Synth(SynthCmd),
    /// End-to-end runs.
    #[command(subcommand)]
    Pipeline(PipelineCmd),
}

#[derive(Args)]
struct Jobs {
    /// Worker threads; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct Overrides {
    /// Flat key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides a configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Overrides {
    fn load(&self) -> Result<KvConfig> {
        let mut kv = match &self.config {
            Some(p) => KvConfig::read(p)?,
            None => KvConfig::new(),
        };
        for item in &self.set {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("--set expects KEY=VALUE, got `{item}`")))?;
            kv.set(k.trim(), v.trim());
        }
        Ok(kv)
    }
}

#[derive(Subcommand)]
enum FeaturesCmd {
    /// Log mel filterbank features for every manifest recording.
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        config: Overrides,
        #[arg(long)]
        out_dir: PathBuf,
        /// Directory audio paths are relative to; defaults to the manifest's.
        #[arg(long)]
        audio_base: Option<PathBuf>,
        #[command(flatten)]
        jobs: Jobs,
    },
    /// Writes one augmented copy of every recording and a doubled manifest.
    Augment {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        out_manifest: PathBuf,
        #[arg(long)]
        audio_base: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ExtractorCmd {
    /// Trains a new extractor on a labelled manifest.
    Train {
        /// Output model file.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[command(flatten)]
        config: Overrides,
        /// Architecture preset: `desk` or `full`.
        #[arg(long, default_value = "desk")]
        preset: String,
        /// Loss log, `epoch<TAB>loss<TAB>accuracy`.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        jobs: Jobs,
    },
    /// Replaces the output layer and trains all layers on new speakers.
    FineTune {
        /// Source model.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[command(flatten)]
        config: Overrides,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        jobs: Jobs,
    },
    /// One embedding per recording (per section E unit when concatenated).
    Extract {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `concatenated` or `per-response`.
        #[arg(long, default_value = "concatenated")]
        section_e: SectionEMode,
        #[command(flatten)]
        jobs: Jobs,
    },
}

#[derive(Subcommand)]
enum PldaCmd {
    /// Fits the preprocessing chain and PLDA on labelled embeddings.
    Fit {
        #[arg(long)]
        embeddings: PathBuf,
        /// Maps embedding ids (recording ids) to speakers.
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        config: Overrides,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        chain: PathBuf,
    },
    /// Unsupervised adaptation to in-domain embeddings.
    Adapt {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[command(flatten)]
        config: Overrides,
        #[arg(long)]
        out_model: PathBuf,
        #[arg(long)]
        out_chain: PathBuf,
    },
    /// Scores a trial list.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        /// Supplies the enrolment recordings of each speaker.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        jobs: Jobs,
    },
}

#[derive(Args)]
struct TrialArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated: gender, l1, grade, grade-higher; or none.
    #[arg(long, default_value = "none")]
    restrict: RestrictionSet,
    #[arg(long, default_value = "concatenated")]
    section_e: SectionEMode,
}

#[derive(Subcommand)]
enum TrialsCmd {
    Generate {
        #[command(flatten)]
        args: TrialArgs,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Prints target and nontarget counts.
    Count {
        #[command(flatten)]
        args: TrialArgs,
    },
}

#[derive(Subcommand)]
enum EvalCmd {
    /// Equal error rate and its threshold.
    Eer {
        #[arg(long)]
        scores: PathBuf,
    },
    /// DET curve as `threshold<TAB>fa<TAB>miss`.
    Det {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// False-alarm percentages by reference and impostor attribute.
    Breakdown {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// `grade` or `l1`.
        #[arg(long)]
        attribute: AttributeKind,
        /// Acceptance threshold; the EER threshold when absent.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Linear score fusion of two systems over the same trial list.
    Fuse {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Weights of a and b.
        #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [DEFAULT_FUSION_WEIGHTS.0, DEFAULT_FUSION_WEIGHTS.1])]
        weights: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Speaker subset with a fixed number per attribute group, balanced by gender.
    Sample {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        attribute: AttributeKind,
        #[arg(long)]
        per_group: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum SynthCmd {
    /// Embeddings drawn from a PLDA model.
    Plda {
        #[command(flatten)]
        config: Overrides,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Frame-level corpus: manifest plus feature files.
    Corpus {
        #[command(flatten)]
        config: Overrides,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Subcommand)]
enum PipelineCmd {
    /// Features through evaluation; writes report.txt to the output directory.
    Run {
        #[command(flatten)]
        config: Overrides,
        /// Adapt the PLDA to the in-domain set.
        #[arg(long, conflicts_with = "fine_tune")]
        adapt: bool,
        /// Fine-tune the extractor on the in-domain set.
        #[arg(long)]
        fine_tune: bool,
        /// Fuse with the scores of an earlier run.
        #[arg(long)]
        fuse_with: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Prints the hash of a resolved configuration.
    Hash {
        #[command(flatten)]
        config: Overrides,
    },
    /// Generates synthetic source, in-domain and evaluation data, then runs
    /// the baseline, adapted, fine-tuned and fused systems.
    Quickstart {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

enum Failure {
    Core(Error),
    Stage(StageError),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<StageError> for Failure {
    fn from(e: StageError) -> Self {
        Failure::Stage(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    logging::init(cli.log_level);
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Core(e)) => {
            log::error!(target: "verifkit", "{e}");
            ExitCode::from(exit_code(&e) as u8)
        }
        Err(Failure::Stage(e)) => {
            log::error!(target: "pipeline", "{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Command) -> std::result::Result<(), Failure> {
    match cmd {
        Command::Features(c) => features(c)?,
        Command::Extractor(c) => extractor(c)?,
        Command::Plda(c) => plda(c)?,
        Command::Trials(c) => trials(c)?,
        Command::Eval(c) => eval(c)?,
        Command::Synth(c) => synth(c)?,
        Command::Pipeline(c) => pipeline(c)?,
    }
    Ok(())
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p.display().to_string(), e))
}

fn write_text(p: &Path, text: &str) -> Result<()> {
    fs::write(p, text).map_err(|e| Error::io(p.display().to_string(), e))
}

fn parent_dir(p: &Path) -> PathBuf {
    p.parent().filter(|d| !d.as_os_str().is_empty()).map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."))
}

fn features(cmd: FeaturesCmd) -> Result<()> {
    match cmd {
        FeaturesCmd::Extract {
            manifest,
            config,
            out_dir,
            audio_base,
            jobs,
        } => {
            let m = Manifest::read(&manifest)?;
            let cfg = FbankConfig::from_kv(&config.load()?)?;
            let base = audio_base.unwrap_or_else(|| parent_dir(&manifest));
            create_dir(&out_dir)?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs.jobs.max(1))
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            let results: Vec<Result<()>> = pool.install(|| {
                use rayon::prelude::*;
                m.recordings()
                    .par_iter()
                    .map(|r| {
                        let signal = read_raw_audio(&base, &r.source_path)?;
                        write_matrix(feature_path(&out_dir, &r.recording_id), &extract_fbank(&signal, &cfg)?)
                    })
                    .collect()
            });
            results.into_iter().collect::<Result<()>>()?;
            log::info!(target: "features", "wrote {} feature files to {}", m.recordings().len(), out_dir.display());
        }
        FeaturesCmd::Augment {
            manifest,
            seed,
            out_dir,
            out_manifest,
            audio_base,
        } => {
            let m = Manifest::read(&manifest)?;
            let base = audio_base.unwrap_or_else(|| parent_dir(&manifest));
            let seed = resolve_seed(seed, 0)?;
            let doubled = double_corpus(&m, &base, &out_dir, &AugmentPolicy::default(), seed)?;
            for (id, e) in &doubled.failures {
                log::warn!(target: "features", "could not augment `{id}`: {e}");
            }
            doubled.manifest.write(&out_manifest)?;
            log::info!(
                target: "features",
                "augmented {} of {} recordings",
                doubled.specs.len(),
                m.recordings().len()
            );
        }
    }
    Ok(())
}

fn training_set(manifest: &Path, features: &Path) -> Result<TrainingSet> {
    TrainingSet::load(&Manifest::read(manifest)?, features)
}

fn train_config(config: &Overrides, seed: Option<u64>, jobs: usize) -> Result<TrainConfig> {
    let kv = config.load()?;
    kv.check_keys(TrainConfig::KEYS)?;
    let mut cfg = TrainConfig::from_kv(&kv, &TrainConfig::default())?;
    cfg.rng_seed = resolve_seed(seed, cfg.rng_seed)?;
    cfg.jobs = jobs.max(1);
    Ok(cfg)
}

fn extractor(cmd: ExtractorCmd) -> Result<()> {
    match cmd {
        ExtractorCmd::Train {
            model,
            manifest,
            features,
            config,
            preset,
            log: log_path,
            seed,
            jobs,
        } => {
            let cfg = train_config(&config, seed, jobs.jobs)?;
            let data = training_set(&manifest, &features)?;
            let dim = data.items[0].1.cols();
            let arch = ExtractorArch::preset(&preset, dim, data.num_speakers())?;
            let mut m = ExtractorModel::new(&arch, cfg.rng_seed)?;
            let log = train(&mut m, &data, &cfg)?;
            m.save(&model)?;
            if let Some(p) = log_path {
                write_text(&p, &log.to_tsv())?;
            }
        }
        ExtractorCmd::FineTune {
            model,
            manifest,
            features,
            config,
            out,
            log: log_path,
            seed,
            jobs,
        } => {
            let cfg = train_config(&config, seed, jobs.jobs)?;
            let source = ExtractorModel::load(&model)?;
            let data = training_set(&manifest, &features)?;
            let (tuned, log) = fine_tune(&source, &data, &cfg)?;
            tuned.save(&out)?;
            if let Some(p) = log_path {
                write_text(&p, &log.to_tsv())?;
            }
        }
        ExtractorCmd::Extract {
            model,
            manifest,
            features,
            out,
            section_e,
            jobs,
        } => {
            let m = ExtractorModel::load(&model)?;
            let manifest = Manifest::read(&manifest)?;
            let feats = load_features(&manifest, &features)?;
            let (set, skipped) = embed_for_scoring(&m, &manifest, &feats, section_e, jobs.jobs)?;
            write_embeddings(&out, &set)?;
            log::info!(target: "extractor", "wrote {} embeddings, skipped {}", set.len(), skipped.len());
        }
    }
    Ok(())
}

fn plda(cmd: PldaCmd) -> Result<()> {
    match cmd {
        PldaCmd::Fit {
            embeddings,
            manifest,
            config,
            model,
            chain,
        } => {
            let kv = config.load()?;
            let mut known = vec!["lda_dim", "length_norm"];
            known.extend_from_slice(EmConfig::KEYS);
            kv.check_keys(&known)?;
            let options = PreprocessOptions {
                lda_dim: kv.get_parsed("lda_dim")?,
                length_norm: kv.get_or("length_norm", true)?,
            };
            let set = read_embeddings(&embeddings)?;
            let manifest = Manifest::read(&manifest)?;
            let (xs, labels) = labelled(&manifest, &set)?;
            let c = fit_preprocess(&xs, &labels, &options)?;
            let groups = group_by_speaker(&manifest, &set, &c)?;
            let fit = fit_plda(&groups, &EmConfig::from_kv(&kv)?)?;
            for (i, ll) in fit.log_likelihoods.iter().enumerate() {
                log::info!(target: "plda", "iteration {i} log-likelihood {ll:.6}");
            }
            fit.model.save(&model)?;
            c.save(&chain)?;
        }
        PldaCmd::Adapt {
            model,
            chain,
            embeddings,
            config,
            out_model,
            out_chain,
        } => {
            let kv = config.load()?;
            kv.check_keys(AdaptConfig::KEYS)?;
            let cfg = AdaptConfig::from_kv(&kv)?;
            let m = PldaModel::load(&model)?;
            let c = PreprocessChain::load(&chain)?;
            let set = read_embeddings(&embeddings)?;
            if set.is_empty() {
                return Err(Error::Precondition("no adaptation embeddings".into()));
            }
            let raw: Vec<Vec<f64>> = set.iter().map(|e| e.to_f64()).collect();
            let mut mean = nalgebra::DVector::zeros(c.input_dim());
            for x in &raw {
                mean += nalgebra::DVector::from_column_slice(x);
            }
            mean /= raw.len() as f64;
            let c = c.with_mean(mean)?;
            let xs = raw.iter().map(|x| c.apply(x)).collect::<Result<Vec<_>>>()?;
            adapt(&m, &xs, &cfg)?.save(&out_model)?;
            c.save(&out_chain)?;
        }
        PldaCmd::Score {
            model,
            chain,
            embeddings,
            manifest,
            trials,
            out,
            jobs,
        } => {
            let m = PldaModel::load(&model)?;
            let c = PreprocessChain::load(&chain)?;
            let processed: HashMap<String, Vec<f64>> = preprocess(&read_embeddings(&embeddings)?, &c)?;
            let manifest = Manifest::read(&manifest)?;
            let enrolments = build_enrolments(&manifest, &processed, c.target_norm())?;
            let list = read_trials(&trials)?;
            let file = fs::File::create(&out).map_err(|e| Error::io(out.display().to_string(), e))?;
            let mut w = BufWriter::new(file);
            let io_err = |e| Error::io(out.display().to_string(), e);
            let summary = score_trials(list.into_iter(), &enrolments, &processed, &m.scorer()?, jobs.jobs, |t, s| {
                writeln!(w, "{}", verifkit_core::trials::format_scored_trial(t, s)).map_err(io_err)
            })?;
            w.flush().map_err(io_err)?;
            log::info!(target: "plda", "scored {} trials, skipped {}", summary.scored, summary.skipped);
        }
    }
    Ok(())
}

fn trials(cmd: TrialsCmd) -> Result<()> {
    match cmd {
        TrialsCmd::Generate { args, out } => {
            let m = Manifest::read(&args.manifest)?;
            let stream = generate_trials(&m, args.restrict, args.section_e)?;
            let n = match out {
                Some(p) => {
                    let file = fs::File::create(&p).map_err(|e| Error::io(p.display().to_string(), e))?;
                    let mut w = BufWriter::new(file);
                    let n = write_trials(stream, &mut w)?;
                    w.flush().map_err(|e| Error::io(p.display().to_string(), e))?;
                    n
                }
                None => {
                    let stdout = std::io::stdout();
                    let mut w = BufWriter::new(stdout.lock());
                    let n = write_trials(stream, &mut w)?;
                    w.flush().map_err(|e| Error::io("stdout", e))?;
                    n
                }
            };
            log::info!(target: "trials", "{n} trials under restrictions {}", args.restrict);
        }
        TrialsCmd::Count { args } => {
            let m = Manifest::read(&args.manifest)?;
            let (t, n) = count_trials(&m, args.restrict, args.section_e)?;
            println!("targets\t{t}\nnontargets\t{n}");
        }
    }
    Ok(())
}

fn eval(cmd: EvalCmd) -> Result<()> {
    match cmd {
        EvalCmd::Eer { scores } => {
            let eer = compute_det(&ScoreSet::read(&scores)?)?.eer();
            println!("eer\t{}\nthreshold\t{}", eer.rate, eer.threshold);
        }
        EvalCmd::Det { scores, out } => compute_det(&ScoreSet::read(&scores)?)?.write(&out)?,
        EvalCmd::Breakdown {
            scores,
            manifest,
            attribute,
            threshold,
            out,
        } => {
            let set = ScoreSet::read(&scores)?;
            let threshold = match threshold {
                Some(t) => t,
                None => compute_det(&set)?.eer().threshold,
            };
            let table = fa_breakdown(&set, &Manifest::read(&manifest)?, attribute, threshold)?;
            match out {
                Some(p) => table.write(&p)?,
                None => print!("{}", table.to_tsv()),
            }
        }
        EvalCmd::Fuse { a, b, weights, out } => {
            let fused = fuse(&ScoreSet::read(&a)?, &ScoreSet::read(&b)?, weights[0], weights[1])?;
            write_text(&out, &fused.to_text())?;
        }
        EvalCmd::Sample {
            manifest,
            attribute,
            per_group,
            seed,
            out,
        } => {
            let sample = stratified_sample(&Manifest::read(&manifest)?, attribute, per_group, resolve_seed(seed, 0)?)?;
            sample.manifest.write(&out)?;
        }
    }
    Ok(())
}

fn synth(cmd: SynthCmd) -> Result<()> {
    match cmd {
        SynthCmd::Plda { config, out_dir } => {
            let mut kv = config.load()?;
            if kv.get("seed").is_none() {
                kv.set("seed", resolve_seed(None, 0)?);
            }
            let data = sample_plda(&SynthPldaConfig::from_kv(&kv)?)?;
            create_dir(&out_dir)?;
            write_embeddings(out_dir.join("embeddings.emb"), &data.embedding_set()?)?;
            write_text(&out_dir.join("labels.tsv"), &data.labels_tsv())?;
            data.model.save(out_dir.join("model.svp"))?;
        }
        SynthCmd::Corpus { config, out_dir } => {
            let mut kv = config.load()?;
            if kv.get("seed").is_none() {
                kv.set("seed", resolve_seed(None, 0)?);
            }
            sample_corpus(&SynthCorpusConfig::from_kv(&kv)?)?.write(&out_dir)?;
        }
    }
    Ok(())
}

fn pipeline_config(config: &Overrides, seed: Option<u64>) -> Result<PipelineConfig> {
    let kv = config.load()?;
    let base = match &config.config {
        Some(p) => parent_dir(p),
        None => PathBuf::from("."),
    };
    let mut cfg = PipelineConfig::from_kv(&kv, &base, resolve_seed(None, 0)?)?;
    if let Some(s) = seed {
        cfg.seed = s;
        cfg.train.rng_seed = s;
    }
    Ok(cfg)
}

fn pipeline(cmd: PipelineCmd) -> std::result::Result<(), Failure> {
    match cmd {
        PipelineCmd::Run {
            config,
            adapt,
            fine_tune,
            fuse_with,
            out_dir,
            seed,
            jobs,
        } => {
            let mut cfg = pipeline_config(&config, seed)?;
            if adapt {
                cfg.system = SystemKind::Adapt;
            }
            if fine_tune {
                cfg.system = SystemKind::FineTune;
            }
            if cfg.system != SystemKind::Baseline && cfg.in_domain_manifest.is_none() {
                return Err(Error::InvalidArgument(format!("system `{}` needs `in_domain_manifest`", cfg.system)).into());
            }
            if let Some(d) = fuse_with {
                cfg.fuse_with = Some(d);
            }
            if let Some(d) = out_dir {
                cfg.out_dir = d;
            }
            if let Some(j) = jobs {
                if j == 0 {
                    return Err(Error::InvalidArgument("jobs must be at least 1".into()).into());
                }
                cfg.jobs = j;
                cfg.train.jobs = j;
            }
            let report = run_pipeline(&cfg)?;
            print!("{}", report.to_text());
        }
        PipelineCmd::Hash { config } => println!("{}", pipeline_config(&config, None)?.config_hash()),
        PipelineCmd::Quickstart { out_dir, seed, jobs } => {
            let seed = resolve_seed(seed, 0)?;
            let summary = verifkit_cli::quickstart(&out_dir, seed, jobs)?;
            print!("{summary}");
        }
    }
    Ok(())
}
