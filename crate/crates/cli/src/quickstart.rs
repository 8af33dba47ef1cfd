//! Synthetic two-domain setup and the four-system comparison run by
//! `verifkit pipeline quickstart`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use verifkit_core::config::KvConfig;
use verifkit_core::synth::{random_shift, sample_corpus, SynthCorpusConfig};
use verifkit_core::Result;

use crate::pipeline::{run_pipeline, PipelineConfig, SystemKind};
use crate::report::Report;
use crate::StageError;

/// Sizes of the synthetic domains. The source domain is unshifted; the
/// in-domain and evaluation sets share one shift vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainParams {
    pub feature_dim: usize,
    pub rho: f64,
    pub shift_norm: f64,
    pub source_speakers: usize,
    pub in_domain_speakers: usize,
    pub eval_speakers: usize,
    pub frames_per_recording: usize,
    pub train_recordings: [usize; 5],
    pub eval_recordings: [usize; 5],
}

impl Default for DomainParams {
    fn default() -> Self {
        DomainParams {
            feature_dim: 20,
            rho: 3.0,
            shift_norm: 10.0,
            source_speakers: 40,
            in_domain_speakers: 40,
            eval_speakers: 24,
            frames_per_recording: 60,
            train_recordings: [2, 2, 2, 2, 0],
            eval_recordings: [1, 1, 4, 4, 2],
        }
    }
}

/// Where [`write_domains`] put each corpus.
#[derive(Debug, Clone)]
pub struct DomainPaths {
    pub source: PathBuf,
    pub in_domain: PathBuf,
    pub eval: PathBuf,
}

/// Writes the source, in-domain and evaluation corpora under `dir`, each
/// as `manifest.tsv` plus `features/`.
pub fn write_domains(dir: &Path, params: &DomainParams, seed: u64) -> Result<DomainPaths> {
    let shift = random_shift(params.feature_dim, params.shift_norm, seed ^ 0x5348_4946);
    let base = SynthCorpusConfig {
        feature_dim: params.feature_dim,
        rho: params.rho,
        frames_per_recording: params.frames_per_recording,
        ..SynthCorpusConfig::default()
    };
    let corpora = [
        ("source", params.source_speakers, params.train_recordings, Vec::new(), "a", 1),
        ("in_domain", params.in_domain_speakers, params.train_recordings, shift.clone(), "b", 2),
        ("eval", params.eval_speakers, params.eval_recordings, shift, "e", 3),
    ];
    for (name, speakers, recordings, shift, prefix, stream) in corpora {
        let cfg = SynthCorpusConfig {
            num_speakers: speakers,
            recordings_per_section: recordings,
            shift,
            prefix: prefix.into(),
            seed: seed.wrapping_mul(0x9E37_79B9).wrapping_add(stream),
            ..base.clone()
        };
        sample_corpus(&cfg)?.write(&dir.join(name))?;
    }
    Ok(DomainPaths {
        source: dir.join("source"),
        in_domain: dir.join("in_domain"),
        eval: dir.join("eval"),
    })
}

/// Pipeline configuration over the written domains; training settings
/// suit the desk preset.
pub fn domain_config(paths: &DomainPaths, system: SystemKind, out_dir: &Path, seed: u64, jobs: usize) -> Result<PipelineConfig> {
    let mut kv = KvConfig::new();
    kv.set("train_manifest", paths.source.join("manifest.tsv").display());
    kv.set("train_features", paths.source.join("features").display());
    kv.set("eval_manifest", paths.eval.join("manifest.tsv").display());
    kv.set("eval_features", paths.eval.join("features").display());
    kv.set("in_domain_manifest", paths.in_domain.join("manifest.tsv").display());
    kv.set("in_domain_features", paths.in_domain.join("features").display());
    kv.set("learning_rate", 0.01);
    kv.set("minibatch_size", 16);
    kv.set("segment_frames", 40);
    kv.set("crops_per_recording", 4);
    kv.set("epochs", 10);
    kv.set("fine_tune_epochs", 10);
    kv.set("fine_tune_learning_rate", 0.003);
    kv.set("system", system);
    kv.set("out_dir", out_dir.display());
    kv.set("jobs", jobs);
    PipelineConfig::from_kv(&kv, Path::new("."), seed)
}

/// EERs of the baseline, adapted, fine-tuned and fused systems.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub baseline: Report,
    pub adapted: Report,
    pub fine_tuned: Report,
    /// Adapted scores fused with fine-tuned scores.
    pub fused: Report,
}

/// Runs the baseline, both adaptation systems and their fusion on the
/// domains under `data`, writing each run below `out`.
pub fn compare_systems(paths: &DomainPaths, out: &Path, seed: u64, jobs: usize) -> std::result::Result<Comparison, StageError> {
    let setup = |e| StageError { stage: "setup", error: e };
    let run = |system, name: &str| -> std::result::Result<Report, StageError> {
        let cfg = domain_config(paths, system, &out.join(name), seed, jobs).map_err(setup)?;
        run_pipeline(&cfg)
    };
    let baseline = run(SystemKind::Baseline, "baseline")?;
    // the baseline extractor is reused so only the back end differs
    let mut adapt_cfg = domain_config(paths, SystemKind::Adapt, &out.join("adapt"), seed, jobs).map_err(setup)?;
    adapt_cfg.extractor_model = Some(out.join("baseline").join("extractor.svx"));
    let adapted = run_pipeline(&adapt_cfg)?;
    let mut tune_cfg = domain_config(paths, SystemKind::FineTune, &out.join("fine_tune"), seed, jobs).map_err(setup)?;
    tune_cfg.extractor_model = Some(out.join("baseline").join("extractor.svx"));
    let fine_tuned = run_pipeline(&tune_cfg)?;
    let mut fuse_cfg = adapt_cfg.clone();
    fuse_cfg.out_dir = out.join("fused");
    fuse_cfg.fuse_with = Some(out.join("fine_tune"));
    let fused = run_pipeline(&fuse_cfg)?;
    Ok(Comparison {
        baseline,
        adapted,
        fine_tuned,
        fused,
    })
}

impl Comparison {
    /// One row per condition: EER percentages of each system.
    pub fn to_text(&self) -> String {
        let mut out = String::from("condition\tbaseline\tadapt\tfine-tune\tfused\n");
        for c in &self.baseline.conditions {
            let eer = |r: &Report| r.condition(&c.name).map(|x| 100.0 * x.eer.rate).unwrap_or(f64::NAN);
            let fused = self
                .fused
                .fused
                .iter()
                .find(|f| f.name == c.name)
                .map(|f| 100.0 * f.eer.rate)
                .unwrap_or(f64::NAN);
            let _ = writeln!(
                out,
                "{}\t{:.3}\t{:.3}\t{:.3}\t{:.3}",
                c.name,
                eer(&self.baseline),
                eer(&self.adapted),
                eer(&self.fine_tuned),
                fused
            );
        }
        out
    }
}

/// Generates the synthetic domains under `out/data` and compares the four
/// systems; returns the comparison table.
pub fn quickstart(out: &Path, seed: u64, jobs: usize) -> std::result::Result<String, StageError> {
    let paths = write_domains(&out.join("data"), &DomainParams::default(), seed).map_err(|e| StageError {
        stage: "synth",
        error: e,
    })?;
    let cmp = compare_systems(&paths, out, seed, jobs)?;
    let text = cmp.to_text();
    std::fs::write(out.join("comparison.tsv"), &text).map_err(|e| StageError {
        stage: "report",
        error: verifkit_core::Error::io(out.join("comparison.tsv").display().to_string(), e),
    })?;
    Ok(text)
}
