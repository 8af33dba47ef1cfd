//! Synthetic data with known structure: embeddings drawn from the PLDA
//! generative model and frame-level corpora with planted speaker
//! archetypes.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::features::feature_path;
use crate::manifest::Manifest;
use crate::matrix::{write_matrix, Embedding, EmbeddingSet, FeatureMatrix};
use crate::plda::linalg::{cholesky, sorted_eigen};
use crate::plda::PldaModel;
use crate::rng::SeededRng;
use crate::types::{Gender, Grade, L1Label, RecordingRecord, Section, SpeakerRecord};

/// How a covariance matrix is generated.
#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceSpec {
    /// `v * I`.
    Isotropic(f64),
    Diagonal(Vec<f64>),
    /// Random rotation of eigenvalues spread log-uniformly over
    /// `[scale / condition, scale]`.
    Random { scale: f64, condition: f64 },
}

impl CovarianceSpec {
    pub fn build(&self, dim: usize, rng: &mut SeededRng) -> Result<DMatrix<f64>> {
        match self {
            CovarianceSpec::Isotropic(v) => {
                if !(*v >= 0.0 && v.is_finite()) {
                    return Err(Error::InvalidArgument(format!("variance {v} must be non-negative")));
                }
                Ok(DMatrix::identity(dim, dim) * *v)
            }
            CovarianceSpec::Diagonal(values) => {
                if values.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        actual: values.len(),
                    });
                }
                if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                    return Err(Error::InvalidArgument("diagonal variances must be non-negative".into()));
                }
                Ok(DMatrix::from_diagonal(&DVector::from_column_slice(values)))
            }
            CovarianceSpec::Random { scale, condition } => {
                if !(*scale > 0.0 && *condition >= 1.0 && scale.is_finite() && condition.is_finite()) {
                    return Err(Error::InvalidArgument("random covariance needs scale > 0 and condition >= 1".into()));
                }
                let g = DMatrix::from_fn(dim, dim, |_, _| rng.normal());
                let q = g.qr().q();
                let eig = DVector::from_fn(dim, |_, _| scale * condition.powf(-rng.uniform()));
                let m = &q * DMatrix::from_diagonal(&eig) * q.transpose();
                Ok((&m + m.transpose()) * 0.5)
            }
        }
    }
}

/// `2.5` (isotropic), `diag:1,2,3` or `random:scale:condition`.
impl FromStr for CovarianceSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad covariance spec `{s}`"));
        if let Some(rest) = s.strip_prefix("diag:") {
            let values = rest
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()?;
            return Ok(CovarianceSpec::Diagonal(values));
        }
        if let Some(rest) = s.strip_prefix("random:") {
            let (scale, condition) = rest.split_once(':').ok_or_else(bad)?;
            return Ok(CovarianceSpec::Random {
                scale: scale.parse().map_err(|_| bad())?,
                condition: condition.parse().map_err(|_| bad())?,
            });
        }
        s.trim().parse().map(CovarianceSpec::Isotropic).map_err(|_| bad())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPldaConfig {
    pub dim: usize,
    pub num_speakers: usize,
    pub embeddings_per_speaker: usize,
    pub gamma: CovarianceSpec,
    pub lambda: CovarianceSpec,
    /// Empty means the zero vector.
    pub mean: Vec<f64>,
    pub seed: u64,
}

impl Default for SynthPldaConfig {
    fn default() -> Self {
        SynthPldaConfig {
            dim: 4,
            num_speakers: 500,
            embeddings_per_speaker: 10,
            gamma: CovarianceSpec::Isotropic(2.0),
            lambda: CovarianceSpec::Isotropic(1.0),
            mean: Vec::new(),
            seed: 0,
        }
    }
}

impl SynthPldaConfig {
    pub const KEYS: &'static [&'static str] =
        &["dim", "num_speakers", "embeddings_per_speaker", "gamma", "lambda", "mean", "seed"];

    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        kv.check_keys(Self::KEYS)?;
        let d = SynthPldaConfig::default();
        Ok(SynthPldaConfig {
            dim: kv.get_or("dim", d.dim)?,
            num_speakers: kv.get_or("num_speakers", d.num_speakers)?,
            embeddings_per_speaker: kv.get_or("embeddings_per_speaker", d.embeddings_per_speaker)?,
            gamma: kv.get_parsed("gamma")?.unwrap_or(d.gamma),
            lambda: kv.get_parsed("lambda")?.unwrap_or(d.lambda),
            mean: kv.get_list("mean")?.unwrap_or_default(),
            seed: kv.get_or("seed", d.seed)?,
        })
    }
}

/// Embeddings grouped by speaker together with the generating model.
#[derive(Debug, Clone)]
pub struct SynthPldaData {
    pub model: PldaModel,
    pub speaker_ids: Vec<String>,
    pub groups: Vec<Vec<Vec<f64>>>,
}

impl SynthPldaData {
    /// Embedding ids are `<speaker>-e<index>`.
    pub fn embedding_set(&self) -> Result<EmbeddingSet> {
        let mut set = EmbeddingSet::new(self.model.dim());
        for (spk, group) in self.speaker_ids.iter().zip(&self.groups) {
            for (i, e) in group.iter().enumerate() {
                set.push(Embedding {
                    id: format!("{spk}-e{i:03}"),
                    values: e.iter().map(|&v| v as f32).collect(),
                })?;
            }
        }
        Ok(set)
    }

    /// `embedding_id<TAB>speaker_id` lines.
    pub fn labels_tsv(&self) -> String {
        let mut out = String::new();
        for (spk, group) in self.speaker_ids.iter().zip(&self.groups) {
            for i in 0..group.len() {
                out.push_str(&format!("{spk}-e{i:03}\t{spk}\n"));
            }
        }
        out
    }
}

/// Square root factor `F` with `F F' = m` for a PSD matrix.
fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    if let Ok(c) = cholesky(m, "") {
        return c.l();
    }
    let (values, vectors) = sorted_eigen(m);
    let roots = values.map(|v| v.max(0.0).sqrt());
    vectors * DMatrix::from_diagonal(&roots)
}

fn gaussian(factor: &DMatrix<f64>, rng: &mut SeededRng) -> DVector<f64> {
    factor * DVector::from_fn(factor.ncols(), |_, _| rng.normal())
}

/// Draws `y_s ~ N(0, gamma)` per speaker and `e = mu + y_s + z` with
/// `z ~ N(0, lambda)` per embedding.
pub fn sample_plda(cfg: &SynthPldaConfig) -> Result<SynthPldaData> {
    if cfg.dim == 0 || cfg.num_speakers == 0 || cfg.embeddings_per_speaker == 0 {
        return Err(Error::InvalidArgument("dimension and counts must be positive".into()));
    }
    let mut rng = SeededRng::derive(cfg.seed, 0);
    let gamma = cfg.gamma.build(cfg.dim, &mut rng)?;
    let lambda = cfg.lambda.build(cfg.dim, &mut rng)?;
    let mu = match cfg.mean.len() {
        0 => DVector::zeros(cfg.dim),
        1 => DVector::from_element(cfg.dim, cfg.mean[0]),
        n if n == cfg.dim => DVector::from_column_slice(&cfg.mean),
        n => {
            return Err(Error::DimensionMismatch {
                expected: cfg.dim,
                actual: n,
            })
        }
    };
    let model = PldaModel::new(mu, gamma, lambda)?;
    let fg = psd_factor(&model.gamma);
    let fl = psd_factor(&model.lambda);
    let mut rng = SeededRng::derive(cfg.seed, 1);
    let mut speaker_ids = Vec::with_capacity(cfg.num_speakers);
    let mut groups = Vec::with_capacity(cfg.num_speakers);
    for s in 0..cfg.num_speakers {
        let y = gaussian(&fg, &mut rng);
        let group = (0..cfg.embeddings_per_speaker)
            .map(|_| (&model.mu + &y + gaussian(&fl, &mut rng)).as_slice().to_vec())
            .collect();
        speaker_ids.push(format!("spk{s:04}"));
        groups.push(group);
    }
    Ok(SynthPldaData {
        model,
        speaker_ids,
        groups,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpusConfig {
    pub num_speakers: usize,
    /// Recordings per speaker in sections A to E.
    pub recordings_per_section: [usize; 5],
    pub frames_per_recording: usize,
    pub feature_dim: usize,
    /// Norm of each speaker's archetype; frames add unit Gaussian noise.
    pub rho: f64,
    /// Added to every frame; empty for none.
    pub shift: Vec<f64>,
    pub genders: Vec<Gender>,
    pub l1s: Vec<String>,
    pub grades: Vec<Grade>,
    /// Prepended to speaker ids so corpora can be merged.
    pub prefix: String,
    pub seed: u64,
}

impl Default for SynthCorpusConfig {
    fn default() -> Self {
        SynthCorpusConfig {
            num_speakers: 20,
            recordings_per_section: [1, 1, 2, 2, 1],
            frames_per_recording: 60,
            feature_dim: 20,
            rho: 10.0,
            shift: Vec::new(),
            genders: vec![Gender::Female, Gender::Male],
            l1s: ["Thai", "Urdu", "Arabic"].map(String::from).to_vec(),
            grades: Grade::ALL.to_vec(),
            prefix: String::new(),
            seed: 0,
        }
    }
}

fn parse_list<T: FromStr>(kv: &KvConfig, key: &str) -> Result<Option<Vec<T>>> {
    match kv.get(key) {
        None => Ok(None),
        Some(v) => v
            .split(',')
            .map(|t| {
                t.trim().parse::<T>().map_err(|_| Error::UnknownToken {
                    kind: "list item",
                    token: format!("{key}={t}"),
                })
            })
            .collect::<Result<Vec<T>>>()
            .map(Some),
    }
}

impl SynthCorpusConfig {
    pub const KEYS: &'static [&'static str] = &[
        "num_speakers",
        "recordings_per_section",
        "frames_per_recording",
        "feature_dim",
        "rho",
        "shift",
        "shift_norm",
        "shift_seed",
        "genders",
        "l1s",
        "grades",
        "prefix",
        "seed",
    ];

    /// `shift` lists the vector explicitly; alternatively `shift_norm` and
    /// `shift_seed` draw a random direction.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        kv.check_keys(Self::KEYS)?;
        let d = SynthCorpusConfig::default();
        let per: Vec<usize> = kv
            .get_list("recordings_per_section")?
            .unwrap_or(d.recordings_per_section.to_vec());
        let recordings_per_section: [usize; 5] = per
            .try_into()
            .map_err(|_| Error::InvalidArgument("recordings_per_section needs five counts (A..E)".into()))?;
        let feature_dim = kv.get_or("feature_dim", d.feature_dim)?;
        let shift = match kv.get_list::<f64>("shift")? {
            Some(v) => v,
            None => match kv.get_parsed::<f64>("shift_norm")? {
                Some(norm) => random_shift(feature_dim, norm, kv.get_or("shift_seed", 0u64)?),
                None => Vec::new(),
            },
        };
        let cfg = SynthCorpusConfig {
            num_speakers: kv.get_or("num_speakers", d.num_speakers)?,
            recordings_per_section,
            frames_per_recording: kv.get_or("frames_per_recording", d.frames_per_recording)?,
            feature_dim,
            rho: kv.get_or("rho", d.rho)?,
            shift,
            genders: parse_list(kv, "genders")?.unwrap_or(d.genders),
            l1s: kv.get_list("l1s")?.unwrap_or(d.l1s),
            grades: parse_list(kv, "grades")?.unwrap_or(d.grades),
            prefix: kv.get("prefix").unwrap_or("").to_string(),
            seed: kv.get_or("seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_speakers == 0 || self.frames_per_recording == 0 || self.feature_dim == 0 {
            return Err(Error::InvalidArgument("speaker, frame and dimension counts must be positive".into()));
        }
        if self.recordings_per_section.iter().all(|&n| n == 0) {
            return Err(Error::InvalidArgument("at least one recording per speaker is required".into()));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidArgument(format!("rho must be a non-negative number, got {}", self.rho)));
        }
        if !self.shift.is_empty() && self.shift.len() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                actual: self.shift.len(),
            });
        }
        if self.genders.is_empty() || self.l1s.is_empty() || self.grades.is_empty() {
            return Err(Error::InvalidArgument("metadata pools must be non-empty".into()));
        }
        for l in &self.l1s {
            L1Label::new(l)?;
        }
        Ok(())
    }
}

/// A random direction of length `norm`.
pub fn random_shift(dim: usize, norm: f64, seed: u64) -> Vec<f64> {
    let mut rng = SeededRng::derive(seed, 0x5348_4946);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
    crate::plda::scale_to_norm(&mut v, norm);
    v
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub manifest: Manifest,
    pub features: BTreeMap<String, FeatureMatrix>,
}

impl SynthCorpus {
    /// Writes `manifest.tsv` and `features/<recording>.svm` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let features = dir.join("features");
        fs::create_dir_all(&features).map_err(|e| Error::io(features.display().to_string(), e))?;
        self.manifest.write(dir.join("manifest.tsv"))?;
        for (id, m) in &self.features {
            write_matrix(feature_path(&features, id), m)?;
        }
        Ok(())
    }

    /// Same recordings with `shift` added to every frame.
    pub fn shifted(&self, shift: &[f64]) -> Result<SynthCorpus> {
        let mut features = BTreeMap::new();
        for (id, m) in &self.features {
            if shift.len() != m.cols() {
                return Err(Error::DimensionMismatch {
                    expected: m.cols(),
                    actual: shift.len(),
                });
            }
            let data = m
                .as_slice()
                .chunks(m.cols())
                .flat_map(|row| row.iter().zip(shift).map(|(&v, &s)| (v as f64 + s) as f32))
                .collect();
            features.insert(id.clone(), FeatureMatrix::new(m.rows(), m.cols(), data)?);
        }
        Ok(SynthCorpus {
            manifest: self.manifest.clone(),
            features,
        })
    }
}

/// Frame-level corpus: each speaker gets an archetype of norm `rho`, every
/// frame is archetype plus unit Gaussian noise plus the optional shift.
/// Gender, L1 and grade cycle through their pools by speaker index.
pub fn sample_corpus(cfg: &SynthCorpusConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let dim = cfg.feature_dim;
    let mut speakers = Vec::with_capacity(cfg.num_speakers);
    let mut recordings = Vec::new();
    let mut features = BTreeMap::new();
    for s in 0..cfg.num_speakers {
        let id = format!("{}spk{s:04}", cfg.prefix);
        speakers.push(SpeakerRecord {
            speaker_id: id.clone(),
            gender: cfg.genders[s % cfg.genders.len()],
            l1: L1Label::new(&cfg.l1s[s % cfg.l1s.len()])?,
            grade: cfg.grades[s % cfg.grades.len()],
        });
        let mut rng = SeededRng::derive(cfg.seed, s as u64);
        let mut archetype: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        crate::plda::scale_to_norm(&mut archetype, cfg.rho);
        if cfg.rho == 0.0 {
            archetype.iter_mut().for_each(|v| *v = 0.0);
        }
        for (section, &count) in Section::ALL.iter().zip(&cfg.recordings_per_section) {
            for k in 0..count {
                let rec = format!("{id}-{section}{k:02}");
                let data: Vec<f32> = (0..cfg.frames_per_recording * dim)
                    .map(|i| {
                        let j = i % dim;
                        let shift = cfg.shift.get(j).copied().unwrap_or(0.0);
                        (archetype[j] + rng.normal() + shift) as f32
                    })
                    .collect();
                features.insert(rec.clone(), FeatureMatrix::new(cfg.frames_per_recording, dim, data)?);
                recordings.push(RecordingRecord {
                    recording_id: rec.clone(),
                    speaker_id: id.clone(),
                    section: *section,
                    source_path: format!("features/{rec}.svm"),
                });
            }
        }
    }
    Ok(SynthCorpus {
        manifest: Manifest::new(speakers, recordings)?,
        features,
    })
}

/// Embeddings whose speakers cluster by L1, so same-L1 impostors are the
/// most confusable.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedL1Config {
    pub l1s: Vec<String>,
    pub speakers_per_l1: usize,
    pub recordings_per_speaker: usize,
    pub dim: usize,
    /// Spread of the per-L1 centres.
    pub cluster_spread: f64,
    /// Spread of speakers around their L1 centre.
    pub speaker_spread: f64,
    /// Per-recording noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for PlantedL1Config {
    fn default() -> Self {
        PlantedL1Config {
            l1s: ["Arabic", "Thai", "Urdu", "Vietnamese"].map(String::from).to_vec(),
            speakers_per_l1: 12,
            recordings_per_speaker: 3,
            dim: 8,
            cluster_spread: 3.0,
            speaker_spread: 1.0,
            noise: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedL1Data {
    /// Each speaker has one section A recording and
    /// `recordings_per_speaker` section C recordings.
    pub manifest: Manifest,
    pub embeddings: HashMap<String, Vec<f64>>,
}

pub fn sample_planted_l1(cfg: &PlantedL1Config) -> Result<PlantedL1Data> {
    if cfg.l1s.is_empty() || cfg.speakers_per_l1 == 0 || cfg.recordings_per_speaker == 0 || cfg.dim == 0 {
        return Err(Error::InvalidArgument("planted corpus needs positive counts".into()));
    }
    let mut rng = SeededRng::derive(cfg.seed, 0);
    let mut speakers = Vec::new();
    let mut recordings = Vec::new();
    let mut embeddings = HashMap::new();
    let draw = |rng: &mut SeededRng, centre: &[f64], spread: f64| -> Vec<f64> {
        centre.iter().map(|c| c + spread * rng.normal()).collect()
    };
    for (k, l1) in cfg.l1s.iter().enumerate() {
        let centre = draw(&mut rng, &vec![0.0; cfg.dim], cfg.cluster_spread);
        for i in 0..cfg.speakers_per_l1 {
            let id = format!("l{k}spk{i:03}");
            speakers.push(SpeakerRecord {
                speaker_id: id.clone(),
                gender: if i % 2 == 0 { Gender::Female } else { Gender::Male },
                l1: L1Label::new(l1)?,
                grade: Grade::ALL[i % Grade::ALL.len()],
            });
            let voice = draw(&mut rng, &centre, cfg.speaker_spread);
            let mut add = |rec: String, section: Section, rng: &mut SeededRng| {
                embeddings.insert(rec.clone(), draw(rng, &voice, cfg.noise));
                recordings.push(RecordingRecord {
                    recording_id: rec,
                    speaker_id: id.clone(),
                    section,
                    source_path: "-".into(),
                });
            };
            add(format!("{id}-A00"), Section::A, &mut rng);
            for r in 0..cfg.recordings_per_speaker {
                add(format!("{id}-C{r:02}"), Section::C, &mut rng);
            }
        }
    }
    Ok(PlantedL1Data {
        manifest: Manifest::new(speakers, recordings)?,
        embeddings,
    })
}
