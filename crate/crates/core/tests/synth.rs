use nalgebra::{DMatrix, DVector};
use verifkit_core::config::KvConfig;
use verifkit_core::synth::{
    random_shift, sample_corpus, sample_plda, sample_planted_l1, CovarianceSpec, PlantedL1Config, SynthCorpusConfig,
    SynthPldaConfig,
};
use verifkit_core::Manifest;

fn moments(xs: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().fold(DVector::zeros(xs[0].len()), |a, x| a + x) / n;
    let mut cov = DMatrix::zeros(mean.len(), mean.len());
    for x in xs {
        let c = x - &mean;
        cov += &c * c.transpose();
    }
    (mean, cov / n)
}

#[test]
fn total_covariance_matches_configuration() {
    let data = sample_plda(&SynthPldaConfig {
        seed: 3,
        ..SynthPldaConfig::default()
    })
    .unwrap();
    let all: Vec<DVector<f64>> = data.groups.iter().flatten().map(|e| DVector::from_column_slice(e)).collect();
    assert_eq!(all.len(), 5000);
    let (_, cov) = moments(&all);
    let truth = DMatrix::identity(4, 4) * 3.0;
    let err = (&cov - &truth).norm() / truth.norm();
    assert!(err < 0.1, "relative error {err}");
}

#[test]
fn zero_between_covariance_leaves_only_residuals() {
    let mut errs = Vec::new();
    for speakers in [50, 2000] {
        let data = sample_plda(&SynthPldaConfig {
            dim: 3,
            num_speakers: speakers,
            embeddings_per_speaker: 10,
            gamma: CovarianceSpec::Isotropic(0.0),
            lambda: CovarianceSpec::Isotropic(1.0),
            mean: vec![1.0],
            seed: 4,
        })
        .unwrap();
        // between-speaker estimate: covariance of speaker means minus the
        // share of within-speaker noise they carry
        let means: Vec<DVector<f64>> = data
            .groups
            .iter()
            .map(|g| g.iter().fold(DVector::zeros(3), |a, e| a + DVector::from_column_slice(e)) / g.len() as f64)
            .collect();
        let (_, between) = moments(&means);
        let mut within = DMatrix::zeros(3, 3);
        let mut count = 0.0;
        for (g, m) in data.groups.iter().zip(&means) {
            for e in g {
                let c = DVector::from_column_slice(e) - m;
                within += &c * c.transpose();
                count += 1.0;
            }
        }
        within /= count - speakers as f64;
        errs.push((between - within / 10.0).norm());
    }
    assert!(errs[1] < errs[0], "{errs:?}");
    assert!(errs[1] < 0.03, "{errs:?}");
}

#[test]
fn sampling_is_seeded() {
    let cfg = SynthPldaConfig {
        num_speakers: 20,
        gamma: "random:2:10".parse().unwrap(),
        lambda: "diag:1,0.5,0.25,2".parse().unwrap(),
        seed: 11,
        ..SynthPldaConfig::default()
    };
    let a = sample_plda(&cfg).unwrap();
    let b = sample_plda(&cfg).unwrap();
    assert_eq!(a.groups, b.groups);
    assert_eq!(a.model, b.model);
    let c = sample_plda(&SynthPldaConfig { seed: 12, ..cfg.clone() }).unwrap();
    assert_ne!(a.groups, c.groups);
    let eig = a.model.gamma.clone().symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    assert!(lo > 0.0 && hi <= 2.0 + 1e-9 && hi / lo <= 10.0 + 1e-6);
    assert_eq!(a.embedding_set().unwrap().len(), 200);
    assert!(a.labels_tsv().starts_with("spk0000-e000\tspk0000\n"));
}

#[test]
fn plda_config_from_text() {
    let kv = KvConfig::parse("dim=2\nnum_speakers=3\nembeddings_per_speaker=2\ngamma=diag:1,2\nlambda=0.5\nmean=1,-1\nseed=9\n").unwrap();
    let cfg = SynthPldaConfig::from_kv(&kv).unwrap();
    assert_eq!(cfg.gamma, CovarianceSpec::Diagonal(vec![1.0, 2.0]));
    assert_eq!(cfg.lambda, CovarianceSpec::Isotropic(0.5));
    let data = sample_plda(&cfg).unwrap();
    assert_eq!(data.model.mu.as_slice(), &[1.0, -1.0]);
    assert!(SynthPldaConfig::from_kv(&KvConfig::parse("dims=2\n").unwrap()).is_err());
    assert!("random:2".parse::<CovarianceSpec>().is_err());
    let bad = SynthPldaConfig {
        lambda: CovarianceSpec::Isotropic(0.0),
        ..SynthPldaConfig::default()
    };
    assert!(sample_plda(&bad).is_err());
}

#[test]
fn round_robin_metadata() {
    let cfg = SynthCorpusConfig {
        num_speakers: 9,
        l1s: vec!["X".into(), "Y".into(), "Z".into()],
        frames_per_recording: 5,
        ..SynthCorpusConfig::default()
    };
    let corpus = sample_corpus(&cfg).unwrap();
    for l1 in ["X", "Y", "Z"] {
        assert_eq!(corpus.manifest.speakers().iter().filter(|s| s.l1.as_str() == l1).count(), 3);
    }
    // manifest survives a text round trip
    assert_eq!(Manifest::parse(&corpus.manifest.to_text()).unwrap(), corpus.manifest);
    assert_eq!(corpus.features.len(), 9 * 7);
}

#[test]
fn archetypes_set_recording_means() {
    let cfg = SynthCorpusConfig {
        num_speakers: 4,
        frames_per_recording: 400,
        feature_dim: 6,
        rho: 10.0,
        seed: 5,
        ..SynthCorpusConfig::default()
    };
    let corpus = sample_corpus(&cfg).unwrap();
    for m in corpus.features.values() {
        let mut mean = [0.0f64; 6];
        for t in 0..m.rows() {
            for (a, v) in mean.iter_mut().zip(m.row(t)) {
                *a += *v as f64 / m.rows() as f64;
            }
        }
        let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 10.0).abs() < 0.5, "norm {norm}");
    }
    let silent = sample_corpus(&SynthCorpusConfig { rho: 0.0, ..cfg.clone() }).unwrap();
    let m = silent.features.values().next().unwrap();
    let mean: f64 = m.as_slice().iter().map(|&v| v as f64).sum::<f64>() / m.as_slice().len() as f64;
    assert!(mean.abs() < 0.1);
    assert_eq!(sample_corpus(&cfg).unwrap().features, corpus.features);
}

#[test]
fn shift_moves_every_frame() {
    let cfg = SynthCorpusConfig {
        num_speakers: 2,
        feature_dim: 4,
        frames_per_recording: 8,
        seed: 1,
        ..SynthCorpusConfig::default()
    };
    let base = sample_corpus(&cfg).unwrap();
    let shift = random_shift(4, 3.0, 7);
    assert!((shift.iter().map(|v| v * v).sum::<f64>().sqrt() - 3.0).abs() < 1e-12);
    let moved = base.shifted(&shift).unwrap();
    for (id, m) in &base.features {
        let n = &moved.features[id];
        for (i, (a, b)) in m.as_slice().iter().zip(n.as_slice()).enumerate() {
            assert!((*b as f64 - *a as f64 - shift[i % 4]).abs() < 1e-5);
        }
    }
    // generating with the shift in the config is the same as shifting after
    let direct = sample_corpus(&SynthCorpusConfig {
        shift: shift.clone(),
        ..cfg
    })
    .unwrap();
    for (id, m) in &direct.features {
        for (a, b) in m.as_slice().iter().zip(moved.features[id].as_slice()) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}

#[test]
fn corpus_config_from_text_and_files() {
    let kv = KvConfig::parse(
        "num_speakers=3\nrecordings_per_section=1,0,1,0,2\nframes_per_recording=20\nfeature_dim=5\nrho=4\n\
         shift_norm=2\nshift_seed=3\ngenders=M\nl1s=Thai,Urdu\ngrades=B1,C2\nprefix=x\nseed=8\n",
    )
    .unwrap();
    let cfg = SynthCorpusConfig::from_kv(&kv).unwrap();
    assert_eq!(cfg.shift, random_shift(5, 2.0, 3));
    let corpus = sample_corpus(&cfg).unwrap();
    assert_eq!(corpus.manifest.recordings().len(), 12);
    assert!(corpus.manifest.speakers().iter().all(|s| s.speaker_id.starts_with("xspk")));
    let dir = tempfile::tempdir().unwrap();
    corpus.write(dir.path()).unwrap();
    let back = Manifest::read(dir.path().join("manifest.tsv")).unwrap();
    assert_eq!(back, corpus.manifest);
    let first = back.recordings()[0].recording_id.clone();
    let m = verifkit_core::matrix::read_matrix(dir.path().join("features").join(format!("{first}.svm"))).unwrap();
    assert_eq!(&m, &corpus.features[&first]);

    assert!(SynthCorpusConfig::from_kv(&KvConfig::parse("recordings_per_section=1,1\n").unwrap()).is_err());
    assert!(SynthCorpusConfig::from_kv(&KvConfig::parse("rho=-1\n").unwrap()).is_err());
    assert!(SynthCorpusConfig::from_kv(&KvConfig::parse("grades=Z9\n").unwrap()).is_err());
}

#[test]
fn planted_l1_clusters() {
    let data = sample_planted_l1(&PlantedL1Config::default()).unwrap();
    assert_eq!(data.manifest.speakers().len(), 48);
    assert_eq!(data.embeddings.len(), 48 * 4);
    assert!(data.manifest.recordings().iter().all(|r| data.embeddings.contains_key(&r.recording_id)));
}
