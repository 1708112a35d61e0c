//! Deterministic synthetic datasets with label-dependent features.
//!
//! Every feature field has a label-independent base vector `s` and one
//! offset vector `o_c` per class, drawn once per dataset. Each entry of a
//! sample is `s + separation * o_c + 0.5 * noise` with `s, noise ~ N(0, 1)`
//! and `o_c ~ N(0, 0.25²)`, so `separation = 0` makes every feature
//! independent of the label. Toxicity and NSFW scores go through a sigmoid
//! to land in (0, 1). Class-1 texts draw lexicon words more often as the
//! separation grows.

use std::path::Path;

use serde::Serialize;

use super::lexicon::Lexicon;
use super::manifest::{FeatureFiles, Manifest, SampleEntry, Split};
use super::{save_matrix, Schema, StoreError};
use crate::cflm::msl_score_raw;
use crate::rng::Rng;
use crate::tensor::{sigmoid, Matrix};

/// Lexicon shipped with every synthetic dataset.
pub const FIXTURE_LEXICON: &[&str] = &[
    "bossy", "feminazi", "harpy", "hysterical", "karen", "nag", "shrew", "shrill", "thot", "witch",
];

const NEUTRAL_WORDS: &[&str] = &[
    "the", "a", "when", "you", "my", "monday", "coffee", "meeting", "cat", "weekend", "finally", "just", "really",
    "people", "work", "home", "again", "this", "is", "me", "after", "every", "morning", "friend", "phone",
    "dinner", "game", "team", "boss", "car", "rain", "pizza", "said", "told", "why", "always", "never", "today",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SynthConfig {
    pub n_per_class: usize,
    pub separation: f64,
    pub seed: u64,
    /// Inclusive range of valid token/region rows per sample.
    pub min_len: usize,
    pub max_len: usize,
    #[serde(skip)]
    pub schema: Schema,
}

impl SynthConfig {
    pub fn new(n_per_class: usize, separation: f64, seed: u64) -> Self {
        Self {
            n_per_class,
            separation,
            seed,
            min_len: 2,
            max_len: 4,
            schema: Schema::default(),
        }
    }

    /// Training samples per class under the 80:20 split.
    pub fn train_per_class(&self) -> usize {
        (8 * self.n_per_class + 5) / 10
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthSummary {
    pub train: usize,
    pub test: usize,
    pub train_per_class: [usize; 2],
    pub test_per_class: [usize; 2],
    pub msl_min: f32,
    pub msl_max: f32,
}

struct FieldProto {
    base: Vec<f64>,
    offset: [Vec<f64>; 2],
}

impl FieldProto {
    fn new(dim: usize, rng: &mut Rng) -> Self {
        let mut draw = |scale: f64| (0..dim).map(|_| rng.normal() * scale).collect::<Vec<_>>();
        let base = draw(1.0);
        let offset = [draw(0.25), draw(0.25)];
        Self { base, offset }
    }

    fn sample(&self, class: usize, sep: f64, rng: &mut Rng) -> Vec<f32> {
        self.base
            .iter()
            .zip(&self.offset[class])
            .map(|(&s, &o)| (s + sep * o + 0.5 * rng.normal()) as f32)
            .collect()
    }
}

struct Protos {
    tokens: FieldProto,
    regions: FieldProto,
    pair_txt: FieldProto,
    pair_img: FieldProto,
    tox: FieldProto,
    nsfw: FieldProto,
    cap: FieldProto,
}

struct Generated {
    label: u8,
    raw_text: String,
    tokens: Matrix<f32>,
    regions: Matrix<f32>,
    geometry: Matrix<f32>,
    pair_txt: Vec<f32>,
    pair_img: Vec<f32>,
    tox: Vec<f32>,
    nsfw: Vec<f32>,
    cap: Vec<f32>,
}

fn geometry_rows(n: usize, rng: &mut Rng) -> Matrix<f32> {
    let aspect = rng.uniform(0.5, 2.0);
    let mut m = Matrix::zeros(n, 6);
    for r in 0..n {
        let x1 = rng.uniform(0.0, 0.9);
        let x2 = rng.uniform(x1 + 0.05, 1.0);
        let y1 = rng.uniform(0.0, 0.9);
        let y2 = rng.uniform(y1 + 0.05, 1.0);
        let row = [x1, y1, x2, y2, (x2 - x1) * (y2 - y1), aspect / (1.0 + aspect)];
        for (c, v) in row.iter().enumerate() {
            m.set(r, c, *v as f32);
        }
    }
    m
}

fn text(class: usize, sep: f64, rng: &mut Rng) -> String {
    let p_lex = 0.05 + 0.1 * class as f64 * sep.min(4.0) / 4.0;
    let n = rng.range_inclusive(6, 12);
    let words: Vec<&str> = (0..n)
        .map(|_| {
            if rng.bernoulli(p_lex) {
                FIXTURE_LEXICON[rng.below(FIXTURE_LEXICON.len())]
            } else {
                NEUTRAL_WORDS[rng.below(NEUTRAL_WORDS.len())]
            }
        })
        .collect();
    words.join(" ")
}

fn generate(class: usize, cfg: &SynthConfig, p: &Protos, rng: &mut Rng) -> Generated {
    let sep = cfg.separation;
    let rows = |proto: &FieldProto, n: usize, rng: &mut Rng| {
        let data: Vec<Vec<f32>> = (0..n).map(|_| proto.sample(class, sep, rng)).collect();
        Matrix::from_rows(&data)
    };
    let n_tok = rng.range_inclusive(cfg.min_len, cfg.max_len);
    let n_reg = rng.range_inclusive(cfg.min_len, cfg.max_len);
    let tokens = rows(&p.tokens, n_tok, rng);
    let regions = rows(&p.regions, n_reg, rng);
    let geometry = geometry_rows(n_reg, rng);
    let squash = |v: Vec<f32>| v.into_iter().map(sigmoid).collect::<Vec<f32>>();
    Generated {
        label: class as u8,
        raw_text: text(class, sep, rng),
        tokens,
        regions,
        geometry,
        pair_txt: p.pair_txt.sample(class, sep, rng),
        pair_img: p.pair_img.sample(class, sep, rng),
        tox: squash(p.tox.sample(class, sep, rng)),
        nsfw: squash(p.nsfw.sample(class, sep, rng)),
        cap: p.cap.sample(class, sep, rng),
    }
}

fn write_sample(root: &Path, id: &str, s: &Generated) -> Result<SampleEntry, StoreError> {
    let rel_dir = format!("features/{id}");
    let dir = root.join(&rel_dir);
    std::fs::create_dir_all(&dir).map_err(|e| StoreError::io(&dir, e))?;
    let put = |name: &str, m: &Matrix<f32>| -> Result<String, StoreError> {
        let rel = format!("{rel_dir}/{name}.mmfb");
        save_matrix(&root.join(&rel), m)?;
        Ok(rel)
    };
    let vec = |v: &[f32]| Matrix::row_vector(v.to_vec());
    Ok(SampleEntry {
        id: id.to_string(),
        label: s.label,
        raw_text: s.raw_text.clone(),
        files: FeatureFiles {
            tokens: put("tokens", &s.tokens)?,
            regions: put("regions", &s.regions)?,
            geometry: put("geometry", &s.geometry)?,
            pair_txt: put("pair_txt", &vec(&s.pair_txt))?,
            pair_img: put("pair_img", &vec(&s.pair_img))?,
            tox: put("tox", &vec(&s.tox))?,
            nsfw: put("nsfw", &vec(&s.nsfw))?,
            cap: put("cap", &vec(&s.cap))?,
        },
    })
}

/// Writes `train.json`, `test.json`, `lexicon.txt` and the feature files
/// under `out_dir`.
pub fn synth_dataset(out_dir: &Path, cfg: &SynthConfig) -> Result<SynthSummary, StoreError> {
    assert!(cfg.n_per_class >= 1, "n_per_class must be at least 1");
    assert!(cfg.separation >= 0.0, "separation must be non-negative");
    assert!(cfg.min_len >= 1 && cfg.min_len <= cfg.max_len && cfg.max_len <= cfg.schema.seq_len);

    std::fs::create_dir_all(out_dir).map_err(|e| StoreError::io(out_dir, e))?;
    let root = Rng::new(cfg.seed);
    let mut proto_rng = root.split("synth.protos");
    let s = &cfg.schema;
    let protos = Protos {
        tokens: FieldProto::new(s.d_txt, &mut proto_rng),
        regions: FieldProto::new(s.d_region, &mut proto_rng),
        pair_txt: FieldProto::new(s.d_pair, &mut proto_rng),
        pair_img: FieldProto::new(s.d_pair, &mut proto_rng),
        tox: FieldProto::new(s.d_tox, &mut proto_rng),
        nsfw: FieldProto::new(s.d_nsfw, &mut proto_rng),
        cap: FieldProto::new(s.d_cap, &mut proto_rng),
    };

    let mut rng = root.split("synth.samples");
    let n_train = cfg.train_per_class();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..2 {
        for i in 0..cfg.n_per_class {
            let g = generate(class, cfg, &protos, &mut rng);
            if i < n_train {
                train.push(g);
            } else {
                test.push(g);
            }
        }
    }
    rng.shuffle(&mut train);
    rng.shuffle(&mut test);

    let lexicon = Lexicon::from_terms(FIXTURE_LEXICON);
    let lex_path = out_dir.join("lexicon.txt");
    std::fs::write(&lex_path, lexicon.to_file_contents()).map_err(|e| StoreError::io(&lex_path, e))?;

    let counts: Vec<usize> = train.iter().map(|g| msl_score_raw(&g.raw_text, &lexicon)).collect();
    let msl_min = counts.iter().copied().min().unwrap_or(0) as f32;
    let msl_max = counts.iter().copied().max().unwrap_or(0) as f32;

    for (split, samples) in [(Split::Train, &train), (Split::Test, &test)] {
        let prefix = match split {
            Split::Train => "train",
            Split::Test => "test",
        };
        let entries = samples
            .iter()
            .enumerate()
            .map(|(i, g)| write_sample(out_dir, &format!("{prefix}-{i:05}"), g))
            .collect::<Result<Vec<_>, _>>()?;
        Manifest {
            split,
            samples: entries,
            msl_min,
            msl_max,
        }
        .save(&out_dir.join(split.file_name()))?;
    }

    let count = |v: &[Generated], c: u8| v.iter().filter(|g| g.label == c).count();
    Ok(SynthSummary {
        train: train.len(),
        test: test.len(),
        train_per_class: [count(&train, 0), count(&train, 1)],
        test_per_class: [count(&test, 0), count(&test, 1)],
        msl_min,
        msl_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::load_bundle;

    fn small(n: usize, sep: f64, seed: u64) -> SynthConfig {
        SynthConfig::new(n, sep, seed)
    }

    #[test]
    fn split_counts_follow_80_20() {
        let dir = tempfile::tempdir().unwrap();
        let s = synth_dataset(dir.path(), &small(10, 2.0, 7)).unwrap();
        assert_eq!((s.train, s.test), (16, 4));
        assert_eq!(s.train_per_class, [8, 8]);
        assert_eq!(s.test_per_class, [2, 2]);
    }

    #[test]
    fn files_load_against_schema() {
        let dir = tempfile::tempdir().unwrap();
        synth_dataset(dir.path(), &small(3, 1.0, 1)).unwrap();
        let m = Manifest::load(&dir.path().join("train.json")).unwrap();
        for e in &m.samples {
            let b = load_bundle(dir.path(), e, &Schema::default()).unwrap();
            assert!((2..=4).contains(&b.valid_tokens));
            assert!(b.tox.iter().all(|x| (0.0..=1.0).contains(x)));
        }
        assert!(m.msl_min <= m.msl_max);
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        synth_dataset(a.path(), &small(2, 3.0, 11)).unwrap();
        synth_dataset(b.path(), &small(2, 3.0, 11)).unwrap();
        for entry in walk(a.path()) {
            let rel = entry.strip_prefix(a.path()).unwrap();
            assert_eq!(std::fs::read(&entry).unwrap(), std::fs::read(b.path().join(rel)).unwrap(), "{rel:?}");
        }
    }

    fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
        let mut out = Vec::new();
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                out.extend(walk(&p));
            } else {
                out.push(p);
            }
        }
        out
    }
}
