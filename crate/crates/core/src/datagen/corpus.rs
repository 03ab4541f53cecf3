use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::io::{read_mask_pgm, read_pgm, write_field_pgm, write_mask_pgm};
use super::render::{render, RenderParams};
use super::shapes::{compose_mask, Morphology, MorphologyKind};
use crate::error::{invalid, Result};
use crate::fidelity::BinaryMask;
use crate::grid::Field2D;
use crate::sub_seed;

/// Default train / val / test_in / test_ood proportions (720/320/240/215 of 1495,
/// rounded to whole percent).
pub const DEFAULT_PROPORTIONS: [f64; 4] = [0.48, 0.21, 0.16, 0.15];

const STREAM_MASK: u64 = 1;
const STREAM_IMAGE: u64 = 2;
const STREAM_FRACTION: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    TestIn,
    TestOod,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Val, Split::TestIn, Split::TestOod];

    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::TestIn => "test_in",
            Split::TestOod => "test_ood",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub index: usize,
    pub image: Field2D,
    pub mask: BinaryMask,
    pub morphology: MorphologyKind,
    pub split: Split,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub total: usize,
    /// Explicit per-split counts (train, val, test_in, test_ood); overrides
    /// `total` and `proportions` when present.
    pub counts: Option<[usize; 4]>,
    pub proportions: [f64; 4],
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub render: RenderParams,
    /// Training-data percentages that must each select at least one image.
    pub fractions: Vec<u32>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            total: 100,
            counts: None,
            proportions: DEFAULT_PROPORTIONS,
            height: 64,
            width: 64,
            seed: 0,
            render: RenderParams::default(),
            fractions: vec![100],
        }
    }
}

impl CorpusConfig {
    /// Per-split counts by largest-remainder rounding of the proportions.
    pub fn split_counts(&self) -> Result<[usize; 4]> {
        let counts = match self.counts {
            Some(c) => c,
            None => {
                let sum: f64 = self.proportions.iter().sum();
                if self.proportions.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || sum <= 0.0 {
                    return invalid("proportions must be nonnegative with a positive sum");
                }
                let exact: Vec<f64> = self
                    .proportions
                    .iter()
                    .map(|p| p / sum * self.total as f64)
                    .collect();
                let mut counts = [0usize; 4];
                for (c, e) in counts.iter_mut().zip(&exact) {
                    *c = e.floor() as usize;
                }
                let mut order: Vec<usize> = (0..4).collect();
                order.sort_by(|&a, &b| {
                    let ra = exact[a] - exact[a].floor();
                    let rb = exact[b] - exact[b].floor();
                    rb.total_cmp(&ra).then(a.cmp(&b))
                });
                let short = self.total - counts.iter().sum::<usize>();
                for &k in order.iter().take(short) {
                    counts[k] += 1;
                }
                counts
            }
        };
        if let Some(k) = counts.iter().position(|&c| c == 0) {
            return invalid(format!(
                "split {} would be empty (counts {counts:?})",
                Split::ALL[k].name()
            ));
        }
        Ok(counts)
    }

    pub fn validate(&self) -> Result<[usize; 4]> {
        if self.height < 16 || self.width < 16 {
            return invalid(format!(
                "image size {}x{} is below the 16x16 minimum",
                self.height, self.width
            ));
        }
        self.render.validate()?;
        let counts = self.split_counts()?;
        if self.fractions.is_empty() {
            return invalid("fractions must not be empty");
        }
        for &pct in &self.fractions {
            if pct == 0 || pct > 100 {
                return invalid(format!("fraction {pct}% must lie in 1..=100"));
            }
            if fraction_count(counts[0], pct) == 0 {
                return invalid(format!(
                    "fraction {pct}% of {} training images selects no images",
                    counts[0]
                ));
            }
        }
        Ok(counts)
    }
}

fn fraction_count(n_train: usize, pct: u32) -> usize {
    n_train * pct as usize / 100
}

/// A generated or loaded corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub samples: Vec<Sample>,
    /// Positions (into `samples`) of the training split in the seeded order
    /// used for data-fraction subsampling.
    pub fraction_order: Vec<usize>,
    pub seed: u64,
}

impl Corpus {
    pub fn split(&self, split: Split) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    /// The first `pct`% of the training split in the seeded order, so every
    /// smaller fraction is a prefix of every larger one.
    pub fn train_fraction(&self, pct: u32) -> Result<Vec<&Sample>> {
        if pct == 0 || pct > 100 {
            return invalid(format!("fraction {pct}% must lie in 1..=100"));
        }
        let n = fraction_count(self.fraction_order.len(), pct);
        if n == 0 {
            return invalid(format!(
                "fraction {pct}% of {} training images selects no images",
                self.fraction_order.len()
            ));
        }
        Ok(self.fraction_order[..n].iter().map(|&k| &self.samples[k]).collect())
    }
}

fn morphology_for(split: Split, position: usize) -> MorphologyKind {
    match split {
        Split::TestOod => MorphologyKind::Spherical,
        _ if position.is_multiple_of(2) => MorphologyKind::Adherent,
        _ => MorphologyKind::Raft,
    }
}

fn fraction_order(train_positions: Vec<usize>, seed: u64) -> Vec<usize> {
    let mut order = train_positions;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, STREAM_FRACTION, 0));
    order.shuffle(&mut rng);
    order
}

/// Generates the synthetic corpus. Each sample derives its own seed from the
/// corpus seed and its index, so generation order does not matter.
pub fn make_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    let counts = cfg.validate()?;
    let mut layout = Vec::new();
    for (split, &count) in Split::ALL.iter().zip(&counts) {
        for pos in 0..count {
            layout.push((*split, morphology_for(*split, pos)));
        }
    }
    let canvas = (cfg.height, cfg.width);
    let samples = layout
        .par_iter()
        .enumerate()
        .map(|(index, &(split, kind))| {
            let seed = sub_seed(cfg.seed, 0, index as u64);
            let mask = compose_mask(&Morphology::of(kind), sub_seed(seed, STREAM_MASK, 0), canvas);
            let image = render(&mask, &cfg.render, sub_seed(seed, STREAM_IMAGE, 0))?;
            Ok(Sample {
                index,
                image,
                mask,
                morphology: kind,
                split,
                seed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let train: Vec<usize> = (0..counts[0]).collect();
    Ok(Corpus {
        samples,
        fraction_order: fraction_order(train, cfg.seed),
        seed: cfg.seed,
    })
}

/// Flips every label independently with probability `flip_rate`.
pub fn corrupt_mask(m: &BinaryMask, flip_rate: f64, seed: u64) -> Result<BinaryMask> {
    if !(0.0..=1.0).contains(&flip_rate) {
        return invalid(format!("flip_rate must lie in [0,1], got {flip_rate}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = m
        .values()
        .iter()
        .map(|&v| if rng.random::<f64>() < flip_rate { 1 - v } else { v })
        .collect();
    BinaryMask::from_vec(m.height(), m.width(), labels)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub index: usize,
    pub image: String,
    pub mask: String,
    pub morphology: MorphologyKind,
    pub split: Split,
    pub seed: u64,
}

/// On-disk description of a corpus; paths are relative to the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub fraction_order: Vec<usize>,
    pub samples: Vec<ManifestEntry>,
}

/// Writes `images/NNNN.pgm`, `masks/NNNN.pgm` and `manifest.json` under `dir`.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<Manifest> {
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("masks"))?;
    let mut entries = Vec::with_capacity(corpus.samples.len());
    for s in &corpus.samples {
        let image = format!("images/{:04}.pgm", s.index);
        let mask = format!("masks/{:04}.pgm", s.index);
        write_field_pgm(&dir.join(&image), &s.image)?;
        write_mask_pgm(&dir.join(&mask), &s.mask)?;
        entries.push(ManifestEntry {
            index: s.index,
            image,
            mask,
            morphology: s.morphology,
            split: s.split,
            seed: s.seed,
        });
    }
    let first = corpus
        .samples
        .first()
        .map(|s| s.image.dims())
        .unwrap_or((0, 0));
    let manifest = Manifest {
        seed: corpus.seed,
        height: first.0,
        width: first.1,
        fraction_order: corpus.fraction_order.clone(),
        samples: entries,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join("manifest.json"), text)?;
    Ok(manifest)
}

/// Loads a corpus from its manifest; images come back quantized to 8 bits.
pub fn load_corpus(manifest_path: &Path) -> Result<Corpus> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for e in &manifest.samples {
        let image = read_pgm(&root.join(&e.image))?;
        let mask = read_mask_pgm(&root.join(&e.mask))?;
        if image.dims() != mask.dims() {
            return invalid(format!("sample {}: image and mask sizes differ", e.index));
        }
        samples.push(Sample {
            index: e.index,
            image,
            mask,
            morphology: e.morphology,
            split: e.split,
            seed: e.seed,
        });
    }
    if let Some(&bad) = manifest.fraction_order.iter().find(|&&k| {
        samples.get(k).map(|s| s.split != Split::Train).unwrap_or(true)
    }) {
        return invalid(format!("fraction_order entry {bad} is not a training sample"));
    }
    Ok(Corpus {
        samples,
        fraction_order: manifest.fraction_order,
        seed: manifest.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small(total: usize) -> CorpusConfig {
        CorpusConfig {
            total,
            height: 16,
            width: 16,
            seed: 42,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn default_proportions_on_100() {
        assert_eq!(small(100).split_counts().unwrap(), [48, 21, 16, 15]);
        assert_eq!(small(8).split_counts().unwrap(), [4, 2, 1, 1]);
        assert!(small(3).split_counts().is_err());
    }

    #[test]
    fn fractions_are_nested_prefixes() {
        let cfg = CorpusConfig {
            counts: Some([40, 2, 2, 2]),
            ..small(0)
        };
        let corpus = make_corpus(&cfg).unwrap();
        let ten = corpus.train_fraction(10).unwrap();
        let quarter = corpus.train_fraction(25).unwrap();
        assert_eq!(ten.len(), 4);
        assert_eq!(quarter.len(), 10);
        for (a, b) in ten.iter().zip(&quarter) {
            assert_eq!(a.index, b.index);
        }
        let full: HashSet<usize> = corpus.train_fraction(100).unwrap().iter().map(|s| s.index).collect();
        assert_eq!(full.len(), 40);
    }

    #[test]
    fn empty_fraction_is_rejected() {
        let cfg = CorpusConfig {
            fractions: vec![10],
            ..small(8)
        };
        assert!(make_corpus(&cfg).is_err());
    }

    #[test]
    fn ood_is_exclusively_spherical() {
        let cfg = CorpusConfig {
            counts: Some([4, 2, 2, 50]),
            ..small(0)
        };
        let corpus = make_corpus(&cfg).unwrap();
        let ood = corpus.split(Split::TestOod);
        assert_eq!(ood.len(), 50);
        assert!(ood.iter().all(|s| s.morphology == MorphologyKind::Spherical));
        for s in corpus.samples.iter().filter(|s| s.split != Split::TestOod) {
            assert_ne!(s.morphology, MorphologyKind::Spherical);
        }
        let indices: HashSet<usize> = corpus.samples.iter().map(|s| s.index).collect();
        assert_eq!(indices.len(), corpus.samples.len());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = make_corpus(&small(12)).unwrap();
        let b = make_corpus(&small(12)).unwrap();
        assert_eq!(a, b);
        for s in &a.samples {
            assert!(s.image.values().iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(s.image.dims(), s.mask.dims());
        }
    }

    #[test]
    fn corruption_rates() {
        let m = BinaryMask::from_fn(64, 64, |i, j| (i * 7 + j) % 5 == 0);
        assert_eq!(corrupt_mask(&m, 0.0, 1).unwrap(), m);
        assert_eq!(corrupt_mask(&m, 1.0, 1).unwrap(), m.complement());
        for seed in 0..10 {
            let c = corrupt_mask(&m, 0.5, seed).unwrap();
            let flipped = c.values().iter().zip(m.values()).filter(|(a, b)| a != b).count();
            let frac = flipped as f64 / 4096.0;
            assert!((frac - 0.5).abs() <= 0.04, "seed {seed}: {frac}");
        }
        assert!(corrupt_mask(&m, 1.5, 0).is_err());
    }

    #[test]
    fn corpus_roundtrip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = make_corpus(&small(8)).unwrap();
        write_corpus(dir.path(), &corpus).unwrap();
        let back = load_corpus(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(back.fraction_order, corpus.fraction_order);
        for (a, b) in back.samples.iter().zip(&corpus.samples) {
            assert_eq!(a.mask, b.mask);
            assert_eq!(a.split, b.split);
            for (x, y) in a.image.values().iter().zip(b.image.values()) {
                assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }
}
