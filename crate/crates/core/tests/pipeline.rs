use pdeseg::datagen::{corrupt_mask, load_corpus, make_corpus, write_corpus, CorpusConfig, Split};
use pdeseg::harness::{run_experiment, Constraint, ExperimentSpec, MetricKind, SweepAxis};
use pdeseg::predictor::{forward, train_on, ArchConfig, ParamSet, TrainConfig};
use pdeseg::solver::{solve_variational, LatentInit, SolveConfig};
use pdeseg::{BinaryMask, CompositeWeights, Field2D};
use proptest::prelude::*;

fn tiny_corpus(counts: [usize; 4], size: usize, seed: u64) -> CorpusConfig {
    CorpusConfig {
        counts: Some(counts),
        height: size,
        width: size,
        seed,
        ..CorpusConfig::default()
    }
}

fn tiny_arch() -> ArchConfig {
    ArchConfig::new(1, 3)
}

fn short_train(epochs: (usize, usize)) -> TrainConfig {
    TrainConfig {
        epochs_stage1: epochs.0,
        epochs_stage2: epochs.1,
        batch_size: 2,
        weights: CompositeWeights {
            lambda_rd: 0.1,
            lambda_pf: 0.1,
        },
        ..TrainConfig::default()
    }
}

#[test]
fn corpus_round_trips_through_disk() {
    let corpus = make_corpus(&tiny_corpus([3, 1, 1, 2], 24, 5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_corpus(dir.path(), &corpus).unwrap();
    assert_eq!(manifest.samples.len(), 7);
    let back = load_corpus(&dir.path().join("manifest.json")).unwrap();

    assert_eq!(back.fraction_order, corpus.fraction_order);
    assert_eq!(back.seed, corpus.seed);
    for (a, b) in corpus.samples.iter().zip(&back.samples) {
        assert_eq!((a.index, a.split, a.morphology, a.seed), (b.index, b.split, b.morphology, b.seed));
        assert_eq!(a.mask, b.mask);
        // Images are stored with 8 bits.
        let worst = a
            .image
            .values()
            .iter()
            .zip(b.image.values())
            .map(|(x, y)| (x.clamp(0.0, 1.0) - y).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 0.5 / 255.0 + 1e-12, "sample {}: {worst}", a.index);
    }
}

#[test]
fn corpus_generation_ignores_thread_count() {
    let cfg = tiny_corpus([4, 2, 2, 2], 16, 11);
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let a = one.install(|| make_corpus(&cfg)).unwrap();
    let b = three.install(|| make_corpus(&cfg)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn trained_params_survive_serialization() {
    let corpus = make_corpus(&tiny_corpus([2, 1, 1, 1], 16, 3)).unwrap();
    let pairs = |s: Split| -> Vec<(&Field2D, &BinaryMask)> {
        corpus.split(s).into_iter().map(|x| (&x.image, &x.mask)).collect()
    };
    let (params, log) = train_on(&pairs(Split::Train), &pairs(Split::Val), &short_train((2, 2)), &tiny_arch()).unwrap();
    assert_eq!(log.records.len(), 4);
    assert_eq!(log.records.iter().map(|r| r.stage).collect::<Vec<_>>(), [1, 1, 2, 2]);

    let back = ParamSet::from_json(&params.to_json().unwrap()).unwrap();
    assert_eq!(back.as_slice(), params.as_slice());
    for s in corpus.split(Split::TestOod) {
        assert_eq!(forward(&s.image, &params).unwrap(), forward(&s.image, &back).unwrap());
    }
}

#[test]
fn sweep_shares_stage_one_across_values() {
    let corpus = make_corpus(&tiny_corpus([2, 1, 1, 1], 16, 8)).unwrap();
    let spec = ExperimentSpec {
        constraint: Constraint::RdPf,
        sweep: SweepAxis::D,
        sweep_values: vec![0.5, 2.0],
        repeats: 2,
        metrics: vec![MetricKind::Dice],
        ..ExperimentSpec::default()
    };
    let out = run_experiment(&spec, &corpus, &short_train((1, 1)), &tiny_arch()).unwrap();
    assert_eq!(out.rows.len(), spec.row_count());
    assert_eq!(out.rows.len(), 2 * 2 * 2 * 2);

    for seed in [0, 1] {
        for split in [Split::TestIn, Split::TestOod] {
            let stage1: Vec<f64> = out
                .rows
                .iter()
                .filter(|r| r.stage == 1 && r.seed == seed && r.split == split)
                .map(|r| r.value)
                .collect();
            assert_eq!(stage1.len(), 2);
            assert_eq!(stage1[0].to_bits(), stage1[1].to_bits());
        }
    }
    let baseline = ExperimentSpec {
        constraint: Constraint::Baseline,
        ..spec.clone()
    };
    let base = run_experiment(&baseline, &corpus, &short_train((1, 1)), &tiny_arch()).unwrap();
    assert!(base.rows.iter().all(|r| r.stage == 1));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn solver_field_stays_in_unit_interval(
        seed in 0u64..1000,
        flip in 0.0f64..0.3,
        lrd in 0.0f64..0.5,
        lpf in 0.0f64..0.5,
        noisy in any::<bool>(),
    ) {
        let clean = BinaryMask::from_fn(12, 14, |i, j| (i as i64 - 6).pow(2) + (j as i64 - 7).pow(2) < 16);
        let target = corrupt_mask(&clean, flip, seed).unwrap();
        let cfg = SolveConfig {
            stage1_iters: 15,
            stage2_iters: 10,
            weights: CompositeWeights { lambda_rd: lrd, lambda_pf: lpf },
            seed,
            init: if noisy { LatentInit::Noisy { sigma: 1.0 } } else { LatentInit::Zeros },
            ..SolveConfig::default()
        };
        let report = solve_variational(&target, &cfg).unwrap();
        prop_assert_eq!(report.loss_log.len(), 25);
        prop_assert_eq!(report.stage_boundary, 15);
        prop_assert!(report.loss_log.iter().all(|r| r.loss.total.is_finite()));
        prop_assert!(report.final_field.values().iter().all(|&u| u > 0.0 && u < 1.0));
    }
}
