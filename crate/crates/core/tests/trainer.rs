use blockscramble::adaptnet::{loss_u, FrontEnd, Lambdas, Model, ModelConfig};
use blockscramble::keying::SubkeyStream;
use blockscramble::scramble::ScramblePlan;
use blockscramble::trainer::{evaluate, train, LrSchedule, TrainConfig};
use blockscramble::{Error, Exec, Image8, LabeledExample, SchemeId, ScrambleKey};

const SIDE: usize = 8;

/// Class 0 is brighter in the top half, class 1 in the bottom half.
fn toy_images(n: usize, seed: u64) -> Vec<LabeledExample> {
    let mut rng = SubkeyStream::from_seed(&[7u8; 32], "toy-data", seed);
    (0..n)
        .map(|i| {
            let label = i % 2;
            let mut data = Vec::with_capacity(SIDE * SIDE * 3);
            for y in 0..SIDE {
                let bright = (y < SIDE / 2) == (label == 0);
                for _ in 0..SIDE * 3 {
                    let base = if bright { 170 } else { 60 };
                    data.push((base + rng.below(60) as i32 - 30) as u8);
                }
            }
            LabeledExample {
                image: Image8::new(SIDE, SIDE, 3, data).unwrap(),
                label,
            }
        })
        .collect()
}

fn scrambled(data: &[LabeledExample], key: &ScrambleKey) -> Vec<LabeledExample> {
    let plan = ScramblePlan::new(key, SIDE, SIDE).unwrap();
    data.iter()
        .map(|ex| LabeledExample {
            image: plan.scramble(&ex.image).unwrap(),
            label: ex.label,
        })
        .collect()
}

fn small_config(front: FrontEnd) -> ModelConfig {
    ModelConfig {
        conv1: 4,
        conv2: 8,
        ..ModelConfig::new(front, SIDE, SIDE, 2)
    }
}

fn short_run(epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 20,
        seed: 11,
        ..TrainConfig::desk(epochs)
    }
}

#[test]
fn learns_scrambled_toy_problem() {
    let key = ScrambleKey::from_u64(SchemeId::Ele, 4, 5).unwrap();
    let data = scrambled(&toy_images(200, 0), &key);
    let mut model = Model::init(small_config(FrontEnd::EleAdapt), 3).unwrap();
    let report = train(&mut model, &data, &[], &short_run(30), Exec::default(), |_| {}).unwrap();
    let last = report.epochs.last().unwrap();
    assert!(last.train_acc > 0.95, "train accuracy {}", last.train_acc);
    assert!(last.loss.ce < report.epochs[0].loss.ce);
}

#[test]
fn same_seed_same_run() {
    let key = ScrambleKey::from_u64(SchemeId::Ele, 4, 5).unwrap();
    let data = scrambled(&toy_images(60, 1), &key);
    let run = |exec| {
        let mut model = Model::init(small_config(FrontEnd::EleAdapt), 9).unwrap();
        let r = train(&mut model, &data, &[], &short_run(2), exec, |_| {}).unwrap();
        (r, model)
    };
    let (a, ma) = run(Exec::Parallel);
    let (b, mb) = run(Exec::Sequential);
    for (x, y) in a.epochs.iter().zip(&b.epochs) {
        assert!((x.loss.total - y.loss.total).abs() <= 1e-10);
    }
    assert_eq!(ma.params(), mb.params());
}

#[test]
fn zero_lambdas_reduce_to_cross_entropy() {
    let data = toy_images(40, 2);
    let mut model = Model::init(small_config(FrontEnd::EleAdapt), 1).unwrap();
    let cfg = TrainConfig {
        lambdas: Lambdas { u: 0.0, s: 0.0 },
        ..short_run(1)
    };
    let report = train(&mut model, &data, &[], &cfg, Exec::default(), |_| {}).unwrap();
    let l = &report.epochs[0].loss;
    assert_eq!(l.total, l.ce);
}

#[test]
fn zero_epochs_leave_model_untouched() {
    let mut model = Model::init(small_config(FrontEnd::LeAdapt), 4).unwrap();
    let before = model.params().clone();
    let cfg = TrainConfig {
        schedule: LrSchedule::scaled(0, 0.1),
        ..short_run(0)
    };
    let report = train(&mut model, &[], &[], &cfg, Exec::default(), |_| {}).unwrap();
    assert!(report.epochs.is_empty());
    assert_eq!(model.params(), &before);
}

#[test]
fn callback_sees_every_epoch() {
    let data = toy_images(20, 3);
    let mut model = Model::init(small_config(FrontEnd::None), 4).unwrap();
    let mut seen = Vec::new();
    train(&mut model, &data, &data, &short_run(3), Exec::default(), |r| {
        seen.push(r.epoch);
        assert!(r.test_acc.is_some());
        assert!(r.u_penalty.is_none());
    })
    .unwrap();
    assert_eq!(seen, vec![0, 1, 2]);
}

#[test]
fn untrained_model_is_near_chance() {
    let mut rng = SubkeyStream::from_seed(&[3u8; 32], "noise", 0);
    let data: Vec<LabeledExample> = (0..1000)
        .map(|i| LabeledExample {
            image: Image8::new(SIDE, SIDE, 3, (0..SIDE * SIDE * 3).map(|_| rng.below(256) as u8).collect())
                .unwrap(),
            label: i % 10,
        })
        .collect();
    let model = Model::init(
        ModelConfig {
            classes: 10,
            ..small_config(FrontEnd::EleAdapt)
        },
        21,
    )
    .unwrap();
    let eval = evaluate(&model, &data, Exec::default()).unwrap();
    for p in &eval.predictions {
        let sum: f64 = p.posterior.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }
    // labels carry no signal, so accuracy is binomial around 0.1 (sd ~0.0095)
    assert!((eval.accuracy - 0.1).abs() < 0.04, "accuracy {}", eval.accuracy);
}

#[test]
fn single_confident_example_scores_one() {
    let data = toy_images(1, 9);
    let model = Model::init(small_config(FrontEnd::None), 0).unwrap();
    let predicted = evaluate(&model, &data, Exec::default()).unwrap().predictions[0].class;
    let relabeled = [LabeledExample {
        image: data[0].image.clone(),
        label: predicted,
    }];
    assert_eq!(evaluate(&model, &relabeled, Exec::default()).unwrap().accuracy, 1.0);
}

#[test]
fn evaluate_rejects_empty_and_bad_labels() {
    let model = Model::init(small_config(FrontEnd::None), 0).unwrap();
    assert!(matches!(evaluate(&model, &[], Exec::default()), Err(Error::Domain(_))));
    let mut data = toy_images(2, 5);
    data[1].label = 2;
    assert!(matches!(evaluate(&model, &data, Exec::default()), Err(Error::Range(_))));
}

fn final_u_penalty(lambda_u: f64) -> (f64, f64) {
    let key = ScrambleKey::from_u64(SchemeId::Ele, 4, 5).unwrap();
    let data = scrambled(&toy_images(200, 0), &key);
    let mut model = Model::init(small_config(FrontEnd::EleAdapt), 3).unwrap();
    let cfg = TrainConfig {
        lambdas: Lambdas { u: lambda_u, s: 0.1 },
        ..short_run(30)
    };
    let report = train(&mut model, &data, &[], &cfg, Exec::default(), |_| {}).unwrap();
    let last = report.final_u_penalty().unwrap();
    assert_eq!(last, loss_u(&model.perm_matrix().unwrap()));
    (report.initial_u_penalty.unwrap(), last)
}

#[test]
fn u_penalty_sparsifies() {
    let (_, free) = final_u_penalty(0.0);
    let (_, light) = final_u_penalty(0.001);
    let (init, strong) = final_u_penalty(0.1);
    assert!(light < free, "{light} vs unpenalized {free}");
    assert!(strong <= init, "{strong} vs initial {init}");
}
