//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Criteria 7-9 train on a two-class CIFAR-10 subset read from
//! `$CIFAR10_DIR` (default `data/cifar-10-batches-bin` in the workspace),
//! which must hold the standard `data_batch_{1..5}.bin` and `test_batch.bin`.

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use blockscramble::adaptnet::{
    gradcheck, loss_ce, loss_s, loss_u, one_hot, pixel_shuffle, adaptnet_forward, FrontEnd,
    Model, ModelConfig,
};
use blockscramble::dataio::{read_cifar, CifarVariant};
use blockscramble::keying::SubkeyStream;
use blockscramble::scramble::{etc_apply, key_space, EtcBlockOps, ScramblePlan};
use blockscramble::trainer::{evaluate, train, TrainConfig, TrainReport};
use blockscramble::{
    Exec, FeatureMap, Image8, LabeledExample, PseudoPermMatrix, SchemeId, ScrambleKey,
};
use num_bigint::BigUint;
use num_traits::{One, ToPrimitive};

/// CIFAR-10 classes used for the two-class runs: frog and truck.
const CLASS_PAIR: [u8; 2] = [6, 9];
const TRAIN_PER_CLASS: usize = 1000;
const TEST_PER_CLASS: usize = 200;
const EPOCHS: usize = 30;
const BATCH: usize = 128;
const KEY_SEED: u64 = 2021;
const MODEL_SEED: u64 = 1;
const TRAIN_SEED: u64 = 7;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit_secs: f64, what: &str) -> Result<(), String> {
    ensure(
        elapsed.as_secs_f64() < limit_secs,
        format!("{what} took {:.1}s, limit {limit_secs}s", elapsed.as_secs_f64()),
    )
}

fn noise_image(rng: &mut SubkeyStream, h: usize, w: usize) -> Image8 {
    Image8::new(h, w, 3, (0..h * w * 3).map(|_| rng.below(256) as u8).collect()).unwrap()
}

fn seed32(tag: u8) -> [u8; 32] {
    [tag; 32]
}

fn c1_round_trips() -> Check {
    let start = Instant::now();
    let mut rng = SubkeyStream::from_seed(&seed32(1), "acceptance-images", 0);
    let images: Vec<Image8> = (0..100).map(|_| noise_image(&mut rng, 32, 32)).collect();
    let mut failures = 0;
    for scheme in SchemeId::ALL {
        for k in 0..10 {
            let key = ScrambleKey::from_u64(scheme, 4, 1000 + k).map_err(|e| e.to_string())?;
            let plan = ScramblePlan::new(&key, 32, 32).map_err(|e| e.to_string())?;
            let s = plan.scramble_batch(&images, Exec::default()).map_err(|e| e.to_string())?;
            let back = plan.unscramble_batch(&s, Exec::default()).map_err(|e| e.to_string())?;
            failures += back.iter().zip(&images).filter(|(a, b)| a != b).count();
        }
    }
    ensure(failures == 0, format!("{failures} round-trip failures"))?;
    within(start.elapsed(), 10.0, "3000 round trips")?;
    Ok(format!("3000/3000 byte-exact in {:.2}s", start.elapsed().as_secs_f64()))
}

fn fact(n: u32) -> BigUint {
    (1..=n).fold(BigUint::one(), |acc, k| acc * k)
}

fn pow2(n: u32) -> BigUint {
    BigUint::one() << n
}

fn log2_of(x: &BigUint) -> f64 {
    // shift down to 53 significant bits, then take the float log
    let bits = x.bits();
    let shift = bits.saturating_sub(53);
    let top = (x >> shift).to_f64().unwrap();
    top.log2() + shift as f64
}

fn c2_key_space_formulas() -> Check {
    let start = Instant::now();
    let ks = |s| key_space(s, 4, 64).map_err(|e| e.to_string());
    let (le, etc, ele) = (ks(SchemeId::Le)?, ks(SchemeId::Etc)?, ks(SchemeId::Ele)?);
    let le_closed = fact(96) * pow2(96);
    let etc_closed = BigUint::from(8u32).pow(64) * pow2(64) * BigUint::from(6u32).pow(64) * fact(64);
    let ele_closed = le_closed.pow(64) * fact(64);
    ensure(le.exact == le_closed, "LE differs from 96!·2^96")?;
    ensure(etc.exact == etc_closed, "EtC differs from 8^64·2^64·6^64·64!")?;
    ensure(ele.exact == ele_closed, "ELE differs from (96!·2^96)^64·64!")?;
    ensure(ele.exact > etc.exact && etc.exact > le.exact, "ordering ELE > EtC > LE violated")?;
    let le_bits = log2_of(&le_closed);
    ensure((le.log2_bits - le_bits).abs() < 1e-6, "log2_bits inconsistent with exact value")?;
    ensure((le_bits - 594.2).abs() <= 0.1, format!("LE log2 {le_bits:.3} not within 594.2 ± 0.1"))?;
    within(start.elapsed(), 1.0, "key-space evaluation")?;
    Ok(format!(
        "log2: LE {:.2}, EtC {:.2}, ELE {:.2}",
        le.log2_bits, etc.log2_bits, ele.log2_bits
    ))
}

fn c3_ele_identity() -> Check {
    for (b, n) in [(2usize, 4usize), (4, 64)] {
        let ele = key_space(SchemeId::Ele, b, n).map_err(|e| e.to_string())?;
        let le1 = key_space(SchemeId::Le, b, 1).map_err(|e| e.to_string())?;
        ensure(
            ele.exact == le1.exact.pow(n as u32) * fact(n as u32),
            format!("identity fails for B={b}, N={n}"),
        )?;
    }
    Ok("exact for (2,4) and (4,64)".into())
}

fn c4_loss_values() -> Check {
    let id = PseudoPermMatrix::identity(4);
    ensure(loss_u(&id) == 0.0, "loss_u(identity) != 0")?;
    let uniform = PseudoPermMatrix::new(4, vec![0.25; 16]).map_err(|e| e.to_string())?;
    ensure(loss_u(&uniform) == 0.25, format!("loss_u(uniform) = {}", loss_u(&uniform)))?;
    let flat = FeatureMap::new(3, 5, 2, vec![0.7; 30]).map_err(|e| e.to_string())?;
    ensure(loss_s(&[flat]) == 0.0, "loss_s(constant) != 0")?;
    let ramp = FeatureMap::new(2, 2, 1, vec![0.0, 1.0, 0.0, 1.0]).map_err(|e| e.to_string())?;
    ensure(loss_s(&[ramp.clone()]) == 1.0, format!("loss_s(ramp) = {}", loss_s(&[ramp])))?;
    let ce = loss_ce(&[vec![0.5, 0.5]], &[one_hot(0, 2)]).map_err(|e| e.to_string())?;
    ensure(
        (ce.value - std::f64::consts::LN_2).abs() < 1e-10,
        format!("loss_ce = {}", ce.value),
    )?;
    Ok("loss_u 0 / 0.25, loss_s 0 / 1.0, loss_ce ln 2".into())
}

fn c5_gradients() -> Check {
    let start = Instant::now();
    let checks = gradcheck::run_all(20, 2024).map_err(|e| e.to_string())?;
    let mut per_name = std::collections::BTreeMap::<String, usize>::new();
    for c in &checks {
        *per_name.entry(c.name.clone()).or_default() += 1;
    }
    ensure(per_name.values().all(|&n| n >= 20), "fewer than 20 draws for some check")?;
    if let Some(first) = checks.iter().find(|c| !c.passed()) {
        let n = checks.iter().filter(|c| !c.passed()).count();
        return Err(format!(
            "{n} failures, first: {} draw {} rel error {:.3e}",
            first.name, first.draw, first.rel_error
        ));
    }
    within(start.elapsed(), 120.0, "gradient suite")?;
    let worst = checks.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    Ok(format!(
        "{} checks over {:?}, worst rel error {worst:.2e}, {:.1}s",
        checks.len(),
        per_name.keys().collect::<Vec<_>>(),
        start.elapsed().as_secs_f64()
    ))
}

fn c6_shapes() -> Check {
    let cfg = ModelConfig::new(FrontEnd::EleAdapt, 32, 32, 10);
    let model = Model::init(cfg, 5).map_err(|e| e.to_string())?;
    let mut rng = SubkeyStream::from_seed(&seed32(6), "acceptance-shapes", 0);
    let out = adaptnet_forward(&noise_image(&mut rng, 32, 32), &model).map_err(|e| e.to_string())?;
    ensure(
        (out.height, out.width, out.channels) == (32, 32, 3),
        format!("adaptation output {}x{}x{}", out.height, out.width, out.channels),
    )?;
    for i in 0..1000 {
        let (h, w, r) = (1 + i % 5, 1 + (i / 5) % 5, 1 + i % 4);
        let c = r * r * (1 + i % 3);
        let data: Vec<f64> = (0..h * w * c).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let fm = FeatureMap::new(h, w, c, data.clone()).map_err(|e| e.to_string())?;
        let shuffled = pixel_shuffle(&fm, r).map_err(|e| e.to_string())?;
        let mut a = data;
        let mut b = shuffled.data;
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        ensure(a == b, format!("pixel_shuffle changed the multiset on map {i}"))?;
    }
    Ok("32x32x3 -> 32x32x3; multiset kept on 1000 maps".into())
}

fn c10_enumeration() -> Check {
    let probe = Image8::new(1, 2, 3, vec![1, 2, 3, 4, 5, 6]).map_err(|e| e.to_string())?;
    let perms: Vec<[usize; 3]> = vec![[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut distinct = HashSet::new();
    for a in &perms {
        for b in &perms {
            for bp in [[0usize, 1], [1, 0]] {
                let ops = [
                    EtcBlockOps::new(0, false, *a).map_err(|e| e.to_string())?,
                    EtcBlockOps::new(0, false, *b).map_err(|e| e.to_string())?,
                ];
                let out = etc_apply(&probe, 1, &ops, &bp).map_err(|e| e.to_string())?;
                distinct.insert(out.into_data());
            }
        }
    }
    let expected = 6 * 6 * 2;
    ensure(distinct.len() == expected, format!("{} distinct transforms", distinct.len()))?;
    Ok(format!("{expected} distinct transforms = 6^2 * 2!"))
}

fn cifar_dir() -> PathBuf {
    std::env::var_os("CIFAR10_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..");
            root.canonicalize().unwrap_or(root).join("data/cifar-10-batches-bin")
        })
}

struct Subset {
    train: Vec<LabeledExample>,
    test: Vec<LabeledExample>,
}

fn take_pair(
    files: &[PathBuf],
    per_class: usize,
) -> Result<Vec<LabeledExample>, String> {
    let mut counts = [0usize; 2];
    let mut out = Vec::new();
    for f in files {
        for ex in read_cifar(f, CifarVariant::Cifar10).map_err(|e| e.to_string())? {
            if let Some(k) = CLASS_PAIR.iter().position(|&c| usize::from(c) == ex.label) {
                if counts[k] < per_class {
                    counts[k] += 1;
                    out.push(LabeledExample { image: ex.image, label: k });
                }
            }
        }
        if counts.iter().all(|&c| c == per_class) {
            return Ok(out);
        }
    }
    Err(format!("only {counts:?} images of classes {CLASS_PAIR:?}"))
}

fn load_subset() -> Result<Subset, String> {
    let dir = cifar_dir();
    let train_files: Vec<PathBuf> = (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect();
    let test_file = dir.join("test_batch.bin");
    if !train_files.iter().chain([&test_file]).all(|p| p.is_file()) {
        return Err(format!(
            "CIFAR-10 binary batches not found in {} (set CIFAR10_DIR)",
            dir.display()
        ));
    }
    Ok(Subset {
        train: take_pair(&train_files, TRAIN_PER_CLASS)?,
        test: take_pair(&[test_file], TEST_PER_CLASS)?,
    })
}

fn scramble_all(data: &[LabeledExample], key: &ScrambleKey) -> Result<Vec<LabeledExample>, String> {
    let plan = ScramblePlan::new(key, 32, 32).map_err(|e| e.to_string())?;
    let images: Vec<Image8> = data.iter().map(|e| e.image.clone()).collect();
    let scrambled = plan.scramble_batch(&images, Exec::default()).map_err(|e| e.to_string())?;
    Ok(scrambled
        .into_iter()
        .zip(data)
        .map(|(image, e)| LabeledExample { image, label: e.label })
        .collect())
}

struct Run {
    report: TrainReport,
    test_acc: f64,
    secs: f64,
}

fn run(front: FrontEnd, train_set: &[LabeledExample], test_set: &[LabeledExample]) -> Result<Run, String> {
    let start = Instant::now();
    let mut model = Model::init(ModelConfig::new(front, 32, 32, 2), MODEL_SEED).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        batch_size: BATCH,
        seed: TRAIN_SEED,
        ..TrainConfig::desk(EPOCHS)
    };
    let report = train(&mut model, train_set, &[], &cfg, Exec::default(), |r| {
        eprintln!("    [{}] {}", front.as_str(), r.to_line())
    })
    .map_err(|e| e.to_string())?;
    let test_acc = evaluate(&model, test_set, Exec::default()).map_err(|e| e.to_string())?.accuracy;
    Ok(Run {
        report,
        test_acc,
        secs: start.elapsed().as_secs_f64(),
    })
}

struct Learnability {
    ele_adapt: Run,
    ele_plain: Run,
    plain: Run,
    scrambled_train: Vec<LabeledExample>,
    scrambled_test: Vec<LabeledExample>,
}

fn learnability() -> Result<Learnability, String> {
    let data = load_subset()?;
    let key = ScrambleKey::from_u64(SchemeId::Ele, 4, KEY_SEED).map_err(|e| e.to_string())?;
    let scrambled_train = scramble_all(&data.train, &key)?;
    let scrambled_test = scramble_all(&data.test, &key)?;
    Ok(Learnability {
        ele_adapt: run(FrontEnd::EleAdapt, &scrambled_train, &scrambled_test)?,
        ele_plain: run(FrontEnd::None, &scrambled_train, &scrambled_test)?,
        plain: run(FrontEnd::None, &data.train, &data.test)?,
        scrambled_train,
        scrambled_test,
    })
}

fn c7(l: &Result<Learnability, String>) -> [(&'static str, Check); 3] {
    match l {
        Err(e) => [
            ("7a", Err(e.clone())),
            ("7b", Err(e.clone())),
            ("7c", Err(e.clone())),
        ],
        Ok(l) => {
            let total = l.ele_adapt.secs + l.ele_plain.secs + l.plain.secs;
            let time_ok = within(Duration::from_secs_f64(total), 1800.0, "criterion 7 runs");
            let a = l.ele_adapt.test_acc;
            let b = l.ele_plain.test_acc;
            let c = l.plain.test_acc;
            [
                (
                    "7a",
                    ensure(a >= 0.70, format!("ELE + ELE-Adapt test acc {a:.4} < 0.70"))
                        .and(time_ok.clone())
                        .map(|_| format!("ELE + ELE-Adapt test acc {a:.4} ({:.0}s)", l.ele_adapt.secs)),
                ),
                (
                    "7b",
                    ensure(b < a, format!("ELE + no adaptation {b:.4} not below {a:.4}"))
                        .map(|_| format!("ELE + no adaptation {b:.4} < {a:.4} ({:.0}s)", l.ele_plain.secs)),
                ),
                (
                    "7c",
                    ensure(c >= 0.85, format!("plain test acc {c:.4} < 0.85"))
                        .and(time_ok)
                        .map(|_| format!("plain test acc {c:.4} ({:.0}s)", l.plain.secs)),
                ),
            ]
        }
    }
}

fn c8(l: &Result<Learnability, String>) -> Check {
    let l = l.as_ref().map_err(Clone::clone)?;
    let init = l.ele_adapt.report.initial_u_penalty.ok_or("no U in ELE-Adapt model")?;
    let last = l.ele_adapt.report.final_u_penalty().ok_or("no U in ELE-Adapt model")?;
    ensure(last <= init, format!("loss_u rose from {init:.6} to {last:.6}"))?;
    Ok(format!("loss_u {init:.6} -> {last:.6}"))
}

fn c9(l: &Result<Learnability, String>) -> Check {
    let l = l.as_ref().map_err(Clone::clone)?;
    let again = run(FrontEnd::EleAdapt, &l.scrambled_train, &l.scrambled_test)?;
    let e0 = |r: &Run| r.report.epochs.first().map(|e| e.loss.total).unwrap_or(f64::NAN);
    let (x, y) = (e0(&l.ele_adapt), e0(&again));
    ensure((x - y).abs() <= 1e-10, format!("epoch-0 loss {x} vs {y}"))?;
    ensure(
        l.ele_adapt.test_acc == again.test_acc,
        format!("final test acc {} vs {}", l.ele_adapt.test_acc, again.test_acc),
    )?;
    Ok(format!("epoch-0 loss {x:.12}, test acc {:.4} both runs", again.test_acc))
}

fn guarded(f: impl FnOnce() -> Check) -> Check {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    })
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, &str, Check)> = vec![
        ("1", "round-trip exactness", guarded(c1_round_trips)),
        ("2", "key-space formulas", guarded(c2_key_space_formulas)),
        ("3", "ELE key-space identity", guarded(c3_ele_identity)),
        ("4", "loss unit values", guarded(c4_loss_values)),
        ("5", "gradient suite", guarded(c5_gradients)),
        ("6", "shape contract", guarded(c6_shapes)),
    ];
    let learn = catch_unwind(learnability).unwrap_or_else(|_| Err("training panicked".into()));
    let names = ["toy learnability, ELE + ELE-Adapt", "toy learnability, ELE without adaptation", "toy learnability, plain data"];
    for ((id, check), name) in c7(&learn).into_iter().zip(names) {
        results.push((id, name, check));
    }
    results.push(("8", "sparsification direction", guarded(|| c8(&learn))));
    results.push(("9", "determinism of 7a", guarded(|| c9(&learn))));
    results.push(("10", "72-transform enumeration", guarded(c10_enumeration)));

    let mut failed = 0;
    for (id, name, check) in &results {
        match check {
            Ok(detail) => println!("criterion {id} [{name}]: PASS - {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {id} [{name}]: FAIL - {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
