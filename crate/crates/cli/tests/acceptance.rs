//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero when a criterion fails, except for the harmonic-mean value listed
//! in `KNOWN_UNATTAINABLE`, which cannot hold for the stated inputs.

use std::time::{Duration, Instant};

use anyshot_cli::commands::{cmd_ablate, cmd_synth_data, cmd_train, median, AblationTable};
use anyshot_cli::config::{AblateConfig, EvalSettings, TrainRunConfig};
use anyshot_core::anyshot::{
    evaluate, harmonic_mean, per_class_top1, train_softmax, EvalConfig, Protocol,
};
use anyshot_core::data::{make_synthetic, nshot_subsample, LabeledSet};
use anyshot_core::gradcheck::{check_all, kl_closed_and_monte_carlo, linear_critic_penalty};
use anyshot_core::training::train;
use anyshot_core::{Mode, SoftmaxClassifier, SyntheticSpec, Tensor, TrainingConfig, Variant};
use rand::{Rng, SeedableRng};

const GRAD_CONFIGS: u64 = 20;
const GRAD_REL_TOL: f64 = 1e-5;
const GRAD_TIME_LIMIT: Duration = Duration::from_secs(60);
const PENALTY_TOL: f64 = 1e-10;
const KL_PAIRS: u64 = 10;
const KL_SAMPLES: usize = 100_000;
const KL_REL_TOL: f64 = 0.01;
const H_TARGET: f64 = 63.5;
const H_TOL: f64 = 0.05;
const SEEDS: usize = 5;
const ZSL_MIN: f64 = 0.60;
const ZSL_TIME_LIMIT: Duration = Duration::from_secs(600);
const ABLATION_MARGIN: f64 = -0.01;
const ABLATION_TIME_LIMIT: Duration = Duration::from_secs(900);
const GZSL_U_GAIN: f64 = 0.15;
const GZSL_S_DROP: f64 = 0.10;
const SHOTS: [usize; 4] = [1, 2, 5, 10];
const SHOT_TOL: f64 = 0.01;

/// Criteria whose failure is expected: the rounded u and s of the reference
/// row give H = 63.44, outside 63.5 ± 0.05.
const KNOWN_UNATTAINABLE: &[&str] = &["C4"];

/// Training setup at desk scale.
fn desk_training() -> TrainingConfig {
    TrainingConfig {
        hidden_units: 128,
        max_epochs: 30,
        ..TrainingConfig::default()
    }
}

struct Outcome {
    id: &'static str,
    pass: bool,
    /// A failure that is not excused by `KNOWN_UNATTAINABLE`.
    blocking: bool,
}

fn report(outcomes: &mut Vec<Outcome>, id: &'static str, name: &str, pass: bool, detail: String) {
    println!("{id} {} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    outcomes.push(Outcome {
        id,
        pass,
        blocking: !pass,
    });
}

fn c1() -> (bool, String) {
    let start = Instant::now();
    let (mut worst, mut entries, mut second) = (0.0f64, 0, 0);
    for seed in 0..GRAD_CONFIGS {
        for c in check_all(seed).expect("gradient check runs") {
            worst = worst.max(c.max_rel_error);
            entries += c.entries;
            if c.kind.second_order() {
                second += c.entries;
            }
        }
    }
    let t = start.elapsed();
    (
        worst <= GRAD_REL_TOL && second > 0 && t < GRAD_TIME_LIMIT,
        format!(
            "{GRAD_CONFIGS} configs, {entries} entries ({second} through the penalty), max rel err {worst:.2e} (tol {GRAD_REL_TOL:e}), {:.1}s",
            t.as_secs_f64()
        ),
    )
}

fn c2() -> (bool, String) {
    let cases = [
        (vec![0.3, 0.4], 0.5),
        (vec![0.6, 0.0, 0.8], 1.0),
        (vec![1.0, 2.0, 2.0], 3.0),
    ];
    let mut worst = 0.0f64;
    for (w, norm) in &cases {
        for conditional in [false, true] {
            let gp = linear_critic_penalty(w, conditional, 8, 2).expect("penalty runs");
            worst = worst.max((gp - (norm - 1.0) * (norm - 1.0)).abs());
        }
    }
    (
        worst <= PENALTY_TOL,
        format!("||w|| in {{0.5, 1, 3}}, max |GP - (||w||-1)^2| = {worst:.1e} (tol {PENALTY_TOL:e})"),
    )
}

fn c3() -> (bool, String) {
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for k in 0..KL_PAIRS {
        let d = r.random_range(1..=8);
        let mu: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
        let lv: Vec<f64> = (0..d).map(|_| r.random_range(-1.5..1.5)).collect();
        let (closed, mc) = kl_closed_and_monte_carlo(&mu, &lv, KL_SAMPLES, k).expect("kl runs");
        worst = worst.max((mc - closed).abs() / closed);
    }
    (
        worst <= KL_REL_TOL,
        format!("{KL_PAIRS} pairs, {KL_SAMPLES} samples, max rel err {worst:.4} (tol {KL_REL_TOL})"),
    )
}

fn c4() -> (bool, bool, String) {
    let h = 100.0 * harmonic_mean(0.576, 0.706);
    let h_ok = (h - H_TARGET).abs() <= H_TOL;
    let mut clf = SoftmaxClassifier::zeros(&[0, 1], 1);
    clf.bias = Tensor::vector(vec![1.0, 0.0]);
    let set = LabeledSet {
        features: Tensor::zeros(&[4, 1]),
        labels: vec![0, 0, 1, 1],
    };
    let acc = per_class_top1(&clf, &set, None).expect("accuracy runs").mean;
    let acc_ok = acc == 0.5;
    (
        h_ok,
        acc_ok,
        format!(
            "H(57.6, 70.6) = {h:.4} vs {H_TARGET} +/- {H_TOL} [{}]; per-class top-1 (100%/0%) = {acc} [{}]",
            if h_ok { "ok" } else { "unattainable" },
            if acc_ok { "ok" } else { "wrong" }
        ),
    )
}

fn run_ablation() -> (AblationTable, Duration) {
    let dir = tempfile::tempdir().expect("tempdir");
    let cfg = AblateConfig {
        dataset: None,
        synthetic: Some(SyntheticSpec::default()),
        output_dir: dir.path().to_path_buf(),
        training: desk_training(),
        seeds: SEEDS,
        eval: EvalSettings::default(),
    };
    let start = Instant::now();
    let table = cmd_ablate(&cfg).expect("ablation runs");
    let t = start.elapsed();
    assert!(dir.path().join("ablation.csv").exists());
    (table, t)
}

fn c5(table: &AblationTable) -> (bool, String) {
    let cell = table.cell(Variant::VaeGan, Mode::Inductive).expect("cell");
    let t: f64 = cell.seeds.iter().map(|s| s.wall_time_secs).sum();
    let zs: Vec<String> = cell.seeds.iter().map(|s| format!("{:.3}", s.zsl_t1)).collect();
    (
        cell.zsl_t1 >= ZSL_MIN && t < ZSL_TIME_LIMIT.as_secs_f64(),
        format!(
            "inductive vaegan ZSL T1 median {:.3} (seeds {}) >= {ZSL_MIN}, {t:.0}s",
            cell.zsl_t1,
            zs.join(" ")
        ),
    )
}

fn c6(table: &AblationTable, t: Duration) -> (bool, String) {
    let z = |v, m| table.cell(v, m).expect("cell").zsl_t1;
    let vt = z(Variant::VaeGan, Mode::Transductive);
    let vi = z(Variant::VaeGan, Mode::Inductive);
    let gt = z(Variant::Gan, Mode::Transductive);
    let at = z(Variant::Vae, Mode::Transductive);
    let ok = vt - vi >= ABLATION_MARGIN
        && vt - gt >= ABLATION_MARGIN
        && vt - at >= ABLATION_MARGIN
        && table.cells.len() == 6
        && t < ABLATION_TIME_LIMIT;
    (
        ok,
        format!(
            "ZSL T1 medians: vaegan trans {vt:.3}, vaegan ind {vi:.3}, gan trans {gt:.3}, vae trans {at:.3}; 6 cells in {:.0}s",
            t.as_secs_f64()
        ),
    )
}

fn c7(table: &AblationTable) -> (bool, String) {
    let cell = table.cell(Variant::VaeGan, Mode::Inductive).expect("cell");
    let eval = EvalSettings::default();
    let (mut u0, mut s0) = (Vec::new(), Vec::new());
    for k in 0..SEEDS as u64 {
        let d = make_synthetic(&SyntheticSpec {
            seed: k,
            ..SyntheticSpec::default()
        })
        .expect("dataset")
        .dataset;
        let clf = train_softmax(&d.labeled_train(), d.seen_classes(), &eval.softmax).expect("softmax");
        s0.push(per_class_top1(&clf, &d.test_seen(), None).expect("acc").mean);
        u0.push(per_class_top1(&clf, &d.test_novel().expect("test novel"), None).expect("acc").mean);
    }
    let (u0, s0) = (median(&u0), median(&s0));
    let gain = cell.gzsl_u - u0;
    let drop = s0 - cell.gzsl_s;
    (
        gain >= GZSL_U_GAIN && drop <= GZSL_S_DROP,
        format!(
            "u {u0:.3} -> {:.3} (gain {gain:.3} >= {GZSL_U_GAIN}), s {s0:.3} -> {:.3} (drop {drop:.3} <= {GZSL_S_DROP})",
            cell.gzsl_u, cell.gzsl_s
        ),
    )
}

fn c8() -> (bool, String) {
    let mut medians = Vec::new();
    for n in SHOTS {
        let mut hs = Vec::new();
        for k in 0..SEEDS as u64 {
            let base = make_synthetic(&SyntheticSpec {
                seed: k,
                ..SyntheticSpec::default()
            })
            .expect("dataset")
            .dataset;
            let d = base
                .with_splits(nshot_subsample(&base, n, k).expect("nshot"))
                .expect("splits");
            d.guard().seal_test_novel(true);
            d.guard().seal_unlabeled(true);
            let out = train(&d, &TrainingConfig { seed: k, ..desk_training() }).expect("train");
            d.guard().seal_test_novel(false);
            let cfg = EvalConfig {
                protocol: Protocol::Gfsl,
                seed: k,
                ..EvalConfig::default()
            };
            hs.push(evaluate(&out.models.generator, &d, &cfg).expect("eval").h.expect("h"));
        }
        medians.push(median(&hs));
    }
    let ok = medians.windows(2).all(|w| w[1] >= w[0] - SHOT_TOL);
    let shown: Vec<String> = SHOTS
        .iter()
        .zip(&medians)
        .map(|(n, h)| format!("n={n}: {h:.3}"))
        .collect();
    (ok, format!("GFSL H medians {} (tol {SHOT_TOL})", shown.join(", ")))
}

fn c9() -> (bool, String) {
    let dir = tempfile::tempdir().expect("tempdir");
    let manifest = cmd_synth_data(&SyntheticSpec::default(), &dir.path().join("data")).expect("data");
    let run = |name: &str, seed: u64| {
        let cfg = TrainRunConfig {
            dataset: manifest.clone(),
            output_dir: dir.path().join(name),
            training: TrainingConfig {
                max_epochs: 3,
                mode: Mode::Transductive,
                seed,
                ..desk_training()
            },
            shots: None,
            shot_seed: 0,
        };
        cmd_train(&cfg).expect("train");
        std::fs::read(cfg.output_dir.join("checkpoint.bin")).expect("checkpoint")
    };
    let (a, b, c) = (run("a", 7), run("b", 7), run("c", 8));
    (
        a == b && a != c,
        format!(
            "two runs: {} bytes, identical = {}; other seed differs = {}",
            a.len(),
            a == b,
            a != c
        ),
    )
}

fn c10(table: &AblationTable) -> (bool, String) {
    let spec = SyntheticSpec {
        n_seen: 5,
        n_novel: 2,
        d_x: 8,
        d_c: 4,
        samples_per_class: 40,
        ..SyntheticSpec::default()
    };
    let mut ok = true;
    for variant in Variant::ALL {
        for mode in Mode::ALL {
            let d = make_synthetic(&spec).expect("dataset").dataset;
            d.guard().seal_test_novel(true);
            d.guard().seal_unlabeled(mode == Mode::Inductive);
            let cfg = TrainingConfig {
                variant,
                mode,
                hidden_units: 16,
                max_epochs: 2,
                early_stop_patience: 1,
                ..TrainingConfig::default()
            };
            ok &= train(&d, &cfg).is_ok() && d.guard().test_novel_label_reads() == 0;
            if mode == Mode::Inductive {
                ok &= d.guard().unlabeled_reads() == 0;
            }
        }
    }
    // The sweep sealed the same views; its inductive cells recorded no
    // unlabeled reads and its transductive cells did read the pool.
    for cell in &table.cells {
        let reads: usize = cell.seeds.iter().map(|s| s.unlabeled_reads).sum();
        ok &= (cell.mode == Mode::Inductive) == (reads == 0);
    }
    (
        ok,
        "sealed test-novel labels in all 6 training cells and the unlabeled pool in inductive cells; no sealed read attempted".into(),
    )
}

fn main() {
    let mut outcomes = Vec::new();
    let (ok, d) = c1();
    report(&mut outcomes, "C1", "gradient correctness", ok, d);
    let (ok, d) = c2();
    report(&mut outcomes, "C2", "analytic penalty oracle", ok, d);
    let (ok, d) = c3();
    report(&mut outcomes, "C3", "KL correctness", ok, d);
    let (h_ok, acc_ok, d) = c4();
    report(&mut outcomes, "C4", "metric unit tests", h_ok && acc_ok, d);
    // Only the harmonic-mean value is excused; the per-class check must hold.
    if let Some(o) = outcomes.last_mut() {
        o.blocking = !acc_ok || (!h_ok && !KNOWN_UNATTAINABLE.contains(&o.id));
    }

    let (table, t) = run_ablation();
    let (ok, d) = c5(&table);
    report(&mut outcomes, "C5", "end-to-end synthetic ZSL", ok, d);
    let (ok, d) = c6(&table, t);
    report(&mut outcomes, "C6", "ablation trend", ok, d);
    let (ok, d) = c7(&table);
    report(&mut outcomes, "C7", "GZSL balance", ok, d);
    let (ok, d) = c8();
    report(&mut outcomes, "C8", "FSL monotonicity", ok, d);
    let (ok, d) = c9();
    report(&mut outcomes, "C9", "determinism", ok, d);
    let (ok, d) = c10(&table);
    report(&mut outcomes, "C10", "access guard", ok, d);

    let passed = outcomes.iter().filter(|o| o.pass).count();
    let blocking: Vec<&str> = outcomes.iter().filter(|o| o.blocking).map(|o| o.id).collect();
    println!(
        "acceptance: {passed}/{} passed; known unattainable: {}",
        outcomes.len(),
        KNOWN_UNATTAINABLE.join(", ")
    );
    if !blocking.is_empty() {
        println!("acceptance: blocking failures: {}", blocking.join(", "));
        std::process::exit(1);
    }
}
