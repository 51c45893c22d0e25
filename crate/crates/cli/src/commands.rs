use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyshot_core::anyshot::{evaluate, EvalConfig, EvalReport, Protocol, SoftmaxConfig};
use anyshot_core::data::{self, load_dataset, make_synthetic, nshot_subsample};
use anyshot_core::training::{curve_csv, train, StepCounters};
use anyshot_core::{Dataset, FeatureModels, Mode, SyntheticSpec, TrainingConfig, Variant};
use serde::{Deserialize, Serialize};

use crate::config::{AblateConfig, TrainRunConfig};
use crate::CliError;

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

/// Median; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// Generates a synthetic dataset and writes it to `out_dir`. Returns the
/// manifest path.
pub fn cmd_synth_data(spec: &SyntheticSpec, out_dir: &Path) -> Result<PathBuf, CliError> {
    spec.validate()?;
    let synthetic = make_synthetic(spec)?;
    Ok(synthetic.dataset.save(out_dir)?)
}

/// Loads the dataset of a run, applying n-shot promotion when requested.
pub fn prepare_dataset(
    manifest: &Path,
    shots: Option<usize>,
    shot_seed: u64,
) -> Result<Dataset, CliError> {
    let dataset = load_dataset(manifest)?;
    match shots {
        None => Ok(dataset),
        Some(n) => {
            let splits = nshot_subsample(&dataset, n, shot_seed)?;
            Ok(dataset.with_splits(splits)?)
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config: TrainRunConfig,
    pub seed: u64,
    pub wall_time_secs: f64,
    pub counters: StepCounters,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub checkpoint: String,
    pub losses: String,
}

/// Trains and writes `checkpoint.bin`, `losses.csv` and `run.json` into the
/// output directory.
pub fn cmd_train(config: &TrainRunConfig) -> Result<RunMetadata, CliError> {
    config.validate()?;
    let dataset = prepare_dataset(&config.dataset, config.shots, config.shot_seed)?;
    create_dir(&config.output_dir)?;
    let started = Instant::now();
    dataset.guard().seal_test_novel(true);
    if config.training.mode == Mode::Inductive {
        dataset.guard().seal_unlabeled(true);
    }
    let outcome = train(&dataset, &config.training)?;
    let t = &config.training;
    let ckpt = config.output_dir.join("checkpoint.bin");
    write(&ckpt, outcome.models.to_checkpoint_bytes(t.variant, t.mode))?;
    write(&config.output_dir.join("losses.csv"), curve_csv(&outcome.curve))?;
    let meta = RunMetadata {
        config: config.clone(),
        seed: t.seed,
        wall_time_secs: started.elapsed().as_secs_f64(),
        counters: outcome.counters,
        epochs_run: outcome.epochs_run,
        best_epoch: outcome.best_epoch,
        checkpoint: "checkpoint.bin".into(),
        losses: "losses.csv".into(),
    };
    write(&config.output_dir.join("run.json"), to_json(&meta))?;
    Ok(meta)
}

#[derive(Clone, Debug)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    pub protocol: Protocol,
    pub shots: Option<usize>,
    pub shot_seed: u64,
    pub top_k: Option<usize>,
    pub synthetic_per_class: usize,
    pub synthetic_seen_per_class: usize,
    pub seed: u64,
    pub softmax: SoftmaxConfig,
    pub out: Option<PathBuf>,
    pub per_class_csv: Option<PathBuf>,
}

impl EvalArgs {
    pub fn new(checkpoint: PathBuf, dataset: PathBuf, protocol: Protocol) -> Self {
        Self {
            checkpoint,
            dataset,
            protocol,
            shots: None,
            shot_seed: 0,
            top_k: None,
            synthetic_per_class: anyshot_core::anyshot::DEFAULT_SYNTHETIC_PER_CLASS,
            synthetic_seen_per_class: 0,
            seed: 0,
            softmax: SoftmaxConfig::default(),
            out: None,
            per_class_csv: None,
        }
    }
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalReport, CliError> {
    if args.protocol.few_shot() != args.shots.is_some() {
        return Err(CliError::Validation(format!(
            "protocol {:?} {} --shots",
            args.protocol,
            if args.protocol.few_shot() { "requires" } else { "does not take" }
        )));
    }
    let (models, header) = FeatureModels::load(&args.checkpoint)?;
    let dataset = prepare_dataset(&args.dataset, args.shots, args.shot_seed)?;
    if header.spec.d_x != dataset.d_x() || header.spec.d_c != dataset.d_c() {
        return Err(CliError::Validation(format!(
            "checkpoint expects d_x={} d_c={}, dataset has d_x={} d_c={}",
            header.spec.d_x,
            header.spec.d_c,
            dataset.d_x(),
            dataset.d_c()
        )));
    }
    let config = EvalConfig {
        protocol: args.protocol,
        synthetic_per_class: args.synthetic_per_class,
        synthetic_seen_per_class: args.synthetic_seen_per_class,
        top_k: args.top_k,
        softmax: args.softmax.clone(),
        seed: args.seed,
    };
    let mut report = evaluate(&models.generator, &dataset, &config)?;
    report.variant = Some(header.variant);
    report.mode = Some(header.mode);
    if let Some(path) = &args.out {
        write(path, to_json(&report))?;
    }
    if let Some(path) = &args.per_class_csv {
        write(path, report.per_class_csv())?;
    }
    Ok(report)
}

/// One seed of one ablation cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub zsl_t1: f64,
    pub gzsl_u: f64,
    pub gzsl_s: f64,
    pub gzsl_h: f64,
    /// Reads of the unlabeled pool made by training.
    pub unlabeled_reads: usize,
    /// Training plus both evaluations.
    pub wall_time_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub variant: Variant,
    pub mode: Mode,
    pub zsl_t1: f64,
    pub gzsl_u: f64,
    pub gzsl_s: f64,
    pub gzsl_h: f64,
    pub seeds: Vec<SeedResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub cells: Vec<AblationCell>,
}

impl AblationTable {
    pub fn cell(&self, variant: Variant, mode: Mode) -> Option<&AblationCell> {
        self.cells
            .iter()
            .find(|c| c.variant == variant && c.mode == mode)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,mode,seeds,zsl_t1,gzsl_u,gzsl_s,gzsl_h\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                c.variant.as_str(),
                c.mode.as_str(),
                c.seeds.len(),
                c.zsl_t1,
                c.gzsl_u,
                c.gzsl_s,
                c.gzsl_h
            ));
        }
        out
    }
}

/// Datasets of the sweep, one per seed.
pub fn ablation_datasets(config: &AblateConfig) -> Result<Vec<Dataset>, CliError> {
    match (&config.dataset, &config.synthetic) {
        (Some(path), _) => {
            let d = load_dataset(path)?;
            Ok((0..config.seeds).map(|_| d.with_new_guard()).collect())
        }
        (None, Some(spec)) => (0..config.seeds as u64)
            .map(|k| {
                let spec = SyntheticSpec {
                    seed: spec.seed + k,
                    ..spec.clone()
                };
                Ok(make_synthetic(&spec)?.dataset)
            })
            .collect(),
        (None, None) => Err(CliError::Validation("no dataset".into())),
    }
}

/// Trains and evaluates one cell on one dataset. Test-novel labels are
/// sealed during training, and so is the unlabeled pool in inductive mode.
pub fn run_cell_seed(
    dataset: &Dataset,
    base: &TrainingConfig,
    variant: Variant,
    mode: Mode,
    seed: u64,
    eval: &crate::config::EvalSettings,
) -> Result<SeedResult, CliError> {
    let started = Instant::now();
    let dataset = dataset.with_new_guard();
    let training = TrainingConfig {
        variant,
        mode,
        seed,
        ..base.clone()
    };
    let guard = dataset.guard();
    guard.seal_test_novel(true);
    guard.seal_unlabeled(mode == Mode::Inductive);
    let outcome = train(&dataset, &training)?;
    let unlabeled_reads = guard.unlabeled_reads();
    guard.seal_test_novel(false);
    guard.seal_unlabeled(true);
    let mk = |protocol| EvalConfig {
        protocol,
        synthetic_per_class: eval.synthetic_per_class,
        softmax: eval.softmax.clone(),
        seed,
        ..EvalConfig::default()
    };
    let zsl = evaluate(&outcome.models.generator, &dataset, &mk(Protocol::Zsl))?;
    let gzsl = evaluate(&outcome.models.generator, &dataset, &mk(Protocol::Gzsl))?;
    Ok(SeedResult {
        seed,
        zsl_t1: zsl.t1.unwrap_or(0.0),
        gzsl_u: gzsl.u.unwrap_or(0.0),
        gzsl_s: gzsl.s.unwrap_or(0.0),
        gzsl_h: gzsl.h.unwrap_or(0.0),
        unlabeled_reads,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

/// The {gan, vae, vaegan} x {inductive, transductive} table, medians over
/// seeds. Writes `ablation.csv`, `ablation.json` and `ablation_run.json`.
pub fn cmd_ablate(config: &AblateConfig) -> Result<AblationTable, CliError> {
    config.validate()?;
    let datasets = ablation_datasets(config)?;
    if datasets.iter().any(|d| !d.has_unlabeled()) {
        return Err(CliError::Validation(
            "ablation needs a dataset with an unlabeled pool".into(),
        ));
    }
    create_dir(&config.output_dir)?;
    let started = Instant::now();
    let mut cells = Vec::new();
    for variant in Variant::ALL {
        for mode in Mode::ALL {
            let mut seeds = Vec::new();
            for (k, dataset) in datasets.iter().enumerate() {
                let seed = config.training.seed + k as u64;
                let r = run_cell_seed(dataset, &config.training, variant, mode, seed, &config.eval)?;
                log::info!(
                    "{} {} seed {seed}: zsl {:.3} h {:.3}",
                    variant.as_str(),
                    mode.as_str(),
                    r.zsl_t1,
                    r.gzsl_h
                );
                seeds.push(r);
            }
            let m = |f: fn(&SeedResult) -> f64| median(&seeds.iter().map(f).collect::<Vec<_>>());
            cells.push(AblationCell {
                variant,
                mode,
                zsl_t1: m(|r| r.zsl_t1),
                gzsl_u: m(|r| r.gzsl_u),
                gzsl_s: m(|r| r.gzsl_s),
                gzsl_h: m(|r| r.gzsl_h),
                seeds,
            });
        }
    }
    let table = AblationTable { cells };
    write(&config.output_dir.join("ablation.csv"), table.to_csv())?;
    write(&config.output_dir.join("ablation.json"), to_json(&table))?;
    let meta = serde_json::json!({
        "config": config,
        "wall_time_secs": started.elapsed().as_secs_f64(),
    });
    write(&config.output_dir.join("ablation_run.json"), to_json(&meta))?;
    Ok(table)
}

/// Converts a headerless numeric CSV into a matrix blob.
pub fn cmd_convert_csv(input: &Path, output: &Path) -> Result<(usize, usize), CliError> {
    Ok(data::convert_csv(input, output)?)
}
