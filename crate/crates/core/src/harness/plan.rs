//! Experiment plans and their execution.

use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{read_dataset, split_80_20, standardize};
use crate::error::{Error, Result};
use crate::ndcore::{hash_str, mix_seed};
use crate::simgen::{gen_scenario, MultiModalSample, SimScenario, SplitDataset};

use super::models::{train_method, Method, TrainingConfig};

/// Environment variable capping the number of concurrent runs.
pub const WORKERS_ENV: &str = "INVA_WORKERS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeSpec {
    pub n: usize,
    pub d: usize,
}

/// Cartesian grid over polynomial order, noise level and `(n, d)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioGrid {
    pub orders: Vec<usize>,
    pub noise_sds: Vec<f64>,
    pub sizes: Vec<SizeSpec>,
    #[serde(default = "default_modalities")]
    pub modalities: usize,
}

fn default_modalities() -> usize {
    2
}

impl ScenarioGrid {
    /// Scenarios in `order × σ × (n, d)` order; seeds are filled in per run.
    pub fn scenarios(&self) -> Vec<SimScenario> {
        let mut out = Vec::new();
        for &order in &self.orders {
            for &sd in &self.noise_sds {
                for s in &self.sizes {
                    let mut sc = SimScenario::new(s.n, s.d, order, sd, 0);
                    sc.modalities = self.modalities;
                    out.push(sc);
                }
            }
        }
        out
    }
}

/// A stored dataset resampled into 80/20 splits, one per repetition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    pub path: PathBuf,
    /// Z-score inputs by training-split statistics.
    #[serde(default)]
    pub standardize: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<ScenarioGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSource>,
    pub methods: Vec<Method>,
    pub repetitions: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentPlan {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let plan: ExperimentPlan = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::InvalidConfig("repetitions must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("plan lists no methods".into()));
        }
        match (&self.grid, &self.dataset) {
            (Some(g), None) => {
                if g.orders.is_empty() || g.noise_sds.is_empty() || g.sizes.is_empty() {
                    return Err(Error::InvalidConfig("scenario grid has an empty axis".into()));
                }
                for sc in g.scenarios() {
                    sc.validate()?;
                }
            }
            (None, Some(_)) => {}
            _ => {
                return Err(Error::InvalidConfig(
                    "plan needs exactly one of `grid` and `dataset`".into(),
                ))
            }
        }
        self.training.validate()
    }

    /// Scenario identifiers in execution order.
    pub fn scenario_ids(&self) -> Vec<String> {
        match &self.grid {
            Some(g) => g.scenarios().iter().map(SimScenario::id).collect(),
            None => vec!["dataset".into()],
        }
    }

    /// Seeding keys, parallel to [`ExperimentPlan::scenario_ids`]. Grid keys
    /// leave out the order and noise level, so scenarios that differ only in
    /// those share inputs, coefficients and standardized noise draws.
    pub fn seed_keys(&self) -> Vec<String> {
        match &self.grid {
            Some(g) => g
                .scenarios()
                .iter()
                .map(|sc| format!("n{}_d{}_k{}", sc.n, sc.d, sc.modalities))
                .collect(),
            None => vec!["dataset".into()],
        }
    }

    /// Seed of the data (simulation or split) of one repetition; shared by
    /// every method so comparisons are paired.
    pub fn data_seed(&self, seed_key: &str, repetition: usize) -> u64 {
        mix_seed(&[self.seed, hash_str(seed_key), repetition as u64])
    }

    /// Seed of one model's initialization and training stream.
    pub fn run_seed(&self, seed_key: &str, method: Method, repetition: usize) -> u64 {
        mix_seed(&[
            self.seed,
            hash_str(seed_key),
            hash_str(method.name()),
            repetition as u64,
        ])
    }
}

/// Outcome of one (scenario, method, repetition) run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub method: Method,
    pub scenario: String,
    pub repetition: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub train_mspe: f64,
    pub test_mspe: f64,
    pub wall_clock_s: f64,
    pub loss_trace: Vec<f64>,
    /// `None` for a successful run.
    pub error: Option<String>,
}

impl RunRecord {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

pub const RESULTS_HEADER: [&str; 11] = [
    "method",
    "scenario",
    "repetition",
    "seed",
    "learning_rate",
    "epochs",
    "train_mspe",
    "test_mspe",
    "wall_clock_s",
    "status",
    "loss_trace",
];

fn record_row(r: &RunRecord) -> Vec<String> {
    vec![
        r.method.name().to_string(),
        r.scenario.clone(),
        r.repetition.to_string(),
        r.seed.to_string(),
        format!("{:?}", r.learning_rate),
        r.epochs.to_string(),
        format!("{:?}", r.train_mspe),
        format!("{:?}", r.test_mspe),
        format!("{:?}", r.wall_clock_s),
        match &r.error {
            None => "ok".into(),
            Some(e) => format!("failed: {e}"),
        },
        r.loss_trace
            .iter()
            .map(|v| format!("{v:?}"))
            .collect::<Vec<_>>()
            .join(";"),
    ]
}

/// Append-only results CSV; every record is flushed as soon as it is written.
pub struct ResultsWriter {
    path: PathBuf,
    inner: csv::Writer<File>,
}

impl ResultsWriter {
    /// Creates (truncating) `path` and writes the header.
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = ResultsWriter {
            path: path.to_path_buf(),
            inner: csv::Writer::from_writer(file),
        };
        w.write_row(RESULTS_HEADER.iter().map(|s| s.to_string()).collect())?;
        Ok(w)
    }

    /// Appends to an existing results file without a new header.
    pub fn append(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(ResultsWriter {
            path: path.to_path_buf(),
            inner: csv::Writer::from_writer(file),
        })
    }

    fn write_row(&mut self, row: Vec<String>) -> Result<()> {
        let p = &self.path;
        self.inner.write_record(&row).map_err(|e| Error::Format {
            path: p.display().to_string(),
            msg: e.to_string(),
        })?;
        self.inner.flush().map_err(|e| Error::io(p, e))
    }

    pub fn write(&mut self, r: &RunRecord) -> Result<()> {
        self.write_row(record_row(r))
    }
}

/// Parses a results CSV written by [`ResultsWriter`].
pub fn read_results_csv(path: &Path) -> Result<Vec<RunRecord>> {
    let pstr = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Format {
        path: pstr.clone(),
        msg: e.to_string(),
    })?;
    let header = rdr.headers().map_err(|e| Error::Format {
        path: pstr.clone(),
        msg: e.to_string(),
    })?;
    if header.iter().ne(RESULTS_HEADER.iter().copied()) {
        return Err(Error::Data {
            path: pstr,
            row: 1,
            col: 0,
            msg: format!("expected header `{}`", RESULTS_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Data {
            path: pstr.clone(),
            row,
            col: 0,
            msg: e.to_string(),
        })?;
        let err = |col: usize, msg: String| Error::Data {
            path: pstr.clone(),
            row,
            col: col + 1,
            msg,
        };
        fn num<T: std::str::FromStr>(rec: &csv::StringRecord, c: usize) -> std::result::Result<T, String> {
            rec[c].parse().map_err(|_| format!("cannot parse `{}`", &rec[c]))
        }
        let status = &rec[9];
        let error = if status == "ok" {
            None
        } else {
            Some(status.strip_prefix("failed: ").unwrap_or(status).to_string())
        };
        let loss_trace = if rec[10].is_empty() {
            Vec::new()
        } else {
            rec[10]
                .split(';')
                .map(|v| v.parse::<f64>().map_err(|_| err(10, format!("cannot parse `{v}`"))))
                .collect::<Result<Vec<_>>>()?
        };
        out.push(RunRecord {
            method: rec[0].parse().map_err(|e: Error| err(0, e.to_string()))?,
            scenario: rec[1].to_string(),
            repetition: num(&rec, 2).map_err(|m| err(2, m))?,
            seed: num(&rec, 3).map_err(|m| err(3, m))?,
            learning_rate: num(&rec, 4).map_err(|m| err(4, m))?,
            epochs: num(&rec, 5).map_err(|m| err(5, m))?,
            train_mspe: num(&rec, 6).map_err(|m| err(6, m))?,
            test_mspe: num(&rec, 7).map_err(|m| err(7, m))?,
            wall_clock_s: num(&rec, 8).map_err(|m| err(8, m))?,
            error,
            loss_trace,
        });
    }
    Ok(out)
}

/// Records of a finished plan in (scenario, method, repetition) order.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanOutcome {
    pub records: Vec<RunRecord>,
}

impl PlanOutcome {
    pub fn failures(&self) -> impl Iterator<Item = &RunRecord> {
        self.records.iter().filter(|r| !r.is_ok())
    }

    pub fn successes(&self) -> impl Iterator<Item = &RunRecord> {
        self.records.iter().filter(|r| r.is_ok())
    }
}

/// Worker cap from [`WORKERS_ENV`], else the available parallelism.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

enum Source {
    Grid(Vec<SimScenario>),
    Dataset {
        samples: Vec<MultiModalSample>,
        standardize: bool,
    },
}

impl Source {
    fn split(&self, scenario_idx: usize, seed: u64) -> Result<SplitDataset> {
        match self {
            Source::Grid(scenarios) => {
                let mut sc = scenarios[scenario_idx].clone();
                sc.seed = seed;
                Ok(gen_scenario(&sc)?.split)
            }
            Source::Dataset { samples, standardize: z } => {
                let split = split_80_20(samples, seed)?;
                if *z {
                    Ok(standardize(&split)?.0)
                } else {
                    Ok(split)
                }
            }
        }
    }
}

struct Job {
    scenario_idx: usize,
    method: Method,
    repetition: usize,
}

/// Runs every (scenario, method, repetition) of `plan`, up to
/// [`worker_count`] at a time. A failing run is recorded and the plan goes on.
/// When `plan.output_dir` is set, `results.csv` grows by one line per
/// finished run.
pub fn run_plan(plan: &ExperimentPlan) -> Result<PlanOutcome> {
    plan.validate()?;
    let source = match (&plan.grid, &plan.dataset) {
        (Some(g), _) => Source::Grid(g.scenarios()),
        (None, Some(d)) => Source::Dataset {
            samples: read_dataset(&d.path)?.0.samples,
            standardize: d.standardize,
        },
        (None, None) => unreachable!("validated"),
    };
    let ids = plan.scenario_ids();
    let keys = plan.seed_keys();

    let sink = match &plan.output_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let plan_path = dir.join("plan.json");
            let json = serde_json::to_string_pretty(plan).map_err(|e| Error::json(&plan_path, e))?;
            std::fs::write(&plan_path, json + "\n").map_err(|e| Error::io(&plan_path, e))?;
            Some(Mutex::new(ResultsWriter::create(&dir.join("results.csv"))?))
        }
        None => None,
    };

    let mut jobs = Vec::new();
    for scenario_idx in 0..ids.len() {
        for &method in &plan.methods {
            for repetition in 0..plan.repetitions {
                jobs.push(Job {
                    scenario_idx,
                    method,
                    repetition,
                });
            }
        }
    }

    let run_job = |job: &Job| -> Result<RunRecord> {
        let scenario = &ids[job.scenario_idx];
        let key = &keys[job.scenario_idx];
        let seed = plan.run_seed(key, job.method, job.repetition);
        let start = Instant::now();
        let outcome = source
            .split(job.scenario_idx, plan.data_seed(key, job.repetition))
            .and_then(|split| {
                let (model, trace) = train_method(job.method, &plan.training, &split.train, seed)?;
                Ok((model.mspe(&split.train)?, model.mspe(&split.test)?, trace))
            });
        let wall_clock_s = start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE);
        let mut record = RunRecord {
            method: job.method,
            scenario: scenario.clone(),
            repetition: job.repetition,
            seed,
            learning_rate: plan.training.sgd.learning_rate,
            epochs: plan.training.sgd.epochs,
            train_mspe: f64::NAN,
            test_mspe: f64::NAN,
            wall_clock_s,
            loss_trace: Vec::new(),
            error: None,
        };
        match outcome {
            Ok((train_mspe, test_mspe, trace)) => {
                record.train_mspe = train_mspe;
                record.test_mspe = test_mspe;
                record.loss_trace = trace;
                log::info!(
                    "{} {} rep {}: test MSPE {:.4} ({:.1}s)",
                    scenario,
                    job.method,
                    job.repetition,
                    test_mspe,
                    wall_clock_s
                );
            }
            Err(e) => {
                log::warn!("{} {} rep {} failed: {e}", scenario, job.method, job.repetition);
                record.error = Some(e.to_string());
            }
        }
        if let Some(sink) = &sink {
            sink.lock().expect("results writer poisoned").write(&record)?;
        }
        Ok(record)
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    let records = pool.install(|| jobs.par_iter().map(run_job).collect::<Result<Vec<_>>>())?;
    Ok(PlanOutcome { records })
}
