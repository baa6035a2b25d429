//! Subcommand implementations.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use inva_core::dataio::{read_dataset, split_80_20, standardize, write_sim_dataset};
use inva_core::harness::{
    bench_scaling, gradcheck_suite, read_results_csv, run_plan, summarize, train_method,
    write_boxplot_csv, write_summary_csv, BenchConfig, ExperimentPlan, Method, ScenarioGrid,
    SizeSpec, SummaryRow, TrainedModel,
};
use inva_core::simgen::{gen_scenario, SimScenario, SplitDataset};
use serde::Serialize;

use crate::{
    AblateArgs, BenchArgs, Command, EvalArgs, GenDataArgs, GradcheckArgs, RunPlanArgs,
    SummarizeArgs, TrainArgs,
};

pub fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::RunPlan(a) => run_plan_cmd(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Bench(a) => bench(a),
        Command::Summarize(a) => summarize_cmd(a),
    }
}

fn echo_config<T: Serialize>(config: &T) -> Result<()> {
    println!("# config {}", serde_json::to_string(config)?);
    Ok(())
}

fn status(ok: bool) -> ExitCode {
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn gen_data(a: GenDataArgs) -> Result<ExitCode> {
    let s = &a.scenario;
    let mut sc = SimScenario::new(s.n, s.d, s.order, s.sigma, a.seed);
    sc.modalities = s.modalities;
    echo_config(&sc)?;
    let sim = gen_scenario(&sc)?;
    let manifest = write_sim_dataset(&sim, &sc, &a.out)?;
    log::info!("wrote {} subjects to {}", manifest.n, a.out.display());
    println!("dataset {} subjects {}", a.out.display(), manifest.n);
    Ok(ExitCode::SUCCESS)
}

/// Recorded split when the manifest has one, else a seeded 80/20 split.
fn load_split(dir: &Path, seed: u64, z: bool) -> Result<SplitDataset> {
    let (ds, manifest) = read_dataset(dir)?;
    let split = if manifest.split.is_some() {
        ds.into_split(&manifest)?
    } else {
        split_80_20(&ds.samples, seed)?
    };
    if z {
        let (split, record) = standardize(&split)?;
        for w in &record.warnings {
            log::warn!("{w}");
        }
        Ok(split)
    } else {
        Ok(split)
    }
}

#[derive(Serialize)]
struct TrainEcho<'a> {
    data: &'a Path,
    method: Method,
    seed: u64,
    standardize: bool,
    training: &'a inva_core::harness::TrainingConfig,
}

fn train(a: TrainArgs) -> Result<ExitCode> {
    let training = a.model.training_config();
    training.validate()?;
    echo_config(&TrainEcho {
        data: &a.data,
        method: a.method,
        seed: a.seed,
        standardize: a.standardize,
        training: &training,
    })?;
    let split = load_split(&a.data, a.seed, a.standardize)?;
    log::info!(
        "training {} on {} subjects ({} held out)",
        a.method,
        split.train.len(),
        split.test.len()
    );
    let (model, trace) = train_method(a.method, &training, &split.train, a.seed)?;

    let file = File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut w = BufWriter::new(file);
    model.write_checkpoint(&mut w)?;
    w.flush()?;

    let trace_path = a.loss_trace.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".loss.csv");
        PathBuf::from(p)
    });
    let mut w = BufWriter::new(
        File::create(&trace_path).with_context(|| format!("creating {}", trace_path.display()))?,
    );
    writeln!(w, "epoch,loss")?;
    for (i, l) in trace.iter().enumerate() {
        writeln!(w, "{},{:?}", i + 1, l)?;
    }
    w.flush()?;

    let train_mspe = model.mspe(&split.train)?;
    println!("train_mspe {train_mspe:.6}");
    if !split.test.is_empty() {
        println!("test_mspe {:.6}", model.mspe(&split.test)?);
    }
    println!("checkpoint {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn eval(a: EvalArgs) -> Result<ExitCode> {
    echo_config(&serde_json::json!({
        "data": a.data,
        "checkpoint": a.checkpoint,
        "seed": a.seed,
        "standardize": a.standardize,
        "zero_predictor": a.zero_predictor,
    }))?;
    let file = File::open(&a.checkpoint)
        .with_context(|| format!("opening {}", a.checkpoint.display()))?;
    let mut model =
        TrainedModel::read_checkpoint(BufReader::new(file), &a.checkpoint.display().to_string())?;
    if a.zero_predictor {
        for net in model.predictors_mut() {
            for layer in net.layers_mut() {
                layer.weight.fill(0.0);
                layer.bias.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
    let split = load_split(&a.data, a.seed, a.standardize)?;
    if split.test.is_empty() {
        bail!("dataset has no test subjects");
    }
    println!("method {}", model.method());
    println!("test_mspe {:.6}", model.mspe(&split.test)?);
    Ok(ExitCode::SUCCESS)
}

fn print_summary(rows: &[SummaryRow]) {
    println!("scenario,method,runs,failures,median,q1,q3,iqr");
    for r in rows {
        println!(
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
            r.scenario, r.method, r.runs, r.failures, r.median, r.q1, r.q3, r.iqr
        );
    }
}

fn execute(plan: &ExperimentPlan) -> Result<ExitCode> {
    let outcome = run_plan(plan)?;
    let failures = outcome.failures().count();
    for f in outcome.failures() {
        log::error!(
            "{} {} rep {} failed: {}",
            f.scenario,
            f.method,
            f.repetition,
            f.error.as_deref().unwrap_or("")
        );
    }
    let rows = summarize(&outcome.records)?;
    if let Some(dir) = &plan.output_dir {
        write_summary_csv(&rows, &dir.join("summary.csv"))?;
        write_boxplot_csv(&outcome.records, &dir.join("boxplot.csv"))?;
    }
    print_summary(&rows);
    Ok(status(failures == 0))
}

fn ablate(a: AblateArgs) -> Result<ExitCode> {
    let s = &a.scenario;
    let plan = ExperimentPlan {
        name: "ablation".into(),
        grid: Some(ScenarioGrid {
            orders: vec![s.order],
            noise_sds: vec![s.sigma],
            sizes: vec![SizeSpec { n: s.n, d: s.d }],
            modalities: s.modalities,
        }),
        dataset: None,
        methods: vec![Method::Inva, Method::InvaNoImageSpecific, Method::InvaNoShared],
        repetitions: a.repetitions,
        seed: a.seed,
        training: a.model.training_config(),
        output_dir: a.out,
    };
    plan.validate()?;
    echo_config(&plan)?;
    execute(&plan)
}

fn run_plan_cmd(a: RunPlanArgs) -> Result<ExitCode> {
    let mut plan = ExperimentPlan::from_json_file(&a.plan)?;
    if let Some(seed) = a.seed {
        plan.seed = seed;
    }
    if let Some(out) = a.out {
        plan.output_dir = Some(out);
    }
    echo_config(&plan)?;
    execute(&plan)
}

fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    echo_config(&serde_json::json!({ "seed": a.seed, "tol": a.tol }))?;
    let entries = gradcheck_suite(a.seed, a.tol)?;
    let mut worst = 0.0f64;
    for e in &entries {
        worst = worst.max(e.report.max_rel_err);
        println!(
            "{:<24} max_rel_err {:.3e} {}",
            e.label,
            e.report.max_rel_err,
            if e.report.passed { "ok" } else { "FAIL" }
        );
        if !e.report.passed {
            eprint!("{}", e.report);
        }
    }
    println!("max_rel_err {worst:.3e}");
    Ok(status(worst <= a.tol))
}

fn bench(a: BenchArgs) -> Result<ExitCode> {
    let cfg = BenchConfig {
        n_list: a.n_list,
        d_list: a.d_list,
        training: a.model.training_config(),
        method: a.method,
        seed: a.seed,
        repeats: a.repeats,
    };
    cfg.training.validate()?;
    echo_config(&cfg)?;
    let report = bench_scaling(&cfg)?;
    let mut table = String::from("n,d,cells,seconds\n");
    for r in &report.rows {
        table.push_str(&format!("{},{},{},{:.6}\n", r.n, r.d, r.cells, r.seconds));
    }
    print!("{table}");
    for f in &report.fits {
        println!(
            "fit d={} slope {:.3e} s/subject intercept {:.4} s r2 {:.4}",
            f.d, f.slope, f.intercept, f.r2
        );
    }
    if let Some(out) = &a.out {
        std::fs::write(out, table).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn summarize_cmd(a: SummarizeArgs) -> Result<ExitCode> {
    echo_config(&serde_json::json!({ "results": a.results, "out": a.out, "seed": a.seed }))?;
    let mut records = Vec::new();
    for p in &a.results {
        records.extend(read_results_csv(p)?);
    }
    let rows = summarize(&records)?;
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_summary_csv(&rows, &dir.join("summary.csv"))?;
        write_boxplot_csv(&records, &dir.join("boxplot.csv"))?;
    }
    print_summary(&rows);
    Ok(ExitCode::SUCCESS)
}
