use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context};

use icx_core::config::{EvalMode, ExperimentConfig};
use icx_core::corpus::{import_jsonl, import_tsv, Split, TaskSpec};
use icx_core::evalrunner::{predictions_jsonl, CellOutcome, EvalReport, ReportFormat, Runner};
use icx_core::scoring::oracle::{make_oracle, OracleConfig, OracleKind};
use icx_core::scoring::Backend;
use icx_netbackend::{Client, HttpBackend, ServerConfig};

use crate::exit::{connectivity, runtime, usage, CliResult};
use crate::settings::ExperimentArgs;

pub enum InputFormat {
    Tsv(PathBuf),
    Jsonl(PathBuf),
}

pub fn convert(input: InputFormat, language: Option<&str>, split: Split, output: &Path, force: bool) -> CliResult<()> {
    refuse_overwrite(output, force)?;
    let corpus = match input {
        InputFormat::Tsv(path) => {
            let language = language.ok_or_else(|| usage(anyhow!("--language is required for TSV input")))?;
            import_tsv(&path, language, split)
        }
        InputFormat::Jsonl(path) => import_jsonl(&path),
    }
    .map_err(usage)?;
    corpus.write_jsonl(output).map_err(runtime)?;
    eprintln!(
        "wrote {} examples ({} labels, language {}) to {}",
        corpus.examples().len(),
        corpus.registry().len(),
        corpus.language(),
        output.display()
    );
    Ok(())
}

fn refuse_overwrite(path: &Path, force: bool) -> CliResult<()> {
    if path.exists() && !force {
        return Err(usage(anyhow!("{} exists; pass --force to overwrite", path.display())));
    }
    Ok(())
}

fn build_backend(
    config: &ExperimentConfig,
    task: &TaskSpec,
    cache_dir: Option<PathBuf>,
) -> CliResult<Arc<dyn Backend>> {
    let b = &config.backend;
    if let Some(name) = b.oracle_name() {
        let kind: OracleKind = name.parse().map_err(|e: String| usage(anyhow!(e)))?;
        let gold: HashMap<String, String> = task
            .target()
            .examples()
            .iter()
            .chain(task.source().examples())
            .map(|e| (e.text.clone(), e.label.clone()))
            .collect();
        return Ok(make_oracle(
            kind,
            OracleConfig {
                family: b.oracle_family.unwrap_or_else(|| kind.family_default()),
                max_tokens: b.oracle_max_tokens,
                seed: b.oracle_seed,
                gold,
                constant_score: b.oracle_constant_score,
            },
        ));
    }
    let url = b
        .server_url
        .clone()
        .ok_or_else(|| usage(anyhow!("no server URL: pass --server-url or set ICX_SERVER_URL")))?;
    let mut server = ServerConfig::new(url);
    server.api_key = b.api_key.clone();
    server.timeout = Duration::from_secs(b.timeout_secs);
    server.max_in_flight = b.max_in_flight;
    server.max_retries = b.max_retries;
    server.cache_dir = cache_dir;
    let client = Arc::new(Client::new(server).map_err(usage)?);
    match HttpBackend::connect(client, &b.model) {
        Ok(backend) => Ok(Arc::new(backend)),
        Err(e) if e.is_connectivity() => Err(connectivity(e)),
        Err(e) => Err(runtime(e)),
    }
}

fn prepare(args: &ExperimentArgs) -> CliResult<(ExperimentConfig, TaskSpec, Arc<dyn Backend>)> {
    let config = args.resolve()?;
    let task = config.load_task().map_err(usage)?;
    let backend = build_backend(&config, &task, args.cache_dir.clone())?;
    Ok((config, task, backend))
}

fn eval_error(e: icx_core::evalrunner::EvalError) -> crate::exit::CliError {
    if e.is_connectivity() {
        connectivity(e)
    } else {
        runtime(e)
    }
}

pub fn plan(args: &ExperimentArgs) -> CliResult<()> {
    let (config, task, backend) = prepare(args)?;
    let runner = Runner::new(&task, backend.as_ref(), &config);
    let plan = runner.plan().map_err(eval_error)?;
    print!("{}", plan.summary());
    Ok(())
}

pub struct RunOutputs<'a> {
    pub out: &'a Path,
    pub force: bool,
    pub dump_prompts: Option<&'a Path>,
    pub dump_predictions: Option<&'a Path>,
}

pub fn run(args: &ExperimentArgs, outputs: RunOutputs<'_>) -> CliResult<()> {
    let (config, task, backend) = prepare(args)?;
    let json_path = outputs.out.join("report.json");
    let csv_path = outputs.out.join("report.csv");
    refuse_overwrite(&json_path, outputs.force)?;
    refuse_overwrite(&csv_path, outputs.force)?;
    std::fs::create_dir_all(outputs.out)
        .with_context(|| format!("creating {}", outputs.out.display()))
        .map_err(runtime)?;
    if let Some(dir) = outputs.dump_predictions {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(runtime)?;
    }

    let mut runner = Runner::new(&task, backend.as_ref(), &config);
    if let Some(dir) = outputs.dump_prompts {
        runner = runner.dump_prompts_to(dir);
    }
    let plan = runner.plan().map_err(eval_error)?;
    eprint!("{}", plan.summary());

    let mut dump_error = None;
    let on_cell = |cell: &CellOutcome| {
        let m = &cell.metrics;
        eprintln!(
            "k={} seed={} accuracy={:.6} macro_f1={:.6} truncated={}/{}",
            m.k, m.seed, m.accuracy, m.macro_f1, m.truncated_queries, m.n_queries
        );
        if let Some(dir) = outputs.dump_predictions {
            let path = dir.join(format!("k{}_seed{}.jsonl", m.k, m.seed));
            if let Err(e) = std::fs::write(&path, predictions_jsonl(&cell.records)) {
                dump_error.get_or_insert(anyhow!("writing {}: {e}", path.display()));
            }
        }
    };
    let report = match config.mode {
        EvalMode::FewshotBoolean => runner.run_sweep(&plan, on_cell),
        _ => runner.run_zeroshot(&plan, on_cell),
    };
    let report = match report {
        Ok(r) => r,
        Err(e) if e.source.is_connectivity() => return Err(connectivity(e)),
        Err(e) => return Err(runtime(e)),
    };
    if let Some(e) = dump_error {
        return Err(runtime(e));
    }
    report.emit(ReportFormat::Json, &json_path).map_err(runtime)?;
    report.emit(ReportFormat::Csv, &csv_path).map_err(runtime)?;
    print!("{}", summary_table(&report));
    eprintln!("wrote {} and {}", json_path.display(), csv_path.display());
    if report.has_failures() {
        for f in &report.failures {
            eprintln!("failed cell k={} seed={}: {}", f.k, f.seed, f.message);
        }
        return Err(runtime(anyhow!("{} cell(s) failed", report.failures.len())));
    }
    Ok(())
}

pub fn summary_table(report: &EvalReport) -> String {
    let mut s = format!(
        "{:>4}  {:>5}  {:>13}  {:>12}  {:>13}  {:>12}\n",
        "k", "runs", "mean_accuracy", "std_accuracy", "mean_macro_f1", "std_macro_f1"
    );
    for (k, c) in &report.cells {
        s.push_str(&format!(
            "{:>4}  {:>5}  {:>13.6}  {:>12.6}  {:>13.6}  {:>12.6}\n",
            k,
            c.runs.len(),
            c.mean_accuracy,
            c.std_accuracy,
            c.mean_f1,
            c.std_f1
        ));
    }
    s
}

pub struct ReportOutputs<'a> {
    pub csv: Option<&'a Path>,
    pub plot_data: Option<&'a Path>,
    pub merged: Option<&'a Path>,
    pub force: bool,
}

pub fn report(inputs: &[PathBuf], outputs: ReportOutputs<'_>) -> CliResult<()> {
    let mut reports = inputs
        .iter()
        .map(|p| EvalReport::from_json_file(p).map_err(usage))
        .collect::<CliResult<Vec<_>>>()?
        .into_iter();
    let first = reports.next().ok_or_else(|| usage(anyhow!("no input report")))?;
    let report = reports.try_fold(first, |acc, r| acc.merge(r)).map_err(usage)?;

    let mut wrote_any = false;
    let mut write = |path: Option<&Path>, body: String| -> CliResult<()> {
        if let Some(path) = path {
            refuse_overwrite(path, outputs.force)?;
            std::fs::write(path, body)
                .with_context(|| format!("writing {}", path.display()))
                .map_err(runtime)?;
            wrote_any = true;
        }
        Ok(())
    };
    write(outputs.csv, report.to_csv())?;
    write(outputs.plot_data, report.to_plot_data())?;
    write(outputs.merged, report.to_json())?;
    if !wrote_any {
        print!("{}", summary_table(&report));
    }
    Ok(())
}
