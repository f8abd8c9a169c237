use std::collections::BTreeMap;
use std::fs::File;

use rayon::prelude::*;
use shapefda::classify::{cross_validate, ClassifierKind, CvReport, FixedScores};
use shapefda::io::{encode_labels, format_f64, write_landmarks, Table};
use shapefda::landmarks::superimpose;
use shapefda::linalg::{mean, sample_sd};
use shapefda::pipelines::{run_pipeline, PipelineCv, PipelineId, PipelineOutput};
use shapefda::simgen::generate_replicate;
use shapefda::ShapeError;

use crate::config::RunConfig;
use crate::error::{io_error, CliError};
use crate::output::{load_datasets, manifest_name, safe_name, Dataset, Outputs};
use crate::svg;

fn f(x: f64) -> String {
    format_f64(x)
}

fn table<S: AsRef<str>>(header: &[S]) -> Table {
    Table::new(header)
}

fn push(t: &mut Table, row: Vec<String>) -> Result<(), CliError> {
    t.push(row).map_err(CliError::from)
}

/// Turns recorded failures into the command result: none is success, some is
/// a partial failure, and failing every unit is a plain error.
fn conclude(failures: Vec<(String, String)>, units: usize, first: Option<ShapeError>) -> Result<(), CliError> {
    if failures.is_empty() {
        return Ok(());
    }
    let summary = failures.iter().map(|(w, e)| format!("{w}: {e}")).collect::<Vec<_>>().join("; ");
    if failures.len() == units {
        return Err(match first.map(CliError::from) {
            Some(CliError::Input(_)) => CliError::Input(summary),
            _ => CliError::Numerical(summary),
        });
    }
    Err(CliError::Partial(summary))
}

/// Writes one landmark CSV per replicate plus the manifest.
pub fn simulate(config: &RunConfig) -> Result<(), CliError> {
    config.validate()?;
    let mut out = Outputs::create(&config.out)?;
    let reps: Vec<_> = (0..config.sim.n_reps)
        .into_par_iter()
        .map(|rep| generate_replicate(&config.sim, rep))
        .collect::<shapefda::Result<_>>()?;
    for (rep, specimens) in reps.iter().enumerate() {
        out.with_writer(&format!("replicate_{:03}.csv", rep + 1), |w| write_landmarks(w, specimens))?;
    }
    out.finish("simulate", config)?;
    Ok(())
}

/// Directory (relative to the output root) for per-dataset tables.
fn dataset_dir(datasets: &[Dataset], d: &Dataset) -> String {
    if datasets.len() == 1 {
        String::new()
    } else {
        format!("{}/", safe_name(&d.name))
    }
}

fn scree(eigenvalues: &[f64]) -> Result<Table, CliError> {
    let mut t = table(&["component", "eigenvalue", "cumulative_fraction"]);
    let total: f64 = eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let mut acc = 0.0;
    for (j, &v) in eigenvalues.iter().enumerate() {
        acc += v.max(0.0);
        let frac = if total > 0.0 { acc / total } else { 0.0 };
        push(&mut t, vec![(j + 1).to_string(), f(v), f(frac)])?;
    }
    Ok(t)
}

fn scores_table(d: &Dataset, scores: &nalgebra::DMatrix<f64>) -> Result<Table, CliError> {
    let mut header = vec!["specimen_id".to_string(), "label".to_string()];
    header.extend((1..=scores.ncols()).map(|j| format!("C{j}")));
    let mut t = table(&header);
    for (i, s) in d.specimens.iter().enumerate() {
        let mut row = vec![s.specimen_id.clone(), s.label.clone().unwrap_or_default()];
        row.extend(scores.row(i).iter().map(|&v| f(v)));
        push(&mut t, row)?;
    }
    Ok(t)
}

fn write_pipeline_tables(
    out: &mut Outputs,
    config: &RunConfig,
    dir: &str,
    d: &Dataset,
    result: &PipelineOutput,
) -> Result<(), CliError> {
    let name = safe_name(result.id.name());
    out.table(&format!("{dir}scores_{name}.csv"), &scores_table(d, &result.scores)?)?;
    out.table(&format!("{dir}scree_{name}.csv"), &scree(&result.eigenvalues)?)?;
    if let Some(q) = &result.srvf_scores {
        out.table(&format!("{dir}srvf_scores_{name}.csv"), &scores_table(d, q)?)?;
        if let Some((ev, _)) = result.fitted.srvf_spectrum() {
            out.table(&format!("{dir}srvf_scree_{name}.csv"), &scree(&ev)?)?;
        }
    }
    for (i, s) in d.specimens.iter().enumerate() {
        if let Some(keep) = &config.recon {
            if !keep.contains(&s.specimen_id) {
                continue;
            }
        }
        // reconstructions are shown as superimposed for the MSE
        let r = superimpose(&result.reconstructions[i], &s.points)?;
        let mut t = table(&["landmark_index", "x", "y", "z", "x_recon", "y_recon", "z_recon"]);
        for l in 0..s.n_landmarks() {
            let mut row = vec![l.to_string()];
            row.extend((0..3).map(|c| f(s.points[(l, c)])));
            row.extend((0..3).map(|c| f(r[(l, c)])));
            push(&mut t, row)?;
        }
        out.table(&format!("{dir}recon_{name}_{}.csv", safe_name(&s.specimen_id)), &t)?;
    }
    Ok(())
}

/// Runs every configured pipeline on every input and writes the result tables.
pub fn run(config: &RunConfig) -> Result<(), CliError> {
    config.validate()?;
    let datasets = load_datasets(config)?;
    let mut out = Outputs::create(&config.out)?;
    let jobs: Vec<(usize, PipelineId)> =
        (0..datasets.len()).flat_map(|d| config.pipelines.iter().map(move |&p| (d, p))).collect();
    let results: Vec<shapefda::Result<PipelineOutput>> = jobs
        .par_iter()
        .map(|&(d, id)| run_pipeline(id, &datasets[d].specimens, &config.settings))
        .collect();

    let mut k95 = table(&["dataset", "pipeline", "k95"]);
    let mut per_pipeline: BTreeMap<usize, Vec<&PipelineOutput>> = BTreeMap::new();
    let mut first_error = None;
    for (&(d, id), result) in jobs.iter().zip(&results) {
        let dataset = &datasets[d];
        match result {
            Ok(r) => {
                push(&mut k95, vec![dataset.name.clone(), id.name().into(), r.k95.to_string()])?;
                let slot = config.pipelines.iter().position(|&p| p == id).expect("configured pipeline");
                per_pipeline.entry(slot).or_default().push(r);
                write_pipeline_tables(&mut out, config, &dataset_dir(&datasets, dataset), dataset, r)?;
            }
            Err(e) => {
                out.fail(format!("{}.{}", dataset.name, id.name()), e);
                first_error.get_or_insert_with(|| e.clone());
            }
        }
    }
    out.table("k95.csv", &k95)?;

    let mut mse = table(&["pipeline", "mean", "sd", "n_replicates"]);
    for (slot, runs) in &per_pipeline {
        let means: Vec<f64> = runs.iter().map(|r| r.mse_mean).collect();
        // a single replicate reports the spread over specimens instead
        let sd = if runs.len() > 1 { sample_sd(&means) } else { runs[0].mse_sd };
        push(&mut mse, vec![config.pipelines[*slot].name().into(), f(mean(&means)), f(sd), runs.len().to_string()])?;
    }
    out.table("mse.csv", &mse)?;
    let failures = out.finish("run", config)?;
    conclude(failures, jobs.len(), first_error)
}

/// Best adjacent component pair by LDA cross-validation accuracy on fixed full-data scores.
fn best_pair(
    scores: &nalgebra::DMatrix<f64>,
    labels: &[usize],
    n_classes: usize,
    config: &RunConfig,
) -> shapefda::Result<Vec<(usize, f64)>> {
    (0..scores.ncols().saturating_sub(1))
        .map(|j| {
            let pair = FixedScores(scores.columns(j, 2).into_owned());
            let rep = cross_validate(&pair, labels, n_classes, &[ClassifierKind::Lda], config.folds, config.seed)?;
            Ok((j, rep[0].mean_accuracy))
        })
        .collect()
}

fn scatter_outputs(
    out: &mut Outputs,
    config: &RunConfig,
    dir: &str,
    d: &Dataset,
    id: PipelineId,
    labels: &[usize],
    n_classes: usize,
) -> Result<(), CliError> {
    let result = run_pipeline(id, &d.specimens, &config.settings)?;
    // the pair search needs two columns even when one component reaches the threshold
    let k = result.k95.max(2).min(result.all_scores.ncols());
    if k < 2 {
        return Ok(());
    }
    let scores = result.all_scores.columns(0, k).into_owned();
    let pairs = best_pair(&scores, labels, n_classes, config)?;
    let name = safe_name(id.name());
    let mut t = table(&["component_x", "component_y", "lda_accuracy"]);
    for &(j, acc) in &pairs {
        push(&mut t, vec![(j + 1).to_string(), (j + 2).to_string(), f(acc)])?;
    }
    out.table(&format!("{dir}pairs_{name}.csv"), &t)?;
    let best = pairs.iter().fold(pairs[0], |b, &p| if p.1 > b.1 { p } else { b }).0;
    let mut t = table(&["specimen_id", "label", "x", "y"]);
    let mut pts = Vec::new();
    for (i, s) in d.specimens.iter().enumerate() {
        let label = s.label.clone().unwrap_or_default();
        let (x, y) = (scores[(i, best)], scores[(i, best + 1)]);
        push(&mut t, vec![s.specimen_id.clone(), label.clone(), f(x), f(y)])?;
        pts.push((x, y, label));
    }
    out.table(&format!("{dir}scatter_{name}.csv"), &t)?;
    let title = format!("{} ({} / {})", id.name(), d.name, "best LDA pair");
    let svg = svg::scatter(&title, &format!("C{}", best + 1), &format!("C{}", best + 2), &pts);
    out.text(&format!("{dir}scatter_{name}.svg"), &svg)
}

/// Cross-validates every classifier on every pipeline's scores.
pub fn classify(config: &RunConfig) -> Result<(), CliError> {
    config.validate()?;
    let datasets = load_datasets(config)?;
    let encoded: Vec<(Vec<String>, Vec<usize>)> = datasets
        .iter()
        .map(|d| encode_labels(&d.specimens).map_err(|e| CliError::Input(format!("{}: {e}", d.name))))
        .collect::<Result<_, _>>()?;
    let mut out = Outputs::create(&config.out)?;
    let mut report = table(&["dataset", "pipeline", "classifier", "fold", "accuracy"]);
    let mut summary = table(&["dataset", "pipeline", "classifier", "mean", "sd", "converged"]);
    let mut confusion = table(&["dataset", "pipeline", "classifier", "true_label", "predicted_label", "count"]);
    let mut first_error = None;
    let mut units = 0;
    for (d, (names, labels)) in datasets.iter().zip(&encoded) {
        let dir = dataset_dir(&datasets, d);
        for &id in &config.pipelines {
            units += 1;
            let cv = PipelineCv { id, specimens: &d.specimens, settings: &config.settings };
            let reports: Vec<CvReport> =
                match cross_validate(&cv, labels, names.len(), &config.classifiers, config.folds, config.seed) {
                    Ok(r) => r,
                    Err(e) => {
                        out.fail(format!("{}.{}", d.name, id.name()), &e);
                        first_error.get_or_insert(e);
                        continue;
                    }
                };
            for r in &reports {
                let base = vec![d.name.clone(), id.name().to_string(), r.classifier.name().to_string()];
                for (fold, acc) in r.per_fold_accuracy.iter().enumerate() {
                    push(&mut report, [base.clone(), vec![(fold + 1).to_string(), f(*acc)]].concat())?;
                }
                push(&mut summary, [base.clone(), vec![f(r.mean_accuracy), f(r.sd_accuracy), r.converged.to_string()]].concat())?;
                for (t, row) in r.confusion.iter().enumerate() {
                    for (p, &count) in row.iter().enumerate() {
                        push(&mut confusion, [base.clone(), vec![names[t].clone(), names[p].clone(), count.to_string()]].concat())?;
                    }
                }
            }
            if config.svg {
                if let Err(e) = scatter_outputs(&mut out, config, &dir, d, id, labels, names.len()) {
                    out.fail(format!("{}.{}.scatter", d.name, id.name()), &e);
                }
            }
        }
    }
    out.table("cv_report.csv", &report)?;
    out.table("cv_summary.csv", &summary)?;
    out.table("cv_confusion.csv", &confusion)?;
    let failures = out.finish("classify", config)?;
    conclude(failures, units, first_error)
}

fn read_table(config: &RunConfig, name: &str) -> Result<Option<Table>, CliError> {
    let path = config.out.join(name);
    if !path.exists() {
        return Ok(None);
    }
    let file = File::open(&path).map_err(|e| io_error(&path, e))?;
    Table::read(file).map(Some).map_err(|e| io_error(&path, e))
}

fn cell<'a>(t: &'a Table, row: &'a [String], name: &str) -> Result<&'a str, CliError> {
    let j = t.column(name).ok_or_else(|| CliError::Input(format!("table lacks column {name}")))?;
    Ok(row.get(j).map(String::as_str).unwrap_or(""))
}

fn number(s: &str) -> Result<f64, CliError> {
    s.parse().map_err(|_| CliError::Input(format!("not a number: {s:?}")))
}

/// Summarises the tables found in the output directory as `report.md`.
pub fn report(config: &RunConfig) -> Result<(), CliError> {
    let k95 = read_table(config, "k95.csv")?;
    let mse = read_table(config, "mse.csv")?;
    let cv = read_table(config, "cv_summary.csv")?;
    if k95.is_none() && mse.is_none() && cv.is_none() {
        return Err(CliError::Input(format!(
            "{} holds no k95.csv, mse.csv or cv_summary.csv; run `run` or `classify` first",
            config.out.display()
        )));
    }
    let mut md = String::from("# Results\n\n");
    if let Some(t) = &k95 {
        let mut by: BTreeMap<String, (usize, Vec<f64>)> = BTreeMap::new();
        for (order, row) in t.rows.iter().enumerate() {
            let e = by.entry(cell(t, row, "pipeline")?.to_string()).or_insert((order, Vec::new()));
            e.1.push(number(cell(t, row, "k95")?)?);
        }
        let mut rows: Vec<_> = by.into_iter().collect();
        rows.sort_by_key(|(_, (order, _))| *order);
        md.push_str("## Components reaching the variance threshold\n\n| pipeline | mean k95 | min | max | datasets |\n|---|---|---|---|---|\n");
        for (p, (_, v)) in rows {
            let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
            md.push_str(&format!("| {p} | {:.2} | {lo} | {hi} | {} |\n", mean(&v), v.len()));
        }
        md.push('\n');
    }
    if let Some(t) = &mse {
        md.push_str("## Reconstruction MSE\n\n| pipeline | mean | sd | replicates |\n|---|---|---|---|\n");
        for row in &t.rows {
            md.push_str(&format!(
                "| {} | {:.6} | {:.6} | {} |\n",
                cell(t, row, "pipeline")?,
                number(cell(t, row, "mean")?)?,
                number(cell(t, row, "sd")?)?,
                cell(t, row, "n_replicates")?
            ));
        }
        md.push('\n');
    }
    if let Some(t) = &cv {
        let mut classifiers: Vec<String> = Vec::new();
        let mut grid: Vec<(String, BTreeMap<String, Vec<f64>>)> = Vec::new();
        for row in &t.rows {
            let (p, c) = (cell(t, row, "pipeline")?.to_string(), cell(t, row, "classifier")?.to_string());
            if !classifiers.contains(&c) {
                classifiers.push(c.clone());
            }
            let idx = match grid.iter().position(|(q, _)| *q == p) {
                Some(i) => i,
                None => {
                    grid.push((p, BTreeMap::new()));
                    grid.len() - 1
                }
            };
            grid[idx].1.entry(c).or_default().push(number(cell(t, row, "mean")?)?);
        }
        md.push_str("## Cross-validated accuracy (mean over datasets)\n\n| pipeline |");
        for c in &classifiers {
            md.push_str(&format!(" {c} |"));
        }
        md.push_str(&format!("\n|---|{}\n", "---|".repeat(classifiers.len())));
        for (p, accs) in &grid {
            md.push_str(&format!("| {p} |"));
            for c in &classifiers {
                match accs.get(c) {
                    Some(v) => md.push_str(&format!(" {:.3} |", mean(v))),
                    None => md.push_str(" - |"),
                }
            }
            md.push('\n');
        }
        md.push('\n');
    }
    let mut failed = Vec::new();
    for command in ["run", "classify"] {
        if let Ok(text) = std::fs::read_to_string(config.out.join(manifest_name(command))) {
            failed.extend(text.lines().filter_map(|l| l.strip_prefix("failed.")).map(|l| format!("- {command}: {l}\n")));
        }
    }
    if !failed.is_empty() {
        md.push_str("## Failures\n\n");
        md.extend(failed);
        md.push('\n');
    }
    let path = config.out.join("report.md");
    std::fs::write(&path, &md).map_err(|e| io_error(&path, e))?;
    print!("{md}");
    Ok(())
}
