use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;

use super::config::{DatasetSpec, RunConfig};
use super::CliError;
use crate::boosting::SavedModel;
use crate::data::Dataset;
use crate::eval::{
    build_graphs, compare as compare_reports, evaluate_ndcg, fit_method, grid_search, make_folds, summary_table,
    EntityRole, EvalReport, Fitted, Fold, GridContext, GridScore, Method, Predictor,
};
use crate::ingest::{
    export_generic, load_generic, load_movielens_100k, load_movielens_1m, rescale_scores, FeatureSchema,
};
use crate::rng::derive_seed;

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create {}", dir.display()))
        .map_err(CliError::from)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn open(path: &Path, what: &str) -> Result<BufReader<File>, CliError> {
    if !path.is_file() {
        return Err(CliError::usage(format!("{what} {} not found", path.display())));
    }
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(f))
}

pub(super) fn load_dataset(spec: &DatasetSpec) -> Result<Dataset, CliError> {
    for p in spec.paths() {
        if !p.exists() {
            return Err(CliError::usage(format!("data path {} not found", p.display())));
        }
    }
    let data = match spec {
        DatasetSpec::MovieLens100k { dir } => {
            let raw = load_movielens_100k(dir)?;
            raw.to_dataset(&FeatureSchema::movielens(&raw)?)?
        }
        DatasetSpec::MovieLens1m { dir } => {
            let raw = load_movielens_1m(dir)?;
            raw.to_dataset(&FeatureSchema::movielens(&raw)?)?
        }
        DatasetSpec::Generic {
            ratings,
            user_features,
            item_features,
            rescale_to,
        } => {
            let raw = load_generic(ratings, user_features, item_features)?;
            let mut data = raw.to_dataset(&FeatureSchema::infer(&raw))?;
            if let Some(to) = rescale_to {
                let (_, max) = data.prefs.min_max_score();
                data.prefs = rescale_scores(&data.prefs, max, *to)?;
            }
            data
        }
    };
    log::info!(
        "{} users, {} items, {} ratings; descriptor dims {} / {}",
        data.prefs.n_users(),
        data.prefs.n_items(),
        data.prefs.n_entries(),
        data.users.dim(),
        data.items.dim()
    );
    Ok(data)
}

fn fold_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("fold_{index:03}.csv"))
}

fn load_fold(cfg: &RunConfig, data: &Dataset) -> Result<Fold, CliError> {
    let path = fold_path(&cfg.folds, cfg.fold);
    let fold = Fold::read_csv(open(&path, "fold file")?)
        .with_context(|| format!("cannot read fold {}", path.display()))?;
    if fold.users.len() != data.prefs.n_users()
        || fold.items.len() != data.prefs.n_items()
        || fold.entries.len() != data.prefs.n_entries()
    {
        return Err(CliError::usage(format!("fold {} does not match the dataset", path.display())));
    }
    Ok(fold)
}

fn require_method(cfg: &RunConfig) -> Result<Method, CliError> {
    cfg.method.ok_or_else(|| CliError::usage("--method is required"))
}

pub(super) fn ingest(cfg: &RunConfig) -> Result<(), CliError> {
    let data = load_dataset(&cfg.dataset)?;
    create_dir(&cfg.out)?;
    export_generic(&data, &cfg.out)?;
    cfg.write_resolved("ingest", &cfg.out)?;
    println!(
        "wrote {} users, {} items, {} ratings to {}",
        data.prefs.n_users(),
        data.prefs.n_items(),
        data.prefs.n_entries(),
        cfg.out.display()
    );
    Ok(())
}

pub(super) fn split(cfg: &RunConfig) -> Result<(), CliError> {
    let data = load_dataset(&cfg.dataset)?;
    let folds = make_folds(&data.prefs, &cfg.split).map_err(|e| CliError::usage(e.to_string()))?;
    create_dir(&cfg.folds)?;
    for fold in &folds {
        let path = fold_path(&cfg.folds, fold.index);
        let mut w = create(&path)?;
        fold.write_csv(&mut w)?;
        w.flush().with_context(|| format!("cannot write {}", path.display()))?;
    }
    cfg.write_resolved("split", &cfg.folds)?;
    println!("wrote {} fold(s) to {}", folds.len(), cfg.folds.display());
    Ok(())
}

pub(super) fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let method = require_method(cfg)?;
    if method.model_type().is_none() {
        return Err(CliError::usage(format!(
            "{method} is memory-based and has no model; run evaluate --method {method}"
        )));
    }
    if method.uses_mu() && !cfg.mu_given {
        return Err(CliError::usage(format!(
            "{method} needs --mu1 and --mu2 (gridsearch writes them to best_params.ini)"
        )));
    }
    let data = load_dataset(&cfg.dataset)?;
    let fold = load_fold(cfg, &data)?;
    let train = fold.train(&data)?;
    let valid = fold.valid(&data)?;
    if valid.prefs.n_entries() == 0 {
        return Err(CliError::usage("the fold has no validation entries"));
    }
    let graphs = if method.uses_mu() {
        Some(build_graphs(&train, cfg.params.truncation, cfg.neighbors)?)
    } else {
        None
    };
    let Fitted::Model { model, log } = fit_method(method, &train, &valid, &cfg.params, graphs.as_ref())? else {
        unreachable!("model-based method");
    };
    create_dir(&cfg.out)?;
    let model_type = method.model_type().expect("checked above");
    SavedModel::new(model_type, cfg.params.clone(), &model)?.save(&cfg.out.join("model.json"))?;
    let log_path = cfg.out.join("training_log.csv");
    let mut w = create(&log_path)?;
    log.write_csv(&mut w)?;
    w.flush().with_context(|| format!("cannot write {}", log_path.display()))?;
    cfg.write_resolved("train", &cfg.out)?;
    let best = log.records.get(log.best_iteration).map_or(f64::NAN, |r| r.best_valid_ndcg);
    println!(
        "{method}: {} trees kept, best validation NDCG@{} {best:.6}",
        model.n_trees(),
        cfg.params.truncation
    );
    Ok(())
}

pub(super) fn evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    enum Source {
        Memory(Method),
        Model(SavedModel),
    }
    let source = match cfg.method {
        Some(m) if m.model_type().is_none() => {
            if cfg.model.is_some() {
                return Err(CliError::usage(format!("{m} does not use a model file")));
            }
            Source::Memory(m)
        }
        _ => {
            let path = cfg.model.clone().unwrap_or_else(|| cfg.out.join("model.json"));
            if !path.is_file() {
                return Err(CliError::usage(format!("model file {} not found", path.display())));
            }
            let saved = SavedModel::load(&path).with_context(|| format!("cannot load {}", path.display()))?;
            if let Some(m) = cfg.method {
                if m.model_type() != Some(saved.model_type) {
                    return Err(CliError::usage(format!(
                        "model file holds {}, not {m}",
                        saved.model_type.name()
                    )));
                }
            }
            Source::Model(saved)
        }
    };
    let data = load_dataset(&cfg.dataset)?;
    let fold = load_fold(cfg, &data)?;
    let report = match &source {
        Source::Memory(m) => {
            let train = fold.train(&data)?;
            let fitted = fit_method(*m, &train, &train, &cfg.params, None)?;
            evaluate_ndcg(fitted.predictor(cfg.neighbors)?, &data, &fold, &cfg.ks, m.name())?
        }
        Source::Model(saved) => {
            let model = saved.to_model()?;
            evaluate_ndcg(Predictor::Model(&model), &data, &fold, &cfg.ks, saved.model_type.name())?
        }
    };
    create_dir(&cfg.out)?;
    let path = cfg.out.join("report.csv");
    let mut w = create(&path)?;
    report.write_csv(&mut w)?;
    w.flush().with_context(|| format!("cannot write {}", path.display()))?;
    let table = summary_table(std::slice::from_ref(&report), &[])?;
    let mut summary = format!("{table}users scored: {}\n", report.units.len());
    if report.skipped > 0 {
        summary.push_str(&format!("users skipped (no test entries): {}\n", report.skipped));
    }
    fs::write(cfg.out.join("summary.txt"), &summary).context("cannot write summary.txt")?;
    cfg.write_resolved("evaluate", &cfg.out)?;
    print!("{summary}");
    Ok(())
}

fn read_report(path: &Option<PathBuf>, flag: &str) -> Result<EvalReport, CliError> {
    let path = path
        .as_ref()
        .ok_or_else(|| CliError::usage(format!("--{flag} is required")))?;
    let r = open(path, "report")?;
    Ok(EvalReport::read_csv(r).with_context(|| format!("cannot read report {}", path.display()))?)
}

pub(super) fn compare(cfg: &RunConfig) -> Result<(), CliError> {
    let a = read_report(&cfg.report_a, "a")?;
    let b = read_report(&cfg.report_b, "b")?;
    let ks: Vec<_> = cfg.ks.iter().copied().filter(|k| a.ks.contains(k) && b.ks.contains(k)).collect();
    if ks.is_empty() {
        return Err(CliError::usage("the reports share none of the requested cutoffs"));
    }
    create_dir(&cfg.out)?;
    let path = cfg.out.join("comparison.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["a", "b", "k", "mean_a", "mean_b", "wins", "losses", "ties", "p_value", "marker"])
        .context("cannot write comparison.csv")?;
    println!("{} vs {}", a.method, b.method);
    for k in ks {
        let c = compare_reports(&a, &b, k).map_err(|e| CliError::usage(e.to_string()))?;
        println!(
            "NDCG@{k}: {:.4} vs {:.4}  wins {} losses {} ties {}  p={:.4} ({})",
            c.mean_a,
            c.mean_b,
            c.wins,
            c.losses,
            c.ties,
            c.p_value,
            c.marker()
        );
        w.write_record([
            a.method.clone(),
            b.method.clone(),
            k.to_string(),
            c.mean_a.to_string(),
            c.mean_b.to_string(),
            c.wins.to_string(),
            c.losses.to_string(),
            c.ties.to_string(),
            c.p_value.to_string(),
            c.marker().to_string(),
        ])
        .context("cannot write comparison.csv")?;
    }
    w.flush().context("cannot write comparison.csv")?;
    cfg.write_resolved("compare", &cfg.out)?;
    Ok(())
}

const SCORES_HEADER: [&str; 4] = ["mu1", "mu2", "fold", "ndcg"];

fn read_scores(path: &Path) -> Result<Vec<GridScore>, CliError> {
    if !path.is_file() {
        return Ok(Vec::new());
    }
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("cannot open {}", path.display()))?;
    let header = rdr.headers().context("grid scores header")?.clone();
    if header.iter().ne(SCORES_HEADER) {
        return Err(CliError::usage(format!("{} is not a grid score file", path.display())));
    }
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        let s: GridScore = rec.with_context(|| format!("bad row in {}", path.display()))?;
        out.push(s);
    }
    Ok(out)
}

pub(super) fn gridsearch(cfg: &RunConfig) -> Result<(), CliError> {
    let method = require_method(cfg)?;
    if !method.uses_mu() {
        return Err(CliError::usage(format!("{method} has no mu parameters to search")));
    }
    if cfg.mu_given {
        return Err(CliError::usage("gridsearch selects mu1 and mu2; do not pass them"));
    }
    let data = load_dataset(&cfg.dataset)?;
    let fold = load_fold(cfg, &data)?;
    let train = fold.train(&data)?;
    create_dir(&cfg.out)?;
    let scores_path = cfg.out.join("grid_scores.csv");
    let done = read_scores(&scores_path)?;
    if !done.is_empty() {
        log::info!("resuming with {} finished grid evaluations", done.len());
    }
    let fresh = !scores_path.is_file();
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&scores_path)
        .with_context(|| format!("cannot open {}", scores_path.display()))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if fresh {
        w.write_record(SCORES_HEADER).context("cannot write grid scores")?;
        w.flush().context("cannot write grid scores")?;
    }
    let ctx = GridContext {
        method,
        train: &train,
        params: &cfg.params,
        grid: &cfg.grid,
        split_items: fold.items.iter().any(|&r| r == EntityRole::Test),
        valid_fraction: cfg.split.valid_fraction,
        neighbors: cfg.neighbors,
        seed: derive_seed(cfg.seed, &format!("grid/fold{}", fold.index)),
    };
    let outcome = grid_search(&ctx, &done, &mut |s| {
        w.serialize(s)?;
        w.flush().map_err(|e| crate::Error::Io {
            path: scores_path.clone(),
            source: e,
        })?;
        Ok(())
    })?;

    let heat_path = cfg.out.join("grid_heat.csv");
    let mut heat = csv::Writer::from_writer(create(&heat_path)?);
    let mut mu2: Vec<f64> = outcome.cells.iter().map(|c| c.mu2).collect();
    mu2.sort_by(f64::total_cmp);
    mu2.dedup();
    let mut header = vec!["mu1\\mu2".to_string()];
    header.extend(mu2.iter().map(|v| v.to_string()));
    heat.write_record(&header).context("cannot write grid_heat.csv")?;
    let mut mu1: Vec<f64> = outcome.cells.iter().map(|c| c.mu1).collect();
    mu1.dedup();
    for a in mu1 {
        let mut row = vec![a.to_string()];
        for &b in &mu2 {
            let cell = outcome.cells.iter().find(|c| c.mu1 == a && c.mu2 == b);
            row.push(cell.map_or(String::new(), |c| c.mean.to_string()));
        }
        heat.write_record(&row).context("cannot write grid_heat.csv")?;
    }
    heat.flush().context("cannot write grid_heat.csv")?;

    let (b1, b2) = outcome.best;
    let best = format!("method = {method}\nmu1 = {b1}\nmu2 = {b2}\n");
    fs::write(cfg.out.join("best_params.ini"), best).context("cannot write best_params.ini")?;
    cfg.write_resolved("gridsearch", &cfg.out)?;
    let mean = outcome
        .cells
        .iter()
        .find(|c| (c.mu1, c.mu2) == outcome.best)
        .map_or(f64::NAN, |c| c.mean);
    println!(
        "{method}: best mu1={b1} mu2={b2} (inner NDCG@{} {mean:.6}) over {} cells",
        cfg.params.truncation,
        outcome.cells.len()
    );
    Ok(())
}
