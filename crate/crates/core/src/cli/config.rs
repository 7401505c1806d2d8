use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ini::Ini;

use super::CliError;
use crate::boosting::BoostParams;
use crate::eval::{GridSpec, Method, SplitKind, SplitSpec, UserMode};
use crate::metrics::TruncationLevel;
use crate::similarity::DEFAULT_NEIGHBORS;

const DATA_KEYS: &[&str] = &["dataset", "data-dir", "ratings", "user-features", "item-features", "rescale-to"];
const SPLIT_KEYS: &[&str] = &[
    "kind",
    "fraction",
    "leave-one-out",
    "item-fraction",
    "train-items",
    "valid-items",
    "valid-fraction",
];
const MODEL_KEYS: &[&str] = &[
    "method",
    "eta",
    "max-trees",
    "patience",
    "sigma",
    "truncation",
    "max-leaves",
    "min-leaf-fraction",
    "rank",
    "neighbors",
];
const MU_KEYS: &[&str] = &["mu1", "mu2"];
const GRID_KEYS: &[&str] = &["grid", "mu1-grid", "mu2-grid", "inner-folds"];
const IO_KEYS: &[&str] = &["out", "folds", "fold", "model", "ks", "report-a", "report-b", "seed"];

fn known(key: &str) -> bool {
    [DATA_KEYS, SPLIT_KEYS, MODEL_KEYS, MU_KEYS, GRID_KEYS, IO_KEYS]
        .iter()
        .any(|group| group.contains(&key))
}

/// Raw key/value settings; later sources override earlier ones.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings(BTreeMap<String, String>);

impl Settings {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        if !path.is_file() {
            return Err(CliError::usage(format!("config file {} not found", path.display())));
        }
        let ini = Ini::load_from_file(path)
            .map_err(|e| CliError::usage(format!("cannot parse config {}: {e}", path.display())))?;
        let mut out = Settings::default();
        for (section, props) in ini.iter() {
            if props.iter().next().is_none() {
                continue;
            }
            if let Some(name) = section {
                return Err(CliError::usage(format!(
                    "config {}: sections are not supported (found [{name}])",
                    path.display()
                )));
            }
            for (k, v) in props.iter() {
                out.set(k, v)?;
            }
        }
        Ok(out)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), CliError> {
        if !known(key) {
            return Err(CliError::usage(format!("unknown setting {key:?}")));
        }
        self.0.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn merge(&mut self, other: &Settings) {
        for (k, v) in &other.0 {
            self.0.insert(k.clone(), v.clone());
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn has(&self, key: &str) -> bool {
        self.0.contains_key(key)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.trim()
                    .parse()
                    .map_err(|e| CliError::usage(format!("invalid value {v:?} for {key}: {e}")))
            })
            .transpose()
    }

    fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(|x| {
                        x.trim()
                            .parse::<f64>()
                            .map_err(|e| CliError::usage(format!("invalid entry {x:?} in {key}: {e}")))
                    })
                    .collect()
            })
            .transpose()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    MovieLens100k { dir: PathBuf },
    MovieLens1m { dir: PathBuf },
    Generic {
        ratings: PathBuf,
        user_features: PathBuf,
        item_features: PathBuf,
        rescale_to: Option<f64>,
    },
}

impl DatasetSpec {
    pub fn paths(&self) -> Vec<&Path> {
        match self {
            DatasetSpec::MovieLens100k { dir } | DatasetSpec::MovieLens1m { dir } => vec![dir],
            DatasetSpec::Generic {
                ratings,
                user_features,
                item_features,
                ..
            } => vec![ratings, user_features, item_features],
        }
    }
}

/// Default data root: `$RANKFORGE_DATA`, else `data`.
pub fn data_root() -> PathBuf {
    std::env::var_os("RANKFORGE_DATA")
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// Fully resolved settings of one command.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub split: SplitSpec,
    pub method: Option<Method>,
    pub params: BoostParams,
    pub mu_given: bool,
    pub grid: GridSpec,
    pub grid_name: String,
    pub neighbors: usize,
    pub ks: Vec<TruncationLevel>,
    pub out: PathBuf,
    pub folds: PathBuf,
    pub fold: usize,
    pub model: Option<PathBuf>,
    pub report_a: Option<PathBuf>,
    pub report_b: Option<PathBuf>,
    pub seed: u64,
}

fn truncation(v: usize, key: &str) -> Result<TruncationLevel, CliError> {
    TruncationLevel::new(v).map_err(|_| CliError::usage(format!("{key} must be >= 1")))
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn resolve(s: &Settings) -> Result<Self, CliError> {
        let dataset = match s.get("dataset").unwrap_or("ml100k") {
            "ml100k" => DatasetSpec::MovieLens100k {
                dir: s.parse("data-dir")?.unwrap_or_else(|| data_root().join("ml-100k")),
            },
            "ml1m" => DatasetSpec::MovieLens1m {
                dir: s.parse("data-dir")?.unwrap_or_else(|| data_root().join("ml-1m")),
            },
            "generic" => {
                let dir: PathBuf = s.parse("data-dir")?.unwrap_or_else(data_root);
                DatasetSpec::Generic {
                    ratings: s.parse("ratings")?.unwrap_or_else(|| dir.join("ratings.csv")),
                    user_features: s.parse("user-features")?.unwrap_or_else(|| dir.join("user_features.csv")),
                    item_features: s.parse("item-features")?.unwrap_or_else(|| dir.join("item_features.csv")),
                    rescale_to: s.parse("rescale-to")?,
                }
            }
            other => return Err(CliError::usage(format!("unknown dataset {other:?} (ml100k, ml1m, generic)"))),
        };
        if !matches!(dataset, DatasetSpec::Generic { .. }) {
            for key in ["ratings", "user-features", "item-features", "rescale-to"] {
                if s.has(key) {
                    return Err(CliError::usage(format!("{key} applies to the generic dataset only")));
                }
            }
        }

        let seed: u64 = s.parse_or("seed", 0)?;
        let users = if s.parse_or("leave-one-out", false)? {
            if s.has("fraction") {
                return Err(CliError::usage("fraction and leave-one-out are exclusive"));
            }
            UserMode::LeaveOneOut
        } else {
            UserMode::Fraction(s.parse_or("fraction", 0.5)?)
        };
        let kind = match s.get("kind").unwrap_or("user-cold-start") {
            "matrix-completion" => SplitKind::MatrixCompletion {
                train_items: s.parse_or("train-items", 5)?,
                valid_items: s.parse_or("valid-items", 5)?,
            },
            "user-cold-start" => SplitKind::UserColdStart { users },
            "full-cold-start" => SplitKind::FullColdStart {
                users,
                item_fraction: s.parse_or("item-fraction", 0.5)?,
            },
            other => {
                return Err(CliError::usage(format!(
                    "unknown split kind {other:?} (matrix-completion, user-cold-start, full-cold-start)"
                )))
            }
        };
        let split = SplitSpec {
            kind,
            valid_fraction: s.parse_or("valid-fraction", 0.2)?,
            seed,
        };

        let method: Option<Method> = s.parse("method")?;
        let uses_mu = method.is_some_and(|m| m.uses_mu());
        for key in MU_KEYS.iter().chain(GRID_KEYS) {
            if s.has(key) && !uses_mu {
                let m = method.map_or("no method".to_string(), |m| m.to_string());
                return Err(CliError::usage(format!("{key} only applies to lmw and lm-mf-reg, not {m}")));
            }
        }

        let defaults = BoostParams::default();
        let mut params = BoostParams {
            learning_rate: s.parse_or("eta", defaults.learning_rate)?,
            max_trees: s.parse_or("max-trees", defaults.max_trees)?,
            early_stop_patience: s.parse_or("patience", defaults.early_stop_patience)?,
            sigmoid_scale: s.parse_or("sigma", defaults.sigmoid_scale)?,
            truncation: truncation(s.parse_or("truncation", defaults.truncation.get())?, "truncation")?,
            rank: s.parse_or("rank", defaults.rank)?,
            mu1: s.parse_or("mu1", 0.0)?,
            mu2: s.parse_or("mu2", 0.0)?,
            seed,
            ..defaults
        };
        params.tree_params.max_leaves = s.parse_or("max-leaves", params.tree_params.max_leaves)?;
        params.tree_params.min_leaf_fraction = s.parse_or("min-leaf-fraction", params.tree_params.min_leaf_fraction)?;
        params.validate().map_err(|e| CliError::usage(e.to_string()))?;

        let grid_name = s.get("grid").unwrap_or("movielens").to_string();
        let mut grid = match grid_name.as_str() {
            "movielens" => GridSpec::movielens(),
            "meta-mining" => GridSpec::meta_mining(),
            other => return Err(CliError::usage(format!("unknown grid {other:?} (movielens, meta-mining)"))),
        };
        if let Some(v) = s.list("mu1-grid")? {
            grid.mu1 = v;
        }
        if let Some(v) = s.list("mu2-grid")? {
            grid.mu2 = v;
        }
        grid.inner_folds = s.parse_or("inner-folds", grid.inner_folds)?;
        grid.validate().map_err(|e| CliError::usage(e.to_string()))?;

        let ks = match s.get("ks") {
            Some(v) => v
                .split(',')
                .map(|x| {
                    let k: usize = x.trim().parse().map_err(|_| CliError::usage(format!("invalid cutoff {x:?} in ks")))?;
                    truncation(k, "ks")
                })
                .collect::<Result<Vec<_>, _>>()?,
            None => [1, 3, 5, 10].iter().map(|&k| truncation(k, "ks")).collect::<Result<_, _>>()?,
        };
        if ks.is_empty() {
            return Err(CliError::usage("ks must list at least one cutoff"));
        }

        let out: PathBuf = s.parse_or("out", PathBuf::from("out"))?;
        let folds = s.parse("folds")?.unwrap_or_else(|| PathBuf::from("folds"));
        let neighbors = s.parse_or("neighbors", DEFAULT_NEIGHBORS)?;
        if neighbors == 0 {
            return Err(CliError::usage("neighbors must be >= 1"));
        }
        Ok(Self {
            dataset,
            split,
            method,
            mu_given: s.has("mu1") || s.has("mu2"),
            params,
            grid,
            grid_name,
            neighbors,
            ks,
            out,
            folds,
            fold: s.parse_or("fold", 0)?,
            model: s.parse("model")?,
            report_a: s.parse("report-a")?,
            report_b: s.parse("report-b")?,
            seed,
        })
    }

    fn data_settings(&self, out: &mut Vec<(&'static str, String)>) {
        let path = |p: &Path| p.display().to_string();
        match &self.dataset {
            DatasetSpec::MovieLens100k { dir } => {
                out.push(("dataset", "ml100k".into()));
                out.push(("data-dir", path(dir)));
            }
            DatasetSpec::MovieLens1m { dir } => {
                out.push(("dataset", "ml1m".into()));
                out.push(("data-dir", path(dir)));
            }
            DatasetSpec::Generic {
                ratings,
                user_features,
                item_features,
                rescale_to,
            } => {
                out.push(("dataset", "generic".into()));
                out.push(("ratings", path(ratings)));
                out.push(("user-features", path(user_features)));
                out.push(("item-features", path(item_features)));
                if let Some(r) = rescale_to {
                    out.push(("rescale-to", r.to_string()));
                }
            }
        }
    }

    fn split_settings(&self, out: &mut Vec<(&'static str, String)>) {
        let users = |out: &mut Vec<(&'static str, String)>, u: &UserMode| match u {
            UserMode::LeaveOneOut => out.push(("leave-one-out", "true".into())),
            UserMode::Fraction(f) => out.push(("fraction", f.to_string())),
        };
        match &self.split.kind {
            SplitKind::MatrixCompletion { train_items, valid_items } => {
                out.push(("kind", "matrix-completion".into()));
                out.push(("train-items", train_items.to_string()));
                out.push(("valid-items", valid_items.to_string()));
            }
            SplitKind::UserColdStart { users: u } => {
                out.push(("kind", "user-cold-start".into()));
                users(out, u);
            }
            SplitKind::FullColdStart { users: u, item_fraction } => {
                out.push(("kind", "full-cold-start".into()));
                users(out, u);
                out.push(("item-fraction", item_fraction.to_string()));
            }
        }
        out.push(("valid-fraction", self.split.valid_fraction.to_string()));
    }

    fn model_settings(&self, out: &mut Vec<(&'static str, String)>, with_mu: bool) {
        let p = &self.params;
        if let Some(m) = self.method {
            out.push(("method", m.to_string()));
        }
        out.push(("eta", p.learning_rate.to_string()));
        out.push(("max-trees", p.max_trees.to_string()));
        out.push(("patience", p.early_stop_patience.to_string()));
        out.push(("sigma", p.sigmoid_scale.to_string()));
        out.push(("truncation", p.truncation.to_string()));
        out.push(("max-leaves", p.tree_params.max_leaves.to_string()));
        out.push(("min-leaf-fraction", p.tree_params.min_leaf_fraction.to_string()));
        out.push(("rank", p.rank.to_string()));
        out.push(("neighbors", self.neighbors.to_string()));
        if with_mu && self.method.is_some_and(|m| m.uses_mu()) {
            out.push(("mu1", p.mu1.to_string()));
            out.push(("mu2", p.mu2.to_string()));
        }
    }

    fn ks_setting(&self) -> String {
        self.ks.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(",")
    }

    /// Settings that reproduce `verb`, in a fixed order.
    pub fn resolved(&self, verb: &str) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let path = |p: &Path| p.display().to_string();
        match verb {
            "ingest" => {
                self.data_settings(&mut out);
                out.push(("out", path(&self.out)));
            }
            "split" => {
                self.data_settings(&mut out);
                self.split_settings(&mut out);
                out.push(("out", path(&self.out)));
                out.push(("folds", path(&self.folds)));
                out.push(("seed", self.seed.to_string()));
            }
            "train" | "evaluate" | "gridsearch" => {
                self.data_settings(&mut out);
                self.model_settings(&mut out, verb != "gridsearch");
                if verb == "gridsearch" {
                    out.push(("grid", self.grid_name.clone()));
                    out.push(("mu1-grid", fmt_list(&self.grid.mu1)));
                    out.push(("mu2-grid", fmt_list(&self.grid.mu2)));
                    out.push(("inner-folds", self.grid.inner_folds.to_string()));
                    out.push(("valid-fraction", self.split.valid_fraction.to_string()));
                }
                if verb == "evaluate" {
                    if let Some(m) = &self.model {
                        out.push(("model", path(m)));
                    }
                    out.push(("ks", self.ks_setting()));
                }
                out.push(("out", path(&self.out)));
                out.push(("folds", path(&self.folds)));
                out.push(("fold", self.fold.to_string()));
                out.push(("seed", self.seed.to_string()));
            }
            "compare" => {
                if let Some(a) = &self.report_a {
                    out.push(("report-a", path(a)));
                }
                if let Some(b) = &self.report_b {
                    out.push(("report-b", path(b)));
                }
                out.push(("ks", self.ks_setting()));
                out.push(("out", path(&self.out)));
            }
            _ => {}
        }
        out
    }

    /// Stamp the resolved settings of `verb` as `resolved_<verb>.ini` in `dir`.
    pub fn write_resolved(&self, verb: &str, dir: &Path) -> Result<PathBuf, CliError> {
        let mut ini = Ini::new();
        for (k, v) in self.resolved(verb) {
            ini.with_general_section().set(k, v);
        }
        let path = dir.join(format!("resolved_{verb}.ini"));
        ini.write_to_file(&path)
            .map_err(|e| CliError::Runtime(anyhow::anyhow!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}
