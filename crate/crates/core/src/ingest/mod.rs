//! Raw dataset loading, one-of-N feature encoding and score rescaling.

mod generic;
mod movielens;

use std::cmp::Ordering;
use std::collections::HashMap;

pub use generic::{export_generic, load_generic};
pub use movielens::{load_movielens_100k, load_movielens_1m, GENRES};

use crate::data::{Dataset, DenseMatrix, EntityFeatures, PreferenceMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RawRating {
    pub user: usize,
    pub item: usize,
    pub score: f64,
    pub timestamp: Option<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawColumn {
    pub name: String,
    pub values: Vec<String>,
}

/// Entities with string attributes. Row `i` belongs to `ids[i]`; ids are in
/// ascending order (numeric when every id is an integer).
#[derive(Debug, Clone, PartialEq)]
pub struct EntityTable {
    pub ids: Vec<String>,
    pub columns: Vec<RawColumn>,
    index: HashMap<String, usize>,
}

fn id_order(a: &str, b: &str, numeric: bool) -> Ordering {
    if numeric {
        let (x, y): (i128, i128) = (a.parse().unwrap(), b.parse().unwrap());
        x.cmp(&y)
    } else {
        a.cmp(b)
    }
}

impl EntityTable {
    /// Build from `(id, attribute values)` records in any order.
    pub fn from_records(names: Vec<String>, mut records: Vec<(String, Vec<String>)>) -> Result<Self> {
        let numeric = records.iter().all(|(id, _)| id.parse::<i128>().is_ok());
        records.sort_by(|a, b| id_order(&a.0, &b.0, numeric));
        if let Some(w) = records.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::invalid(format!("duplicate id {}", w[0].0)));
        }
        let mut columns: Vec<RawColumn> = names
            .into_iter()
            .map(|name| RawColumn {
                name,
                values: Vec::with_capacity(records.len()),
            })
            .collect();
        let mut ids = Vec::with_capacity(records.len());
        for (id, values) in records {
            if values.len() != columns.len() {
                return Err(Error::invalid(format!("record {id} has {} attributes, expected {}", values.len(), columns.len())));
            }
            for (col, v) in columns.iter_mut().zip(values) {
                col.values.push(v);
            }
            ids.push(id);
        }
        let index = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Ok(Self { ids, columns, index })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn column(&self, name: &str) -> Option<&RawColumn> {
        self.columns.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub ratings: Vec<RawRating>,
    pub users: EntityTable,
    pub items: EntityTable,
}

/// Unresolved rating with string ids.
pub(crate) struct RatingRecord {
    pub user: String,
    pub item: String,
    pub score: f64,
    pub timestamp: Option<i64>,
    pub line: usize,
}

impl RawDataset {
    pub(crate) fn assemble(
        records: Vec<RatingRecord>,
        users: EntityTable,
        items: EntityTable,
        path: &std::path::Path,
    ) -> Result<Self> {
        let mut ratings = Vec::with_capacity(records.len());
        for r in records {
            let unknown = |what: &str, id: &str| Error::Parse {
                path: path.to_path_buf(),
                line: r.line,
                message: format!("unknown {what} id {id}"),
            };
            let user = users.index_of(&r.user).ok_or_else(|| unknown("user", &r.user))?;
            let item = items.index_of(&r.item).ok_or_else(|| unknown("item", &r.item))?;
            ratings.push(RawRating {
                user,
                item,
                score: r.score,
                timestamp: r.timestamp,
            });
        }
        ratings.sort_by(|a, b| (a.user, a.item).cmp(&(b.user, b.item)));
        if let Some(w) = ratings.windows(2).find(|w| (w[0].user, w[0].item) == (w[1].user, w[1].item)) {
            return Err(Error::invalid(format!(
                "duplicate rating for user {} item {}",
                users.ids[w[0].user], items.ids[w[0].item]
            )));
        }
        Ok(Self { ratings, users, items })
    }

    /// Preference matrix over users that have at least one rating, plus the
    /// table rows those users came from.
    pub fn preferences(&self) -> Result<(PreferenceMatrix, Vec<usize>)> {
        let mut rated = vec![false; self.users.len()];
        for r in &self.ratings {
            rated[r.user] = true;
        }
        let kept: Vec<usize> = (0..self.users.len()).filter(|&u| rated[u]).collect();
        if kept.len() < self.users.len() {
            log::warn!("dropping {} users without ratings", self.users.len() - kept.len());
        }
        let mut pos = vec![usize::MAX; self.users.len()];
        for (new, &old) in kept.iter().enumerate() {
            pos[old] = new;
        }
        let entries = self.ratings.iter().map(|r| (pos[r.user], r.item, r.score)).collect();
        Ok((PreferenceMatrix::new(kept.len(), self.items.len(), entries)?, kept))
    }

    /// Encoded dataset; users without ratings are dropped.
    pub fn to_dataset(&self, schema: &FeatureSchema) -> Result<Dataset> {
        let (prefs, kept) = self.preferences()?;
        let (users, items) = encode_features(self, schema)?;
        let mut data = Dataset::new(prefs, users.select(&kept), items)?;
        data.user_ids = kept;
        Ok(data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OtherColumn {
    Always,
    IfNeeded,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnRule {
    Numeric,
    OneOfN { categories: Vec<String>, other: OtherColumn },
    /// Integer age in seven buckets: <18, 18-24, 25-34, 35-44, 45-49, 50-55, 56+.
    AgeBucket,
    /// First digit of a postal code in ten buckets; codes not starting with a
    /// digit encode as all zeros.
    ZipBucket,
}

pub const AGE_BUCKETS: [&str; 7] = ["<18", "18-24", "25-34", "35-44", "45-49", "50-55", "56+"];

fn age_bucket(age: i64) -> usize {
    match age {
        ..=17 => 0,
        18..=24 => 1,
        25..=34 => 2,
        35..=44 => 3,
        45..=49 => 4,
        50..=55 => 5,
        _ => 6,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSchema {
    pub users: Vec<(String, ColumnRule)>,
    pub items: Vec<(String, ColumnRule)>,
}

fn observed_categories(col: &RawColumn) -> Vec<String> {
    let mut cats = col.values.clone();
    cats.sort();
    cats.dedup();
    cats
}

fn infer_rules(table: &EntityTable) -> Vec<(String, ColumnRule)> {
    table
        .columns
        .iter()
        .map(|c| {
            let numeric = c.values.iter().all(|v| v.trim().parse::<f64>().is_ok_and(f64::is_finite));
            let rule = if numeric {
                ColumnRule::Numeric
            } else {
                ColumnRule::OneOfN {
                    categories: observed_categories(c),
                    other: OtherColumn::IfNeeded,
                }
            };
            (c.name.clone(), rule)
        })
        .collect()
}

impl FeatureSchema {
    /// Numeric columns pass through, everything else becomes one-of-N.
    pub fn infer(raw: &RawDataset) -> Self {
        Self {
            users: infer_rules(&raw.users),
            items: infer_rules(&raw.items),
        }
    }

    /// Users: sex, age bucket, occupation and zip bucket; items: genre flags.
    pub fn movielens(raw: &RawDataset) -> Result<Self> {
        let occupation = raw
            .users
            .column("occupation")
            .ok_or_else(|| Error::invalid("MovieLens users lack an occupation column"))?;
        Ok(Self {
            users: vec![
                (
                    "gender".into(),
                    ColumnRule::OneOfN {
                        categories: vec!["F".into(), "M".into()],
                        other: OtherColumn::IfNeeded,
                    },
                ),
                ("age".into(), ColumnRule::AgeBucket),
                (
                    "occupation".into(),
                    ColumnRule::OneOfN {
                        categories: observed_categories(occupation),
                        other: OtherColumn::IfNeeded,
                    },
                ),
                ("zip".into(), ColumnRule::ZipBucket),
            ],
            items: GENRES.iter().map(|g| (g.to_string(), ColumnRule::Numeric)).collect(),
        })
    }
}

fn encode_table(table: &EntityTable, rules: &[(String, ColumnRule)], side: &str) -> Result<EntityFeatures> {
    let n = table.len();
    let mut names = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (name, rule) in rules {
        let col = table
            .column(name)
            .ok_or_else(|| Error::invalid(format!("{side} attribute {name} missing")))?;
        match rule {
            ColumnRule::Numeric => {
                let mut values = Vec::with_capacity(n);
                for (v, id) in col.values.iter().zip(&table.ids) {
                    let x: f64 = v
                        .trim()
                        .parse()
                        .map_err(|_| Error::invalid(format!("{side} {id}: {name} value {v:?} is not numeric")))?;
                    if !x.is_finite() {
                        return Err(Error::NonFinite("numeric attribute"));
                    }
                    values.push(x);
                }
                names.push(name.clone());
                columns.push(values);
            }
            ColumnRule::OneOfN { categories, other } => {
                let mut cols = vec![vec![0.0; n]; categories.len()];
                let mut others = vec![0.0; n];
                let mut unseen = 0;
                for (r, v) in col.values.iter().enumerate() {
                    match categories.iter().position(|c| c == v) {
                        Some(c) => cols[c][r] = 1.0,
                        None => {
                            others[r] = 1.0;
                            unseen += 1;
                        }
                    }
                }
                if unseen > 0 {
                    log::warn!("{side} attribute {name}: {unseen} values outside the known categories mapped to other");
                }
                for (c, values) in categories.iter().zip(cols) {
                    names.push(format!("{name}={c}"));
                    columns.push(values);
                }
                if unseen > 0 || *other == OtherColumn::Always {
                    names.push(format!("{name}=other"));
                    columns.push(others);
                }
            }
            ColumnRule::AgeBucket => {
                let mut cols = vec![vec![0.0; n]; AGE_BUCKETS.len()];
                for (r, (v, id)) in col.values.iter().zip(&table.ids).enumerate() {
                    let age: i64 = v
                        .trim()
                        .parse()
                        .map_err(|_| Error::invalid(format!("{side} {id}: age {v:?} is not an integer")))?;
                    cols[age_bucket(age)][r] = 1.0;
                }
                for (b, values) in AGE_BUCKETS.iter().zip(cols) {
                    names.push(format!("{name}={b}"));
                    columns.push(values);
                }
            }
            ColumnRule::ZipBucket => {
                let mut cols = vec![vec![0.0; n]; 10];
                let mut foreign = 0;
                for (r, v) in col.values.iter().enumerate() {
                    match v.trim().chars().next().and_then(|c| c.to_digit(10)) {
                        Some(d) => cols[d as usize][r] = 1.0,
                        None => foreign += 1,
                    }
                }
                if foreign > 0 {
                    log::debug!("{side} attribute {name}: {foreign} codes without a leading digit");
                }
                for (b, values) in cols.into_iter().enumerate() {
                    names.push(format!("{name}={b}"));
                    columns.push(values);
                }
            }
        }
    }
    let d = columns.len();
    let mut data = Vec::with_capacity(n * d);
    for r in 0..n {
        data.extend(columns.iter().map(|c| c[r]));
    }
    EntityFeatures::new(DenseMatrix::from_vec(n, d, data)?, names)
}

/// Encoded user and item descriptors, rows in table order.
pub fn encode_features(raw: &RawDataset, schema: &FeatureSchema) -> Result<(EntityFeatures, EntityFeatures)> {
    Ok((
        encode_table(&raw.users, &schema.users, "user")?,
        encode_table(&raw.items, &schema.items, "item")?,
    ))
}

/// Linear map of every score from [0, src_max] onto [0, dst_max].
pub fn rescale_scores(prefs: &PreferenceMatrix, src_max: f64, dst_max: f64) -> Result<PreferenceMatrix> {
    if !(src_max > 0.0 && src_max.is_finite()) {
        return Err(Error::invalid("source maximum must be positive"));
    }
    if !(dst_max >= 0.0 && dst_max.is_finite()) {
        return Err(Error::invalid("target maximum must be finite and non-negative"));
    }
    if prefs.entries().any(|(_, _, y)| y < 0.0) {
        return Err(Error::invalid("negative score cannot be rescaled"));
    }
    prefs.map_scores(|y| y * dst_max / src_max)
}
