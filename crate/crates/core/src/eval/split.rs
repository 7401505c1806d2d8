use std::io::{Read, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PreferenceMatrix};
use crate::error::{Error, Result};
use crate::rng::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityRole {
    /// Seen in training and at test time (matrix completion).
    Shared,
    Train,
    Valid,
    Test,
    Unused,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryRole {
    Train,
    Valid,
    Test,
    Unused,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UserMode {
    LeaveOneOut,
    Fraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SplitKind {
    MatrixCompletion { train_items: usize, valid_items: usize },
    UserColdStart { users: UserMode },
    FullColdStart { users: UserMode, item_fraction: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub kind: SplitKind,
    /// Share of the training users held out for early stopping (cold start).
    pub valid_fraction: f64,
    pub seed: u64,
}

/// Role of every user, item and observed entry of a dataset in one fold.
#[derive(Debug, Clone, PartialEq)]
pub struct Fold {
    pub index: usize,
    pub seed: u64,
    pub users: Vec<EntityRole>,
    pub items: Vec<EntityRole>,
    pub entries: Vec<EntryRole>,
}

fn in_training(role: EntityRole) -> bool {
    matches!(role, EntityRole::Shared | EntityRole::Train)
}

impl Fold {
    /// Fold with the given user and item roles; entry roles follow from them.
    pub fn with_roles(index: usize, seed: u64, prefs: &PreferenceMatrix, users: Vec<EntityRole>, items: Vec<EntityRole>) -> Self {
        let mut entries = Vec::with_capacity(prefs.n_entries());
        for (u, j, _) in prefs.entries() {
            let item_train = in_training(items[j]);
            let item_test = matches!(items[j], EntityRole::Shared | EntityRole::Test);
            entries.push(match users[u] {
                EntityRole::Train if item_train => EntryRole::Train,
                EntityRole::Valid if item_train => EntryRole::Valid,
                EntityRole::Test if item_test => EntryRole::Test,
                _ => EntryRole::Unused,
            });
        }
        Self {
            index,
            seed,
            users,
            items,
            entries,
        }
    }

    fn select(roles: &[EntityRole], keep: impl Fn(EntityRole) -> bool) -> Vec<usize> {
        (0..roles.len()).filter(|&i| keep(roles[i])).collect()
    }

    fn part(&self, data: &Dataset, users: &[EntityRole], role: EntryRole, test_items: bool) -> Result<Dataset> {
        if self.entries.len() != data.prefs.n_entries() || self.users.len() != data.prefs.n_users() {
            return Err(Error::invalid("fold does not belong to this dataset"));
        }
        let items = if test_items {
            Self::select(&self.items, |r| matches!(r, EntityRole::Shared | EntityRole::Test))
        } else {
            Self::select(&self.items, in_training)
        };
        let wanted: Vec<usize> = (0..users.len()).filter(|&u| users[u] != EntityRole::Unused).collect();
        data.subset(&wanted, &items, |_, _, e| self.entries[e] == role)
    }

    fn masked_users(&self, keep: impl Fn(EntityRole) -> bool) -> Vec<EntityRole> {
        self.users
            .iter()
            .map(|&r| if keep(r) { r } else { EntityRole::Unused })
            .collect()
    }

    pub fn train(&self, data: &Dataset) -> Result<Dataset> {
        self.part(data, &self.masked_users(in_training), EntryRole::Train, false)
    }

    pub fn valid(&self, data: &Dataset) -> Result<Dataset> {
        self.part(data, &self.masked_users(|r| matches!(r, EntityRole::Shared | EntityRole::Valid)), EntryRole::Valid, false)
    }

    pub fn test(&self, data: &Dataset) -> Result<Dataset> {
        self.part(data, &self.masked_users(|r| matches!(r, EntityRole::Shared | EntityRole::Test)), EntryRole::Test, true)
    }

    /// Users evaluated in this fold.
    pub fn test_users(&self) -> Vec<usize> {
        Self::select(&self.users, |r| matches!(r, EntityRole::Shared | EntityRole::Test))
    }

    pub fn count(&self, role: EntryRole) -> usize {
        self.entries.iter().filter(|&&r| r == role).count()
    }

    /// Serialize as `kind,index,role` rows (user, item and entry roles).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["kind", "index", "role", "fold", "seed"])?;
        let (fold, seed) = (self.index.to_string(), self.seed.to_string());
        for (i, r) in self.users.iter().enumerate() {
            w.write_record(["user", &i.to_string(), r.name(), &fold, &seed])?;
        }
        for (i, r) in self.items.iter().enumerate() {
            w.write_record(["item", &i.to_string(), r.name(), &fold, &seed])?;
        }
        for (i, r) in self.entries.iter().enumerate() {
            w.write_record(["entry", &i.to_string(), r.name(), &fold, &seed])?;
        }
        w.flush().map_err(|e| Error::io("fold file", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut users = Vec::new();
        let mut items = Vec::new();
        let mut entries = Vec::new();
        let (mut index, mut seed) = (0, 0);
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != 5 {
                return Err(Error::invalid("fold rows need kind,index,role,fold,seed"));
            }
            let pos: usize = rec[1].parse().map_err(|_| Error::invalid("bad fold index"))?;
            index = rec[3].parse().map_err(|_| Error::invalid("bad fold number"))?;
            seed = rec[4].parse().map_err(|_| Error::invalid("bad fold seed"))?;
            let bad_role = || Error::invalid(format!("unknown role {}", &rec[2]));
            match &rec[0] {
                "user" | "item" => {
                    let role = entity_role(&rec[2]).ok_or_else(bad_role)?;
                    let list = if &rec[0] == "user" { &mut users } else { &mut items };
                    if pos != list.len() {
                        return Err(Error::invalid("fold rows out of order"));
                    }
                    list.push(role);
                }
                "entry" => {
                    if pos != entries.len() {
                        return Err(Error::invalid("fold rows out of order"));
                    }
                    entries.push(entry_role(&rec[2]).ok_or_else(bad_role)?);
                }
                other => return Err(Error::invalid(format!("unknown fold row kind {other}"))),
            }
        }
        Ok(Self {
            index,
            seed,
            users,
            items,
            entries,
        })
    }
}

impl EntityRole {
    pub fn name(self) -> &'static str {
        match self {
            EntityRole::Shared => "shared",
            EntityRole::Train => "train",
            EntityRole::Valid => "valid",
            EntityRole::Test => "test",
            EntityRole::Unused => "unused",
        }
    }
}

impl EntryRole {
    pub fn name(self) -> &'static str {
        match self {
            EntryRole::Train => "train",
            EntryRole::Valid => "valid",
            EntryRole::Test => "test",
            EntryRole::Unused => "unused",
        }
    }
}

fn entity_role(s: &str) -> Option<EntityRole> {
    Some(match s {
        "shared" => EntityRole::Shared,
        "train" => EntityRole::Train,
        "valid" => EntityRole::Valid,
        "test" => EntityRole::Test,
        "unused" => EntityRole::Unused,
        _ => return None,
    })
}

fn entry_role(s: &str) -> Option<EntryRole> {
    Some(match s {
        "train" => EntryRole::Train,
        "valid" => EntryRole::Valid,
        "test" => EntryRole::Test,
        "unused" => EntryRole::Unused,
        _ => return None,
    })
}

/// Per user: `n_train` random observed items for training, `n_valid` for
/// validation, the rest for testing.
pub fn split_matrix_completion(prefs: &PreferenceMatrix, n_train: usize, n_valid: usize, seed: u64) -> Result<Fold> {
    if n_train == 0 {
        return Err(Error::invalid("matrix completion needs at least one training item per user"));
    }
    let mut rng = seeded_rng(seed, "split/matrix-completion");
    let mut entries = vec![EntryRole::Unused; prefs.n_entries()];
    for u in 0..prefs.n_users() {
        let range = prefs.user_entries(u);
        if range.len() <= n_train + n_valid {
            return Err(Error::invalid(format!(
                "user {u} has {} observed items, needs more than {}",
                range.len(),
                n_train + n_valid
            )));
        }
        let mut idx: Vec<usize> = range.collect();
        idx.shuffle(&mut rng);
        for (pos, e) in idx.into_iter().enumerate() {
            entries[e] = if pos < n_train {
                EntryRole::Train
            } else if pos < n_train + n_valid {
                EntryRole::Valid
            } else {
                EntryRole::Test
            };
        }
    }
    Ok(Fold {
        index: 0,
        seed,
        users: vec![EntityRole::Shared; prefs.n_users()],
        items: vec![EntityRole::Shared; prefs.n_items()],
        entries,
    })
}

/// Training users get the floor of `fraction · n`.
fn user_partitions(n: usize, mode: UserMode, rng: &mut impl rand::Rng) -> Result<Vec<Vec<bool>>> {
    if n < 2 {
        return Err(Error::invalid("cold-start splits need at least two users"));
    }
    match mode {
        UserMode::LeaveOneOut => Ok((0..n).map(|held| (0..n).map(|u| u == held).collect()).collect()),
        UserMode::Fraction(f) => {
            check_fraction(f, "user fraction")?;
            let n_train = ((f * n as f64).floor() as usize).clamp(1, n - 1);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            let mut test = vec![true; n];
            for &u in &order[..n_train] {
                test[u] = false;
            }
            Ok(vec![test])
        }
    }
}

fn check_fraction(f: f64, what: &str) -> Result<()> {
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::invalid(format!("{what} must lie in (0, 1)")));
    }
    Ok(())
}

/// Mark `round(valid_fraction · |train|)` of the training users as validation.
fn carve_validation(users: &mut [EntityRole], valid_fraction: f64, rng: &mut impl rand::Rng) -> Result<()> {
    if valid_fraction == 0.0 {
        return Ok(());
    }
    check_fraction(valid_fraction, "validation fraction")?;
    let mut train: Vec<usize> = (0..users.len()).filter(|&u| users[u] == EntityRole::Train).collect();
    if train.len() < 2 {
        return Err(Error::invalid("too few training users to hold out a validation set"));
    }
    let n_valid = ((valid_fraction * train.len() as f64).round() as usize).clamp(1, train.len() - 1);
    train.shuffle(rng);
    for &u in &train[..n_valid] {
        users[u] = EntityRole::Valid;
    }
    Ok(())
}

/// Test users keep all their ratings for evaluation; every item is known.
pub fn split_user_cold_start(prefs: &PreferenceMatrix, mode: UserMode, valid_fraction: f64, seed: u64) -> Result<Vec<Fold>> {
    let mut rng = seeded_rng(seed, "split/user-cold-start");
    let parts = user_partitions(prefs.n_users(), mode, &mut rng)?;
    let mut folds = Vec::with_capacity(parts.len());
    for (index, test) in parts.into_iter().enumerate() {
        let mut users: Vec<EntityRole> = test
            .iter()
            .map(|&t| if t { EntityRole::Test } else { EntityRole::Train })
            .collect();
        carve_validation(&mut users, valid_fraction, &mut rng)?;
        folds.push(Fold::with_roles(index, seed, prefs, users, vec![EntityRole::Shared; prefs.n_items()]));
    }
    Ok(folds)
}

/// As the user cold start, with items also split: training sees only train
/// users × train items, testing only test users × test items.
pub fn split_full_cold_start(
    prefs: &PreferenceMatrix,
    mode: UserMode,
    item_fraction: f64,
    valid_fraction: f64,
    seed: u64,
) -> Result<Vec<Fold>> {
    check_fraction(item_fraction, "item fraction")?;
    let mut rng = seeded_rng(seed, "split/full-cold-start");
    let m = prefs.n_items();
    if m < 2 {
        return Err(Error::invalid("full cold start needs at least two items"));
    }
    let n_train_items = ((item_fraction * m as f64).floor() as usize).clamp(1, m - 1);
    let parts = user_partitions(prefs.n_users(), mode, &mut rng)?;
    let mut folds = Vec::with_capacity(parts.len());
    for (index, test) in parts.into_iter().enumerate() {
        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(&mut rng);
        let mut items = vec![EntityRole::Test; m];
        for &j in &order[..n_train_items] {
            items[j] = EntityRole::Train;
        }
        let mut users: Vec<EntityRole> = test
            .iter()
            .map(|&t| if t { EntityRole::Test } else { EntityRole::Train })
            .collect();
        carve_validation(&mut users, valid_fraction, &mut rng)?;
        folds.push(Fold::with_roles(index, seed, prefs, users, items));
    }
    Ok(folds)
}

pub fn make_folds(prefs: &PreferenceMatrix, spec: &SplitSpec) -> Result<Vec<Fold>> {
    match spec.kind {
        SplitKind::MatrixCompletion { train_items, valid_items } => {
            Ok(vec![split_matrix_completion(prefs, train_items, valid_items, spec.seed)?])
        }
        SplitKind::UserColdStart { users } => split_user_cold_start(prefs, users, spec.valid_fraction, spec.seed),
        SplitKind::FullColdStart { users, item_fraction } => {
            split_full_cold_start(prefs, users, item_fraction, spec.valid_fraction, spec.seed)
        }
    }
}
