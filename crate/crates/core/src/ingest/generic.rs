use std::fs::File;
use std::path::Path;

use super::{EntityTable, RatingRecord, RawDataset};
use crate::data::Dataset;
use crate::error::{Error, Result};

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn read_table(path: &Path) -> Result<EntityTable> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "missing header".into(),
        });
    }
    let names = headers.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let mut records = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        records.push((rec[0].trim().to_string(), rec.iter().skip(1).map(|s| s.trim().to_string()).collect()));
    }
    EntityTable::from_records(names, records)
}

/// Ratings CSV with `user_id,item_id,score[,timestamp]` plus one descriptor
/// CSV per side whose first column holds the id.
pub fn load_generic(ratings: &Path, user_features: &Path, item_features: &Path) -> Result<RawDataset> {
    let users = read_table(user_features)?;
    let items = read_table(item_features)?;
    let mut rdr = reader(ratings)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (Some(u), Some(i), Some(s)) = (col("user_id"), col("item_id"), col("score")) else {
        return Err(Error::Parse {
            path: ratings.to_path_buf(),
            line: 1,
            message: "header must name user_id, item_id and score".into(),
        });
    };
    let ts = col("timestamp");
    let mut records = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = n + 2;
        let bad = |message: String| Error::Parse {
            path: ratings.to_path_buf(),
            line,
            message,
        };
        let score: f64 = rec[s].trim().parse().map_err(|_| bad(format!("score {:?} is not numeric", &rec[s])))?;
        if !score.is_finite() || score < 0.0 {
            return Err(bad(format!("score {score} must be finite and non-negative")));
        }
        let timestamp = match ts.map(|t| rec[t].trim()) {
            None | Some("") => None,
            Some(t) => Some(t.parse().map_err(|_| bad(format!("timestamp {t:?} is not an integer")))?),
        };
        records.push(RatingRecord {
            user: rec[u].trim().to_string(),
            item: rec[i].trim().to_string(),
            score,
            timestamp,
            line,
        });
    }
    RawDataset::assemble(records, users, items, ratings)
}

/// Write `ratings.csv`, `user_features.csv` and `item_features.csv` into
/// `dir`, using the dataset's user and item ids.
pub fn export_generic(data: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let create = |name: &str| -> Result<csv::Writer<File>> {
        let path = dir.join(name);
        Ok(csv::Writer::from_writer(File::create(&path).map_err(|e| Error::io(&path, e))?))
    };
    let mut w = create("ratings.csv")?;
    w.write_record(["user_id", "item_id", "score"])?;
    for (u, j, y) in data.prefs.entries() {
        w.write_record([data.user_ids[u].to_string(), data.item_ids[j].to_string(), y.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(dir, e))?;

    for (name, features, ids) in [
        ("user_features.csv", &data.users, &data.user_ids),
        ("item_features.csv", &data.items, &data.item_ids),
    ] {
        let mut w = create(name)?;
        let mut header = vec!["id".to_string()];
        header.extend(features.names().iter().cloned());
        w.write_record(&header)?;
        for (e, id) in ids.iter().enumerate() {
            let mut row = vec![id.to_string()];
            row.extend(features.row(e).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::FeatureSchema;
    use proptest::prelude::*;
    use std::fs;

    fn write_toy(dir: &Path, ratings: &str) -> Result<RawDataset> {
        fs::write(dir.join("r.csv"), ratings).unwrap();
        fs::write(dir.join("u.csv"), "id,height,city\n2,1.5,paris\n1,1.8,rome\n").unwrap();
        fs::write(dir.join("i.csv"), "id,year\nb,1999\na,2001\n").unwrap();
        load_generic(&dir.join("r.csv"), &dir.join("u.csv"), &dir.join("i.csv"))
    }

    #[test]
    fn toy_csvs() {
        let dir = tempfile::tempdir().unwrap();
        let raw = write_toy(dir.path(), "user_id,item_id,score\n1,a,3\n2,b,1\n2,a,0.5\n").unwrap();
        assert_eq!(raw.users.ids, vec!["1", "2"]);
        assert_eq!(raw.items.ids, vec!["a", "b"]);
        let d = raw.to_dataset(&FeatureSchema::infer(&raw)).unwrap();
        assert_eq!(d.users.names(), &["height", "city=paris", "city=rome"]);
        assert_eq!(d.users.row(0), &[1.8, 0.0, 1.0]);
        assert_eq!(d.items.row(0), &[2001.0]);
        assert_eq!(d.prefs.get(1, 0), Some(0.5));
    }

    #[test]
    fn duplicate_rating_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(write_toy(dir.path(), "user_id,item_id,score\n1,a,3\n1,a,2\n").is_err());
        assert!(write_toy(dir.path(), "user_id,score\n1,3\n").is_err());
    }

    #[test]
    fn export_then_reload() {
        let dir = tempfile::tempdir().unwrap();
        let raw = write_toy(dir.path(), "user_id,item_id,score\n1,a,3\n2,b,0.1\n2,a,0.3333333333333333\n").unwrap();
        let d = raw.to_dataset(&FeatureSchema::infer(&raw)).unwrap();
        let out = dir.path().join("out");
        export_generic(&d, &out).unwrap();
        let back = load_generic(&out.join("ratings.csv"), &out.join("user_features.csv"), &out.join("item_features.csv")).unwrap();
        let d2 = back.to_dataset(&FeatureSchema::infer(&back)).unwrap();
        assert_eq!(d2.prefs, d.prefs);
        assert_eq!(d2.users, d.users);
        assert_eq!(d2.items, d.items);
    }

    fn shuffled(lines: &[String], key: &[u32]) -> String {
        let mut order: Vec<usize> = (0..lines.len()).collect();
        order.sort_by_key(|&i| (key[i % key.len()], i));
        order.iter().map(|&i| format!("{}\n", lines[i])).collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn input_order_does_not_matter(
            cells in prop::collection::vec(prop::option::of(0u8..6), 20),
            key in prop::collection::vec(any::<u32>(), 1..40),
        ) {
            let users: Vec<String> = (0..5).map(|u| format!("{},{},c{}", u * 3, u % 2, u % 3)).collect();
            let items: Vec<String> = (0..4).map(|j| format!("i{j},{}", 1990 + j)).collect();
            // every user keeps its first item
            let ratings: Vec<String> = cells
                .iter()
                .enumerate()
                .filter_map(|(e, c)| if e % 4 == 0 { Some(c.unwrap_or(1)) } else { *c }.map(|y| (e, y)))
                .map(|(e, y)| format!("{},i{},{y}", (e / 4) * 3, e % 4))
                .collect();
            let load = |dir: &Path, key: &[u32]| {
                fs::write(dir.join("r.csv"), format!("user_id,item_id,score\n{}", shuffled(&ratings, key))).unwrap();
                fs::write(dir.join("u.csv"), format!("id,flag,city\n{}", shuffled(&users, key))).unwrap();
                fs::write(dir.join("i.csv"), format!("id,year\n{}", shuffled(&items, key))).unwrap();
                let raw = load_generic(&dir.join("r.csv"), &dir.join("u.csv"), &dir.join("i.csv")).unwrap();
                raw.to_dataset(&FeatureSchema::infer(&raw)).unwrap()
            };
            let dir = tempfile::tempdir().unwrap();
            let a = load(dir.path(), &[0]);
            let b = load(dir.path(), &key);
            prop_assert_eq!(a.prefs, b.prefs);
            prop_assert_eq!(a.users, b.users);
            prop_assert_eq!(a.items, b.items);
            prop_assert_eq!(a.user_ids, b.user_ids);
        }
    }
}
