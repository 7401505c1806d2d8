use std::fs;
use std::path::{Path, PathBuf};

use super::{EntityTable, RatingRecord, RawDataset};
use crate::error::{Error, Result};

/// Genre flag order of the 100K item file; 1M genre names map onto it.
pub const GENRES: [&str; 19] = [
    "unknown",
    "Action",
    "Adventure",
    "Animation",
    "Children's",
    "Comedy",
    "Crime",
    "Documentary",
    "Drama",
    "Fantasy",
    "Film-Noir",
    "Horror",
    "Musical",
    "Mystery",
    "Romance",
    "Sci-Fi",
    "Thriller",
    "War",
    "Western",
];

const USER_COLUMNS_100K: [&str; 4] = ["age", "gender", "occupation", "zip"];
const USER_COLUMNS_1M: [&str; 4] = ["gender", "age", "occupation", "zip"];

fn read_latin1(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(bytes.iter().map(|&b| b as char).collect())
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn parse_rating(path: &Path, line: usize, fields: &[&str]) -> Result<RatingRecord> {
    if fields.len() != 4 {
        return Err(parse_err(path, line, format!("expected 4 fields, found {}", fields.len())));
    }
    let score: u8 = fields[2]
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("rating {:?} is not an integer", fields[2])))?;
    if !(1..=5).contains(&score) {
        return Err(parse_err(path, line, format!("rating {score} outside 1..5")));
    }
    let timestamp = fields[3]
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("timestamp {:?} is not an integer", fields[3])))?;
    Ok(RatingRecord {
        user: fields[0].trim().to_string(),
        item: fields[1].trim().to_string(),
        score: f64::from(score),
        timestamp: Some(timestamp),
        line,
    })
}

pub fn load_movielens_100k(dir: &Path) -> Result<RawDataset> {
    let data_path = dir.join("u.data");
    let user_path = dir.join("u.user");
    let item_path = dir.join("u.item");

    let mut users = Vec::new();
    for (n, line) in lines(&read_latin1(&user_path)?) {
        let f: Vec<&str> = line.split('|').collect();
        if f.len() != 5 {
            return Err(parse_err(&user_path, n, format!("expected 5 fields, found {}", f.len())));
        }
        users.push((f[0].to_string(), f[1..].iter().map(|s| s.to_string()).collect()));
    }

    let mut items = Vec::new();
    for (n, line) in lines(&read_latin1(&item_path)?) {
        let f: Vec<&str> = line.split('|').collect();
        if f.len() < 5 + GENRES.len() {
            return Err(parse_err(&item_path, n, format!("expected {} fields, found {}", 5 + GENRES.len(), f.len())));
        }
        // titles may contain the separator, so flags are taken from the end
        let flags = &f[f.len() - GENRES.len()..];
        for flag in flags {
            if *flag != "0" && *flag != "1" {
                return Err(parse_err(&item_path, n, format!("genre flag {flag:?} is not 0/1")));
            }
        }
        items.push((f[0].to_string(), flags.iter().map(|s| s.to_string()).collect()));
    }

    let mut ratings = Vec::new();
    for (n, line) in lines(&read_latin1(&data_path)?) {
        let f: Vec<&str> = line.split('\t').collect();
        ratings.push(parse_rating(&data_path, n, &f)?);
    }

    RawDataset::assemble(
        ratings,
        EntityTable::from_records(USER_COLUMNS_100K.iter().map(|s| s.to_string()).collect(), users)?,
        EntityTable::from_records(GENRES.iter().map(|s| s.to_string()).collect(), items)?,
        &data_path,
    )
}

/// Split a `::`-separated record into `first`, middle and `last` parts. The
/// middle keeps any separators it contains.
fn split_ends<'a>(line: &'a str, first: usize, last: usize) -> Option<Vec<&'a str>> {
    let mut head = Vec::new();
    let mut rest = line;
    for _ in 0..first {
        let (a, b) = rest.split_once("::")?;
        head.push(a);
        rest = b;
    }
    let mut tail = Vec::new();
    for _ in 0..last {
        let (a, b) = rest.rsplit_once("::")?;
        tail.push(b);
        rest = a;
    }
    head.push(rest);
    head.extend(tail.into_iter().rev());
    Some(head)
}

pub fn load_movielens_1m(dir: &Path) -> Result<RawDataset> {
    let path = |name: &str| -> PathBuf { dir.join(name) };
    let (data_path, user_path, item_path) = (path("ratings.dat"), path("users.dat"), path("movies.dat"));

    let mut users = Vec::new();
    for (n, line) in lines(&read_latin1(&user_path)?) {
        let f: Vec<&str> = line.split("::").collect();
        if f.len() != 5 {
            return Err(parse_err(&user_path, n, format!("expected 5 fields, found {}", f.len())));
        }
        users.push((f[0].to_string(), f[1..].iter().map(|s| s.to_string()).collect()));
    }

    let mut items = Vec::new();
    for (n, line) in lines(&read_latin1(&item_path)?) {
        let f = split_ends(line, 1, 1).ok_or_else(|| parse_err(&item_path, n, "expected id::title::genres"))?;
        let mut flags = vec!["0".to_string(); GENRES.len()];
        for g in f[2].split('|').filter(|g| !g.is_empty()) {
            match GENRES.iter().position(|known| *known == g) {
                Some(i) => flags[i] = "1".into(),
                None => {
                    log::warn!("{}:{n}: unknown genre {g:?}", item_path.display());
                    flags[0] = "1".into();
                }
            }
        }
        if flags.iter().all(|f| f == "0") {
            flags[0] = "1".into();
        }
        items.push((f[0].to_string(), flags));
    }

    let mut ratings = Vec::new();
    for (n, line) in lines(&read_latin1(&data_path)?) {
        let f: Vec<&str> = line.split("::").collect();
        ratings.push(parse_rating(&data_path, n, &f)?);
    }

    RawDataset::assemble(
        ratings,
        EntityTable::from_records(USER_COLUMNS_1M.iter().map(|s| s.to_string()).collect(), users)?,
        EntityTable::from_records(GENRES.iter().map(|s| s.to_string()).collect(), items)?,
        &data_path,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{FeatureSchema, RawDataset};

    fn write(dir: &Path, name: &str, body: &str) {
        fs::write(dir.join(name), body).unwrap();
    }

    fn flags(on: &[usize]) -> String {
        (0..19).map(|i| if on.contains(&i) { "1" } else { "0" }).collect::<Vec<_>>().join("|")
    }

    fn toy_100k(dir: &Path, data: &str) -> Result<RawDataset> {
        write(dir, "u.user", "1|24|M|technician|85711\n2|53|F|other|T8H1N\n");
        write(
            dir,
            "u.item",
            &format!("1|Toy Story (1995)|01-Jan-1995||http://x|{}\n2|A|B (1990)|||u|{}\n", flags(&[3, 4, 5]), flags(&[1])),
        );
        write(dir, "u.data", data);
        load_movielens_100k(dir)
    }

    #[test]
    fn loads_100k_layout() {
        let dir = tempfile::tempdir().unwrap();
        let raw = toy_100k(dir.path(), "1\t1\t5\t881250949\n2\t2\t3\t881250950\n2\t1\t1\t881250951\n").unwrap();
        assert_eq!(raw.users.len(), 2);
        assert_eq!(raw.items.len(), 2);
        assert_eq!(raw.ratings.len(), 3);
        let d = raw.to_dataset(&FeatureSchema::movielens(&raw).unwrap()).unwrap();
        assert_eq!(d.items.dim(), 19);
        assert_eq!(d.users.dim(), 2 + 7 + 2 + 10);
        // the Canadian code has no leading digit and sets no zip column
        assert!(d.users.row(1)[11..].iter().all(|&v| v == 0.0));
        assert_eq!(d.items.row(0)[3], 1.0);
        assert_eq!(d.prefs.get(1, 0), Some(1.0));
    }

    #[test]
    fn rejects_bad_ratings_and_ids() {
        let dir = tempfile::tempdir().unwrap();
        let err = toy_100k(dir.path(), "1\t1\t5\t1\n1\t2\t6\t1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = toy_100k(dir.path(), "1\t9\t5\t1\n").unwrap_err();
        assert!(err.to_string().contains("unknown item id 9"), "{err}");
        assert!(toy_100k(dir.path(), "1\t1\n").is_err());
    }

    #[test]
    fn loads_1m_layout() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "users.dat", "1::F::1::10::48067\n2::M::56::16::70072\n");
        write(
            dir.path(),
            "movies.dat",
            "1::Toy Story (1995)::Animation|Children's|Comedy\n2::Odd::Title (2000)::Drama\n",
        );
        write(dir.path(), "ratings.dat", "1::1::5::978300760\n2::2::3::978300761\n");
        let raw = load_movielens_1m(dir.path()).unwrap();
        assert_eq!(raw.items.column("Animation").unwrap().values[0], "1");
        assert_eq!(raw.items.column("Children's").unwrap().values[0], "1");
        assert_eq!(raw.items.column("Drama").unwrap().values[1], "1");
        let d = raw.to_dataset(&FeatureSchema::movielens(&raw).unwrap()).unwrap();
        assert_eq!(d.users.row(0)[2], 1.0, "age code 1 is the under-18 bucket");
    }

    #[test]
    fn split_from_both_ends() {
        assert_eq!(split_ends("1::a::b::c", 1, 1).unwrap(), vec!["1", "a::b", "c"]);
        assert!(split_ends("1", 1, 1).is_none());
    }
}
