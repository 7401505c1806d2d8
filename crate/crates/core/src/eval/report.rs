use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::split::Fold;
use crate::baselines::{cross_mean, full_memory_neighbors, nearest_neighbors, user_memory_scores, NeighborQuery};
use crate::boosting::Model;
use crate::data::{Dataset, DenseMatrix};
use crate::error::{Error, Result};
use crate::metrics::{ndcg_at_k, TruncationLevel};

/// Anything that can score the observed cells of a test dataset.
#[derive(Debug, Clone, Copy)]
pub enum Predictor<'a> {
    Model(&'a Model),
    /// User-neighbour memory baseline over a training dataset.
    UserMemory(&'a Dataset, NeighborQuery),
    /// User × item neighbour memory baseline over a training dataset.
    FullMemory(&'a Dataset, NeighborQuery),
    /// Precomputed scores over the full problem (users × items, indexed by
    /// the test dataset's user and item ids).
    Fixed(&'a DenseMatrix),
}

/// Predicted score of every observed entry of `test`, in entry order.
pub fn predict_entries(predictor: Predictor<'_>, test: &Dataset) -> Result<Vec<f64>> {
    let prefs = &test.prefs;
    let mut out = Vec::with_capacity(prefs.n_entries());
    match predictor {
        Predictor::Model(model) => {
            let scores = model.score_all(&test.users, &test.items)?;
            for (u, j, _) in prefs.entries() {
                out.push(scores.get(u, j));
            }
        }
        Predictor::UserMemory(train, q) => {
            let pos: HashMap<usize, usize> = train.item_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
            for u in 0..prefs.n_users() {
                let scores = user_memory_scores(test.users.row(u), train, q)?;
                for &j in prefs.user_items(u) {
                    out.push(pos.get(&test.item_ids[j]).map_or(0.0, |&t| scores[t]));
                }
            }
        }
        Predictor::FullMemory(train, q) => {
            let mut item_nbrs = HashMap::new();
            for u in 0..prefs.n_users() {
                let users = full_memory_neighbors(test.users.row(u), train, q)?;
                for &j in prefs.user_items(u) {
                    if !item_nbrs.contains_key(&j) {
                        item_nbrs.insert(j, nearest_neighbors(&train.items, test.items.row(j), q.k())?);
                    }
                    out.push(cross_mean(train, &users, &item_nbrs[&j]));
                }
            }
        }
        Predictor::Fixed(scores) => {
            for (u, j, _) in prefs.entries() {
                let (gu, gj) = (test.user_ids[u], test.item_ids[j]);
                if gu >= scores.rows() || gj >= scores.cols() {
                    return Err(Error::IndexOutOfRange {
                        what: "fixed score matrix",
                        index: gu.max(gj),
                        size: scores.rows().min(scores.cols()),
                    });
                }
                out.push(scores.get(gu, gj));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitScore {
    /// User index in the full problem.
    pub user: usize,
    pub n_items: usize,
    /// NDCG at each of the report's truncation levels.
    pub ndcg: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub method: String,
    pub ks: Vec<TruncationLevel>,
    pub units: Vec<UnitScore>,
    /// Test users without any observed test item.
    pub skipped: usize,
    pub seed: u64,
}

impl EvalReport {
    pub fn means(&self) -> Vec<f64> {
        (0..self.ks.len())
            .map(|c| self.units.iter().map(|u| u.ndcg[c]).sum::<f64>() / self.units.len() as f64)
            .collect()
    }

    pub fn mean_at(&self, k: TruncationLevel) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|c| self.means()[c])
    }

    fn column(&self, k: TruncationLevel) -> Result<usize> {
        self.ks
            .iter()
            .position(|&x| x == k)
            .ok_or_else(|| Error::invalid(format!("report {} has no NDCG@{k}", self.method)))
    }

    /// Concatenate per-unit results of several folds.
    pub fn merge(mut self, other: EvalReport) -> Result<EvalReport> {
        if self.ks != other.ks || self.method != other.method {
            return Err(Error::invalid("only reports of one method and cutoffs can be merged"));
        }
        self.units.extend(other.units);
        self.units.sort_by_key(|u| u.user);
        self.skipped += other.skipped;
        Ok(self)
    }

    /// Per-unit rows: `method,seed,user,n_items,ndcg@k...`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["method".to_string(), "seed".into(), "user".into(), "n_items".into()];
        header.extend(self.ks.iter().map(|k| format!("ndcg@{k}")));
        w.write_record(&header)?;
        for u in &self.units {
            let mut row = vec![self.method.clone(), self.seed.to_string(), u.user.to_string(), u.n_items.to_string()];
            row.extend(u.ndcg.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("report", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers()?.clone();
        if header.len() < 5 || &header[0] != "method" {
            return Err(Error::invalid("not a report file"));
        }
        let mut ks = Vec::new();
        for h in header.iter().skip(4) {
            let k = h
                .strip_prefix("ndcg@")
                .and_then(|k| k.parse().ok())
                .ok_or_else(|| Error::invalid(format!("bad report column {h}")))?;
            ks.push(TruncationLevel::new(k)?);
        }
        let mut report = EvalReport {
            method: String::new(),
            ks,
            units: Vec::new(),
            skipped: 0,
            seed: 0,
        };
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::invalid(format!("bad number {s}")));
        for rec in rdr.records() {
            let rec = rec?;
            report.method = rec[0].to_string();
            report.seed = rec[1].parse().map_err(|_| Error::invalid("bad seed"))?;
            report.units.push(UnitScore {
                user: rec[2].parse().map_err(|_| Error::invalid("bad user"))?,
                n_items: rec[3].parse().map_err(|_| Error::invalid("bad item count"))?,
                ndcg: rec.iter().skip(4).map(num).collect::<Result<_>>()?,
            });
        }
        Ok(report)
    }
}

/// Per-user NDCG of `predictor` on the fold's observed test cells.
pub fn evaluate_ndcg(
    predictor: Predictor<'_>,
    data: &Dataset,
    fold: &Fold,
    ks: &[TruncationLevel],
    method: &str,
) -> Result<EvalReport> {
    if ks.is_empty() {
        return Err(Error::Empty("truncation levels"));
    }
    let test = fold.test(data)?;
    let skipped = fold.test_users().len() - test.prefs.n_users();
    if skipped > 0 {
        log::warn!("{skipped} test users have no test items and are skipped");
    }
    let mut report = evaluate_dataset(predictor, &test, ks, method)?;
    report.skipped = skipped;
    report.seed = fold.seed;
    Ok(report)
}

pub fn evaluate_dataset(predictor: Predictor<'_>, test: &Dataset, ks: &[TruncationLevel], method: &str) -> Result<EvalReport> {
    let scores = predict_entries(predictor, test)?;
    let mut units = Vec::with_capacity(test.prefs.n_users());
    for u in 0..test.prefs.n_users() {
        let range = test.prefs.user_entries(u);
        let labels = test.prefs.user_scores(u);
        let ndcg = ks
            .iter()
            .map(|&k| ndcg_at_k(labels, &scores[range.clone()], k))
            .collect::<Result<_>>()?;
        units.push(UnitScore {
            user: test.user_ids[u],
            n_items: labels.len(),
            ndcg,
        });
    }
    Ok(EvalReport {
        method: method.to_string(),
        ks: ks.to_vec(),
        units,
        skipped: 0,
        seed: 0,
    })
}

/// Continuity-corrected McNemar test on win/loss counts, chi-square with
/// one degree of freedom.
pub fn mcnemar(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    let diff = (wins as f64 - losses as f64).abs() - 1.0;
    let stat = diff.max(0.0).powi(2) / n as f64;
    if stat == 0.0 {
        return 1.0;
    }
    let chi = ChiSquared::new(1.0).expect("one degree of freedom");
    chi.sf(stat).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    pub p_value: f64,
    pub mean_a: f64,
    pub mean_b: f64,
}

impl Comparison {
    /// `+` significant win, `-` significant loss, `=` otherwise (p < 0.05).
    pub fn marker(&self) -> char {
        if self.p_value >= 0.05 || self.wins == self.losses {
            '='
        } else if self.wins > self.losses {
            '+'
        } else {
            '-'
        }
    }
}

/// Per-unit wins of `a` over `b` at NDCG@k.
pub fn compare(a: &EvalReport, b: &EvalReport, k: TruncationLevel) -> Result<Comparison> {
    let (ca, cb) = (a.column(k)?, b.column(k)?);
    let lookup: HashMap<usize, f64> = b.units.iter().map(|u| (u.user, u.ndcg[cb])).collect();
    if lookup.len() != a.units.len() {
        return Err(Error::invalid("reports cover different users"));
    }
    let (mut wins, mut losses, mut ties) = (0, 0, 0);
    for u in &a.units {
        let other = *lookup
            .get(&u.user)
            .ok_or_else(|| Error::invalid(format!("user {} missing from report {}", u.user, b.method)))?;
        match u.ndcg[ca].partial_cmp(&other) {
            Some(std::cmp::Ordering::Greater) => wins += 1,
            Some(std::cmp::Ordering::Less) => losses += 1,
            _ => ties += 1,
        }
    }
    Ok(Comparison {
        wins,
        losses,
        ties,
        p_value: mcnemar(wins, losses),
        mean_a: a.mean_at(k).unwrap_or(f64::NAN),
        mean_b: b.mean_at(k).unwrap_or(f64::NAN),
    })
}

/// Text table with one row per method and p-value rows against each
/// reference method that precedes it.
pub fn summary_table(reports: &[EvalReport], references: &[&str]) -> Result<String> {
    let Some(first) = reports.first() else {
        return Ok(String::new());
    };
    let ks = first.ks.clone();
    let mut out = String::new();
    let _ = write!(out, "{:<14}", "method");
    for k in &ks {
        let _ = write!(out, "{:>16}", format!("NDCG@{k}"));
    }
    out.push('\n');
    for (pos, r) in reports.iter().enumerate() {
        let _ = write!(out, "{:<14}", r.method);
        for &k in &ks {
            let _ = write!(out, "{:>16.4}", r.mean_at(k).unwrap_or(f64::NAN));
        }
        out.push('\n');
        for reference in references {
            let Some(base) = reports[..pos].iter().find(|b| b.method == *reference) else {
                continue;
            };
            let _ = write!(out, "{:<14}", format!("  vs {}", base.method));
            for &k in &ks {
                let c = compare(r, base, k)?;
                let _ = write!(out, "{:>16}", format!("p={:.4}({})", c.p_value, c.marker()));
            }
            out.push('\n');
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{EntityFeatures, PreferenceMatrix};
    use crate::eval::split::split_user_cold_start;
    use crate::eval::UserMode;
    use proptest::prelude::*;

    fn k(v: usize) -> TruncationLevel {
        TruncationLevel::new(v).unwrap()
    }

    #[test]
    fn mcnemar_values() {
        assert!((mcnemar(10, 2) - 0.0433).abs() < 1e-3);
        assert_eq!(mcnemar(5, 5), 1.0);
        assert_eq!(mcnemar(0, 0), 1.0);
        assert_eq!(mcnemar(3, 2), 1.0);
    }

    proptest! {
        #[test]
        fn report_mean_is_mean_of_users(
            cells in prop::collection::vec((0u8..6, -5i32..5), 4..60),
        ) {
            let m = 4;
            let n = cells.len() / m;
            let entries: Vec<_> = (0..n * m).map(|e| (e / m, e % m, f64::from(cells[e].0))).collect();
            let prefs = PreferenceMatrix::new(n, m, entries).unwrap();
            let d = Dataset::new(
                prefs,
                EntityFeatures::from_rows(&(0..n).map(|u| vec![u as f64]).collect::<Vec<_>>()).unwrap(),
                EntityFeatures::from_rows(&(0..m).map(|j| vec![j as f64]).collect::<Vec<_>>()).unwrap(),
            )
            .unwrap();
            let scores = DenseMatrix::from_vec(n, m, (0..n * m).map(|e| f64::from(cells[e].1)).collect()).unwrap();
            let ks = [TruncationLevel::new(1).unwrap(), TruncationLevel::new(3).unwrap()];
            let r = evaluate_dataset(Predictor::Fixed(&scores), &d, &ks, "x").unwrap();
            for (c, mean) in r.means().iter().enumerate() {
                let direct = r.units.iter().map(|u| u.ndcg[c]).sum::<f64>() / r.units.len() as f64;
                prop_assert!((mean - direct).abs() <= 1e-12);
            }
        }

        #[test]
        fn mcnemar_symmetric(w in 0usize..500, l in 0usize..500) {
            let p = mcnemar(w, l);
            prop_assert_eq!(p, mcnemar(l, w));
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }

    fn toy() -> Dataset {
        let prefs = PreferenceMatrix::new(
            2,
            3,
            vec![(0, 0, 3.0), (0, 1, 2.0), (0, 2, 1.0), (1, 0, 3.0), (1, 1, 2.0), (1, 2, 1.0)],
        )
        .unwrap();
        Dataset::new(
            prefs,
            EntityFeatures::from_rows(&[vec![0.0], vec![1.0]]).unwrap(),
            EntityFeatures::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn fixed_score_reports() {
        let d = toy();
        let fold = &split_user_cold_start(&d.prefs, UserMode::Fraction(0.5), 0.0, 1).unwrap()[0];
        let perfect = DenseMatrix::from_rows(&[vec![3.0, 2.0, 1.0], vec![3.0, 2.0, 1.0]]).unwrap();
        let r = evaluate_ndcg(Predictor::Fixed(&perfect), &d, fold, &[k(1), k(3)], "p").unwrap();
        assert_eq!(r.means(), vec![1.0, 1.0]);
        let constant = DenseMatrix::zeros(2, 3);
        let r = evaluate_ndcg(Predictor::Fixed(&constant), &d, fold, &[k(3)], "c").unwrap();
        assert_eq!(r.means(), vec![1.0]);
        let reversed = DenseMatrix::from_rows(&[vec![0.1, 0.5, 0.9], vec![0.1, 0.5, 0.9]]).unwrap();
        let r = evaluate_ndcg(Predictor::Fixed(&reversed), &d, fold, &[k(3)], "r").unwrap();
        assert!((r.means()[0] - 0.680607).abs() < 1e-6);
    }

    #[test]
    fn compare_and_csv() {
        let d = toy();
        let fold = &split_user_cold_start(&d.prefs, UserMode::LeaveOneOut, 0.0, 1).unwrap();
        let perfect = DenseMatrix::from_rows(&[vec![3.0, 2.0, 1.0], vec![3.0, 2.0, 1.0]]).unwrap();
        let reversed = DenseMatrix::from_rows(&[vec![0.1, 0.5, 0.9], vec![0.1, 0.5, 0.9]]).unwrap();
        let eval = |s, name: &str| {
            let a = evaluate_ndcg(Predictor::Fixed(s), &d, &fold[0], &[k(1), k(3)], name).unwrap();
            let b = evaluate_ndcg(Predictor::Fixed(s), &d, &fold[1], &[k(1), k(3)], name).unwrap();
            a.merge(b).unwrap()
        };
        let a = eval(&perfect, "a");
        let b = eval(&reversed, "b");
        let c = compare(&a, &b, k(3)).unwrap();
        assert_eq!((c.wins, c.losses, c.ties), (2, 0, 0));
        assert_eq!(c.marker(), '=');
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let back = EvalReport::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.units, a.units);
        let table = summary_table(&[b.clone(), a.clone()], &["b"]).unwrap();
        assert!(table.contains("vs b"));
        assert!(table.contains("p=0.4795(=)") || table.contains("p=1.0000(=)"), "{table}");
    }
}
