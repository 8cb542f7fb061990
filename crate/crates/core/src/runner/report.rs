//! Method × buffer by label-rate comparison tables built from `record.csv` files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::run::{mean_std, write_file};
use crate::error::{Error, Result};
use crate::learners::Method;

/// One `record.csv` row.
#[derive(Debug, Clone, PartialEq)]
struct RecordRow {
    config_hash: String,
    dataset: String,
    tasks: usize,
    method: Method,
    buffer_size: usize,
    labeled_rate: f64,
    final_accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub mean: f64,
    pub std: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub dataset: String,
    pub tasks: usize,
    pub rates: Vec<f64>,
    pub rows: Vec<(Method, usize, Vec<Option<Cell>>)>,
}

fn find_records(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            find_records(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == "record.csv") {
            out.push(path);
        }
    }
    Ok(())
}

fn parse_record(path: &Path, text: &str) -> Result<Vec<RecordRow>> {
    let bad = |line: usize, what: &str| Error::Parse(format!("{}:{}: {what}", path.display(), line + 1));
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(bad(n, "expected 10 fields"));
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad(n, "bad number"));
        rows.push(RecordRow {
            config_hash: f[0].to_string(),
            dataset: f[1].to_string(),
            tasks: f[2].parse().map_err(|_| bad(n, "bad task count"))?,
            method: f[3].parse()?,
            buffer_size: f[4].parse().map_err(|_| bad(n, "bad buffer size"))?,
            labeled_rate: num(5)?,
            final_accuracy: num(7)?,
        });
    }
    Ok(rows)
}

impl ReportTable {
    /// Builds the table from every `record.csv` below `dir`.
    pub fn collect(dir: &Path) -> Result<Self> {
        let mut paths = Vec::new();
        find_records(dir, &mut paths)?;
        let mut rows = Vec::new();
        for p in &paths {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            rows.extend(parse_record(p, &text)?);
        }
        Self::from_rows(rows)
    }

    fn from_rows(rows: Vec<RecordRow>) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::Config("no records found".into()))?
            .clone();
        if let Some(r) = rows
            .iter()
            .find(|r| r.dataset != first.dataset || r.tasks != first.tasks)
        {
            return Err(Error::Config(format!(
                "records mix datasets: {} ({} tasks) vs {} ({} tasks)",
                first.dataset, first.tasks, r.dataset, r.tasks
            )));
        }
        // Cell key: (method rank, buffer, rate bits) → (config hash, accuracies).
        let rank = |m: Method| Method::ALL.iter().position(|&x| x == m).unwrap_or(usize::MAX);
        let mut cells: BTreeMap<(usize, usize, u64), (String, Vec<f64>)> = BTreeMap::new();
        for r in &rows {
            let key = (rank(r.method), r.buffer_size, r.labeled_rate.to_bits());
            let entry = cells.entry(key).or_insert_with(|| (r.config_hash.clone(), Vec::new()));
            if entry.0 != r.config_hash {
                return Err(Error::Config(format!(
                    "configs {} and {} both claim {} m={} p_s={}",
                    entry.0, r.config_hash, r.method, r.buffer_size, r.labeled_rate
                )));
            }
            entry.1.push(r.final_accuracy);
        }
        let mut rates: Vec<f64> = rows.iter().map(|r| r.labeled_rate).collect();
        rates.sort_by(f64::total_cmp);
        rates.dedup();
        let mut table_rows: Vec<(Method, usize, Vec<Option<Cell>>)> = Vec::new();
        for (&(mr, buffer, bits), (_, accs)) in &cells {
            let method = Method::ALL[mr];
            if table_rows.last().is_none_or(|(m, b, _)| (*m, *b) != (method, buffer)) {
                table_rows.push((method, buffer, vec![None; rates.len()]));
            }
            let col = rates
                .iter()
                .position(|r| r.to_bits() == bits)
                .expect("rate collected above");
            let (mean, std) = mean_std(accs);
            table_rows.last_mut().expect("row pushed above").2[col] = Some(Cell {
                mean,
                std,
                seeds: accs.len(),
            });
        }
        Ok(Self {
            dataset: first.dataset,
            tasks: first.tasks,
            rates,
            rows: table_rows,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,buffer_size");
        for r in &self.rates {
            let _ = write!(s, ",mean@{r},std@{r}");
        }
        s.push('\n');
        for (m, b, cells) in &self.rows {
            let _ = write!(s, "{m},{b}");
            for c in cells {
                match c {
                    Some(c) => {
                        let _ = write!(s, ",{:?},{:?}", c.mean, c.std);
                    }
                    None => s.push_str(",,"),
                }
            }
            s.push('\n');
        }
        s
    }

    /// Fixed-width rendering with percentages.
    pub fn to_text(&self) -> String {
        let mut header = vec!["method".to_string(), "buffer".to_string()];
        header.extend(self.rates.iter().map(|r| format!("p_s={}%", r * 100.0)));
        let mut lines = vec![header];
        for (m, b, cells) in &self.rows {
            let mut line = vec![m.to_string(), b.to_string()];
            line.extend(cells.iter().map(|c| match c {
                Some(c) => format!("{:.2} ± {:.2}", 100.0 * c.mean, 100.0 * c.std),
                None => "-".to_string(),
            }));
            lines.push(line);
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|i| lines.iter().map(|l| l[i].chars().count()).max().unwrap_or(0))
            .collect();
        let mut s = format!("{} — {} tasks, final accuracy (%)\n", self.dataset, self.tasks);
        for l in &lines {
            let cols: Vec<String> = l
                .iter()
                .zip(&widths)
                .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                .collect();
            s.push_str(cols.join("  ").trim_end());
            s.push('\n');
        }
        s
    }
}

/// Collects records under `dir`, writes `report.csv` and `report.txt` there.
pub fn report(dir: &Path) -> Result<ReportTable> {
    let table = ReportTable::collect(dir)?;
    write_file(&dir.join("report.csv"), table.to_csv().as_bytes())?;
    write_file(&dir.join("report.txt"), table.to_text().as_bytes())?;
    Ok(table)
}
