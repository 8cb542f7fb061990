//! Task accuracy matrix, final accuracy and forgetting.

use crate::error::{Error, Result};

/// Lower-triangular table where entry `(k, i)` is the test accuracy on the
/// classes of task `i` measured right after training on task `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsMatrix {
    rows: Vec<Option<Vec<f64>>>,
}

impl MetricsMatrix {
    pub fn new(num_tasks: usize) -> Self {
        Self {
            rows: vec![None; num_tasks],
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.rows.len()
    }

    /// Fills row `k` with the accuracies on tasks `0..=k`.
    pub fn record_eval(&mut self, k: usize, accuracies: &[f64]) -> Result<()> {
        let t = self.rows.len();
        let slot = self
            .rows
            .get_mut(k)
            .ok_or_else(|| Error::Protocol(format!("evaluation after task {k} but only {t} tasks")))?;
        if slot.is_some() {
            return Err(Error::Protocol(format!("row {k} already recorded")));
        }
        if accuracies.len() != k + 1 {
            return Err(Error::Protocol(format!(
                "row {k} needs {} accuracies, got {}",
                k + 1,
                accuracies.len()
            )));
        }
        if let Some(a) = accuracies.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::Usage(format!("accuracy {a} outside [0, 1]")));
        }
        *slot = Some(accuracies.to_vec());
        Ok(())
    }

    pub fn row(&self, k: usize) -> Option<&[f64]> {
        self.rows.get(k)?.as_deref()
    }

    pub fn get(&self, k: usize, i: usize) -> Option<f64> {
        self.row(k)?.get(i).copied()
    }

    pub fn is_complete(&self) -> bool {
        self.rows.iter().all(Option::is_some)
    }

    fn require_complete(&self) -> Result<&[f64]> {
        if self.rows.is_empty() || !self.is_complete() {
            return Err(Error::Usage("accuracy matrix is incomplete".into()));
        }
        Ok(self.rows.last().and_then(|r| r.as_deref()).expect("complete"))
    }

    /// Mean accuracy over all tasks after the final task.
    pub fn final_accuracy(&self) -> Result<f64> {
        let last = self.require_complete()?;
        Ok(last.iter().sum::<f64>() / last.len() as f64)
    }

    /// Mean gap between each task's peak and final accuracy, last task excluded.
    pub fn forgetting(&self) -> Result<f64> {
        let last = self.require_complete()?;
        let t = self.rows.len();
        if t < 2 {
            return Err(Error::Usage("forgetting needs at least two tasks".into()));
        }
        let total: f64 = (0..t - 1)
            .map(|i| {
                let peak = (i..t).filter_map(|k| self.get(k, i)).fold(f64::NEG_INFINITY, f64::max);
                peak - last[i]
            })
            .sum();
        Ok(total / (t - 1) as f64)
    }

    /// CSV with one row per evaluation point and a closing summary row.
    pub fn to_csv(&self) -> String {
        let t = self.rows.len();
        let mut s = String::from("after_task");
        for i in 0..t {
            s.push_str(&format!(",task_{i}"));
        }
        s.push_str(",final_accuracy,forgetting\n");
        for (k, row) in self.rows.iter().enumerate() {
            let Some(row) = row else { continue };
            s.push_str(&k.to_string());
            for i in 0..t {
                s.push(',');
                if let Some(a) = row.get(i) {
                    s.push_str(&format!("{a:?}"));
                }
            }
            s.push_str(",,\n");
        }
        s.push_str("summary");
        s.push_str(&",".repeat(t));
        let fmt = |r: Result<f64>| r.map(|v| format!("{v:?}")).unwrap_or_default();
        s.push_str(&format!(",{},{}\n", fmt(self.final_accuracy()), fmt(self.forgetting())));
        s
    }

    /// Rebuilds the matrix from [`MetricsMatrix::to_csv`] output; the summary
    /// row is ignored because it is derived.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty metrics csv".into()))?;
        let t = header.split(',').filter(|h| h.starts_with("task_")).count();
        let mut m = Self::new(t);
        for line in lines {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.first() == Some(&"summary") {
                break;
            }
            let k: usize = fields[0]
                .parse()
                .map_err(|_| Error::Parse(format!("bad row index {:?}", fields[0])))?;
            let acc = fields[1..=k + 1]
                .iter()
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| Error::Parse(format!("bad accuracy {v:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            m.record_eval(k, &acc)?;
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn matrix(rows: &[&[f64]]) -> MetricsMatrix {
        let mut m = MetricsMatrix::new(rows.len());
        for (k, r) in rows.iter().enumerate() {
            m.record_eval(k, r).unwrap();
        }
        m
    }

    #[test]
    fn first_row_has_one_entry() {
        let mut m = MetricsMatrix::new(3);
        m.record_eval(0, &[0.9]).unwrap();
        assert_eq!(m.row(0), Some(&[0.9][..]));
        assert!(m.record_eval(1, &[0.9]).is_err());
        assert!(matches!(m.record_eval(0, &[0.5]), Err(Error::Protocol(_))));
        assert!(m.final_accuracy().is_err());
    }

    #[test]
    fn final_accuracy_examples() {
        assert!((matrix(&[&[0.9], &[0.8, 0.6]]).final_accuracy().unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(matrix(&[&[1.0], &[1.0, 1.0]]).final_accuracy().unwrap(), 1.0);
        assert_eq!(matrix(&[&[0.42]]).final_accuracy().unwrap(), 0.42);
    }

    #[test]
    fn forgetting_examples() {
        let m = matrix(&[&[0.9], &[0.7, 0.8], &[0.5, 0.6, 0.9]]);
        assert!((m.forgetting().unwrap() - 0.3).abs() < 1e-12);
        let improving = matrix(&[&[0.2], &[0.4, 0.3], &[0.6, 0.5, 0.9]]);
        assert!(improving.forgetting().unwrap() <= 0.0);
        let constant = matrix(&[&[0.5], &[0.5, 0.5], &[0.5, 0.5, 0.5]]);
        assert_eq!(constant.forgetting().unwrap(), 0.0);
        assert!(matrix(&[&[0.5]]).forgetting().is_err());
    }

    #[test]
    fn csv_layout_and_reload() {
        let m = matrix(&[&[0.9], &[0.8, 0.6]]);
        let csv = m.to_csv();
        assert_eq!(
            csv,
            "after_task,task_0,task_1,final_accuracy,forgetting\n0,0.9,,,\n1,0.8,0.6,,\nsummary,,,0.7,0.09999999999999998\n"
        );
        assert_eq!(MetricsMatrix::from_csv(&csv).unwrap(), m);
    }

    fn lower_triangular() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (2usize..7).prop_flat_map(|t| {
            (0..t)
                .map(|k| prop::collection::vec(0.0f64..=1.0, k + 1))
                .collect::<Vec<_>>()
        })
    }

    /// Direct transcription of the definition, scanning every cell.
    fn brute_forgetting(rows: &[Vec<f64>]) -> f64 {
        let t = rows.len();
        let mut sum = 0.0;
        for i in 0..t - 1 {
            let mut peak = f64::MIN;
            for row in rows.iter() {
                if i < row.len() && row[i] > peak {
                    peak = row[i];
                }
            }
            sum += peak - rows[t - 1][i];
        }
        sum / (t as f64 - 1.0)
    }

    proptest! {
        #[test]
        fn forgetting_is_bounded_and_matches_scan(rows in lower_triangular()) {
            let mut m = MetricsMatrix::new(rows.len());
            for (k, r) in rows.iter().enumerate() {
                m.record_eval(k, r).unwrap();
            }
            let f = m.forgetting().unwrap();
            prop_assert!((-1.0..=1.0).contains(&f));
            prop_assert!((f - brute_forgetting(&rows)).abs() < 1e-12);
        }

        #[test]
        fn final_accuracy_ignores_task_order(rows in lower_triangular(), rot in 0usize..7) {
            let mut m = MetricsMatrix::new(rows.len());
            for (k, r) in rows.iter().enumerate() {
                m.record_eval(k, r).unwrap();
            }
            let mut last = rows.last().unwrap().clone();
            let n = last.len();
            last.rotate_left(rot % n);
            let mean = last.iter().sum::<f64>() / n as f64;
            prop_assert!((m.final_accuracy().unwrap() - mean).abs() < 1e-12);
        }
    }
}
