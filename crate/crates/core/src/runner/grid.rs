//! Cartesian hyperparameter grids scored on a validation hold-out.
//!
//! A grid file lists one axis per line as `key = v1, v2, ...`; keys are the
//! run-config keys. Points enumerate the product with the last axis varying
//! fastest.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use rayon::prelude::*;

use super::config::{parse_pairs, RunConfig};
use super::run::{run_seeds, worker_pool, write_file, write_record, RunRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Grid {
    axes: Vec<(String, Vec<String>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub index: usize,
    pub overrides: Vec<(String, String)>,
}

impl GridPoint {
    pub fn label(&self) -> String {
        self.overrides
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";")
    }

    /// `base` with this point's values applied; `method` goes first so its
    /// defaults never clobber other overrides.
    pub fn apply(&self, base: &RunConfig) -> Result<RunConfig> {
        let mut cfg = base.clone();
        let (method, rest): (Vec<_>, Vec<_>) = self.overrides.iter().partition(|(k, _)| k == "method");
        for (k, v) in method.into_iter().chain(rest) {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl Grid {
    pub fn new(axes: Vec<(String, Vec<String>)>) -> Result<Self> {
        if axes.is_empty() || axes.iter().any(|(_, v)| v.is_empty()) {
            return Err(Error::Config("grid must have at least one value on every axis".into()));
        }
        Ok(Self { axes })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let axes = parse_pairs(text)?
            .into_iter()
            .map(|(k, v)| {
                let values = v
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect();
                (k, values)
            })
            .collect();
        Self::new(axes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn points(&self) -> Vec<GridPoint> {
        let total: usize = self.axes.iter().map(|(_, v)| v.len()).product();
        (0..total)
            .map(|index| {
                let mut rem = index;
                let mut overrides = vec![(String::new(), String::new()); self.axes.len()];
                for (slot, (k, vals)) in overrides.iter_mut().zip(&self.axes).rev() {
                    *slot = (k.clone(), vals[rem % vals.len()].clone());
                    rem /= vals.len();
                }
                GridPoint { index, overrides }
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub best: RunConfig,
    pub best_index: usize,
    /// Every point with its record, or `None` when its run diverged.
    pub points: Vec<(GridPoint, Option<RunRecord>)>,
}

/// Index of the best `(accuracy, forgetting, config_text)` triple: highest
/// accuracy, then lowest forgetting, then lexicographically smallest config.
pub fn select_best(scores: &[(f64, f64, String)]) -> Option<usize> {
    (0..scores.len()).min_by(|&a, &b| {
        let (sa, sb) = (&scores[a], &scores[b]);
        sb.0.partial_cmp(&sa.0)
            .unwrap_or(Ordering::Equal)
            .then(sa.1.partial_cmp(&sb.1).unwrap_or(Ordering::Equal))
            .then_with(|| sa.2.cmp(&sb.2))
    })
}

/// Runs every grid point with the validation hold-out on and returns the
/// configuration with the best mean validation A_f. Per-point records go to
/// `base.out/point_NNN`, the ranking to `grid.csv` and the winner to `best.cfg`.
pub fn grid_search(base: &RunConfig, grid: &Grid) -> Result<GridOutcome> {
    let points = grid.points();
    let configs: Vec<RunConfig> = points
        .iter()
        .map(|p| {
            let mut cfg = p.apply(base)?;
            cfg.validation = true;
            cfg.out = base.out.join(format!("point_{:03}", p.index));
            Ok(cfg)
        })
        .collect::<Result<_>>()?;
    // A diverged point is a result, not a reason to discard the whole search.
    let records: Vec<Option<RunRecord>> = worker_pool()?.install(|| {
        configs
            .par_iter()
            .map(|cfg| match run_seeds(cfg) {
                Ok(rec) => Ok(Some(rec)),
                Err(Error::NonFinite(msg)) => {
                    warn!("grid point {} diverged: {msg}", cfg.out.display());
                    Ok(None)
                }
                Err(e) => Err(e),
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut table = String::from("point,overrides,config_hash,val_accuracy_mean,val_accuracy_std,forgetting_mean\n");
    let mut scores = Vec::with_capacity(records.len());
    let mut finished = Vec::with_capacity(records.len());
    for ((p, cfg), rec) in points.iter().zip(&configs).zip(&records) {
        let Some(rec) = rec else {
            let _ = writeln!(table, "{},{},{},diverged,,", p.index, p.label(), cfg.hash());
            continue;
        };
        write_record(cfg, rec)?;
        let (a, a_sd) = rec.accuracy_stats();
        let (f, _) = rec.forgetting_stats();
        let _ = writeln!(
            table,
            "{},{},{},{a:?},{a_sd:?},{f:?}",
            p.index,
            p.label(),
            rec.config_hash
        );
        scores.push((a, f, cfg_key(cfg)));
        finished.push(p.index);
    }
    write_file(&base.out.join("grid.csv"), table.as_bytes())?;
    let best_index = select_best(&scores)
        .map(|i| finished[i])
        .ok_or_else(|| Error::NonFinite("every grid point diverged".into()))?;
    let mut best = configs[best_index].clone();
    best.validation = base.validation;
    best.out = base.out.clone();
    write_file(&base.out.join("best.cfg"), best.to_text().as_bytes())?;
    Ok(GridOutcome {
        best,
        best_index,
        points: points.into_iter().zip(records).collect(),
    })
}

/// Canonical text without the output directory, used for tie-breaking.
fn cfg_key(cfg: &RunConfig) -> String {
    cfg.to_text()
        .lines()
        .filter(|l| !l.starts_with("out "))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_enumerate_product_last_axis_fastest() {
        let g = Grid::parse("lr = 0.1, 0.01\nmu = 1,2,3\n").unwrap();
        let pts = g.points();
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[0].label(), "lr=0.1;mu=1");
        assert_eq!(pts[1].label(), "lr=0.1;mu=2");
        assert_eq!(pts[5].label(), "lr=0.01;mu=3");
    }

    #[test]
    fn empty_grid_is_rejected() {
        assert!(Grid::parse("").is_err());
        assert!(Grid::parse("lr = \n").is_err());
    }

    #[test]
    fn selection_prefers_accuracy_then_forgetting_then_order() {
        let s = |a: f64, f: f64, k: &str| (a, f, k.to_string());
        assert_eq!(select_best(&[s(0.5, 0.1, "b"), s(0.6, 0.9, "c")]), Some(1));
        assert_eq!(select_best(&[s(0.6, 0.2, "a"), s(0.6, 0.1, "c")]), Some(1));
        assert_eq!(select_best(&[s(0.6, 0.1, "b"), s(0.6, 0.1, "a")]), Some(1));
        assert_eq!(select_best(&[]), None);
    }

    #[test]
    fn method_override_applies_first() {
        let base = RunConfig::default();
        let p = GridPoint {
            index: 0,
            overrides: vec![("lr".into(), "0.2".into()), ("method".into(), "ccic".into())],
        };
        let cfg = p.apply(&base).unwrap();
        assert_eq!(cfg.learner.lr, 0.2);
        assert_eq!(cfg.learner.method, crate::learners::Method::Ccic);
    }
}
