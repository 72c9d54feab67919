//! `aggregate`: summarize completed runs into one table.
//!
//! Runs are grouped by algorithm. Within a group the episode series are
//! truncated to the shortest run, averaged per episode index across runs, and
//! the averages are summed into a single score per algorithm. Runs inside a
//! group are processed in sorted-path order so the result is exactly
//! permutation-invariant over the argument order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use tsrl_core::error::Error;
use tsrl_core::Result;

use crate::metrics::read_metrics;
use crate::train::RunManifest;

/// One completed run directory's contribution.
#[derive(Clone, Debug)]
pub struct RunSeries {
    pub dir: PathBuf,
    pub algo: String,
    pub returns: Vec<f64>,
}

/// Summary line for one algorithm.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub algo: String,
    pub runs: usize,
    /// Episodes per run after truncating to the shortest.
    pub episodes: usize,
    /// Sum over episodes of the across-run average return.
    pub sum_of_avg_returns: f64,
}

/// Read a run directory written by `train`.
pub fn read_run(dir: &Path) -> Result<RunSeries> {
    let manifest = RunManifest::load(&dir.join("run.json"))?;
    let metrics = read_metrics(&dir.join("metrics.csv"))?;
    if metrics.rows.is_empty() {
        return Err(Error::Config(format!(
            "{}: metrics.csv has no episodes to aggregate",
            dir.display()
        )));
    }
    Ok(RunSeries {
        dir: dir.to_path_buf(),
        algo: manifest.config.algo.name().to_string(),
        returns: metrics.episode_returns(),
    })
}

/// Truncate each series to the shortest, then average per episode index.
/// Input order must already be canonical.
fn mean_series(series: &[&RunSeries]) -> (usize, Vec<f64>) {
    let min_len = series.iter().map(|s| s.returns.len()).min().unwrap_or(0);
    let mut means = vec![0.0f64; min_len];
    for s in series {
        for (i, mean) in means.iter_mut().enumerate() {
            *mean += s.returns[i];
        }
    }
    for mean in &mut means {
        *mean /= series.len() as f64;
    }
    (min_len, means)
}

pub fn aggregate_series(mut runs: Vec<RunSeries>) -> Result<Vec<AggregateRow>> {
    if runs.is_empty() {
        return Err(Error::Usage("aggregate: at least one run directory is required".to_string()));
    }
    runs.sort_by(|a, b| a.dir.cmp(&b.dir));
    let mut groups: BTreeMap<String, Vec<&RunSeries>> = BTreeMap::new();
    for run in &runs {
        groups.entry(run.algo.clone()).or_default().push(run);
    }
    let mut rows = Vec::with_capacity(groups.len());
    for (algo, series) in groups {
        let (episodes, means) = mean_series(&series);
        rows.push(AggregateRow {
            algo,
            runs: series.len(),
            episodes,
            sum_of_avg_returns: means.iter().sum(),
        });
    }
    Ok(rows)
}

pub fn aggregate_runs(dirs: &[PathBuf]) -> Result<Vec<AggregateRow>> {
    let runs = dirs.iter().map(|d| read_run(d)).collect::<Result<Vec<_>>>()?;
    aggregate_series(runs)
}

/// Render the summary table exactly as `cmd_aggregate` prints it.
pub fn render_table(rows: &[AggregateRow]) -> String {
    let mut out = String::from("algorithm     runs  episodes  sum_of_avg_returns\n");
    for row in rows {
        out.push_str(&format!(
            "{:<12} {:>5} {:>9}  {}\n",
            row.algo, row.runs, row.episodes, row.sum_of_avg_returns
        ));
    }
    out
}

pub fn cmd_aggregate(dirs: &[PathBuf]) -> Result<Vec<AggregateRow>> {
    let rows = aggregate_runs(dirs)?;
    print!("{}", render_table(&rows));
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(dir: &str, algo: &str, returns: &[f64]) -> RunSeries {
        RunSeries {
            dir: PathBuf::from(dir),
            algo: algo.to_string(),
            returns: returns.to_vec(),
        }
    }

    #[test]
    fn single_run_sums_its_episode_returns() {
        let rows = aggregate_series(vec![series("a", "tsrl", &[1.0, 2.0, 3.0])]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].algo, "tsrl");
        assert_eq!(rows[0].runs, 1);
        assert_eq!(rows[0].episodes, 3);
        assert_eq!(rows[0].sum_of_avg_returns, 6.0);
    }

    #[test]
    fn opposite_runs_average_to_the_shared_sum() {
        let rows = aggregate_series(vec![
            series("a", "tsrl", &[1.0, 2.0, 3.0]),
            series("b", "tsrl", &[3.0, 2.0, 1.0]),
        ])
        .unwrap();
        assert_eq!(rows[0].sum_of_avg_returns, 6.0);
        assert_eq!(rows[0].runs, 2);
    }

    #[test]
    fn unequal_lengths_truncate_to_the_shortest() {
        let rows = aggregate_series(vec![
            series("a", "tsrl", &[1.0, 1.0, 100.0, 100.0]),
            series("b", "tsrl", &[3.0, 3.0]),
        ])
        .unwrap();
        assert_eq!(rows[0].episodes, 2);
        assert_eq!(rows[0].sum_of_avg_returns, 4.0);
    }

    #[test]
    fn run_order_is_irrelevant() {
        let a = series("runs/a", "tsrl", &[0.1, 0.7, 0.3]);
        let b = series("runs/b", "tsrl", &[0.9, 0.2, 0.4]);
        let c = series("runs/c", "flare", &[0.5, 0.5]);
        let forward = aggregate_series(vec![a.clone(), b.clone(), c.clone()]).unwrap();
        let backward = aggregate_series(vec![c, b, a]).unwrap();
        assert_eq!(forward, backward);
        assert_eq!(forward[0].algo, "flare");
        assert_eq!(forward[1].algo, "tsrl");
    }

    #[test]
    fn groups_stay_separate_per_algorithm() {
        let rows = aggregate_series(vec![
            series("a", "tsrl", &[1.0, 1.0]),
            series("b", "flare", &[0.5]),
            series("c", "tsrl", &[0.0, 0.0]),
        ])
        .unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0], AggregateRow { algo: "flare".into(), runs: 1, episodes: 1, sum_of_avg_returns: 0.5 });
        assert_eq!(rows[1], AggregateRow { algo: "tsrl".into(), runs: 2, episodes: 2, sum_of_avg_returns: 1.0 });
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(aggregate_series(Vec::new()).is_err());
        assert!(aggregate_runs(&[]).is_err());
    }

    #[test]
    fn table_lists_one_line_per_algorithm() {
        let rows = aggregate_series(vec![
            series("a", "tsrl", &[1.0, 2.0, 3.0]),
            series("b", "flare", &[0.25]),
        ])
        .unwrap();
        let table = render_table(&rows);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].contains("algorithm"));
        assert!(lines[1].starts_with("flare"));
        assert!(lines[2].starts_with("tsrl"));
        assert!(lines[2].contains('6'));
    }
}
