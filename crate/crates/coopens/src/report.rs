//! Evaluation reports as `key=value` text, and the strategy x K table that
//! joins them.
//!
//! Report keys: `mean_accuracy`, `half_ci_95`, `n_episodes`, `n_way`,
//! `k_shot`, `mode`, `seed`, `checkpoint_hash` (16 hex digits), plus
//! `strategy`, `n_members` and the per-episode `accuracies`. Floats use the
//! shortest representation that reads back to the same value.

use std::fs;
use std::path::Path;

use coopens_core::episodic::{AggregateMode, EvalReport};

use crate::error::{Error, Result};
use crate::kv::{self, Entries};

pub const EXTENSION: &str = "report";

/// An [`EvalReport`] plus the run labels the table is keyed on.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportFile {
    pub report: EvalReport,
    pub strategy: String,
    pub n_members: usize,
}

impl ReportFile {
    pub fn to_text(&self) -> String {
        let r = &self.report;
        let mut out = String::from("# episodic evaluation report\n");
        kv::line(&mut out, "mean_accuracy", r.mean);
        kv::line(&mut out, "half_ci_95", r.half_ci);
        kv::line(&mut out, "n_episodes", r.n_episodes());
        kv::line(&mut out, "n_way", r.n_way);
        kv::line(&mut out, "k_shot", r.k_shot);
        kv::line(&mut out, "mode", r.mode);
        kv::line(&mut out, "seed", r.seed);
        kv::line(&mut out, "checkpoint_hash", format!("{:016x}", r.fingerprint));
        kv::line(&mut out, "strategy", &self.strategy);
        kv::line(&mut out, "n_members", self.n_members);
        kv::line(&mut out, "accuracies", kv::join(&r.accuracies));
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let e = Entries::parse(text, path)?;
        let get = |k: &str| {
            e.get(k)
                .ok_or_else(|| Error::format(path, 0, format!("missing key `{k}`")))
        };
        fn num<T: std::str::FromStr>(e: &Entries, path: &Path, k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::format(path, e.offset(k), format!("bad value for `{k}`")))
        }
        let accuracies: Vec<f64> = kv::split_list(get("accuracies")?)
            .ok_or_else(|| Error::format(path, e.offset("accuracies"), "bad accuracy list"))?;
        let n: usize = num(&e, path, "n_episodes", get("n_episodes")?)?;
        if n != accuracies.len() {
            return Err(Error::format(
                path,
                e.offset("n_episodes"),
                format!("n_episodes={n} but {} accuracies", accuracies.len()),
            ));
        }
        let mode: AggregateMode = get("mode")?
            .parse()
            .map_err(|_| Error::format(path, e.offset("mode"), "unknown mode"))?;
        let fingerprint = u64::from_str_radix(get("checkpoint_hash")?, 16)
            .map_err(|_| Error::format(path, e.offset("checkpoint_hash"), "bad hash"))?;
        Ok(ReportFile {
            report: EvalReport {
                accuracies,
                mean: num(&e, path, "mean_accuracy", get("mean_accuracy")?)?,
                half_ci: num(&e, path, "half_ci_95", get("half_ci_95")?)?,
                n_way: num(&e, path, "n_way", get("n_way")?)?,
                k_shot: num(&e, path, "k_shot", get("k_shot")?)?,
                mode,
                seed: num(&e, path, "seed", get("seed")?)?,
                fingerprint,
            },
            strategy: get("strategy")?.to_string(),
            n_members: num(&e, path, "n_members", get("n_members")?)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

pub const TABLE_COLUMNS: [&str; 9] = [
    "strategy",
    "n_members",
    "n_way",
    "k_shot",
    "mode",
    "mean_accuracy",
    "half_ci_95",
    "n_episodes",
    "source",
];

/// Every `*.report` in `dir`, sorted by (strategy, K, way, shot, file name).
pub fn collect_reports(dir: &Path) -> Result<Vec<(String, ReportFile)>> {
    let mut found = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == EXTENSION) && path.is_file() {
            let name = path.file_name().expect("file").to_string_lossy().into_owned();
            found.push((name, ReportFile::load(&path)?));
        }
    }
    found.sort_by(|(na, a), (nb, b)| {
        (&a.strategy, a.n_members, a.report.n_way, a.report.k_shot, na).cmp(&(
            &b.strategy,
            b.n_members,
            b.report.n_way,
            b.report.k_shot,
            nb,
        ))
    });
    Ok(found)
}

/// Delimited table, one row per report; accuracy columns are copied verbatim.
pub fn table(rows: &[(String, ReportFile)], delimiter: char) -> String {
    let d = delimiter.to_string();
    let mut out = TABLE_COLUMNS.join(&d);
    out.push('\n');
    for (name, f) in rows {
        let r = &f.report;
        let cells = [
            f.strategy.clone(),
            f.n_members.to_string(),
            r.n_way.to_string(),
            r.k_shot.to_string(),
            r.mode.to_string(),
            r.mean.to_string(),
            r.half_ci.to_string(),
            r.n_episodes().to_string(),
            name.clone(),
        ];
        out.push_str(&cells.join(&d));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(strategy: &str, k: usize) -> ReportFile {
        let accuracies = vec![60.0, 73.33333333333333, 0.1 + 0.2];
        let (mean, half_ci) = coopens_core::episodic::mean_and_half_ci(&accuracies);
        ReportFile {
            report: EvalReport {
                accuracies,
                mean,
                half_ci,
                n_way: 5,
                k_shot: 1,
                mode: AggregateMode::Vote,
                seed: 9,
                fingerprint: 0xdead_beef_0000_0001,
            },
            strategy: strategy.into(),
            n_members: k,
        }
    }

    #[test]
    fn report_round_trip_is_exact() {
        let f = sample("robust", 3);
        let text = f.to_text();
        assert!(text.contains("checkpoint_hash=deadbeef00000001\n"));
        assert!(text.contains("mode=vote\n"));
        assert_eq!(ReportFile::parse(&text, Path::new("r")).unwrap(), f);
    }

    #[test]
    fn table_rows_follow_reports() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(
            table(&collect_reports(dir.path()).unwrap(), '\t'),
            format!("{}\n", TABLE_COLUMNS.join("\t"))
        );
        sample("robust", 5).save(&dir.path().join("b.report")).unwrap();
        sample("independent", 1).save(&dir.path().join("a.report")).unwrap();
        fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let rows = collect_reports(dir.path()).unwrap();
        let t = table(&rows, ',');
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("independent,1,5,1,vote,"));
        let mean = sample("x", 1).report.mean.to_string();
        assert_eq!(lines[2].split(',').nth(5), Some(mean.as_str()));
    }
}
