//! Aggregated Monte Carlo results and their on-disk forms.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{Arm, ExperimentConfig};
use crate::error::{Error, Result};

pub const RESULTS_FILE: &str = "results.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const TABLE_FILE: &str = "table.txt";

/// Grid point of one arm. `gamma` is absent for the optimizer-based arms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowKey {
    pub arm: Arm,
    pub m: usize,
    pub gamma: Option<f64>,
    pub s: usize,
}

/// Outcome of one arm on one replication.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmOutcome {
    pub estimate: f64,
    /// `None` when the arm yields no interval.
    pub reject: Option<bool>,
    pub secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub arm: Arm,
    pub m: usize,
    pub gamma: Option<f64>,
    pub s: usize,
    /// Successful replications.
    pub replications: usize,
    pub failures: usize,
    pub mean: Option<f64>,
    /// Standard deviation across replications, divisor `R - 1`.
    pub sd: Option<f64>,
    pub rejection: Option<f64>,
    pub time_secs: Option<f64>,
}

impl ResultRow {
    pub fn key(&self) -> RowKey {
        RowKey {
            arm: self.arm,
            m: self.m,
            gamma: self.gamma,
            s: self.s,
        }
    }

    /// Aggregates the outcomes of one grid point.
    pub fn from_outcomes<'a, I>(key: RowKey, outcomes: I) -> Self
    where
        I: IntoIterator<Item = &'a std::result::Result<ArmOutcome, String>>,
    {
        let mut ok = Vec::new();
        let mut failures = 0;
        for o in outcomes {
            match o {
                Ok(v) => ok.push(v),
                Err(_) => failures += 1,
            }
        }
        let k = ok.len() as f64;
        let mean = (!ok.is_empty()).then(|| ok.iter().map(|o| o.estimate).sum::<f64>() / k);
        let sd = mean.filter(|_| ok.len() >= 2).map(|mu| {
            (ok.iter().map(|o| (o.estimate - mu).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
        });
        let decisions: Vec<bool> = ok.iter().filter_map(|o| o.reject).collect();
        let rejection = (!decisions.is_empty())
            .then(|| decisions.iter().filter(|&&r| r).count() as f64 / decisions.len() as f64);
        let time_secs = (!ok.is_empty()).then(|| ok.iter().map(|o| o.secs).sum::<f64>() / k);
        ResultRow {
            arm: key.arm,
            m: key.m,
            gamma: key.gamma,
            s: key.s,
            replications: ok.len(),
            failures,
            mean,
            sd,
            rejection,
            time_secs,
        }
    }

    /// Monte Carlo standard error of `sd`, `sd / sqrt(2 (R - 1))`.
    pub fn sd_standard_error(&self) -> Option<f64> {
        self.sd
            .filter(|_| self.replications >= 2)
            .map(|s| s / (2.0 * (self.replications as f64 - 1.0)).sqrt())
    }

    /// Monte Carlo standard error of `mean`, `sd / sqrt(R)`.
    pub fn mean_standard_error(&self) -> Option<f64> {
        self.sd.map(|s| s / (self.replications as f64).sqrt())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub model: String,
    pub coordinate: String,
    pub truth: f64,
    pub replications: usize,
    pub rows: Vec<ResultRow>,
}

/// CSV form of a row; keeps the arm as its label.
#[derive(Serialize, Deserialize)]
struct CsvRow {
    arm: String,
    m: usize,
    gamma: Option<f64>,
    s: usize,
    replications: usize,
    failures: usize,
    mean: Option<f64>,
    sd: Option<f64>,
    rejection: Option<f64>,
    time_secs: Option<f64>,
}

const CSV_HEADER: [&str; 10] = [
    "arm", "m", "gamma", "s", "replications", "failures", "mean", "sd", "rejection", "time_secs",
];

impl ResultTable {
    pub fn row(&self, arm: Arm, m: usize, gamma: Option<f64>, s: usize) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.arm == arm && r.m == m && r.gamma == gamma && r.s == s)
    }

    pub fn rows_for(&self, arm: Arm) -> impl Iterator<Item = &ResultRow> {
        self.rows.iter().filter(move |r| r.arm == arm)
    }

    /// Rows whose failure share exceeds `max_rate`.
    pub fn failing_rows(&self, max_rate: f64) -> Vec<&ResultRow> {
        self.rows
            .iter()
            .filter(|r| r.failures as f64 > max_rate * (r.failures + r.replications) as f64)
            .collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        if self.rows.is_empty() {
            w.write_record(CSV_HEADER)?;
        }
        for r in &self.rows {
            w.serialize(CsvRow {
                arm: r.arm.label().to_string(),
                m: r.m,
                gamma: r.gamma,
                s: r.s,
                replications: r.replications,
                failures: r.failures,
                mean: r.mean,
                sd: r.sd,
                rejection: r.rejection,
                time_secs: r.time_secs,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    /// Rows parsed from `results.csv`.
    pub fn read_csv_rows<R: std::io::Read>(input: R) -> Result<Vec<ResultRow>> {
        let mut reader = csv::Reader::from_reader(input);
        let headers = reader.headers()?.clone();
        if headers.iter().ne(CSV_HEADER) {
            return Err(Error::Parse(format!("unexpected results header {headers:?}")));
        }
        reader
            .deserialize::<CsvRow>()
            .map(|row| {
                let r = row?;
                Ok(ResultRow {
                    arm: Arm::parse(&r.arm)?,
                    m: r.m,
                    gamma: r.gamma,
                    s: r.s,
                    replications: r.replications,
                    failures: r.failures,
                    mean: r.mean,
                    sd: r.sd,
                    rejection: r.rejection,
                    time_secs: r.time_secs,
                })
            })
            .collect()
    }

    /// Fixed-width text table, one line per row.
    pub fn render(&self) -> String {
        fn cell(v: Option<f64>, digits: usize) -> String {
            v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
        }
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{}: {} (true value {}), R = {}",
            self.model, self.coordinate, self.truth, self.replications
        );
        let _ = writeln!(
            out,
            "{:<10} {:>6} {:>6} {:>4} {:>8} {:>8} {:>7} {:>9} {:>6}",
            "arm", "m", "gamma", "S", "mean", "sd", "reject", "time(s)", "fail"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<10} {:>6} {:>6} {:>4} {:>8} {:>8} {:>7} {:>9} {:>6}",
                r.arm.label(),
                r.m,
                cell(r.gamma, 2),
                r.s,
                cell(r.mean, 4),
                cell(r.sd, 4),
                cell(r.rejection, 3),
                cell(r.time_secs, 3),
                r.failures
            );
        }
        out
    }
}

/// Creates `dir` if needed and checks that files can be written into it.
pub fn prepare_output(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let probe = dir.join(format!(".rnr-write-check-{}", std::process::id()));
    fs::File::create(&probe)?;
    fs::remove_file(&probe)?;
    Ok(())
}

/// Writes `bytes` to a temporary sibling of `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = (|| -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

/// Writes `results.csv`, `config.json` and `table.txt` into `dir`.
pub fn emit(table: &ResultTable, config: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    prepare_output(dir)?;
    let mut csv = Vec::new();
    table.write_csv(&mut csv)?;
    let json = serde_json::to_vec_pretty(config)?;
    let paths = vec![dir.join(RESULTS_FILE), dir.join(CONFIG_FILE), dir.join(TABLE_FILE)];
    write_atomic(&paths[0], &csv)?;
    write_atomic(&paths[1], &json)?;
    write_atomic(&paths[2], table.render().as_bytes())?;
    Ok(paths)
}
