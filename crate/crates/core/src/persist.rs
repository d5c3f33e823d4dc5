//! On-disk formats: task files, training metrics and comparison tables.
//! Every file records the config hash and the seeds that produced it.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::environment::EditTask;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::search::ComparisonTable;
use crate::trainer::MetricsRow;

pub const TASK_FORMAT: &str = "hyperstep-tasks";
pub const TASK_VERSION: u32 = 1;

/// First line of a task file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskHeader {
    pub format: String,
    pub version: u32,
    pub scalar: String,
    pub config_hash: String,
    pub first_seed: u64,
    pub count: usize,
}

/// Writes a header line followed by one JSON task per line.
pub fn write_tasks<S: Scalar>(
    path: &Path,
    config_hash: &str,
    first_seed: u64,
    tasks: &[EditTask<S>],
) -> Result<()> {
    let header = TaskHeader {
        format: TASK_FORMAT.into(),
        version: TASK_VERSION,
        scalar: S::NAME.into(),
        config_hash: config_hash.into(),
        first_seed,
        count: tasks.len(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for t in tasks {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tasks<S: Scalar>(path: &Path) -> Result<(TaskHeader, Vec<EditTask<S>>)> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{}: empty task file", path.display())))??;
    let header: TaskHeader = serde_json::from_str(&first)
        .map_err(|e| Error::Data(format!("{}: bad task header: {e}", path.display())))?;
    if header.format != TASK_FORMAT || header.version != TASK_VERSION {
        return Err(Error::Data(format!(
            "{}: unsupported task file {} v{}",
            path.display(),
            header.format,
            header.version
        )));
    }
    if header.scalar != S::NAME {
        return Err(Error::Data(format!(
            "{}: tasks stored as {}, expected {}",
            path.display(),
            header.scalar,
            S::NAME
        )));
    }
    let mut tasks = Vec::with_capacity(header.count);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let task: EditTask<S> = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}: task record {i}: {e}", path.display())))?;
        task.validate()?;
        tasks.push(task);
    }
    if tasks.len() != header.count {
        return Err(Error::Data(format!(
            "{}: header announces {} tasks, found {}",
            path.display(),
            header.count,
            tasks.len()
        )));
    }
    Ok((header, tasks))
}

fn write_comment<W: Write>(w: &mut W, pairs: &[(&str, String)]) -> Result<()> {
    let body: Vec<String> = pairs.iter().map(|(k, v)| format!("{k}={v}")).collect();
    writeln!(w, "# {}", body.join(" "))?;
    Ok(())
}

/// Provenance written at the top of CSV outputs as a `#` comment line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    /// Extra `key=value` flags, e.g. whether advantages were standardized.
    pub flags: Vec<(String, String)>,
}

impl Provenance {
    pub fn new(config_hash: &str, seed: u64) -> Self {
        Self {
            config_hash: config_hash.into(),
            seed,
            flags: Vec::new(),
        }
    }

    pub fn flag(mut self, key: &str, value: impl ToString) -> Self {
        self.flags.push((key.into(), value.to_string()));
        self
    }

    fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        let mut pairs = vec![
            ("config_hash", self.config_hash.clone()),
            ("seed", self.seed.to_string()),
        ];
        pairs.extend(self.flags.iter().map(|(k, v)| (k.as_str(), v.clone())));
        write_comment(w, &pairs)
    }
}

pub fn write_metrics(path: &Path, prov: &Provenance, rows: &[MetricsRow]) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    prov.write(&mut file)?;
    let mut w = csv::Writer::from_writer(file);
    if rows.is_empty() {
        w.write_record([
            "episode",
            "reward_total",
            "r_edit",
            "r_noedit",
            "kl",
            "policy_loss",
            "value_loss",
            "mean_inversion_step",
        ])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<MetricsRow>, _>>()?;
    Ok(rows)
}

/// Writes the comparison as `<stem>.csv` and `<stem>.json`.
pub fn write_comparison(stem: &Path, prov: &Provenance, table: &ComparisonTable) -> Result<()> {
    let csv_path = stem.with_extension("csv");
    let mut file = BufWriter::new(File::create(&csv_path)?);
    prov.write(&mut file)?;
    let mut w = csv::Writer::from_writer(file);
    let mut head = vec!["task".to_string(), "default".into(), "default_nfe".into()];
    for k in &table.trials {
        head.push(format!("best_of_{k}"));
        head.push(format!("best_of_{k}_nfe"));
    }
    head.extend(
        [
            "policy",
            "policy_nfe",
            "optimal",
            "optimal_nfe",
            "normalized",
            "policy_inversion_step",
            "policy_above_grid",
        ]
        .map(String::from),
    );
    w.write_record(&head)?;
    for row in table.rows.iter().chain(std::iter::once(&table.aggregate)) {
        let mut rec = vec![row.task.clone(), row.default.reward.to_string(), row.default.nfe.to_string()];
        for c in &row.trials {
            rec.push(c.reward.to_string());
            rec.push(c.nfe.to_string());
        }
        rec.extend([
            row.policy.reward.to_string(),
            row.policy.nfe.to_string(),
            row.optimal.reward.to_string(),
            row.optimal.nfe.to_string(),
            row.normalized.to_string(),
            row.policy_inversion_step.to_string(),
            row.policy_above_grid.to_string(),
        ]);
        w.write_record(&rec)?;
    }
    w.flush()?;

    #[derive(Serialize)]
    struct Doc<'a> {
        config_hash: &'a str,
        seed: u64,
        table: &'a ComparisonTable,
    }
    let doc = Doc {
        config_hash: &prov.config_hash,
        seed: prov.seed,
        table,
    };
    fs::write(stem.with_extension("json"), serde_json::to_string_pretty(&doc)? + "\n")?;
    Ok(())
}

/// Writes any serializable report as pretty JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}
