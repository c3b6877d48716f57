//! Dataset and pool CSV formats, and JSON emission.

use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::core_types::{Arm, RctDataset, RctRecord, TransitionModel};
use crate::error::{Error, Result};
use crate::simulators::CountTable;

/// Row-sum tolerance for ingested transition probabilities.
pub const INGEST_ROW_SUM_TOL: f64 = 1e-9;

const FIXED: [&str; 4] = ["agent_id", "arm", "index", "treat_week"];

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.kind() {
        csv::ErrorKind::Io(_) => Error::Io(e.to_string()),
        _ => Error::Parse { line, msg: e.to_string() },
    }
}

/// Header for `m` covariates and `horizon` reward columns.
pub fn dataset_header(m: usize, horizon: usize) -> Vec<String> {
    FIXED
        .iter()
        .map(|s| s.to_string())
        .chain((0..m).map(|i| format!("covariate_{i}")))
        .chain((0..horizon).map(|t| format!("reward_t{t}")))
        .collect()
}

/// Writes the dataset, policy arm first, each arm by agent id. Floats use the
/// shortest representation that parses back to the same value.
pub fn write_dataset<W: Write>(data: &RctDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(dataset_header(data.covariate_dim(), data.horizon())).map_err(csv_err)?;
    for recs in [data.policy_arm(), data.control_arm()] {
        let mut recs: Vec<&RctRecord> = recs.iter().collect();
        recs.sort_by_key(|r| r.agent_id);
        for r in recs {
            let mut row =
                vec![r.agent_id.to_string(), r.arm.as_str().to_string(), r.index.to_string(), r.treat_week.to_string()];
            row.extend(r.covariates.iter().map(f64::to_string));
            row.extend(r.reward_path.iter().map(f64::to_string));
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset_file(data: &RctDataset, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    write_dataset(data, std::io::BufWriter::new(f))
}

fn parse_field<T: std::str::FromStr>(s: &str, line: usize, col: &str) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Parse { line, msg: format!("column {col}: cannot parse `{s}`") })
}

/// Reads a dataset. Rounds are the largest treatment week, and `alpha` is
/// `round-1 treatments / n` unless given.
pub fn read_dataset<R: Read>(input: R, alpha: Option<f64>) -> Result<RctDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(|s| s.trim().to_string()).collect();
    if header.len() < 5 || header[..4] != FIXED {
        return Err(Error::Parse { line: 1, msg: format!("header must start with {}", FIXED.join(",")) });
    }
    let m = header[4..].iter().take_while(|h| h.starts_with("covariate_")).count();
    let horizon = header.len() - 4 - m;
    if header != dataset_header(m, horizon) {
        return Err(Error::Parse {
            line: 1,
            msg: "expected covariate_0..covariate_{m-1} then reward_t0..reward_t{H-1}".into(),
        });
    }
    if horizon == 0 {
        return Err(Error::Parse { line: 1, msg: "no reward columns".into() });
    }
    let mut policy = Vec::new();
    let mut control = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let arm = match rec[1].trim() {
            "policy" => Arm::Policy,
            "control" => Arm::Control,
            other => return Err(Error::Parse { line, msg: format!("column arm: unknown arm `{other}`") }),
        };
        let floats = |range: std::ops::Range<usize>| -> Result<Vec<f64>> {
            range.map(|c| parse_field(&rec[c], line, &header[c])).collect()
        };
        let r = RctRecord {
            agent_id: parse_field(&rec[0], line, "agent_id")?,
            arm,
            index: parse_field(&rec[2], line, "index")?,
            treat_week: parse_field(&rec[3], line, "treat_week")?,
            covariates: floats(4..4 + m)?,
            reward_path: floats(4 + m..header.len())?,
        };
        match arm {
            Arm::Policy => policy.push(r),
            Arm::Control => control.push(r),
        }
    }
    let n = policy.len();
    let rounds = policy.iter().map(|r| r.treat_week as usize).max().unwrap_or(0);
    if rounds == 0 {
        return Err(Error::invariant("policy arm treats someone", "no policy agent has treat_week > 0"));
    }
    let alpha = match alpha {
        Some(a) => a,
        None => policy.iter().filter(|r| r.treat_week == 1).count() as f64 / n as f64,
    };
    RctDataset::new(policy, control, alpha, horizon, rounds, 0)
}

pub fn read_dataset_file(path: &Path, alpha: Option<f64>) -> Result<RctDataset> {
    let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_dataset(std::io::BufReader::new(f), alpha)
}

const TRANSITION_COLUMNS: [&str; 8] = ["t0_00", "t0_01", "t0_10", "t0_11", "t1_00", "t1_01", "t1_10", "t1_11"];

fn count_columns() -> Vec<String> {
    let mut cols = Vec::with_capacity(8);
    for s in 0..2 {
        for a in 0..2 {
            for t in 0..2 {
                cols.push(format!("n_{s}{a}{t}"));
            }
        }
    }
    cols
}

fn read_numeric_rows<R: Read>(input: R, columns: &[String]) -> Result<Vec<(usize, [f64; 8])>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(|s| s.trim().to_string()).collect();
    let pos: Vec<usize> = columns
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| h == c)
                .ok_or_else(|| Error::Parse { line: 1, msg: format!("missing column {c}") })
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let mut v = [0.0; 8];
        for (k, &p) in pos.iter().enumerate() {
            v[k] = parse_field(&rec[p], line, &columns[k])?;
        }
        rows.push((line, v));
    }
    Ok(rows)
}

/// Transition pool with columns `t{a}_{s}{s'}`. Each row must satisfy the
/// transition-model invariants to within [`INGEST_ROW_SUM_TOL`].
pub fn ingest_transitions<R: Read>(input: R) -> Result<Vec<TransitionModel>> {
    let cols: Vec<String> = TRANSITION_COLUMNS.iter().map(|s| s.to_string()).collect();
    read_numeric_rows(input, &cols)?
        .into_iter()
        .enumerate()
        .map(|(i, (line, v))| {
            TransitionModel::from_flat(v, INGEST_ROW_SUM_TOL).map_err(|e| match e {
                Error::Invariant { name, detail } => {
                    Error::Invariant { name, detail: format!("row {} (line {line}): {detail}", i + 1) }
                }
                other => other,
            })
        })
        .collect()
}

pub fn ingest_transitions_csv(path: &Path) -> Result<Vec<TransitionModel>> {
    let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    ingest_transitions(std::io::BufReader::new(f))
}

/// Count tables with columns `n_{s}{a}{s'}`.
pub fn ingest_count_tables<R: Read>(input: R) -> Result<Vec<CountTable>> {
    read_numeric_rows(input, &count_columns())?
        .into_iter()
        .enumerate()
        .map(|(i, (line, v))| {
            if v.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
                return Err(Error::invariant("nonnegative counts", format!("row {} (line {line}): {v:?}", i + 1)));
            }
            let mut counts = [[[0.0; 2]; 2]; 2];
            for (k, c) in v.iter().enumerate() {
                counts[k >> 2][(k >> 1) & 1][k & 1] = *c;
            }
            Ok(CountTable { counts })
        })
        .collect()
}

pub fn ingest_count_tables_csv(path: &Path) -> Result<Vec<CountTable>> {
    let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    ingest_count_tables(std::io::BufReader::new(f))
}

/// Writes a transition pool with 12 decimals.
pub fn write_transitions<W: Write>(pool: &[TransitionModel], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRANSITION_COLUMNS).map_err(csv_err)?;
    for t in pool {
        w.write_record(t.flatten().iter().map(|p| format!("{p:.12}"))).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn round_value(v: Value, digits: Option<usize>) -> Value {
    match v {
        Value::Number(num) if !num.is_i64() && !num.is_u64() => match (num.as_f64(), digits) {
            (Some(x), Some(d)) if x.is_finite() => {
                let r: f64 = format!("{x:.*e}", d - 1).parse().unwrap_or(x);
                serde_json::Number::from_f64(r).map(Value::Number).unwrap_or(Value::Null)
            }
            _ => Value::Number(num),
        },
        Value::Array(a) => Value::Array(a.into_iter().map(|x| round_value(x, digits)).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, x)| (k, round_value(x, digits))).collect()),
        other => other,
    }
}

/// Compact JSON with floats rounded to `digits` significant digits, or
/// unrounded when `digits` is `None`.
pub fn to_json<T: Serialize>(value: &T, digits: Option<usize>) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| Error::Config(format!("cannot serialise: {e}")))?;
    serde_json::to_string(&round_value(v, digits)).map_err(|e| Error::Config(format!("cannot serialise: {e}")))
}
