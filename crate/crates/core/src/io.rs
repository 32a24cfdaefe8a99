//! File formats: transfer CSV, utxo JSON lines, balance CSV, prior CSV in;
//! report CSV and distribution JSON lines out.
//!
//! Amounts on disk are decimals in display units; a per-file exponent
//! scales them to integer base units on the way in (satoshi-style), and
//! scaling that does not land on an integer is rejected rather than
//! silently rounded. All output is UTF-8 with LF line endings and floats
//! at 12 significant digits, so byte-identical inputs and settings give
//! byte-identical files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write as _};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::graph::{NodeId, OutPoint, TransferRecord, TxInput, TxOutput, UtxoTransaction};
use crate::metrics::{FungibilityReport, PriorPoolDistribution, ReportRow, SummaryStats};
use crate::solver::AbsorptionResult;

/// Largest relative error tolerated when scaling a decimal amount to an
/// integer number of base units.
pub const SCALE_TOLERANCE: f64 = 1e-9;

const REPORT_HEADER: [&str; 3] = ["node", "fungibility_bits", "expected_steps"];
const SUMMARY_PREFIX: &str = "summary:";
const SUMMARY_STATS: [&str; 4] = ["mean", "median", "variance", "max"];

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| Error::File {
        path: path.display().to_string(),
        source,
    })
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|source| Error::File {
        path: path.display().to_string(),
        source,
    })
}

fn csv_error(err: csv::Error) -> Error {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    let message = err.to_string();
    match err.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io(source),
        _ => Error::Csv { line, message },
    }
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

fn scale_f64(value: f64, exponent: i32) -> std::result::Result<u64, String> {
    if !value.is_finite() {
        return Err("not a finite number".into());
    }
    if value < 0.0 {
        return Err("negative amount".into());
    }
    let scaled = value * 10f64.powi(exponent);
    let rounded = scaled.round();
    if rounded > u64::MAX as f64 {
        return Err("exceeds 64-bit base units".into());
    }
    if scaled != 0.0 && (scaled - rounded).abs() / scaled > SCALE_TOLERANCE {
        return Err(format!(
            "not an integer number of base units at exponent {exponent}"
        ));
    }
    Ok(rounded as u64)
}

/// Parses a decimal amount and scales it by 10^exponent to base units.
pub fn scale_amount(text: &str, exponent: i32, line: u64) -> Result<u64> {
    let value: f64 = text.trim().parse().map_err(|_| Error::BadAmount {
        line,
        text: text.to_string(),
        reason: "not a number".into(),
    })?;
    scale_f64(value, exponent).map_err(|reason| Error::BadAmount {
        line,
        text: text.to_string(),
        reason,
    })
}

fn parse_flag(text: &str, line: u64) -> Result<bool> {
    match text.trim() {
        "true" | "1" => Ok(true),
        "false" | "0" | "" => Ok(false),
        other => Err(Error::Csv {
            line,
            message: format!("bad boolean {other:?}"),
        }),
    }
}

fn check_header(found: &csv::StringRecord, accepted: &[&[&str]]) -> Result<()> {
    if accepted.iter().any(|h| found.iter().eq(h.iter().copied())) {
        return Ok(());
    }
    Err(Error::BadHeader {
        expected: accepted
            .iter()
            .map(|h| h.join(","))
            .collect::<Vec<_>>()
            .join(" or "),
        found: found.iter().collect::<Vec<_>>().join(","),
    })
}

/// Reads `seq,src,dst,amount` rows, optionally with `shielded_src` and
/// `shielded_dst` columns. Rows out of `seq` order are accepted with a
/// warning and stable-sorted, preserving file order within equal seq.
pub fn parse_transfers(
    path: &Path,
    unit_exponent: i32,
) -> Result<(Vec<TransferRecord>, Vec<String>)> {
    let mut reader = csv::Reader::from_reader(open(path)?);
    let headers = reader.headers().map_err(csv_error)?.clone();
    check_header(
        &headers,
        &[
            &["seq", "src", "dst", "amount"],
            &[
                "seq",
                "src",
                "dst",
                "amount",
                "shielded_src",
                "shielded_dst",
            ],
        ],
    )?;

    let mut records = Vec::new();
    let mut warnings = Vec::new();
    let mut last_seq: Option<u64> = None;
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record_line(&record);
        let seq: u64 = record[0].trim().parse().map_err(|_| Error::Csv {
            line,
            message: format!("bad seq {:?}", &record[0]),
        })?;
        for field in [&record[1], &record[2]] {
            if field.trim().is_empty() {
                return Err(Error::Csv {
                    line,
                    message: "empty node id".into(),
                });
            }
        }
        if let Some(prev) = last_seq {
            if seq < prev {
                warnings.push(format!(
                    "line {line}: seq {seq} after {prev}; records stable-sorted by seq"
                ));
            }
        }
        last_seq = Some(last_seq.unwrap_or(0).max(seq));
        let (shielded_src, shielded_dst) = if record.len() == 6 {
            (parse_flag(&record[4], line)?, parse_flag(&record[5], line)?)
        } else {
            (false, false)
        };
        records.push(TransferRecord {
            seq,
            src: NodeId::from(record[1].trim()),
            dst: NodeId::from(record[2].trim()),
            amount: scale_amount(&record[3], unit_exponent, line)?,
            shielded_src,
            shielded_dst,
        });
    }
    records.sort_by_key(|r| r.seq);
    Ok((records, warnings))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawUtxoInput {
    txid: String,
    vout: u32,
    /// Display-unit value, required only for window-boundary references.
    #[serde(default)]
    value: Option<f64>,
    /// Owner key of a boundary coin, when known.
    #[serde(default)]
    key: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawUtxoOutput {
    value: f64,
    #[serde(default)]
    key: Option<String>,
    #[serde(default)]
    shielded: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawUtxoTransaction {
    txid: String,
    #[serde(default)]
    coinbase: bool,
    #[serde(default)]
    inputs: Vec<RawUtxoInput>,
    outputs: Vec<RawUtxoOutput>,
}

/// Reads one transaction per JSON line, in file order.
pub fn parse_utxo(path: &Path, unit_exponent: i32) -> Result<Vec<UtxoTransaction>> {
    let reader = BufReader::new(open(path)?);
    let mut txs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawUtxoTransaction = serde_json::from_str(&line).map_err(|e| Error::Json {
            line: line_no,
            message: e.to_string(),
        })?;
        let scale = |value: f64| -> Result<u64> {
            scale_f64(value, unit_exponent).map_err(|reason| Error::BadAmount {
                line: line_no,
                text: format!("{value}"),
                reason,
            })
        };
        let mut inputs = Vec::with_capacity(raw.inputs.len());
        for input in raw.inputs {
            inputs.push(TxInput {
                prev: OutPoint {
                    txid: input.txid,
                    vout: input.vout,
                },
                value: input.value.map(scale).transpose()?,
                key: input.key,
            });
        }
        let mut outputs = Vec::with_capacity(raw.outputs.len());
        for output in raw.outputs {
            outputs.push(TxOutput {
                value: scale(output.value)?,
                key: output.key,
                shielded: output.shielded,
            });
        }
        txs.push(UtxoTransaction {
            txid: raw.txid,
            coinbase: raw.coinbase,
            inputs,
            outputs,
        });
    }
    Ok(txs)
}

/// Reads `node,balance` rows into per-node totals (duplicates add up).
pub fn parse_balances(path: &Path, unit_exponent: i32) -> Result<Vec<(NodeId, u64)>> {
    let mut reader = csv::Reader::from_reader(open(path)?);
    let headers = reader.headers().map_err(csv_error)?.clone();
    check_header(&headers, &[&["node", "balance"]])?;
    let mut totals: BTreeMap<NodeId, u64> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record_line(&record);
        let node = record[0].trim();
        if node.is_empty() {
            return Err(Error::Csv {
                line,
                message: "empty node id".into(),
            });
        }
        let amount = scale_amount(&record[1], unit_exponent, line)?;
        let slot = totals.entry(NodeId::from(node)).or_insert(0);
        *slot = slot.checked_add(amount).ok_or(Error::AmountOverflow {
            what: format!("balance of {node}"),
        })?;
    }
    Ok(totals.into_iter().collect())
}

/// Reads `value` rows and normalizes them into a prior distribution.
/// Scaling is pointless here (normalization cancels it), so values are
/// taken as written.
pub fn parse_prior(path: &Path) -> Result<PriorPoolDistribution> {
    let mut reader = csv::Reader::from_reader(open(path)?);
    let headers = reader.headers().map_err(csv_error)?.clone();
    check_header(&headers, &[&["value"]])?;
    let mut weights = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record_line(&record);
        let value: f64 = record[0].trim().parse().map_err(|_| Error::BadAmount {
            line,
            text: record[0].to_string(),
            reason: "not a number".into(),
        })?;
        weights.push(value);
    }
    PriorPoolDistribution::from_weights(&weights)
}

/// Formats a float with 12 significant digits in plain decimal notation,
/// trailing zeros trimmed. Round-tripping through `parse::<f64>` comes
/// back within 5e-12 relative.
pub fn format_sig(value: f64) -> String {
    if value == 0.0 {
        return "0".into();
    }
    if !value.is_finite() {
        return value.to_string();
    }
    let scientific = format!("{value:.11e}");
    let (mantissa, exp) = scientific
        .split_once('e')
        .expect("scientific notation has an exponent");
    let exp: i32 = exp.parse().expect("float exponent is an integer");
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    let mut out = String::new();
    if mantissa.starts_with('-') {
        out.push('-');
    }
    let point = exp + 1;
    if point <= 0 {
        out.push_str("0.");
        for _ in 0..-point {
            out.push('0');
        }
        out.push_str(digits.trim_end_matches('0'));
    } else if (point as usize) < digits.len() {
        out.push_str(&digits[..point as usize]);
        let fraction = digits[point as usize..].trim_end_matches('0');
        if !fraction.is_empty() {
            out.push('.');
            out.push_str(fraction);
        }
    } else {
        out.push_str(&digits);
        for _ in 0..(point as usize - digits.len()) {
            out.push('0');
        }
    }
    out
}

/// Writes `node,fungibility_bits,expected_steps` rows ascending by node,
/// then a `summary:` footer with mean, median, variance and max of both
/// columns.
pub fn write_report(report: &FungibilityReport, path: &Path) -> Result<()> {
    for row in report.rows() {
        if row.node.as_str().starts_with(SUMMARY_PREFIX) {
            return Err(Error::ReservedNodeId {
                id: row.node.to_string(),
                context: format!("report files use the {SUMMARY_PREFIX} prefix for the footer"),
            });
        }
    }
    let mut writer = csv::Writer::from_writer(create(path)?);
    writer.write_record(REPORT_HEADER).map_err(csv_error)?;
    for row in report.rows() {
        writer
            .write_record([
                row.node.as_str(),
                &format_sig(row.fungibility_bits),
                &format_sig(row.expected_steps),
            ])
            .map_err(csv_error)?;
    }
    let bits = report.fungibility_stats();
    let steps = report.steps_stats();
    for name in SUMMARY_STATS {
        let pick = |s: SummaryStats| match name {
            "mean" => s.mean,
            "median" => s.median,
            "variance" => s.variance,
            _ => s.max,
        };
        writer
            .write_record([
                &format!("{SUMMARY_PREFIX}{name}"),
                &format_sig(pick(bits)),
                &format_sig(pick(steps)),
            ])
            .map_err(csv_error)?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a report file back, recomputing the aggregates from the data
/// rows and insisting the stored footer agrees with them.
pub fn read_report(path: &Path) -> Result<FungibilityReport> {
    let mut reader = csv::Reader::from_reader(open(path)?);
    let headers = reader.headers().map_err(csv_error)?.clone();
    check_header(&headers, &[&REPORT_HEADER])?;

    let mut rows = Vec::new();
    let mut seen: BTreeSet<NodeId> = BTreeSet::new();
    let mut footer: Vec<(String, f64, f64, u64)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record_line(&record);
        let number = |text: &str| -> Result<f64> {
            text.trim().parse().map_err(|_| Error::BadReport {
                line,
                reason: format!("bad number {text:?}"),
            })
        };
        let bits = number(&record[1])?;
        let steps = number(&record[2])?;
        if let Some(stat) = record[0].strip_prefix(SUMMARY_PREFIX) {
            footer.push((stat.to_string(), bits, steps, line));
        } else {
            if !footer.is_empty() {
                return Err(Error::BadReport {
                    line,
                    reason: "data row after the summary footer".into(),
                });
            }
            let node = NodeId::from(record[0].trim());
            if !seen.insert(node.clone()) {
                return Err(Error::BadReport {
                    line,
                    reason: format!("duplicate node {node}"),
                });
            }
            rows.push(ReportRow {
                node,
                fungibility_bits: bits,
                expected_steps: steps,
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyReport);
    }
    let report = FungibilityReport::from_rows(rows)?;

    if footer.len() != SUMMARY_STATS.len()
        || footer.iter().map(|(n, ..)| n.as_str()).ne(SUMMARY_STATS)
    {
        return Err(Error::BadReport {
            line: footer.last().map(|f| f.3).unwrap_or(0),
            reason: "summary footer missing or out of order".into(),
        });
    }
    let bits = report.fungibility_stats();
    let steps = report.steps_stats();
    for (name, got_bits, got_steps, line) in footer {
        let pick = |s: SummaryStats| match name.as_str() {
            "mean" => s.mean,
            "median" => s.median,
            "variance" => s.variance,
            _ => s.max,
        };
        for (got, want) in [(got_bits, pick(bits)), (got_steps, pick(steps))] {
            if (got - want).abs() > 1e-9 + 1e-9 * want.abs() {
                return Err(Error::BadReport {
                    line,
                    reason: format!("summary {name} is {got}, rows give {want}"),
                });
            }
        }
    }
    Ok(report)
}

/// One line of the distribution sidecar.
#[derive(Clone, Debug, PartialEq)]
pub struct DistributionRow {
    pub node: NodeId,
    /// Nonzero absorption probabilities, ascending by absorber id.
    pub entries: Vec<(NodeId, f64)>,
    pub expected_steps: f64,
}

fn json_string(text: &str) -> String {
    serde_json::to_string(text).expect("strings always serialize")
}

/// Writes one JSON line per queried state with its sparse absorption
/// distribution (nonzero entries only, absorber ids ascending).
pub fn write_distributions(result: &AbsorptionResult, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(create(path)?);
    for (node, row) in result.rows() {
        let mut line = String::from("{\"node\":");
        line.push_str(&json_string(node.as_str()));
        line.push_str(",\"expected_steps\":");
        line.push_str(&format_sig(result.expected_steps(node)?));
        line.push_str(",\"distribution\":{");
        let mut first = true;
        for (id, p) in result.absorber_ids().iter().zip(row) {
            if *p > 0.0 {
                if !first {
                    line.push(',');
                }
                first = false;
                line.push_str(&json_string(id.as_str()));
                line.push(':');
                line.push_str(&format_sig(*p));
            }
        }
        line.push_str("}}\n");
        out.write_all(line.as_bytes())?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDistributionRow {
    node: String,
    expected_steps: f64,
    distribution: BTreeMap<String, f64>,
}

/// Reads a distribution sidecar back, rows in file order, entries within
/// each row ascending by absorber id.
pub fn read_distributions(path: &Path) -> Result<Vec<DistributionRow>> {
    let reader = BufReader::new(open(path)?);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawDistributionRow = serde_json::from_str(&line).map_err(|e| Error::Json {
            line: line_no,
            message: e.to_string(),
        })?;
        rows.push(DistributionRow {
            node: NodeId::from(raw.node),
            entries: raw
                .distribution
                .into_iter()
                .map(|(id, p)| (NodeId::from(id), p))
                .collect(),
            expected_steps: raw.expected_steps,
        });
    }
    Ok(rows)
}

/// What kind of data a file holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputFormat {
    TransfersCsv,
    UtxoJsonl,
    BalancesCsv,
    PriorCsv,
}

/// A file plus how to read it.
#[derive(Clone, Debug)]
pub struct InputManifest {
    pub format: InputFormat,
    pub unit_exponent: i32,
    pub path: PathBuf,
}

/// Output of `load`, one variant per format.
#[derive(Clone, Debug)]
pub enum ParsedInput {
    Transfers {
        records: Vec<TransferRecord>,
        warnings: Vec<String>,
    },
    Utxo(Vec<UtxoTransaction>),
    Balances(Vec<(NodeId, u64)>),
    Prior(PriorPoolDistribution),
}

pub fn load(manifest: &InputManifest) -> Result<ParsedInput> {
    match manifest.format {
        InputFormat::TransfersCsv => {
            let (records, warnings) = parse_transfers(&manifest.path, manifest.unit_exponent)?;
            Ok(ParsedInput::Transfers { records, warnings })
        }
        InputFormat::UtxoJsonl => Ok(ParsedInput::Utxo(parse_utxo(
            &manifest.path,
            manifest.unit_exponent,
        )?)),
        InputFormat::BalancesCsv => Ok(ParsedInput::Balances(parse_balances(
            &manifest.path,
            manifest.unit_exponent,
        )?)),
        InputFormat::PriorCsv => Ok(ParsedInput::Prior(parse_prior(&manifest.path)?)),
    }
}
