//! CSV emission and parsing for sweep tables (RFC 4180 dialect).
//!
//! Fields containing a comma, a double quote or a line break are quoted
//! and embedded quotes doubled; nothing else is ever quoted, so the files
//! stay diffable.  Decimal separator is `.`, floats are written `%.6e`,
//! records end in `\n` (the reader also accepts `\r\n`).  Column count
//! depends on the stream count `m`:
//!
//! ```text
//! snr_db,strategy,p_out_exact,p_out_approx,p_out_mc,mc_stderr,m_a,
//! alpha_1..alpha_m,rate_1..rate_m,snr_gain_db,diversity_running,error
//! ```
//!
//! The round trip is exact: the sweep quantises every float through the
//! same `%.6e` format before the rows ever leave it, so
//! `parse_rows(&emit_rows(&rows, m))` returns rows that compare equal with
//! ordinary `f64` equality.

use vblast_core::Strategy;

use crate::config::ConfigError;
use crate::sweep::SweepRow;

const FIXED_HEAD: [&str; 7] =
    ["snr_db", "strategy", "p_out_exact", "p_out_approx", "p_out_mc", "mc_stderr", "m_a"];
const FIXED_TAIL: [&str; 3] = ["snr_gain_db", "diversity_running", "error"];

/// The one float format of the table.
pub fn float_field(x: f64) -> String {
    format!("{x:.6e}")
}

/// Collapse a float onto the exact value its CSV cell will reparse to.
pub fn quantize(x: f64) -> f64 {
    float_field(x).parse().expect("a formatted float always reparses")
}

fn escape(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') || field.contains('\r') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Header line for a table with `m` streams.
pub fn header(m: usize) -> String {
    let mut cols: Vec<String> = FIXED_HEAD.iter().map(|s| s.to_string()).collect();
    for i in 1..=m {
        cols.push(format!("alpha_{i}"));
    }
    for i in 1..=m {
        cols.push(format!("rate_{i}"));
    }
    cols.extend(FIXED_TAIL.iter().map(|s| s.to_string()));
    cols.join(",")
}

fn option_field(x: Option<f64>) -> String {
    x.map(float_field).unwrap_or_default()
}

/// Render rows to CSV text, header included.  Rows must carry either full
/// `m`-vectors or (failed rows) empty ones.
pub fn emit_rows(rows: &[SweepRow], m: usize) -> String {
    let mut out = String::new();
    out.push_str(&header(m));
    out.push('\n');
    for row in rows {
        assert!(
            (row.alphas.len() == m && row.rates.len() == m)
                || (row.alphas.is_empty() && row.rates.is_empty()),
            "row vectors must have {m} entries or none"
        );
        let mut fields: Vec<String> = vec![
            float_field(row.snr_db),
            row.strategy.to_string(),
            option_field(row.p_out_exact),
            option_field(row.p_out_approx),
            option_field(row.p_out_mc),
            option_field(row.mc_stderr),
            row.m_a.map(|v| v.to_string()).unwrap_or_default(),
        ];
        for i in 0..m {
            fields.push(row.alphas.get(i).map(|&a| float_field(a)).unwrap_or_default());
        }
        for i in 0..m {
            fields.push(row.rates.get(i).map(|&r| float_field(r)).unwrap_or_default());
        }
        fields.push(option_field(row.snr_gain_db));
        fields.push(option_field(row.diversity_running));
        fields.push(row.error.clone());
        let line: Vec<String> = fields.iter().map(|f| escape(f)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Split CSV text into records of unescaped fields.  Tracks the source
/// line each record starts on for error messages.
fn records(text: &str) -> Result<Vec<(usize, Vec<String>)>, ConfigError> {
    let mut out: Vec<(usize, Vec<String>)> = Vec::new();
    let mut fields: Vec<String> = Vec::new();
    let mut field = String::new();
    let mut line = 1usize;
    let mut record_line = 1usize;
    let mut in_quotes = false;
    let mut field_started = false;
    let mut chars = text.chars().peekable();

    while let Some(c) = chars.next() {
        if in_quotes {
            match c {
                '"' => {
                    if chars.peek() == Some(&'"') {
                        chars.next();
                        field.push('"');
                    } else {
                        in_quotes = false;
                    }
                }
                '\n' => {
                    field.push(c);
                    line += 1;
                }
                _ => field.push(c),
            }
            continue;
        }
        match c {
            '"' if field.is_empty() && !field_started => {
                in_quotes = true;
                field_started = true;
            }
            '"' => {
                return Err(ConfigError {
                    line: Some(line),
                    message: "stray quote inside an unquoted field".into(),
                })
            }
            ',' => {
                fields.push(std::mem::take(&mut field));
                field_started = false;
            }
            '\r' => {} // swallowed; \r\n and \n both end records at '\n'
            '\n' => {
                line += 1;
                if fields.is_empty() && field.is_empty() && !field_started {
                    record_line = line; // blank line, skip
                    continue;
                }
                fields.push(std::mem::take(&mut field));
                out.push((record_line, std::mem::take(&mut fields)));
                record_line = line;
                field_started = false;
            }
            _ => {
                field.push(c);
                field_started = true;
            }
        }
    }
    if in_quotes {
        return Err(ConfigError {
            line: Some(record_line),
            message: "unterminated quoted field".into(),
        });
    }
    if field_started || !field.is_empty() || !fields.is_empty() {
        fields.push(field);
        out.push((record_line, fields));
    }
    Ok(out)
}

fn parse_float(name: &str, cell: &str, line: usize) -> Result<Option<f64>, ConfigError> {
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse::<f64>().map(Some).map_err(|_| ConfigError {
        line: Some(line),
        message: format!("column '{name}': cannot parse '{cell}'"),
    })
}

fn parse_vector(
    name: &str,
    cells: &[String],
    line: usize,
) -> Result<Vec<f64>, ConfigError> {
    if cells.iter().all(|c| c.is_empty()) {
        return Ok(Vec::new());
    }
    if cells.iter().any(|c| c.is_empty()) {
        return Err(ConfigError {
            line: Some(line),
            message: format!("columns '{name}_*' must be all filled or all empty"),
        });
    }
    cells
        .iter()
        .enumerate()
        .map(|(i, c)| {
            c.parse::<f64>().map_err(|_| ConfigError {
                line: Some(line),
                message: format!("column '{name}_{}': cannot parse '{c}'", i + 1),
            })
        })
        .collect()
}

/// Parse a sweep table back into rows, recovering the stream count from
/// the header.  Returns `(m, rows)`.
pub fn parse_rows(text: &str) -> Result<(usize, Vec<SweepRow>), ConfigError> {
    let records = records(text)?;
    let Some(((_, head), body)) = records.split_first() else {
        return Err(ConfigError { line: Some(1), message: "empty table: no header".into() });
    };

    let want_min = FIXED_HEAD.len() + FIXED_TAIL.len();
    if head.len() < want_min + 2 || (head.len() - want_min) % 2 != 0 {
        return Err(ConfigError {
            line: Some(1),
            message: format!("header has {} columns, expected {want_min} + 2m", head.len()),
        });
    }
    let m = (head.len() - want_min) / 2;
    if head.as_slice() != header(m).split(',').map(str::to_string).collect::<Vec<_>>() {
        return Err(ConfigError {
            line: Some(1),
            message: format!("header does not match the sweep schema for m = {m}"),
        });
    }

    let mut rows = Vec::with_capacity(body.len());
    for (line, fields) in body {
        let line = *line;
        if fields.len() != head.len() {
            return Err(ConfigError {
                line: Some(line),
                message: format!("record has {} fields, header has {}", fields.len(), head.len()),
            });
        }
        let strategy: Strategy = fields[1].parse().map_err(|e| ConfigError {
            line: Some(line),
            message: format!("column 'strategy': {e}"),
        })?;
        let snr_db = parse_float("snr_db", &fields[0], line)?.ok_or(ConfigError {
            line: Some(line),
            message: "column 'snr_db' must not be empty".into(),
        })?;
        let m_a = if fields[6].is_empty() {
            None
        } else {
            Some(fields[6].parse::<usize>().map_err(|_| ConfigError {
                line: Some(line),
                message: format!("column 'm_a': cannot parse '{}'", fields[6]),
            })?)
        };
        let alphas = parse_vector("alpha", &fields[7..7 + m], line)?;
        let rates = parse_vector("rate", &fields[7 + m..7 + 2 * m], line)?;
        let tail = 7 + 2 * m;
        rows.push(SweepRow {
            snr_db,
            strategy,
            p_out_exact: parse_float("p_out_exact", &fields[2], line)?,
            p_out_approx: parse_float("p_out_approx", &fields[3], line)?,
            p_out_mc: parse_float("p_out_mc", &fields[4], line)?,
            mc_stderr: parse_float("mc_stderr", &fields[5], line)?,
            m_a,
            alphas,
            rates,
            snr_gain_db: parse_float("snr_gain_db", &fields[tail], line)?,
            diversity_running: parse_float("diversity_running", &fields[tail + 1], line)?,
            error: fields[tail + 2].clone(),
        });
    }
    Ok((m, rows))
}
