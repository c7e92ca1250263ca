//! Reader for the subset of the MATPOWER case format that describes the
//! steady-state network: `mpc.baseMVA`, `mpc.bus`, `mpc.gen`, `mpc.branch`.

use std::collections::HashMap;

use super::{Branch, BusKind, BusRecord, GeneratorParams, GeneratorSidecar, NetworkCase};
use crate::error::{Error, Result};

/// Raw MATPOWER tables, in the file's own units.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatpowerCase {
    pub base_mva: f64,
    pub bus: Vec<Vec<f64>>,
    pub gen: Vec<Vec<f64>>,
    pub branch: Vec<Vec<f64>>,
    /// Top-level `mpc.*` fields that were present but not used.
    pub dropped_fields: Vec<String>,
}

const BUS_COLS: usize = 13;
const GEN_COLS: usize = 10;
const BRANCH_COLS: usize = 11;

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn location(&self, pos: usize) -> (usize, usize) {
        let before = &self.text[..pos];
        let line = before.matches('\n').count() + 1;
        let column = pos - before.rfind('\n').map_or(0, |i| i + 1) + 1;
        (line, column)
    }

    fn error(&self, pos: usize, message: impl Into<String>) -> Error {
        let (line, column) = self.location(pos);
        Error::Parse {
            line,
            column,
            message: message.into(),
        }
    }
}

/// Blank out `%` comments so byte offsets stay valid for error locations.
fn strip_comments(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_quote = false;
    let mut in_comment = false;
    for ch in text.chars() {
        match ch {
            '\n' => {
                in_comment = false;
                in_quote = false;
                out.push('\n');
            }
            _ if in_comment => out.push(if ch.is_ascii() { ' ' } else { ch }),
            '\'' => {
                in_quote = !in_quote;
                out.push(ch);
            }
            '%' if !in_quote => {
                in_comment = true;
                out.push(' ');
            }
            _ => out.push(ch),
        }
    }
    out
}

pub fn parse_matpower_str(text: &str) -> Result<MatpowerCase> {
    if text.trim().is_empty() {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            message: "empty case file".into(),
        });
    }
    let clean = strip_comments(text);
    let cur = Cursor { text: &clean, pos: 0 };
    let mut case = MatpowerCase::default();
    let mut base_seen = false;
    let mut tables: HashMap<&str, (Vec<Vec<f64>>, Vec<usize>)> = HashMap::new();

    let mut search = cur.pos;
    while let Some(off) = clean[search..].find("mpc.") {
        let start = search + off;
        let name_start = start + 4;
        let name_len = clean[name_start..]
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(clean.len() - name_start);
        let name = &clean[name_start..name_start + name_len];
        let after = name_start + name_len;
        let eq = clean[after..]
            .find(|c: char| !c.is_whitespace())
            .map(|i| after + i)
            .filter(|&i| clean[i..].starts_with('='))
            .ok_or_else(|| cur.error(after, format!("expected '=' after mpc.{name}")))?;
        let rhs = eq + 1;
        match name {
            "baseMVA" => {
                let end = clean[rhs..].find([';', '\n']).map_or(clean.len(), |i| rhs + i);
                let raw = clean[rhs..end].trim();
                case.base_mva = raw
                    .parse()
                    .map_err(|_| cur.error(rhs, format!("baseMVA '{raw}' is not a number")))?;
                base_seen = true;
                search = end;
            }
            "bus" | "gen" | "branch" => {
                let (rows, starts, end) = parse_matrix(&cur, rhs)?;
                tables.insert(
                    match name {
                        "bus" => "bus",
                        "gen" => "gen",
                        _ => "branch",
                    },
                    (rows, starts),
                );
                search = end;
            }
            other => {
                if !case.dropped_fields.iter().any(|f| f == other) {
                    case.dropped_fields.push(other.to_string());
                }
                // Skip past a matrix or cell literal if one follows.
                let rest = clean[rhs..].trim_start();
                let skip = rhs + (clean[rhs..].len() - rest.len());
                search = match rest.chars().next() {
                    Some(open @ ('[' | '{')) => {
                        let close = if open == '[' { ']' } else { '}' };
                        clean[skip..].find(close).map_or(clean.len(), |i| skip + i + 1)
                    }
                    _ => clean[rhs..].find(['\n', ';']).map_or(clean.len(), |i| rhs + i),
                };
            }
        }
    }

    if !base_seen {
        return Err(cur.error(0, "missing mpc.baseMVA"));
    }
    for (key, cols) in [("bus", BUS_COLS), ("gen", GEN_COLS), ("branch", BRANCH_COLS)] {
        let (rows, starts) = tables
            .remove(key)
            .ok_or_else(|| cur.error(0, format!("missing mpc.{key} table")))?;
        if let Some((r, row)) = rows.iter().enumerate().find(|(_, row)| row.len() < cols) {
            return Err(cur.error(
                starts[r],
                format!(
                    "mpc.{key} row {} has {} columns, need at least {cols}",
                    r + 1,
                    row.len()
                ),
            ));
        }
        match key {
            "bus" => case.bus = rows,
            "gen" => case.gen = rows,
            _ => case.branch = rows,
        }
    }
    Ok(case)
}

/// Parses `[ a b c; d e f; ]` starting at or after `pos`; returns the rows,
/// the offset where each row starts, and the offset past the closing bracket.
fn parse_matrix(cur: &Cursor<'_>, pos: usize) -> Result<(Vec<Vec<f64>>, Vec<usize>, usize)> {
    let text = cur.text;
    let open = text[pos..]
        .find(|c: char| !c.is_whitespace())
        .map(|i| pos + i)
        .filter(|&i| text[i..].starts_with('['))
        .ok_or_else(|| cur.error(pos, "expected '['"))?;
    let close = text[open..]
        .find(']')
        .map(|i| open + i)
        .ok_or_else(|| cur.error(open, "unterminated matrix"))?;

    let mut rows = Vec::new();
    let mut starts = Vec::new();
    let mut row: Vec<f64> = Vec::new();
    let mut i = open + 1;
    let body = &text[..close];
    while i < close {
        let c = body[i..].chars().next().expect("in bounds");
        if c == ';' || c == '\n' {
            if !row.is_empty() {
                rows.push(std::mem::take(&mut row));
            }
            i += 1;
        } else if c.is_whitespace() || c == ',' {
            i += c.len_utf8();
        } else {
            let len = body[i..]
                .find(|ch: char| ch.is_whitespace() || ch == ',' || ch == ';')
                .unwrap_or(close - i);
            let token = &body[i..i + len];
            if row.is_empty() {
                starts.push(i);
            }
            let value: f64 = match token {
                "Inf" | "inf" => f64::INFINITY,
                "-Inf" | "-inf" => f64::NEG_INFINITY,
                _ => token
                    .parse()
                    .map_err(|_| cur.error(i, format!("'{token}' is not a number")))?,
            };
            row.push(value);
            i += len;
        }
    }
    if !row.is_empty() {
        rows.push(row);
    }
    Ok((rows, starts, close + 1))
}

impl MatpowerCase {
    /// Converts to per-unit, drops out-of-service elements, remaps bus
    /// numbers to `1..=N` and attaches machine constants from `sidecar`.
    pub fn into_case(self, name: &str, sidecar: &GeneratorSidecar) -> Result<NetworkCase> {
        let base = self.base_mva;
        let mut index = HashMap::new();
        let mut buses = Vec::with_capacity(self.bus.len());
        for (k, row) in self.bus.iter().enumerate() {
            let original = integral(row[0], "bus", k)?;
            if index.insert(original, k + 1).is_some() {
                return Err(Error::Validation(format!("duplicate bus id {original}")));
            }
            let kind = match row[1] as i64 {
                1 => BusKind::PQ,
                2 => BusKind::PV,
                3 => BusKind::Slack,
                t => {
                    return Err(Error::Validation(format!("bus {original}: unsupported bus type {t}")));
                }
            };
            buses.push(BusRecord {
                id: k + 1,
                original_id: original,
                kind,
                p_load: row[2] / base,
                q_load: row[3] / base,
                g_shunt: row[4] / base,
                b_shunt: row[5] / base,
                v: row[7],
                theta: row[8].to_radians(),
                p_ren: 0.0,
                q_ren: 0.0,
            });
        }
        let lookup = |id: f64, what: &str, k: usize| -> Result<usize> {
            let id = integral(id, what, k)?;
            index
                .get(&id)
                .copied()
                .ok_or_else(|| Error::Validation(format!("{what} row {} references unknown bus {id}", k + 1)))
        };

        let mut branches = Vec::new();
        for (k, row) in self.branch.iter().enumerate() {
            if row[10] == 0.0 {
                continue;
            }
            branches.push(Branch {
                from: lookup(row[0], "branch", k)?,
                to: lookup(row[1], "branch", k)?,
                r: row[2],
                x: row[3],
                b: row[4],
                tap: if row[8] == 0.0 { 1.0 } else { row[8] },
                shift: row[9].to_radians(),
            });
        }

        let mut gens = Vec::new();
        for (k, row) in self.gen.iter().enumerate() {
            if row[7] <= 0.0 {
                continue;
            }
            let bus = lookup(row[0], "gen", k)?;
            let original = buses[bus - 1].original_id;
            let dynamics = sidecar.params_for(original)?;
            gens.push(GeneratorParams {
                bus,
                p_set: row[1] / base,
                q_set: row[2] / base,
                v_set: row[5],
                m: dynamics.m,
                d: dynamics.d,
                x_d: dynamics.x_d,
                x_q: dynamics.x_q,
                x_d_p: dynamics.x_d_p,
                t_d0_p: dynamics.t_d0_p,
                t_ch: dynamics.t_ch,
                r_d: dynamics.r_d,
            });
        }
        // Generator set-points override the stored bus voltage magnitude.
        for gen in &gens {
            buses[gen.bus - 1].v = gen.v_set;
        }
        NetworkCase::new(name, base, sidecar.omega0, buses, branches, gens)
    }
}

fn integral(value: f64, what: &str, row: usize) -> Result<u64> {
    if value >= 0.0 && value.fract() == 0.0 {
        Ok(value as u64)
    } else {
        Err(Error::Validation(format!(
            "{what} row {}: bus id {value} is not a positive integer",
            row + 1
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINI: &str = "function mpc = mini
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
\t1\t3\t0\t0\t0\t0\t1\t1\t0\t345\t1\t1.1\t0.9;
\t2\t1\t50\t10\t0\t0\t1\t1\t0\t345\t1\t1.1\t0.9; % trailing comment
];
mpc.gen = [
\t1\t50\t0\t300\t-300\t1.0\t100\t1\t250\t10;
];
mpc.branch = [
\t1\t2\t0\t0.1\t0\t250\t250\t250\t0\t0\t1\t-360\t360;
];
mpc.gencost = [
\t2\t0\t0\t3\t0.1\t1\t0;
];
";

    #[test]
    fn parses_tables_and_reports_dropped_fields() {
        let raw = parse_matpower_str(MINI).unwrap();
        assert_eq!(raw.base_mva, 100.0);
        assert_eq!(raw.bus.len(), 2);
        assert_eq!(raw.gen.len(), 1);
        assert_eq!(raw.branch[0][3], 0.1);
        assert_eq!(raw.dropped_fields, vec!["version", "gencost"]);
    }

    #[test]
    fn empty_file_is_a_parse_error() {
        assert!(matches!(parse_matpower_str(""), Err(Error::Parse { .. })));
        assert!(matches!(parse_matpower_str("  \n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn bad_number_reports_location() {
        let text = MINI.replace("\t50\t10\t", "\t5x0\t10\t");
        match parse_matpower_str(&text) {
            Err(Error::Parse { line, column, message }) => {
                assert_eq!(line, 6);
                assert_eq!(column, 6);
                assert!(message.contains("5x0"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn short_row_is_rejected() {
        let text = MINI.replace(
            "\t1\t2\t0\t0.1\t0\t250\t250\t250\t0\t0\t1\t-360\t360;",
            "\t1\t2\t0\t0.1;",
        );
        assert!(matches!(
            parse_matpower_str(&text),
            Err(Error::Parse {
                line: 12,
                column: 2,
                ..
            })
        ));
    }

    #[test]
    fn missing_sidecar_entry_is_config_error() {
        let raw = parse_matpower_str(MINI).unwrap();
        let sidecar = GeneratorSidecar::from_json(r#"{"omega0": 376.99, "generators": {}}"#).unwrap();
        assert!(matches!(raw.into_case("mini", &sidecar), Err(Error::Config(_))));
    }

    #[test]
    fn duplicate_bus_is_validation_error() {
        let text = MINI.replace("\t2\t1\t50", "\t1\t1\t50");
        let raw = parse_matpower_str(&text).unwrap();
        let sidecar = GeneratorSidecar::from_json(
            r#"{"omega0": 376.99, "generators": {"1": {"h": 3, "d": 1, "x_d": 1, "x_q": 1, "x_d_p": 0.2, "t_d0_p": 5}}}"#,
        )
        .unwrap();
        assert!(matches!(raw.into_case("mini", &sidecar), Err(Error::Validation(_))));
    }
}
