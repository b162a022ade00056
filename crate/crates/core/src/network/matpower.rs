//! Reader for the MATPOWER `.m` case subset: `mpc.baseMVA`, `mpc.bus`,
//! `mpc.gen` and `mpc.branch`.
//!
//! Comments, the `function mpc = ...` wrapper, other `mpc.*` fields and
//! cell arrays are skipped. Matrix entries may be simple arithmetic
//! expressions (`2*pi`, `-1e3/2`, `Inf`).

use super::case::{BranchRecord, BusRecord, CaseData, GenRecord};
use super::{BusKind, NetworkError};

struct Row {
    line: usize,
    values: Vec<f64>,
}

pub fn parse_matpower(text: &str) -> Result<CaseData, NetworkError> {
    let mut base_mva = None;
    let mut bus = None;
    let mut gen = None;
    let mut branch = None;

    let lines: Vec<(usize, String)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, strip_comment(l).to_string()))
        .collect();

    let mut idx = 0;
    while idx < lines.len() {
        let (line_no, line) = &lines[idx];
        let trimmed = line.trim();
        idx += 1;
        let Some(rest) = trimmed.strip_prefix("mpc.") else {
            continue;
        };
        let Some((name, rhs)) = rest.split_once('=') else {
            continue;
        };
        let name = name.trim();
        let rhs = rhs.trim();
        if rhs.starts_with('[') {
            let (rows, next) = read_matrix(&lines, idx - 1, rhs)?;
            idx = next;
            match name {
                "bus" => bus = Some(rows),
                "gen" => gen = Some(rows),
                "branch" => branch = Some(rows),
                _ => {}
            }
        } else if rhs.starts_with('{') {
            idx = skip_cell(&lines, idx - 1, rhs)?;
        } else if name == "baseMVA" {
            let expr = rhs.trim_end_matches(';').trim();
            base_mva = Some(eval_expr(expr).map_err(|msg| NetworkError::Parse {
                line: *line_no,
                msg,
            })?);
        }
    }

    let base_mva = base_mva.unwrap_or(100.0);
    let bus = bus.ok_or_else(|| NetworkError::Parse {
        line: lines.len(),
        msg: "missing mpc.bus matrix".into(),
    })?;
    let branch = branch.ok_or_else(|| NetworkError::Parse {
        line: lines.len(),
        msg: "missing mpc.branch matrix".into(),
    })?;
    let gen = gen.unwrap_or_default();

    Ok(CaseData {
        base_mva,
        bus: bus.iter().map(to_bus).collect::<Result<_, _>>()?,
        gen: gen.iter().map(to_gen).collect::<Result<_, _>>()?,
        branch: branch.iter().map(to_branch).collect::<Result<_, _>>()?,
    })
}

fn need(row: &Row, n: usize, what: &str) -> Result<(), NetworkError> {
    if row.values.len() < n {
        return Err(NetworkError::Parse {
            line: row.line,
            msg: format!("{what} row has {} columns, need at least {n}", row.values.len()),
        });
    }
    Ok(())
}

fn as_id(row: &Row, v: f64) -> Result<usize, NetworkError> {
    if v < 1.0 || v.fract() != 0.0 {
        return Err(NetworkError::Parse {
            line: row.line,
            msg: format!("bus number {v} is not a positive integer"),
        });
    }
    Ok(v as usize)
}

fn to_bus(row: &Row) -> Result<BusRecord, NetworkError> {
    need(row, 9, "bus")?;
    let v = &row.values;
    let kind = match v[1] as i64 {
        1 => BusKind::PQ,
        2 => BusKind::PV,
        3 => BusKind::Ref,
        t => {
            return Err(NetworkError::Parse {
                line: row.line,
                msg: format!("unsupported bus type {t}"),
            })
        }
    };
    Ok(BusRecord {
        id: as_id(row, v[0])?,
        kind,
        pd: v[2],
        qd: v[3],
        gs: v[4],
        bs: v[5],
        vm: v[7],
        va: v[8],
    })
}

fn to_gen(row: &Row) -> Result<GenRecord, NetworkError> {
    need(row, 8, "gen")?;
    let v = &row.values;
    Ok(GenRecord {
        bus: as_id(row, v[0])?,
        pg: v[1],
        qg: v[2],
        qmax: v[3],
        qmin: v[4],
        vg: v[5],
        status: v[7] > 0.0,
    })
}

fn to_branch(row: &Row) -> Result<BranchRecord, NetworkError> {
    need(row, 11, "branch")?;
    let v = &row.values;
    Ok(BranchRecord {
        from: as_id(row, v[0])?,
        to: as_id(row, v[1])?,
        r: v[2],
        x: v[3],
        b: v[4],
        ratio: if v[8] == 0.0 { 1.0 } else { v[8] },
        angle: v[9],
        status: v[10] != 0.0,
    })
}

fn strip_comment(line: &str) -> &str {
    let mut in_str = false;
    for (i, c) in line.char_indices() {
        match c {
            '\'' => in_str = !in_str,
            '%' if !in_str => return &line[..i],
            _ => {}
        }
    }
    line
}

/// Reads a `[ ... ];` matrix beginning on `lines[start]`, whose text after
/// the `=` is `first`. Returns the rows and the index of the line after
/// the closing bracket.
fn read_matrix(
    lines: &[(usize, String)],
    start: usize,
    first: &str,
) -> Result<(Vec<Row>, usize), NetworkError> {
    let mut rows = Vec::new();
    let mut current: Vec<f64> = Vec::new();
    let mut current_line = lines[start].0;
    let mut text = first.trim_start_matches('[').to_string();
    let mut idx = start;
    loop {
        let line_no = lines[idx].0;
        let (body, closed) = match text.find(']') {
            Some(p) => (text[..p].to_string(), true),
            None => (text.clone(), false),
        };
        let body = body.replace("...", " ");
        for (seg_i, segment) in body.split(';').enumerate() {
            if seg_i > 0 && !current.is_empty() {
                rows.push(Row {
                    line: current_line,
                    values: std::mem::take(&mut current),
                });
            }
            for tok in segment.split(|c: char| c.is_whitespace() || c == ',') {
                if tok.is_empty() {
                    continue;
                }
                if current.is_empty() {
                    current_line = line_no;
                }
                let v = eval_expr(tok).map_err(|msg| NetworkError::Parse { line: line_no, msg })?;
                current.push(v);
            }
        }
        // a newline also terminates a row
        if !current.is_empty() {
            rows.push(Row {
                line: current_line,
                values: std::mem::take(&mut current),
            });
        }
        idx += 1;
        if closed {
            break;
        }
        if idx >= lines.len() {
            return Err(NetworkError::Parse {
                line: lines[start].0,
                msg: "unterminated matrix".into(),
            });
        }
        text = lines[idx].1.trim().to_string();
    }
    Ok((rows, idx))
}

fn skip_cell(lines: &[(usize, String)], start: usize, first: &str) -> Result<usize, NetworkError> {
    let mut idx = start;
    let mut text = first.to_string();
    loop {
        idx += 1;
        if text.contains('}') {
            return Ok(idx);
        }
        if idx >= lines.len() {
            return Err(NetworkError::Parse {
                line: lines[start].0,
                msg: "unterminated cell array".into(),
            });
        }
        text = lines[idx].1.clone();
    }
}

/// Evaluates a numeric literal or a small arithmetic expression with
/// `+ - * / ^`, parentheses, `pi`, `Inf` and `NaN`.
pub fn eval_expr(src: &str) -> Result<f64, String> {
    if let Ok(v) = src.parse::<f64>() {
        return Ok(v);
    }
    let mut p = Expr {
        s: src.as_bytes(),
        pos: 0,
    };
    let v = p.sum()?;
    p.skip_ws();
    if p.pos != p.s.len() {
        return Err(format!("cannot parse '{src}' as a number"));
    }
    Ok(v)
}

struct Expr<'a> {
    s: &'a [u8],
    pos: usize,
}

impl Expr<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.s.get(self.pos).copied()
    }

    fn sum(&mut self) -> Result<f64, String> {
        let mut v = self.product()?;
        while let Some(op @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.product()?;
            v = if op == b'+' { v + rhs } else { v - rhs };
        }
        Ok(v)
    }

    fn product(&mut self) -> Result<f64, String> {
        let mut v = self.power()?;
        while let Some(op @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let rhs = self.power()?;
            v = if op == b'*' { v * rhs } else { v / rhs };
        }
        Ok(v)
    }

    fn power(&mut self) -> Result<f64, String> {
        let base = self.unary()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let exp = self.power()?;
            return Ok(base.powf(exp));
        }
        Ok(base)
    }

    fn unary(&mut self) -> Result<f64, String> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(-self.unary()?)
            }
            Some(b'+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.atom(),
        }
    }

    fn atom(&mut self) -> Result<f64, String> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let v = self.sum()?;
                if self.peek() != Some(b')') {
                    return Err("unbalanced parenthesis".into());
                }
                self.pos += 1;
                Ok(v)
            }
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.s.len() && self.s[self.pos].is_ascii_alphanumeric() {
                    self.pos += 1;
                }
                match &self.s[start..self.pos] {
                    b"pi" => Ok(std::f64::consts::PI),
                    b"Inf" | b"inf" => Ok(f64::INFINITY),
                    b"NaN" | b"nan" => Ok(f64::NAN),
                    other => Err(format!(
                        "unknown identifier '{}'",
                        String::from_utf8_lossy(other)
                    )),
                }
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                let start = self.pos;
                while self.pos < self.s.len() {
                    let c = self.s[self.pos];
                    let exp_sign = (c == b'+' || c == b'-')
                        && self.pos > start
                        && matches!(self.s[self.pos - 1], b'e' | b'E');
                    if c.is_ascii_digit() || c == b'.' || c == b'e' || c == b'E' || exp_sign {
                        self.pos += 1;
                    } else {
                        break;
                    }
                }
                let lit = std::str::from_utf8(&self.s[start..self.pos]).unwrap();
                lit.parse::<f64>()
                    .map_err(|_| format!("invalid number '{lit}'"))
            }
            Some(c) => Err(format!("unexpected character '{}'", c as char)),
            None => Err("unexpected end of expression".into()),
        }
    }
}
