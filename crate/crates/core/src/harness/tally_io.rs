//! Tally files.
//!
//! Format rules:
//!
//! * ASCII text, `\n` or `\r\n` line endings.
//! * Lines starting with `#` and blank lines are ignored.
//! * The first other line is exactly `basis,intensity,n,m,duration_s`.
//! * One row per (basis, intensity): basis `Z` or `X`, intensity `mu` or `nu`.
//!   Missing pairs count as zero; duplicates are an error.
//! * Numbers use `.` as the decimal mark, an optional exponent, and no sign
//!   other than in the exponent, no thousands separators, no `inf`/`nan`.
//! * `m <= n` on every row and all rows share one `duration_s`.

use std::fmt::Write as _;

use crate::link::{Intensity, TallyBlock};
use crate::polarization::Basis;
use crate::{Error, Result};

pub const HEADER: &str = "basis,intensity,n,m,duration_s";

fn parse_err(line: usize, field: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

fn number(line: usize, field: &str, raw: &str) -> Result<f64> {
    let ok_chars = raw
        .bytes()
        .all(|b| b.is_ascii_digit() || matches!(b, b'.' | b'e' | b'E' | b'+' | b'-'));
    let unsigned = !raw.starts_with(['+', '-']);
    let first_digit = raw.bytes().next().is_some_and(|b| b.is_ascii_digit() || b == b'.');
    if raw.is_empty() || !ok_chars || !unsigned || !first_digit {
        return Err(parse_err(line, field, format!("`{raw}` is not a plain decimal number")));
    }
    let v: f64 = raw
        .parse()
        .map_err(|_| parse_err(line, field, format!("`{raw}` is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(line, field, "number out of range"));
    }
    Ok(v)
}

/// Parses a tally file. An empty table is a domain error, a malformed one a
/// parse error pointing at the offending line and field.
pub fn parse_tally(text: &str) -> Result<TallyBlock> {
    if !text.is_ascii() {
        return Err(parse_err(1, "file", "tally files must be ASCII"));
    }
    let mut header_seen = false;
    let mut out = TallyBlock::default();
    let mut seen = [[false; 2]; 2];
    let mut duration: Option<f64> = None;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            if line != HEADER {
                return Err(parse_err(lineno, "header", format!("expected `{HEADER}`")));
            }
            header_seen = true;
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 5 {
            return Err(parse_err(
                lineno,
                "row",
                format!("expected 5 fields, found {}", cells.len()),
            ));
        }
        let basis = match cells[0] {
            "Z" => Basis::Z,
            "X" => Basis::X,
            other => return Err(parse_err(lineno, "basis", format!("`{other}` is not Z or X"))),
        };
        let k = Intensity::parse(cells[1])
            .ok_or_else(|| parse_err(lineno, "intensity", format!("`{}` is not mu or nu", cells[1])))?;
        let n = number(lineno, "n", cells[2])?;
        let m = number(lineno, "m", cells[3])?;
        let d = number(lineno, "duration_s", cells[4])?;
        if m > n {
            return Err(parse_err(lineno, "m", "error count exceeds detections"));
        }
        match duration {
            Some(prev) if prev != d => {
                return Err(parse_err(lineno, "duration_s", "rows disagree on the window duration"))
            }
            _ => duration = Some(d),
        }
        let slot = &mut seen[basis.index()][k.index()];
        if *slot {
            return Err(parse_err(
                lineno,
                "row",
                format!("duplicate row for {basis},{}", k.label()),
            ));
        }
        *slot = true;
        out.n[basis.index()][k.index()] = n;
        out.m[basis.index()][k.index()] = m;
    }
    if !header_seen {
        return Err(Error::domain("tally file is empty"));
    }
    let Some(d) = duration else {
        return Err(Error::domain("tally file has no rows"));
    };
    out.duration_s = d;
    Ok(out)
}

/// Renders a tally in the format read by [`parse_tally`]. `preamble` lines
/// (already `#`-prefixed) go first.
pub fn write_tally(t: &TallyBlock, preamble: &str) -> String {
    let mut s = String::from(preamble);
    s.push_str(HEADER);
    s.push('\n');
    for b in Basis::ALL {
        for k in Intensity::ALL {
            let _ = writeln!(
                s,
                "{b},{},{:?},{:?},{:?}",
                k.label(),
                t.n_at(b, k),
                t.m_at(b, k),
                t.duration_s
            );
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "# sample\nbasis,intensity,n,m,duration_s\nZ,mu,3.08e7,1.59e5,200\nZ,nu,9.57e5,8.04e3,200\r\nX,mu,1.09e6,8.14e3,200\n\nX,nu,2.91e4,884,200\n";

    #[test]
    fn parses_sample() {
        let t = parse_tally(SAMPLE).unwrap();
        assert_eq!(t.n[0][0], 3.08e7);
        assert_eq!(t.m[1][1], 884.0);
        assert_eq!(t.duration_s, 200.0);
    }

    #[test]
    fn write_then_parse_is_exact() {
        let t = parse_tally(SAMPLE).unwrap();
        let mut u = t;
        u.m[1][1] = 0.1 + 0.2;
        assert_eq!(parse_tally(&write_tally(&u, "# x\n")).unwrap(), u);
        assert_eq!(parse_tally(&write_tally(&t, "")).unwrap(), t);
    }

    #[test]
    fn diagnostics_name_line_and_field() {
        let bad = SAMPLE.replace("9.57e5", "9,57e5");
        match parse_tally(&bad) {
            Err(Error::Parse { line, field, .. }) => {
                assert_eq!(line, 4);
                assert_eq!(field, "row");
            }
            other => panic!("{other:?}"),
        }
        let bad = SAMPLE.replace("1.09e6", "1_090_000");
        assert!(matches!(parse_tally(&bad), Err(Error::Parse { line: 5, ref field, .. }) if field == "n"));
        let bad = SAMPLE.replace("X,nu,2.91e4,884", "X,nu,2.91e4,inf");
        assert!(matches!(parse_tally(&bad), Err(Error::Parse { ref field, .. }) if field == "m"));
        let bad = SAMPLE.replace("Z,mu", "Y,mu");
        assert!(matches!(parse_tally(&bad), Err(Error::Parse { ref field, .. }) if field == "basis"));
        let bad = SAMPLE.replace("X,mu,1.09e6,8.14e3", "X,mu,1.09e6,8.14e9");
        assert!(parse_tally(&bad).is_err());
        let bad = SAMPLE.replace("basis,intensity", "basis;intensity");
        assert!(matches!(parse_tally(&bad), Err(Error::Parse { line: 2, .. })));
        assert!(parse_tally(&SAMPLE.replace("X,nu", "Z,mu")).is_err());
        assert!(parse_tally(&SAMPLE.replace("2.91e4,884,200", "2.91e4,884,100")).is_err());
        assert!(parse_tally(&SAMPLE.replace("3.08e7", "-3.08e7")).is_err());
    }

    #[test]
    fn empty_inputs_are_domain_errors() {
        assert!(matches!(parse_tally(""), Err(Error::Domain(_))));
        assert!(matches!(parse_tally("# only\n"), Err(Error::Domain(_))));
        assert!(matches!(
            parse_tally("basis,intensity,n,m,duration_s\n"),
            Err(Error::Domain(_))
        ));
    }
}
