//! Reading effect-size datasets and converting reported test statistics to
//! standardized mean differences.
//!
//! Two CSV layouts are accepted, detected from the header:
//!
//! * `effect,se`
//! * `statistic,stat_type,df[,sign]` with `stat_type` one of `t` or `F`
//!
//! Lines starting with `#` are comments. Every malformed row is reported
//! with its line number; rows are never dropped silently.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Study;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatType {
    T,
    F,
}

impl std::str::FromStr for StatType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "t" | "T" => Ok(StatType::T),
            "f" | "F" => Ok(StatType::F),
            other => Err(Error::Domain(format!("unknown statistic type '{other}' (expected t or F)"))),
        }
    }
}

/// Layout of an input file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputFormat {
    /// Decide from the header.
    #[default]
    Auto,
    EffectSe,
    Statistics,
}

/// Standardized mean difference `d = t√(2/ν)` for a two-group design, with
/// `se(d) = √(4/N + d²/(2N))`, `N = ν + 2`. F statistics use `t = √F`.
pub fn convert_to_d(statistic: f64, stat_type: StatType, df: f64) -> Result<Study> {
    if !(df >= 1.0 && df.is_finite()) {
        return Err(Error::Domain(format!("degrees of freedom must be at least 1, got {df}")));
    }
    if !statistic.is_finite() {
        return Err(Error::Domain(format!("statistic must be finite, got {statistic}")));
    }
    let t = match stat_type {
        StatType::T => statistic,
        StatType::F => {
            if statistic < 0.0 {
                return Err(Error::Domain(format!("F statistic must be nonnegative, got {statistic}")));
            }
            statistic.sqrt()
        }
    };
    let d = t * (2.0 / df).sqrt();
    let n = df + 2.0;
    Study::new(d, (4.0 / n + d * d / (2.0 * n)).sqrt())
}

fn parse_sign(raw: &str) -> std::result::Result<f64, String> {
    match raw.trim() {
        "" | "+" | "1" | "+1" | "positive" | "pos" => Ok(1.0),
        "-" | "-1" | "negative" | "neg" => Ok(-1.0),
        other => Err(format!("unrecognized sign '{other}'")),
    }
}

fn parse_number(raw: &str, column: &str) -> std::result::Result<f64, String> {
    raw.trim()
        .parse::<f64>()
        .map_err(|_| format!("column '{column}': '{}' is not a number", raw.trim()))
}

/// Parses a dataset from any reader.
pub fn parse_dataset<R: Read>(reader: R, format: InputFormat) -> Result<Vec<Study>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_ascii_lowercase()).collect();
    let find = |name: &str| headers.iter().position(|h| h == name);

    let effect_cols = find("effect").zip(find("se"));
    let stat_cols = match (find("statistic"), find("stat_type"), find("df")) {
        (Some(s), Some(t), Some(d)) => Some((s, t, d)),
        _ => None,
    };
    let sign_col = find("sign");

    let layout = match format {
        InputFormat::EffectSe => effect_cols.map(Layout::Effects),
        InputFormat::Statistics => stat_cols.map(Layout::Statistics),
        InputFormat::Auto => effect_cols.map(Layout::Effects).or(stat_cols.map(Layout::Statistics)),
    };
    let Some(layout) = layout else {
        return Err(Error::Parse(vec![(
            1,
            format!("header {headers:?} lacks columns (effect, se) or (statistic, stat_type, df)"),
        )]));
    };

    let mut studies = Vec::new();
    let mut problems = Vec::new();
    for record in rdr.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
                problems.push((line, e.to_string()));
                continue;
            }
        };
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |i: usize| record.get(i).unwrap_or("");
        let parsed = match layout {
            Layout::Effects((e, s)) => parse_number(field(e), "effect").and_then(|effect| {
                let se = parse_number(field(s), "se")?;
                Study::new(effect, se).map_err(|err| err.to_string())
            }),
            Layout::Statistics((s, t, d)) => (|| {
                let statistic = parse_number(field(s), "statistic")?;
                let stat_type: StatType = field(t).parse().map_err(|e: Error| e.to_string())?;
                let df = parse_number(field(d), "df")?;
                let study = convert_to_d(statistic, stat_type, df).map_err(|e| e.to_string())?;
                match sign_col {
                    Some(c) => {
                        let sign = parse_sign(field(c))?;
                        Study::new(sign * study.effect.abs(), study.se).map_err(|e| e.to_string())
                    }
                    None => Ok(study),
                }
            })(),
        };
        match parsed {
            Ok(study) => studies.push(study),
            Err(msg) => problems.push((line, msg)),
        }
    }
    if !problems.is_empty() {
        return Err(Error::Parse(problems));
    }
    Ok(studies)
}

#[derive(Debug, Clone, Copy)]
enum Layout {
    Effects((usize, usize)),
    Statistics((usize, usize, usize)),
}

pub fn read_dataset(path: &Path, format: InputFormat) -> Result<Vec<Study>> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_dataset(std::io::BufReader::new(file), format)
}

/// Writes studies in the `effect,se` layout.
pub fn write_dataset<W: Write>(writer: W, studies: &[Study]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["effect", "se"])?;
    for s in studies {
        w.write_record([format!("{}", s.effect), format!("{}", s.se)])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<Study>> {
        parse_dataset(text.as_bytes(), InputFormat::Auto)
    }

    #[test]
    fn effect_layout() {
        let s = parse("effect,se\n0.62,0.2\n").unwrap();
        assert_eq!(s, vec![Study::new(0.62, 0.2).unwrap()]);
    }

    #[test]
    fn statistic_layout() {
        let s = parse("statistic,stat_type,df\n2.0,t,50\n4.0,F,50\n").unwrap();
        assert!((s[0].effect - 0.4).abs() < 1e-15);
        assert!((s[1].effect - 0.4).abs() < 1e-15);
        assert_eq!(s[0].se, s[1].se);
    }

    #[test]
    fn conversion_values() {
        let zero = convert_to_d(0.0, StatType::T, 50.0).unwrap();
        assert_eq!(zero.effect, 0.0);
        assert!((zero.se - (4.0f64 / 52.0).sqrt()).abs() < 1e-15);
        assert!((zero.se - 0.277350).abs() < 1e-6);
        let two = convert_to_d(2.0, StatType::T, 50.0).unwrap();
        assert!((two.se - (4.0 / 52.0 + 0.16 / 104.0f64).sqrt()).abs() < 1e-15);
        assert!((two.se - 0.280110).abs() < 1e-6);
        assert!(convert_to_d(-1.0, StatType::F, 10.0).is_err());
        assert!(convert_to_d(1.0, StatType::F, 0.5).is_err());
    }

    #[test]
    fn sign_column_and_comments() {
        let text = "# p-curve extract\nstatistic,stat_type,df,sign\n4.0,F,50,-\n4.0,F,50,\n# trailing\n";
        let s = parse(text).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s[0].effect < 0.0 && s[1].effect > 0.0);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = parse("effect,se\n0.1,0.2\n0.3,-1\nabc,0.1\n").unwrap_err();
        match err {
            Error::Parse(rows) => {
                let lines: Vec<usize> = rows.iter().map(|r| r.0).collect();
                assert_eq!(lines, vec![3, 4]);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse("foo,bar\n1,2\n"), Err(Error::Parse(_))));
        assert!(matches!(parse("statistic,stat_type,df\n1.0,F,0\n"), Err(Error::Parse(_))));
    }

    #[test]
    fn write_then_read() {
        let studies = vec![Study::new(0.1, 0.2).unwrap(), Study::new(-1.5e-3, 0.11).unwrap()];
        let mut buf = Vec::new();
        write_dataset(&mut buf, &studies).unwrap();
        assert_eq!(parse_dataset(buf.as_slice(), InputFormat::EffectSe).unwrap(), studies);
    }
}
