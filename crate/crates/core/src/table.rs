//! Plain CSV reading and writing for the numeric tables this crate emits.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Fixed decimal-exponent notation with 17 significant digits.
pub fn fmt_sci(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_row<W: Write>(w: &mut W, fields: &[f64]) -> std::io::Result<()> {
    let line: Vec<String> = fields.iter().map(|&v| fmt_sci(v)).collect();
    writeln!(w, "{}", line.join(","))
}

/// A numeric table with named columns.
#[derive(Debug, Clone)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let header = loop {
            match lines.next() {
                Some((_, line)) => {
                    let line = line?;
                    if !line.trim().is_empty() {
                        break line.split(',').map(|s| s.trim().to_string()).collect::<Vec<_>>();
                    }
                }
                None => return Err(Error::Parse { line: 1, msg: "empty table".into() }),
            }
        };
        let mut rows = Vec::new();
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|e| Error::Parse {
                        line: i + 1,
                        msg: format!("bad number {s:?}: {e}"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != header.len() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected {} fields, found {}", header.len(), row.len()),
                });
            }
            rows.push(row);
        }
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(fmt_sci(1.0), "1.0000000000000000e0");
        assert_eq!(fmt_sci(-0.1), "-1.0000000000000001e-1");
        let v = std::f64::consts::PI;
        assert_eq!(fmt_sci(v).parse::<f64>().unwrap(), v);
    }

    #[test]
    fn reads_back_and_rejects_ragged() {
        let t = Table::read("a,b\n1,2\n3,4\n".as_bytes()).unwrap();
        assert_eq!(t.column("b").unwrap(), vec![2.0, 4.0]);
        assert!(t.column("c").is_none());
        assert!(Table::read("a,b\n1\n".as_bytes()).is_err());
        assert!(Table::read("a\nx\n".as_bytes()).is_err());
    }
}
