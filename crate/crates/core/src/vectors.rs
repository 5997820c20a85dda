//! Newline-delimited vector records.
//!
//! One vector per line, values separated by whitespace and/or commas. Blank
//! lines and lines starting with `#` are skipped.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Parses records, requiring every vector to have `dim` entries when given.
pub fn read_vectors(reader: impl BufRead, dim: Option<usize>) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    let mut width = dim;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let values = trimmed
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                let v: f64 = t.parse().map_err(|_| Error::Parse {
                    line: i + 1,
                    reason: format!("'{t}' is not a number"),
                })?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Parse {
                        line: i + 1,
                        reason: format!("non-finite value '{t}'"),
                    })
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        match width {
            Some(w) if w != values.len() => {
                return Err(Error::Parse {
                    line: i + 1,
                    reason: format!("expected {w} values, found {}", values.len()),
                })
            }
            None => width = Some(values.len()),
            _ => {}
        }
        out.push(values);
    }
    Ok(out)
}

pub fn read_vectors_file(path: impl AsRef<std::path::Path>, dim: Option<usize>) -> Result<Vec<Vec<f64>>> {
    let file = std::fs::File::open(path)?;
    read_vectors(std::io::BufReader::new(file), dim)
}

/// Writes one space-separated record per vector, each value in its
/// shortest round-trip form.
pub fn write_vectors(mut writer: impl Write, vectors: &[Vec<f64>]) -> Result<()> {
    for v in vectors {
        let line: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
        writeln!(writer, "{}", line.join(" "))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_mixed_separators_and_comments() {
        let text = "# header\n1, 2 3\n\n  -4.5e-1\t0 7\n";
        let v = read_vectors(text.as_bytes(), None).unwrap();
        assert_eq!(v, vec![vec![1.0, 2.0, 3.0], vec![-0.45, 0.0, 7.0]]);
    }

    #[test]
    fn ragged_records_rejected() {
        let err = read_vectors("1 2\n3\n".as_bytes(), None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(read_vectors("1 2\n".as_bytes(), Some(3)).is_err());
        assert!(read_vectors("1 nan\n".as_bytes(), None).is_err());
        assert!(read_vectors("1 x\n".as_bytes(), None).is_err());
    }

    #[test]
    fn write_then_read_is_exact() {
        let v = vec![vec![0.1, -1e-300, 12345.678901234567], vec![f64::MAX, 0.0, -0.0]];
        let mut buf = Vec::new();
        write_vectors(&mut buf, &v).unwrap();
        let back = read_vectors(buf.as_slice(), Some(3)).unwrap();
        for (a, b) in v.iter().flatten().zip(back.iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
