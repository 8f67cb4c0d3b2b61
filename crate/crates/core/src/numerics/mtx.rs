//! MatrixMarket text I/O: `coordinate` for sparse matrices, `array` for dense.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;

use super::sparse::SparseMatrix;
use crate::error::{Error, Result};

pub fn write_sparse<W: Write>(out: &mut W, a: &SparseMatrix) -> Result<()> {
    writeln!(out, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(out, "{} {} {}", a.nrows(), a.ncols(), a.nnz())?;
    for (i, j, v) in a.triplets() {
        writeln!(out, "{} {} {:e}", i + 1, j + 1, v)?;
    }
    Ok(())
}

pub fn write_dense<W: Write>(out: &mut W, a: &DMatrix<f64>) -> Result<()> {
    writeln!(out, "%%MatrixMarket matrix array real general")?;
    writeln!(out, "{} {}", a.nrows(), a.ncols())?;
    // array format is column-major
    for v in a.iter() {
        writeln!(out, "{v:e}")?;
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq)]
enum Symmetry {
    General,
    Symmetric,
    SkewSymmetric,
}

struct Header {
    coordinate: bool,
    symmetry: Symmetry,
}

fn parse_header(line: &str) -> Result<Header> {
    let lower = line.to_ascii_lowercase();
    let tokens: Vec<&str> = lower.split_whitespace().collect();
    if tokens.len() < 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(Error::Parse {
            line: 1,
            message: "missing %%MatrixMarket matrix header".into(),
        });
    }
    let coordinate = match tokens[2] {
        "coordinate" => true,
        "array" => false,
        other => {
            return Err(Error::Parse {
                line: 1,
                message: format!("unsupported format '{other}'"),
            })
        }
    };
    if tokens[3] != "real" && tokens[3] != "integer" {
        return Err(Error::Parse {
            line: 1,
            message: format!("unsupported field '{}'", tokens[3]),
        });
    }
    let symmetry = match tokens[4] {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        "skew-symmetric" => Symmetry::SkewSymmetric,
        other => {
            return Err(Error::Parse {
                line: 1,
                message: format!("unsupported symmetry '{other}'"),
            })
        }
    };
    Ok(Header {
        coordinate,
        symmetry,
    })
}

/// Data lines with their 1-based line numbers, comments and blanks skipped.
fn data_lines<R: BufRead>(input: R) -> Result<(String, Vec<(usize, String)>)> {
    let mut lines = input.lines();
    let header = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty file".into(),
    })??;
    let mut data = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        data.push((idx + 2, trimmed.to_string()));
    }
    Ok((header, data))
}

fn parse_num<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    tok.and_then(|t| t.parse().ok()).ok_or_else(|| Error::Parse {
        line,
        message: format!("expected {what}"),
    })
}

pub fn read_sparse<R: BufRead>(input: R) -> Result<SparseMatrix> {
    let (header, data) = data_lines(input)?;
    let header = parse_header(&header)?;
    if header.coordinate {
        sparse_from_coordinate(&header, &data)
    } else {
        Ok(SparseMatrix::from_dense(&dense_from_array(&header, &data)?, 0.0))
    }
}

pub fn read_dense<R: BufRead>(input: R) -> Result<DMatrix<f64>> {
    let (header, data) = data_lines(input)?;
    let header = parse_header(&header)?;
    if header.coordinate {
        Ok(sparse_from_coordinate(&header, &data)?.to_dense())
    } else {
        dense_from_array(&header, &data)
    }
}

fn sparse_from_coordinate(header: &Header, data: &[(usize, String)]) -> Result<SparseMatrix> {
    let (size_line, size) = data.first().ok_or(Error::Parse {
        line: 2,
        message: "missing size line".into(),
    })?;
    let mut toks = size.split_whitespace();
    let nrows: usize = parse_num(toks.next(), *size_line, "row count")?;
    let ncols: usize = parse_num(toks.next(), *size_line, "column count")?;
    let nnz: usize = parse_num(toks.next(), *size_line, "entry count")?;
    let mut triplets = Vec::with_capacity(nnz);
    for (line, text) in &data[1..] {
        let mut toks = text.split_whitespace();
        let i: usize = parse_num(toks.next(), *line, "row index")?;
        let j: usize = parse_num(toks.next(), *line, "column index")?;
        let v: f64 = parse_num(toks.next(), *line, "value")?;
        if i == 0 || j == 0 || i > nrows || j > ncols {
            return Err(Error::Parse {
                line: *line,
                message: format!("index ({i}, {j}) out of range"),
            });
        }
        triplets.push((i - 1, j - 1, v));
        if i != j {
            match header.symmetry {
                Symmetry::Symmetric => triplets.push((j - 1, i - 1, v)),
                Symmetry::SkewSymmetric => triplets.push((j - 1, i - 1, -v)),
                Symmetry::General => {}
            }
        }
    }
    if data.len() - 1 != nnz {
        return Err(Error::Parse {
            line: *size_line,
            message: format!("declared {nnz} entries, found {}", data.len() - 1),
        });
    }
    SparseMatrix::from_triplets(nrows, ncols, &triplets)
}

fn dense_from_array(header: &Header, data: &[(usize, String)]) -> Result<DMatrix<f64>> {
    let (size_line, size) = data.first().ok_or(Error::Parse {
        line: 2,
        message: "missing size line".into(),
    })?;
    let mut toks = size.split_whitespace();
    let nrows: usize = parse_num(toks.next(), *size_line, "row count")?;
    let ncols: usize = parse_num(toks.next(), *size_line, "column count")?;
    let values: Vec<f64> = data[1..]
        .iter()
        .map(|(line, text)| parse_num(Some(text.as_str()), *line, "value"))
        .collect::<Result<_>>()?;
    let mut a = DMatrix::zeros(nrows, ncols);
    match header.symmetry {
        Symmetry::General => {
            if values.len() != nrows * ncols {
                return Err(Error::Parse {
                    line: *size_line,
                    message: format!("expected {} values, found {}", nrows * ncols, values.len()),
                });
            }
            a.copy_from_slice(&values);
        }
        Symmetry::Symmetric | Symmetry::SkewSymmetric => {
            let sign = if header.symmetry == Symmetry::Symmetric { 1.0 } else { -1.0 };
            let mut it = values.iter();
            for j in 0..ncols {
                let start = if header.symmetry == Symmetry::Symmetric { j } else { j + 1 };
                for i in start..nrows {
                    let v = *it.next().ok_or(Error::Parse {
                        line: *size_line,
                        message: "too few values".into(),
                    })?;
                    a[(i, j)] = v;
                    if i != j {
                        a[(j, i)] = sign * v;
                    }
                }
            }
        }
    }
    Ok(a)
}
