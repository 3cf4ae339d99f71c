//! Dataset ingestion: dense CSV (`id,v1,...,vd`) and sparse text
//! (`id dim idx:val idx:val ...`). Malformed lines are reported with
//! their 1-based line number; duplicate IDs are errors.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use hashforest::SparseVector;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Sparse,
}

pub fn ingest(path: &Path, format: Format) -> Result<Vec<SparseVector>, CliError> {
    let text = fs::read_to_string(path).map_err(CliError::Storage)?;
    parse(&text, format)
}

pub fn parse(text: &str, format: Format) -> Result<Vec<SparseVector>, CliError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let v = match format {
            Format::Csv => parse_csv_line(line, lineno)?,
            Format::Sparse => parse_sparse_line(line, lineno)?,
        };
        if !seen.insert(v.id) {
            return Err(CliError::Data(format!("line {lineno}: duplicate id {}", v.id)));
        }
        out.push(v);
    }
    Ok(out)
}

fn bad(lineno: usize, what: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("line {lineno}: {what}"))
}

fn parse_csv_line(line: &str, lineno: usize) -> Result<SparseVector, CliError> {
    let mut fields = line.split(',');
    let id = fields
        .next()
        .ok_or_else(|| bad(lineno, "empty line"))?
        .trim()
        .parse::<u64>()
        .map_err(|e| bad(lineno, format_args!("bad id: {e}")))?;
    let dense: Vec<f64> = fields
        .map(|f| {
            f.trim()
                .parse::<f64>()
                .map_err(|e| bad(lineno, format_args!("bad value {:?}: {e}", f.trim())))
        })
        .collect::<Result<_, _>>()?;
    if dense.is_empty() {
        return Err(bad(lineno, "row has an id but no components"));
    }
    Ok(SparseVector::from_dense(id, &dense))
}

fn parse_sparse_line(line: &str, lineno: usize) -> Result<SparseVector, CliError> {
    let mut fields = line.split_whitespace();
    let id = fields
        .next()
        .ok_or_else(|| bad(lineno, "empty line"))?
        .parse::<u64>()
        .map_err(|e| bad(lineno, format_args!("bad id: {e}")))?;
    let dim = fields
        .next()
        .ok_or_else(|| bad(lineno, "missing dimensionality"))?
        .parse::<u32>()
        .map_err(|e| bad(lineno, format_args!("bad dim: {e}")))?;
    let mut entries = Vec::new();
    for tok in fields {
        let (idx, val) = tok
            .split_once(':')
            .ok_or_else(|| bad(lineno, format_args!("expected idx:val, got {tok:?}")))?;
        let idx = idx
            .parse::<u32>()
            .map_err(|e| bad(lineno, format_args!("bad index {idx:?}: {e}")))?;
        let val = val
            .parse::<f64>()
            .map_err(|e| bad(lineno, format_args!("bad value {val:?}: {e}")))?;
        entries.push((idx, val));
    }
    SparseVector::new(id, dim, &entries).map_err(|e| bad(lineno, e))
}

/// Inverse of `parse` for the given format.
pub fn export(vectors: &[SparseVector], format: Format) -> String {
    let mut out = String::new();
    for v in vectors {
        match format {
            Format::Csv => {
                write!(out, "{}", v.id).unwrap();
                let mut dense = vec![0.0f64; v.dim as usize];
                for (&i, &x) in v.indices.iter().zip(&v.values) {
                    dense[i as usize] = x;
                }
                for x in dense {
                    write!(out, ",{x}").unwrap();
                }
            }
            Format::Sparse => {
                write!(out, "{} {}", v.id, v.dim).unwrap();
                for (&i, &x) in v.indices.iter().zip(&v.values) {
                    write!(out, " {i}:{x}").unwrap();
                }
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_line_example() {
        let v = parse("7 5 0:1.5 3:-2.0\n", Format::Sparse).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].id, 7);
        assert_eq!(v[0].dim, 5);
        assert_eq!(v[0].nnz(), 2);
        assert_eq!(v[0].indices, vec![0, 3]);
        assert_eq!(v[0].values, vec![1.5, -2.0]);
    }

    #[test]
    fn dense_all_zero_row() {
        let v = parse("3,0,0,0,0\n", Format::Csv).unwrap();
        assert_eq!(v[0].dim, 4);
        assert_eq!(v[0].nnz(), 0);
    }

    #[test]
    fn malformed_lines_carry_numbers() {
        let err = parse("1,0.5,0.5\n2,x,0.5\n", Format::Csv).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = parse("1 4 0:1\n\n9 4 nonsense\n", Format::Sparse).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn duplicate_id_rejected() {
        let err = parse("1,1.0\n1,2.0\n", Format::Csv).unwrap_err();
        assert!(err.to_string().contains("duplicate id 1"), "{err}");
    }

    #[test]
    fn export_ingest_round_trip() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(9);
        for format in [Format::Csv, Format::Sparse] {
            let vectors: Vec<SparseVector> = (0..1000)
                .map(|i| {
                    let dense: Vec<f64> = (0..20)
                        .map(|_| {
                            if rng.gen_bool(0.5) {
                                // keep values exactly representable
                                (rng.gen_range(-64i32..64) as f64) / 8.0
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    SparseVector::from_dense(i, &dense)
                })
                .collect();
            let round = parse(&export(&vectors, format), format).unwrap();
            assert_eq!(round, vectors);
        }
    }
}
