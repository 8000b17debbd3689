//! Plain-text network and matrix files.
//!
//! Network file layout (numbers in `{:.16e}`, 17 significant digits):
//!
//! ```text
//! L K d
//! <W_1 rows, one per line>
//!
//! <W_2 rows> ... <W_{L-1} rows>
//!
//! <a on one line>
//! <b on one line>
//! <c>
//! ```
//!
//! Blocks are separated by a single blank line, so hidden widths are implied
//! by the row counts of each `W_i` block. Lines starting with `#` are ignored.
//!
//! Matrix file layout: a `rows cols` header followed by one line per row.

use super::DeepNet;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Full-precision scientific formatting shared by every text output.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

fn push_row(out: &mut String, vals: &[f64]) {
    let line: Vec<String> = vals.iter().map(|v| fmt_num(*v)).collect();
    out.push_str(&line.join(" "));
    out.push('\n');
}

pub fn write_net(net: &DeepNet) -> String {
    let mut out = format!("{} {} {}\n", net.depth(), net.width(), net.input_dim());
    for layer in &net.layers {
        for i in 0..layer.rows() {
            push_row(&mut out, layer.row(i));
        }
        out.push('\n');
    }
    push_row(&mut out, &net.a);
    push_row(&mut out, &net.b);
    out.push_str(&fmt_num(net.c));
    out.push('\n');
    out
}

fn parse_nums(line: &str, lineno: usize) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("`{tok}` is not a number"),
            })
        })
        .collect()
}

fn parse_counts(line: &str, lineno: usize, expect: usize) -> Result<Vec<usize>> {
    let toks: Vec<&str> = line.split_whitespace().collect();
    if toks.len() != expect {
        return Err(Error::Parse {
            line: lineno,
            msg: format!("header needs {expect} integers, found {}", toks.len()),
        });
    }
    toks.iter()
        .map(|t| {
            t.parse::<usize>().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("`{t}` is not a non-negative integer"),
            })
        })
        .collect()
}

/// A run of non-blank lines, remembering where it started.
struct Block {
    first_line: usize,
    rows: Vec<Vec<f64>>,
}

type Header = Option<(usize, String)>;

fn blocks(text: &str) -> Result<(Header, Vec<Block>)> {
    let mut header = None;
    let mut out: Vec<Block> = Vec::new();
    let mut current: Option<Block> = None;
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.starts_with('#') {
            continue;
        }
        if header.is_none() {
            if line.is_empty() {
                continue;
            }
            header = Some((lineno, line.to_string()));
            continue;
        }
        if line.is_empty() {
            if let Some(b) = current.take() {
                out.push(b);
            }
            continue;
        }
        let nums = parse_nums(line, lineno)?;
        current
            .get_or_insert_with(|| Block {
                first_line: lineno,
                rows: Vec::new(),
            })
            .rows
            .push(nums);
    }
    if let Some(b) = current.take() {
        out.push(b);
    }
    Ok((header, out))
}

fn block_matrix(block: &Block, cols: usize) -> Result<Matrix> {
    let mut data = Vec::with_capacity(block.rows.len() * cols);
    for (i, row) in block.rows.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::Parse {
                line: block.first_line + i,
                msg: format!("expected {cols} values, found {}", row.len()),
            });
        }
        data.extend_from_slice(row);
    }
    Matrix::from_vec(block.rows.len(), cols, data).map_err(|e| Error::Parse {
        line: block.first_line,
        msg: e.to_string(),
    })
}

pub fn parse_net(text: &str) -> Result<DeepNet> {
    let (header, blocks) = blocks(text)?;
    let (hline, htext) = header.ok_or(Error::Parse {
        line: 1,
        msg: "empty network file".into(),
    })?;
    let dims = parse_counts(&htext, hline, 3)?;
    let (depth, k, d) = (dims[0], dims[1], dims[2]);
    if depth < 2 {
        return Err(Error::Parse {
            line: hline,
            msg: format!("depth must be at least 2, got {depth}"),
        });
    }
    let n_layers = depth - 1;
    if blocks.len() != n_layers + 1 {
        let line = blocks.last().map_or(hline, |b| b.first_line);
        return Err(Error::Parse {
            line,
            msg: format!(
                "expected {} blank-line separated blocks ({} weight matrices and the output block), found {}",
                n_layers + 1,
                n_layers,
                blocks.len()
            ),
        });
    }
    let mut layers = Vec::with_capacity(n_layers);
    let mut cols = d;
    for block in &blocks[..n_layers] {
        let m = block_matrix(block, cols)?;
        cols = m.rows();
        layers.push(m);
    }
    if cols != k {
        return Err(Error::Parse {
            line: blocks[n_layers - 1].first_line,
            msg: format!("last weight block has {cols} rows but header says K = {k}"),
        });
    }
    let tail = &blocks[n_layers];
    if tail.rows.len() != 3 {
        return Err(Error::Parse {
            line: tail.first_line,
            msg: format!("output block needs 3 lines (a, b, c), found {}", tail.rows.len()),
        });
    }
    for (i, (name, want)) in [("a", k), ("b", k), ("c", 1)].iter().enumerate() {
        if tail.rows[i].len() != *want {
            return Err(Error::Parse {
                line: tail.first_line + i,
                msg: format!("`{name}` needs {want} values, found {}", tail.rows[i].len()),
            });
        }
    }
    DeepNet::new(layers, tail.rows[0].clone(), tail.rows[1].clone(), tail.rows[2][0]).map_err(|e| {
        Error::Parse {
            line: hline,
            msg: e.to_string(),
        }
    })
}

pub fn write_matrix(m: &Matrix) -> String {
    let mut out = format!("{} {}\n", m.rows(), m.cols());
    for i in 0..m.rows() {
        push_row(&mut out, m.row(i));
    }
    out
}

pub fn parse_matrix(text: &str) -> Result<Matrix> {
    let mut header: Option<(usize, usize)> = None;
    let mut data = Vec::new();
    let mut rows_seen = 0;
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match header {
            None => {
                let dims = parse_counts(line, lineno, 2)?;
                header = Some((dims[0], dims[1]));
            }
            Some((rows, cols)) => {
                let nums = parse_nums(line, lineno)?;
                if nums.len() != cols {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("expected {cols} values, found {}", nums.len()),
                    });
                }
                if rows_seen == rows {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("more than {rows} rows"),
                    });
                }
                data.extend(nums);
                rows_seen += 1;
            }
        }
    }
    let (rows, cols) = header.ok_or(Error::Parse {
        line: 1,
        msg: "empty matrix file".into(),
    })?;
    if rows_seen != rows {
        return Err(Error::Parse {
            line: text.lines().count(),
            msg: format!("expected {rows} rows, found {rows_seen}"),
        });
    }
    Matrix::from_vec(rows, cols, data).map_err(|e| Error::Parse {
        line: 1,
        msg: e.to_string(),
    })
}
