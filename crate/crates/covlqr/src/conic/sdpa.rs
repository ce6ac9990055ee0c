//! SDPA sparse format (`.dat-s`) export and import.
//!
//! The format describes `min cᵀx s.t. X_b = Σᵢ xᵢFᵢ⁽ᵇ⁾ − F₀⁽ᵇ⁾ ⪰ 0` with
//! block-diagonal structure; negative block sizes denote diagonal (LP)
//! blocks. Zero-cone equalities have no native encoding, so export writes
//! each equality as a pair of opposing inequalities inside one diagonal
//! block, and import maps diagonal blocks to 1×1 PSD cones.

use std::io::{BufRead, BufReader};
use std::path::Path;

use super::{svec_index, svec_len, ConicProgram, PsdBlock, SparseTriplets, VarKind, VarLayout};
use crate::{Error, Result};

/// Write a program in SDPA sparse format.
pub fn export_sdpa(prog: &ConicProgram, path: &Path) -> Result<()> {
    let display = path.display().to_string();
    let mut out = String::new();
    out.push_str("* covlqr conic program\n");

    let m = prog.num_vars;
    let eq_rows = prog.eq_matrix.rows;
    let mut block_sizes: Vec<i64> = prog.psd_blocks.iter().map(|b| b.dim as i64).collect();
    if eq_rows > 0 {
        block_sizes.push(-(2 * eq_rows as i64));
    }

    out.push_str(&format!("{m}\n"));
    out.push_str(&format!("{}\n", block_sizes.len()));
    out.push_str(
        &(block_sizes
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(" ")
            + "\n"),
    );
    let c = prog.objective_dense();
    out.push_str(
        &(c.iter()
            .map(|v| format!("{v}"))
            .collect::<Vec<_>>()
            .join(" ")
            + "\n"),
    );

    let sqrt2 = std::f64::consts::SQRT_2;
    // PSD blocks: block value = Σ xᵢ·smat(affine eᵢ) + smat(constant), so
    // Fᵢ = smat(affine eᵢ) and F₀ = −smat(constant). Entries are matrix
    // values: divide packed off-diagonals by √2.
    for (bi, block) in prog.psd_blocks.iter().enumerate() {
        let blkno = bi + 1;
        for (row, &v) in block.constant.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let (i, j) = unpack_svec_row(row);
            let value = if i == j { -v } else { -v / sqrt2 };
            out.push_str(&format!("0 {blkno} {} {} {value}\n", i + 1, j + 1));
        }
        let mut entries = block.affine.entries.clone();
        entries.sort_by_key(|&(r, c, _)| (c, r));
        for (row, col, v) in entries {
            let (i, j) = unpack_svec_row(row);
            let value = if i == j { v } else { v / sqrt2 };
            out.push_str(&format!(
                "{} {blkno} {} {} {value}\n",
                col + 1,
                i + 1,
                j + 1
            ));
        }
    }

    // Equalities as paired inequalities in one trailing diagonal block.
    if eq_rows > 0 {
        let blkno = prog.psd_blocks.len() + 1;
        for (row, &rhs) in prog.eq_rhs.iter().enumerate() {
            if rhs != 0.0 {
                out.push_str(&format!("0 {blkno} {} {} {rhs}\n", row + 1, row + 1));
                out.push_str(&format!(
                    "0 {blkno} {} {} {}\n",
                    eq_rows + row + 1,
                    eq_rows + row + 1,
                    -rhs
                ));
            }
        }
        let mut entries = prog.eq_matrix.entries.clone();
        entries.sort_by_key(|&(r, c, _)| (c, r));
        for (row, col, v) in entries {
            out.push_str(&format!(
                "{} {blkno} {} {} {v}\n",
                col + 1,
                row + 1,
                row + 1
            ));
            out.push_str(&format!(
                "{} {blkno} {} {} {}\n",
                col + 1,
                eq_rows + row + 1,
                eq_rows + row + 1,
                -v
            ));
        }
    }

    std::fs::write(path, out).map_err(|e| Error::io(display, e))
}

fn unpack_svec_row(row: usize) -> (usize, usize) {
    let mut j = 0;
    while svec_len(j + 1) <= row {
        j += 1;
    }
    (row - svec_len(j), j)
}

/// Read a program in SDPA sparse format.
///
/// Diagonal blocks become runs of 1×1 PSD cones; the imported program
/// carries a single rectangular variable span named `x`.
pub fn import_sdpa(path: &Path) -> Result<ConicProgram> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(display.clone(), e))?;
    let reader = BufReader::new(file);

    let parse_err = |line: usize, message: String| Error::Parse {
        path: display.clone(),
        line,
        message,
    };

    // Strip comments and blank lines but remember source line numbers.
    let mut rows: Vec<(usize, String)> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(display.clone(), e))?;
        let trimmed = line.trim().to_string();
        if trimmed.is_empty() || trimmed.starts_with('*') || trimmed.starts_with('"') {
            continue;
        }
        rows.push((idx + 1, trimmed));
    }
    let mut it = rows.into_iter();

    let (ln, m_line) = it
        .next()
        .ok_or_else(|| parse_err(1, "missing variable count".into()))?;
    let num_vars: usize = first_token(&m_line)
        .parse()
        .map_err(|_| parse_err(ln, format!("bad variable count `{m_line}`")))?;

    let (ln, nb_line) = it
        .next()
        .ok_or_else(|| parse_err(ln, "missing block count".into()))?;
    let nblocks: usize = first_token(&nb_line)
        .parse()
        .map_err(|_| parse_err(ln, format!("bad block count `{nb_line}`")))?;

    let mut block_sizes: Vec<i64> = Vec::new();
    let mut ln_sizes = ln;
    if nblocks > 0 {
        let (ln2, sz_line) = it
            .next()
            .ok_or_else(|| parse_err(ln, "missing block sizes".into()))?;
        ln_sizes = ln2;
        for tok in sz_line
            .split(|c: char| {
                c.is_whitespace() || c == ',' || c == '(' || c == ')' || c == '{' || c == '}'
            })
            .filter(|t| !t.is_empty())
        {
            let v: i64 = tok
                .parse()
                .map_err(|_| parse_err(ln2, format!("bad block size `{tok}`")))?;
            block_sizes.push(v);
        }
        if block_sizes.len() != nblocks {
            return Err(parse_err(
                ln2,
                format!(
                    "expected {nblocks} block sizes, found {}",
                    block_sizes.len()
                ),
            ));
        }
    }

    let mut objective_dense = vec![0.0f64; num_vars];
    if num_vars > 0 {
        let (ln3, c_line) = it
            .next()
            .ok_or_else(|| parse_err(ln_sizes, "missing objective vector".into()))?;
        let toks: Vec<&str> = c_line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .collect();
        if toks.len() != num_vars {
            return Err(parse_err(
                ln3,
                format!(
                    "expected {num_vars} objective entries, found {}",
                    toks.len()
                ),
            ));
        }
        for (k, tok) in toks.iter().enumerate() {
            objective_dense[k] = tok
                .parse()
                .map_err(|_| parse_err(ln3, format!("bad objective entry `{tok}`")))?;
        }
    }

    // One PSD cone per positive block; |size| 1×1 cones per diagonal block.
    // `cone_of_block[b]` records (first cone index, dim, diagonal?).
    struct BlockInfo {
        first_cone: usize,
        dim: usize,
        diagonal: bool,
    }
    let mut infos = Vec::with_capacity(block_sizes.len());
    let mut cones: Vec<(usize, SparseTriplets, Vec<f64>)> = Vec::new();
    for &size in &block_sizes {
        if size >= 0 {
            let dim = size as usize;
            infos.push(BlockInfo {
                first_cone: cones.len(),
                dim,
                diagonal: false,
            });
            cones.push((
                dim,
                SparseTriplets::new(svec_len(dim), num_vars),
                vec![0.0; svec_len(dim)],
            ));
        } else {
            let dim = (-size) as usize;
            infos.push(BlockInfo {
                first_cone: cones.len(),
                dim,
                diagonal: true,
            });
            for _ in 0..dim {
                cones.push((1, SparseTriplets::new(1, num_vars), vec![0.0]));
            }
        }
    }

    let sqrt2 = std::f64::consts::SQRT_2;
    for (ln, entry) in it {
        let toks: Vec<&str> = entry.split_whitespace().collect();
        if toks.len() != 5 {
            return Err(parse_err(
                ln,
                format!("expected `matno blkno i j value`, got `{entry}`"),
            ));
        }
        let matno: usize = toks[0]
            .parse()
            .map_err(|_| parse_err(ln, format!("bad matrix index `{}`", toks[0])))?;
        let blkno: usize = toks[1]
            .parse()
            .map_err(|_| parse_err(ln, format!("bad block index `{}`", toks[1])))?;
        let i: usize = toks[2]
            .parse()
            .map_err(|_| parse_err(ln, format!("bad row index `{}`", toks[2])))?;
        let j: usize = toks[3]
            .parse()
            .map_err(|_| parse_err(ln, format!("bad column index `{}`", toks[3])))?;
        let value: f64 = toks[4]
            .parse()
            .map_err(|_| parse_err(ln, format!("bad value `{}`", toks[4])))?;
        if matno > num_vars {
            return Err(parse_err(ln, format!("matrix index {matno} out of range")));
        }
        if blkno == 0 || blkno > infos.len() {
            return Err(parse_err(ln, format!("block index {blkno} out of range")));
        }
        let info = &infos[blkno - 1];
        if i == 0 || j == 0 || i > info.dim || j > info.dim {
            return Err(parse_err(
                ln,
                format!("entry ({i},{j}) outside block {blkno}"),
            ));
        }
        let (i0, j0) = (i - 1, j - 1);
        let (lo, hi) = (i0.min(j0), i0.max(j0));

        let (cone_idx, svec_row, scale) = if info.diagonal {
            if lo != hi {
                return Err(parse_err(
                    ln,
                    format!("off-diagonal entry ({i},{j}) in diagonal block {blkno}"),
                ));
            }
            (info.first_cone + lo, 0usize, 1.0)
        } else {
            (
                info.first_cone,
                svec_index(lo, hi),
                if lo == hi { 1.0 } else { sqrt2 },
            )
        };
        let cone = &mut cones[cone_idx];
        if matno == 0 {
            // F₀ enters the block value with a minus sign.
            cone.2[svec_row] -= value * scale;
        } else {
            cone.1.push(svec_row, matno - 1, value * scale);
        }
    }

    let mut layout = VarLayout::default();
    if num_vars > 0 {
        layout.push("x", VarKind::Rectangular(num_vars, 1));
    }
    let objective = objective_dense
        .iter()
        .enumerate()
        .filter(|&(_, &v)| v != 0.0)
        .map(|(k, &v)| (k, v))
        .collect();

    Ok(ConicProgram {
        num_vars,
        objective,
        eq_matrix: SparseTriplets::new(0, num_vars),
        eq_rhs: Vec::new(),
        psd_blocks: cones
            .into_iter()
            .map(|(dim, affine, constant)| PsdBlock {
                dim,
                affine,
                constant,
            })
            .collect(),
        layout,
    })
}

fn first_token(line: &str) -> &str {
    line.split(|c: char| c.is_whitespace() || c == ',' || c == '=')
        .find(|t| !t.is_empty())
        .unwrap_or("")
}
