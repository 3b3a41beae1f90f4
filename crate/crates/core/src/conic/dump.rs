//! Plain-text sparse triplet format for conic programs.
//!
//! ```text
//! conic-program 1
//! blocks <p>
//! psd <d> | nonneg <m> | free <f>      (one line per block, in order)
//! coords <n>
//! offset <value>
//! objective <nnz>
//! <col> <value>                          (nnz lines, zero-based)
//! constraints <rows> <nnz>
//! <row> <col> <value>                    (nnz lines, zero-based)
//! rhs <rows>
//! <value>                                (one line per row)
//! end
//! ```
//!
//! PSD coordinates use the packing of [`crate::symmat::pack`]: entry `(i, j)`
//! with `i >= j` of a `d x d` block sits at `i(i+1)/2 + j` past the block
//! offset, and off-diagonal coordinates carry a factor `sqrt(2)`. Floats are
//! printed in shortest round-trip form, so reading a dump gives back the
//! identical program.

use std::io::{BufRead, Write};

use super::{Cone, ConicProgram};
use crate::error::{Error, Result};

const MAGIC: &str = "conic-program 1";

pub fn write_dump<W: Write>(p: &ConicProgram, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "blocks {}", p.cones().len())?;
    for cone in p.cones() {
        match cone {
            Cone::Psd(d) => writeln!(w, "psd {d}")?,
            Cone::NonNeg(m) => writeln!(w, "nonneg {m}")?,
            Cone::Free(f) => writeln!(w, "free {f}")?,
        }
    }
    writeln!(w, "coords {}", p.num_coords())?;
    writeln!(w, "offset {:e}", p.offset)?;
    let obj: Vec<(usize, f64)> =
        p.objective().iter().copied().enumerate().filter(|&(_, v)| v != 0.0).collect();
    writeln!(w, "objective {}", obj.len())?;
    for (j, v) in obj {
        writeln!(w, "{j} {v:e}")?;
    }
    let nnz: usize = p.constraints().iter().map(|c| c.row.len()).sum();
    writeln!(w, "constraints {} {nnz}", p.num_constraints())?;
    for (i, c) in p.constraints().iter().enumerate() {
        for &(j, v) in &c.row {
            writeln!(w, "{i} {j} {v:e}")?;
        }
    }
    writeln!(w, "rhs {}", p.num_constraints())?;
    for c in p.constraints() {
        writeln!(w, "{:e}", c.rhs)?;
    }
    writeln!(w, "end")?;
    w.flush()
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    line_no: usize,
}

impl<R: BufRead> Lines<R> {
    fn next_fields(&mut self) -> Result<Vec<String>> {
        loop {
            self.line_no += 1;
            let line = self
                .inner
                .next()
                .ok_or_else(|| Error::InvalidInput(format!("dump ends early at line {}", self.line_no)))??;
            let t = line.trim();
            if !t.is_empty() {
                return Ok(t.split_whitespace().map(str::to_string).collect());
            }
        }
    }

    fn bad(&self, what: &str) -> Error {
        Error::InvalidInput(format!("dump line {}: {what}", self.line_no))
    }

    fn keyword(&mut self, key: &str, count: usize) -> Result<Vec<String>> {
        let f = self.next_fields()?;
        if f.first().map(String::as_str) != Some(key) || f.len() != count + 1 {
            return Err(self.bad(&format!("expected `{key}` with {count} value(s)")));
        }
        Ok(f[1..].to_vec())
    }

    fn scalar<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let f = self.keyword(key, 1)?;
        self.parse(&f[0])
    }

    fn parse<T: std::str::FromStr>(&self, s: &str) -> Result<T> {
        s.parse().map_err(|_| self.bad(&format!("cannot parse `{s}`")))
    }
}

/// Reads a program written by [`write_dump`].
pub fn read_dump<R: BufRead>(r: R) -> Result<ConicProgram> {
    let mut lines = Lines { inner: r.lines(), line_no: 0 };
    if lines.next_fields()?.join(" ") != MAGIC {
        return Err(lines.bad("missing header"));
    }
    let nblocks: usize = lines.scalar("blocks")?;
    let mut cones = Vec::with_capacity(nblocks);
    for _ in 0..nblocks {
        let f = lines.next_fields()?;
        if f.len() != 2 {
            return Err(lines.bad("expected a block line"));
        }
        let size: usize = lines.parse(&f[1])?;
        cones.push(match f[0].as_str() {
            "psd" => Cone::Psd(size),
            "nonneg" => Cone::NonNeg(size),
            "free" => Cone::Free(size),
            other => return Err(lines.bad(&format!("unknown block kind `{other}`"))),
        });
    }
    let mut p = ConicProgram::new(cones);
    let coords: usize = lines.scalar("coords")?;
    if coords != p.num_coords() {
        return Err(lines.bad("coordinate count does not match the block layout"));
    }
    p.offset = lines.scalar("offset")?;
    let nobj: usize = lines.scalar("objective")?;
    for _ in 0..nobj {
        let f = lines.next_fields()?;
        if f.len() != 2 {
            return Err(lines.bad("expected `col value`"));
        }
        let j: usize = lines.parse(&f[0])?;
        if j >= coords {
            return Err(lines.bad("objective column out of range"));
        }
        p.set_objective(j, lines.parse(&f[1])?);
    }
    let head = lines.keyword("constraints", 2)?;
    let nrows: usize = lines.parse(&head[0])?;
    let nnz: usize = lines.parse(&head[1])?;
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nrows];
    for _ in 0..nnz {
        let f = lines.next_fields()?;
        if f.len() != 3 {
            return Err(lines.bad("expected `row col value`"));
        }
        let i: usize = lines.parse(&f[0])?;
        if i >= nrows {
            return Err(lines.bad("row index out of range"));
        }
        rows[i].push((lines.parse(&f[1])?, lines.parse(&f[2])?));
    }
    let nrhs: usize = lines.scalar("rhs")?;
    if nrhs != nrows {
        return Err(lines.bad("rhs count does not match the row count"));
    }
    for row in &rows {
        let f = lines.next_fields()?;
        if f.len() != 1 {
            return Err(lines.bad("expected one rhs value"));
        }
        let rhs: f64 = lines.parse(&f[0])?;
        p.add_constraint(row, rhs)?;
    }
    if lines.next_fields()? != ["end"] {
        return Err(lines.bad("expected `end`"));
    }
    Ok(p)
}
