//! Sparse LU factorization of a simplex basis with product-form updates.
//!
//! Rows of the basis are constraint rows; columns are basis positions. The
//! factorization eliminates in Markowitz order with threshold pivoting and
//! records, per elimination step, the multipliers (L) and the remaining part
//! of the pivot row (U). Basis changes are appended as eta columns until the
//! caller refactors.

const PIVOT_THRESHOLD: f64 = 0.1;
const ZERO_TOL: f64 = 1e-13;
const SINGULAR_TOL: f64 = 1e-11;

/// Positions and rows left unpivoted by a failed factorization.
#[derive(Debug, Clone)]
pub(crate) struct Singular {
    pub positions: Vec<usize>,
    pub rows: Vec<usize>,
}

#[derive(Debug, Clone)]
struct Eta {
    pos: usize,
    pivot: f64,
    entries: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub(crate) struct LuFactors {
    m: usize,
    piv_row: Vec<usize>,
    piv_pos: Vec<usize>,
    piv_val: Vec<f64>,
    l_start: Vec<usize>,
    l_idx: Vec<usize>,
    l_val: Vec<f64>,
    u_start: Vec<usize>,
    u_idx: Vec<usize>,
    u_val: Vec<f64>,
    etas: Vec<Eta>,
    eta_nnz: usize,
}

impl LuFactors {
    /// Factorizes the `m x m` matrix whose column at position `c` is given by
    /// `column(c)` as `(row, value)` pairs.
    pub fn factorize<'a, F>(m: usize, column: F) -> Result<Self, Singular>
    where
        F: Fn(usize) -> &'a [(usize, f64)],
    {
        // Active submatrix, row-wise with values and column-wise by pattern.
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); m];
        for c in 0..m {
            for &(r, v) in column(c) {
                if v != 0.0 {
                    rows[r].push((c, v));
                    cols[c].push(r);
                }
            }
        }
        let mut col_count: Vec<usize> = cols.iter().map(Vec::len).collect();
        let mut row_active = vec![true; m];
        let mut col_active = vec![true; m];

        let mut f = LuFactors {
            m,
            piv_row: Vec::with_capacity(m),
            piv_pos: Vec::with_capacity(m),
            piv_val: Vec::with_capacity(m),
            l_start: vec![0],
            l_idx: Vec::new(),
            l_val: Vec::new(),
            u_start: vec![0],
            u_idx: Vec::new(),
            u_val: Vec::new(),
            etas: Vec::new(),
            eta_nnz: 0,
        };

        let mut singles: Vec<usize> = (0..m).filter(|&c| col_count[c] == 1).collect();
        let mut work = vec![0.0; m];
        let mut in_work = vec![false; m];

        for _step in 0..m {
            // Column singletons first, then the sparsest column.
            let mut chosen = None;
            while let Some(c) = singles.pop() {
                if col_active[c] && col_count[c] == 1 {
                    chosen = Some(c);
                    break;
                }
            }
            let c = match chosen {
                Some(c) => c,
                None => {
                    let mut best = None;
                    for c in 0..m {
                        if col_active[c] && best.map_or(true, |b: usize| col_count[c] < col_count[b]) {
                            best = Some(c);
                            if col_count[c] <= 1 {
                                break;
                            }
                        }
                    }
                    match best {
                        Some(c) => c,
                        None => break,
                    }
                }
            };

            // Entries of column c in active rows.
            let mut col_max = 0.0f64;
            let mut entries: Vec<(usize, f64)> = Vec::with_capacity(col_count[c]);
            cols[c].retain(|&r| row_active[r]);
            for &r in &cols[c] {
                if let Some(&(_, v)) = rows[r].iter().find(|&&(cc, _)| cc == c) {
                    entries.push((r, v));
                    col_max = col_max.max(v.abs());
                }
            }
            if col_max < SINGULAR_TOL {
                return Err(f.singular(&row_active, &col_active));
            }
            let mut pivot: Option<(usize, f64)> = None;
            for &(r, v) in &entries {
                if v.abs() >= PIVOT_THRESHOLD * col_max {
                    let better = match pivot {
                        None => true,
                        Some((pr, pv)) => {
                            rows[r].len() < rows[pr].len()
                                || (rows[r].len() == rows[pr].len() && v.abs() > pv.abs())
                        }
                    };
                    if better {
                        pivot = Some((r, v));
                    }
                }
            }
            let (pr, pv) = pivot.expect("threshold candidate exists");

            // Record U: pivot row minus the pivot entry.
            let prow = std::mem::take(&mut rows[pr]);
            for &(cc, v) in &prow {
                if cc != c {
                    f.u_idx.push(cc);
                    f.u_val.push(v);
                    col_count[cc] -= 1;
                    if col_count[cc] == 1 {
                        singles.push(cc);
                    }
                }
            }
            f.u_start.push(f.u_idx.len());
            row_active[pr] = false;
            col_active[c] = false;

            // Eliminate column c from the other active rows.
            for &(r, v) in &entries {
                if r == pr {
                    continue;
                }
                let l = v / pv;
                f.l_idx.push(r);
                f.l_val.push(l);
                let row = &mut rows[r];
                row.retain(|&(cc, _)| cc != c);
                for &(cc, val) in row.iter() {
                    work[cc] = val;
                    in_work[cc] = true;
                }
                for &(cc, val) in &prow {
                    if cc == c {
                        continue;
                    }
                    if in_work[cc] {
                        work[cc] -= l * val;
                    } else {
                        work[cc] = -l * val;
                        in_work[cc] = true;
                        row.push((cc, 0.0));
                        cols[cc].push(r);
                        col_count[cc] += 1;
                    }
                }
                row.retain_mut(|e| {
                    let val = work[e.0];
                    in_work[e.0] = false;
                    work[e.0] = 0.0;
                    if val.abs() < ZERO_TOL {
                        false
                    } else {
                        e.1 = val;
                        true
                    }
                });
                // Dropped entries leave stale column patterns; recount.
                for &(cc, _) in &prow {
                    if cc != c && col_active[cc] {
                        let present = rows[r].iter().any(|&(x, _)| x == cc);
                        if !present && cols[cc].contains(&r) {
                            cols[cc].retain(|&x| x != r);
                            col_count[cc] -= 1;
                            if col_count[cc] == 1 {
                                singles.push(cc);
                            }
                        }
                    }
                }
            }
            f.l_start.push(f.l_idx.len());
            f.piv_row.push(pr);
            f.piv_pos.push(c);
            f.piv_val.push(pv);
        }
        if f.piv_row.len() < m {
            return Err(f.singular(&row_active, &col_active));
        }
        Ok(f)
    }

    fn singular(&self, row_active: &[bool], col_active: &[bool]) -> Singular {
        Singular {
            positions: (0..self.m).filter(|&c| col_active[c]).collect(),
            rows: (0..self.m).filter(|&r| row_active[r]).collect(),
        }
    }

    pub fn eta_count(&self) -> usize {
        self.etas.len()
    }

    pub fn eta_nnz(&self) -> usize {
        self.eta_nnz
    }

    /// Solves `B x = b`; `b` is indexed by row, the result by basis position.
    pub fn ftran(&self, b: &mut [f64], out: &mut [f64]) {
        let steps = self.piv_row.len();
        for k in 0..steps {
            let v = b[self.piv_row[k]];
            if v != 0.0 {
                for e in self.l_start[k]..self.l_start[k + 1] {
                    b[self.l_idx[e]] -= self.l_val[e] * v;
                }
            }
        }
        for k in (0..steps).rev() {
            let mut s = b[self.piv_row[k]];
            for e in self.u_start[k]..self.u_start[k + 1] {
                s -= self.u_val[e] * out[self.u_idx[e]];
            }
            out[self.piv_pos[k]] = s / self.piv_val[k];
        }
        for eta in &self.etas {
            let xp = out[eta.pos] / eta.pivot;
            out[eta.pos] = xp;
            if xp != 0.0 {
                for &(i, a) in &eta.entries {
                    out[i] -= a * xp;
                }
            }
        }
    }

    /// Solves `B^T y = c`; `c` is indexed by basis position, the result by row.
    pub fn btran(&self, c: &mut [f64], out: &mut [f64]) {
        for eta in self.etas.iter().rev() {
            let mut s = c[eta.pos];
            for &(i, a) in &eta.entries {
                s -= a * c[i];
            }
            c[eta.pos] = s / eta.pivot;
        }
        let steps = self.piv_row.len();
        for k in 0..steps {
            let z = c[self.piv_pos[k]] / self.piv_val[k];
            out[self.piv_row[k]] = z;
            if z != 0.0 {
                for e in self.u_start[k]..self.u_start[k + 1] {
                    c[self.u_idx[e]] -= self.u_val[e] * z;
                }
            }
        }
        for k in (0..steps).rev() {
            let mut s = 0.0;
            for e in self.l_start[k]..self.l_start[k + 1] {
                s += self.l_val[e] * out[self.l_idx[e]];
            }
            out[self.piv_row[k]] -= s;
        }
    }

    /// Records the replacement of the column at `pos` by a column whose
    /// FTRAN image is `alpha`.
    pub fn push_eta(&mut self, pos: usize, alpha: &[f64]) {
        let entries: Vec<(usize, f64)> = alpha
            .iter()
            .enumerate()
            .filter(|&(i, &a)| i != pos && a.abs() > ZERO_TOL)
            .map(|(i, &a)| (i, a))
            .collect();
        self.eta_nnz += entries.len() + 1;
        self.etas.push(Eta {
            pos,
            pivot: alpha[pos],
            entries,
        });
    }
}
