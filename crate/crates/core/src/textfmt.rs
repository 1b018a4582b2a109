//! Line-oriented text dump of models and LPs for cross-checking with other
//! solvers.
//!
//! ```text
//! MOCTSVM-MODEL 1
//! META n p k depth c1 c2 c3 c8 omega_bound big_m
//! VARS <count>
//! V <id> <name> <B|C> <lb> <ub>
//! ROWS <count>
//! R <id> <label> <L|E|G> <rhs> <nnz> <var>:<coef> ...
//! QUADS <count>
//! Q <id> <epigraph var> <factor> <nvars> <var> ...
//! OBJ <nnz> <var>:<coef> ...
//! END
//! ```
//!
//! An LP uses the header `MOCTSVM-LP 1`, has no `META` line and no quadratic
//! rows, and names its variables `x<id>`. Numbers use Rust's shortest
//! round-trip formatting, with `inf` and `-inf` for infinite bounds.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::formulation::{Constraint, CostConfig, MiqpModel, ModelOptions, QuadEpigraph, VarKind, VarLayout, Variable};
use crate::lp::{LpProblem, Row, Sense};

const MODEL_HEADER: &str = "MOCTSVM-MODEL 1";
const LP_HEADER: &str = "MOCTSVM-LP 1";

fn sense_code(s: Sense) -> char {
    match s {
        Sense::Le => 'L',
        Sense::Eq => 'E',
        Sense::Ge => 'G',
    }
}

fn write_row(out: &mut String, id: usize, label: &str, row: &Row) {
    write!(out, "R {id} {label} {} {:?} {}", sense_code(row.sense), row.rhs, row.coeffs.len()).unwrap();
    for &(j, a) in &row.coeffs {
        write!(out, " {j}:{a:?}").unwrap();
    }
    out.push('\n');
}

fn write_objective(out: &mut String, obj: &[(usize, f64)]) {
    write!(out, "OBJ {}", obj.len()).unwrap();
    for &(j, c) in obj {
        write!(out, " {j}:{c:?}").unwrap();
    }
    out.push('\n');
}

pub fn write_model(m: &MiqpModel) -> String {
    let mut out = String::new();
    let l = &m.layout;
    let c = &m.costs;
    writeln!(out, "{MODEL_HEADER}").unwrap();
    writeln!(
        out,
        "META {} {} {} {} {:?} {:?} {:?} {:?} {:?} {:?}",
        l.n,
        l.p,
        l.k,
        l.depth,
        c.c1,
        c.c2,
        c.c3,
        m.c8,
        m.options.omega_bound,
        m.options.split_big_m(l.p)
    )
    .unwrap();
    writeln!(out, "VARS {}", m.variables.len()).unwrap();
    for (j, v) in m.variables.iter().enumerate() {
        let kind = if v.kind == VarKind::Binary { 'B' } else { 'C' };
        writeln!(out, "V {j} {} {kind} {:?} {:?}", v.name, v.lb, v.ub).unwrap();
    }
    writeln!(out, "ROWS {}", m.constraints.len()).unwrap();
    for (i, con) in m.constraints.iter().enumerate() {
        write_row(&mut out, i, &con.label, &con.row);
    }
    writeln!(out, "QUADS {}", m.quads.len()).unwrap();
    for (i, q) in m.quads.iter().enumerate() {
        write!(out, "Q {i} {} {:?} {}", q.epigraph, q.factor, q.vars.len()).unwrap();
        for j in &q.vars {
            write!(out, " {j}").unwrap();
        }
        out.push('\n');
    }
    write_objective(&mut out, &m.objective);
    out.push_str("END\n");
    out
}

pub fn write_lp(p: &LpProblem) -> String {
    let mut out = String::new();
    writeln!(out, "{LP_HEADER}").unwrap();
    writeln!(out, "VARS {}", p.num_vars()).unwrap();
    for (j, &(lb, ub)) in p.bounds.iter().enumerate() {
        writeln!(out, "V {j} x{j} C {lb:?} {ub:?}").unwrap();
    }
    writeln!(out, "ROWS {}", p.rows.len()).unwrap();
    for (i, row) in p.rows.iter().enumerate() {
        write_row(&mut out, i, &format!("r{i}"), row);
    }
    let obj: Vec<(usize, f64)> = p.objective.iter().copied().enumerate().filter(|&(_, c)| c != 0.0).collect();
    write_objective(&mut out, &obj);
    out.push_str("END\n");
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self { inner: text.lines().enumerate(), line: 0 }
    }

    fn next(&mut self) -> Result<Vec<&'a str>> {
        for (i, l) in self.inner.by_ref() {
            let l = l.trim();
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            self.line = i + 1;
            return Ok(l.split_whitespace().collect());
        }
        Err(Error::Format("unexpected end of input".into()))
    }

    fn err(&self, msg: impl std::fmt::Display) -> Error {
        Error::Format(format!("line {}: {msg}", self.line))
    }

    fn num<T: std::str::FromStr>(&self, tok: Option<&&str>) -> Result<T> {
        let s = tok.ok_or_else(|| self.err("missing field"))?;
        s.parse().map_err(|_| self.err(format!("cannot parse {s:?}")))
    }

    fn expect(&mut self, keyword: &str) -> Result<Vec<&'a str>> {
        let toks = self.next()?;
        if toks.first() != Some(&keyword) {
            return Err(self.err(format!("expected {keyword}")));
        }
        Ok(toks)
    }

    fn count(&mut self, keyword: &str) -> Result<usize> {
        let toks = self.expect(keyword)?;
        self.num(toks.get(1))
    }

    fn pairs(&self, toks: &[&str], nvars: usize) -> Result<Vec<(usize, f64)>> {
        if toks.len() != nvars {
            return Err(self.err(format!("expected {nvars} entries, found {}", toks.len())));
        }
        toks.iter()
            .map(|t| {
                let (j, a) = t.split_once(':').ok_or_else(|| self.err(format!("bad entry {t:?}")))?;
                let j: usize = j.parse().map_err(|_| self.err(format!("bad index {j:?}")))?;
                let a: f64 = a.parse().map_err(|_| self.err(format!("bad coefficient {a:?}")))?;
                Ok((j, a))
            })
            .collect()
    }
}

struct Body {
    variables: Vec<Variable>,
    rows: Vec<(String, Row)>,
    quads: Vec<QuadEpigraph>,
    objective: Vec<(usize, f64)>,
}

fn read_body(lines: &mut Lines, with_quads: bool) -> Result<Body> {
    let nv = lines.count("VARS")?;
    let mut variables = Vec::with_capacity(nv);
    for j in 0..nv {
        let t = lines.expect("V")?;
        if t.len() != 6 || lines.num::<usize>(t.get(1))? != j {
            return Err(lines.err(format!("malformed variable {j}")));
        }
        let kind = match t[3] {
            "B" => VarKind::Binary,
            "C" => VarKind::Continuous,
            k => return Err(lines.err(format!("unknown kind {k:?}"))),
        };
        let (lb, ub): (f64, f64) = (lines.num(t.get(4))?, lines.num(t.get(5))?);
        if lb.is_nan() || ub.is_nan() {
            return Err(lines.err("NaN bound"));
        }
        variables.push(Variable { name: t[2].to_string(), lb, ub, kind });
    }
    let check = |pairs: &[(usize, f64)], lines: &Lines| -> Result<()> {
        if let Some(&(j, _)) = pairs.iter().find(|&&(j, _)| j >= nv) {
            return Err(lines.err(format!("variable {j} out of range")));
        }
        Ok(())
    };
    let nr = lines.count("ROWS")?;
    let mut rows = Vec::with_capacity(nr);
    for i in 0..nr {
        let t = lines.expect("R")?;
        if t.len() < 6 || lines.num::<usize>(t.get(1))? != i {
            return Err(lines.err(format!("malformed row {i}")));
        }
        let sense = match t[3] {
            "L" => Sense::Le,
            "E" => Sense::Eq,
            "G" => Sense::Ge,
            s => return Err(lines.err(format!("unknown sense {s:?}"))),
        };
        let rhs: f64 = lines.num(t.get(4))?;
        let nnz: usize = lines.num(t.get(5))?;
        let coeffs = lines.pairs(&t[6..], nnz)?;
        check(&coeffs, lines)?;
        rows.push((t[2].to_string(), Row::new(coeffs, sense, rhs)));
    }
    let mut quads = Vec::new();
    if with_quads {
        let nq = lines.count("QUADS")?;
        for i in 0..nq {
            let t = lines.expect("Q")?;
            if t.len() < 5 || lines.num::<usize>(t.get(1))? != i {
                return Err(lines.err(format!("malformed quadratic row {i}")));
            }
            let epigraph: usize = lines.num(t.get(2))?;
            let factor: f64 = lines.num(t.get(3))?;
            let k: usize = lines.num(t.get(4))?;
            if t.len() != 5 + k {
                return Err(lines.err("wrong number of quadratic variables"));
            }
            let vars = t[5..].iter().map(|s| lines.num(Some(s))).collect::<Result<Vec<usize>>>()?;
            if epigraph >= nv || vars.iter().any(|&j| j >= nv) {
                return Err(lines.err("quadratic row references a missing variable"));
            }
            quads.push(QuadEpigraph { epigraph, vars, factor });
        }
    }
    let t = lines.expect("OBJ")?;
    let nnz: usize = lines.num(t.get(1))?;
    let objective = lines.pairs(&t[2..], nnz)?;
    check(&objective, lines)?;
    lines.expect("END")?;
    Ok(Body { variables, rows, quads, objective })
}

pub fn read_model(text: &str) -> Result<MiqpModel> {
    let mut lines = Lines::new(text);
    if lines.next()?.join(" ") != MODEL_HEADER {
        return Err(lines.err(format!("expected header {MODEL_HEADER:?}")));
    }
    let meta = lines.expect("META")?;
    if meta.len() != 11 {
        return Err(lines.err("META needs 10 fields"));
    }
    let (n, p, k): (usize, usize, usize) = (lines.num(meta.get(1))?, lines.num(meta.get(2))?, lines.num(meta.get(3))?);
    let depth: u32 = lines.num(meta.get(4))?;
    let costs = CostConfig::new(lines.num(meta.get(5))?, lines.num(meta.get(6))?, lines.num(meta.get(7))?)?;
    let c8: f64 = lines.num(meta.get(8))?;
    let omega_bound: f64 = lines.num(meta.get(9))?;
    let big_m: f64 = lines.num(meta.get(10))?;
    if depth < 1 || depth > 20 {
        return Err(lines.err("depth out of range"));
    }
    let layout = VarLayout::new(n, p, k, depth);
    let body = read_body(&mut lines, true)?;
    if body.variables.len() != layout.num_vars() {
        return Err(Error::Format(format!(
            "META implies {} variables but {} are listed",
            layout.num_vars(),
            body.variables.len()
        )));
    }
    let options = ModelOptions { omega_bound, big_m_split: Some(big_m), c8_constant: Some(c8), ..ModelOptions::default() };
    Ok(MiqpModel {
        variables: body.variables,
        constraints: body.rows.into_iter().map(|(label, row)| Constraint { label, row }).collect(),
        quads: body.quads,
        objective: body.objective,
        layout,
        costs,
        options,
        c8,
        data: None,
    })
}

pub fn read_lp(text: &str) -> Result<LpProblem> {
    let mut lines = Lines::new(text);
    if lines.next()?.join(" ") != LP_HEADER {
        return Err(lines.err(format!("expected header {LP_HEADER:?}")));
    }
    let body = read_body(&mut lines, false)?;
    let mut objective = vec![0.0; body.variables.len()];
    for (j, c) in body.objective {
        objective[j] += c;
    }
    let mut p = LpProblem::new(objective, body.variables.iter().map(|v| (v.lb, v.ub)).collect());
    p.rows = body.rows.into_iter().map(|(_, r)| r).collect();
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Dataset;
    use crate::formulation::{build_model, ValidInequalities};
    use crate::topology::TreeTopology;
    use proptest::prelude::*;

    fn model(rows: Vec<Vec<f64>>, y: Vec<usize>, depth: u32) -> MiqpModel {
        let p = rows[0].len();
        let k = *y.iter().max().unwrap();
        let d = Dataset::new(rows, y, (0..p).map(|j| format!("f{j}")).collect(), (1..=k).map(|c| c.to_string()).collect())
            .unwrap();
        let opts = ModelOptions { valid_inequalities: ValidInequalities::all(), ..ModelOptions::default() };
        build_model(&d, &TreeTopology::new(depth).unwrap(), CostConfig::new(0.1, 3.0, 1e-2).unwrap(), &opts).unwrap()
    }

    #[test]
    fn model_round_trip() {
        let m = model(vec![vec![0.0, 0.25], vec![1.0, 0.5], vec![0.3, 1.0]], vec![1, 2, 1], 2);
        let text = write_model(&m);
        let back = read_model(&text).unwrap();
        assert_eq!(back.variables, m.variables);
        assert_eq!(back.constraints, m.constraints);
        assert_eq!(back.quads, m.quads);
        assert_eq!(back.objective, m.objective);
        assert_eq!(back.layout, m.layout);
        assert_eq!(back.costs, m.costs);
        assert_eq!(write_model(&back), text);
    }

    #[test]
    fn lp_round_trip_keeps_infinities() {
        let mut p = LpProblem::new(vec![1.0, -0.5, 0.0], vec![(0.0, f64::INFINITY), (f64::NEG_INFINITY, 2.0), (-1.0, 1.0)]);
        p.add_row(vec![(0, 1.0), (2, 1e-17)], Sense::Ge, 0.1);
        p.add_row(vec![], Sense::Eq, 0.0);
        let back = read_lp(&write_lp(&p)).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn malformed_documents() {
        let m = model(vec![vec![0.0], vec![1.0]], vec![1, 2], 1);
        let good = write_model(&m);
        assert!(read_model("").is_err());
        assert!(read_model(&good.replace("MOCTSVM-MODEL 1", "MOCTSVM-MODEL 2")).is_err());
        assert!(read_model(&good.replace("END\n", "")).is_err());
        let first_row = good.lines().find(|l| l.starts_with("R 0 ")).unwrap();
        assert!(read_model(&good.replace(first_row, &first_row.replace(" G ", " X "))).is_err());
        assert!(read_lp(&good).is_err());
    }

    proptest! {
        #[test]
        fn random_lps_round_trip(
            obj in proptest::collection::vec(-1e6f64..1e6, 1..6),
            rows in proptest::collection::vec((proptest::collection::vec((0usize..6, -1e3f64..1e3), 0..6), 0u8..3, -10.0f64..10.0), 0..6),
        ) {
            let n = obj.len();
            let mut p = LpProblem::new(obj, vec![(-1.5, f64::INFINITY); n]);
            for (coeffs, s, rhs) in rows {
                let coeffs = coeffs.into_iter().filter(|&(j, _)| j < n).collect();
                let sense = [Sense::Le, Sense::Eq, Sense::Ge][s as usize];
                p.add_row(coeffs, sense, rhs);
            }
            let back = read_lp(&write_lp(&p)).unwrap();
            prop_assert_eq!(back, p);
        }
    }
}
