//! Line-oriented text form of a [`LinearProgram`].
//!
//! ```text
//! lp 1
//! sense max
//! var <name> <lower> <upper>
//! obj <name> <coeff>
//! con <name> <= | = | >= <rhs> : <var> <coeff> <var> <coeff> ...
//! ```
//!
//! Numbers use Rust's shortest round-trip formatting, so parsing the output
//! reproduces the program bit for bit. Lines starting with `#` are comments.

use super::{LinearProgram, Relation, Sense};
use crate::error::{Error, Result};

impl LinearProgram {
    pub fn to_text(&self) -> String {
        let mut out = String::from("lp 1\n");
        out.push_str(match self.sense {
            Sense::Maximize => "sense max\n",
            Sense::Minimize => "sense min\n",
        });
        for v in &self.variables {
            out.push_str(&format!("var {} {:?} {:?}\n", v.name, v.lower, v.upper));
        }
        for (v, &c) in self.variables.iter().zip(&self.objective) {
            if c != 0.0 {
                out.push_str(&format!("obj {} {:?}\n", v.name, c));
            }
        }
        for con in &self.constraints {
            out.push_str(&format!("con {} {} {:?} :", con.name, con.relation.symbol(), con.rhs));
            for &(v, c) in &con.terms {
                out.push_str(&format!(" {} {:?}", self.variables[v.0].name, c));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        match lines.next() {
            Some((_, "lp 1")) => {}
            _ => return Err(Error::invalid("missing `lp 1` header")),
        }
        let sense = match lines.next() {
            Some((_, "sense max")) => Sense::Maximize,
            Some((_, "sense min")) => Sense::Minimize,
            _ => return Err(Error::invalid("missing `sense` line")),
        };
        let mut lp = LinearProgram::new(sense);
        for (no, line) in lines {
            let bad = |what: &str| Error::invalid(format!("line {no}: {what}"));
            let num = |tok: Option<&str>| -> Result<f64> {
                tok.ok_or_else(|| bad("missing number"))?.parse::<f64>().map_err(|_| bad("bad number"))
            };
            let mut tok = line.split_whitespace();
            match tok.next() {
                Some("var") => {
                    let name = tok.next().ok_or_else(|| bad("missing name"))?;
                    let lo = num(tok.next())?;
                    let hi = num(tok.next())?;
                    lp.add_variable(name, lo, hi)?;
                }
                Some("obj") => {
                    let name = tok.next().ok_or_else(|| bad("missing name"))?;
                    let var = lp.var_id(name).ok_or_else(|| bad("unknown variable"))?;
                    lp.set_objective(var, num(tok.next())?);
                }
                Some("con") => {
                    let name = tok.next().ok_or_else(|| bad("missing name"))?;
                    let relation = match tok.next() {
                        Some("<=") => Relation::Le,
                        Some("=") => Relation::Eq,
                        Some(">=") => Relation::Ge,
                        _ => return Err(bad("bad relation")),
                    };
                    let rhs = num(tok.next())?;
                    if tok.next() != Some(":") {
                        return Err(bad("expected `:`"));
                    }
                    let mut terms = Vec::new();
                    while let Some(var) = tok.next() {
                        let id = lp.var_id(var).ok_or_else(|| bad("unknown variable"))?;
                        terms.push((id, num(tok.next())?));
                    }
                    lp.add_constraint(name, terms, relation, rhs)?;
                }
                _ => return Err(bad("unknown directive")),
            }
        }
        Ok(lp)
    }
}
