//! Plain-text model files: a header block, then one line per term with the
//! coefficient followed by `(var, knot, direction)` triples. Numbers use the
//! shortest representation that parses back to the same `f64`.

use std::io::{BufRead, Write};

use super::{Direction, HingeFactor, MarsModel, MarsTerm};
use crate::error::{Error, Result};

const HEADER: &str = "mars 1";

pub fn write_models<W: Write>(w: &mut W, models: &[&MarsModel]) -> Result<()> {
    for m in models {
        writeln!(w, "{HEADER}")?;
        writeln!(w, "n_train {}", m.n_train)?;
        writeln!(w, "n_vars {}", m.n_vars)?;
        writeln!(w, "penalty {}", m.penalty)?;
        writeln!(w, "gcv {}", m.gcv)?;
        writeln!(w, "rss {}", m.rss)?;
        writeln!(w, "terms {}", m.terms.len())?;
        for t in &m.terms {
            write!(w, "{}", t.coefficient)?;
            for f in &t.factors {
                let d = match f.direction {
                    Direction::PlusSide => '+',
                    Direction::MinusSide => '-',
                };
                write!(w, " {} {} {}", f.var, f.knot, d)?;
            }
            writeln!(w)?;
        }
        writeln!(w, "end")?;
    }
    Ok(())
}

fn bad(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Format(format!("line {line}: {msg}"))
}

pub fn read_models<R: BufRead>(r: R) -> Result<Vec<MarsModel>> {
    let lines: Vec<String> = r.lines().collect::<std::io::Result<_>>()?;
    let mut it = lines
        .iter()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.trim()));
    let mut models = Vec::new();
    while let Some((no, line)) = it.next() {
        if line != HEADER {
            return Err(bad(no, format!("expected '{HEADER}'")));
        }
        let mut field = |key: &str| -> Result<String> {
            let (no, line) = it
                .next()
                .ok_or_else(|| Error::Format(format!("missing '{key}'")))?;
            let rest = line
                .strip_prefix(key)
                .and_then(|s| s.strip_prefix(' '))
                .ok_or_else(|| bad(no, format!("expected '{key}'")))?;
            Ok(rest.to_string())
        };
        let num = |s: String| {
            s.parse::<f64>()
                .map_err(|e| Error::Format(format!("{s}: {e}")))
        };
        let int = |s: String| {
            s.parse::<usize>()
                .map_err(|e| Error::Format(format!("{s}: {e}")))
        };
        let n_train = int(field("n_train")?)?;
        let n_vars = int(field("n_vars")?)?;
        let penalty = num(field("penalty")?)?;
        let gcv = num(field("gcv")?)?;
        let rss = num(field("rss")?)?;
        let n_terms = int(field("terms")?)?;
        let mut terms = Vec::with_capacity(n_terms);
        for _ in 0..n_terms {
            let (no, line) = it
                .next()
                .ok_or_else(|| Error::Format("truncated term list".into()))?;
            let tok: Vec<&str> = line.split_whitespace().collect();
            if tok.is_empty() || !(tok.len() - 1).is_multiple_of(3) {
                return Err(bad(no, "malformed term"));
            }
            let coefficient = tok[0].parse::<f64>().map_err(|e| bad(no, e))?;
            let factors = tok[1..]
                .chunks(3)
                .map(|c| {
                    let var = c[0].parse::<usize>().map_err(|e| bad(no, e))?;
                    let knot = c[1].parse::<f64>().map_err(|e| bad(no, e))?;
                    let direction = match c[2] {
                        "+" => Direction::PlusSide,
                        "-" => Direction::MinusSide,
                        other => return Err(bad(no, format!("direction '{other}'"))),
                    };
                    if var >= n_vars {
                        return Err(bad(no, format!("variable {var} out of range")));
                    }
                    Ok(HingeFactor {
                        var,
                        knot,
                        direction,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            terms.push(MarsTerm {
                coefficient,
                factors,
            });
        }
        match it.next() {
            Some((_, "end")) => {}
            Some((no, _)) => return Err(bad(no, "expected 'end'")),
            None => return Err(Error::Format("missing 'end'".into())),
        }
        models.push(MarsModel {
            terms,
            gcv,
            rss,
            n_train,
            n_vars,
            penalty,
        });
    }
    Ok(models)
}
