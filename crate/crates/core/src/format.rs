//! Line-oriented text format for pairwise models.
//!
//! ```text
//! MARKOV
//! <node count>
//! <cardinalities...>
//! <factor count F>
//! <arity> <scope...>        (F lines, arity 1 or 2)
//! <entry count> <ψ entries...>  (F tables, row-major, declaration order)
//! ```
//!
//! Tables hold raw potentials ψ (strictly positive); they are stored as
//! logs in memory. Lines whose first non-blank character is `#` are ignored.
//! Repeated unary factors on one node multiply.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::model::PairwiseModel;

struct Tokens<'a> {
    toks: Vec<(usize, &'a str)>,
    pos: usize,
    last_line: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let toks = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim_start().starts_with('#'))
            .flat_map(|(n, l)| l.split_whitespace().map(move |t| (n + 1, t)))
            .collect::<Vec<_>>();
        let last_line = text.lines().count().max(1);
        Self { toks, pos: 0, last_line }
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        let t = self.toks.get(self.pos).copied().ok_or_else(|| Error::Parse {
            line: self.last_line,
            msg: format!("unexpected end of input, expected {what}"),
        })?;
        self.pos += 1;
        Ok(t)
    }

    fn usize(&mut self, what: &str) -> Result<(usize, usize)> {
        let (line, t) = self.next(what)?;
        t.parse::<usize>().map(|v| (line, v)).map_err(|_| Error::Parse {
            line,
            msg: format!("expected {what}, found {t:?}"),
        })
    }

    fn f64(&mut self, what: &str) -> Result<(usize, f64)> {
        let (line, t) = self.next(what)?;
        t.parse::<f64>().map(|v| (line, v)).map_err(|_| Error::Parse {
            line,
            msg: format!("expected {what}, found {t:?}"),
        })
    }
}

enum Scope {
    Unary(usize),
    Pair(usize, usize),
}

pub fn load_model(text: &str) -> Result<PairwiseModel> {
    let mut toks = Tokens::new(text);
    let (line, head) = toks.next("MARKOV header")?;
    if head != "MARKOV" {
        return Err(Error::Parse {
            line,
            msg: format!("expected MARKOV header, found {head:?}"),
        });
    }
    let (_, n) = toks.usize("node count")?;
    let mut cards = Vec::with_capacity(n);
    for _ in 0..n {
        let (line, m) = toks.usize("cardinality")?;
        if m < 2 {
            return Err(Error::Parse {
                line,
                msg: format!("cardinality {m} must be at least 2"),
            });
        }
        cards.push(m);
    }
    let (_, f) = toks.usize("factor count")?;

    let mut scopes = Vec::with_capacity(f);
    let mut seen_edges = std::collections::HashSet::new();
    for _ in 0..f {
        let (line, arity) = toks.usize("factor arity")?;
        let mut idx = Vec::with_capacity(arity.min(2));
        if arity == 0 || arity > 2 {
            return Err(Error::UnsupportedArity { line, arity });
        }
        for _ in 0..arity {
            let (l, v) = toks.usize("scope index")?;
            if v >= n {
                return Err(Error::Parse {
                    line: l,
                    msg: format!("scope index {v} out of range"),
                });
            }
            idx.push(v);
        }
        scopes.push(if arity == 1 {
            (line, Scope::Unary(idx[0]))
        } else {
            let (a, b) = (idx[0], idx[1]);
            if a == b {
                return Err(Error::Parse {
                    line,
                    msg: format!("self-loop on node {a}"),
                });
            }
            let key = (a.min(b), a.max(b));
            if !seen_edges.insert(key) {
                return Err(Error::DuplicateEdge { line, i: key.0, j: key.1 });
            }
            (line, Scope::Pair(a, b))
        });
    }

    let mut unary: Vec<Vec<f64>> = cards.iter().map(|&m| vec![0.0; m]).collect();
    let mut edges = Vec::new();
    let mut pairwise = Vec::new();
    for (_, scope) in &scopes {
        let expected = match *scope {
            Scope::Unary(i) => cards[i],
            Scope::Pair(a, b) => cards[a] * cards[b],
        };
        let (line, count) = toks.usize("table entry count")?;
        if count != expected {
            return Err(Error::TableLength {
                line,
                expected,
                found: count,
            });
        }
        let mut logs = Vec::with_capacity(count);
        for _ in 0..count {
            let (l, v) = toks.f64("potential entry")?;
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Parse {
                    line: l,
                    msg: format!("potential entry {v} must be positive and finite"),
                });
            }
            logs.push(v.ln());
        }
        match *scope {
            Scope::Unary(i) => unary[i].iter_mut().zip(&logs).for_each(|(a, b)| *a += b),
            Scope::Pair(a, b) => {
                edges.push((a, b));
                pairwise.push(logs);
            }
        }
    }
    if let Ok((line, t)) = toks.next("") {
        return Err(Error::Parse {
            line,
            msg: format!("trailing token {t:?}"),
        });
    }
    PairwiseModel::new(cards, edges, unary, pairwise)
}

/// One unary factor per node, then one factor per edge in edge order.
pub fn save_model(model: &PairwiseModel) -> String {
    let mut out = String::new();
    let n = model.node_count();
    let join = |xs: &mut dyn Iterator<Item = String>| xs.collect::<Vec<_>>().join(" ");
    writeln!(out, "MARKOV").unwrap();
    writeln!(out, "{n}").unwrap();
    writeln!(out, "{}", join(&mut model.cards().iter().map(|m| m.to_string()))).unwrap();
    writeln!(out, "{}", n + model.edge_count()).unwrap();
    for i in 0..n {
        writeln!(out, "1 {i}").unwrap();
    }
    for &(i, j) in model.edges() {
        writeln!(out, "2 {i} {j}").unwrap();
    }
    let tables = (0..n)
        .map(|i| model.unary(i))
        .chain((0..model.edge_count()).map(|e| model.pairwise(e)));
    for t in tables {
        writeln!(out).unwrap();
        writeln!(out, "{}", t.len()).unwrap();
        writeln!(out, "{}", join(&mut t.iter().map(|x| format!("{}", x.exp())))).unwrap();
    }
    out
}
