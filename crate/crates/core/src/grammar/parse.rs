//! Line-oriented reader for the grammar file format.
//!
//! ```text
//! # comment
//! %structural <workflow> <prepBranch> <preprocess> <classifier>
//! %preprocessing pca minMaxScaler
//! %classifiers kNN
//! <workflow>   ::= <prepBranch> <classifier> | <classifier>
//! <preprocess> ::= pca <pca_hp>
//!                | minMaxScaler
//! %domains
//! pca.nComponents int 1 50
//! pca.whiten bool
//! ```

use super::domain::HParamDomain;
use super::GrammarError;

#[derive(Debug, Clone)]
pub(crate) struct RawSymbol {
    pub name: String,
    pub nonterminal: bool,
    pub column: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct RawRule {
    pub lhs: String,
    pub alternatives: Vec<Vec<RawSymbol>>,
}

#[derive(Debug, Clone)]
pub(crate) struct RawDomain {
    pub algorithm: String,
    pub hparam: String,
    pub domain: HParamDomain,
    pub line: usize,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct RawGrammar {
    pub rules: Vec<RawRule>,
    pub structural: Option<Vec<RawSymbol>>,
    pub preprocessing: Vec<RawSymbol>,
    pub classifiers: Vec<RawSymbol>,
    pub domains: Vec<RawDomain>,
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> GrammarError {
    GrammarError::Syntax { line, column, message: message.into() }
}

/// Splits a line into (1-based column, token) pairs.
fn tokens(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in line.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                out.push((s + 1, &line[s..i]));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push((s + 1, &line[s..]));
    }
    out
}

fn symbol(tok: &str, line: usize, column: usize) -> Result<RawSymbol, GrammarError> {
    if let Some(inner) = tok.strip_prefix('<') {
        let name = inner
            .strip_suffix('>')
            .ok_or_else(|| syntax(line, column, format!("unterminated non-terminal {tok:?}")))?;
        if name.is_empty() || name.contains(['<', '>']) {
            return Err(syntax(line, column, format!("malformed non-terminal {tok:?}")));
        }
        Ok(RawSymbol { name: name.to_string(), nonterminal: true, column })
    } else if tok.contains(['<', '>', '|']) || tok == "::=" {
        Err(syntax(line, column, format!("unexpected token {tok:?}")))
    } else {
        Ok(RawSymbol { name: tok.to_string(), nonterminal: false, column })
    }
}

/// Parses `alt1 | alt2 | ...` from a token list.
fn alternatives(
    toks: &[(usize, &str)],
    line: usize,
    eol_column: usize,
) -> Result<Vec<Vec<RawSymbol>>, GrammarError> {
    let mut alts = Vec::new();
    let mut current = Vec::new();
    let mut last_col = toks.first().map_or(eol_column, |t| t.0);
    for &(col, tok) in toks {
        if tok == "|" {
            if current.is_empty() {
                return Err(syntax(line, col, "empty alternative"));
            }
            alts.push(std::mem::take(&mut current));
        } else {
            current.push(symbol(tok, line, col)?);
        }
        last_col = col + tok.len();
    }
    if current.is_empty() {
        return Err(syntax(line, last_col, "empty alternative"));
    }
    alts.push(current);
    Ok(alts)
}

fn number<T: std::str::FromStr>(tok: Option<&(usize, &str)>, line: usize, what: &str) -> Result<T, GrammarError> {
    let &(col, s) = tok.ok_or_else(|| syntax(line, 1, format!("missing {what}")))?;
    s.parse().map_err(|_| syntax(line, col, format!("invalid {what} {s:?}")))
}

fn domain_line(toks: &[(usize, &str)], line: usize) -> Result<RawDomain, GrammarError> {
    let (col, key) = toks[0];
    let (algorithm, hparam) = key
        .split_once('.')
        .filter(|(a, h)| !a.is_empty() && !h.is_empty() && !h.contains('.'))
        .ok_or_else(|| syntax(line, col, format!("expected algorithm.hparam, found {key:?}")))?;
    let &(kcol, kind) = toks
        .get(1)
        .ok_or_else(|| syntax(line, col + key.len(), "missing domain kind"))?;
    let rest = &toks[2..];
    let log_flag = |idx: usize| -> Result<bool, GrammarError> {
        match rest.get(idx) {
            None => Ok(false),
            Some((_, "log")) => Ok(true),
            Some(&(c, other)) => Err(syntax(line, c, format!("unexpected {other:?}, expected `log`"))),
        }
    };
    let too_many = |n: usize| -> Result<(), GrammarError> {
        match rest.get(n) {
            Some(&(c, t)) => Err(syntax(line, c, format!("trailing token {t:?}"))),
            None => Ok(()),
        }
    };
    let domain = match kind {
        "int" => {
            let lo = number::<i64>(rest.first(), line, "integer bound")?;
            let hi = number::<i64>(rest.get(1), line, "integer bound")?;
            let log = log_flag(2)?;
            too_many(3)?;
            HParamDomain::Int { lo, hi, log }
        }
        "real" => {
            let lo = number::<f64>(rest.first(), line, "real bound")?;
            let hi = number::<f64>(rest.get(1), line, "real bound")?;
            let log = log_flag(2)?;
            too_many(3)?;
            HParamDomain::Real { lo, hi, log }
        }
        "cat" => {
            let &(c, list) = rest
                .first()
                .ok_or_else(|| syntax(line, kcol + kind.len(), "missing categorical values"))?;
            if list.split(',').any(str::is_empty) {
                return Err(syntax(line, c, "empty categorical value"));
            }
            too_many(1)?;
            HParamDomain::Cat { values: list.split(',').map(str::to_string).collect() }
        }
        "bool" => {
            too_many(0)?;
            HParamDomain::Bool
        }
        other => return Err(syntax(line, kcol, format!("unknown domain kind {other:?}"))),
    };
    Ok(RawDomain { algorithm: algorithm.to_string(), hparam: hparam.to_string(), domain, line })
}

pub(crate) fn parse_raw(text: &str) -> Result<RawGrammar, GrammarError> {
    let mut raw = RawGrammar::default();
    let mut in_domains = false;
    let mut can_continue = false;

    for (idx, full_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = match full_line.find('#') {
            Some(p) => &full_line[..p],
            None => full_line,
        };
        let toks = tokens(content);
        let Some(&(first_col, first)) = toks.first() else {
            continue;
        };

        if let Some(directive) = first.strip_prefix('%') {
            can_continue = false;
            let args = &toks[1..];
            match directive {
                "domains" => {
                    if let Some(&(c, t)) = args.first() {
                        return Err(syntax(line_no, c, format!("unexpected {t:?} after %domains")));
                    }
                    in_domains = true;
                }
                "structural" => {
                    let syms = args
                        .iter()
                        .map(|&(c, t)| symbol(t, line_no, c))
                        .collect::<Result<Vec<_>, _>>()?;
                    if let Some(s) = syms.iter().find(|s| !s.nonterminal) {
                        return Err(syntax(line_no, s.column, "%structural lists non-terminals only"));
                    }
                    raw.structural.get_or_insert_with(Vec::new).extend(syms);
                }
                "preprocessing" | "classifiers" => {
                    let syms = args
                        .iter()
                        .map(|&(c, t)| symbol(t, line_no, c))
                        .collect::<Result<Vec<_>, _>>()?;
                    if let Some(s) = syms.iter().find(|s| s.nonterminal) {
                        return Err(syntax(line_no, s.column, "role directives list terminals only"));
                    }
                    if directive == "preprocessing" {
                        raw.preprocessing.extend(syms);
                    } else {
                        raw.classifiers.extend(syms);
                    }
                }
                other => {
                    return Err(syntax(line_no, first_col, format!("unknown directive %{other}")));
                }
            }
            continue;
        }

        if in_domains {
            let d = domain_line(&toks, line_no)?;
            raw.domains.push(d);
            continue;
        }

        if first == "|" {
            if !can_continue {
                return Err(syntax(line_no, first_col, "continuation line without a rule"));
            }
            let alts = alternatives(&toks[1..], line_no, first_col + 1)?;
            raw.rules.last_mut().expect("continuation follows a rule").alternatives.extend(alts);
            continue;
        }

        let lhs = symbol(first, line_no, first_col)?;
        if !lhs.nonterminal {
            return Err(syntax(line_no, first_col, "rule must start with a <non-terminal>"));
        }
        match toks.get(1) {
            Some((_, "::=")) => {}
            Some(&(c, _)) => return Err(syntax(line_no, c, "expected `::=`")),
            None => return Err(syntax(line_no, first_col + first.len(), "expected `::=`")),
        }
        let eol = toks[1].0 + 3;
        let alts = alternatives(&toks[2..], line_no, eol)?;
        raw.rules.push(RawRule { lhs: lhs.name, alternatives: alts });
        can_continue = true;
    }

    if raw.rules.is_empty() {
        return Err(syntax(1, 1, "grammar has no production rules"));
    }
    Ok(raw)
}
