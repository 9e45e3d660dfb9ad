//! Parser for the BNF dialect.
//!
//! One rule per logical line: `Name ::= body`, with `|` separating
//! alternatives and whitespace juxtaposition meaning concatenation. A line
//! that does not open a new rule continues the previous one. Terminals are
//! double-quoted with escapes `\"`, `\\`, `\n`, `\t`; `""` is the empty
//! string. `#` starts a comment outside quotes. Identifiers match
//! `[A-Za-z_][A-Za-z0-9_-]*`. The first rule's lhs is the start symbol
//! unless a rule named `root` exists.

use std::collections::HashMap;

use super::{Grammar, GrammarError, Production, Symbol};

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Literal(String),
    Pipe,
    Define, // ::=
}

#[derive(Debug)]
struct Spanned {
    tok: Token,
    line: usize,
    col: usize,
}

fn syntax(line: usize, col: usize, msg: impl Into<String>) -> GrammarError {
    GrammarError::Syntax {
        line,
        col,
        msg: msg.into(),
    }
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_continue(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '-'
}

/// Tokenize one physical line. Stops at an unquoted `#`.
fn lex_line(line_no: usize, line: &str, out: &mut Vec<Spanned>) -> Result<(), GrammarError> {
    let chars: Vec<char> = line.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
        } else if c == '#' {
            break;
        } else if c == '"' {
            let mut lit = String::new();
            i += 1;
            loop {
                if i >= chars.len() {
                    return Err(syntax(line_no, col, "unterminated string literal"));
                }
                match chars[i] {
                    '"' => {
                        i += 1;
                        break;
                    }
                    '\\' => {
                        if i + 1 >= chars.len() {
                            return Err(syntax(line_no, i + 1, "dangling escape"));
                        }
                        lit.push(match chars[i + 1] {
                            '"' => '"',
                            '\\' => '\\',
                            'n' => '\n',
                            't' => '\t',
                            other => {
                                return Err(syntax(
                                    line_no,
                                    i + 2,
                                    format!("unknown escape `\\{other}`"),
                                ));
                            }
                        });
                        i += 2;
                    }
                    other => {
                        lit.push(other);
                        i += 1;
                    }
                }
            }
            out.push(Spanned {
                tok: Token::Literal(lit),
                line: line_no,
                col,
            });
        } else if c == '|' {
            out.push(Spanned {
                tok: Token::Pipe,
                line: line_no,
                col,
            });
            i += 1;
        } else if c == ':' {
            if chars.get(i + 1) == Some(&':') && chars.get(i + 2) == Some(&'=') {
                out.push(Spanned {
                    tok: Token::Define,
                    line: line_no,
                    col,
                });
                i += 3;
            } else {
                return Err(syntax(line_no, col, "expected `::=`"));
            }
        } else if is_ident_start(c) {
            let mut j = i + 1;
            while j < chars.len() && is_ident_continue(chars[j]) {
                j += 1;
            }
            let name: String = chars[i..j].iter().collect();
            out.push(Spanned {
                tok: Token::Ident(name),
                line: line_no,
                col,
            });
            i = j;
        } else {
            return Err(syntax(line_no, col, format!("unexpected character `{c}`")));
        }
    }
    Ok(())
}

/// Does this physical line open a new rule (`Ident ::= ...`)?
///
/// Only inspects the quote-free prefix, so a `::=` inside a literal cannot
/// split a continuation line.
fn opens_rule(line: &str) -> bool {
    let trimmed = line.trim_start();
    let mut chars = trimmed.chars();
    match chars.next() {
        Some(c) if is_ident_start(c) => {}
        _ => return false,
    }
    let rest: &str = chars.as_str();
    let after_ident = rest.trim_start_matches(is_ident_continue);
    after_ident.trim_start().starts_with("::=")
}

/// Raw rule: lhs plus alternatives of (symbol, position) sequences.
struct RawRule {
    lhs: String,
    alts: Vec<Vec<Spanned>>,
}

pub(super) fn parse(text: &str) -> Result<Grammar, GrammarError> {
    // Group physical lines into logical rules.
    let mut groups: Vec<Vec<Spanned>> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let mut toks = Vec::new();
        lex_line(line_no, line, &mut toks)?;
        if toks.is_empty() {
            continue;
        }
        if opens_rule(line) {
            groups.push(toks);
        } else if let Some(last) = groups.last_mut() {
            last.append(&mut toks);
        } else {
            let first = &toks[0];
            return Err(syntax(
                first.line,
                first.col,
                "expected `Name ::=` to start a rule",
            ));
        }
    }
    if groups.is_empty() {
        return Err(GrammarError::EmptyGrammar);
    }

    let mut rules: Vec<RawRule> = Vec::new();
    for toks in groups {
        let mut it = toks.into_iter();
        let head = it.next().unwrap();
        let lhs = match head.tok {
            Token::Ident(name) => name,
            _ => {
                return Err(syntax(
                    head.line,
                    head.col,
                    "rule must start with an identifier",
                ))
            }
        };
        match it.next() {
            Some(Spanned {
                tok: Token::Define, ..
            }) => {}
            Some(s) => return Err(syntax(s.line, s.col, "expected `::=`")),
            None => return Err(syntax(head.line, head.col, "expected `::=`")),
        }
        let mut alts: Vec<Vec<Spanned>> = vec![Vec::new()];
        let mut last_pos = (head.line, head.col);
        for s in it {
            last_pos = (s.line, s.col);
            match s.tok {
                Token::Pipe => {
                    if alts.last().unwrap().is_empty() {
                        return Err(syntax(
                            s.line,
                            s.col,
                            "empty alternative (use \"\" for \u{3b5})",
                        ));
                    }
                    alts.push(Vec::new());
                }
                Token::Define => {
                    return Err(syntax(s.line, s.col, "unexpected `::=` in rule body"));
                }
                _ => alts.last_mut().unwrap().push(s),
            }
        }
        if alts.last().unwrap().is_empty() {
            return Err(syntax(
                last_pos.0,
                last_pos.1,
                "empty alternative (use \"\" for \u{3b5})",
            ));
        }
        rules.push(RawRule { lhs, alts });
    }

    // Nonterminal table: every distinct lhs, in first-appearance order.
    let mut nt_index: HashMap<String, usize> = HashMap::new();
    let mut nonterminals: Vec<String> = Vec::new();
    for r in &rules {
        nt_index.entry(r.lhs.clone()).or_insert_with(|| {
            nonterminals.push(r.lhs.clone());
            nonterminals.len() - 1
        });
    }

    let start = match nt_index.get("root") {
        Some(&i) => i,
        None => nt_index[&rules[0].lhs],
    };

    // Terminal table, deduped in first-appearance order.
    let mut term_index: HashMap<String, usize> = HashMap::new();
    let mut terminals: Vec<String> = Vec::new();
    let mut productions: Vec<Production> = Vec::new();
    for r in &rules {
        let lhs = nt_index[&r.lhs];
        for alt in &r.alts {
            let mut rhs = Vec::new();
            for s in alt {
                match &s.tok {
                    Token::Ident(name) => match nt_index.get(name) {
                        Some(&nt) => rhs.push(Symbol::Nonterminal(nt)),
                        None => {
                            return Err(GrammarError::UndefinedNonterminal {
                                name: name.clone(),
                                line: s.line,
                                col: s.col,
                            });
                        }
                    },
                    Token::Literal(lit) if lit.is_empty() => {} // epsilon
                    Token::Literal(lit) => {
                        let t = *term_index.entry(lit.clone()).or_insert_with(|| {
                            terminals.push(lit.clone());
                            terminals.len() - 1
                        });
                        rhs.push(Symbol::Terminal(t));
                    }
                    Token::Pipe | Token::Define => unreachable!(),
                }
            }
            productions.push(Production { lhs, rhs });
        }
    }

    Ok(Grammar::assemble(
        nonterminals,
        terminals,
        start,
        productions,
    ))
}
