//! Context-free grammars with exact and incremental membership queries.
//!
//! A [`Grammar`] is parsed from a small BNF dialect (see [`Grammar::parse_bnf`])
//! and answers two questions about character strings: full membership
//! ([`Grammar::accepts`]) and viable-prefix membership ([`Grammar::is_prefix`]).
//! Both are backed by an incremental Earley recognizer ([`RecognizerState`])
//! that consumes one character at a time, so multi-character terminal literals
//! and vocabulary tokens that straddle terminal boundaries both work.

mod bnf;
mod earley;

pub use earley::{RecognizerState, Status};

use thiserror::Error;

/// Errors from grammar parsing and recognizer queries.
#[derive(Debug, Error)]
pub enum GrammarError {
    #[error("syntax error at line {line}, column {col}: {msg}")]
    Syntax {
        line: usize,
        col: usize,
        msg: String,
    },
    #[error("undefined nonterminal `{name}` at line {line}, column {col}")]
    UndefinedNonterminal {
        name: String,
        line: usize,
        col: usize,
    },
    #[error("grammar has no rules")]
    EmptyGrammar,
    #[error("vocabulary tokens must be nonempty")]
    EmptyToken,
}

/// One symbol on the right-hand side of a production.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Symbol {
    /// Index into the grammar's nonterminal table.
    Nonterminal(usize),
    /// Index into the grammar's terminal-literal table.
    Terminal(usize),
}

/// A production `lhs ::= rhs`, with `""` literals already elided.
#[derive(Debug, Clone)]
pub struct Production {
    pub lhs: usize,
    pub rhs: Vec<Symbol>,
}

/// An immutable context-free grammar.
///
/// Safe to share across threads; all queries take `&self`.
#[derive(Debug)]
pub struct Grammar {
    nonterminals: Vec<String>,
    terminals: Vec<String>,
    /// Terminal literals as character vectors, for O(1) mid-literal scanning.
    terminal_chars: Vec<Vec<char>>,
    start: usize,
    productions: Vec<Production>,
    prods_by_lhs: Vec<Vec<usize>>,
    /// Nonterminals that derive the empty string.
    nullable: Vec<bool>,
    /// Productions whose rhs mentions only productive nonterminals. Only
    /// these take part in recognition; an item over a usable production can
    /// always complete, which makes "chart row nonempty" equivalent to
    /// "consumed string is a viable prefix".
    usable: Vec<bool>,
}

impl Grammar {
    /// Parse a grammar from BNF text. See the crate README for the dialect.
    pub fn parse_bnf(text: &str) -> Result<Grammar, GrammarError> {
        bnf::parse(text)
    }

    /// Fresh recognizer for the empty string.
    pub fn init_state(&self) -> RecognizerState {
        RecognizerState::init(self)
    }

    /// Whether `s` is a sentence of the grammar.
    pub fn accepts(&self, s: &str) -> bool {
        let mut state = self.init_state();
        for ch in s.chars() {
            if state.is_dead() {
                return false;
            }
            state = state.advance(self, ch);
        }
        state.is_complete()
    }

    /// Whether `s` extends to a sentence of the grammar.
    pub fn is_prefix(&self, s: &str) -> bool {
        let mut state = self.init_state();
        for ch in s.chars() {
            if state.is_dead() {
                return false;
            }
            state = state.advance(self, ch);
        }
        !state.is_dead()
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn nonterminals(&self) -> &[String] {
        &self.nonterminals
    }

    pub fn terminals(&self) -> &[String] {
        &self.terminals
    }

    pub fn productions(&self) -> &[Production] {
        &self.productions
    }

    pub(crate) fn terminal_chars(&self, t: usize) -> &[char] {
        &self.terminal_chars[t]
    }

    pub(crate) fn usable_prods_of(&self, nt: usize) -> impl Iterator<Item = usize> + '_ {
        self.prods_by_lhs[nt]
            .iter()
            .copied()
            .filter(|&p| self.usable[p])
    }

    pub(crate) fn is_nullable(&self, nt: usize) -> bool {
        self.nullable[nt]
    }

    /// Build from parsed parts; computes nullability and productivity.
    fn assemble(
        nonterminals: Vec<String>,
        terminals: Vec<String>,
        start: usize,
        productions: Vec<Production>,
    ) -> Grammar {
        let n = nonterminals.len();
        let mut prods_by_lhs = vec![Vec::new(); n];
        for (i, p) in productions.iter().enumerate() {
            prods_by_lhs[p.lhs].push(i);
        }

        // Nullable fixpoint: a nonterminal is nullable if some production's
        // rhs is all nullable nonterminals (terminals are never empty here).
        let mut nullable = vec![false; n];
        loop {
            let mut changed = false;
            for p in &productions {
                if nullable[p.lhs] {
                    continue;
                }
                let all = p.rhs.iter().all(|s| match s {
                    Symbol::Nonterminal(nt) => nullable[*nt],
                    Symbol::Terminal(_) => false,
                });
                if all {
                    nullable[p.lhs] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }

        // Productive fixpoint: derives at least one terminal string.
        let mut productive = vec![false; n];
        loop {
            let mut changed = false;
            for p in &productions {
                if productive[p.lhs] {
                    continue;
                }
                let all = p.rhs.iter().all(|s| match s {
                    Symbol::Nonterminal(nt) => productive[*nt],
                    Symbol::Terminal(_) => true,
                });
                if all {
                    productive[p.lhs] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }

        let usable = productions
            .iter()
            .map(|p| {
                p.rhs.iter().all(|s| match s {
                    Symbol::Nonterminal(nt) => productive[*nt],
                    Symbol::Terminal(_) => true,
                })
            })
            .collect();

        let terminal_chars = terminals.iter().map(|t| t.chars().collect()).collect();

        Grammar {
            nonterminals,
            terminals,
            terminal_chars,
            start,
            productions,
            prods_by_lhs,
            nullable,
            usable,
        }
    }
}

#[cfg(test)]
mod tests;
