//! Incremental Earley recognition over character streams.
//!
//! The chart keeps one item set per consumed character. Sets already built
//! are immutable and shared behind `Arc`, so cloning a state (the sampler
//! trie keeps one per node) copies pointers, not items. Multi-character
//! terminal literals are scanned one character at a time; an item part-way
//! through a literal records its offset.
//!
//! Nullable nonterminals use predict-time advancement (when predicting a
//! nullable `B`, the predicting item is also added with the dot moved past
//! `B`), so completions never have to look at the set that is still being
//! built: an in-set completion can only come from an empty derivation, which
//! the nullable advance already accounted for.

use std::collections::HashSet;
use std::sync::Arc;

use super::{Grammar, GrammarError, Symbol};

/// Recognizer verdict for the consumed string.
///
/// `Complete` means the string is a sentence; it is also still alive (a
/// sentence may be a proper prefix of a longer one). `Dead` is absorbing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Alive,
    Complete,
    Dead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct Item {
    prod: u32,
    /// Position of the dot within the production's rhs.
    dot: u16,
    /// Characters already matched of the terminal at the dot (0 unless the
    /// dot sits inside a multi-character literal).
    term_offset: u16,
    /// Chart index where this production started.
    origin: u32,
}

#[derive(Debug, Default)]
struct EarleySet {
    items: Vec<Item>,
    seen: HashSet<Item>,
}

impl EarleySet {
    fn add(&mut self, item: Item) {
        if self.seen.insert(item) {
            self.items.push(item);
        }
    }
}

/// Incremental parser configuration after consuming some characters.
///
/// Value-like: `advance` returns a new state and leaves `self` untouched, so
/// states can be stored and branched freely (e.g. one per sampler-trie node).
#[derive(Debug, Clone)]
pub struct RecognizerState {
    sets: Vec<Arc<EarleySet>>,
    status: Status,
}

impl RecognizerState {
    /// State for the empty string. `Dead` right away if the grammar's
    /// language is empty.
    pub(super) fn init(g: &Grammar) -> RecognizerState {
        let mut set = EarleySet::default();
        for p in g.usable_prods_of(g.start()) {
            set.add(Item {
                prod: p as u32,
                dot: 0,
                term_offset: 0,
                origin: 0,
            });
        }
        close(g, &mut set, &[], 0);
        let status = judge(g, &set);
        RecognizerState {
            sets: vec![Arc::new(set)],
            status,
        }
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn is_dead(&self) -> bool {
        self.status == Status::Dead
    }

    pub fn is_complete(&self) -> bool {
        self.status == Status::Complete
    }

    /// Alive or complete: the consumed string is a viable prefix.
    pub fn is_alive(&self) -> bool {
        self.status != Status::Dead
    }

    /// Number of characters consumed so far.
    pub fn consumed(&self) -> usize {
        self.sets.len() - 1
    }

    /// Consume one character. Dead in, dead out.
    pub fn advance(&self, g: &Grammar, ch: char) -> RecognizerState {
        if self.is_dead() {
            return self.clone();
        }
        let k = self.sets.len();
        let mut next = EarleySet::default();
        for &item in &self.sets[k - 1].items {
            let prod = &g.productions()[item.prod as usize];
            if let Some(Symbol::Terminal(t)) = prod.rhs.get(item.dot as usize) {
                let lit = g.terminal_chars(*t);
                if lit[item.term_offset as usize] == ch {
                    let mut adv = item;
                    if item.term_offset as usize + 1 == lit.len() {
                        adv.dot += 1;
                        adv.term_offset = 0;
                    } else {
                        adv.term_offset += 1;
                    }
                    next.add(adv);
                }
            }
        }
        close(g, &mut next, &self.sets, k);
        let mut sets = self.sets.clone();
        let status = judge(g, &next);
        sets.push(Arc::new(next));
        RecognizerState { sets, status }
    }

    /// Fold [`advance`](Self::advance) over a token's characters. The token
    /// is admissible at this state iff the result is not dead.
    pub fn admissible(
        &self,
        g: &Grammar,
        token_text: &str,
    ) -> Result<RecognizerState, GrammarError> {
        if token_text.is_empty() {
            return Err(GrammarError::EmptyToken);
        }
        let mut state = self.clone();
        for ch in token_text.chars() {
            if state.is_dead() {
                break;
            }
            state = state.advance(g, ch);
        }
        Ok(state)
    }
}

/// Predict/complete closure of `set` at chart position `k`. `prev` holds the
/// frozen sets `0..k`.
fn close(g: &Grammar, set: &mut EarleySet, prev: &[Arc<EarleySet>], k: usize) {
    let mut i = 0;
    while i < set.items.len() {
        let item = set.items[i];
        i += 1;
        let prod = &g.productions()[item.prod as usize];
        match prod.rhs.get(item.dot as usize) {
            Some(Symbol::Nonterminal(nt)) => {
                for p in g.usable_prods_of(*nt) {
                    set.add(Item {
                        prod: p as u32,
                        dot: 0,
                        term_offset: 0,
                        origin: k as u32,
                    });
                }
                if g.is_nullable(*nt) {
                    set.add(Item {
                        dot: item.dot + 1,
                        ..item
                    });
                }
            }
            Some(Symbol::Terminal(_)) => {}
            None => {
                // Complete. Same-set completions (origin == k) are empty
                // derivations, already handled by the nullable advance.
                if (item.origin as usize) < k {
                    let lhs = prod.lhs;
                    let parents: Vec<Item> = prev[item.origin as usize]
                        .items
                        .iter()
                        .copied()
                        .filter(|par| {
                            let pp = &g.productions()[par.prod as usize];
                            matches!(pp.rhs.get(par.dot as usize),
                                     Some(Symbol::Nonterminal(nt)) if *nt == lhs)
                        })
                        .collect();
                    for par in parents {
                        set.add(Item {
                            dot: par.dot + 1,
                            ..par
                        });
                    }
                }
            }
        }
    }
}

fn judge(g: &Grammar, set: &EarleySet) -> Status {
    if set.items.is_empty() {
        return Status::Dead;
    }
    let complete = set.items.iter().any(|item| {
        let prod = &g.productions()[item.prod as usize];
        item.origin == 0 && item.dot as usize == prod.rhs.len() && prod.lhs == g.start()
    });
    if complete {
        Status::Complete
    } else {
        Status::Alive
    }
}
