use super::*;
use crate::exact::enumerate_sentences;

const BINARY_GRAMMAR: &str = r#"
S ::= "00000" | "1" A2
A2 ::= "0" A3 | "1" A3
A3 ::= "0" A4 | "1" A4
A4 ::= "0" A5 | "1" A5
A5 ::= "0" | "1"
"#;

fn binary_grammar() -> Grammar {
    Grammar::parse_bnf(BINARY_GRAMMAR).unwrap()
}

#[test]
fn parse_binary_grammar_structure() {
    let g = binary_grammar();
    assert_eq!(g.nonterminals(), &["S", "A2", "A3", "A4", "A5"]);
    assert_eq!(g.start(), 0);
    assert_eq!(g.productions().len(), 10);
    assert_eq!(g.terminals(), &["00000", "1", "0"]);
}

#[test]
fn parse_empty_string_language() {
    let g = Grammar::parse_bnf(r#"S ::= """#).unwrap();
    assert!(g.accepts(""));
    assert!(!g.accepts("a"));
    assert!(!g.is_prefix("a"));
}

#[test]
fn parse_undefined_nonterminal() {
    let err = Grammar::parse_bnf(r#"S ::= "a" B"#).unwrap_err();
    match err {
        GrammarError::UndefinedNonterminal { name, line, col } => {
            assert_eq!(name, "B");
            assert_eq!(line, 1);
            assert_eq!(col, 11);
        }
        other => panic!("expected undefined nonterminal, got {other:?}"),
    }
}

#[test]
fn parse_syntax_error_has_position() {
    let err = Grammar::parse_bnf("S ::= \"a\"\nA2 :‽= \"0\"\n").unwrap_err();
    match err {
        GrammarError::Syntax { line, .. } => assert_eq!(line, 2),
        other => panic!("expected syntax error, got {other:?}"),
    }
}

#[test]
fn parse_empty_grammar() {
    assert!(matches!(
        Grammar::parse_bnf(""),
        Err(GrammarError::EmptyGrammar)
    ));
    assert!(matches!(
        Grammar::parse_bnf("# only a comment\n"),
        Err(GrammarError::EmptyGrammar)
    ));
}

#[test]
fn parse_unterminated_literal() {
    let err = Grammar::parse_bnf("S ::= \"abc").unwrap_err();
    assert!(matches!(err, GrammarError::Syntax { line: 1, .. }));
}

#[test]
fn parse_bad_escape() {
    let err = Grammar::parse_bnf(r#"S ::= "\q""#).unwrap_err();
    assert!(matches!(err, GrammarError::Syntax { .. }));
}

#[test]
fn parse_escapes_and_comments() {
    let g = Grammar::parse_bnf("S ::= \"a\\\"b\" # trailing comment\n").unwrap();
    assert!(g.accepts("a\"b"));
    let g = Grammar::parse_bnf(r#"S ::= "\\" | "\n" | "\t""#).unwrap();
    assert!(g.accepts("\\"));
    assert!(g.accepts("\n"));
    assert!(g.accepts("\t"));
}

#[test]
fn hash_inside_literal_is_not_a_comment() {
    let g = Grammar::parse_bnf(r##"S ::= "#x0""##).unwrap();
    assert!(g.accepts("#x0"));
}

#[test]
fn continuation_lines_join_previous_rule() {
    let g = Grammar::parse_bnf("S ::= \"a\"\n    | \"b\"\n    | \"c\" S\n").unwrap();
    assert!(g.accepts("a"));
    assert!(g.accepts("cb"));
    assert!(g.accepts("cca"));
}

#[test]
fn root_rule_takes_start_precedence() {
    let g = Grammar::parse_bnf("S ::= \"x\"\nroot ::= \"y\" S\n").unwrap();
    assert!(g.accepts("yx"));
    assert!(!g.accepts("x"));
}

#[test]
fn duplicate_lhs_merges_alternatives() {
    let g = Grammar::parse_bnf("S ::= \"a\"\nS ::= \"b\"\n").unwrap();
    assert!(g.accepts("a"));
    assert!(g.accepts("b"));
}

#[test]
fn init_state_statuses() {
    assert_eq!(binary_grammar().init_state().status(), Status::Alive);
    let eps = Grammar::parse_bnf(r#"S ::= """#).unwrap();
    assert_eq!(eps.init_state().status(), Status::Complete);
    let empty_lang = Grammar::parse_bnf("S ::= S").unwrap();
    assert_eq!(empty_lang.init_state().status(), Status::Dead);
}

#[test]
fn advance_to_complete() {
    let g = binary_grammar();
    let mut state = g.init_state();
    for ch in "10101".chars() {
        state = state.advance(&g, ch);
    }
    assert_eq!(state.status(), Status::Complete);
    assert_eq!(state.consumed(), 5);
}

#[test]
fn advance_to_dead_and_absorbing() {
    let g = binary_grammar();
    let mut state = g.init_state();
    for ch in "01".chars() {
        state = state.advance(&g, ch);
    }
    assert_eq!(state.status(), Status::Dead);
    let again = state.advance(&g, '0');
    assert_eq!(again.status(), Status::Dead);
}

#[test]
fn advance_is_deterministic() {
    let g = binary_grammar();
    let state = g.init_state().advance(&g, '1').advance(&g, '0');
    let a = state.advance(&g, '1');
    let b = state.advance(&g, '1');
    assert_eq!(a.status(), b.status());
    assert_eq!(state.status(), Status::Alive); // input unchanged
}

#[test]
fn admissible_examples() {
    let g = binary_grammar();
    let root = g.init_state();
    assert_eq!(root.admissible(&g, "1").unwrap().status(), Status::Alive);
    assert_eq!(
        root.admissible(&g, "00000").unwrap().status(),
        Status::Complete
    );

    let mut state = g.init_state();
    for ch in "1101".chars() {
        state = state.advance(&g, ch);
    }
    assert!(state.admissible(&g, "11").unwrap().is_dead());

    assert!(matches!(
        root.admissible(&g, ""),
        Err(GrammarError::EmptyToken)
    ));
}

#[test]
fn accepts_and_is_prefix_examples() {
    let g = binary_grammar();
    assert!(g.accepts("10101"));
    assert!(g.accepts("00000"));
    assert!(!g.accepts("0000"));
    assert!(g.is_prefix("0000"));
    assert!(!g.accepts(""));
    assert!(g.is_prefix(""));
}

#[test]
fn nullable_rules_are_handled() {
    let g = Grammar::parse_bnf("S ::= A B\nA ::= \"\" | \"a\"\nB ::= \"b\"\n").unwrap();
    assert!(g.accepts("b"));
    assert!(g.accepts("ab"));
    assert!(!g.accepts("a"));
    assert!(g.is_prefix("a"));

    let chain = Grammar::parse_bnf("S ::= A A \"x\"\nA ::= B\nB ::= \"\" | \"y\"\n").unwrap();
    assert!(chain.accepts("x"));
    assert!(chain.accepts("yx"));
    assert!(chain.accepts("yyx"));
    assert!(!chain.accepts("yyyx"));
}

#[test]
fn left_recursion_is_fine() {
    let g = Grammar::parse_bnf("S ::= S \"a\" | \"a\"").unwrap();
    for n in 1..6 {
        assert!(g.accepts(&"a".repeat(n)));
    }
    assert!(!g.accepts(""));
}

#[test]
fn unit_cycle_does_not_loop() {
    let g = Grammar::parse_bnf("S ::= S | \"b\"").unwrap();
    assert!(g.accepts("b"));
    assert!(!g.accepts("bb"));
}

#[test]
fn sentence_comes_before_longer_sentence() {
    // Complete is not absorbing: a sentence can extend to a longer one.
    let g = Grammar::parse_bnf("S ::= \"a\" | \"aa\"").unwrap();
    let s1 = g.init_state().advance(&g, 'a');
    assert_eq!(s1.status(), Status::Complete);
    let s2 = s1.advance(&g, 'a');
    assert_eq!(s2.status(), Status::Complete);
    let s3 = s2.advance(&g, 'a');
    assert_eq!(s3.status(), Status::Dead);
}

/// Exhaustively compare the recognizer with the derivation enumerator over
/// all strings up to `max_len` characters drawn from `alphabet`.
/// `enum_bound` must cover the shortest completion of every viable prefix
/// of length <= max_len, so bounded enumeration decides prefix membership.
fn assert_agrees_with_enumeration(
    g: &Grammar,
    alphabet: &[char],
    max_len: usize,
    enum_bound: usize,
) {
    let sentences = enumerate_sentences(g, enum_bound);
    fn rec(
        g: &Grammar,
        alphabet: &[char],
        sentences: &std::collections::BTreeSet<String>,
        prefix: &mut String,
        state: &RecognizerState,
        max_len: usize,
    ) {
        let oracle_accepts = sentences.contains(prefix.as_str());
        let oracle_prefix = sentences.iter().any(|s| s.starts_with(prefix.as_str()));
        assert_eq!(
            state.is_complete(),
            oracle_accepts,
            "accepts mismatch on {prefix:?}"
        );
        assert_eq!(
            state.is_alive(),
            oracle_prefix,
            "is_prefix mismatch on {prefix:?}"
        );
        if prefix.chars().count() == max_len {
            return;
        }
        for &ch in alphabet {
            prefix.push(ch);
            rec(
                g,
                alphabet,
                sentences,
                prefix,
                &state.advance(g, ch),
                max_len,
            );
            prefix.pop();
        }
    }
    rec(
        g,
        alphabet,
        &sentences,
        &mut String::new(),
        &g.init_state(),
        max_len,
    );
}

#[test]
fn exhaustive_agreement_binary_grammar() {
    assert_agrees_with_enumeration(&binary_grammar(), &['0', '1'], 8, 8);
}

#[test]
fn exhaustive_agreement_nullable_grammar() {
    let g = Grammar::parse_bnf("S ::= A \"x\" A\nA ::= \"\" | \"y\" A\n").unwrap();
    assert_agrees_with_enumeration(&g, &['x', 'y'], 6, 7);
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        /// Folding advance over a token's characters is definitionally what
        /// admissible does.
        #[test]
        fn admissible_equals_char_fold(
            prefix in proptest::collection::vec(proptest::bool::ANY, 0..6),
            token in proptest::collection::vec(proptest::bool::ANY, 1..4),
        ) {
            let g = binary_grammar();
            let mut state = g.init_state();
            for b in &prefix {
                state = state.advance(&g, if *b { '1' } else { '0' });
            }
            let token_text: String = token.iter().map(|b| if *b { '1' } else { '0' }).collect();
            let via_admissible = state.admissible(&g, &token_text).unwrap();
            let mut via_fold = state.clone();
            for ch in token_text.chars() {
                via_fold = via_fold.advance(&g, ch);
            }
            prop_assert_eq!(via_admissible.status(), via_fold.status());
        }

        /// Dead states never resurrect; Complete implies alive.
        #[test]
        fn dead_is_absorbing(
            s in proptest::collection::vec(proptest::bool::ANY, 0..10),
        ) {
            let g = binary_grammar();
            let mut state = g.init_state();
            let mut was_dead = false;
            for b in &s {
                state = state.advance(&g, if *b { '1' } else { '0' });
                if was_dead {
                    prop_assert!(state.is_dead());
                }
                was_dead = state.is_dead();
                if state.is_complete() {
                    prop_assert!(state.is_alive());
                }
            }
        }
    }
}
