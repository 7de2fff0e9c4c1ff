use pcig_core::analysis::{analyze, classify_object, AnalysisConfig, AnalysisMode, Candidate};
use pcig_core::model::{ObjectCategory, PromptSpec};
use proptest::prelude::*;

fn candidate() -> impl Strategy<Value = Candidate> {
    (any::<bool>(), any::<bool>(), any::<bool>(), 0usize..5).prop_map(|(quoted, text_cue, gazetteer_hit, run)| Candidate {
        caption: "x".into(),
        quoted,
        text_cue,
        gazetteer_hit,
        capitalized_run: run,
    })
}

/// Prompt-ish text: real words, names, quotes, numbers and punctuation.
fn prompt_text() -> impl Strategy<Value = String> {
    let words = prop::sample::select(vec![
        "a", "the", "two", "three", "twenty-one", "red", "cat", "cats", "dog", "on", "under", "with", "and", "it",
        "they", "left", "of", "to", "in", "background", "Nike", "Golden", "State", "Warriors", "logo", "sign",
        "saying", "written", "'Hi'", "\"OPEN\"", "'", "\"", ",", ".", ";", "!", "is", "holding", "42", "é", "😀",
    ]);
    prop::collection::vec(words, 0..24).prop_map(|w| w.join(" "))
}

proptest! {
    #[test]
    fn text_beats_proper_noun_beats_general(c in candidate()) {
        let expected = if c.quoted || c.text_cue {
            ObjectCategory::Text
        } else if c.gazetteer_hit || c.capitalized_run >= 2 {
            ObjectCategory::Pn
        } else {
            ObjectCategory::Go
        };
        prop_assert_eq!(classify_object(&c), expected);
    }

    #[test]
    fn parser_is_total_on_word_salad(text in prompt_text(), mode in 0usize..3) {
        check_total(&text, mode)?;
    }

    #[test]
    fn parser_is_total_on_arbitrary_strings(text in "\\PC{0,80}", mode in 0usize..3) {
        check_total(&text, mode)?;
    }
}

fn check_total(text: &str, mode: usize) -> Result<(), TestCaseError> {
    let mode = [AnalysisMode::Full, AnalysisMode::NoKg, AnalysisMode::NoObjectExtraction][mode];
    let prompt = PromptSpec::new("p", if text.trim().is_empty() { "." } else { text });
    match analyze(&prompt, None, mode, &AnalysisConfig::default()) {
        Ok(result) => {
            prop_assert!(!result.objects.is_empty());
            for (i, o) in result.objects.iter().enumerate() {
                prop_assert_eq!(o.object_id, i);
                prop_assert!(!o.caption.trim().is_empty());
                prop_assert_eq!(o.category == ObjectCategory::Text, o.text_payload.is_some());
                prop_assert_eq!(o.category == ObjectCategory::Pn, o.pn_key.is_some());
            }
            for t in &result.triples {
                prop_assert!(t.subject_id < result.objects.len() && t.object_id < result.objects.len());
                prop_assert_ne!(t.subject_id, t.object_id);
            }
            if mode == AnalysisMode::NoKg {
                prop_assert!(result.triples.is_empty());
            }
        }
        Err(e) => prop_assert!(matches!(e.code(), "NO_OBJECTS_FOUND" | "COUNT_OVERFLOW"), "{}", e),
    }
    Ok(())
}

#[test]
fn deterministic_across_calls() {
    let p = PromptSpec::new("p", "Two dogs under a table and a cat on the sofa next to them.");
    let config = AnalysisConfig::default();
    let a = analyze(&p, None, AnalysisMode::Full, &config).unwrap();
    let b = analyze(&p, None, AnalysisMode::Full, &config).unwrap();
    assert_eq!(a.objects, b.objects);
    assert_eq!(a.triples, b.triples);
}
