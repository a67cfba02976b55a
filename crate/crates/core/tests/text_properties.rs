use depsev_core::bdi_lexicon::{
    build_lexicon, english_questionnaire, map_score_to_band, score_tokens, BdiLexicon,
    SeverityBands, MAX_TOTAL,
};
use depsev_core::corpus::{normalize_tokens, preprocess, RawPost, StopList};
use proptest::prelude::*;
use std::sync::OnceLock;

fn lexicon() -> &'static BdiLexicon {
    static LEX: OnceLock<BdiLexicon> = OnceLock::new();
    LEX.get_or_init(|| build_lexicon(&english_questionnaire(), &StopList::english()).unwrap())
}

fn post(title: Option<String>, body: String) -> RawPost {
    RawPost {
        id: "p".into(),
        source: String::new(),
        created_at: None,
        title,
        body,
        language: "en".into(),
    }
}

fn free_text() -> impl Strategy<Value = String> {
    prop::collection::vec(
        prop_oneof![
            "[A-Za-z]{1,8}",
            "[0-9]{1,3}",
            Just("don't".to_string()),
            Just("I’m".to_string()),
            Just("!!".to_string()),
            Just("--".to_string()),
            Just("Ünïcödé".to_string()),
            Just("the".to_string()),
        ],
        0..12,
    )
    .prop_map(|words| words.join(" "))
}

fn url() -> impl Strategy<Value = String> {
    ("(http|https|ftp)", "[a-z]{1,8}", "[a-zA-Z0-9/?=&._-]{0,12}")
        .prop_map(|(scheme, host, path)| format!("{scheme}://{host}.com/{path}"))
}

fn keyword() -> impl Strategy<Value = String> {
    let words: Vec<String> = lexicon()
        .entries()
        .iter()
        .map(|e| e.keyword.clone())
        .collect();
    prop::sample::select(words)
}

proptest! {
    #[test]
    fn preprocessing_is_idempotent(title in prop::option::of(free_text()), body in free_text()) {
        let stops = StopList::english();
        let once = preprocess(&post(title, body), &stops).unwrap();
        let twice = preprocess(&post(None, once.text.clone()), &stops).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn a_lone_url_leaves_nothing(u in url()) {
        let doc = preprocess(&post(None, u), &StopList::english()).unwrap();
        prop_assert_eq!(doc.text, "");
    }

    #[test]
    fn urls_do_not_leak_tokens(a in free_text(), u in url(), b in free_text()) {
        let stops = StopList::english();
        prop_assert_eq!(
            normalize_tokens(&format!("{a} {u} {b}"), &stops),
            normalize_tokens(&format!("{a} {b}"), &stops)
        );
    }

    #[test]
    fn preprocessing_is_deterministic(body in free_text()) {
        let stops = StopList::english();
        let p = post(Some("Title".into()), body);
        prop_assert_eq!(preprocess(&p, &stops).unwrap(), preprocess(&p, &stops).unwrap());
    }

    #[test]
    fn adding_a_keyword_never_lowers_the_total(
        words in prop::collection::vec(keyword(), 0..30),
        extra in keyword(),
    ) {
        let before = score_tokens(words.iter().map(String::as_str), lexicon()).total;
        let after = score_tokens(
            words.iter().map(String::as_str).chain(std::iter::once(extra.as_str())),
            lexicon(),
        )
        .total;
        prop_assert!(after >= before);
    }

    #[test]
    fn totals_stay_within_bound(words in prop::collection::vec(keyword(), 0..400)) {
        let score = score_tokens(words.iter().map(String::as_str), lexicon());
        prop_assert!(score.total <= MAX_TOTAL);
        prop_assert_eq!(score.total, score.per_item.values().map(|&s| u32::from(s)).sum::<u32>());
    }

    #[test]
    fn concatenation_scores_at_least_either_part(
        a in prop::collection::vec(keyword(), 0..30),
        b in prop::collection::vec(keyword(), 0..30),
    ) {
        let sa = score_tokens(a.iter().map(String::as_str), lexicon()).total;
        let sb = score_tokens(b.iter().map(String::as_str), lexicon()).total;
        let sab = score_tokens(a.iter().chain(&b).map(String::as_str), lexicon()).total;
        prop_assert!(sab >= sa.max(sb));
    }
}

#[test]
fn every_score_maps_to_exactly_one_band() {
    let bands = SeverityBands::default();
    let mut previous = None;
    for score in 0..=MAX_TOTAL {
        let label = map_score_to_band(score, &bands).unwrap();
        let containing = bands
            .bands()
            .iter()
            .scan(0u32, |lo, &(hi, l)| {
                let range = (*lo, hi, l);
                *lo = hi + 1;
                Some(range)
            })
            .filter(|&(lo, hi, _)| (lo..=hi).contains(&score))
            .count();
        assert_eq!(containing, 1, "score {score}");
        if let Some(p) = previous {
            assert!(label >= p, "bands must be monotone at {score}");
        }
        previous = Some(label);
    }
    assert!(map_score_to_band(MAX_TOTAL + 1, &bands).is_err());
}
