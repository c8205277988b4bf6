use edgeprof_core::report::{
    lexical_similarity, score_pairs, symmetric_outlier_removal, ScoredPair, ScorerClient,
    LEXICAL_SCORER,
};

fn fixture_scorer(extra: &[&str]) -> ScorerClient {
    let script = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/fixtures/trigram_scorer.py"
    );
    let mut cmd = vec!["python3".to_string(), script.to_string()];
    cmd.extend(extra.iter().map(|s| s.to_string()));
    ScorerClient::new(cmd)
}

const REFERENCE: &str =
    "Two cyclists wait at the red light while a bus turns left across the junction.";
const PARAPHRASE: &str =
    "A bus is turning left through the junction as two cyclists wait at the red light.";
const UNRELATED: &str =
    "Whisk the eggs with sugar and fold in the flour before baking for an hour.";

fn pairs() -> Vec<(String, String)> {
    vec![
        (REFERENCE.into(), REFERENCE.into()),
        (PARAPHRASE.into(), REFERENCE.into()),
        (UNRELATED.into(), REFERENCE.into()),
        ("".into(), REFERENCE.into()),
    ]
}

#[test]
fn protocol_round_trip() {
    let (scores, variant) = score_pairs(Some(&fixture_scorer(&[])), &pairs());
    assert_eq!(variant, "trigram-fixture");
    assert!((scores[0].score - 1.0).abs() < 1e-6);
    assert!(scores[1].score > scores[2].score);
    assert!(scores[3].degenerate);
    assert!(scores.iter().all(|s| (0.0..=1.0).contains(&s.score)));
}

#[test]
fn failing_scorer_falls_back_and_says_so() {
    let (scores, variant) = score_pairs(Some(&fixture_scorer(&["--fail"])), &pairs());
    assert_eq!(variant, LEXICAL_SCORER);
    assert!((scores[0].score - 1.0).abs() < 1e-6);
    assert!(scores[1].score > scores[2].score);
    assert_eq!(
        scores[3],
        ScoredPair {
            score: 0.0,
            degenerate: true
        }
    );
}

#[test]
fn paraphrase_outranks_unrelated_under_both_scorers() {
    // (reference, paraphrase, unrelated)
    let corpus = [
        (REFERENCE, PARAPHRASE, UNRELATED),
        (
            "Three cars queue at the red light behind a delivery van.",
            "A delivery van and three cars are queued at a red light.",
            "The parking lot beside the station is almost full.",
        ),
        (
            "Pedestrians cross at the zebra crossing near the school.",
            "Near the school, pedestrians are crossing at the zebra crossing.",
            "Heavy rain reduces visibility on the motorway at night.",
        ),
        (
            "The cyclist signals right before merging into the bus lane.",
            "Before merging into the bus lane the cyclist signals right.",
            "Bake the bread until the crust turns golden brown.",
        ),
    ];
    let pairs: Vec<(String, String)> = corpus
        .iter()
        .flat_map(|(r, p, u)| {
            [
                (p.to_string(), r.to_string()),
                (u.to_string(), r.to_string()),
            ]
        })
        .collect();
    let (fixture, _) = fixture_scorer(&[]).score_batch(&pairs).unwrap();
    for (k, (r, p, u)) in corpus.iter().enumerate() {
        assert!(
            fixture[2 * k].score > fixture[2 * k + 1].score,
            "fixture scorer on {r:?}"
        );
        assert!(
            lexical_similarity(p, r) > lexical_similarity(u, r),
            "lexical fallback on {r:?}"
        );
    }
}

#[test]
fn removal_union_on_twenty_cases() {
    let ok = |s| ScoredPair {
        score: s,
        degenerate: false,
    };
    let bad = ScoredPair {
        score: 0.0,
        degenerate: true,
    };
    let a: Vec<_> = (0..20)
        .map(|i| if i % 7 == 3 { bad } else { ok(0.8) })
        .collect();
    let b: Vec<_> = (0..20)
        .map(|i| if i % 5 == 1 { bad } else { ok(0.6) })
        .collect();
    let (fa, fb, removed) = symmetric_outlier_removal(&a, &b).unwrap();
    let expected: Vec<usize> = (0..20).filter(|i| i % 7 == 3 || i % 5 == 1).collect();
    assert_eq!(removed.into_iter().collect::<Vec<_>>(), expected);
    assert_eq!(fa.len(), fb.len());
    assert_eq!(fa.len(), 20 - expected.len());
}
