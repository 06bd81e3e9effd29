use dbb_core::metrics::{
    bertscore, count_tokens, debate_fidelity, embed_tokens, intervention_fidelity, ratios,
    tokenize, FidelityScore, RatioReport, StubEmbeddings,
};
use dbb_core::pipeline::{DebateSummary, Method, StructuredSummary, SummaryFields};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// Full similarity matrix, then row and column maxima.
fn brute_force(stub: &StubEmbeddings, cand: &[String], reference: &[String]) -> (f64, f64) {
    let sim: Vec<Vec<f64>> = cand
        .iter()
        .map(|c| {
            reference
                .iter()
                .map(|r| cosine(&stub.vector(c), &stub.vector(r)))
                .collect()
        })
        .collect();
    let p = sim
        .iter()
        .map(|row| row.iter().cloned().fold(f64::MIN, f64::max))
        .sum::<f64>()
        / cand.len() as f64;
    let r = (0..reference.len())
        .map(|j| sim.iter().map(|row| row[j]).fold(f64::MIN, f64::max))
        .sum::<f64>()
        / reference.len() as f64;
    (p, r)
}

fn word() -> impl Strategy<Value = String> {
    prop::sample::select(vec![
        "tax", "farm", "budget", "fish", "energy", "grid", "vote", "law", "euro", "aid", "rule",
        "trade",
    ])
    .prop_map(String::from)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn greedy_matching_equals_brute_force(
        cand in prop::collection::vec(word(), 1..=6),
        reference in prop::collection::vec(word(), 1..=6),
        salt in "[a-z]{0,6}",
        dim in 4usize..64,
    ) {
        let stub = StubEmbeddings::new(dim, salt);
        let s = bertscore(&cand.join(" "), &reference.join(" "), &stub, None).unwrap();
        let (p, r) = brute_force(&stub, &cand, &reference);
        prop_assert!((s.precision - p).abs() <= 1e-12, "{} vs {}", s.precision, p);
        prop_assert!((s.recall - r).abs() <= 1e-12, "{} vs {}", s.recall, r);
        let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        prop_assert!((s.f1 - f1).abs() <= 1e-12);
    }

    #[test]
    fn swapping_arguments_swaps_precision_and_recall(
        a in prop::collection::vec(word(), 1..=8),
        b in prop::collection::vec(word(), 1..=8),
    ) {
        let stub = StubEmbeddings::new(32, "dual");
        let ab = bertscore(&a.join(" "), &b.join(" "), &stub, None).unwrap();
        let ba = bertscore(&b.join(" "), &a.join(" "), &stub, None).unwrap();
        prop_assert_eq!(ab.precision, ba.recall);
        prop_assert_eq!(ab.recall, ba.precision);
    }

    #[test]
    fn self_score_is_one(words in prop::collection::vec(word(), 1..20)) {
        let stub = StubEmbeddings::new(64, "");
        let text = words.join(", ");
        let s = bertscore(&text, &text, &stub, None).unwrap();
        prop_assert!((s.precision - 1.0).abs() < 1e-12);
        prop_assert!((s.recall - 1.0).abs() < 1e-12);
        prop_assert!((s.f1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn f1_lies_between_precision_and_recall(
        a in prop::collection::vec(word(), 1..=8),
        b in prop::collection::vec(word(), 1..=8),
    ) {
        let stub = StubEmbeddings::new(16, "f1");
        let s = bertscore(&a.join(" "), &b.join(" "), &stub, None).unwrap();
        if s.precision > 0.0 && s.recall > 0.0 {
            let lo = s.precision.min(s.recall);
            let hi = s.precision.max(s.recall);
            prop_assert!(lo - 1e-15 <= s.f1 && s.f1 <= hi + 1e-15);
        }
    }
}

#[test]
fn junk_tokens_never_raise_precision() {
    let stub = StubEmbeddings::new(256, "");
    let reference = "the council must fund rural broadband before the next budget";
    let junk = [
        "zyx", "quorp", "flim", "brak", "tesh", "vorn", "glup", "snid", "wex", "prin",
    ];
    let mut cand = reference.to_string();
    let mut last = bertscore(&cand, reference, &stub, None).unwrap().precision;
    for j in junk {
        cand.push(' ');
        cand.push_str(j);
        let p = bertscore(&cand, reference, &stub, None).unwrap().precision;
        assert!(p <= last, "{p} > {last} after appending {j}");
        last = p;
    }
}

#[test]
fn stub_vectors_are_nearly_orthogonal() {
    let stub = StubEmbeddings::new(256, "");
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let a: u64 = rng.random();
        let b: u64 = rng.random();
        if a == b {
            continue;
        }
        let c = cosine(&stub.vector(&format!("t{a}")), &stub.vector(&format!("t{b}")));
        worst = worst.max(c.abs());
    }
    assert!(worst < 0.5, "max |cos| = {worst}");
}

#[test]
fn repeated_tokens_share_a_unit_vector() {
    let stub = StubEmbeddings::new(256, "");
    let e = embed_tokens("tax tax", &stub).unwrap();
    assert_eq!(e.len(), 2);
    assert_eq!(e[0].vector, e[1].vector);
    let norm = e[0].vector.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((norm - 1.0).abs() < 1e-6);
    assert!(embed_tokens("", &stub).unwrap().is_empty());
}

#[test]
fn disjoint_texts_score_near_zero() {
    let stub = StubEmbeddings::new(256, "");
    let s = bertscore("fisheries quota reform", "digital tax on platforms", &stub, None).unwrap();
    assert!(s.f1.abs() < 0.1, "{s:?}");
}

fn summary(fields: SummaryFields) -> StructuredSummary {
    StructuredSummary {
        speaker_id: "s1".into(),
        order_index: 1,
        fields,
        failed: None,
    }
}

fn contentful() -> SummaryFields {
    SummaryFields {
        headline: "Farmers need fair prices and less paperwork".into(),
        issue: "Reform of the common agricultural policy after 2027".into(),
        position: "Supports simplification of the reform package but opposes any cuts to \
                   direct payments for young farmers and mountain regions"
            .into(),
        argument: "Small family farms cannot absorb new reporting duties while input costs \
                   keep rising, and rural employment in many regions depends on them. \
                   Satellite monitoring already provides the data that inspectors ask \
                   farmers to submit again on paper"
            .into(),
        proposal: "Cap administrative checks at one per year, index payments to inflation \
                   and create a crisis reserve that member states can draw on after floods"
            .into(),
        quotes: vec!["we cannot farm with forms".into()],
    }
}

#[test]
fn not_found_reconstruction_scores_low() {
    let stub = StubEmbeddings::new(256, "");
    let original = summary(contentful());
    let empty = summary(SummaryFields::empty());
    let s = intervention_fidelity(&original, &empty, &stub, None).unwrap();
    assert!(s.f1 < 0.3, "{s:?}");

    // The twelve heading words and colons match exactly, so precision stays
    // near one half and the score falls only as the original grows.
    assert!(s.precision >= 0.5, "{s:?}");
    let n = count_tokens(&original.render());
    assert!(n > 110, "fixture too short: {n} tokens");

    let same = intervention_fidelity(&original, &original.clone(), &stub, None).unwrap();
    assert!((same.f1 - 1.0).abs() < 1e-12);
}

#[test]
fn debate_fidelity_is_the_plain_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let scores: Vec<FidelityScore> = (0..37)
        .map(|_| {
            let f1: f64 = rng.random();
            FidelityScore {
                precision: f1,
                recall: f1,
                f1,
                rescaled: false,
                degenerate: false,
            }
        })
        .collect();
    let mut naive = 0.0;
    for s in &scores {
        naive += s.f1;
    }
    naive /= scores.len() as f64;
    assert!((debate_fidelity(&scores).unwrap() - naive).abs() < 1e-15);
    let halves = [FidelityScore { f1: 1.0, ..FidelityScore::zero() }, FidelityScore::zero()];
    assert_eq!(debate_fidelity(&halves).unwrap(), 0.5);
    assert!(debate_fidelity(&[]).is_err());
}

/// Counts tokens with a character-class walk that shares no code with the
/// library tokenizer.
fn oracle_count(text: &str) -> usize {
    let mut count = 0;
    let mut in_word = false;
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            if !in_word {
                count += 1;
            }
            in_word = true;
        } else {
            in_word = false;
            if !ch.is_whitespace() {
                count += 1;
            }
        }
    }
    count
}

fn random_text(rng: &mut ChaCha8Rng) -> String {
    const PIECES: [&str; 12] = [
        "Parliament", "co-operation", "2024", "€", "budget,", "l'Europe", "Ümwelt", "(vote)",
        "  ", "\n", "yes!", "naïve",
    ];
    let n = rng.random_range(0..40);
    (0..n)
        .map(|_| PIECES[rng.random_range(0..PIECES.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

#[test]
fn ratios_match_independent_recount() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let summaries: Vec<StructuredSummary> = (0..rng.random_range(1..5))
            .map(|_| {
                let mut f = SummaryFields::empty();
                f.argument = random_text(&mut rng);
                summary(f)
            })
            .collect();
        let recon: Vec<StructuredSummary> = (0..summaries.len())
            .map(|_| {
                let mut f = SummaryFields::empty();
                f.position = random_text(&mut rng);
                summary(f)
            })
            .collect();
        let text = random_text(&mut rng);
        let d = DebateSummary {
            debate_id: "d".into(),
            method: Method::Default,
            token_count: count_tokens(&text),
            text,
            intermediate: None,
            backend: "mock".into(),
        };
        let report = ratios(&d, &summaries, &recon);
        let ts = oracle_count(&d.text);
        let tsrc: usize = summaries.iter().map(|s| oracle_count(&s.render())).sum();
        let trec: usize = recon.iter().map(|s| oracle_count(&s.render())).sum();
        assert_eq!(report.tokens_summary, ts);
        assert_eq!(report.tokens_source, tsrc);
        assert_eq!(report.tokens_reconstructed, trec);
        let c = if tsrc == 0 { 0.0 } else { ts as f64 / tsrc as f64 };
        let dr = if ts == 0 { 0.0 } else { trec as f64 / ts as f64 };
        assert_eq!(report.compression_ratio.to_bits(), c.to_bits());
        assert_eq!(report.decompression_ratio.to_bits(), dr.to_bits());
        assert_eq!(report.degenerate, ts == 0 || tsrc == 0);
    }
}

#[test]
fn ratio_examples() {
    let r = RatioReport::from_counts(100, 400, 110);
    assert_eq!(r.compression_ratio, 0.25);
    assert_eq!(r.decompression_ratio, 1.1);
    let z = RatioReport::from_counts(0, 10, 5);
    assert_eq!(z.decompression_ratio, 0.0);
    assert!(z.degenerate);
}

#[test]
fn tokenizer_examples() {
    assert_eq!(tokenize("The EU acts."), ["the", "eu", "acts", "."]);
    assert!(tokenize("").is_empty());
    assert_eq!(tokenize("co-operation"), ["co", "-", "operation"]);
}
