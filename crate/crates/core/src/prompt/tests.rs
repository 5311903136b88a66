use super::*;
use proptest::prelude::*;

#[test]
fn renders_reference_prompts() {
    let p = build_prompt(("good", "bad"), ("no", "yes"), "bad").unwrap();
    assert_eq!(p.text, "Example:good->Bad, no-Yes; Query:bad->");
    let p = build_prompt(("hot", "cold"), ("big", "small"), "cold").unwrap();
    assert_eq!(p.text, "Example:hot->Cold, big-Small; Query:cold->");
}

#[test]
fn spans_cover_separator_on_context_side() {
    let p = build_prompt(("good", "bad"), ("no", "yes"), "bad").unwrap();
    assert_eq!(&p.text[p.context_span.clone()], "Example:good->Bad, no-Yes; ");
    assert_eq!(&p.text[p.query_span.clone()], "Query:bad->");
}

#[test]
fn identical_pairs_render_both_slots() {
    let p = build_prompt(("up", "down"), ("up", "down"), "down").unwrap();
    assert_eq!(p.text, "Example:up->Down, up-Down; Query:down->");
}

#[test]
fn empty_or_reserved_words_rejected() {
    assert!(matches!(build_prompt(("", "b"), ("c", "d"), "b"), Err(Error::InvalidInput(_))));
    assert!(build_prompt(("a", "b"), ("c", "d"), "").is_err());
    assert!(build_prompt(("a-b", "b"), ("c", "d"), "b").is_err());
    assert!(build_prompt(("a b", "b"), ("c", "d"), "b").is_err());
}

#[test]
fn char_tokenization_counts_match_spans() {
    let p = build_prompt(("good", "bad"), ("no", "yes"), "bad").unwrap();
    let s = tokenize(&p, &Vocab::Char).unwrap();
    assert_eq!(s.context_indices.len(), p.context_span.len());
    assert_eq!(s.query_indices.len(), p.query_span.len());
    assert_eq!(s.context_indices.len() + s.query_indices.len(), p.text.chars().count());
    assert_eq!(s, tokenize(&p, &Vocab::Char).unwrap());
}

#[test]
fn char_vocab_round_trips() {
    let text = "Example:a->B\n ~";
    let ids = Vocab::Char.encode(text).unwrap();
    assert_eq!(ids[0], Vocab::char_id('E').unwrap());
    assert_eq!(Vocab::char_id('\n').unwrap(), 0);
    assert_eq!(Vocab::char_id('~').unwrap(), 95);
    assert_eq!(Vocab::Char.decode(&ids).unwrap(), text);
    assert!(matches!(Vocab::Char.encode("é"), Err(Error::UnknownToken(_))));
}

#[test]
fn straddling_word_token_goes_to_context() {
    // Word mode splits on whitespace: "Example:good->Bad,", "no-Yes;", "Query:bad->".
    let p = build_prompt(("good", "bad"), ("no", "yes"), "bad").unwrap();
    let vocab = Vocab::words_from([p.text.as_str()]);
    let s = tokenize(&p, &vocab).unwrap();
    assert_eq!(s.token_ids.len(), 3);
    assert_eq!(s.context_indices, vec![0, 1]);
    assert_eq!(s.query_indices, vec![2]);

    // A custom span ending mid-token pulls that token into the context.
    let mut shifted = p.clone();
    shifted.context_span = 0..p.context_span.end + 2;
    let s = tokenize(&shifted, &vocab).unwrap();
    assert_eq!(s.context_indices, vec![0, 1, 2]);
    assert!(s.query_indices.is_empty());
}

#[test]
fn word_vocab_rejects_unknown_words() {
    let vocab = Vocab::words_from(["a b"]);
    assert!(matches!(vocab.encode("a c"), Err(Error::UnknownToken(w)) if w == "c"));
    assert_eq!(vocab.decode(&vocab.encode("b a").unwrap()).unwrap(), "b a");
}

#[test]
fn grouping_examples() {
    let samples: Vec<usize> = (0..500).collect();
    let groups = group_samples(&samples, 10).unwrap();
    assert_eq!(groups.len(), 10);
    assert!(groups.iter().all(|g| g.len() == 50));
    assert_eq!(groups[3][0], 150);
    let ids = group_ids(500, 10).unwrap();
    assert_eq!((ids[0], ids[49], ids[50], ids[499]), (1, 1, 2, 10));

    let single = group_samples(&samples[..10], 10).unwrap();
    assert!(single.iter().enumerate().all(|(i, g)| g == &vec![i]));

    assert!(matches!(group_samples(&samples[..7], 2), Err(Error::InvalidInput(_))));
    assert!(group_samples(&samples[..7], 0).is_err());
}

#[test]
fn pair_file_parsing() {
    let pairs = parse_pairs("# header\ngood,bad\n\nhot, cold,antonym\n").unwrap();
    assert_eq!(pairs, vec![("good".into(), "bad".into()), ("hot".into(), "cold".into())]);
    assert!(parse_pairs("lonely\n").is_err());
    assert!(parse_pairs("\n# only comments\n").is_err());
}

#[test]
fn read_pairs_reports_path() {
    let err = read_pairs(Path::new("/nonexistent/pairs.txt")).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/pairs.txt"));
}

#[test]
fn generation_is_seeded_and_cycles_pairs() {
    let pairs = builtin_antonyms();
    let a = generate_prompts(&pairs, 500, 3).unwrap();
    let b = generate_prompts(&pairs, 500, 3).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, generate_prompts(&pairs, 500, 4).unwrap());
    for (i, p) in a.iter().enumerate() {
        assert_eq!(p.pairs[0], pairs[i % pairs.len()]);
        assert_ne!(p.pairs[0], p.pairs[1]);
        assert_eq!(p.query_word, p.pairs[0].1);
    }
    assert!(generate_prompts(&pairs[..1], 3, 0).is_err());
}

#[test]
fn builtin_lexicons_are_valid() {
    for (a, b) in builtin_antonyms().iter().chain(&builtin_synonyms()) {
        check_word(a).unwrap();
        check_word(b).unwrap();
        assert!(a.chars().all(|c| c.is_ascii_lowercase()));
        assert!(b.chars().all(|c| c.is_ascii_lowercase()));
    }
}

#[test]
fn completion_appends_first_word() {
    let p = build_prompt(("good", "bad"), ("no", "yes"), "bad").unwrap();
    assert_eq!(completed_line(&p), "Example:good->Bad, no-Yes; Query:bad->Good");
}

#[test]
fn grouped_tokenization_labels_samples() {
    let prompts = generate_prompts(&builtin_antonyms(), 20, 1).unwrap();
    let samples = tokenize_grouped(&prompts, &Vocab::Char, 4).unwrap();
    let labels: Vec<usize> = samples.iter().map(|s| s.group_id).collect();
    assert_eq!(labels, group_ids(20, 4).unwrap());
    let rec = SampleRecord::new(&prompts[0], &samples[0]);
    let json = serde_json::to_string(&rec).unwrap();
    assert_eq!(serde_json::from_str::<SampleRecord>(&json).unwrap(), rec);
}

fn word() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,7}"
}

proptest! {
    #[test]
    fn spans_partition_every_prompt(a1 in word(), b1 in word(), a2 in word(), b2 in word(), q in word()) {
        let p = build_prompt((&a1, &b1), (&a2, &b2), &q).unwrap();
        prop_assert_eq!(p.context_span.start, 0);
        prop_assert_eq!(p.context_span.end, p.query_span.start);
        prop_assert_eq!(p.query_span.end, p.text.len());
        prop_assert!(p.text[p.context_span.clone()].ends_with("; "));
        prop_assert!(p.text[p.query_span.clone()].starts_with("Query:"));

        let s = tokenize(&p, &Vocab::Char).unwrap();
        let mut all: Vec<usize> = s.context_indices.iter().chain(&s.query_indices).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..s.seq_len()).collect::<Vec<_>>());
        prop_assert_eq!(s.context_indices.len(), p.context_span.len());
    }

    #[test]
    fn parse_inverts_build(a1 in word(), b1 in word(), a2 in word(), b2 in word(), q in word()) {
        let p = build_prompt((&a1, &b1), (&a2, &b2), &q).unwrap();
        let back = parse_prompt(&p.text).unwrap();
        prop_assert_eq!(back, p);
    }

    #[test]
    fn grouping_partitions(n_groups in 1usize..8, size in 1usize..6) {
        let items: Vec<usize> = (0..n_groups * size).collect();
        let groups = group_samples(&items, n_groups).unwrap();
        prop_assert_eq!(groups.concat(), items);
    }
}
