use std::collections::BTreeMap;

use tcprobe::datasets::{
    augment_content_replacement, augment_random_synonym, datasets_from_records, gen_chicken_rabbit,
    gen_concat_alt_template, gen_concat_last_letter, read_jsonl, write_jsonl, ChickenRabbitRanges,
    DatasetRecord, ProbeDataset, TaskKind, TaskSampler,
};
use tcprobe::oracle::{common_words, Oracle};
use tcprobe::types::LabeledSequence;
use tcprobe::wordseg::BoundaryRule;

fn answer_content_words(s: &LabeledSequence) -> usize {
    s.labels[s.answer_start()..]
        .iter()
        .filter(|l| !l.is_template())
        .count()
}

fn numbers(text: &str) -> Vec<i64> {
    text.split(|c: char| !c.is_ascii_digit())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().unwrap())
        .collect()
}

/// Checks a chicken-rabbit answer by trying every split of the heads.
fn brute_force_chicken_rabbit(question: &str, answer: &str) -> bool {
    let q = numbers(question);
    let (heads, legs) = (q[0], q[1]);
    let solutions: Vec<(i64, i64)> = (0..=heads)
        .map(|x| (x, heads - x))
        .filter(|(x, y)| 2 * x + 4 * y == legs)
        .collect();
    let a = numbers(answer);
    // x + y = H, 2x + 4y = L, x = n1, y = n2, n1, n2
    let (n1, n2) = (a[a.len() - 4], a[a.len() - 3]);
    solutions == vec![(n1, n2)] && a[a.len() - 2] == n1 && a[a.len() - 1] == n2
}

/// Recomputes the concatenation answer from the question words.
fn brute_force_concat(question: &str, answer: &str) -> bool {
    let expected: String = question
        .split([' ', ',', '.'])
        .filter(|w| !w.is_empty())
        .map(|w| w.chars().last().unwrap())
        .collect();
    let last = answer
        .trim_end_matches('.')
        .rsplit(' ')
        .next()
        .unwrap()
        .to_owned();
    expected.len() == 4 && last == expected
}

#[test]
fn concat_samples_have_ten_content_words() {
    let ds = gen_concat_last_letter(&common_words(), 30, 8, 1).unwrap();
    for d in &ds {
        for s in std::iter::once(&d.reference).chain(&d.replacements) {
            assert_eq!(answer_content_words(s), 10);
            assert!(brute_force_concat(&s.question_text(), &s.answer_text()));
        }
    }
}

#[test]
fn alternate_template_has_fourteen_content_words() {
    let ds = gen_concat_alt_template(&common_words(), 30, 8, 1).unwrap();
    for d in &ds {
        for s in std::iter::once(&d.reference).chain(&d.replacements) {
            assert_eq!(answer_content_words(s), 14);
            assert!(brute_force_concat(&s.question_text(), &s.answer_text()));
        }
    }
}

#[test]
fn replacements_change_every_question_word_and_keep_the_template() {
    let ds = gen_concat_last_letter(&common_words(), 20, 8, 4).unwrap();
    for (g, d) in ds.iter().enumerate() {
        d.check_alignment(g as u64).unwrap();
        let r = &d.reference;
        for s in &d.replacements {
            for j in 0..r.len() {
                if r.labels[j].is_template() {
                    assert_eq!(s.words[j].text, r.words[j].text);
                }
            }
        }
        for &j in &d.content_slots {
            let mut last_letters: Vec<char> = std::iter::once(r)
                .chain(&d.replacements)
                .map(|s| s.words[j].text.chars().last().unwrap())
                .collect();
            if j < r.answer_start() {
                last_letters.sort();
                last_letters.dedup();
                assert_eq!(last_letters.len(), 9, "slot {j} of group {g}");
            }
        }
    }
}

#[test]
fn generation_is_deterministic() {
    let a = gen_chicken_rabbit(ChickenRabbitRanges::default(), 10, 4, 99).unwrap();
    let b = gen_chicken_rabbit(ChickenRabbitRanges::default(), 10, 4, 99).unwrap();
    let c = gen_chicken_rabbit(ChickenRabbitRanges::default(), 10, 4, 100).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    let pool = common_words();
    assert_eq!(
        gen_concat_last_letter(&pool, 5, 8, 3).unwrap(),
        gen_concat_last_letter(&pool, 5, 8, 3).unwrap()
    );
}

#[test]
fn chicken_rabbit_augmentation_yields_500_verified_pairs() {
    let sampler = TaskSampler::chicken_rabbit(ChickenRabbitRanges::default()).unwrap();
    let sources = sampler.probe_datasets(100, 2, 5).unwrap();
    let records = augment_content_replacement(&sampler, &sources, 5, 6).unwrap();
    assert_eq!(records.len(), 500);
    let mut failures = 0;
    for (r, src) in records
        .iter()
        .zip(sources.iter().flat_map(|s| std::iter::repeat_n(s, 5)))
    {
        assert_ne!(r.question, src.reference.question_text());
        if !brute_force_chicken_rabbit(&r.question, &r.answer) {
            failures += 1;
        }
    }
    assert_eq!(failures, 0);
}

fn chicken_rabbit_answer(heads: i64, legs: i64) -> String {
    let sampler = TaskSampler::chicken_rabbit(ChickenRabbitRanges::default()).unwrap();
    let q: BTreeMap<String, String> = [
        ("obj1", "chickens".to_string()),
        ("obj2", "rabbits".to_string()),
        ("heads", heads.to_string()),
        ("legs", legs.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_owned(), v))
    .collect();
    let s = sampler.oracle().generate(&q).unwrap();
    sampler.verify(&s).unwrap();
    s.answer_text()
}

#[test]
fn classic_chicken_rabbit_examples() {
    let a = chicken_rabbit_answer(35, 94);
    assert!(
        a.ends_with("So there are 23 chickens and 12 rabbits."),
        "{a}"
    );
    let a = chicken_rabbit_answer(10, 20);
    assert!(
        a.ends_with("So there are 10 chickens and 0 rabbits."),
        "{a}"
    );
}

#[test]
fn unsolvable_question_is_refused() {
    let sampler = TaskSampler::chicken_rabbit(ChickenRabbitRanges::default()).unwrap();
    let q: BTreeMap<String, String> = [
        ("obj1", "chickens"),
        ("obj2", "rabbits"),
        ("heads", "10"),
        ("legs", "15"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_owned(), v.to_owned()))
    .collect();
    assert!(sampler.oracle().generate(&q).is_err());
}

#[test]
fn verification_catches_a_wrong_answer() {
    let sampler = TaskSampler::concat(TaskKind::ConcatLastLetter, &common_words()).unwrap();
    let d = &sampler.probe_datasets(1, 2, 0).unwrap()[0];
    let mut s = d.reference.clone();
    let j = s.len() - 2;
    s.words[j].text = " zzzz".into();
    assert!(sampler.verify(&s).is_err());
}

#[test]
fn jsonl_round_trip() {
    let ds = gen_concat_last_letter(&common_words(), 3, 4, 8).unwrap();
    let records: Vec<DatasetRecord> = ds
        .iter()
        .enumerate()
        .flat_map(|(g, d)| d.to_records(g as u64))
        .collect();
    let dir = std::env::temp_dir().join(format!("tcprobe-ds-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("records.jsonl");
    write_jsonl(&path, &records).unwrap();
    let back: Vec<DatasetRecord> = read_jsonl(&path).unwrap();
    assert_eq!(back, records);
    let rebuilt: Vec<ProbeDataset> =
        datasets_from_records(&back, &BoundaryRule::default()).unwrap();
    assert_eq!(rebuilt.len(), 3);
    for (a, b) in rebuilt.iter().zip(&ds) {
        assert_eq!(a.reference.word_texts(), b.reference.word_texts());
        assert_eq!(a.reference.labels, b.reference.labels);
        assert_eq!(a.n_replacements(), 4);
    }
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn synonym_augmentation_keeps_labels() {
    let ds = gen_concat_last_letter(&common_words(), 2, 2, 8).unwrap();
    let records = ds[0].to_records(0);
    let table: BTreeMap<String, Vec<String>> =
        [("letter".to_owned(), vec!["character".to_owned()])].into();
    let out = augment_random_synonym(&records, &table, 1.0, 1, &BoundaryRule::default()).unwrap();
    for (a, b) in out.iter().zip(&records) {
        assert_eq!(a.word_labels, b.word_labels);
        assert!(!a.answer.contains(" letter "));
        assert!(a.answer.contains(" character "));
    }
    assert!(augment_random_synonym(&records, &table, 0.0, 1, &BoundaryRule::default()).is_err());
}

#[test]
fn oracle_reads_back_generated_samples() {
    let ds = gen_chicken_rabbit(ChickenRabbitRanges::default(), 5, 2, 2).unwrap();
    let sampler = TaskSampler::chicken_rabbit(ChickenRabbitRanges::default()).unwrap();
    let oracle: &Oracle = sampler.oracle();
    for d in &ds {
        assert!(oracle.remembers(&d.reference));
    }
}
