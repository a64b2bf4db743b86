use std::collections::BTreeMap;

use rand::Rng;
use tcprobe::datasets::{rng_for, ChickenRabbitRanges, TaskKind, TaskSampler};
use tcprobe::oracle::{
    builtin_grammar, check_hierarchical_generation, check_label_consistency,
    check_within_task_generalization, common_words, verify_sparse_dependency, DependencyMatrix,
    Oracle, OracleError, TaskGrammar,
};
use tcprobe::types::LabeledSequence;

fn samplers() -> Vec<TaskSampler> {
    let pool = common_words();
    vec![
        TaskSampler::concat(TaskKind::ConcatLastLetter, &pool).unwrap(),
        TaskSampler::concat(TaskKind::ConcatAlt, &pool).unwrap(),
        TaskSampler::chicken_rabbit(ChickenRabbitRanges::default()).unwrap(),
    ]
}

#[test]
fn within_task_generalization_holds_for_random_pairs() {
    let mut passed = 0;
    for (g, sampler) in samplers().iter().enumerate() {
        let mut rng = rng_for(7, g as u64);
        for _ in 0..100 {
            let q1 = sampler.sample_question(&mut rng).unwrap();
            let q2 = sampler.sample_question(&mut rng).unwrap();
            let remembered = sampler.oracle().generate(&q1).unwrap();
            if check_within_task_generalization(sampler.oracle(), &remembered, &q2) {
                passed += 1;
            }
        }
    }
    assert_eq!(passed, 300);
}

#[test]
fn within_task_generalization_rejects_a_foreign_template() {
    let pool = common_words();
    let concat = TaskSampler::concat(TaskKind::ConcatLastLetter, &pool).unwrap();
    let alt = TaskSampler::concat(TaskKind::ConcatAlt, &pool).unwrap();
    let mut rng = rng_for(3, 0);
    let q = concat.sample_question(&mut rng).unwrap();
    let foreign = alt.oracle().generate(&q).unwrap();
    assert!(!check_within_task_generalization(
        concat.oracle(),
        &foreign,
        &q
    ));
}

fn toy() -> Oracle {
    Oracle::from_grammar(builtin_grammar("toy-3-level").unwrap())
}

/// Every sample of the toy grammar.
fn toy_samples(oracle: &Oracle) -> Vec<LabeledSequence> {
    let mut out = Vec::new();
    for verb in ["compute", "evaluate"] {
        for a in ["1", "2"] {
            for op in ["plus", "minus"] {
                for b in ["1", "2"] {
                    let q: BTreeMap<String, String> =
                        [("verb", verb), ("a", a), ("op", op), ("b", b)]
                            .into_iter()
                            .map(|(k, v)| (k.to_owned(), v.to_owned()))
                            .collect();
                    out.push(oracle.generate(&q).unwrap());
                }
            }
        }
    }
    out
}

/// The level-3 words are computed from the operator, which sits at level 2.
fn op_of(s: &LabeledSequence) -> &str {
    let words = s.word_texts();
    let i = words
        .iter()
        .position(|w| *w == " plus" || *w == " minus")
        .unwrap();
    words[i]
}

#[test]
fn label_consistency_matches_brute_force() {
    let oracle = toy();
    let samples = toy_samples(&oracle);
    assert_eq!(samples.len(), 16);
    let mut consistent = 0;
    for s1 in &samples {
        for s2 in &samples {
            for s3 in &samples {
                let triple = [s1.clone(), s2.clone(), s3.clone()];
                let expected = op_of(s2) == op_of(s3);
                let got = check_label_consistency(&triple, &oracle).unwrap();
                assert_eq!(got.consistent, expected);
                assert_eq!(got.combined.is_some(), expected);
                consistent += usize::from(expected);
            }
        }
    }
    assert_eq!(consistent, 16 * 16 * 8);
}

fn remembering_toy() -> (Oracle, Vec<LabeledSequence>) {
    let mut oracle = toy();
    let samples = toy_samples(&oracle);
    for s in &samples {
        oracle.remember(s.clone()).unwrap();
    }
    (oracle, samples)
}

fn triples(samples: &[LabeledSequence]) -> impl Iterator<Item = [LabeledSequence; 3]> + '_ {
    samples.iter().flat_map(move |a| {
        samples.iter().flat_map(move |b| {
            samples
                .iter()
                .map(move |c| [a.clone(), b.clone(), c.clone()])
        })
    })
}

#[test]
fn hierarchical_generation_for_consistent_triples() {
    let (oracle, samples) = remembering_toy();
    let consistent: Vec<_> = triples(&samples)
        .filter(|t| op_of(&t[1]) == op_of(&t[2]))
        .collect();
    let stride = consistent.len().div_ceil(200);
    let checked: Vec<_> = consistent.iter().step_by(stride).collect();
    assert!(checked.len() <= 200 && checked.len() >= 100);
    for t in checked {
        assert!(check_hierarchical_generation(t, &oracle));
    }
}

#[test]
fn hierarchical_generation_rejects_inconsistent_triples() {
    let (oracle, samples) = remembering_toy();
    let inconsistent: Vec<_> = triples(&samples)
        .filter(|t| op_of(&t[1]) != op_of(&t[2]))
        .collect();
    assert_eq!(inconsistent.len(), 2048);
    for t in inconsistent.iter().step_by(10) {
        assert!(!check_hierarchical_generation(t, &oracle));
    }
}

#[test]
fn hierarchical_generation_rejects_unreproducible_samples() {
    let (oracle, samples) = remembering_toy();
    let mut tampered = samples[0].clone();
    let last = tampered.len() - 2;
    tampered.words[last].text = " 9".into();
    tampered.words[last].tokens[0].text = " 9".into();
    assert!(!oracle.remembers(&tampered));
    let t = [tampered, samples[0].clone(), samples[0].clone()];
    assert!(!check_hierarchical_generation(&t, &oracle));
    let t = [samples[0].clone(), samples[0].clone(), samples[0].clone()];
    assert!(check_hierarchical_generation(&t, &oracle));
}

#[test]
fn toy_dependency_is_sparse_and_verified() {
    let oracle = toy();
    let truth: DependencyMatrix = "1;0,1;0,1,1".parse().unwrap();
    assert_eq!(oracle.grammar().derived_dependency(), truth);
    assert!(verify_sparse_dependency(&oracle, &truth, 100_000).unwrap());
    let wrong: DependencyMatrix = "1;0,1;0,0,1".parse().unwrap();
    assert!(!verify_sparse_dependency(&oracle, &wrong, 100_000).unwrap());
    assert!(verify_sparse_dependency(&oracle, &DependencyMatrix::full(3), 100_000).unwrap());
}

const SKIP_LEVEL: &str = r#"
name = "skip-level"
n_levels = 3
prompt = "Greet {greet}."
question = " {x} in {unit}"
answer = """

{greet} {x} in {unit} gives {y}."""

[roles]
greet = { words = ["hi", "yo"] }
x = { words = ["cat", "dog", "owl"] }
unit = { words = ["box", "bag"] }
joined = { letters = [2, 10] }

[slots]
greet = { role = "greet", level = 1 }
unit = { role = "unit", level = 2 }
x = { role = "x", level = 3 }
y = { role = "joined", level = 3, compute = "concat", args = ["greet", "x"] }
"#;

#[test]
fn skip_level_dependency() {
    let grammar = TaskGrammar::from_toml_str(SKIP_LEVEL, None).unwrap();
    let oracle = Oracle::from_grammar(grammar);
    let truth: DependencyMatrix = "1;0,1;1,0,1".parse().unwrap();
    assert_eq!(oracle.grammar().derived_dependency(), truth);
    assert!(verify_sparse_dependency(&oracle, &truth, 100_000).unwrap());
    let false_zero: DependencyMatrix = "1;0,1;0,0,1".parse().unwrap();
    assert!(!verify_sparse_dependency(&oracle, &false_zero, 100_000).unwrap());
}

#[test]
fn exhaustion_cap_is_enforced() {
    let oracle = toy();
    let truth: DependencyMatrix = "1;0,1;0,1,1".parse().unwrap();
    assert!(matches!(
        verify_sparse_dependency(&oracle, &truth, 3),
        Err(OracleError::CapExceeded { cap: 3, .. })
    ));
}

#[test]
fn random_questions_generate_valid_sequences() {
    let mut rng = rng_for(1, 1);
    for sampler in samplers() {
        for _ in 0..20 {
            let q = sampler.sample_question(&mut rng).unwrap();
            let s = sampler.oracle().generate(&q).unwrap();
            assert!(tcprobe::types::validate_labeled_sequence(&s).is_empty());
            sampler.verify(&s).unwrap();
            let _: u8 = rng.random();
        }
    }
}
