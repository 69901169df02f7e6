use recat::config::RunConfig;
use recat::corpus::{parse_corpus, Line};
use recat::sexpr::{parse_tree, parse_trees, write_binary, write_labeled};
use recat::synth;
use recat::vocab::Vocab;
use recat::IoError;
use recat_core::model::EncodeMode;
use recat_core::tree::BinaryTree;

fn vocab() -> Vocab {
    Vocab::parse("[UNK] 0\n[MASK] 1\nun 2\n##do 3\n##ne 4\nit 5\n").unwrap()
}

#[test]
fn vocab_roundtrips_and_rejects_bad_tables() {
    let v = vocab();
    assert_eq!(v.len(), 6);
    assert_eq!((v.unk_id(), v.mask_id()), (0, 1));
    assert_eq!(v.id("##do"), Some(3));
    assert_eq!(v.id_or_unk("zzz"), 0);
    assert_eq!(Vocab::parse(&v.to_text()).unwrap(), v);
    for bad in ["[UNK] 0\n[MASK] 2\n", "[UNK] 0\n[MASK] 1\na 2\na 3\n", "a 0\nb 1\n", "[UNK]\n", "[UNK] x\n"] {
        assert!(matches!(Vocab::parse(bad), Err(IoError::Format(_))), "{bad:?}");
    }
}

#[test]
fn word_pieces_become_forbidden_splits() {
    let l = Line::parse("un ##do ##ne it", &vocab());
    assert_eq!(l.sentence.tokens, [2, 3, 4, 5]);
    assert_eq!(l.sentence.nonsplittable, [1, 2]);
    assert_eq!(l.words(), ["undone", "it"]);
    assert!(l.has_pieces());
    let plain = Line::parse("it it", &vocab());
    assert!(plain.sentence.nonsplittable.is_empty() && !plain.has_pieces());
    assert_eq!(parse_corpus("it\n\n  \nun ##do\n", &vocab()).len(), 2);
}

#[test]
fn trees_roundtrip_through_text() {
    let text = "(S (NP (DT a) (NN dog)) (VP (VBI sings)))";
    let t = parse_tree(text).unwrap();
    assert_eq!(write_labeled(&t), text);
    assert_eq!(t.words(), ["a", "dog", "sings"]);
    let all = parse_trees(&format!("{text}\n\n(X a b)\n")).unwrap();
    assert_eq!(all.len(), 2);
    for bad in ["(S (NP a)", "S a)", "()", "(S a) b"] {
        assert!(parse_tree(bad).is_err(), "{bad:?}");
    }
}

#[test]
fn binary_trees_write_unlabeled_brackets() {
    let words: Vec<String> = ["w1", "w2", "w3"].iter().map(|s| s.to_string()).collect();
    let t = BinaryTree::right_branching(3).unwrap();
    assert_eq!(write_binary(&t, &words).unwrap(), "(X w1 (X w2 w3))");
    assert_eq!(write_binary(&BinaryTree::balanced(1).unwrap(), &words[..1]).unwrap(), "(w1)");
    assert_eq!(parse_tree("(w1)").unwrap().words(), ["w1"]);
    assert!(write_binary(&t, &words[..2]).is_err());
}

#[test]
fn config_text_roundtrips() {
    let mut c = RunConfig::default();
    c.model.dim = 32;
    c.train.mode = EncodeMode::Fast;
    c.train.lr_parser = 2.5e-4;
    c.checkpoint_every = 7;
    assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    let parsed = RunConfig::parse("# comment\ndim = 32 # inline\n\nmode = fast\n").unwrap();
    assert_eq!((parsed.model.dim, parsed.train.mode), (32, EncodeMode::Fast));
    for bad in ["dim = 8\ndim = 16\n", "colour = red\n", "dim 8\n", "dim = eight\n", "mode = slow\n"] {
        assert!(matches!(RunConfig::parse(bad), Err(IoError::Format(_))), "{bad:?}");
    }
    let invalid = RunConfig::parse("dim = 30\nheads = 4\n").unwrap();
    assert!(invalid.validate().is_err());
}

#[test]
fn synthetic_corpus_matches_its_vocabulary() {
    let v = synth::vocab();
    assert_eq!(v.len(), 50);
    assert!(synth::RULE_COUNT == 20);
    let trees = synth::generate(300, 4, 16, 1);
    assert_eq!(trees, synth::generate(300, 4, 16, 1));
    for t in &trees {
        let w = t.words();
        assert!((4..=16).contains(&w.len()));
        assert!(w.iter().all(|x| v.id(x).is_some_and(|id| id > v.mask_id())));
    }
    let c = synth::run_config();
    assert_eq!((c.model.vocab, c.model.mask_id), (v.len(), v.mask_id()));
    c.validate().unwrap();
}
