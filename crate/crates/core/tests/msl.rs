use std::path::Path;

use mmfuse::cflm::{msl_normalize, msl_score_raw};
use mmfuse::store::synth::FIXTURE_LEXICON;
use mmfuse::store::Lexicon;

/// Sentence and its count of fixture-lexicon words, counted by hand.
pub const LABELED: [(&str, usize); 30] = [
    ("", 0),
    ("Just a normal Monday", 0),
    ("She is so bossy", 1),
    ("BOSSY bossy Bossy", 3),
    ("what a nag!", 1),
    ("nagging is not the same word", 0),
    ("Karen wants to see the manager", 1),
    ("karens everywhere", 0),
    ("a shrill, hysterical witch", 3),
    ("witch-hunt", 1),
    ("the witch's hat", 0),
    ("@karen said hi", 0),
    ("https://witch.example nothing here", 0),
    ("harpy harpy harpy harpy", 4),
    ("Shrew? Shrew.", 2),
    ("thot", 1),
    ("thought about it", 0),
    ("feminazi rant incoming", 1),
    ("feminazis", 0),
    ("  hysterical   ", 1),
    ("Hysterically funny", 0),
    ("nag, nag, nag", 3),
    ("the cat sat on the mat", 0),
    ("KAREN!!! why", 1),
    ("shrill-shrill", 2),
    ("bossy_boots", 1),
    ("witchcraft and wizardry", 0),
    ("my coffee is cold again", 0),
    ("harpy\tshrew\tnag", 3),
    ("www.bossy.com is a site; bossy is a word", 1),
];

fn fixture() -> Lexicon {
    Lexicon::parse(&FIXTURE_LEXICON.join("\n"), Path::new("fixture")).unwrap()
}

#[test]
fn hand_counts_match() {
    let lex = fixture();
    assert_eq!(lex.len(), 10);
    for (text, want) in LABELED {
        assert_eq!(msl_score_raw(text, &lex), want, "{text:?}");
    }
}

#[test]
fn normalization_cases() {
    assert_eq!(msl_normalize(2.0, 0.0, 4.0), 0.5);
    assert_eq!(msl_normalize(7.0, 0.0, 4.0), 1.0);
    assert_eq!(msl_normalize(3.0, 5.0, 5.0), 0.0);
}

#[test]
fn lexicon_file_rules() {
    let lex = Lexicon::parse("# comment\n\n  Karen \nNAG\n", Path::new("x")).unwrap();
    assert!(lex.contains("karen") && lex.contains("nag"));
    assert_eq!(lex.len(), 2);
    assert!(Lexicon::parse("two words\n", Path::new("x")).is_err());
}
