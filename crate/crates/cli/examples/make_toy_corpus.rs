//! Writes the bundled synthetic toy data set to `data/toy/`.
//!
//! The source side is a small agglutinative language: nouns carry a class
//! prefix that changes with number, and verbs take a subject concord, a tense
//! marker and a tense-dependent final vowel. The target side is plain English.
//! Output is a pure function of the seed.
//!
//! ```text
//! cargo run -p xhembed-cli --example make_toy_corpus
//! ```

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const DIM: usize = 32;
const BIBLE_PAIRS: usize = 1500;
const SECOND_PAIRS: usize = 400;

struct Class {
    sg_prefix: &'static str,
    pl_prefix: &'static str,
    sg_concord: &'static str,
    pl_concord: &'static str,
}

const CLASSES: [Class; 4] = [
    Class { sg_prefix: "um", pl_prefix: "aba", sg_concord: "u", pl_concord: "ba" },
    Class { sg_prefix: "isi", pl_prefix: "izi", sg_concord: "si", pl_concord: "zi" },
    Class { sg_prefix: "in", pl_prefix: "izin", sg_concord: "i", pl_concord: "zi" },
    Class { sg_prefix: "ili", pl_prefix: "ama", sg_concord: "li", pl_concord: "a" },
];

// (class, stem, english singular, english plural)
const NOUNS: [(usize, &str, &str, &str); 22] = [
    (0, "ntu", "person", "people"),
    (0, "fazi", "woman", "women"),
    (0, "ntwana", "child", "children"),
    (0, "fundi", "student", "students"),
    (0, "limi", "farmer", "farmers"),
    (0, "hambi", "traveller", "travellers"),
    (1, "tya", "dish", "dishes"),
    (1, "hlalo", "chair", "chairs"),
    (1, "kolo", "school", "schools"),
    (1, "bane", "lamp", "lamps"),
    (1, "xhobo", "tool", "tools"),
    (2, "dlu", "house", "houses"),
    (2, "kosi", "king", "kings"),
    (2, "taka", "bird", "birds"),
    (2, "ja", "dog", "dogs"),
    (2, "komo", "cow", "cows"),
    (3, "tye", "stone", "stones"),
    (3, "hashe", "horse", "horses"),
    (3, "qanda", "egg", "eggs"),
    (3, "zwe", "country", "countries"),
    (3, "thole", "calf", "calves"),
    (3, "fu", "cloud", "clouds"),
];

// (stem without final vowel, base, third singular, past, transitive)
const VERBS: [(&str, &str, &str, &str, bool); 14] = [
    ("bon", "see", "sees", "saw", true),
    ("thand", "love", "loves", "loved", true),
    ("fun", "want", "wants", "wanted", true),
    ("phath", "carry", "carries", "carried", true),
    ("theng", "buy", "buys", "bought", true),
    ("biz", "call", "calls", "called", true),
    ("vul", "open", "opens", "opened", true),
    ("val", "close", "closes", "closed", true),
    ("hamb", "walk", "walks", "walked", false),
    ("sebenz", "work", "works", "worked", false),
    ("theth", "speak", "speaks", "spoke", false),
    ("fik", "arrive", "arrives", "arrived", false),
    ("lal", "sleep", "sleeps", "slept", false),
    ("cul", "sing", "sings", "sang", false),
];

// (concord, english subject, takes third person singular)
const PRONOUNS: [(&str, &str, bool); 4] = [("ndi", "i", false), ("si", "we", false), ("ni", "you", false), ("ba", "they", false)];

#[derive(Clone, Copy, PartialEq)]
enum Tense {
    Present,
    Past,
    Future,
}

const TENSES: [Tense; 3] = [Tense::Present, Tense::Past, Tense::Future];

fn noun_form(n: usize, plural: bool) -> String {
    let (class, stem, _, _) = NOUNS[n];
    let c = &CLASSES[class];
    format!("{}{stem}", if plural { c.pl_prefix } else { c.sg_prefix })
}

fn noun_english(n: usize, plural: bool) -> &'static str {
    if plural {
        NOUNS[n].3
    } else {
        NOUNS[n].2
    }
}

fn concord(n: usize, plural: bool) -> &'static str {
    let c = &CLASSES[NOUNS[n].0];
    if plural {
        c.pl_concord
    } else {
        c.sg_concord
    }
}

fn verb_form(concord: &str, v: usize, tense: Tense) -> String {
    let stem = VERBS[v].0;
    match tense {
        Tense::Present => format!("{concord}ya{stem}a"),
        Tense::Past => format!("{concord}{stem}ile"),
        Tense::Future => format!("{concord}zaku{stem}a"),
    }
}

fn verb_english(v: usize, tense: Tense, third_singular: bool) -> String {
    let (_, base, third, past, _) = VERBS[v];
    match tense {
        Tense::Present if third_singular => third.to_string(),
        Tense::Present => base.to_string(),
        Tense::Past => past.to_string(),
        Tense::Future => format!("will {base}"),
    }
}

/// `e` + noun without its initial vowel + `ni`.
fn locative(n: usize) -> String {
    let form = noun_form(n, false);
    format!("e{}ni", &form[1..])
}

struct Generator {
    rng: ChaCha8Rng,
}

impl Generator {
    fn subject(&mut self) -> (Vec<String>, String, Vec<String>, bool) {
        if self.rng.gen_bool(0.3) {
            let (c, en, third) = PRONOUNS[self.rng.gen_range(0..PRONOUNS.len())];
            (vec![], c.to_string(), vec![en.to_string()], third)
        } else {
            let n = self.rng.gen_range(0..NOUNS.len());
            let plural = self.rng.gen_bool(0.5);
            let en = vec!["the".to_string(), noun_english(n, plural).to_string()];
            (vec![noun_form(n, plural)], concord(n, plural).to_string(), en, !plural)
        }
    }

    fn object(&mut self) -> (String, Vec<String>) {
        let n = self.rng.gen_range(0..NOUNS.len());
        let plural = self.rng.gen_bool(0.5);
        (noun_form(n, plural), vec!["the".into(), noun_english(n, plural).into()])
    }

    /// `locative_share` is the probability of an intransitive clause with a
    /// place phrase; `future_bias` skews tense choice towards the future.
    fn sentence(&mut self, locative_share: f64, future_bias: f64) -> (String, String) {
        let (mut src, conc, mut tgt, third) = self.subject();
        let tense = if self.rng.gen_bool(future_bias) {
            Tense::Future
        } else {
            *TENSES.choose(&mut self.rng).unwrap()
        };
        let with_place = self.rng.gen_bool(locative_share);
        let v = loop {
            let v = self.rng.gen_range(0..VERBS.len());
            if !with_place || !VERBS[v].4 {
                break v;
            }
        };
        src.push(verb_form(&conc, v, tense));
        tgt.extend(verb_english(v, tense, third).split(' ').map(String::from));
        if with_place {
            let n = self.rng.gen_range(0..NOUNS.len());
            src.push(locative(n));
            tgt.extend(["at", "the", NOUNS[n].2].map(String::from));
        } else if VERBS[v].4 {
            let (o, en) = self.object();
            src.push(o);
            tgt.extend(en);
        }
        (src.join(" "), tgt.join(" ") + " .")
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    (0..DIM).map(|_| normal.sample(rng)).collect()
}

fn add(a: &[f64], b: &[f64], w: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + w * y).collect()
}

fn main() {
    let out = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy");
    fs::create_dir_all(&out).unwrap();
    let mut g = Generator {
        rng: ChaCha8Rng::seed_from_u64(2024),
    };

    let write_corpus = |g: &mut Generator, name: &str, n: usize, loc: f64, fut: f64| {
        let (mut xs, mut ys) = (String::new(), String::new());
        for _ in 0..n {
            let (x, y) = g.sentence(loc, fut);
            writeln!(xs, "{x}").unwrap();
            writeln!(ys, "{y}").unwrap();
        }
        fs::write(out.join(format!("{name}.xh")), xs).unwrap();
        fs::write(out.join(format!("{name}.en")), ys).unwrap();
    };
    write_corpus(&mut g, "bible", BIBLE_PAIRS, 0.1, 0.0);
    write_corpus(&mut g, "examples", SECOND_PAIRS, 0.6, 0.4);

    // Lexicon: every noun form, every infinitive, and a third of the finite
    // verb forms; the rest must come from subword composition.
    let mut lex = String::new();
    for n in 0..NOUNS.len() {
        for plural in [false, true] {
            writeln!(lex, "{}\t{}", noun_form(n, plural), noun_english(n, plural)).unwrap();
        }
    }
    let mut finite = BTreeSet::new();
    for (v, verb) in VERBS.iter().enumerate() {
        writeln!(lex, "uku{}a\t{}", verb.0, verb.1).unwrap();
        for &(c, _, _) in &PRONOUNS {
            for t in TENSES {
                finite.insert((verb_form(c, v, t), verb_english(v, t, false)));
            }
        }
        for class in &CLASSES {
            for (c, third) in [(class.sg_concord, true), (class.pl_concord, false)] {
                for t in TENSES {
                    finite.insert((verb_form(c, v, t), verb_english(v, t, third)));
                }
            }
        }
    }
    let mut seen = BTreeSet::new();
    for (form, en) in finite {
        if seen.insert(form.clone()) && g.rng.gen_bool(1.0 / 3.0) {
            writeln!(lex, "{form}\t{en}").unwrap();
        }
    }
    fs::write(out.join("lexicon.tsv"), lex).unwrap();

    // English vectors: lemma vector plus a shared offset per inflection.
    let rng = &mut g.rng;
    let plural = gaussian(rng);
    let past = gaussian(rng);
    let third = gaussian(rng);
    let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
    for word in ["the", "i", "we", "you", "they", "will", "at", "to", "."] {
        rows.push((word.to_string(), gaussian(rng)));
    }
    for &(_, _, sg, pl) in &NOUNS {
        let base = gaussian(rng);
        let noise = gaussian(rng);
        rows.push((sg.to_string(), add(&base, &noise, 0.1)));
        rows.push((pl.to_string(), add(&add(&base, &plural, 0.5), &noise, 0.1)));
    }
    for &(_, base_word, third_word, past_word, _) in &VERBS {
        let base = gaussian(rng);
        rows.push((base_word.to_string(), base.clone()));
        rows.push((third_word.to_string(), add(&base, &third, 0.4)));
        rows.push((past_word.to_string(), add(&base, &past, 0.5)));
    }
    for i in 0..300 {
        rows.push((format!("filler{i:03}"), gaussian(rng)));
    }
    let mut vec_text = format!("{} {DIM}\n", rows.len());
    for (w, v) in rows {
        let vals: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
        writeln!(vec_text, "{w} {}", vals.join(" ")).unwrap();
    }
    fs::write(out.join("english.vec"), vec_text).unwrap();
    println!("wrote toy data to {}", out.display());
}
