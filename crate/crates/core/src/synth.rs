//! Synthetic Java-style code/comment corpora for smoke tests, examples and
//! small experiments.
//!
//! Each pair is a one-method snippet built from a verb template, a field noun
//! and a receiver object. Receivers appear in code under short abbreviations
//! (`cfg`, `repo`, ...) but in comments as full phrases, so part of every
//! comment has to be learned from other pairs that share the receiver.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CodeCommentPair, Split};
use crate::error::{Error, Result};
use crate::rng;

struct Verb {
    name: &'static str,
    code: &'static str,
    comment: &'static str,
}

// Placeholders: {T} type, {N} CamelNoun, {n} camelNoun, {o} receiver, {p} parameter,
// {w} noun words, {r} receiver phrase.
const VERBS: &[Verb] = &[
    Verb { name: "get", code: "{T} get{N}() { return {o}.{n}; }", comment: "returns the {w} from the {r}" },
    Verb { name: "set", code: "void set{N}({T} {p}) { {o}.{n} = {p}; }", comment: "sets the {w} in the {r}" },
    Verb { name: "has", code: "boolean has{N}() { return {o}.{n} != null; }", comment: "checks whether the {r} has a {w}" },
    Verb { name: "clear", code: "void clear{N}() { {o}.{n} = null; }", comment: "clears the {w} of the {r}" },
    Verb { name: "reset", code: "void reset{N}() { {o}.{n} = {o}.default{N}(); }", comment: "resets the {w} to the {r} default" },
    Verb { name: "load", code: "{T} load{N}() throws IOException { return {o}.read(\"{n}\"); }", comment: "loads the {w} from the {r}" },
    Verb { name: "save", code: "void save{N}({T} {p}) throws IOException { {o}.write(\"{n}\", {p}); }", comment: "saves the {w} to the {r}" },
    Verb { name: "validate", code: "boolean validate{N}({T} {p}) { return {p} != null && {o}.accepts({p}); }", comment: "validates the given {w} against the {r}" },
    Verb { name: "remove", code: "void remove{N}() { {o}.remove(\"{n}\"); }", comment: "removes the {w} from the {r}" },
    Verb { name: "update", code: "void update{N}({T} {p}) { {o}.put(\"{n}\", {p}); {o}.flush(); }", comment: "updates the {w} stored in the {r}" },
    Verb { name: "copy", code: "{T} copy{N}() { return {o}.{n}.clone(); }", comment: "returns a copy of the {r} {w}" },
    Verb { name: "print", code: "void print{N}() { System.out.println({o}.{n}); }", comment: "prints the {w} of the {r}" },
    Verb { name: "is", code: "boolean is{N}Valid() { return {o}.{n} != null && !{o}.{n}.isEmpty(); }", comment: "tells if the {r} {w} is valid" },
    Verb { name: "compute", code: "{T} compute{N}() { {T} v = {o}.{n}; return v == null ? {o}.fetch{N}() : v; }", comment: "computes the {w} using the {r} if missing" },
];

const NOUNS: &[(&str, &str)] = &[
    ("ItemCount", "item count"),
    ("UserName", "user name"),
    ("MaxSize", "max size"),
    ("Timeout", "timeout"),
    ("FileName", "file name"),
    ("Port", "port"),
    ("HostName", "host name"),
    ("Password", "password"),
    ("Email", "email"),
    ("Address", "address"),
    ("Balance", "balance"),
    ("Price", "price"),
    ("Title", "title"),
    ("Status", "status"),
    ("Priority", "priority"),
    ("Owner", "owner"),
    ("Version", "version"),
    ("Label", "label"),
    ("Color", "color"),
    ("Width", "width"),
    ("Height", "height"),
    ("Score", "score"),
    ("Token", "token"),
    ("Locale", "locale"),
    ("RetryLimit", "retry limit"),
    ("BufferSize", "buffer size"),
    ("StartDate", "start date"),
    ("EndDate", "end date"),
    ("PageIndex", "page index"),
    ("Quantity", "quantity"),
    ("Discount", "discount"),
    ("Rating", "rating"),
    ("Description", "description"),
    ("Category", "category"),
    ("Encoding", "encoding"),
    ("Checksum", "checksum"),
];

const RECEIVERS: &[(&str, &str)] = &[
    ("cfg", "configuration"),
    ("repo", "repository"),
    ("sess", "current session"),
    ("ctx", "request context"),
    ("db", "database"),
    ("mgr", "resource manager"),
    ("prefs", "user preferences"),
    ("cache", "local cache"),
];

const TYPES: &[&str] = &["int", "long", "String", "double", "Object", "Integer"];
const MODIFIERS: &[&str] = &["public", "protected", "private", "public final", "public synchronized"];
const PARAMS: &[&str] = &["value", "v", "x", "newValue", "arg", "input"];

/// Parameters for [`generate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_pairs: usize,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
    /// Add random modifiers, types, parameter names and logging statements.
    pub noise: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { n_pairs: 500, valid_fraction: 0.0, test_fraction: 0.2, seed: 17, noise: true }
    }
}

impl SynthConfig {
    /// All pairs in the training split.
    pub fn train_only(n_pairs: usize, seed: u64) -> Self {
        SynthConfig { n_pairs, valid_fraction: 0.0, test_fraction: 0.0, seed, noise: true }
    }

    pub fn max_pairs() -> usize {
        VERBS.len() * NOUNS.len() * RECEIVERS.len()
    }
}

fn fill(template: &str, noun: (&str, &str), receiver: (&str, &str), ty: &str, param: &str) -> String {
    let mut lower = noun.0.to_string();
    lower[..1].make_ascii_lowercase();
    template
        .replace("{T}", ty)
        .replace("{N}", noun.0)
        .replace("{n}", &lower)
        .replace("{o}", receiver.0)
        .replace("{p}", param)
        .replace("{w}", noun.1)
        .replace("{r}", receiver.1)
}

/// Build a corpus of distinct (verb, noun, receiver) combinations.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<CodeCommentPair>> {
    if cfg.n_pairs == 0 || cfg.n_pairs > SynthConfig::max_pairs() {
        return Err(Error::Config(format!("n_pairs must lie in 1..={}", SynthConfig::max_pairs())));
    }
    let fractions_ok = (0.0..1.0).contains(&cfg.valid_fraction)
        && (0.0..1.0).contains(&cfg.test_fraction)
        && cfg.valid_fraction + cfg.test_fraction < 1.0;
    if !fractions_ok {
        return Err(Error::Config("split fractions must be in [0, 1) and leave a training split".into()));
    }
    let mut r = rng::rng_at(cfg.seed, &[rng::stream::SYNTH]);
    let mut combos: Vec<(usize, usize, usize)> = (0..VERBS.len())
        .flat_map(|v| (0..NOUNS.len()).flat_map(move |n| (0..RECEIVERS.len()).map(move |o| (v, n, o))))
        .collect();
    combos.shuffle(&mut r);
    combos.truncate(cfg.n_pairs);

    let n_test = (cfg.n_pairs as f64 * cfg.test_fraction).round() as usize;
    let n_valid = (cfg.n_pairs as f64 * cfg.valid_fraction).round() as usize;
    let mut pairs = Vec::with_capacity(cfg.n_pairs);
    for (i, &(v, n, o)) in combos.iter().enumerate() {
        let verb = &VERBS[v];
        let (ty, param, modifier) = if cfg.noise {
            (*TYPES.choose(&mut r).unwrap(), *PARAMS.choose(&mut r).unwrap(), *MODIFIERS.choose(&mut r).unwrap())
        } else {
            ("int", "value", "public")
        };
        let mut code = format!("{modifier} {}", fill(verb.code, NOUNS[n], RECEIVERS[o], ty, param));
        if cfg.noise && r.gen_bool(0.3) {
            // insert a logging statement after the opening brace
            let brace = code.find('{').unwrap();
            code.insert_str(brace + 1, &format!(" LOG.debug(\"{}\");", verb.name));
        }
        let comment = fill(verb.comment, NOUNS[n], RECEIVERS[o], ty, param);
        let split = if i < n_test {
            Split::Test
        } else if i < n_test + n_valid {
            Split::Valid
        } else {
            Split::Train
        };
        pairs.push(CodeCommentPair { id: format!("toy-{i:05}"), code, comment, split });
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Corpus;

    #[test]
    fn deterministic_and_distinct() {
        let cfg = SynthConfig { n_pairs: 200, valid_fraction: 0.1, test_fraction: 0.2, seed: 9, noise: true };
        let a = generate(&cfg).unwrap();
        assert_eq!(a, generate(&cfg).unwrap());
        assert_ne!(a, generate(&SynthConfig { seed: 10, ..cfg.clone() }).unwrap());
        let corpus = Corpus::from_pairs(a).unwrap();
        corpus.check_disjoint().unwrap();
        let c = corpus.counts();
        assert_eq!((c.train, c.valid, c.test), (140, 20, 40));
    }

    #[test]
    fn template_filling() {
        let code = fill(VERBS[0].code, NOUNS[0], RECEIVERS[0], "int", "v");
        assert_eq!(code, "int getItemCount() { return cfg.itemCount; }");
        assert_eq!(fill(VERBS[0].comment, NOUNS[0], RECEIVERS[0], "int", "v"), "returns the item count from the configuration");
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(generate(&SynthConfig::train_only(0, 1)).is_err());
        assert!(generate(&SynthConfig::train_only(SynthConfig::max_pairs() + 1, 1)).is_err());
        let bad = SynthConfig { test_fraction: 0.6, valid_fraction: 0.5, ..SynthConfig::train_only(10, 1) };
        assert!(generate(&bad).is_err());
    }
}
