//! Porter's 1980 suffix-stripping algorithm.
//!
//! Stems are the identity of graph nodes and the basis of phrase
//! matching, so the algorithm is implemented here exactly as published
//! (steps 1a through 5b, longest-matching suffix per step). Following
//! the reference implementation, words of length <= 2 are returned
//! unchanged, and only pure `a-z` tokens are stemmed; anything with a
//! digit or non-ASCII letter passes through untouched.

/// `true` if position `i` holds a consonant: not a/e/i/o/u, and `y`
/// only when it follows a vowel or starts the word.
fn is_cons(w: &[u8], i: usize) -> bool {
    match w[i] {
        b'a' | b'e' | b'i' | b'o' | b'u' => false,
        b'y' => i == 0 || !is_cons(w, i - 1),
        _ => true,
    }
}

/// The measure m of a word part: the number of vowel-consonant
/// sequences in the form [C](VC)^m[V].
fn measure(w: &[u8]) -> usize {
    let n = w.len();
    let mut m = 0;
    let mut i = 0;
    while i < n && is_cons(w, i) {
        i += 1;
    }
    loop {
        while i < n && !is_cons(w, i) {
            i += 1;
        }
        if i == n {
            break;
        }
        while i < n && is_cons(w, i) {
            i += 1;
        }
        m += 1;
        if i == n {
            break;
        }
    }
    m
}

fn has_vowel(w: &[u8]) -> bool {
    (0..w.len()).any(|i| !is_cons(w, i))
}

/// *d: ends with a double consonant.
fn ends_double_cons(w: &[u8]) -> bool {
    let n = w.len();
    n >= 2 && w[n - 1] == w[n - 2] && is_cons(w, n - 1)
}

/// *o: ends consonant-vowel-consonant where the final consonant is not
/// w, x or y.
fn ends_cvc(w: &[u8]) -> bool {
    let n = w.len();
    n >= 3
        && is_cons(w, n - 3)
        && !is_cons(w, n - 2)
        && is_cons(w, n - 1)
        && !matches!(w[n - 1], b'w' | b'x' | b'y')
}

struct Rule {
    suffix: &'static [u8],
    replacement: &'static [u8],
}

const fn rule(suffix: &'static [u8], replacement: &'static [u8]) -> Rule {
    Rule { suffix, replacement }
}

/// Applies the longest-matching rule of a step, but only if `cond`
/// holds on the remaining stem. Per the algorithm, when the longest
/// matching suffix fails its condition no other rule of the step fires.
fn apply_rules(w: &mut Vec<u8>, rules: &[Rule], cond: impl Fn(&[u8], &'static [u8]) -> bool) {
    let best = rules
        .iter()
        .filter(|r| w.ends_with(r.suffix))
        .max_by_key(|r| r.suffix.len());
    if let Some(r) = best {
        let stem_len = w.len() - r.suffix.len();
        if cond(&w[..stem_len], r.suffix) {
            w.truncate(stem_len);
            w.extend_from_slice(r.replacement);
        }
    }
}

fn step_1a(w: &mut Vec<u8>) {
    const RULES: &[Rule] = &[
        rule(b"sses", b"ss"),
        rule(b"ies", b"i"),
        rule(b"ss", b"ss"),
        rule(b"s", b""),
    ];
    apply_rules(w, RULES, |_, _| true);
}

fn step_1b(w: &mut Vec<u8>) {
    if w.ends_with(b"eed") {
        if measure(&w[..w.len() - 3]) > 0 {
            w.truncate(w.len() - 1);
        }
        return;
    }
    let removed = if w.ends_with(b"ed") && has_vowel(&w[..w.len() - 2]) {
        w.truncate(w.len() - 2);
        true
    } else if w.ends_with(b"ing") && has_vowel(&w[..w.len() - 3]) {
        w.truncate(w.len() - 3);
        true
    } else {
        false
    };
    if !removed {
        return;
    }
    if w.ends_with(b"at") || w.ends_with(b"bl") || w.ends_with(b"iz") {
        w.push(b'e');
    } else if ends_double_cons(w) {
        if !matches!(w[w.len() - 1], b'l' | b's' | b'z') {
            w.truncate(w.len() - 1);
        }
    } else if measure(w) == 1 && ends_cvc(w) {
        w.push(b'e');
    }
}

fn step_1c(w: &mut Vec<u8>) {
    if w.ends_with(b"y") && has_vowel(&w[..w.len() - 1]) {
        let n = w.len();
        w[n - 1] = b'i';
    }
}

fn step_2(w: &mut Vec<u8>) {
    const RULES: &[Rule] = &[
        rule(b"ational", b"ate"),
        rule(b"tional", b"tion"),
        rule(b"enci", b"ence"),
        rule(b"anci", b"ance"),
        rule(b"izer", b"ize"),
        rule(b"abli", b"able"),
        rule(b"alli", b"al"),
        rule(b"entli", b"ent"),
        rule(b"eli", b"e"),
        rule(b"ousli", b"ous"),
        rule(b"ization", b"ize"),
        rule(b"ation", b"ate"),
        rule(b"ator", b"ate"),
        rule(b"alism", b"al"),
        rule(b"iveness", b"ive"),
        rule(b"fulness", b"ful"),
        rule(b"ousness", b"ous"),
        rule(b"aliti", b"al"),
        rule(b"iviti", b"ive"),
        rule(b"biliti", b"ble"),
    ];
    apply_rules(w, RULES, |stem, _| measure(stem) > 0);
}

fn step_3(w: &mut Vec<u8>) {
    const RULES: &[Rule] = &[
        rule(b"icate", b"ic"),
        rule(b"ative", b""),
        rule(b"alize", b"al"),
        rule(b"iciti", b"ic"),
        rule(b"ical", b"ic"),
        rule(b"ful", b""),
        rule(b"ness", b""),
    ];
    apply_rules(w, RULES, |stem, _| measure(stem) > 0);
}

fn step_4(w: &mut Vec<u8>) {
    const RULES: &[Rule] = &[
        rule(b"al", b""),
        rule(b"ance", b""),
        rule(b"ence", b""),
        rule(b"er", b""),
        rule(b"ic", b""),
        rule(b"able", b""),
        rule(b"ible", b""),
        rule(b"ant", b""),
        rule(b"ement", b""),
        rule(b"ment", b""),
        rule(b"ent", b""),
        rule(b"ion", b""),
        rule(b"ou", b""),
        rule(b"ism", b""),
        rule(b"ate", b""),
        rule(b"iti", b""),
        rule(b"ous", b""),
        rule(b"ive", b""),
        rule(b"ize", b""),
    ];
    apply_rules(w, RULES, |stem, suffix| {
        let ok = measure(stem) > 1;
        if suffix == b"ion" {
            ok && matches!(stem.last(), Some(b's') | Some(b't'))
        } else {
            ok
        }
    });
}

fn step_5a(w: &mut Vec<u8>) {
    if w.ends_with(b"e") {
        let stem = &w[..w.len() - 1];
        let m = measure(stem);
        if m > 1 || (m == 1 && !ends_cvc(stem)) {
            w.truncate(w.len() - 1);
        }
    }
}

fn step_5b(w: &mut Vec<u8>) {
    if measure(w) > 1 && ends_double_cons(w) && w[w.len() - 1] == b'l' {
        w.truncate(w.len() - 1);
    }
}

/// Stems a lowercase token.
pub fn stem(token: &str) -> String {
    if token.len() <= 2 || !token.bytes().all(|b| b.is_ascii_lowercase()) {
        return token.to_string();
    }
    let mut w = token.as_bytes().to_vec();
    step_1a(&mut w);
    step_1b(&mut w);
    step_1c(&mut w);
    step_2(&mut w);
    step_3(&mut w);
    step_4(&mut w);
    step_5a(&mut w);
    step_5b(&mut w);
    String::from_utf8(w).expect("stem stays ascii")
}
