//! Brute-force enumeration oracle for the candidate generators: each
//! technique's definition implemented directly over label strings, with its
//! own validity filtering. Deliberately independent of the library's
//! generation code paths.

use std::collections::{BTreeMap, BTreeSet};

/// Plain-literal resource tables for oracle runs.
pub struct OracleTables {
    pub adjacency: BTreeMap<char, Vec<char>>,
    pub glyphs: BTreeMap<char, Vec<&'static str>>,
    pub homophones: BTreeMap<&'static str, Vec<&'static str>>,
    pub keywords: Vec<&'static str>,
    pub separators: Vec<&'static str>,
}

/// Tables over the test alphabet {a, b, c, 1}, exercising multi-char glyph
/// replacements and overlapping homophone words.
pub fn test_tables() -> OracleTables {
    OracleTables {
        adjacency: [
            ('a', vec!['b', '1']),
            ('b', vec!['a', 'c']),
            ('c', vec!['b']),
            ('1', vec!['a', 'c']),
        ]
        .into_iter()
        .collect(),
        glyphs: [('a', vec!["ci", "1"]), ('1', vec!["c"]), ('b', vec!["a"])]
            .into_iter()
            .collect(),
        homophones: [
            ("ab", vec!["ba", "b"]),
            ("c", vec!["cc"]),
            ("bc", vec!["cb"]),
            // self-overlapping word: occurrences at adjacent positions
            ("11", vec!["1"]),
        ]
        .into_iter()
        .collect(),
        keywords: vec!["cc", "b1"],
        separators: vec!["", "-"],
    }
}

fn valid_label(label: &str) -> bool {
    !label.is_empty()
        && label.len() <= 63
        && label
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-')
        && !label.starts_with('-')
        && !label.ends_with('-')
}

/// All candidate names for one technique, by direct definition.
pub fn oracle(
    seed_label: &str,
    tld: &str,
    technique: &str,
    tables: &OracleTables,
) -> BTreeSet<String> {
    let chars: Vec<char> = seed_label.chars().collect();
    let n = chars.len();
    let mut labels: BTreeSet<String> = BTreeSet::new();

    match technique {
        "DELETION" => {
            for i in 0..n {
                let mut v = chars.clone();
                v.remove(i);
                labels.insert(v.iter().collect());
            }
        }
        "INSERTION" => {
            for (i, c) in chars.iter().enumerate() {
                if let Some(neighbors) = tables.adjacency.get(c) {
                    for &k in neighbors {
                        for pos in [i, i + 1] {
                            let mut v = chars.clone();
                            v.insert(pos, k);
                            labels.insert(v.iter().collect());
                        }
                    }
                }
            }
        }
        "SUBSTITUTION" => {
            for (i, c) in chars.iter().enumerate() {
                if let Some(neighbors) = tables.adjacency.get(c) {
                    for &k in neighbors {
                        let mut v = chars.clone();
                        v[i] = k;
                        labels.insert(v.iter().collect());
                    }
                }
            }
        }
        "TRANSPOSITION" => {
            for i in 0..n.saturating_sub(1) {
                let mut v = chars.clone();
                v.swap(i, i + 1);
                labels.insert(v.iter().collect());
            }
        }
        "BITSQUAT" => {
            for (i, c) in chars.iter().enumerate() {
                for bit in 0..8u8 {
                    let flipped = (*c as u8) ^ (1 << bit);
                    let mut ch = flipped as char;
                    if ch.is_ascii_uppercase() {
                        ch = ch.to_ascii_lowercase();
                    }
                    if ch.is_ascii_lowercase() || ch.is_ascii_digit() || ch == '-' {
                        let mut v = chars.clone();
                        v[i] = ch;
                        labels.insert(v.iter().collect());
                    }
                }
            }
        }
        "HOMOGLYPH" => {
            for (i, c) in chars.iter().enumerate() {
                if let Some(replacements) = tables.glyphs.get(c) {
                    for rep in replacements {
                        let mut out: String = chars[..i].iter().collect();
                        out.push_str(rep);
                        out.extend(&chars[i + 1..]);
                        labels.insert(out);
                    }
                }
            }
        }
        "SOUNDSQUAT" => {
            for (word, alternatives) in &tables.homophones {
                let mut from = 0;
                while let Some(found) = seed_label[from..].find(word) {
                    let start = from + found;
                    for alt in alternatives {
                        let mut out = String::new();
                        out.push_str(&seed_label[..start]);
                        out.push_str(alt);
                        out.push_str(&seed_label[start + word.len()..]);
                        labels.insert(out);
                    }
                    from = start + 1;
                }
            }
        }
        "COMBOSQUAT" => {
            for kw in &tables.keywords {
                for sep in &tables.separators {
                    labels.insert(format!("{kw}{sep}{seed_label}"));
                    labels.insert(format!("{seed_label}{sep}{kw}"));
                }
            }
        }
        other => panic!("oracle has no technique {other}"),
    }

    let seed_name = format!("{seed_label}.{tld}");
    labels
        .into_iter()
        .filter(|label| valid_label(label))
        .map(|label| format!("{label}.{tld}"))
        .filter(|name| *name != seed_name && name.len() <= 253)
        .collect()
}

/// Every label over the alphabet with length 1..=max_len.
pub fn all_labels(alphabet: &[char], max_len: usize) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = vec![0usize; 1];
    for len in 1..=max_len {
        current = vec![0; len];
        loop {
            out.push(current.iter().map(|&i| alphabet[i]).collect());
            // odometer increment
            let mut pos = len;
            loop {
                if pos == 0 {
                    break;
                }
                pos -= 1;
                current[pos] += 1;
                if current[pos] < alphabet.len() {
                    break;
                }
                current[pos] = 0;
                if pos == 0 {
                    break;
                }
            }
            if current.iter().all(|&i| i == 0) {
                break;
            }
        }
    }
    out
}
