//! Mapping free-text answers back onto a choice index.

fn normalize(text: &str) -> String {
    let folded: String = text
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .collect();
    folded.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn letter(c: char, n: usize) -> Option<usize> {
    let i = (c.to_ascii_uppercase() as u32).checked_sub('A' as u32)? as usize;
    (c.is_ascii_alphabetic() && i < n).then_some(i)
}

/// Picks a choice, or `None` to abstain. Tried in order: a bare letter or an
/// `X)` prefix; equality with a choice after case folding and punctuation
/// stripping; containment of exactly one choice.
pub fn extract_choice(answer: &str, choices: &[String]) -> Option<usize> {
    let text = answer.trim();
    let mut chars = text.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => {
            if let Some(i) = letter(c, choices.len()) {
                return Some(i);
            }
        }
        (Some(c), Some(')')) => {
            if let Some(i) = letter(c, choices.len()) {
                return Some(i);
            }
        }
        (Some(c), Some('.')) if chars.as_str().is_empty() => {
            if let Some(i) = letter(c, choices.len()) {
                return Some(i);
            }
        }
        _ => {}
    }

    let norm = normalize(text);
    let normalized: Vec<String> = choices.iter().map(|c| normalize(c)).collect();
    let equal: Vec<usize> = (0..choices.len()).filter(|&i| normalized[i] == norm).collect();
    if let [i] = equal[..] {
        return Some(i);
    }
    if equal.len() > 1 {
        return None;
    }

    let padded = format!(" {norm} ");
    let contained: Vec<usize> = (0..choices.len())
        .filter(|&i| !normalized[i].is_empty() && padded.contains(&format!(" {} ", normalized[i])))
        .collect();
    match contained[..] {
        [i] => Some(i),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn examples() {
        let c = v(&["apoptosis", "necrosis", "autophagy", "pyroptosis"]);
        assert_eq!(extract_choice("B", &c), Some(1));
        assert_eq!(extract_choice(" b ", &c), Some(1));
        assert_eq!(extract_choice("C) autophagy", &c), Some(2));
        assert_eq!(extract_choice("D.", &c), Some(3));
        assert_eq!(extract_choice("Autophagy!", &c), Some(2));
        assert_eq!(extract_choice("The answer is pyroptosis.", &c), Some(3));
        assert_eq!(extract_choice("either necrosis or apoptosis", &c), None);
        assert_eq!(extract_choice("", &c), None);
        assert_eq!(extract_choice("Z", &c), None);
        assert_eq!(extract_choice("I cannot tell.", &c), None);
    }

    #[test]
    fn containment_respects_word_boundaries() {
        let c = v(&["RNA", "DNA"]);
        assert_eq!(extract_choice("it is mRNA", &c), None);
        assert_eq!(extract_choice("it is RNA", &c), Some(0));
    }

    fn choice_lists() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec("[a-z][a-z0-9 ,.'-]{1,24}", 2..=12).prop_filter("distinct normalized choices", |cs| {
            let norms: Vec<String> = cs.iter().map(|c| normalize(c)).collect();
            let distinct = norms.iter().collect::<std::collections::BTreeSet<_>>().len() == norms.len();
            let long = norms.iter().all(|n| n.chars().count() >= 2);
            let no_prefix = cs.iter().all(|c| c.chars().nth(1) != Some(')') && c.trim().chars().count() >= 3);
            distinct && long && no_prefix
        })
    }

    proptest! {
        #[test]
        fn verbatim_choice_roundtrips(cs in choice_lists(), pick in any::<prop::sample::Index>()) {
            let i = pick.index(cs.len());
            prop_assert_eq!(extract_choice(&cs[i], &cs), Some(i));
        }

        #[test]
        fn total_and_in_range(text in ".{0,40}", cs in choice_lists()) {
            let a = extract_choice(&text, &cs);
            prop_assert_eq!(a, extract_choice(&text, &cs));
            if let Some(i) = a {
                prop_assert!(i < cs.len());
            }
        }
    }
}
