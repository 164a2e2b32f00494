use cbm_core::tensor_io::fold_concept_text;

/// Longest descriptor kept in a candidate list.
pub const MAX_DESCRIPTOR_CHARS: usize = 120;

fn strip_marker(line: &str) -> Option<&str> {
    for marker in ['-', '*', '•'] {
        if let Some(rest) = line.strip_prefix(marker) {
            return Some(rest);
        }
    }
    let digits = line.len() - line.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits > 0 {
        return line[digits..].strip_prefix('.');
    }
    None
}

/// Extracts bulleted or numbered lines with the marker removed.
///
/// Other lines are ignored. Duplicates are dropped case-insensitively, keeping the first.
pub fn parse_bullets(text: &str) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for line in text.lines() {
        let Some(rest) = strip_marker(line.trim()) else { continue };
        let item = rest.trim();
        if item.is_empty() {
            continue;
        }
        if seen.insert(fold_concept_text(item)) {
            out.push(item.to_string());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dash_bullets() {
        assert_eq!(
            parse_bullets("- Increased opacity\n- Rib crowding"),
            vec!["Increased opacity", "Rib crowding"]
        );
    }

    #[test]
    fn prose_yields_nothing() {
        assert!(parse_bullets("Atelectasis refers to the collapse of the lung. It shows as opacity.").is_empty());
        assert!(parse_bullets("").is_empty());
    }

    #[test]
    fn numbered_duplicates_collapse() {
        assert_eq!(parse_bullets("1. A\n2. A"), vec!["A"]);
        assert_eq!(parse_bullets("1. Rib crowding\n 12.  rib   CROWDING "), vec!["Rib crowding"]);
    }

    #[test]
    fn mixed_markers_and_noise() {
        let text = "Sure, here you go:\n  * one \n• two\n3) not a bullet\n-\n10. three\n2024 was a year";
        assert_eq!(parse_bullets(text), vec!["one", "two", "three"]);
    }
}
