use serde::{Deserialize, Serialize};

const LABEL_TAG: &str = "LABEL:";
const FINDING_TAG: &str = "FINDING:";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportSection {
    pub label: String,
    pub finding: String,
    /// Set when the block could not be parsed cleanly; such blocks are kept, never dropped.
    #[serde(default)]
    pub parse_warning: bool,
}

impl ReportSection {
    pub fn new(label: impl Into<String>, finding: impl Into<String>) -> Self {
        Self { label: label.into(), finding: finding.into(), parse_warning: false }
    }
}

fn is_label_line(line: &str) -> bool {
    line.trim_start().starts_with(LABEL_TAG)
}

/// Parses report text into part sections.
///
/// Canonical text is a sequence of `LABEL: ...` / `FINDING: ...` blocks. Text
/// without any `LABEL:` line is treated as model output whose first line is
/// the label and the rest the finding.
pub fn parse_report(text: &str) -> Vec<ReportSection> {
    if text.trim().is_empty() {
        return Vec::new();
    }
    if !text.lines().any(is_label_line) {
        return vec![split_generated_text(text)];
    }

    let mut sections = Vec::new();
    let mut preamble = Vec::new();
    let mut current: Option<BlockBuilder> = None;
    for line in text.lines() {
        if is_label_line(line) {
            if let Some(block) = current.take() {
                sections.push(block.finish());
            }
            let rest = line.trim_start()[LABEL_TAG.len()..].trim();
            current = Some(BlockBuilder::new(rest));
            continue;
        }
        match current.as_mut() {
            Some(block) => block.push_line(line),
            None => preamble.push(line),
        }
    }
    if let Some(block) = current {
        sections.push(block.finish());
    }

    let junk = preamble.join("\n");
    if !junk.trim().is_empty() {
        sections.insert(
            0,
            ReportSection { label: junk.trim().to_string(), finding: String::new(), parse_warning: true },
        );
    }
    sections
}

struct BlockBuilder {
    label: String,
    finding: Option<Vec<String>>,
}

impl BlockBuilder {
    fn new(label: &str) -> Self {
        Self { label: label.to_string(), finding: None }
    }

    fn push_line(&mut self, line: &str) {
        match &mut self.finding {
            Some(lines) => lines.push(line.to_string()),
            None => {
                let trimmed = line.trim_start();
                if let Some(rest) = trimmed.strip_prefix(FINDING_TAG) {
                    self.finding = Some(vec![rest.trim_start().to_string()]);
                } else if !trimmed.is_empty() {
                    // label wrapped onto a second line
                    if !self.label.is_empty() {
                        self.label.push(' ');
                    }
                    self.label.push_str(trimmed.trim_end());
                }
            }
        }
    }

    fn finish(self) -> ReportSection {
        let finding = self.finding.map(|lines| lines.join("\n").trim().to_string());
        let parse_warning = self.label.is_empty() || finding.as_deref().is_none_or(str::is_empty);
        ReportSection { label: self.label, finding: finding.unwrap_or_default(), parse_warning }
    }
}

/// Splits model output of the form `<label>\n<finding>` at the first newline.
pub fn split_generated_text(text: &str) -> ReportSection {
    let text = text.trim();
    match text.split_once('\n') {
        Some((label, finding)) => {
            let finding = finding.trim();
            ReportSection {
                label: label.trim().to_string(),
                finding: finding.to_string(),
                parse_warning: finding.is_empty(),
            }
        }
        None => ReportSection { label: text.to_string(), finding: String::new(), parse_warning: true },
    }
}

pub fn serialize_report(sections: &[ReportSection]) -> String {
    sections
        .iter()
        .map(|s| format!("{LABEL_TAG} {}\n{FINDING_TAG} {}", s.label, s.finding))
        .collect::<Vec<_>>()
        .join("\n\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_block() {
        let s = parse_report("LABEL: esophagus, biopsy\nFINDING: acute esophagitis.");
        assert_eq!(s, vec![ReportSection::new("esophagus, biopsy", "acute esophagitis.")]);
    }

    #[test]
    fn two_blocks_in_order() {
        let text = "LABEL: a, biopsy\nFINDING: one.\n\nLABEL: b, excision\nFINDING: two.\n - more.";
        let s = parse_report(text);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0], ReportSection::new("a, biopsy", "one."));
        assert_eq!(s[1], ReportSection::new("b, excision", "two.\n - more."));
    }

    #[test]
    fn generated_label_then_finding() {
        let s = parse_report("kidney, nephrectomy\nrenal cell carcinoma histologic type: clear cell.");
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].label, "kidney, nephrectomy");
        assert_eq!(s[0].finding, "renal cell carcinoma histologic type: clear cell.");
        assert!(!s[0].parse_warning);
    }

    #[test]
    fn unparseable_blocks_are_flagged_not_dropped() {
        let s = parse_report("stray header\nLABEL: skin, shave\nno finding tag here");
        assert_eq!(s.len(), 2);
        assert!(s[0].parse_warning);
        assert_eq!(s[0].label, "stray header");
        assert!(s[1].parse_warning);
        assert_eq!(s[1].label, "skin, shave no finding tag here");
        assert!(s[1].finding.is_empty());
    }

    #[test]
    fn empty_text() {
        assert!(parse_report("  \n ").is_empty());
        assert!(split_generated_text("just a label").parse_warning);
    }

    fn single_line() -> impl Strategy<Value = String> {
        "[a-z][a-z0-9 ,.()/-]{0,30}[a-z0-9.]".prop_map(|s| s)
    }

    fn finding() -> impl Strategy<Value = String> {
        prop::collection::vec(single_line(), 1..4).prop_map(|lines| lines.join("\n - "))
    }

    proptest! {
        #[test]
        fn parse_inverts_serialize(sections in prop::collection::vec((single_line(), finding()), 1..5)) {
            let sections: Vec<_> = sections.into_iter().map(|(l, f)| ReportSection::new(l, f)).collect();
            prop_assert_eq!(parse_report(&serialize_report(&sections)), sections);
        }
    }
}
