use serde::{Deserialize, Serialize};

use crate::dataset::Severity;

/// Lowercase stems matched as substrings of the lowercased finding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeverityLexicon {
    pub significant: Vec<String>,
    pub mild: Vec<String>,
}

impl Default for SeverityLexicon {
    fn default() -> Self {
        let own = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        SeverityLexicon {
            significant: own(&[
                "carcinoma",
                "dysplasia",
                "malignan",
                "invasive",
                "metasta",
                "sarcoma",
                "lymphoma",
                "melanoma",
            ]),
            mild: own(&["inflammat", "gastritis", "esophagitis", "adenoma", "polyp", "hyperplas", "metaplas"]),
        }
    }
}

pub fn severity_classify(finding: &str, lexicon: &SeverityLexicon) -> Severity {
    let text = finding.to_lowercase();
    let hit = |stems: &[String]| stems.iter().any(|s| !s.is_empty() && text.contains(&s.to_lowercase()));
    if hit(&lexicon.significant) {
        Severity::Significant
    } else if hit(&lexicon.mild) {
        Severity::Mild
    } else {
        Severity::Normal
    }
}
