use std::collections::BTreeSet;

use super::{tokens, CueTable, TextObject};
use crate::metadata::SAFE_LABEL;

/// The three cue rules, applied in this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    /// Temporal identity cue next to a `date` makes it a `birthdate`.
    TemporalIdentity,
    /// Personal identity cue next to `safe` text makes it a `name`.
    PersonalIdentity,
    /// Location cue next to `safe` text makes it a `place`.
    Location,
}

impl Rule {
    pub const ALL: [Rule; 3] = [Rule::TemporalIdentity, Rule::PersonalIdentity, Rule::Location];

    pub fn target_label(self) -> &'static str {
        match self {
            Rule::TemporalIdentity => "date",
            Rule::PersonalIdentity | Rule::Location => SAFE_LABEL,
        }
    }

    pub fn new_label(self) -> &'static str {
        match self {
            Rule::TemporalIdentity => "birthdate",
            Rule::PersonalIdentity => "name",
            Rule::Location => "place",
        }
    }
}

/// One relabeling decided by the rules.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relabel {
    pub rule: Rule,
    /// Index of the object carrying the cue.
    pub cue_index: usize,
    /// Index of the relabeled object.
    pub target_index: usize,
}

/// Index of the object closest to `from` by bbox centroid, ties to the lower index.
fn nearest(objects: &[TextObject], from: usize) -> Option<usize> {
    // doubled centroids keep the arithmetic exact
    let centre = |o: &TextObject| {
        (
            2 * o.bbox.x as i128 + o.bbox.width as i128,
            2 * o.bbox.y as i128 + o.bbox.height as i128,
        )
    };
    let (fx, fy) = centre(&objects[from]);
    objects
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != from)
        .map(|(j, o)| {
            let (x, y) = centre(o);
            ((x - fx).pow(2) + (y - fy).pow(2), j)
        })
        .min()
        .map(|(_, j)| j)
}

/// Decides the relabelings without applying them.
///
/// Every decision reads the input labels, so a relabeled object never
/// triggers or blocks another rule in the same pass. When several rules hit
/// the same object the first in input order (then rule order) wins.
pub fn plan_textual_rules(objects: &[TextObject], cues: &CueTable) -> Vec<Relabel> {
    let mut claimed = BTreeSet::new();
    let mut plan = Vec::new();
    for (i, obj) in objects.iter().enumerate() {
        let present: BTreeSet<String> = tokens(&obj.text).collect();
        for rule in Rule::ALL {
            if cues.cues(rule).is_disjoint(&present) {
                continue;
            }
            let Some(j) = nearest(objects, i) else {
                continue;
            };
            if objects[j].predicted_label == rule.target_label() && claimed.insert(j) {
                plan.push(Relabel {
                    rule,
                    cue_index: i,
                    target_index: j,
                });
            }
        }
    }
    plan
}

/// Applies the cue rules; output order equals input order.
pub fn apply_textual_rules(objects: &[TextObject], cues: &CueTable) -> Vec<TextObject> {
    let mut out = objects.to_vec();
    for r in plan_textual_rules(objects, cues) {
        out[r.target_index].predicted_label = r.rule.new_label().to_string();
    }
    out
}
