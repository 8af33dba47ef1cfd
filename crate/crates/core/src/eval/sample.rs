use std::collections::BTreeMap;

use super::AttributeKind;
use crate::error::Result;
use crate::manifest::Manifest;
use crate::rng::SeededRng;
use crate::types::Gender;

#[derive(Debug, Clone)]
pub struct StratifiedSample {
    pub manifest: Manifest,
    /// Groups with fewer than the requested number of speakers, with their
    /// size.
    pub shortfalls: Vec<(String, usize)>,
}

/// Draws `n_per_group` speakers from every attribute group, half from
/// each gender where possible. A gender short of its half lends the
/// remainder to the other; a group smaller than `n_per_group` is taken
/// whole.
pub fn stratified_sample(
    manifest: &Manifest,
    attribute: AttributeKind,
    n_per_group: usize,
    seed: u64,
) -> Result<StratifiedSample> {
    let mut groups: BTreeMap<(u8, String), (Vec<&str>, Vec<&str>)> = BTreeMap::new();
    for s in manifest.speakers() {
        let entry = groups.entry(attribute.value_of(s)).or_default();
        match s.gender {
            Gender::Female => entry.0.push(&s.speaker_id),
            Gender::Male => entry.1.push(&s.speaker_id),
        }
    }
    let mut chosen: Vec<&str> = Vec::new();
    let mut shortfalls = Vec::new();
    for (g, ((_, value), (mut female, mut male))) in groups.into_iter().enumerate() {
        let size = female.len() + male.len();
        if size <= n_per_group {
            if size < n_per_group {
                log::warn!(target: "eval", "group {value} has {size} speakers, fewer than {n_per_group}; taking all");
                shortfalls.push((value, size));
            }
            chosen.extend(female);
            chosen.extend(male);
            continue;
        }
        female.sort_unstable();
        male.sort_unstable();
        let mut rng = SeededRng::derive(seed, g as u64);
        rng.shuffle(&mut female);
        rng.shuffle(&mut male);
        let mut take_f = (n_per_group / 2).min(female.len());
        let take_m = (n_per_group - take_f).min(male.len());
        take_f = (n_per_group - take_m).min(female.len());
        chosen.extend(&female[..take_f]);
        chosen.extend(&male[..take_m]);
    }
    Ok(StratifiedSample {
        manifest: manifest.subset(&chosen)?,
        shortfalls,
    })
}
