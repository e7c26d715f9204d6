//! Calibration plans: how many segments each language contributes.
//!
//! Three policies are supported. [`plan_mbs`] allocates proportionally to
//! each language's share of the training bytes, [`plan_equal`] splits the
//! budget evenly and [`plan_monolingual`] spends it all on one language.

use std::cmp::Ordering;
use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, LanguageEntry, LanguageManifest, Segment, Source};
use crate::error::{MbsError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Mbs,
    Equal,
    Monolingual(String),
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Mbs => write!(f, "mbs"),
            Policy::Equal => write!(f, "equal"),
            Policy::Monolingual(lang) => write!(f, "monolingual({lang})"),
        }
    }
}

/// Per-language segment counts, in manifest order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationPlan {
    pub policy: Policy,
    pub total: usize,
    pub counts: IndexMap<String, usize>,
}

impl CalibrationPlan {
    pub fn count(&self, lang: &str) -> usize {
        self.counts.get(lang).copied().unwrap_or(0)
    }

    pub fn active_languages(&self) -> impl Iterator<Item = (&str, usize)> {
        self.counts
            .iter()
            .filter(|(_, &c)| c > 0)
            .map(|(l, &c)| (l.as_str(), c))
    }

    /// Checks the sum and per-policy coverage invariants.
    pub fn validate(&self) -> Result<()> {
        if self.total == 0 {
            return Err(MbsError::Plan("total must be positive".into()));
        }
        let sum: usize = self.counts.values().sum();
        if sum != self.total {
            return Err(MbsError::Plan(format!(
                "counts sum to {sum} but total is {}",
                self.total
            )));
        }
        match &self.policy {
            Policy::Monolingual(lang) => {
                let active: Vec<_> = self.active_languages().collect();
                if active.len() != 1 || active[0].0 != lang {
                    return Err(MbsError::Plan(format!(
                        "monolingual plan for \"{lang}\" must have exactly that language active"
                    )));
                }
            }
            Policy::Mbs | Policy::Equal => {
                if let Some((lang, _)) = self.counts.iter().find(|(_, &c)| c == 0) {
                    return Err(MbsError::Plan(format!(
                        "language \"{lang}\" has no segments"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| MbsError::io(path, e))?;
        let plan: Self = serde_json::from_str(&text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| MbsError::io(path, e))
    }
}

fn resourced(manifest: &LanguageManifest) -> Vec<&LanguageEntry> {
    manifest
        .entries()
        .iter()
        .filter(|e| e.byte_size > 0)
        .collect()
}

/// Proportional allocation.
///
/// With `raw_i = total·bytes_i/Σbytes`, every language first gets
/// `max(1, floor(raw_i))`. An excess is removed one segment at a time from
/// the language holding the most segments (ties: smaller `raw_i`, then the
/// lexicographically larger id). A deficit is filled one segment at a time
/// into the language furthest below its raw share, which for languages not
/// lifted to the minimum is the largest fractional remainder (ties: larger
/// `raw_i`, then the lexicographically smaller id).
///
/// All comparisons use exact integer arithmetic on `total·bytes_i`, so the
/// plan is invariant under scaling every byte size by the same factor.
pub fn plan_mbs(manifest: &LanguageManifest, total: usize) -> Result<CalibrationPlan> {
    let langs = resourced(manifest);
    if langs.is_empty() {
        return Err(MbsError::Plan("all byte sizes are zero".into()));
    }
    if total < langs.len() {
        return Err(MbsError::Plan(format!(
            "total {total} is smaller than the {} languages with data",
            langs.len()
        )));
    }
    let denom: u128 = langs.iter().map(|e| u128::from(e.byte_size)).sum();
    // raw_i = numer_i / denom
    let numer: Vec<u128> = langs
        .iter()
        .map(|e| total as u128 * u128::from(e.byte_size))
        .collect();
    let mut alloc: Vec<u128> = numer.iter().map(|n| (n / denom).max(1)).collect();

    let tie = |i: usize, j: usize| -> Ordering {
        numer[i]
            .cmp(&numer[j])
            .then_with(|| langs[j].lang_id.cmp(&langs[i].lang_id))
    };

    let target = total as u128;
    while alloc.iter().sum::<u128>() > target {
        let i = (0..langs.len())
            .max_by(|&i, &j| alloc[i].cmp(&alloc[j]).then_with(|| tie(j, i)))
            .expect("non-empty");
        alloc[i] -= 1;
    }
    while alloc.iter().sum::<u128>() < target {
        // raw_i - alloc_i, scaled by denom
        let shortfall = |i: usize| numer[i] as i128 - (alloc[i] * denom) as i128;
        let i = (0..langs.len())
            .max_by(|&i, &j| shortfall(i).cmp(&shortfall(j)).then_with(|| tie(i, j)))
            .expect("non-empty");
        alloc[i] += 1;
    }

    let mut counts: IndexMap<String, usize> = manifest
        .entries()
        .iter()
        .map(|e| (e.lang_id.clone(), 0))
        .collect();
    for (e, a) in langs.iter().zip(alloc) {
        counts[&e.lang_id] = a as usize;
    }
    if counts.values().any(|&c| c == 0) {
        // zero-byte languages are outside the plan
        counts.retain(|_, c| *c > 0);
    }
    Ok(CalibrationPlan {
        policy: Policy::Mbs,
        total,
        counts,
    })
}

/// `floor(total/k)` segments each; the `total mod k` languages with the most
/// training bytes get one more (ties by lexicographically smaller id).
pub fn plan_equal(manifest: &LanguageManifest, total: usize) -> Result<CalibrationPlan> {
    let langs = resourced(manifest);
    let k = langs.len();
    if k == 0 || total < k {
        return Err(MbsError::Plan(format!(
            "total {total} is smaller than the {k} languages with data"
        )));
    }
    let base = total / k;
    let extra = total % k;
    let mut by_size: Vec<usize> = (0..k).collect();
    by_size.sort_by(|&i, &j| {
        langs[j]
            .byte_size
            .cmp(&langs[i].byte_size)
            .then_with(|| langs[i].lang_id.cmp(&langs[j].lang_id))
    });
    let mut alloc = vec![base; k];
    for &i in &by_size[..extra] {
        alloc[i] += 1;
    }
    Ok(CalibrationPlan {
        policy: Policy::Equal,
        total,
        counts: langs
            .iter()
            .zip(alloc)
            .map(|(e, a)| (e.lang_id.clone(), a))
            .collect(),
    })
}

/// All `total` segments from `lang`; every other manifest language gets 0.
pub fn plan_monolingual(
    manifest: &LanguageManifest,
    lang: &str,
    total: usize,
) -> Result<CalibrationPlan> {
    if manifest.get(lang).is_none() {
        return Err(MbsError::UnknownLanguage(lang.to_string()));
    }
    if total == 0 {
        return Err(MbsError::Plan("total must be positive".into()));
    }
    Ok(CalibrationPlan {
        policy: Policy::Monolingual(lang.to_string()),
        total,
        counts: manifest
            .lang_ids()
            .map(|l| (l.to_string(), if l == lang { total } else { 0 }))
            .collect(),
    })
}

/// Draws the planned number of training segments for every language, in
/// manifest order.
pub fn materialize(
    plan: &CalibrationPlan,
    corpus: &Corpus,
    seg_len: usize,
    seed: u64,
) -> Result<Vec<Segment>> {
    plan.validate()?;
    for lang in plan.counts.keys() {
        if corpus.manifest().get(lang).is_none() {
            return Err(MbsError::UnknownLanguage(lang.clone()));
        }
    }
    let mut out = Vec::with_capacity(plan.total);
    for lang in corpus.manifest().lang_ids() {
        let count = plan.count(lang);
        if count == 0 {
            continue;
        }
        let segs = corpus
            .draw_segments(lang, Source::Train, seg_len, count, seed)
            .map_err(|e| e.in_language(lang))?;
        out.extend(segs);
    }
    Ok(out)
}
