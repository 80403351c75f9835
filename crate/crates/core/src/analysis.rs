//! Rhetorical fingerprint statistics: per-class Z-score profiles of relation
//! frequencies, and cosine similarity of relation-count vectors between a
//! base text and its variants.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::relation::NUM_RELATIONS;

/// σ below this gives Z = 0 for that relation.
pub const SIGMA_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum AnalysisError {
    #[error("class {0} has no documents with relations")]
    EmptyClass(Label),
    #[error("no document pairs for {reference} vs {target}")]
    NoPairs { reference: Label, target: Label },
}

/// A document reduced to what the analysis needs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationDoc {
    pub id: String,
    pub group_id: String,
    pub label: Label,
    pub counts: [u32; NUM_RELATIONS],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationProfile {
    /// `class_means[k][j]`: mean relative frequency of relation `j` in class `k`.
    pub class_means: Vec<[f64; NUM_RELATIONS]>,
    pub mu: [f64; NUM_RELATIONS],
    /// Population standard deviation over documents.
    pub sigma: [f64; NUM_RELATIONS],
    /// `z[k][j] = (class_means[k][j] - mu[j]) / sigma[j]`
    pub z: Vec<[f64; NUM_RELATIONS]>,
    pub class_counts: [usize; 4],
    /// Documents dropped for having no relations.
    pub excluded: usize,
}

pub fn relative_frequencies(counts: &[u32; NUM_RELATIONS]) -> Option<[f64; NUM_RELATIONS]> {
    let total: u32 = counts.iter().sum();
    if total == 0 {
        return None;
    }
    let mut f = [0.0; NUM_RELATIONS];
    for j in 0..NUM_RELATIONS {
        f[j] = f64::from(counts[j]) / f64::from(total);
    }
    Some(f)
}

/// Z-score profile over relative relation frequencies.
pub fn zscore_profile(docs: &[RelationDoc]) -> Result<RelationProfile, AnalysisError> {
    let mut sums = [[0.0; NUM_RELATIONS]; 4];
    let mut class_counts = [0usize; 4];
    let mut all: Vec<[f64; NUM_RELATIONS]> = Vec::with_capacity(docs.len());
    let mut excluded = 0;
    for d in docs {
        let Some(f) = relative_frequencies(&d.counts) else {
            excluded += 1;
            continue;
        };
        let k = d.label.index();
        class_counts[k] += 1;
        for j in 0..NUM_RELATIONS {
            sums[k][j] += f[j];
        }
        all.push(f);
    }
    for label in Label::ALL {
        if class_counts[label.index()] == 0 {
            return Err(AnalysisError::EmptyClass(label));
        }
    }
    let n = all.len() as f64;
    let mut mu = [0.0; NUM_RELATIONS];
    let mut sigma = [0.0; NUM_RELATIONS];
    for j in 0..NUM_RELATIONS {
        mu[j] = all.iter().map(|f| f[j]).sum::<f64>() / n;
        let var = all.iter().map(|f| (f[j] - mu[j]) * (f[j] - mu[j])).sum::<f64>() / n;
        sigma[j] = libm::sqrt(var);
    }
    let mut class_means = Vec::with_capacity(4);
    let mut z = Vec::with_capacity(4);
    for k in 0..4 {
        let mut m = [0.0; NUM_RELATIONS];
        let mut zk = [0.0; NUM_RELATIONS];
        for j in 0..NUM_RELATIONS {
            m[j] = sums[k][j] / class_counts[k] as f64;
            zk[j] = if sigma[j] < SIGMA_FLOOR { 0.0 } else { (m[j] - mu[j]) / sigma[j] };
        }
        class_means.push(m);
        z.push(zk);
    }
    Ok(RelationProfile { class_means, mu, sigma, z, class_counts, excluded })
}

pub fn cosine(a: &[u32; NUM_RELATIONS], b: &[u32; NUM_RELATIONS]) -> Option<f64> {
    let fa: Vec<f64> = a.iter().map(|&x| f64::from(x)).collect();
    let fb: Vec<f64> = b.iter().map(|&x| f64::from(x)).collect();
    let na = crate::linalg::norm(&fa);
    let nb = crate::linalg::norm(&fb);
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(crate::linalg::dot(&fa, &fb) / (na * nb))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSimilarity {
    pub reference: Label,
    pub target: Label,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub pairs: usize,
    /// Groups lacking a usable document of either class.
    pub skipped_groups: usize,
}

/// Cosine similarity of raw relation counts between `reference` and
/// `target` documents of the same group. Every reference × target pair in a
/// group counts once; documents without relations are ignored.
pub fn pairwise_cosine(reference: Label, target: Label, docs: &[RelationDoc]) -> Result<PairSimilarity, AnalysisError> {
    let mut groups: BTreeMap<&str, (Vec<&RelationDoc>, Vec<&RelationDoc>)> = BTreeMap::new();
    for d in docs {
        let usable = d.counts.iter().any(|&c| c > 0);
        let e = groups.entry(d.group_id.as_str()).or_default();
        if usable && d.label == reference {
            e.0.push(d);
        }
        if usable && d.label == target {
            e.1.push(d);
        }
    }
    let mut sims = Vec::new();
    let mut skipped = 0;
    for (refs, tgts) in groups.values() {
        if refs.is_empty() || tgts.is_empty() {
            skipped += 1;
            continue;
        }
        for r in refs {
            for t in tgts {
                if r.id == t.id {
                    continue;
                }
                if let Some(c) = cosine(&r.counts, &t.counts) {
                    sims.push(c);
                }
            }
        }
    }
    if sims.is_empty() {
        return Err(AnalysisError::NoPairs { reference, target });
    }
    let n = sims.len() as f64;
    let mean = sims.iter().sum::<f64>() / n;
    let std = libm::sqrt(sims.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n);
    Ok(PairSimilarity { reference, target, mean, std, pairs: sims.len(), skipped_groups: skipped })
}

/// The six reference/target pairings of the similarity report.
pub const SIMILARITY_PAIRS: [(Label, Label); 6] = [
    (Label::HumanWritten, Label::LlmPolished),
    (Label::HumanWritten, Label::LlmGenerated),
    (Label::HumanWritten, Label::Humanized),
    (Label::LlmGenerated, Label::HumanWritten),
    (Label::LlmGenerated, Label::LlmPolished),
    (Label::LlmGenerated, Label::Humanized),
];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::RelationLabel;

    fn doc(id: &str, group: &str, label: Label, pairs: &[(RelationLabel, u32)]) -> RelationDoc {
        let mut counts = [0; NUM_RELATIONS];
        for &(r, c) in pairs {
            counts[r.index()] = c;
        }
        RelationDoc { id: id.into(), group_id: group.into(), label, counts }
    }

    #[test]
    fn frequency_example() {
        let a = doc("a", "g", Label::HumanWritten, &[(RelationLabel::Elaboration, 5), (RelationLabel::Contrast, 2)]);
        assert_eq!(a.counts[RelationLabel::Elaboration.index()], 5);
        assert_eq!(a.counts[RelationLabel::Contrast.index()], 2);
        assert_eq!(a.counts.iter().sum::<u32>(), 7);
    }

    #[test]
    fn identical_and_disjoint_cosines() {
        let e = [(RelationLabel::Elaboration, 5), (RelationLabel::Contrast, 2)];
        let docs = [
            doc("h", "g1", Label::HumanWritten, &e),
            doc("p", "g1", Label::LlmPolished, &e),
        ];
        let s = pairwise_cosine(Label::HumanWritten, Label::LlmPolished, &docs).unwrap();
        assert!((s.mean - 1.0).abs() < 1e-15);
        let docs = [
            doc("h", "g1", Label::HumanWritten, &[(RelationLabel::Attribution, 3)]),
            doc("p", "g1", Label::LlmPolished, &[(RelationLabel::Joint, 4)]),
        ];
        assert_eq!(pairwise_cosine(Label::HumanWritten, Label::LlmPolished, &docs).unwrap().mean, 0.0);
    }

    #[test]
    fn no_pairs() {
        let docs = [doc("h", "g1", Label::HumanWritten, &[(RelationLabel::Joint, 1)])];
        assert!(matches!(
            pairwise_cosine(Label::HumanWritten, Label::Humanized, &docs),
            Err(AnalysisError::NoPairs { .. })
        ));
    }

    #[test]
    fn identical_distributions_give_zero_z() {
        let docs: Vec<RelationDoc> = Label::ALL
            .iter()
            .enumerate()
            .flat_map(|(k, &l)| {
                [
                    doc(&alloc::format!("{k}a"), "g", l, &[(RelationLabel::Joint, 2), (RelationLabel::Cause, 1)]),
                    doc(&alloc::format!("{k}b"), "g", l, &[(RelationLabel::Joint, 1), (RelationLabel::Cause, 3)]),
                ]
            })
            .collect();
        let p = zscore_profile(&docs).unwrap();
        for row in &p.z {
            assert!(row.iter().all(|z| z.abs() < 1e-12));
        }
    }

    #[test]
    fn over_expression_ordering() {
        let mut docs = Vec::new();
        for (k, &l) in Label::ALL.iter().enumerate() {
            let rel = if k == 0 { RelationLabel::Elaboration } else { RelationLabel::Contrast };
            docs.push(doc(&alloc::format!("{k}"), "g", l, &[(rel, 3)]));
        }
        let p = zscore_profile(&docs).unwrap();
        let el = RelationLabel::Elaboration.index();
        assert!(p.z[0][el] > 0.0);
        assert!((1..4).all(|k| p.z[k][el] < p.z[0][el]));
    }

    #[test]
    fn empty_class_and_exclusion() {
        let docs = [
            doc("a", "g", Label::HumanWritten, &[(RelationLabel::Joint, 1)]),
            doc("b", "g", Label::LlmPolished, &[]),
        ];
        assert_eq!(zscore_profile(&docs), Err(AnalysisError::EmptyClass(Label::LlmPolished)));
    }
}
