//! Closed-set RGB-D identification with hallucinated depth.
//!
//! One backbone is trained per modality. Feature-level fusion concatenates
//! the two embeddings and trains a softmax classifier on top; score-level
//! fusion averages the two backbones' softmax scores.

mod backbone;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{split_folds, UnpairedSample};
use crate::error::{Error, Result};
use crate::models::Hallucinator;
use crate::tensor::ImageTensor;

pub use backbone::{Backbone, CnnConfig, LinearClassifier, ReferenceCnn};

/// Concatenation `e_rgb ++ e_depth`.
pub fn feature_fusion<T: Copy>(e_rgb: &[T], e_depth: &[T]) -> Vec<T> {
    e_rgb.iter().chain(e_depth).copied().collect()
}

/// Element-wise mean of two score vectors.
pub fn score_fusion(s_rgb: &[f32], s_depth: &[f32]) -> Result<Vec<f32>> {
    if s_rgb.len() != s_depth.len() {
        return Err(Error::Shape(format!(
            "score vectors differ in length: {} vs {}",
            s_rgb.len(),
            s_depth.len()
        )));
    }
    Ok(s_rgb
        .iter()
        .zip(s_depth)
        .map(|(a, b)| 0.5 * (a + b))
        .collect())
}

/// Index of the largest entry; the first wins ties.
pub fn argmax<T: PartialOrd + Copy>(v: &[T]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in v.iter().enumerate() {
        if best.is_none_or(|b| x > v[b]) {
            best = Some(i);
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rank1Mode {
    /// Probe vectors are per-identity scores indexed like the gallery labels.
    Classifier,
    /// Probe vectors are embeddings matched to the most cosine-similar gallery entry.
    NearestNeighbor,
}

/// A vector with its identity label.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledVector {
    pub label: usize,
    pub vector: Vec<f32>,
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

/// Percentage of probes whose top-ranked identity is their own.
pub fn rank1(gallery: &[LabeledVector], probes: &[LabeledVector], mode: Rank1Mode) -> Result<f64> {
    if probes.is_empty() {
        return Err(Error::Validation("rank-1 needs at least one probe".into()));
    }
    let known: BTreeSet<usize> = gallery.iter().map(|g| g.label).collect();
    if let Some(p) = probes.iter().find(|p| !known.contains(&p.label)) {
        return Err(Error::Protocol(format!(
            "probe identity {} is not in the gallery",
            p.label
        )));
    }
    let mut hits = 0usize;
    for p in probes {
        let predicted = match mode {
            Rank1Mode::Classifier => argmax(&p.vector),
            Rank1Mode::NearestNeighbor => {
                let sims: Vec<f64> = gallery.iter().map(|g| cosine(&g.vector, &p.vector)).collect();
                argmax(&sims).map(|i| gallery[i].label)
            }
        };
        if predicted == Some(p.label) {
            hits += 1;
        }
    }
    Ok(100.0 * hits as f64 / probes.len() as f64)
}

/// Rank-1 accuracy of uniformly random scores over `classes` identities,
/// as `(percent, standard error in percent)`.
pub fn random_baseline(classes: usize, trials: usize, seed: u64) -> Result<(f64, f64)> {
    if classes == 0 || trials == 0 {
        return Err(Error::Validation("random baseline needs classes and trials".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..trials {
        let label = rng.random_range(0..classes);
        let scores: Vec<f64> = (0..classes).map(|_| rng.random::<f64>()).collect();
        if argmax(&scores) == Some(label) {
            hits += 1;
        }
    }
    let p = hits as f64 / trials as f64;
    Ok((100.0 * p, 100.0 * (p * (1.0 - p) / trials as f64).sqrt()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    FeatureLevel,
    ScoreLevel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecognitionReport {
    pub protocol: String,
    pub backbone: String,
    pub train_count: usize,
    pub test_count: usize,
    pub rgb: f64,
    pub depth: f64,
    pub feature_fusion: Option<f64>,
    pub score_fusion: Option<f64>,
}

impl RecognitionReport {
    /// Field-wise mean; the protocol string is taken from `label`.
    pub fn mean(reports: &[RecognitionReport], label: &str) -> Result<Self> {
        let first = reports
            .first()
            .ok_or_else(|| Error::Validation("no reports to average".into()))?;
        let n = reports.len() as f64;
        let avg = |f: &dyn Fn(&RecognitionReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        let avg_opt = |f: &dyn Fn(&RecognitionReport) -> Option<f64>| {
            reports
                .iter()
                .map(f)
                .collect::<Option<Vec<f64>>>()
                .map(|v| v.iter().sum::<f64>() / n)
        };
        Ok(Self {
            protocol: label.to_string(),
            backbone: first.backbone.clone(),
            train_count: reports.iter().map(|r| r.train_count).sum::<usize>() / reports.len(),
            test_count: reports.iter().map(|r| r.test_count).sum::<usize>() / reports.len(),
            rgb: avg(&|r| r.rgb),
            depth: avg(&|r| r.depth),
            feature_fusion: avg_opt(&|r| r.feature_fusion),
            score_fusion: avg_opt(&|r| r.score_fusion),
        })
    }
}

/// Markdown table with one row per report.
pub fn markdown_table(reports: &[RecognitionReport]) -> String {
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.2}"));
    let mut out = String::from(
        "| Protocol | Backbone | RGB | D~ | RGB+D~ Feat. Fusion | RGB+D~ Score Fusion |\n\
         |---|---|---|---|---|---|\n",
    );
    for r in reports {
        let _ = writeln!(
            out,
            "| {} | {} | {:.2} | {:.2} | {} | {} |",
            r.protocol,
            r.backbone,
            r.rgb,
            r.depth,
            fmt(r.feature_fusion),
            fmt(r.score_fusion)
        );
    }
    out
}

/// Settings of the fusion classifier trained on concatenated embeddings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            lr: 1e-2,
            seed: 0,
        }
    }
}

/// Builds a fresh, untrained backbone.
pub type BackboneFactory<'a> = dyn Fn() -> Box<dyn Backbone> + 'a;

fn label_map(train: &[UnpairedSample], test: &[UnpairedSample]) -> Result<BTreeMap<String, usize>> {
    let ids: BTreeSet<&str> = train.iter().map(|s| s.identity.as_str()).collect();
    if let Some(s) = test.iter().find(|s| !ids.contains(s.identity.as_str())) {
        return Err(Error::Protocol(format!(
            "test identity {} ({}) is absent from the training set",
            s.identity, s.name
        )));
    }
    Ok(ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id.to_string(), i))
        .collect())
}

fn standardize(train: &mut [Vec<f32>], test: &mut [Vec<f32>]) {
    let dim = train[0].len();
    let n = train.len() as f32;
    for j in 0..dim {
        let mean = train.iter().map(|v| v[j]).sum::<f32>() / n;
        let var = train.iter().map(|v| (v[j] - mean).powi(2)).sum::<f32>() / n;
        let scale = 1.0 / (var.sqrt() + 1e-6);
        for v in train.iter_mut().chain(test.iter_mut()) {
            v[j] = (v[j] - mean) * scale;
        }
    }
}

/// Trains RGB and hallucinated-depth backbones on `train` and scores `test`.
pub fn run_protocol<H: Hallucinator + ?Sized>(
    protocol: &str,
    train: &[UnpairedSample],
    test: &[UnpairedSample],
    generator: &H,
    make_backbone: &BackboneFactory<'_>,
    fusions: &[Fusion],
    fusion_config: FusionConfig,
) -> Result<RecognitionReport> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::Protocol("train and test sets must be nonempty".into()));
    }
    let labels = label_map(train, test)?;
    let classes = labels.len();
    let y_train: Vec<usize> = train.iter().map(|s| labels[&s.identity]).collect();
    let y_test: Vec<usize> = test.iter().map(|s| labels[&s.identity]).collect();
    let rgb_train: Vec<ImageTensor> = train.iter().map(|s| s.rgb.clone()).collect();
    let depth_of = |s: &UnpairedSample| generator.hallucinate(&s.rgb);
    let depth_train = train.iter().map(depth_of).collect::<Result<Vec<_>>>()?;
    let depth_test = test.iter().map(depth_of).collect::<Result<Vec<_>>>()?;

    let mut rgb_net = make_backbone();
    rgb_net.fit(&rgb_train, &y_train, classes)?;
    let mut depth_net = make_backbone();
    depth_net.fit(&depth_train, &y_train, classes)?;

    let gallery: Vec<LabeledVector> = (0..classes)
        .map(|label| LabeledVector {
            label,
            vector: Vec::new(),
        })
        .collect();
    let probes = |scores: Vec<Vec<f32>>| -> Vec<LabeledVector> {
        scores
            .into_iter()
            .zip(&y_test)
            .map(|(vector, &label)| LabeledVector { label, vector })
            .collect()
    };
    let rgb_scores = test
        .iter()
        .map(|s| rgb_net.classify(&s.rgb))
        .collect::<Result<Vec<_>>>()?;
    let depth_scores = depth_test
        .iter()
        .map(|d| depth_net.classify(d))
        .collect::<Result<Vec<_>>>()?;
    let rgb = rank1(&gallery, &probes(rgb_scores.clone()), Rank1Mode::Classifier)?;
    let depth = rank1(&gallery, &probes(depth_scores.clone()), Rank1Mode::Classifier)?;

    let mut report = RecognitionReport {
        protocol: protocol.to_string(),
        backbone: rgb_net.name().to_string(),
        train_count: train.len(),
        test_count: test.len(),
        rgb,
        depth,
        feature_fusion: None,
        score_fusion: None,
    };
    if fusions.contains(&Fusion::ScoreLevel) {
        let fused = rgb_scores
            .iter()
            .zip(&depth_scores)
            .map(|(a, b)| score_fusion(a, b))
            .collect::<Result<Vec<_>>>()?;
        report.score_fusion = Some(rank1(&gallery, &probes(fused), Rank1Mode::Classifier)?);
    }
    if fusions.contains(&Fusion::FeatureLevel) {
        let fuse = |x: &ImageTensor, d: &ImageTensor| -> Result<Vec<f32>> {
            Ok(feature_fusion(&rgb_net.embed(x)?, &depth_net.embed(d)?))
        };
        let mut f_train = train
            .iter()
            .zip(&depth_train)
            .map(|(s, d)| fuse(&s.rgb, d))
            .collect::<Result<Vec<_>>>()?;
        let mut f_test = test
            .iter()
            .zip(&depth_test)
            .map(|(s, d)| fuse(&s.rgb, d))
            .collect::<Result<Vec<_>>>()?;
        standardize(&mut f_train, &mut f_test);
        let mut clf =
            LinearClassifier::new(fusion_config.epochs, fusion_config.lr, fusion_config.seed);
        clf.fit(&f_train, &y_train, classes)?;
        let scores = f_test
            .iter()
            .map(|f| clf.scores(f))
            .collect::<Result<Vec<_>>>()?;
        report.feature_fusion = Some(rank1(&gallery, &probes(scores), Rank1Mode::Classifier)?);
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KFoldReport {
    pub folds: Vec<RecognitionReport>,
    pub mean: RecognitionReport,
}

/// Runs [`run_protocol`] on each fold of a seeded `k`-fold split.
pub fn run_kfold<H: Hallucinator + ?Sized>(
    samples: &[UnpairedSample],
    k: usize,
    seed: u64,
    generator: &H,
    make_backbone: &BackboneFactory<'_>,
    fusions: &[Fusion],
    fusion_config: FusionConfig,
) -> Result<KFoldReport> {
    let folds = split_folds(samples, k, seed)?;
    let mut reports = Vec::with_capacity(k);
    for (i, fold) in folds.iter().enumerate() {
        let pick = |idx: &[usize]| idx.iter().map(|&j| samples[j].clone()).collect::<Vec<_>>();
        reports.push(run_protocol(
            &format!("fold {}/{k}", i + 1),
            &pick(&fold.train),
            &pick(&fold.test),
            generator,
            make_backbone,
            fusions,
            fusion_config,
        )?);
    }
    let mean = RecognitionReport::mean(&reports, &format!("{k}-fold mean"))?;
    Ok(KFoldReport {
        folds: reports,
        mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv(label: usize, vector: &[f32]) -> LabeledVector {
        LabeledVector {
            label,
            vector: vector.to_vec(),
        }
    }

    #[test]
    fn fusion_examples() {
        assert_eq!(feature_fusion(&[1.0, 2.0], &[3.0]), vec![1.0, 2.0, 3.0]);
        let s = score_fusion(&[0.8, 0.2], &[0.4, 0.6]).unwrap();
        assert!((s[0] - 0.6).abs() < 1e-6 && (s[1] - 0.4).abs() < 1e-6);
        assert_eq!(score_fusion(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), vec![0.3, 0.7]);
        assert!(score_fusion(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn nearest_neighbor_copies_score_perfectly() {
        let gallery = vec![lv(0, &[1.0, 0.0]), lv(1, &[0.0, 1.0]), lv(2, &[1.0, 1.0])];
        assert_eq!(rank1(&gallery, &gallery, Rank1Mode::NearestNeighbor).unwrap(), 100.0);
        let probes = vec![lv(0, &[0.9, 0.1]), lv(1, &[1.0, 0.0])];
        assert_eq!(rank1(&gallery, &probes, Rank1Mode::NearestNeighbor).unwrap(), 50.0);
    }

    #[test]
    fn classifier_mode_and_errors() {
        let gallery = vec![lv(0, &[]), lv(1, &[])];
        let probes = vec![lv(1, &[0.2, 0.8]), lv(0, &[0.6, 0.4])];
        assert_eq!(rank1(&gallery, &probes, Rank1Mode::Classifier).unwrap(), 100.0);
        assert!(rank1(&gallery, &[], Rank1Mode::Classifier).is_err());
        assert!(matches!(
            rank1(&gallery, &[lv(5, &[1.0])], Rank1Mode::Classifier),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn argmax_ties_pick_first() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), Some(1));
        assert_eq!(argmax::<f32>(&[]), None);
    }
}
