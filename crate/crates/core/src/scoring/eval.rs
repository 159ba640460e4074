use serde::{Deserialize, Serialize};

use super::map::AnomalyMap;
use super::metrics::{auroc, average_precision};
use super::pro::{pro, DEFAULT_FPR_LIMIT, DEFAULT_THRESHOLDS};
use crate::dataset::{CorpusIndex, Label, Sample};
use crate::par;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Anything that turns one test image into an anomaly map.
pub trait Scorer: Sync {
    fn score(&self, image: &Tensor) -> Result<AnomalyMap>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// Average per-image pixel metrics over anomalous images instead of
    /// pooling every test pixel into one ranking.
    pub per_image_seg: bool,
    pub fpr_limit: f64,
    pub pro_thresholds: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            per_image_seg: false,
            fpr_limit: DEFAULT_FPR_LIMIT,
            pro_thresholds: DEFAULT_THRESHOLDS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auroc_det: f64,
    pub auroc_seg: f64,
    pub ap_seg: f64,
    /// Absent when no test image has an anomalous pixel.
    pub pro_seg: Option<f64>,
    pub seg_mode: String,
    pub n_images: usize,
    pub n_normal: usize,
    pub n_anomalous: usize,
    pub n_pixels: usize,
    pub n_anomalous_pixels: usize,
}

/// One scored test image. Normal images carry an all-zero mask.
#[derive(Clone, Debug)]
pub struct ScoredSample {
    pub id: String,
    pub label: Label,
    pub map: AnomalyMap,
    pub mask: Tensor,
}

/// Score samples in parallel; output order follows input order.
pub fn score_samples<S: Scorer + ?Sized>(scorer: &S, samples: &[Sample]) -> Result<Vec<ScoredSample>> {
    par::try_map_indexed(samples.len(), |i| {
        let s = &samples[i];
        let map = scorer.score(&s.image)?;
        let mask = match &s.mask {
            Some(m) if s.label == Label::Anomalous => m.clone(),
            _ => Tensor::zeros(map.scores.shape()),
        };
        if mask.shape() != map.scores.shape() {
            return Err(Error::Shape {
                op: "evaluate",
                lhs: map.scores.shape().to_vec(),
                rhs: mask.shape().to_vec(),
            });
        }
        Ok(ScoredSample {
            id: s.id.clone(),
            label: s.label,
            map,
            mask,
        })
    })
}

fn pixel_lists(items: &[&ScoredSample]) -> (Vec<f64>, Vec<bool>) {
    let scores = items
        .iter()
        .flat_map(|s| s.map.scores.data().iter().map(|&v| v as f64))
        .collect();
    let labels = items
        .iter()
        .flat_map(|s| s.mask.data().iter().map(|&v| v > 0.0))
        .collect();
    (scores, labels)
}

/// Metrics over already scored samples, folded in id order.
pub fn report(scored: &[ScoredSample], opts: &EvalOptions) -> Result<EvalReport> {
    let mut items: Vec<&ScoredSample> = scored.iter().collect();
    items.sort_by(|a, b| a.id.cmp(&b.id));
    let n_anomalous = items.iter().filter(|s| s.label == Label::Anomalous).count();
    let n_normal = items.len() - n_anomalous;
    if n_anomalous == 0 || n_normal == 0 {
        return Err(Error::Corpus(format!(
            "test split needs both classes, got {n_normal} normal and {n_anomalous} anomalous"
        )));
    }
    let det: Vec<f64> = items.iter().map(|s| s.map.image_score as f64).collect();
    let det_labels: Vec<bool> = items.iter().map(|s| s.label == Label::Anomalous).collect();
    let auroc_det = auroc(&det, &det_labels)?;

    let (pix, pix_labels) = pixel_lists(&items);
    let n_anomalous_pixels = pix_labels.iter().filter(|&&l| l).count();
    let (auroc_seg, ap_seg) = if opts.per_image_seg {
        let mut sums = (0.0, 0.0);
        let mut count = 0usize;
        for s in items.iter().filter(|s| s.mask.data().iter().any(|&v| v > 0.0)) {
            let (p, l) = pixel_lists(&[s]);
            if l.iter().all(|&v| v) {
                continue;
            }
            sums.0 += auroc(&p, &l)?;
            sums.1 += average_precision(&p, &l)?;
            count += 1;
        }
        if count == 0 {
            return Err(Error::Corpus("no test image has both normal and anomalous pixels".into()));
        }
        (sums.0 / count as f64, sums.1 / count as f64)
    } else {
        (auroc(&pix, &pix_labels)?, average_precision(&pix, &pix_labels)?)
    };

    let anomalous: Vec<&&ScoredSample> = items.iter().filter(|s| s.label == Label::Anomalous).collect();
    let pro_seg = if n_anomalous_pixels == 0 {
        None
    } else {
        let maps: Vec<Tensor> = anomalous.iter().map(|s| s.map.scores.clone()).collect();
        let masks: Vec<Tensor> = anomalous.iter().map(|s| s.mask.clone()).collect();
        Some(pro(&maps, &masks, opts.fpr_limit, opts.pro_thresholds)?)
    };
    Ok(EvalReport {
        auroc_det,
        auroc_seg,
        ap_seg,
        pro_seg,
        seg_mode: if opts.per_image_seg { "per_image" } else { "pooled" }.into(),
        n_images: items.len(),
        n_normal,
        n_anomalous,
        n_pixels: pix.len(),
        n_anomalous_pixels,
    })
}

/// Load the test split at `image_size`, score it and compute the report.
pub fn evaluate<S: Scorer + ?Sized>(
    scorer: &S,
    corpus: &CorpusIndex,
    image_size: usize,
    opts: &EvalOptions,
) -> Result<(EvalReport, Vec<ScoredSample>)> {
    if corpus.test.is_empty() {
        return Err(Error::Corpus(format!(
            "no test images under {}/{}",
            corpus.root.display(),
            corpus.category
        )));
    }
    let samples = par::try_map_indexed(corpus.test.len(), |i| corpus.test[i].load(Some(image_size)))?;
    let scored = score_samples(scorer, &samples)?;
    let rep = report(&scored, opts)?;
    Ok((rep, scored))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    /// Test double: the fixture images are their own masks.
    struct Oracle;

    impl Scorer for Oracle {
        fn score(&self, image: &Tensor) -> Result<AnomalyMap> {
            Ok(AnomalyMap::from_scores(image.clone(), vec![1.0], 0.0))
        }
    }

    fn corpus(rng: &mut SplitMix64) -> Vec<Sample> {
        let mut out = Vec::new();
        for i in 0..12 {
            let anomalous = i % 2 == 1;
            let mask = if anomalous {
                let (y, x) = (rng.below(12) as usize, rng.below(12) as usize);
                Tensor::from_fn([1, 1, 16, 16], |_, _, yy, xx| {
                    if (y..y + 3).contains(&yy) && (x..x + 4).contains(&xx) {
                        1.0
                    } else {
                        0.0
                    }
                })
            } else {
                Tensor::zeros([1, 1, 16, 16])
            };
            out.push(Sample {
                id: format!("test/{i:03}"),
                label: if anomalous { Label::Anomalous } else { Label::Normal },
                image: mask.clone(),
                mask: anomalous.then_some(mask),
            });
        }
        out
    }

    #[test]
    fn mask_scorer_is_perfect() {
        let samples = corpus(&mut SplitMix64::new(3));
        let scored = score_samples(&Oracle, &samples).unwrap();
        for per_image in [false, true] {
            let opts = EvalOptions {
                per_image_seg: per_image,
                ..EvalOptions::default()
            };
            let r = report(&scored, &opts).unwrap();
            assert_eq!((r.auroc_det, r.auroc_seg, r.ap_seg, r.pro_seg), (1.0, 1.0, 1.0, Some(1.0)));
            assert_eq!((r.n_images, r.n_normal, r.n_anomalous), (12, 6, 6));
            assert_eq!(r.n_pixels, 12 * 256);
            assert_eq!(r.n_anomalous_pixels, 6 * 12);
        }
    }

    #[test]
    fn shuffled_labels_land_near_chance() {
        let mut rng = SplitMix64::new(11);
        let mut total = 0.0;
        let seeds = 20;
        for _ in 0..seeds {
            let samples = corpus(&mut rng);
            let mut scored = score_samples(&Oracle, &samples).unwrap();
            let mut labels: Vec<Label> = scored.iter().map(|s| s.label).collect();
            rng.shuffle(&mut labels);
            for (s, l) in scored.iter_mut().zip(labels) {
                s.label = l;
            }
            total += report(&scored, &EvalOptions::default()).unwrap().auroc_det;
        }
        let mean = total / seeds as f64;
        assert!((mean - 0.5).abs() <= 0.15, "{mean}");
    }

    #[test]
    fn single_class_is_an_error() {
        let samples: Vec<Sample> = corpus(&mut SplitMix64::new(1))
            .into_iter()
            .filter(|s| s.label == Label::Normal)
            .collect();
        let scored = score_samples(&Oracle, &samples).unwrap();
        assert!(report(&scored, &EvalOptions::default()).is_err());
    }
}
