use crate::discriminate::Backbone;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Normal training images with their global descriptors.
#[derive(Clone, Debug)]
pub struct PromptPool {
    pub ids: Vec<String>,
    pub descriptors: Vec<Vec<f32>>,
    /// Each `(1, 1, H, W)`.
    pub images: Vec<Tensor>,
}

pub fn cosine_similarity(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb).sqrt()
    }
}

impl PromptPool {
    pub fn build(backbone: &Backbone, ids: Vec<String>, images: Vec<Tensor>) -> Result<PromptPool> {
        if ids.is_empty() {
            return Err(Error::invalid("prompt pool is empty"));
        }
        if ids.len() != images.len() {
            return Err(Error::invalid("prompt pool ids and images differ in length"));
        }
        let refs: Vec<&Tensor> = images.iter().collect();
        let descriptors = backbone.descriptors(&Tensor::stack(&refs)?)?;
        Ok(PromptPool {
            ids,
            descriptors,
            images,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Index of the most similar entry, skipping `exclude`.
    pub fn select(&self, query: &[f32], exclude: Option<&str>) -> Result<(usize, f64)> {
        select_prompt(query, &self.ids, &self.descriptors, exclude)
    }
}

/// Argmax of cosine similarity over `descriptors`; ties go to the
/// lexicographically smallest id. Zero descriptors have similarity 0.
pub fn select_prompt(
    query: &[f32],
    ids: &[String],
    descriptors: &[Vec<f32>],
    exclude: Option<&str>,
) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, d) in descriptors.iter().enumerate() {
        if Some(ids[i].as_str()) == exclude {
            continue;
        }
        if d.len() != query.len() {
            return Err(Error::Shape {
                op: "select_prompt",
                lhs: vec![query.len()],
                rhs: vec![d.len()],
            });
        }
        let s = cosine_similarity(query, d);
        best = match best {
            Some((j, bs)) if bs > s || (bs == s && ids[j] <= ids[i]) => Some((j, bs)),
            _ => Some((i, s)),
        };
    }
    best.ok_or_else(|| Error::invalid("prompt pool has no candidates"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: &[&str]) -> Vec<String> {
        n.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn duplicate_wins_when_self_excluded() {
        let d = vec![vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0], vec![3.0, 2.0, 1.0]];
        let (i, s) = select_prompt(&d[0], &ids(&["q", "dup", "other"]), &d, Some("q")).unwrap();
        assert_eq!(i, 1);
        assert_eq!(s, 1.0);
    }

    #[test]
    fn ties_go_to_smallest_id() {
        let d = vec![vec![0.0, 1.0], vec![0.0, 1.0], vec![0.0, 1.0]];
        let (i, _) = select_prompt(&[1.0, 0.0], &ids(&["c", "a", "b"]), &d, None).unwrap();
        assert_eq!(i, 1);
    }

    #[test]
    fn matches_brute_force_argmax() {
        let d = vec![
            vec![1.0, 0.0, 0.5],
            vec![0.2, 0.9, 0.1],
            vec![-1.0, 0.3, 0.3],
            vec![0.7, 0.7, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        let q = [0.6, 0.8, 0.05];
        let brute = (0..5)
            .max_by(|&a, &b| {
                let f = |v: &Vec<f32>| {
                    let dot: f32 = v.iter().zip(&q).map(|(x, y)| x * y).sum();
                    dot / (v.iter().map(|x| x * x).sum::<f32>().sqrt() * q.iter().map(|x| x * x).sum::<f32>().sqrt())
                };
                f(&d[a]).partial_cmp(&f(&d[b])).unwrap()
            })
            .unwrap();
        let (i, _) = select_prompt(&q, &ids(&["a", "b", "c", "d", "e"]), &d, None).unwrap();
        assert_eq!(i, brute);
    }

    #[test]
    fn empty_pool_errors() {
        assert!(select_prompt(&[1.0], &[], &[], None).is_err());
        let d = vec![vec![1.0]];
        assert!(select_prompt(&[1.0], &ids(&["q"]), &d, Some("q")).is_err());
    }
}
