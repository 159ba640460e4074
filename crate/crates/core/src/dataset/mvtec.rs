use std::path::{Path, PathBuf};

use super::{load_png, resize};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Anomalous,
}

/// A corpus entry before its pixels are read.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRef {
    /// `train/good/<stem>` or `test/<type>/<stem>`.
    pub id: String,
    pub label: Label,
    pub image_path: PathBuf,
    pub mask_path: Option<PathBuf>,
}

/// A loaded image with its label and optional ground-truth mask
/// (`(1, 1, H, W)`, values 0 or 1).
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub label: Label,
    pub image: Tensor,
    pub mask: Option<Tensor>,
}

#[derive(Clone, Debug)]
pub struct CorpusIndex {
    pub root: PathBuf,
    pub category: String,
    pub train: Vec<SampleRef>,
    pub test: Vec<SampleRef>,
}

fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            out.push((name, path));
        }
    }
    out.sort();
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

/// Index `<root>/<category>/{train/good, test/<type>, ground_truth/<type>}`.
///
/// `test/good` images are normal; every other test image is anomalous and
/// must have `ground_truth/<type>/<stem>_mask.png`. Entries are sorted by id.
pub fn load_mvtec_layout(root: &Path, category: &str) -> Result<CorpusIndex> {
    let base = root.join(category);
    let train_dir = base.join("train").join("good");
    if !train_dir.is_dir() {
        return Err(Error::Corpus(format!("missing train directory {}", train_dir.display())));
    }
    let mut train: Vec<SampleRef> = list_pngs(&train_dir)?
        .into_iter()
        .map(|p| SampleRef {
            id: format!("train/good/{}", stem(&p)),
            label: Label::Normal,
            image_path: p,
            mask_path: None,
        })
        .collect();
    if train.is_empty() {
        return Err(Error::Corpus(format!("no training images in {}", train_dir.display())));
    }
    train.sort_by(|a, b| a.id.cmp(&b.id));

    let mut test = Vec::new();
    let mut missing = Vec::new();
    let test_dir = base.join("test");
    if test_dir.is_dir() {
        for (kind, dir) in sorted_subdirs(&test_dir)? {
            for p in list_pngs(&dir)? {
                let s = stem(&p);
                let mask = base.join("ground_truth").join(&kind).join(format!("{s}_mask.png"));
                let id = format!("test/{kind}/{s}");
                if kind == "good" {
                    if mask.is_file() {
                        log::warn!("ignoring ground-truth mask for normal test image {id}");
                    }
                    test.push(SampleRef {
                        id,
                        label: Label::Normal,
                        image_path: p,
                        mask_path: None,
                    });
                } else if mask.is_file() {
                    test.push(SampleRef {
                        id,
                        label: Label::Anomalous,
                        image_path: p,
                        mask_path: Some(mask),
                    });
                } else {
                    missing.push(format!("{kind}/{s}"));
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Corpus(format!(
            "anomalous test images without masks: {}",
            missing.join(", ")
        )));
    }
    test.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(CorpusIndex {
        root: root.to_path_buf(),
        category: category.to_string(),
        train,
        test,
    })
}

impl SampleRef {
    /// Load pixels, resized to `size x size` when given. Masks are
    /// thresholded at byte > 127 (after resizing).
    pub fn load(&self, size: Option<usize>) -> Result<Sample> {
        let mut image = load_png(&self.image_path)?;
        if let Some(s) = size {
            image = resize(&image, s, s);
        }
        let mask = match &self.mask_path {
            None => None,
            Some(p) => {
                let mut m = load_png(p)?;
                if m.channels() != 1 {
                    m = crate::descriptors::to_gray(&m)?;
                }
                if let Some(s) = size {
                    m = resize(&m, s, s);
                }
                let threshold = 127.5 / 255.0;
                let m = m.map(|v| if v > threshold { 1.0 } else { 0.0 });
                if m.height() != image.height() || m.width() != image.width() {
                    return Err(Error::Shape {
                        op: "mask",
                        lhs: image.shape().to_vec(),
                        rhs: m.shape().to_vec(),
                    });
                }
                if self.label == Label::Anomalous && !m.data().iter().any(|&v| v > 0.0) {
                    return Err(Error::Corpus(format!("mask for {} has no positive pixels", self.id)));
                }
                Some(m)
            }
        };
        Ok(Sample {
            id: self.id.clone(),
            label: self.label,
            image,
            mask,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::save_png_gray_bytes;

    fn write(path: &Path, value: u8) {
        save_png_gray_bytes(&[value; 16], 4, 4, path).unwrap();
    }

    fn layout(dir: &Path) -> PathBuf {
        let base = dir.join("cat");
        write(&base.join("train/good/001.png"), 10);
        write(&base.join("train/good/000.png"), 20);
        write(&base.join("test/good/000.png"), 30);
        write(&base.join("test/crack/000.png"), 40);
        let mut mask = [0u8; 16];
        mask[5] = 255;
        save_png_gray_bytes(&mask, 4, 4, &base.join("ground_truth/crack/000_mask.png")).unwrap();
        base
    }

    #[test]
    fn counts_labels_and_order() {
        let dir = tempfile::tempdir().unwrap();
        layout(dir.path());
        let idx = load_mvtec_layout(dir.path(), "cat").unwrap();
        assert_eq!((idx.train.len(), idx.test.len()), (2, 2));
        assert_eq!(idx.train[0].id, "train/good/000");
        assert_eq!(idx.test[0].id, "test/crack/000");
        assert_eq!(idx.test[0].label, Label::Anomalous);
        assert_eq!(idx.test[1].label, Label::Normal);
        let s = idx.test[0].load(None).unwrap();
        assert_eq!(s.mask.unwrap().data().iter().filter(|&&v| v == 1.0).count(), 1);
    }

    #[test]
    fn empty_train_dir_errors() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("cat/train/good")).unwrap();
        assert!(load_mvtec_layout(dir.path(), "cat").is_err());
    }

    #[test]
    fn missing_mask_lists_stem() {
        let dir = tempfile::tempdir().unwrap();
        let base = layout(dir.path());
        write(&base.join("test/crack/007.png"), 50);
        let err = load_mvtec_layout(dir.path(), "cat").unwrap_err().to_string();
        assert!(err.contains("crack/007"), "{err}");
    }

    #[test]
    fn mask_for_good_image_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let base = layout(dir.path());
        write(&base.join("ground_truth/good/000_mask.png"), 255);
        let idx = load_mvtec_layout(dir.path(), "cat").unwrap();
        let good = idx.test.iter().find(|s| s.id == "test/good/000").unwrap();
        assert!(good.mask_path.is_none());
    }
}
