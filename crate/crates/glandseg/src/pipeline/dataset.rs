//! Dataset discovery. Images follow the Warwick-QU naming scheme:
//! `train_N`, `testA_N`, `testB_N` with an `_anno` suffix for the label map,
//! in PNG or BMP.

use std::path::{Path, PathBuf};

use super::{PipelineError, Result};
use crate::mask::LabeledMask;
use crate::preprocess::ImageRGB;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    TestA,
    TestB,
}

impl Split {
    pub fn prefix(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::TestA => "testA",
            Split::TestB => "testB",
        }
    }

    pub const ALL: [Split; 3] = [Split::Train, Split::TestA, Split::TestB];
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Split, String> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "testa" => Ok(Split::TestA),
            "testb" => Ok(Split::TestB),
            other => Err(format!("unknown split '{other}' (expected train|testA|testB)")),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.prefix())
    }
}

/// One image/annotation pair.
#[derive(Debug, Clone)]
pub struct DatasetRecord {
    pub name: String,
    pub image: PathBuf,
    pub annotation: PathBuf,
    pub split: Split,
    pub width: usize,
    pub height: usize,
}

impl DatasetRecord {
    pub fn load_image(&self) -> Result<ImageRGB> {
        Ok(ImageRGB::load(&self.image)?)
    }

    /// Loads the annotation as an integer label map, compacted to gapless
    /// labels `1..=K`.
    pub fn load_annotation(&self) -> Result<LabeledMask> {
        Ok(LabeledMask::load(&self.annotation)?.compact())
    }
}

/// All records discovered under one dataset root.
#[derive(Debug, Clone)]
pub struct DatasetIndex {
    pub records: Vec<DatasetRecord>,
}

impl DatasetIndex {
    pub fn split(&self, split: Split) -> Vec<&DatasetRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }
}

const IMAGE_EXTENSIONS: [&str; 2] = ["png", "bmp"];

fn find_annotation(image: &Path) -> Option<PathBuf> {
    let stem = image.file_stem()?.to_str()?;
    for ext in IMAGE_EXTENSIONS {
        let candidate = image.with_file_name(format!("{stem}_anno.{ext}"));
        if candidate.exists() {
            return Some(candidate);
        }
    }
    None
}

fn dimensions(path: &Path) -> Result<(usize, usize)> {
    let (w, h) = image::image_dimensions(path).map_err(|e| PipelineError::Unreadable {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    Ok((w as usize, h as usize))
}

/// Scans a directory for `{train,testA,testB}_N` image/annotation pairs.
/// Every image must have an annotation of identical dimensions. Records are
/// sorted by split and numeric index, so iteration order is stable.
pub fn load_dataset(root: &Path) -> Result<DatasetIndex> {
    if !root.is_dir() {
        return Err(PipelineError::MissingDataDir(root.to_path_buf()));
    }
    let mut records = Vec::new();
    let entries = std::fs::read_dir(root).map_err(super::io_err(root))?;
    for entry in entries {
        let path = entry.map_err(super::io_err(root))?.path();
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        let Some(ext) = path.extension().and_then(|s| s.to_str()) else {
            continue;
        };
        if !IMAGE_EXTENSIONS.contains(&ext.to_ascii_lowercase().as_str())
            || stem.ends_with("_anno")
        {
            continue;
        }
        let Some((prefix, index)) = stem.rsplit_once('_') else {
            continue;
        };
        let Ok(split) = prefix.parse::<Split>() else {
            continue;
        };
        let Ok(index) = index.parse::<u32>() else {
            continue;
        };

        let annotation = find_annotation(&path).ok_or_else(|| {
            PipelineError::MissingAnnotation(
                path.clone(),
                path.with_file_name(format!("{stem}_anno.png")),
            )
        })?;
        let (iw, ih) = dimensions(&path)?;
        let (aw, ah) = dimensions(&annotation)?;
        if (iw, ih) != (aw, ah) {
            return Err(PipelineError::AnnotationDimensionMismatch {
                image: path,
                iw,
                ih,
                anno: annotation,
                aw,
                ah,
            });
        }
        records.push((
            split,
            index,
            DatasetRecord {
                name: stem.to_string(),
                image: path,
                annotation,
                split,
                width: iw,
                height: ih,
            },
        ));
    }
    records.sort_by_key(|(split, index, _)| (split.prefix(), *index));
    Ok(DatasetIndex {
        records: records.into_iter().map(|(_, _, r)| r).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::LabeledMask;
    use crate::preprocess::ImageRGB;

    fn write_pair(dir: &Path, name: &str, w: usize, h: usize) {
        ImageRGB::new(w, h).save_png(&dir.join(format!("{name}.png"))).unwrap();
        LabeledMask::new(w, h)
            .save_png(&dir.join(format!("{name}_anno.png")))
            .unwrap();
    }

    #[test]
    fn indexes_pairs_by_split() {
        let dir = tempfile::tempdir().unwrap();
        write_pair(dir.path(), "train_1", 8, 6);
        write_pair(dir.path(), "train_2", 8, 6);
        write_pair(dir.path(), "testA_1", 10, 10);
        let index = load_dataset(dir.path()).unwrap();
        assert_eq!(index.split(Split::Train).len(), 2);
        assert_eq!(index.split(Split::TestA).len(), 1);
        assert_eq!(index.split(Split::TestB).len(), 0);
        assert_eq!(index.split(Split::Train)[0].name, "train_1");
        assert_eq!(index.split(Split::Train)[0].width, 8);
    }

    #[test]
    fn missing_annotation_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        ImageRGB::new(4, 4).save_png(&dir.path().join("train_1.png")).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        match err {
            PipelineError::MissingAnnotation(img, _) => {
                assert!(img.to_string_lossy().contains("train_1.png"));
            }
            other => panic!("expected MissingAnnotation, got {other}"),
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        ImageRGB::new(4, 4).save_png(&dir.path().join("train_1.png")).unwrap();
        LabeledMask::new(5, 4)
            .save_png(&dir.path().join("train_1_anno.png"))
            .unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(PipelineError::AnnotationDimensionMismatch { .. })
        ));
    }

    #[test]
    fn bmp_pairs_load_like_the_real_dataset() {
        let dir = tempfile::tempdir().unwrap();
        // The benchmark dataset ships BMP images with BMP label maps.
        let img = image::RgbImage::from_fn(6, 4, |x, _| image::Rgb([x as u8 * 30, 100, 200]));
        img.save(dir.path().join("train_1.bmp")).unwrap();
        let anno = image::GrayImage::from_fn(6, 4, |x, _| image::Luma(if x < 3 { [0] } else { [2] }));
        anno.save(dir.path().join("train_1_anno.bmp")).unwrap();

        let index = load_dataset(dir.path()).unwrap();
        assert_eq!(index.records.len(), 1);
        let record = &index.records[0];
        let loaded = record.load_image().unwrap();
        assert_eq!((loaded.width, loaded.height), (6, 4));
        let mask = record.load_annotation().unwrap();
        // Labels are compacted to 1..=K on load.
        assert_eq!(mask.max_label(), 1);
        assert_eq!(mask.get(5, 0), 1);
        assert_eq!(mask.get(0, 0), 0);
    }

    #[test]
    fn unrelated_files_are_ignored() {
        let dir = tempfile::tempdir().unwrap();
        write_pair(dir.path(), "train_3", 6, 6);
        std::fs::write(dir.path().join("notes.txt"), "hello").unwrap();
        std::fs::write(dir.path().join("random.png"), "not an image name").unwrap();
        let index = load_dataset(dir.path()).unwrap();
        assert_eq!(index.records.len(), 1);
    }

    #[test]
    fn undecodable_image_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("train_1.png"), b"not actually a png").unwrap();
        std::fs::write(dir.path().join("train_1_anno.png"), b"junk").unwrap();
        match load_dataset(dir.path()) {
            Err(PipelineError::Unreadable { path, .. }) => {
                assert!(path.to_string_lossy().contains("train_1"));
            }
            other => panic!("expected Unreadable, got {other:?}"),
        }
    }

    #[test]
    fn missing_directory_errors() {
        assert!(matches!(
            load_dataset(Path::new("/definitely/not/here")),
            Err(PipelineError::MissingDataDir(_))
        ));
    }
}
