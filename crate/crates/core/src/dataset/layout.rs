use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::annotation::{parse_json, read_annotations, write_json_atomic, AnnotationDoc};
use super::image_io::read_image;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Three disjoint lists of image filenames.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

impl SplitManifest {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (name, list) in SPLIT_NAMES.iter().zip([&self.train, &self.val, &self.test]) {
            for (i, file) in list.iter().enumerate() {
                if !seen.insert(file.as_str()) {
                    return Err(Error::validation(format!("{name}[{i}]"), format!("{file} listed twice")));
                }
            }
        }
        Ok(())
    }

    pub fn split(&self, name: &str) -> Result<&[String]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            _ => Err(Error::Usage(format!("unknown split {name:?}; expected train, val or test"))),
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &String> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }
}

pub fn read_manifest(path: &Path) -> Result<SplitManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: SplitManifest = parse_json(&text, &path.display().to_string())?;
    m.validate()?;
    Ok(m)
}

pub fn write_manifest(m: &SplitManifest, path: &Path) -> Result<()> {
    m.validate()?;
    write_json_atomic(m, path)
}

/// `images/`, `annotations/` and `manifest.json` under one root. An image
/// `name.ext` is labeled by `annotations/name.json`.
#[derive(Clone, Debug)]
pub struct DatasetLayout {
    root: PathBuf,
}

impl DatasetLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn create(&self) -> Result<()> {
        for dir in [self.images_dir(), self.annotations_dir()] {
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        Ok(())
    }

    pub fn images_dir(&self) -> PathBuf {
        self.root.join("images")
    }

    pub fn annotations_dir(&self) -> PathBuf {
        self.root.join("annotations")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn image_path(&self, file: &str) -> PathBuf {
        self.images_dir().join(file)
    }

    pub fn annotation_path(&self, file: &str) -> PathBuf {
        self.annotations_dir().join(format!("{}.json", stem(file)))
    }

    pub fn manifest(&self) -> Result<SplitManifest> {
        read_manifest(&self.manifest_path())
    }

    /// Image files in `images/`, sorted by name.
    pub fn image_files(&self) -> Result<Vec<String>> {
        let dir = self.images_dir();
        let mut files = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let is_image = Path::new(&name)
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "ppm" | "png" | "jpg" | "jpeg"));
            if is_image && entry.path().is_file() {
                files.push(name);
            }
        }
        files.sort();
        Ok(files)
    }

    /// Annotation for `file`, if one exists.
    pub fn annotation(&self, file: &str) -> Result<Option<AnnotationDoc>> {
        let path = self.annotation_path(file);
        if !path.exists() {
            return Ok(None);
        }
        read_annotations(&path).map(Some)
    }

    /// Image and labels for every file in `split`.
    pub fn load_split(&self, split: &str) -> Result<Vec<LabeledImage>> {
        let manifest = self.manifest()?;
        manifest
            .split(split)?
            .iter()
            .map(|file| {
                let doc = self
                    .annotation(file)?
                    .ok_or_else(|| Error::Usage(format!("{file} has no annotation file")))?;
                let image = read_image(&self.image_path(file))?;
                if image.shape()[0] != doc.height as usize || image.shape()[1] != doc.width as usize {
                    return Err(Error::validation(
                        "width",
                        format!(
                            "{file} is {}×{} but its annotation says {}×{}",
                            image.shape()[1],
                            image.shape()[0],
                            doc.width,
                            doc.height
                        ),
                    ));
                }
                Ok(LabeledImage { doc, image })
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct LabeledImage {
    pub doc: AnnotationDoc,
    /// `H×W×3` in `[0,1]`.
    pub image: Tensor,
}

pub fn stem(file: &str) -> &str {
    Path::new(file).file_stem().and_then(|s| s.to_str()).unwrap_or(file)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_across_splits_rejected() {
        let m = SplitManifest {
            train: vec!["a".into()],
            val: vec!["b".into()],
            test: vec!["a".into()],
        };
        assert!(matches!(m.validate(), Err(Error::Validation { .. })));
    }

    #[test]
    fn unknown_split_is_usage_error() {
        assert!(matches!(SplitManifest::default().split("dev"), Err(Error::Usage(_))));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = SplitManifest {
            train: vec!["a.ppm".into(), "b.ppm".into()],
            val: vec!["c.ppm".into()],
            test: vec![],
        };
        let path = dir.path().join("manifest.json");
        write_manifest(&m, &path).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), m);
    }

    #[test]
    fn annotation_path_uses_stem() {
        let l = DatasetLayout::new("/d");
        assert_eq!(l.annotation_path("x.y.ppm"), PathBuf::from("/d/annotations/x.y.json"));
    }
}
