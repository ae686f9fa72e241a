use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::{Point, ScoredPoint};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedPoint {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub difficult: bool,
}

impl AnnotatedPoint {
    pub fn point(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

/// Center-point labels for one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationDoc {
    pub image: String,
    pub width: u32,
    pub height: u32,
    pub points: Vec<AnnotatedPoint>,
}

impl AnnotationDoc {
    pub fn new(image: impl Into<String>, width: u32, height: u32) -> Self {
        Self {
            image: image.into(),
            width,
            height,
            points: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_header(&self.image, self.width, self.height)?;
        for (i, p) in self.points.iter().enumerate() {
            check_point(i, p.x, p.y, self.width, self.height)?;
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.points.len()
    }

    pub fn centers(&self) -> Vec<Point> {
        self.points.iter().map(AnnotatedPoint::point).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictedPoint {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub difficult: bool,
    pub score: f64,
}

/// Annotation schema with a confidence per point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionDoc {
    pub image: String,
    pub width: u32,
    pub height: u32,
    pub points: Vec<PredictedPoint>,
}

impl PredictionDoc {
    pub fn from_scored(image: impl Into<String>, width: u32, height: u32, points: &[ScoredPoint]) -> Self {
        Self {
            image: image.into(),
            width,
            height,
            points: points
                .iter()
                .map(|p| PredictedPoint {
                    x: p.x,
                    y: p.y,
                    difficult: false,
                    score: p.score,
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_header(&self.image, self.width, self.height)?;
        for (i, p) in self.points.iter().enumerate() {
            check_point(i, p.x, p.y, self.width, self.height)?;
            if !(0.0..=1.0).contains(&p.score) {
                return Err(Error::validation(format!("points[{i}].score"), format!("{} outside [0,1]", p.score)));
            }
        }
        Ok(())
    }
}

fn validate_header(image: &str, width: u32, height: u32) -> Result<()> {
    if image.is_empty() || image.contains(['/', '\\']) {
        return Err(Error::validation("image", format!("{image:?} is not a bare filename")));
    }
    if width == 0 {
        return Err(Error::validation("width", "must be positive"));
    }
    if height == 0 {
        return Err(Error::validation("height", "must be positive"));
    }
    Ok(())
}

fn check_point(i: usize, x: f64, y: f64, width: u32, height: u32) -> Result<()> {
    if !(x.is_finite() && x >= 0.0 && x < width as f64) {
        return Err(Error::validation(format!("points[{i}].x"), format!("{x} outside [0, {width})")));
    }
    if !(y.is_finite() && y >= 0.0 && y < height as f64) {
        return Err(Error::validation(format!("points[{i}].y"), format!("{y} outside [0, {height})")));
    }
    Ok(())
}

/// Parses JSON text, reporting the failing field path and position.
pub fn parse_json<T: DeserializeOwned>(text: &str, context: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        Error::Parse {
            context: format!("{context} at {path} (line {}, column {})", inner.line(), inner.column()),
            message: inner.to_string(),
        }
    })
}

pub fn parse_annotations(text: &str, context: &str) -> Result<AnnotationDoc> {
    let doc: AnnotationDoc = parse_json(text, context)?;
    doc.validate()?;
    Ok(doc)
}

pub fn read_annotations(path: &Path) -> Result<AnnotationDoc> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, &path.display().to_string())
}

pub fn write_annotations(doc: &AnnotationDoc, path: &Path) -> Result<()> {
    doc.validate()?;
    write_json_atomic(doc, path)
}

pub fn read_predictions(path: &Path) -> Result<PredictionDoc> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: PredictionDoc = parse_json(&text, &path.display().to_string())?;
    doc.validate()?;
    Ok(doc)
}

pub fn write_predictions(doc: &PredictionDoc, path: &Path) -> Result<()> {
    doc.validate()?;
    write_json_atomic(doc, path)
}

/// Serializes to a temp file in the target directory, then renames over `path`.
pub fn write_json_atomic<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse {
        context: path.display().to_string(),
        message: e.to_string(),
    })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
