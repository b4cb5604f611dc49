//! Dataset manifests: a header line, then one CSV record per image.
//!
//! ```text
//! #fgv-manifest v1 classes=4 split=train
//! path,class,cx,cy,w,h
//! images/00000.ppm,0,61.5,70,52,31
//! ```
//!
//! Paths are relative to the manifest's directory. Subsets add
//! `mapping=old:new,...` to the header.

use std::fs;
use std::path::{Path, PathBuf};

use fgv_core::binning::BoundingBox;
use fgv_core::synth::{generate_sample, subset_classes, Sample, SynthConfig};
use serde::{Deserialize, Serialize};

use crate::pnm::{read_ppm, write_file, write_ppm};
use crate::{Error, Result};

const MAGIC: &str = "#fgv-manifest";
const VERSION: &str = "v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub path: String,
    pub class: usize,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl Record {
    pub fn bbox(&self) -> Result<BoundingBox> {
        Ok(BoundingBox::new(self.cx, self.cy, self.w, self.h)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub classes: usize,
    pub split: String,
    /// `(original id, dense id)` pairs when this manifest is a class subset.
    pub mapping: Option<Vec<(usize, usize)>>,
    pub records: Vec<Record>,
}

impl Manifest {
    pub fn to_text(&self) -> Result<String> {
        let mut header = format!("{MAGIC} {VERSION} classes={} split={}", self.classes, self.split);
        if let Some(m) = &self.mapping {
            let pairs: Vec<String> = m.iter().map(|(o, n)| format!("{o}:{n}")).collect();
            header.push_str(&format!(" mapping={}", pairs.join(",")));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r)?;
        }
        let body = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        let body = String::from_utf8(body).map_err(|e| Error::Format(e.to_string()))?;
        // An empty manifest still carries its column line.
        let body = if body.is_empty() { "path,class,cx,cy,w,h\n".to_string() } else { body };
        Ok(format!("{header}\n{body}"))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (header, body) = text.split_once('\n').unwrap_or((text, ""));
        let mut fields = header.split_whitespace();
        if fields.next() != Some(MAGIC) {
            return Err(Error::Format("missing #fgv-manifest header".into()));
        }
        match fields.next() {
            Some(VERSION) => {}
            v => return Err(Error::Format(format!("unsupported manifest version {v:?}"))),
        }
        let (mut classes, mut split, mut mapping) = (None, None, None);
        for f in fields {
            let (k, v) = f
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("malformed header field {f:?}")))?;
            match k {
                "classes" => classes = Some(v.parse().map_err(|_| Error::Format(format!("bad class count {v:?}")))?),
                "split" => split = Some(v.to_string()),
                "mapping" => mapping = Some(parse_mapping(v)?),
                _ => return Err(Error::Format(format!("unknown header field {k:?}"))),
            }
        }
        let classes: usize = classes.ok_or_else(|| Error::Format("header lacks classes=".into()))?;
        let mut records = Vec::new();
        for r in csv::Reader::from_reader(body.as_bytes()).deserialize() {
            let r: Record = r?;
            if r.class >= classes {
                return Err(Error::Format(format!("{}: class {} >= {classes}", r.path, r.class)));
            }
            r.bbox()?;
            records.push(r);
        }
        Ok(Manifest {
            classes,
            split: split.unwrap_or_else(|| "all".into()),
            mapping,
            records,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_text()?.as_bytes())
    }

    /// Keeps classes `ids`, relabelled `0..ids.len()` in that order.
    pub fn subset(&self, ids: &[usize]) -> Result<Manifest> {
        let (records, mapping) = subset_classes(&self.records, |r| r.class, |r, c| r.class = c, ids)?;
        Ok(Manifest {
            classes: ids.len(),
            split: self.split.clone(),
            mapping: Some(mapping),
            records,
        })
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for r in &self.records {
            h[r.class] += 1;
        }
        h
    }
}

fn parse_mapping(v: &str) -> Result<Vec<(usize, usize)>> {
    v.split(',')
        .map(|p| {
            let (o, n) = p.split_once(':').ok_or_else(|| Error::Format(format!("bad mapping pair {p:?}")))?;
            let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad mapping pair {p:?}")));
            Ok((num(o)?, num(n)?))
        })
        .collect()
}

/// Images are read relative to the manifest's directory.
pub fn load_samples(manifest_path: &Path) -> Result<(Manifest, Vec<Sample>)> {
    let m = Manifest::load(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let samples = m
        .records
        .iter()
        .map(|r| {
            Ok(Sample {
                image: read_ppm(&dir.join(&r.path))?,
                class: r.class,
                bbox: r.bbox()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((m, samples))
}

/// Renders every record of `cfg` into `dir/images/` and writes
/// `dir/manifest.txt`. Returns the manifest path.
pub fn write_dataset(dir: &Path, cfg: &SynthConfig, split: &str) -> Result<PathBuf> {
    cfg.validate()?;
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut records = Vec::with_capacity(cfg.len());
    for i in 0..cfg.len() {
        let s = generate_sample(cfg, i)?;
        let rel = format!("images/{i:05}.ppm");
        write_ppm(&dir.join(&rel), &s.image)?;
        records.push(Record {
            path: rel,
            class: s.class,
            cx: s.bbox.cx,
            cy: s.bbox.cy,
            w: s.bbox.w,
            h: s.bbox.h,
        });
    }
    let m = Manifest {
        classes: cfg.n_classes,
        split: split.to_string(),
        mapping: None,
        records,
    };
    let path = dir.join("manifest.txt");
    m.save(&path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Manifest {
        Manifest {
            classes: 3,
            split: "train".into(),
            mapping: None,
            records: (0..6)
                .map(|i| Record {
                    path: format!("images/{i}.ppm"),
                    class: i % 3,
                    cx: 10.5 + i as f64,
                    cy: 20.0,
                    w: 8.0,
                    h: 4.25,
                })
                .collect(),
        }
    }

    #[test]
    fn text_roundtrip() {
        let m = sample();
        let text = m.to_text().unwrap();
        assert!(text.starts_with("#fgv-manifest v1 classes=3 split=train\npath,class,cx,cy,w,h\n"));
        assert_eq!(Manifest::parse(&text).unwrap(), m);
    }

    #[test]
    fn subset_relabels_and_records_mapping() {
        let s = sample().subset(&[2, 0]).unwrap();
        assert_eq!(s.classes, 2);
        assert_eq!(s.mapping, Some(vec![(2, 0), (0, 1)]));
        assert_eq!(s.records.len(), 4);
        assert!(s.records.iter().all(|r| r.class < 2));
        assert_eq!(Manifest::parse(&s.to_text().unwrap()).unwrap(), s);
        assert!(sample().subset(&[5]).is_err());
    }

    #[test]
    fn malformed_rejected() {
        assert!(Manifest::parse("path,class\n").is_err());
        assert!(Manifest::parse("#fgv-manifest v2 classes=2\n").is_err());
        let bad_class = "#fgv-manifest v1 classes=2 split=x\npath,class,cx,cy,w,h\na.ppm,2,1,1,1,1\n";
        assert!(Manifest::parse(bad_class).is_err());
        let bad_box = "#fgv-manifest v1 classes=2 split=x\npath,class,cx,cy,w,h\na.ppm,1,1,1,0,1\n";
        assert!(Manifest::parse(bad_box).is_err());
    }
}
