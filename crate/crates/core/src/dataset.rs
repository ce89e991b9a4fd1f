//! Image records, the line-per-image corpus format and the PASCAL VOC importer.
//!
//! A corpus file holds one JSON object per line:
//!
//! ```text
//! {"image_id":"000005","width":500,"height":375,"annotations":[{"x1":263.0,"y1":211.0,"x2":324.0,"y2":339.0,"category":8}]}
//! ```
//!
//! Erased annotations carry `"erased":true` and only appear in audit files;
//! training corpora are written without them.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::boxes::BBox;
use crate::error::{Error, Result};

/// The twenty PASCAL VOC classes; a category id is an index into this list.
pub const VOC_CLASSES: [&str; 20] = [
    "aeroplane",
    "bicycle",
    "bird",
    "boat",
    "bottle",
    "bus",
    "car",
    "cat",
    "chair",
    "cow",
    "diningtable",
    "dog",
    "horse",
    "motorbike",
    "person",
    "pottedplant",
    "sheep",
    "sofa",
    "train",
    "tvmonitor",
];

fn is_false(v: &bool) -> bool {
    !*v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    #[serde(flatten)]
    pub bbox: BBox,
    pub category: u32,
    #[serde(default, skip_serializing_if = "is_false")]
    pub erased: bool,
}

impl Annotation {
    pub fn new(bbox: BBox, category: u32) -> Self {
        Self {
            bbox,
            category,
            erased: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub annotations: Vec<Annotation>,
}

impl ImageRecord {
    /// Annotations visible to training.
    pub fn active(&self) -> impl Iterator<Item = &Annotation> {
        self.annotations.iter().filter(|a| !a.erased)
    }

    pub fn active_boxes(&self) -> Vec<BBox> {
        self.active().map(|a| a.bbox).collect()
    }

    /// All boxes, erased or not.
    pub fn all_boxes(&self) -> Vec<BBox> {
        self.annotations.iter().map(|a| a.bbox).collect()
    }

    /// Copy with erased annotations removed.
    pub fn training_view(&self) -> ImageRecord {
        ImageRecord {
            annotations: self.active().cloned().collect(),
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.image_id.is_empty() {
            return Err(Error::Malformed("empty image_id".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Malformed(format!(
                "image {} has size {}x{}",
                self.image_id, self.width, self.height
            )));
        }
        Ok(())
    }
}

pub fn validate_corpus(corpus: &[ImageRecord]) -> Result<()> {
    let mut seen = HashSet::new();
    for rec in corpus {
        rec.validate()?;
        if !seen.insert(rec.image_id.as_str()) {
            return Err(Error::Malformed(format!("duplicate image_id {}", rec.image_id)));
        }
    }
    Ok(())
}

/// Reads a corpus, one record per nonblank line.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<ImageRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ImageRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Malformed(format!("line {}: {e}", lineno + 1)))?;
        out.push(rec);
    }
    validate_corpus(&out)?;
    Ok(out)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<ImageRecord>> {
    let file = fs::File::open(path)?;
    read_corpus(std::io::BufReader::new(file))
}

/// Writes a corpus. Erased annotations are dropped unless `audit` is set.
pub fn write_corpus<W: Write>(corpus: &[ImageRecord], mut w: W, audit: bool) -> Result<()> {
    for rec in corpus {
        if audit {
            serde_json::to_writer(&mut w, rec)?;
        } else {
            serde_json::to_writer(&mut w, &rec.training_view())?;
        }
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_corpus(corpus: &[ImageRecord], path: impl AsRef<Path>, audit: bool) -> Result<()> {
    let file = fs::File::create(path)?;
    write_corpus(corpus, std::io::BufWriter::new(file), audit)
}

/// Annotation counts for a corpus; erased annotations count as dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationReport {
    pub images: usize,
    pub total_annotations: usize,
    pub dropped: usize,
    pub drop_fraction: f64,
    /// Kept-annotation count -> number of images.
    pub kept_histogram: BTreeMap<usize, usize>,
}

impl CurationReport {
    pub fn from_records(corpus: &[ImageRecord]) -> Self {
        let mut report = CurationReport {
            images: 0,
            total_annotations: 0,
            dropped: 0,
            drop_fraction: 0.0,
            kept_histogram: BTreeMap::new(),
        };
        for rec in corpus {
            report.add_image(rec.annotations.len(), rec.active().count());
        }
        report
    }

    pub(crate) fn add_image(&mut self, total: usize, kept: usize) {
        self.images += 1;
        self.total_annotations += total;
        self.dropped += total - kept;
        *self.kept_histogram.entry(kept).or_default() += 1;
        self.drop_fraction = if self.total_annotations == 0 {
            0.0
        } else {
            self.dropped as f64 / self.total_annotations as f64
        };
    }

    /// Flat `key = value` summary.
    pub fn summary(&self) -> String {
        format!(
            "images = {}\ntotal_annotations = {}\ndropped = {}\ndrop_fraction = {:.6}\n",
            self.images, self.total_annotations, self.dropped, self.drop_fraction
        )
    }

    pub fn histogram_csv(&self) -> String {
        let mut s = String::from("kept,images\n");
        for (kept, images) in &self.kept_histogram {
            s.push_str(&format!("{kept},{images}\n"));
        }
        s
    }
}

/// Summary of a corpus as it stands (erased annotations count as dropped).
pub fn corpus_stats(corpus: &[ImageRecord]) -> Result<CurationReport> {
    validate_corpus(corpus)?;
    Ok(CurationReport::from_records(corpus))
}

fn child_text<'a>(node: roxmltree::Node<'a, '_>, name: &str) -> Option<&'a str> {
    node.children()
        .find(|c| c.has_tag_name(name))
        .and_then(|c| c.text())
        .map(str::trim)
}

fn parse_num(node: roxmltree::Node, name: &str, ctx: &str) -> Result<f64> {
    child_text(node, name)
        .ok_or_else(|| Error::Malformed(format!("{ctx}: missing <{name}>")))?
        .parse::<f64>()
        .map_err(|e| Error::Malformed(format!("{ctx}: <{name}>: {e}")))
}

/// Parses one PASCAL VOC annotation XML document. Difficult objects are kept.
pub fn parse_voc_xml(xml: &str) -> Result<ImageRecord> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| Error::Malformed(e.to_string()))?;
    let root = doc.root_element();
    let filename = child_text(root, "filename")
        .ok_or_else(|| Error::Malformed("missing <filename>".into()))?;
    let image_id = Path::new(filename)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or(filename)
        .to_string();
    let size = root
        .children()
        .find(|c| c.has_tag_name("size"))
        .ok_or_else(|| Error::Malformed(format!("{image_id}: missing <size>")))?;
    let width = parse_num(size, "width", &image_id)? as u32;
    let height = parse_num(size, "height", &image_id)? as u32;

    let mut annotations = Vec::new();
    for obj in root.children().filter(|c| c.has_tag_name("object")) {
        let name = child_text(obj, "name")
            .ok_or_else(|| Error::Malformed(format!("{image_id}: object without <name>")))?;
        let category = VOC_CLASSES
            .iter()
            .position(|c| *c == name)
            .ok_or_else(|| Error::Vocabulary(format!("{image_id}: unknown VOC class {name:?}")))?;
        let bnd = obj
            .children()
            .find(|c| c.has_tag_name("bndbox"))
            .ok_or_else(|| Error::Malformed(format!("{image_id}: object without <bndbox>")))?;
        let bbox = BBox::new(
            parse_num(bnd, "xmin", &image_id)?,
            parse_num(bnd, "ymin", &image_id)?,
            parse_num(bnd, "xmax", &image_id)?,
            parse_num(bnd, "ymax", &image_id)?,
        )?;
        annotations.push(Annotation::new(bbox, category as u32));
    }
    let rec = ImageRecord {
        image_id,
        width,
        height,
        annotations,
    };
    rec.validate()?;
    Ok(rec)
}

/// Converts every `*.xml` file in a VOC `Annotations/` directory, sorted by
/// file name.
pub fn convert_voc_dir(dir: impl AsRef<Path>) -> Result<Vec<ImageRecord>> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "xml"))
        .collect();
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let xml = fs::read_to_string(&p)?;
        out.push(parse_voc_xml(&xml).map_err(|e| Error::Malformed(format!("{}: {e}", p.display())))?);
    }
    validate_corpus(&out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, n: usize) -> ImageRecord {
        ImageRecord {
            image_id: id.into(),
            width: 100,
            height: 100,
            annotations: (0..n)
                .map(|i| Annotation::new(BBox::new(i as f64, 0.0, i as f64 + 5.0, 5.0).unwrap(), 1))
                .collect(),
        }
    }

    #[test]
    fn empty_corpus_stats() {
        let r = corpus_stats(&[]).unwrap();
        assert_eq!((r.images, r.total_annotations, r.dropped), (0, 0, 0));
        assert_eq!(r.drop_fraction, 0.0);
    }

    #[test]
    fn counts_annotations() {
        let r = corpus_stats(&[record("a", 3), record("b", 5)]).unwrap();
        assert_eq!(r.total_annotations, 8);
        assert_eq!(r.kept_histogram.get(&3), Some(&1));
        assert_eq!(r.histogram_csv(), "kept,images\n3,1\n5,1\n");
    }

    #[test]
    fn malformed_records() {
        assert!(corpus_stats(&[record("a", 1), record("a", 2)]).is_err());
        let mut r = record("z", 1);
        r.width = 0;
        assert!(corpus_stats(&[r]).is_err());
        let bad = r#"{"image_id":"x","width":4,"height":4,"annotations":[{"x1":3,"y1":0,"x2":1,"y2":2,"category":0}]}"#;
        assert!(read_corpus(bad.as_bytes()).is_err());
        assert!(read_corpus("not json\n".as_bytes()).is_err());
    }

    #[test]
    fn line_format() {
        let mut rec = record("img", 2);
        rec.annotations[1].erased = true;
        let mut buf = Vec::new();
        write_corpus(std::slice::from_ref(&rec), &mut buf, false).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "{\"image_id\":\"img\",\"width\":100,\"height\":100,\"annotations\":\
             [{\"x1\":0.0,\"y1\":0.0,\"x2\":5.0,\"y2\":5.0,\"category\":1}]}\n"
        );
        let mut audit = Vec::new();
        write_corpus(std::slice::from_ref(&rec), &mut audit, true).unwrap();
        let back = read_corpus(audit.as_slice()).unwrap();
        assert_eq!(back, vec![rec]);
    }

    #[test]
    fn voc_xml() {
        let xml = r#"<annotation>
            <folder>VOC2007</folder>
            <filename>000005.jpg</filename>
            <size><width>500</width><height>375</height><depth>3</depth></size>
            <object><name>chair</name><difficult>0</difficult>
              <bndbox><xmin>263</xmin><ymin>211</ymin><xmax>324</xmax><ymax>339</ymax></bndbox></object>
            <object><name>chair</name><difficult>1</difficult>
              <bndbox><xmin>5</xmin><ymin>244</ymin><xmax>67</xmax><ymax>374</ymax></bndbox></object>
        </annotation>"#;
        let rec = parse_voc_xml(xml).unwrap();
        assert_eq!(rec.image_id, "000005");
        assert_eq!((rec.width, rec.height), (500, 375));
        assert_eq!(rec.annotations.len(), 2);
        assert_eq!(rec.annotations[0].category, 8);
        assert_eq!(rec.annotations[1].bbox.x1, 5.0);

        let unknown = xml.replace("<name>chair</name><difficult>0", "<name>unicorn</name><difficult>0");
        assert!(matches!(parse_voc_xml(&unknown), Err(Error::Vocabulary(_))));
    }
}
