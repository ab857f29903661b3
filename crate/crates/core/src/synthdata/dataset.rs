//! On-disk layout:
//!
//! ```text
//! root/seq_0000/visible/000000.ppm
//! root/seq_0000/infrared/000000.pgm
//! root/seq_0000/{visible.txt, infrared.txt, attributes.txt}
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use super::{pnm, Attribute, SequenceRecord};
use crate::bbox::BBox;
use crate::error::{Error, Result};

pub fn sequence_dir_name(index: usize) -> String {
    format!("seq_{index:04}")
}

fn frame_name(index: usize, ext: &str) -> String {
    format!("{index:06}.{ext}")
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One `x,y,w,h` line per box.
pub fn write_gt(path: &Path, boxes: &[BBox]) -> Result<()> {
    let text: String = boxes.iter().map(|b| format!("{b}\n")).collect();
    write_text(path, &text)
}

pub fn read_gt(path: &Path) -> Result<Vec<BBox>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut boxes = Vec::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let content = line.trim();
        if !content.is_empty() {
            let b: BBox = content.parse().map_err(|e: Error| Error::Format {
                path: path.to_path_buf(),
                offset,
                reason: e.to_string(),
            })?;
            boxes.push(b);
        }
        offset += line.len() as u64;
    }
    Ok(boxes)
}

pub fn write_sequence(record: &SequenceRecord, dir: &Path) -> Result<()> {
    record.validate()?;
    let vis = dir.join("visible");
    let ir = dir.join("infrared");
    create_dir(&vis)?;
    create_dir(&ir)?;
    for (i, (rgb, tir)) in record.rgb.iter().zip(&record.tir).enumerate() {
        pnm::write(rgb, &vis.join(frame_name(i, "ppm")))?;
        pnm::write(tir, &ir.join(frame_name(i, "pgm")))?;
    }
    write_gt(&dir.join("visible.txt"), &record.gt_rgb)?;
    write_gt(&dir.join("infrared.txt"), &record.gt_tir)?;
    let attrs: String = record.attributes.iter().map(|a| format!("{a}\n")).collect();
    write_text(&dir.join("attributes.txt"), &attrs)
}

pub fn write_dataset(records: &[SequenceRecord], root: &Path) -> Result<()> {
    create_dir(root)?;
    for r in records {
        write_sequence(r, &root.join(&r.name))?;
    }
    Ok(())
}

fn sorted_entries(dir: &Path, keep: impl Fn(&Path) -> bool) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if keep(&path) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn has_ext(path: &Path, ext: &str) -> bool {
    path.extension().is_some_and(|e| e == ext)
}

fn read_attributes(path: &Path) -> Result<Vec<Attribute>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let tag = line.trim();
        if !tag.is_empty() {
            out.push(tag.parse().map_err(|_| Error::Format {
                path: path.to_path_buf(),
                offset,
                reason: format!("unknown attribute `{tag}`"),
            })?);
        }
        offset += line.len() as u64;
    }
    Ok(out)
}

pub fn read_sequence(dir: &Path) -> Result<SequenceRecord> {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let rgb = sorted_entries(&dir.join("visible"), |p| has_ext(p, "ppm"))?
        .iter()
        .map(|p| pnm::read(p))
        .collect::<Result<Vec<_>>>()?;
    let tir = sorted_entries(&dir.join("infrared"), |p| has_ext(p, "pgm"))?
        .iter()
        .map(|p| pnm::read(p))
        .collect::<Result<Vec<_>>>()?;
    let attr_path = dir.join("attributes.txt");
    let attributes = if attr_path.exists() {
        read_attributes(&attr_path)?
    } else {
        Vec::new()
    };
    let record = SequenceRecord {
        name,
        rgb,
        tir,
        gt_rgb: read_gt(&dir.join("visible.txt"))?,
        gt_tir: read_gt(&dir.join("infrared.txt"))?,
        attributes,
    };
    record.validate()?;
    Ok(record)
}

/// Every `seq_*` directory under `root`, in name order.
pub fn read_dataset(root: &Path) -> Result<Vec<SequenceRecord>> {
    let dirs = sorted_entries(root, |p| {
        p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("seq_"))
    })?;
    if dirs.is_empty() {
        return Err(Error::invalid(format!("no seq_* directories under {}", root.display())));
    }
    dirs.iter().map(|d| read_sequence(d)).collect()
}

#[cfg(test)]
mod tests {
    use super::super::{generate_sequence, SequenceSpec};
    use super::*;

    #[test]
    fn two_frame_roundtrip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SequenceSpec {
            attributes: vec![Attribute::LI, Attribute::TC],
            ..SequenceSpec::benchmark(2, 17)
        };
        let rec = generate_sequence(&spec, "seq_0000").unwrap();
        write_dataset(std::slice::from_ref(&rec), dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back, vec![rec]);
    }

    #[test]
    fn malformed_gt_line_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gt.txt");
        fs::write(&path, "1,2,3,4\n1,2,x,4\n").unwrap();
        match read_gt(&path) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 8),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mismatched_counts_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let rec = generate_sequence(&SequenceSpec::benchmark(2, 3), "seq_0000").unwrap();
        write_dataset(std::slice::from_ref(&rec), dir.path()).unwrap();
        fs::write(dir.path().join("seq_0000/infrared.txt"), "1,1,2,2\n").unwrap();
        assert!(read_dataset(dir.path()).is_err());
    }
}
