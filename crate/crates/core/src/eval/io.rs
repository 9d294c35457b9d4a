use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::metrics::{Box, TrackRecord};
use crate::error::{Error, Result};

/// Parse one box per line, `x,y,w,h` (tabs or spaces also accepted). Blank
/// lines are ignored. With `one_based`, corners are shifted to 0-based.
pub fn parse_boxes(text: &str, one_based: bool) -> std::result::Result<Vec<Box>, String> {
    let shift = if one_based { 1.0 } else { 0.0 };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let v: Vec<f64> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| format!("line {}: {e}", i + 1))?;
            match v[..] {
                [x, y, w, h] if v.iter().all(|f| f.is_finite()) => {
                    if w < 0.0 || h < 0.0 {
                        return Err(format!("line {}: negative box size", i + 1));
                    }
                    let absent = x == 0.0 && y == 0.0 && w == 0.0 && h == 0.0;
                    Ok(if absent {
                        Box::default()
                    } else {
                        Box::new(x - shift, y - shift, w, h)
                    })
                }
                _ => Err(format!("line {}: expected 4 finite numbers", i + 1)),
            }
        })
        .collect()
}

pub fn read_boxes(path: impl AsRef<Path>, one_based: bool) -> Result<Vec<Box>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_boxes(&text, one_based).map_err(|m| Error::Dataset(format!("{}: {m}", path.display())))
}

/// Attribute tags per sequence, from a JSON object of string arrays.
pub fn read_attributes(path: impl AsRef<Path>) -> Result<BTreeMap<String, Vec<String>>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Pair every `<sequence>.txt` in `gt_dir` with the same file in `pred_dir`.
pub fn load_records(
    pred_dir: impl AsRef<Path>,
    gt_dir: impl AsRef<Path>,
    attributes: Option<&BTreeMap<String, Vec<String>>>,
    one_based: bool,
) -> Result<Vec<TrackRecord>> {
    let (pred_dir, gt_dir) = (pred_dir.as_ref(), gt_dir.as_ref());
    let mut gts = Vec::new();
    for e in fs::read_dir(gt_dir).map_err(|e| Error::io(gt_dir, e))? {
        let p = e.map_err(|e| Error::io(gt_dir, e))?.path();
        if p.is_file() && p.extension().is_some_and(|x| x == "txt") {
            gts.push(p);
        }
    }
    gts.sort();
    if gts.is_empty() {
        return Err(Error::Dataset(format!("{} has no ground-truth files", gt_dir.display())));
    }
    gts.into_iter()
        .map(|gt| {
            let sequence = gt.file_stem().unwrap().to_string_lossy().into_owned();
            let pred = pred_dir.join(gt.file_name().unwrap());
            if !pred.is_file() {
                return Err(Error::Sequence {
                    sequence,
                    message: format!("no prediction file {}", pred.display()),
                });
            }
            let record = TrackRecord {
                attributes: attributes
                    .and_then(|a| a.get(&sequence))
                    .cloned()
                    .unwrap_or_default(),
                predictions: read_boxes(&pred, one_based)?,
                ground_truth: read_boxes(&gt, one_based)?,
                sequence,
            };
            record.validate()?;
            Ok(record)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_separators_and_one_based() {
        let b = parse_boxes("1,2,3,4\n\n5\t6 7 8\n0,0,0,0\n", true).unwrap();
        assert_eq!(b[0], Box::new(0.0, 1.0, 3.0, 4.0));
        assert_eq!(b[1], Box::new(4.0, 5.0, 7.0, 8.0));
        assert!(b[2].is_absent());
        assert!(parse_boxes("1,2,3", false).is_err());
        assert!(parse_boxes("1,2,x,4", false).is_err());
        assert!(parse_boxes("1,2,-3,4", false).is_err());
    }

    #[test]
    fn missing_prediction_names_sequence() {
        let t = tempfile::tempdir().unwrap();
        let (p, g) = (t.path().join("p"), t.path().join("g"));
        fs::create_dir_all(&p).unwrap();
        fs::create_dir_all(&g).unwrap();
        fs::write(g.join("bike1.txt"), "0,0,1,1\n").unwrap();
        let e = load_records(&p, &g, None, false).unwrap_err().to_string();
        assert!(e.contains("bike1"), "{e}");
        fs::write(p.join("bike1.txt"), "0,0,1,1\n0,0,1,1\n").unwrap();
        let e = load_records(&p, &g, None, false).unwrap_err().to_string();
        assert!(e.contains("bike1"), "{e}");
    }
}
