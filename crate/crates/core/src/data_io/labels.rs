//! Label, split and patch CSV files.
//!
//! | file        | columns                          |
//! |-------------|----------------------------------|
//! | class labels| `row,col,class` (`-1` = unlabeled)|
//! | pixel split | `row,col,split` (`train`/`test`) |
//! | patches     | `patch_id,row,col`               |
//! | targets     | `patch_id,<name_1>,...,<name_n>` |
//! | patch split | `patch_id,split`                 |

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNLABELED: i32 = -1;

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn expect_headers(rdr: &mut csv::Reader<File>, want: &[&str], path: &Path) -> Result<()> {
    let headers = rdr.headers()?;
    let got: Vec<&str> = headers.iter().collect();
    if got.len() < want.len() || got[..want.len()] != *want {
        return Err(Error::Format(format!(
            "{}: expected header {:?}, found {:?}",
            path.display(),
            want,
            got
        )));
    }
    Ok(())
}

fn check_bounds(row: usize, col: usize, height: usize, width: usize) -> Result<()> {
    if row >= height || col >= width {
        return Err(Error::OutOfBounds {
            row,
            col,
            height,
            width,
        });
    }
    Ok(())
}

/// Per-pixel class ids in raster order; [`UNLABELED`] where absent.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassLabels {
    pub height: usize,
    pub width: usize,
    pub classes: Vec<i32>,
}

impl ClassLabels {
    pub fn unlabeled(height: usize, width: usize) -> Self {
        ClassLabels {
            height,
            width,
            classes: vec![UNLABELED; height * width],
        }
    }

    pub fn get(&self, pixel: usize) -> Option<usize> {
        match self.classes[pixel] {
            c if c < 0 => None,
            c => Some(c as usize),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.classes.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize)
    }
}

#[derive(Deserialize)]
struct ClassRow {
    row: usize,
    col: usize,
    class: i32,
}

pub fn load_class_labels(path: impl AsRef<Path>, height: usize, width: usize) -> Result<ClassLabels> {
    let path = path.as_ref();
    let mut rdr = reader(path)?;
    expect_headers(&mut rdr, &["row", "col", "class"], path)?;
    let mut labels = ClassLabels::unlabeled(height, width);
    for rec in rdr.deserialize() {
        let r: ClassRow = rec?;
        check_bounds(r.row, r.col, height, width)?;
        if r.class < UNLABELED {
            return Err(Error::Format(format!("class id {} below sentinel", r.class)));
        }
        labels.classes[r.row * width + r.col] = r.class;
    }
    Ok(labels)
}

pub fn write_class_labels(labels: &ClassLabels, path: impl AsRef<Path>) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    w.write_record(["row", "col", "class"])?;
    for (p, &c) in labels.classes.iter().enumerate() {
        if c != UNLABELED {
            w.serialize((p / labels.width, p % labels.width, c))?;
        }
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum SplitRole {
    Train,
    Test,
}

/// Train/test assignment of pixels. A pixel listed under both roles is an
/// information leak and is refused at load time.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl PixelSplit {
    pub fn new(train: Vec<usize>, test: Vec<usize>) -> Result<Self> {
        let mut seen: HashMap<usize, SplitRole> = HashMap::new();
        for (&p, role) in train
            .iter()
            .map(|p| (p, SplitRole::Train))
            .chain(test.iter().map(|p| (p, SplitRole::Test)))
        {
            if let Some(prev) = seen.insert(p, role) {
                if prev != role {
                    return Err(Error::Leak(format!(
                        "pixel {p} appears in both train and test splits"
                    )));
                }
            }
        }
        let mut train = train;
        let mut test = test;
        train.sort_unstable();
        train.dedup();
        test.sort_unstable();
        test.dedup();
        Ok(PixelSplit { train, test })
    }

    pub fn train_mask(&self, pixels: usize) -> Vec<bool> {
        let mut mask = vec![false; pixels];
        for &p in &self.train {
            mask[p] = true;
        }
        mask
    }
}

#[derive(Deserialize)]
struct SplitRow {
    row: usize,
    col: usize,
    split: SplitRole,
}

pub fn load_pixel_split(path: impl AsRef<Path>, height: usize, width: usize) -> Result<PixelSplit> {
    let path = path.as_ref();
    let mut rdr = reader(path)?;
    expect_headers(&mut rdr, &["row", "col", "split"], path)?;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for rec in rdr.deserialize() {
        let r: SplitRow = rec?;
        check_bounds(r.row, r.col, height, width)?;
        let p = r.row * width + r.col;
        match r.split {
            SplitRole::Train => train.push(p),
            SplitRole::Test => test.push(p),
        }
    }
    PixelSplit::new(train, test)
}

pub fn write_pixel_split(split: &PixelSplit, width: usize, path: impl AsRef<Path>) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    w.write_record(["row", "col", "split"])?;
    for (role, pixels) in [("train", &split.train), ("test", &split.test)] {
        for &p in pixels {
            w.serialize((p / width, p % width, role))?;
        }
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

/// Patch id → member pixels, in order of first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMembership {
    pub patches: Vec<(String, Vec<usize>)>,
}

impl PatchMembership {
    pub fn new(patches: Vec<(String, Vec<usize>)>) -> Result<Self> {
        let mut owner: HashMap<usize, &str> = HashMap::new();
        for (id, members) in &patches {
            if members.is_empty() {
                return Err(Error::Empty("patch with no pixels"));
            }
            for &p in members {
                if let Some(prev) = owner.insert(p, id) {
                    if prev != id {
                        return Err(Error::Format(format!(
                            "pixel {p} belongs to patches {prev} and {id}"
                        )));
                    }
                }
            }
        }
        Ok(PatchMembership { patches })
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.patches.iter().position(|(p, _)| p == id)
    }
}

#[derive(Deserialize)]
struct PatchRow {
    patch_id: String,
    row: usize,
    col: usize,
}

pub fn load_patches(path: impl AsRef<Path>, height: usize, width: usize) -> Result<PatchMembership> {
    let path = path.as_ref();
    let mut rdr = reader(path)?;
    expect_headers(&mut rdr, &["patch_id", "row", "col"], path)?;
    let mut order: Vec<String> = Vec::new();
    let mut members: HashMap<String, Vec<usize>> = HashMap::new();
    for rec in rdr.deserialize() {
        let r: PatchRow = rec?;
        check_bounds(r.row, r.col, height, width)?;
        let entry = members.entry(r.patch_id.clone()).or_insert_with(|| {
            order.push(r.patch_id.clone());
            Vec::new()
        });
        entry.push(r.row * width + r.col);
    }
    PatchMembership::new(
        order
            .into_iter()
            .map(|id| {
                let m = members.remove(&id).unwrap_or_default();
                (id, m)
            })
            .collect(),
    )
}

pub fn write_patches(patches: &PatchMembership, width: usize, path: impl AsRef<Path>) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    w.write_record(["patch_id", "row", "col"])?;
    for (id, members) in &patches.patches {
        for &p in members {
            w.serialize((id, p / width, p % width))?;
        }
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

/// Real-valued per-patch targets.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchTargets {
    pub names: Vec<String>,
    pub rows: BTreeMap<String, Vec<f64>>,
}

pub fn load_targets(path: impl AsRef<Path>) -> Result<PatchTargets> {
    let path = path.as_ref();
    let mut rdr = reader(path)?;
    expect_headers(&mut rdr, &["patch_id"], path)?;
    let names: Vec<String> = rdr.headers()?.iter().skip(1).map(str::to_owned).collect();
    if names.is_empty() {
        return Err(Error::Format(format!("{}: no target columns", path.display())));
    }
    let mut rows = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let id = rec[0].to_owned();
        let vals = rec
            .iter()
            .skip(1)
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::Format(format!("patch {id}: bad target {s:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if vals.len() != names.len() {
            return Err(Error::Format(format!("patch {id}: wrong column count")));
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("target for patch {id}")));
        }
        rows.insert(id, vals);
    }
    Ok(PatchTargets { names, rows })
}

pub fn write_targets(targets: &PatchTargets, path: impl AsRef<Path>) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    let mut header = vec!["patch_id".to_owned()];
    header.extend(targets.names.iter().cloned());
    w.write_record(&header)?;
    for (id, vals) in &targets.rows {
        let mut rec = vec![id.clone()];
        rec.extend(vals.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Deserialize)]
struct PatchSplitRow {
    patch_id: String,
    split: SplitRole,
}

pub fn load_patch_split(path: impl AsRef<Path>) -> Result<PatchSplit> {
    let path = path.as_ref();
    let mut rdr = reader(path)?;
    expect_headers(&mut rdr, &["patch_id", "split"], path)?;
    let mut role: BTreeMap<String, SplitRole> = BTreeMap::new();
    let mut order = Vec::new();
    for rec in rdr.deserialize() {
        let r: PatchSplitRow = rec?;
        match role.get(&r.patch_id) {
            Some(&prev) if prev != r.split => {
                return Err(Error::Leak(format!(
                    "patch {} appears in both train and test splits",
                    r.patch_id
                )))
            }
            Some(_) => continue,
            None => {
                role.insert(r.patch_id.clone(), r.split);
                order.push((r.patch_id, r.split));
            }
        }
    }
    let (train, test): (Vec<_>, Vec<_>) = order.into_iter().partition(|(_, r)| *r == SplitRole::Train);
    Ok(PatchSplit {
        train: train.into_iter().map(|(id, _)| id).collect(),
        test: test.into_iter().map(|(id, _)| id).collect(),
    })
}

pub fn write_patch_split(split: &PatchSplit, path: impl AsRef<Path>) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    w.write_record(["patch_id", "split"])?;
    for id in &split.train {
        w.write_record([id.as_str(), "train"])?;
    }
    for id in &split.test {
        w.write_record([id.as_str(), "test"])?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

/// Writes a plain CSV with a header row; used by reports and dumps.
pub fn write_rows<P: AsRef<Path>>(path: P, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let path = path.as_ref();
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Format(format!("csv buffer: {e}")))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn class_labels_round_trip_with_sentinel() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.csv");
        fs::write(&p, "row,col,class\n0,0,2\n1,1,0\n0,1,-1\n").unwrap();
        let l = load_class_labels(&p, 2, 2).unwrap();
        assert_eq!(l.classes, vec![2, -1, -1, 0]);
        assert_eq!(l.get(1), None);
        assert_eq!(l.n_classes(), 3);
        let q = dir.path().join("out.csv");
        write_class_labels(&l, &q).unwrap();
        assert_eq!(load_class_labels(&q, 2, 2).unwrap(), l);
    }

    #[test]
    fn labels_out_of_bounds_and_bad_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.csv");
        fs::write(&p, "row,col,class\n5,0,1\n").unwrap();
        assert!(matches!(load_class_labels(&p, 2, 2), Err(Error::OutOfBounds { .. })));
        fs::write(&p, "r,c,k\n0,0,1\n").unwrap();
        assert!(matches!(load_class_labels(&p, 2, 2), Err(Error::Format(_))));
    }

    #[test]
    fn overlapping_split_is_a_leak() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("split.csv");
        fs::write(&p, "row,col,split\n0,0,train\n0,1,test\n0,0,test\n").unwrap();
        assert!(matches!(load_pixel_split(&p, 1, 2), Err(Error::Leak(_))));
        fs::write(&p, "row,col,split\n0,0,train\n0,1,test\n0,0,train\n").unwrap();
        let s = load_pixel_split(&p, 1, 2).unwrap();
        assert_eq!(s.train, vec![0]);
        assert_eq!(s.test, vec![1]);
    }

    #[test]
    fn patches_and_targets() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("patches.csv");
        fs::write(&p, "patch_id,row,col\nb,0,0\na,0,1\nb,1,0\n").unwrap();
        let m = load_patches(&p, 2, 2).unwrap();
        assert_eq!(m.patches, vec![("b".into(), vec![0, 2]), ("a".into(), vec![1])]);

        let t = dir.path().join("targets.csv");
        fs::write(&t, "patch_id,K,pH\na,1.5,7\nb,2.5,6.5\n").unwrap();
        let targets = load_targets(&t).unwrap();
        assert_eq!(targets.names, vec!["K", "pH"]);
        assert_eq!(targets.rows["b"], vec![2.5, 6.5]);

        assert!(PatchMembership::new(vec![("x".into(), vec![])]).is_err());
    }
}
