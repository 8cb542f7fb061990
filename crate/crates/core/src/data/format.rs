//! On-disk container for datasets and buffer snapshots.
//!
//! Binary layout, all integers and floats little-endian:
//!
//! ```text
//! magic         8 bytes   "WSCLDATA" (dataset) or "WSCLBUFR" (buffer snapshot)
//! n             u64       number of rows
//! feature_dims  u64
//! num_classes   u64
//! n rows of:
//!   class_id    u64
//!   task_id     u64       buffer snapshots only
//!   features    f64 x feature_dims
//! ```
//!
//! The CSV variant starts with the header line `n,feature_dims,num_classes`
//! followed by one `class_id,[task_id,]f_0,...` line per row; whether the
//! task column is present is implied by the row width.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 8] = b"WSCLDATA";
pub const BUFFER_MAGIC: &[u8; 8] = b"WSCLBUFR";

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub class_id: usize,
    pub task_id: Option<usize>,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub feature_dims: usize,
    pub num_classes: usize,
    pub rows: Vec<Record>,
}

impl Container {
    fn with_tasks(&self) -> Result<bool> {
        let tasks = self.rows.iter().filter(|r| r.task_id.is_some()).count();
        if tasks != 0 && tasks != self.rows.len() {
            return Err(Error::Usage("task column present on only some rows".into()));
        }
        Ok(tasks > 0)
    }

    fn validate(&self) -> Result<()> {
        for (i, r) in self.rows.iter().enumerate() {
            if r.features.len() != self.feature_dims {
                return Err(Error::Shape(format!(
                    "row {i} has {} features, header says {}",
                    r.features.len(),
                    self.feature_dims
                )));
            }
            if r.class_id >= self.num_classes {
                return Err(Error::Parse(format!(
                    "row {i} has class {} but only {} classes",
                    r.class_id, self.num_classes
                )));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let with_tasks = self.with_tasks()?;
        let mut out = Vec::new();
        out.extend_from_slice(if with_tasks { BUFFER_MAGIC } else { DATASET_MAGIC });
        for v in [self.rows.len(), self.feature_dims, self.num_classes] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for r in &self.rows {
            out.extend_from_slice(&(r.class_id as u64).to_le_bytes());
            if let Some(t) = r.task_id {
                out.extend_from_slice(&(t as u64).to_le_bytes());
            }
            for f in &r.features {
                out.extend_from_slice(&f.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(8)?;
        let with_tasks = if magic == BUFFER_MAGIC {
            true
        } else if magic == DATASET_MAGIC {
            false
        } else {
            return Err(Error::Parse("unknown container magic".into()));
        };
        let n = cur.u64()? as usize;
        let feature_dims = cur.u64()? as usize;
        let num_classes = cur.u64()? as usize;
        let row_bytes = 8 * (1 + with_tasks as usize + feature_dims);
        if bytes.len() != 32 + n * row_bytes {
            return Err(Error::Parse(format!(
                "container holds {} bytes, header implies {}",
                bytes.len(),
                32 + n * row_bytes
            )));
        }
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let class_id = cur.u64()? as usize;
            let task_id = if with_tasks { Some(cur.u64()? as usize) } else { None };
            let features = (0..feature_dims).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
            rows.push(Record {
                class_id,
                task_id,
                features,
            });
        }
        let c = Container {
            feature_dims,
            num_classes,
            rows,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn to_csv(&self) -> Result<String> {
        self.validate()?;
        self.with_tasks()?;
        let mut s = format!("{},{},{}\n", self.rows.len(), self.feature_dims, self.num_classes);
        for r in &self.rows {
            s.push_str(&r.class_id.to_string());
            if let Some(t) = r.task_id {
                s.push(',');
                s.push_str(&t.to_string());
            }
            for f in &r.features {
                s.push(',');
                s.push_str(&format!("{f:?}"));
            }
            s.push('\n');
        }
        Ok(s)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty csv".into()))?;
        let head: Vec<usize> = header
            .split(',')
            .map(|v| {
                v.trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad header field {v:?}")))
            })
            .collect::<Result<_>>()?;
        let [n, feature_dims, num_classes] = head[..] else {
            return Err(Error::Parse("header must be n,feature_dims,num_classes".into()));
        };
        let mut rows = Vec::with_capacity(n);
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let with_tasks = match fields.len() {
                w if w == feature_dims + 1 => false,
                w if w == feature_dims + 2 => true,
                w => {
                    return Err(Error::Parse(format!("line {} has {w} fields", i + 2)));
                }
            };
            let int = |s: &str| s.parse::<usize>().map_err(|_| Error::Parse(format!("bad id {s:?}")));
            let class_id = int(fields[0])?;
            let task_id = if with_tasks { Some(int(fields[1])?) } else { None };
            let features = fields[1 + with_tasks as usize..]
                .iter()
                .map(|s| s.parse::<f64>().map_err(|_| Error::Parse(format!("bad value {s:?}"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(Record {
                class_id,
                task_id,
                features,
            });
        }
        if rows.len() != n {
            return Err(Error::Parse(format!("header announces {n} rows, found {}", rows.len())));
        }
        let c = Container {
            feature_dims,
            num_classes,
            rows,
        };
        c.validate()?;
        c.with_tasks()?;
        Ok(c)
    }

    /// Writes CSV when the extension is `.csv`, binary otherwise.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = if is_csv(path) {
            self.to_csv()?.into_bytes()
        } else {
            self.to_bytes()?
        };
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if is_csv(path) {
            let text = String::from_utf8(bytes).map_err(|_| Error::Parse("csv is not utf-8".into()))?;
            Self::from_csv(&text)
        } else {
            Self::from_bytes(&bytes)
        }
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Parse("container truncated".into()))?;
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
