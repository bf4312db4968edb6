use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::placement::HostId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UploadOutcome {
    Stored,
    Discarded,
}

/// Local record of a put:
///
/// ```text
/// file=<name>
/// size=<bytes>
/// n=<n>
/// m=<m>
/// graph_fp=<hex16>
/// chunk <index> <stored|discarded> <host-id-hex16>     (n + m lines)
/// ```
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileManifest {
    pub file: String,
    pub file_size: u64,
    pub n: usize,
    pub m: usize,
    pub graph_fp: u64,
    pub chunks: Vec<(UploadOutcome, HostId)>,
}

impl FileManifest {
    pub fn stored(&self) -> usize {
        self.chunks.iter().filter(|(o, _)| *o == UploadOutcome::Stored).count()
    }

    pub fn discarded(&self) -> Vec<usize> {
        (0..self.chunks.len()).filter(|&i| self.chunks[i].0 == UploadOutcome::Discarded).collect()
    }

    pub fn path_in(dir: &Path, file: &str) -> PathBuf {
        dir.join(format!("{file}.manifest"))
    }

    pub fn write_to(&self, dir: &Path) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = FileManifest::path_in(dir, &self.file);
        std::fs::write(&path, self.to_string())?;
        Ok(path)
    }
}

impl fmt::Display for FileManifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "file={}", self.file)?;
        writeln!(f, "size={}", self.file_size)?;
        writeln!(f, "n={}", self.n)?;
        writeln!(f, "m={}", self.m)?;
        writeln!(f, "graph_fp={:016x}", self.graph_fp)?;
        for (i, (outcome, host)) in self.chunks.iter().enumerate() {
            let word = match outcome {
                UploadOutcome::Stored => "stored",
                UploadOutcome::Discarded => "discarded",
            };
            writeln!(f, "chunk {i} {word} {host}")?;
        }
        Ok(())
    }
}

impl FromStr for FileManifest {
    type Err = String;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut lines = text.lines();
        let mut field = |key: &str| -> Result<String, String> {
            let line = lines.next().ok_or(format!("missing {key}"))?;
            line.strip_prefix(key)
                .and_then(|l| l.strip_prefix('='))
                .map(String::from)
                .ok_or(format!("expected {key}=, got {line:?}"))
        };
        let file = field("file")?;
        let num = |v: String| v.parse::<u64>().map_err(|_| format!("bad number {v:?}"));
        let file_size = num(field("size")?)?;
        let n = num(field("n")?)? as usize;
        let m = num(field("m")?)? as usize;
        let fp = field("graph_fp")?;
        let graph_fp = u64::from_str_radix(&fp, 16).map_err(|_| format!("bad graph_fp {fp:?}"))?;
        let mut chunks = Vec::new();
        for (i, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
            let bad = || format!("bad chunk line {line:?}");
            let f: Vec<&str> = line.split_whitespace().collect();
            let ["chunk", index, outcome, host] = f.as_slice() else {
                return Err(bad());
            };
            if index.parse::<usize>().ok() != Some(i) {
                return Err(bad());
            }
            let outcome = match *outcome {
                "stored" => UploadOutcome::Stored,
                "discarded" => UploadOutcome::Discarded,
                _ => return Err(bad()),
            };
            chunks.push((outcome, host.parse().map_err(|_| bad())?));
        }
        if chunks.len() != n + m {
            return Err(format!("{} chunk lines, expected {}", chunks.len(), n + m));
        }
        Ok(FileManifest { file, file_size, n, m, graph_fp, chunks })
    }
}
