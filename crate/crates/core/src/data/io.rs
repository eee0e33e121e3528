//! JSON-lines dataset container: one header object, then one example per line.
//!
//! ```text
//! {"vocab_size":96,"num_classes":3,"split":"train","provenance":{"generator":"planted","params":{..},"seed":0}}
//! {"id":0,"tokens":[4,17,2],"label":1,"group":"majority","shortcut_aligned":true}
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Example, Provenance, Split};
use crate::error::{Error, Result};

const FORMAT: &str = "dataset";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    vocab_size: usize,
    num_classes: usize,
    split: Split,
    provenance: Provenance,
}

pub fn write_dataset<W: Write>(d: &Dataset, mut w: W) -> Result<()> {
    let header = Header {
        vocab_size: d.vocab_size(),
        num_classes: d.num_classes(),
        split: d.split(),
        provenance: d.provenance().clone(),
    };
    let io = |e: std::io::Error| Error::io("<dataset writer>", e);
    serde_json::to_writer(&mut w, &header).map_err(|e| Error::format(FORMAT, 0, e.to_string()))?;
    w.write_all(b"\n").map_err(io)?;
    for (i, ex) in d.examples().iter().enumerate() {
        serde_json::to_writer(&mut w, ex)
            .map_err(|e| Error::format(FORMAT, i + 1, e.to_string()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<Dataset> {
    let mut lines = r.lines().enumerate();
    let header: Header = match lines.next() {
        Some((_, line)) => {
            let line = line.map_err(|e| Error::format(FORMAT, 0, e.to_string()))?;
            serde_json::from_str(&line).map_err(|e| Error::format(FORMAT, 0, e.to_string()))?
        }
        None => return Err(Error::format(FORMAT, 0, "missing header")),
    };
    let mut examples = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::format(FORMAT, i, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: Example =
            serde_json::from_str(&line).map_err(|e| Error::format(FORMAT, i, e.to_string()))?;
        examples.push(ex);
    }
    Dataset::new(
        examples,
        header.vocab_size,
        header.num_classes,
        header.split,
        header.provenance,
    )
    .map_err(|e| Error::format(FORMAT, 0, e.to_string()))
}

pub fn save_dataset(d: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(d, BufWriter::new(file))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(file))
}
