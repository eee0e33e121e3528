//! JSON-lines group assignment file: a provenance header, then one
//! `{"id":..,"flag":"inferred_minority"|"inferred_majority"}` record per example.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AssignmentSource, Flag, GroupAssignment};
use crate::error::{Error, Result};

const FORMAT: &str = "assignment";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: u64,
    flag: Flag,
}

pub fn write_assignment<W: Write>(a: &GroupAssignment, mut w: W) -> Result<()> {
    let io = |e: std::io::Error| Error::io("<assignment writer>", e);
    serde_json::to_writer(&mut w, a.source()).map_err(|e| Error::format(FORMAT, 0, e.to_string()))?;
    w.write_all(b"\n").map_err(io)?;
    for (i, (&id, &flag)) in a.flags().iter().enumerate() {
        serde_json::to_writer(&mut w, &Record { id, flag })
            .map_err(|e| Error::format(FORMAT, i + 1, e.to_string()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_assignment<R: BufRead>(r: R) -> Result<GroupAssignment> {
    let mut lines = r.lines().enumerate();
    let source: AssignmentSource = match lines.next() {
        Some((_, line)) => {
            let line = line.map_err(|e| Error::format(FORMAT, 0, e.to_string()))?;
            serde_json::from_str(&line).map_err(|e| Error::format(FORMAT, 0, e.to_string()))?
        }
        None => return Err(Error::format(FORMAT, 0, "missing header")),
    };
    let mut flags = BTreeMap::new();
    for (i, line) in lines {
        let line = line.map_err(|e| Error::format(FORMAT, i, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record =
            serde_json::from_str(&line).map_err(|e| Error::format(FORMAT, i, e.to_string()))?;
        if flags.insert(rec.id, rec.flag).is_some() {
            return Err(Error::format(FORMAT, i, format!("duplicate id {}", rec.id)));
        }
    }
    Ok(GroupAssignment::new(flags, source))
}

pub fn save_assignment(a: &GroupAssignment, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_assignment(a, BufWriter::new(file))
}

pub fn load_assignment(path: &Path) -> Result<GroupAssignment> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_assignment(BufReader::new(file))
}
