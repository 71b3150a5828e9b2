//! File formats: signal CSV, annotation/event CSV, and the binary windowed
//! dataset cache.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::pipeline::{Dataset, SignalRecord, WindowedExample};
use crate::postprocess::{validate_events, Event};

// ── signal CSV: `# fs=<Hz> id=<string>` header, one float per line ──────

pub fn write_signal_csv(rec: &SignalRecord, path: impl AsRef<Path>) -> Result<()> {
    rec.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# fs={} id={}", rec.fs, rec.record_id)?;
    for v in &rec.samples {
        writeln!(w, "{v}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_signal_csv(path: impl AsRef<Path>) -> Result<SignalRecord> {
    let path = path.as_ref();
    let r = BufReader::new(File::open(path)?);
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{}: empty signal file", path.display())))??;
    let header = header
        .strip_prefix('#')
        .ok_or_else(|| Error::Data(format!("{}: missing `# fs=.. id=..` header", path.display())))?
        .trim();
    let mut fs = None;
    let mut id = None;
    for tok in header.split_whitespace() {
        if let Some(v) = tok.strip_prefix("fs=") {
            fs = Some(v.parse::<f64>().map_err(|_| {
                Error::Data(format!("{}: bad fs value {v:?}", path.display()))
            })?);
        } else if let Some(v) = tok.strip_prefix("id=") {
            id = Some(v.to_string());
        }
    }
    let fs = fs.ok_or_else(|| Error::Data(format!("{}: header lacks fs=", path.display())))?;
    let record_id = id.ok_or_else(|| Error::Data(format!("{}: header lacks id=", path.display())))?;
    let mut samples = Vec::new();
    for (ln, line) in lines.enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        samples.push(t.parse::<f64>().map_err(|_| {
            Error::Data(format!("{}: line {}: bad sample {t:?}", path.display(), ln + 2))
        })?);
    }
    let rec = SignalRecord { samples, fs, labels: None, record_id };
    rec.validate()?;
    Ok(rec)
}

// ── annotation / event CSV: `onset_sample,offset_sample,class_id` ───────

pub fn write_events_csv(events: &[Event], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_events_to(events, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_events_to(events: &[Event], w: &mut impl Write) -> Result<()> {
    for e in events {
        writeln!(w, "{},{},{}", e.onset, e.offset, e.class_id)?;
    }
    Ok(())
}

/// Read an event CSV. `contiguous` additionally requires gap-free coverage
/// (the annotation-file contract); plain event lists may have gaps between
/// windows.
pub fn read_events_csv(path: impl AsRef<Path>, contiguous: bool) -> Result<Vec<Event>> {
    let path = path.as_ref();
    let r = BufReader::new(File::open(path)?);
    let mut events = Vec::new();
    for (ln, line) in r.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let mut parts = t.split(',');
        let mut field = |name: &str| -> Result<u64> {
            parts
                .next()
                .ok_or_else(|| Error::Data(format!("{}: line {}: missing {name}", path.display(), ln + 1)))?
                .trim()
                .parse::<u64>()
                .map_err(|_| Error::Data(format!("{}: line {}: bad {name}", path.display(), ln + 1)))
        };
        let onset = field("onset_sample")? as usize;
        let offset = field("offset_sample")? as usize;
        let class_id = field("class_id")? as u16;
        if offset <= onset {
            return Err(Error::Data(format!(
                "{}: line {}: empty interval [{onset}, {offset})",
                path.display(),
                ln + 1
            )));
        }
        events.push(Event { onset, offset, class_id });
    }
    let mut sorted = true;
    for i in 1..events.len() {
        if events[i].onset < events[i - 1].offset {
            sorted = false;
        }
    }
    if !sorted {
        return Err(Error::Data(format!("{}: events overlap or are unsorted", path.display())));
    }
    if contiguous {
        validate_events(&events)?;
    }
    Ok(events)
}

/// Per-sample labels from a gap-free annotation list.
pub fn labels_from_annotations(events: &[Event], n_samples: usize) -> Result<Vec<u16>> {
    validate_events(events)?;
    let first = events.first().ok_or_else(|| Error::Data("no annotation events".into()))?;
    let last = events.last().expect("non-empty");
    if first.onset != 0 || last.offset != n_samples {
        return Err(Error::Data(format!(
            "annotations cover [{}, {}) but the record has {n_samples} samples",
            first.onset, last.offset
        )));
    }
    let mut labels = vec![0u16; n_samples];
    for e in events {
        for l in &mut labels[e.onset..e.offset] {
            *l = e.class_id;
        }
    }
    Ok(labels)
}

// ── windowed dataset cache ───────────────────────────────────────────
//
// magic "TFDS", version byte, u32 window_len, u32 num_classes, u32 count,
// then per example: u16 record-id length + UTF-8 id, u64 start, f64 samples
// (window_len of them), u16 labels (window_len of them). Little-endian,
// bit-exact round trip.

const DS_MAGIC: [u8; 4] = *b"TFDS";
const DS_VERSION: u8 = 1;

pub fn write_dataset_to(ds: &Dataset, w: &mut impl Write) -> Result<()> {
    w.write_all(&DS_MAGIC)?;
    w.write_all(&[DS_VERSION])?;
    w.write_all(&(ds.window_len as u32).to_le_bytes())?;
    w.write_all(&(ds.num_classes as u32).to_le_bytes())?;
    w.write_all(&(ds.examples.len() as u32).to_le_bytes())?;
    for ex in &ds.examples {
        if ex.x.len() != ds.window_len || ex.labels.len() != ds.window_len {
            return Err(Error::Data(format!(
                "example from {} has {} samples / {} labels, dataset window is {}",
                ex.record_id,
                ex.x.len(),
                ex.labels.len(),
                ds.window_len
            )));
        }
        let id = ex.record_id.as_bytes();
        w.write_all(&(id.len() as u16).to_le_bytes())?;
        w.write_all(id)?;
        w.write_all(&(ex.start as u64).to_le_bytes())?;
        for v in &ex.x {
            w.write_all(&v.to_le_bytes())?;
        }
        for l in &ex.labels {
            w.write_all(&l.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_dataset_from(r: &mut impl Read) -> Result<Dataset> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != DS_MAGIC {
        return Err(Error::Data("not a dataset cache (bad magic)".into()));
    }
    let mut ver = [0u8; 1];
    r.read_exact(&mut ver)?;
    if ver[0] != DS_VERSION {
        return Err(Error::Data(format!("unsupported dataset version {}", ver[0])));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let window_len = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let num_classes = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let count = u32::from_le_bytes(b4) as usize;

    let mut examples = Vec::with_capacity(count);
    let mut b2 = [0u8; 2];
    let mut b8 = [0u8; 8];
    for _ in 0..count {
        r.read_exact(&mut b2)?;
        let id_len = u16::from_le_bytes(b2) as usize;
        let mut id = vec![0u8; id_len];
        r.read_exact(&mut id)?;
        let record_id =
            String::from_utf8(id).map_err(|_| Error::Data("dataset record id is not UTF-8".into()))?;
        r.read_exact(&mut b8)?;
        let start = u64::from_le_bytes(b8) as usize;
        let mut x = vec![0.0f64; window_len];
        for v in x.iter_mut() {
            r.read_exact(&mut b8)?;
            *v = f64::from_le_bytes(b8);
        }
        let mut labels = vec![0u16; window_len];
        for l in labels.iter_mut() {
            r.read_exact(&mut b2)?;
            *l = u16::from_le_bytes(b2);
        }
        if let Some(bad) = labels.iter().find(|&&l| (l as usize) >= num_classes) {
            return Err(Error::Data(format!("dataset label {bad} out of range ({num_classes} classes)")));
        }
        examples.push(WindowedExample { x, labels, record_id, start });
    }
    Ok(Dataset { window_len, num_classes, examples })
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset_to(ds, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut r = BufReader::new(File::open(path)?);
    let ds = read_dataset_from(&mut r)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Data("trailing bytes after dataset records".into()));
    }
    Ok(ds)
}
