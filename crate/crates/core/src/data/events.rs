use std::path::Path;

use super::HfoEvent;
use crate::error::{Error, Result};

/// Reads an event CSV (`subject,channel,start_ms,end_ms,detector`) and
/// returns the events sorted by subject, channel and start time.
pub fn load_events(path: &Path) -> Result<Vec<HfoEvent>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut events = read_events(file, path)?;
    events.sort_by(|a, b| a.sort_key_cmp(b));
    Ok(events)
}

pub fn read_events<R: std::io::Read>(reader: R, origin: &Path) -> Result<Vec<HfoEvent>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::csv(origin, e))?.clone();
    let expected = ["subject", "channel", "start_ms", "end_ms", "detector"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Parse {
            path: origin.to_path_buf(),
            message: format!("expected header {}, found {:?}", expected.join(","), headers),
        });
    }
    let mut out = Vec::new();
    for (line, row) in rdr.deserialize::<HfoEvent>().enumerate() {
        let ev = row.map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            message: format!("row {}: {e}", line + 2),
        })?;
        ev.validate()?;
        out.push(ev);
    }
    Ok(out)
}

pub fn write_events<W: std::io::Write>(writer: W, events: &[HfoEvent]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for ev in events {
        w.serialize(ev).map_err(|e| Error::csv("<events>", e))?;
    }
    w.flush().map_err(|e| Error::io("<events>", e))
}
