//! On-disk time-tag formats.
//!
//! Binary layout, little endian throughout:
//!
//! ```text
//! offset 0   8 bytes  magic "ENTTAG01"
//! offset 8   u32      format version (1)
//! offset 12  u32      record count
//! offset 16  records: u16 detector id, u64 time in ps (10 bytes each)
//! ```
//!
//! The detector id is `channel * 2 + arm` with arm 0 for Alice, 1 for Bob.
//! The CSV export has a `detector,time_ps` header and one tag per line.

use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};

use thiserror::Error;

use crate::montecarlo::{DetectorId, TimeTag};

pub const MAGIC: &[u8; 8] = b"ENTTAG01";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;
pub const RECORD_LEN: usize = 10;

#[derive(Debug, Error)]
pub enum TagFileError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad magic, not a tag file")]
    BadMagic,
    #[error("unsupported tag file version {0}")]
    Version(u32),
    #[error("tag file truncated: header announces {expected} records, found {found}")]
    Truncated { expected: u32, found: usize },
    #[error("too many records for one file: {0}")]
    TooMany(usize),
    #[error("malformed CSV at line {line}: {reason}")]
    Csv { line: usize, reason: String },
}

pub fn write_binary<W: Write>(writer: W, tags: &[TimeTag]) -> Result<(), TagFileError> {
    let count = u32::try_from(tags.len()).map_err(|_| TagFileError::TooMany(tags.len()))?;
    let mut w = BufWriter::new(writer);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&count.to_le_bytes())?;
    for t in tags {
        w.write_all(&t.detector.code().to_le_bytes())?;
        w.write_all(&t.time_ps.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_binary<R: Read>(reader: R) -> Result<Vec<TimeTag>, TagFileError> {
    let mut r = BufReader::new(reader);
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => TagFileError::BadMagic,
        _ => e.into(),
    })?;
    if &header[..8] != MAGIC {
        return Err(TagFileError::BadMagic);
    }
    let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(TagFileError::Version(version));
    }
    let count = u32::from_le_bytes(header[12..16].try_into().unwrap());
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    let found = body.len() / RECORD_LEN;
    if found < count as usize || body.len() % RECORD_LEN != 0 {
        return Err(TagFileError::Truncated { expected: count, found });
    }
    Ok(body
        .chunks_exact(RECORD_LEN)
        .take(count as usize)
        .map(|rec| TimeTag {
            detector: DetectorId::from_code(u16::from_le_bytes([rec[0], rec[1]])),
            time_ps: u64::from_le_bytes(rec[2..10].try_into().unwrap()),
        })
        .collect())
}

pub fn write_csv<W: Write>(writer: W, tags: &[TimeTag]) -> Result<(), TagFileError> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "detector,time_ps")?;
    for t in tags {
        writeln!(w, "{},{}", t.detector.code(), t.time_ps)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(reader: R) -> Result<Vec<TimeTag>, TagFileError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if i == 0 || line.is_empty() {
            continue;
        }
        let err = |reason: &str| TagFileError::Csv { line: i + 1, reason: reason.to_string() };
        let (d, t) = line.split_once(',').ok_or_else(|| err("expected two columns"))?;
        let code: u16 = d.trim().parse().map_err(|_| err("bad detector id"))?;
        let time_ps: u64 = t.trim().parse().map_err(|_| err("bad time"))?;
        out.push(TimeTag { detector: DetectorId::from_code(code), time_ps });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Vec<TimeTag> {
        vec![
            TimeTag { time_ps: 1, detector: DetectorId::alice(39) },
            TimeTag { time_ps: 340, detector: DetectorId::bob(55) },
            TimeTag { time_ps: u64::MAX, detector: DetectorId::bob(48) },
        ]
    }

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        write_binary(&mut buf, &sample()).unwrap();
        assert_eq!(buf.len(), HEADER_LEN + 3 * RECORD_LEN);
        assert_eq!(&buf[..8], b"ENTTAG01");
        assert_eq!(&buf[8..12], &1u32.to_le_bytes());
        assert_eq!(&buf[12..16], &3u32.to_le_bytes());
        // First record: detector 78 (alice 39), time 1.
        assert_eq!(&buf[16..18], &78u16.to_le_bytes());
        assert_eq!(&buf[18..26], &1u64.to_le_bytes());
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(read_binary(&b"hello"[..]), Err(TagFileError::BadMagic)));
        assert!(matches!(read_binary(&b"NOTATAG0\x01\0\0\0\0\0\0\0"[..]), Err(TagFileError::BadMagic)));
        let mut buf = Vec::new();
        write_binary(&mut buf, &sample()).unwrap();
        buf.truncate(buf.len() - 4);
        assert!(matches!(read_binary(&buf[..]), Err(TagFileError::Truncated { .. })));
        let mut v2 = Vec::new();
        write_binary(&mut v2, &[]).unwrap();
        v2[8] = 2;
        assert!(matches!(read_binary(&v2[..]), Err(TagFileError::Version(2))));
    }

    #[test]
    fn csv_export() {
        let mut buf = Vec::new();
        write_csv(&mut buf, &sample()).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("detector,time_ps\n78,1\n111,340\n"));
        assert_eq!(read_csv(&buf[..]).unwrap(), sample());
        assert!(matches!(read_csv(&b"detector,time_ps\n1;2\n"[..]), Err(TagFileError::Csv { line: 2, .. })));
    }

    proptest! {
        #[test]
        fn binary_roundtrip(raw in prop::collection::vec((0u16..2000, any::<u64>()), 0..50)) {
            let tags: Vec<TimeTag> = raw.iter()
                .map(|&(d, t)| TimeTag { detector: DetectorId::from_code(d), time_ps: t })
                .collect();
            let mut buf = Vec::new();
            write_binary(&mut buf, &tags).unwrap();
            prop_assert_eq!(read_binary(&buf[..]).unwrap(), tags);
        }
    }
}
