use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::{DatasetSpec, Interaction, StudentSequence};
use crate::error::{Error, Result};

/// Reads a dataset file of 5-line student blocks.
pub fn ingest(path: &Path, spec: &DatasetSpec) -> Result<Vec<StudentSequence>> {
    let text = fs::read_to_string(path)?;
    log::debug!("ingesting {} for dataset {}", path.display(), spec.name);
    parse_sequences(&text, path)
}

/// Parses the block format:
///
/// ```text
/// student_id,length
/// q1,q2,...            question ids
/// k1,k2_k3,...         KC sets, '_' joins several KCs of one question
/// r1,r2,...            responses, 0 or 1
/// t1,t2,...            timestamps in ms
/// ```
///
/// Blocks are separated by blank lines. `path` is only used in error messages.
pub fn parse_sequences(text: &str, path: &Path) -> Result<Vec<StudentSequence>> {
    let err = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let mut out = Vec::new();
    while let Some((header_no, header)) = lines.next() {
        if header.trim().is_empty() {
            continue;
        }
        let (id, len) = header
            .rsplit_once(',')
            .ok_or_else(|| err(header_no, "expected \"student_id,length\"".into()))?;
        let id = id.trim();
        if id.is_empty() {
            return Err(err(header_no, "empty student id".into()));
        }
        let len: usize = len.trim().parse().map_err(|_| err(header_no, format!("bad sequence length {len:?}")))?;
        let mut fields: Vec<(usize, Vec<&str>)> = Vec::with_capacity(4);
        for name in ["questions", "knowledge components", "responses", "timestamps"] {
            let (no, line) = lines
                .next()
                .ok_or_else(|| err(header_no, format!("block for {id} ends before its {name} line")))?;
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            if parts.len() != len {
                return Err(err(no, format!("{name}: {} fields but the header says {len}", parts.len())));
            }
            fields.push((no, parts));
        }
        let mut interactions = Vec::with_capacity(len);
        for j in 0..len {
            let (qn, ref q) = fields[0];
            let (kn, ref k) = fields[1];
            let (rn, ref r) = fields[2];
            let (tn, ref t) = fields[3];
            let question_id: u32 = q[j].parse().map_err(|_| err(qn, format!("bad question id {:?}", q[j])))?;
            let kc_ids = k[j]
                .split('_')
                .map(|c| c.parse::<u32>().map_err(|_| err(kn, format!("bad KC id {c:?}"))))
                .collect::<Result<Vec<_>>>()?;
            let response = match r[j] {
                "0" => false,
                "1" => true,
                other => return Err(err(rn, format!("response {other:?} is not 0 or 1"))),
            };
            let timestamp: u64 = t[j].parse().map_err(|_| err(tn, format!("bad timestamp {:?}", t[j])))?;
            if let Some(prev) = interactions.last().map(|i: &Interaction| i.timestamp) {
                if timestamp < prev {
                    return Err(err(tn, format!("timestamps decrease at position {j}")));
                }
            }
            interactions.push(Interaction::new(question_id, kc_ids, response, timestamp));
        }
        out.push(StudentSequence { student_id: id.to_string(), interactions });
    }
    Ok(out)
}

/// Writes sequences in the block format read by [`parse_sequences`].
pub fn write_sequences<W: Write>(mut w: W, sequences: &[StudentSequence]) -> Result<()> {
    let mut buf = String::new();
    for (i, s) in sequences.iter().enumerate() {
        if s.student_id.contains([',', '\n', '\r']) || s.student_id.trim().is_empty() {
            return Err(Error::Data(format!("student id {:?} cannot be written", s.student_id)));
        }
        if s.interactions.is_empty() {
            return Err(Error::Data(format!("student {} has no interactions", s.student_id)));
        }
        if i > 0 {
            buf.push('\n');
        }
        let _ = writeln!(buf, "{},{}", s.student_id, s.len());
        let join = |f: &dyn Fn(&Interaction) -> String| s.interactions.iter().map(f).collect::<Vec<_>>().join(",");
        let _ = writeln!(buf, "{}", join(&|x| x.question_id.to_string()));
        let _ = writeln!(
            buf,
            "{}",
            join(&|x| x.kc_ids.iter().map(u32::to_string).collect::<Vec<_>>().join("_"))
        );
        let _ = writeln!(buf, "{}", join(&|x| if x.response { "1".into() } else { "0".into() }));
        let _ = writeln!(buf, "{}", join(&|x| x.timestamp.to_string()));
        w.write_all(buf.as_bytes())?;
        buf.clear();
    }
    Ok(())
}

pub fn write_sequences_to_path(path: &Path, sequences: &[StudentSequence]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let file = std::io::BufWriter::new(fs::File::create(path)?);
    write_sequences(file, sequences)
}
