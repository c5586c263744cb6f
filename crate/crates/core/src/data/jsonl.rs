use std::fs;
use std::path::Path;

use super::{Dataset, DatasetHeader, Sample};
use crate::error::{Error, Result};

fn parse_line<T: serde::de::DeserializeOwned>(text: &str, line: usize) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        line,
        column: e.column(),
        message: e.to_string(),
    })
}

/// Parses the JSONL dataset format: a header object on line 1 and one sample per line.
/// Blank lines are skipped.
pub fn parse_jsonl(content: &str) -> Result<Dataset> {
    let mut lines = content.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (idx, first) = lines.next().ok_or(Error::Parse {
        line: 1,
        column: 0,
        message: "missing header line".into(),
    })?;
    let header: DatasetHeader = parse_line(first, idx + 1)?;
    if header.d_t == 0 || header.d_v == 0 || header.d_a == 0 {
        return Err(Error::Field {
            line: idx + 1,
            field: "d_t/d_v/d_a".into(),
            message: "dimensions must be positive".into(),
        });
    }
    if !(header.label_range[0] < header.label_range[1]) {
        return Err(Error::Field {
            line: idx + 1,
            field: "label_range".into(),
            message: format!("{:?} is not an increasing pair", header.label_range),
        });
    }
    let mut samples = Vec::new();
    for (idx, text) in lines {
        let sample: Sample = parse_line(text, idx + 1)?;
        Dataset::validate_sample(&header, &sample, idx + 1)?;
        samples.push(sample);
    }
    Ok(Dataset { header, samples })
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&content)
}

/// Serialises a dataset; floats use the shortest representation that reads back exactly.
pub fn to_jsonl_string(ds: &Dataset) -> Result<String> {
    let mut out = serde_json::to_string(&ds.header)?;
    out.push('\n');
    for s in &ds.samples {
        out.push_str(&serde_json::to_string(s)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_jsonl_string(ds)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Modality;

    const HEADER: &str = r#"{"d_t":2,"d_v":1,"d_a":2,"label_range":[-3.0,3.0]}"#;

    fn sample_line(y: f64) -> String {
        format!(r#"{{"id":"s","y":{y},"text":[0.5,-1.0],"visual":[[1.0],[2.0]],"audio":[[0.0,0.1]]}}"#)
    }

    #[test]
    fn header_only_is_empty_dataset() {
        let ds = parse_jsonl(&format!("{HEADER}\n")).unwrap();
        assert!(ds.is_empty());
        assert_eq!(ds.header.dims(), [2, 1, 2]);
    }

    #[test]
    fn mosi_shaped_header() {
        let ds = parse_jsonl(r#"{"d_t":768,"d_v":20,"d_a":5,"label_range":[-3,3]}"#).unwrap();
        assert_eq!(ds.header.dims(), [768, 20, 5]);
    }

    #[test]
    fn parses_and_round_trips() {
        let text = format!("{HEADER}\n{}\n{}\n", sample_line(0.25), sample_line(-3.0));
        let ds = parse_jsonl(&text).unwrap();
        assert_eq!(ds.len(), 2);
        let again = parse_jsonl(&to_jsonl_string(&ds).unwrap()).unwrap();
        assert_eq!(ds, again);
        assert_eq!(to_jsonl_string(&again).unwrap(), to_jsonl_string(&ds).unwrap());
    }

    #[test]
    fn missing_flags_round_trip() {
        let line = r#"{"id":"m","y":1.0,"text":[0.0,0.0],"visual":[[1.0]],"audio":[[0.0,0.1]],"missing":["text"]}"#;
        let ds = parse_jsonl(&format!("{HEADER}\n{line}\n")).unwrap();
        assert!(!ds.samples[0].is_present(Modality::Text));
        assert!(to_jsonl_string(&ds).unwrap().contains(r#""missing":["text"]"#));
    }

    #[test]
    fn errors_carry_locations() {
        let bad_json = format!("{HEADER}\n{}\n{{\"id\": oops}}\n", sample_line(0.0));
        match parse_jsonl(&bad_json) {
            Err(Error::Parse { line: 3, column, .. }) => assert!(column > 0),
            other => panic!("{other:?}"),
        }
        let wrong_dim = format!(
            "{HEADER}\n{}\n",
            r#"{"id":"s","y":0,"text":[0.5],"visual":[[1.0]],"audio":[[0.0,0.1]]}"#
        );
        assert!(matches!(parse_jsonl(&wrong_dim), Err(Error::Field { line: 2, ref field, .. }) if field == "text"));
        let bad_step = format!(
            "{HEADER}\n{}\n",
            r#"{"id":"s","y":0,"text":[0.5,1],"visual":[[1.0],[1.0,2.0]],"audio":[[0.0,0.1]]}"#
        );
        assert!(matches!(parse_jsonl(&bad_step), Err(Error::Field { line: 2, ref field, .. }) if field == "visual"));
        let empty_seq = format!("{HEADER}\n{}\n", r#"{"id":"s","y":0,"text":[0.5,1],"visual":[],"audio":[[0.0,0.1]]}"#);
        assert!(matches!(parse_jsonl(&empty_seq), Err(Error::Field { .. })));
        let out_of_range = format!("{HEADER}\n{}\n", sample_line(3.5));
        assert!(matches!(parse_jsonl(&out_of_range), Err(Error::LabelOutOfRange { .. })));
        assert!(matches!(parse_jsonl(""), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn arbitrary_floats_round_trip_exactly() {
        use rand::Rng;
        let mut rng = crate::rng::seeded(8);
        let mut text = String::from(HEADER);
        text.push('\n');
        for i in 0..500 {
            let y: f64 = rng.random_range(-3.0..3.0);
            let v: Vec<f64> =
                (0..5).map(|_| rng.random_range(-1.0..1.0) * 10f64.powi(rng.random_range(-12..12))).collect();
            text.push_str(&format!(
                r#"{{"id":"s{i}","y":{y},"text":[{},{}],"visual":[[{}]],"audio":[[{},{}]]}}"#,
                v[0], v[1], v[2], v[3], v[4]
            ));
            text.push('\n');
        }
        let ds = parse_jsonl(&text).unwrap();
        let once = to_jsonl_string(&ds).unwrap();
        let twice = parse_jsonl(&once).unwrap();
        assert_eq!(ds, twice);
        assert_eq!(once, to_jsonl_string(&twice).unwrap());
    }

    #[test]
    fn truncated_lines_are_rejected() {
        let line = sample_line(0.5);
        for cut in 1..line.len() {
            let text = format!("{HEADER}\n{}\n", &line[..cut]);
            assert!(parse_jsonl(&text).is_err(), "accepted truncation at {cut}");
        }
    }
}
