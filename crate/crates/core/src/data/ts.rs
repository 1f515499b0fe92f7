//! `.ts` reader/writer and the plain CSV fallback.
//!
//! Grammar accepted by [`parse_ts`]:
//!
//! ```text
//! file    := (blank | comment | header)* "@data" NL (blank | record)*
//! comment := "#" any* NL
//! header  := "@problemName" SP name
//!          | "@timeStamps" SP "false"
//!          | "@missing" SP bool
//!          | "@univariate" SP bool
//!          | "@dimensions" SP int
//!          | "@equalLength" SP "true"
//!          | "@seriesLength" SP int
//!          | "@classLabel" SP "true" (SP label)+
//! record  := channel (":" channel)* ":" label
//! channel := value ("," value)*
//! ```
//!
//! Tags are case-insensitive. `?` values are rejected, labels map to indices
//! in `@classLabel` order, and the first record fixes channel count and
//! length.

use std::collections::HashMap;

use super::{DataError, SplitTag, TimeSeriesDataset};

fn header_err(line: usize, reason: impl Into<String>) -> DataError {
    DataError::MalformedHeader { line, reason: reason.into() }
}

fn parse_bool(line: usize, tag: &str, v: Option<&str>) -> Result<bool, DataError> {
    match v.map(str::to_ascii_lowercase).as_deref() {
        Some("true") => Ok(true),
        Some("false") => Ok(false),
        _ => Err(header_err(line, format!("{tag} expects true/false"))),
    }
}

fn parse_int(line: usize, tag: &str, v: Option<&str>) -> Result<usize, DataError> {
    v.and_then(|s| s.parse().ok())
        .filter(|&n: &usize| n > 0)
        .ok_or_else(|| header_err(line, format!("{tag} expects a positive integer")))
}

fn parse_value(line: usize, tok: &str) -> Result<f64, DataError> {
    let tok = tok.trim();
    if tok == "?" {
        return Err(DataError::MissingValue { line });
    }
    match tok.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(DataError::BadValue { line, token: tok.to_string() }),
    }
}

#[derive(Default)]
struct Header {
    name: Option<String>,
    univariate: Option<bool>,
    dimensions: Option<usize>,
    series_length: Option<usize>,
    labels: Option<Vec<String>>,
}

pub fn parse_ts(bytes: &[u8]) -> Result<TimeSeriesDataset, DataError> {
    let text = std::str::from_utf8(bytes).map_err(|_| DataError::NotUtf8)?;
    let mut header = Header::default();
    let mut in_data = false;
    let mut label_index: HashMap<String, usize> = HashMap::new();
    let mut shape: Option<(usize, usize)> = None;
    let mut values = Vec::new();
    let mut labels = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !in_data {
            if !line.starts_with('@') {
                return Err(header_err(lineno, "record before @data"));
            }
            let mut parts = line.split_whitespace();
            let tag = parts.next().unwrap_or_default().to_ascii_lowercase();
            let arg = parts.next();
            match tag.as_str() {
                "@problemname" => {
                    header.name = Some(arg.ok_or_else(|| header_err(lineno, "@problemName needs a value"))?.to_string())
                }
                "@timestamps" => {
                    if parse_bool(lineno, "@timeStamps", arg)? {
                        return Err(header_err(lineno, "time-stamped series are not supported"));
                    }
                }
                "@missing" => {
                    parse_bool(lineno, "@missing", arg)?;
                }
                "@univariate" => header.univariate = Some(parse_bool(lineno, "@univariate", arg)?),
                "@dimensions" => header.dimensions = Some(parse_int(lineno, "@dimensions", arg)?),
                "@equallength" => {
                    if !parse_bool(lineno, "@equalLength", arg)? {
                        return Err(header_err(lineno, "variable-length series are not supported"));
                    }
                }
                "@serieslength" => header.series_length = Some(parse_int(lineno, "@seriesLength", arg)?),
                "@classlabel" => {
                    if !parse_bool(lineno, "@classLabel", arg)? {
                        return Err(header_err(lineno, "unlabelled data is not supported"));
                    }
                    let names: Vec<String> = parts.map(str::to_string).collect();
                    if names.is_empty() {
                        return Err(header_err(lineno, "@classLabel true lists no labels"));
                    }
                    for (idx, n) in names.iter().enumerate() {
                        if label_index.insert(n.clone(), idx).is_some() {
                            return Err(header_err(lineno, format!("duplicate class label '{n}'")));
                        }
                    }
                    header.labels = Some(names);
                }
                "@data" => {
                    if header.labels.is_none() {
                        return Err(header_err(lineno, "@data before @classLabel"));
                    }
                    if header.univariate == Some(true) && header.dimensions.is_some_and(|d| d != 1) {
                        return Err(header_err(lineno, "@univariate true conflicts with @dimensions"));
                    }
                    in_data = true;
                }
                other => return Err(header_err(lineno, format!("unknown tag '{other}'"))),
            }
            continue;
        }

        let fields: Vec<&str> = line.split(':').collect();
        if fields.len() < 2 {
            return Err(DataError::RaggedRecord { line: lineno, reason: "record has no class label".into() });
        }
        let label = fields[fields.len() - 1].trim();
        let channels = &fields[..fields.len() - 1];
        let mut record = Vec::new();
        let mut len = None;
        for ch in channels {
            let before = record.len();
            for tok in ch.split(',') {
                record.push(parse_value(lineno, tok)?);
            }
            let this = record.len() - before;
            match len {
                None => len = Some(this),
                Some(l) if l != this => {
                    return Err(DataError::RaggedRecord {
                        line: lineno,
                        reason: format!("channel lengths {l} and {this} differ"),
                    })
                }
                _ => {}
            }
        }
        let rec_shape = (channels.len(), len.unwrap_or(0));
        match shape {
            None => {
                if header.univariate == Some(true) && rec_shape.0 != 1 {
                    return Err(DataError::RaggedRecord {
                        line: lineno,
                        reason: format!("univariate file but record has {} channels", rec_shape.0),
                    });
                }
                if let Some(d) = header.dimensions {
                    if d != rec_shape.0 {
                        return Err(DataError::RaggedRecord {
                            line: lineno,
                            reason: format!("@dimensions {d} but record has {} channels", rec_shape.0),
                        });
                    }
                }
                if let Some(l) = header.series_length {
                    if l != rec_shape.1 {
                        return Err(DataError::RaggedRecord {
                            line: lineno,
                            reason: format!("@seriesLength {l} but record has length {}", rec_shape.1),
                        });
                    }
                }
                shape = Some(rec_shape);
            }
            Some(s) if s != rec_shape => {
                return Err(DataError::RaggedRecord {
                    line: lineno,
                    reason: format!(
                        "expected {} channel(s) of length {}, found {} of length {}",
                        s.0, s.1, rec_shape.0, rec_shape.1
                    ),
                })
            }
            _ => {}
        }
        let idx = *label_index
            .get(label)
            .ok_or_else(|| DataError::UnknownLabel { line: lineno, label: label.to_string() })?;
        values.extend_from_slice(&record);
        labels.push(idx);
    }

    if !in_data {
        return Err(header_err(text.lines().count().max(1), "missing @data section"));
    }
    let (channels, length) = shape.ok_or(DataError::NoRecords)?;
    Ok(TimeSeriesDataset {
        name: header.name.unwrap_or_else(|| "unnamed".to_string()),
        split: SplitTag::Train,
        channels,
        length,
        values,
        labels,
        label_names: header.labels.unwrap_or_default(),
    })
}

/// Canonical `.ts` text. Values use the shortest representation that parses
/// back to the same `f64`, so `parse_ts(serialize_ts(d))` reproduces `d`.
pub fn serialize_ts(ds: &TimeSeriesDataset) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = writeln!(out, "@problemName {}", ds.name);
    out.push_str("@timeStamps false\n@missing false\n");
    let _ = writeln!(out, "@univariate {}", ds.channels == 1);
    if ds.channels > 1 {
        let _ = writeln!(out, "@dimensions {}", ds.channels);
    }
    out.push_str("@equalLength true\n");
    let _ = writeln!(out, "@seriesLength {}", ds.length);
    let _ = writeln!(out, "@classLabel true {}", ds.label_names.join(" "));
    out.push_str("@data\n");
    for (i, &label) in ds.labels.iter().enumerate() {
        for ch in ds.series(i).chunks(ds.length) {
            for (j, v) in ch.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{v}");
            }
            out.push(':');
        }
        out.push_str(&ds.label_names[label]);
        out.push('\n');
    }
    out
}

/// Univariate `label,v1,v2,...` rows (tab-separated rows are accepted too).
/// Labels are ordered numerically when they all parse as numbers, otherwise
/// lexically.
pub fn parse_csv(bytes: &[u8], name: &str) -> Result<TimeSeriesDataset, DataError> {
    let text = std::str::from_utf8(bytes).map_err(|_| DataError::NotUtf8)?;
    let mut rows: Vec<(usize, String, Vec<f64>)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let sep = if line.contains('\t') { '\t' } else { ',' };
        let mut toks = line.split(sep);
        let label = toks.next().unwrap_or_default().trim().to_string();
        let vals = toks.map(|t| parse_value(i + 1, t)).collect::<Result<Vec<_>, _>>()?;
        if let Some((_, _, first)) = rows.first() {
            if first.len() != vals.len() {
                return Err(DataError::RaggedRecord {
                    line: i + 1,
                    reason: format!("expected {} values, found {}", first.len(), vals.len()),
                });
            }
        } else if vals.is_empty() {
            return Err(DataError::RaggedRecord { line: i + 1, reason: "row has no values".into() });
        }
        rows.push((i + 1, label, vals));
    }
    if rows.is_empty() {
        return Err(DataError::NoRecords);
    }
    let mut names: Vec<String> = rows.iter().map(|r| r.1.clone()).collect();
    names.sort();
    names.dedup();
    let numeric: Option<Vec<f64>> = names.iter().map(|n| n.parse::<f64>().ok()).collect();
    if let Some(keys) = numeric {
        let mut paired: Vec<(f64, String)> = keys.into_iter().zip(names).collect();
        paired.sort_by(|a, b| a.0.total_cmp(&b.0));
        names = paired.into_iter().map(|p| p.1).collect();
    }
    let index: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let length = rows[0].2.len();
    let mut values = Vec::with_capacity(rows.len() * length);
    let mut labels = Vec::with_capacity(rows.len());
    for (_, label, vals) in &rows {
        labels.push(index[label.as_str()]);
        values.extend_from_slice(vals);
    }
    Ok(TimeSeriesDataset {
        name: name.to_string(),
        split: SplitTag::Train,
        channels: 1,
        length,
        values,
        labels,
        label_names: names,
    })
}
