use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::text::EmbeddingTable;

/// Loads a text embedding table: a `<vocab_size> <dim>` header, then one
/// `token v1 … v_dim` line per entry. Later duplicates replace earlier ones.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = content.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "missing `<vocab_size> <dim>` header"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let [size, dim] = fields.as_slice() else {
        return Err(Error::parse(path, 1, "header must be `<vocab_size> <dim>`"));
    };
    let size: usize = size
        .parse()
        .map_err(|_| Error::parse(path, 1, format!("bad vocabulary size `{size}`")))?;
    let dim: usize = dim
        .parse()
        .map_err(|_| Error::parse(path, 1, format!("bad dimension `{dim}`")))?;
    if dim == 0 {
        return Err(Error::parse(path, 1, "dimension must be positive"));
    }

    let mut map = HashMap::with_capacity(size);
    let mut entries = 0;
    for (idx, line) in lines {
        let lineno = idx + 1;
        let mut parts = line.split_whitespace();
        let token = parts.next().expect("non-empty line");
        let values = parts
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::parse(path, lineno, format!("bad float `{v}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != dim {
            return Err(Error::parse(
                path,
                lineno,
                format!("`{token}` has {} values, header declares {dim}", values.len()),
            ));
        }
        if map.insert(token.to_string(), values).is_some() {
            log::warn!("{}:{lineno}: duplicate token `{token}`, keeping the later vector", path.display());
        }
        entries += 1;
    }
    if entries != size {
        return Err(Error::parse(
            path,
            1,
            format!("header declares {size} entries, file has {entries}"),
        ));
    }
    EmbeddingTable::from_map(dim, map)
}

pub fn write_embeddings(path: &Path, dim: usize, entries: &[(String, Vec<f64>)]) -> Result<()> {
    let mut out = format!("{} {dim}\n", entries.len());
    for (token, v) in entries {
        out.push_str(token);
        for x in v {
            write!(out, " {x}").expect("string write");
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_declared_table() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.txt");
        std::fs::write(&p, "2 3\ncat 1 2 3\ndog 0.5 -1 0\n").unwrap();
        let t = load_embeddings(&p).unwrap();
        assert_eq!(t.dim(), 3);
        assert_eq!(t.vocab_len(), Some(2));
        assert_eq!(&*t.lookup("dog"), &[0.5, -1.0, 0.0]);
        assert_eq!(&*t.lookup("bird"), t.oov_vector());
    }

    #[test]
    fn short_line_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.txt");
        std::fs::write(&p, "2 3\ncat 1 2 3\ndog 0.5 -1\n").unwrap();
        match load_embeddings(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicates_keep_last() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.txt");
        std::fs::write(&p, "2 1\ncat 1\ncat 2\n").unwrap();
        let t = load_embeddings(&p).unwrap();
        assert_eq!(&*t.lookup("cat"), &[2.0]);
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.txt");
        let entries = vec![("a".to_string(), vec![0.1, -0.25]), ("b'c".to_string(), vec![1e-9, 3.0])];
        write_embeddings(&p, 2, &entries).unwrap();
        let t = load_embeddings(&p).unwrap();
        assert_eq!(&*t.lookup("b'c"), &[1e-9, 3.0]);
    }
}
