//! Ontology JSON:
//! `{"low_levels": [...], "high_levels": [...], "edges": [[high, low], ...]}`.
//! A dense `"omega"` matrix (m rows of n 0/1 entries) is accepted instead of
//! `"edges"` on load.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SpatialOntology;
use crate::error::{Error, Result};
use crate::jsonio::{read_json, write_json};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OntologyFile {
    low_levels: Vec<String>,
    high_levels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    edges: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    omega: Option<Vec<Vec<f64>>>,
}

pub fn save(onto: &SpatialOntology, path: &Path) -> Result<()> {
    let file = OntologyFile {
        low_levels: onto.low_levels().to_vec(),
        high_levels: onto.high_levels().to_vec(),
        edges: Some(onto.edges().into_iter().map(|(h, l)| [h, l]).collect()),
        omega: None,
    };
    write_json(path, &file)
}

pub fn load(path: &Path) -> Result<SpatialOntology> {
    let file: OntologyFile = read_json(path)?;
    let context = |e: Error| Error::Ontology(format!("{}: {e}", path.display()));
    match (file.edges, file.omega) {
        (Some(edges), None) => {
            let pairs: Vec<(usize, usize)> = edges.into_iter().map(|[h, l]| (h, l)).collect();
            SpatialOntology::with_edges(file.low_levels, file.high_levels, &pairs).map_err(context)
        }
        (None, Some(omega)) => SpatialOntology::from_matrix(file.low_levels, file.high_levels, &omega).map_err(context),
        _ => Err(Error::Ontology(format!(
            "{}: exactly one of \"edges\" or \"omega\" is required",
            path.display()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, text: &str) -> std::path::PathBuf {
        let p = dir.path().join("o.json");
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let o = SpatialOntology::with_edges(
            vec!["sink".into(), "bed".into()],
            vec!["kitchen".into(), "bedroom".into()],
            &[(0, 0), (1, 1)],
        )
        .unwrap();
        let p = dir.path().join("o.json");
        save(&o, &p).unwrap();
        assert_eq!(load(&p).unwrap(), o);
    }

    #[test]
    fn duplicate_concept_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, r#"{"low_levels":["a","a"],"high_levels":["h"],"edges":[]}"#);
        let err = load(&p).unwrap_err().to_string();
        assert!(err.contains("duplicate") && err.contains("\"a\""), "{err}");
    }

    #[test]
    fn omega_row_count_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            r#"{"low_levels":["a","b"],"high_levels":["h","g"],"omega":[[1,0]]}"#,
        );
        let err = load(&p).unwrap_err().to_string();
        assert!(err.contains("rows"), "{err}");
    }

    #[test]
    fn malformed_json_has_location() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "{\n  \"low_levels\": [\"a\",\n  oops\n}");
        match load(&p).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let p = write(&dir, r#"{"low_levels":[],"high_levels":[],"edges":[],"extra":1}"#);
        assert!(matches!(load(&p), Err(Error::Parse { .. })));
        let p = write(&dir, r#"{"low_levels":["a"],"high_levels":["h"],"edges":[[1,0]]}"#);
        assert!(load(&p).is_err());
    }
}
