use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{compare_ids, AreaPolygon, ArealGraph};
use crate::error::{Error, Result};

/// Sidecar summary written next to an edge list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    #[serde(rename = "K")]
    pub k: usize,
    pub edge_count: usize,
    pub components: usize,
    pub min_degree: usize,
    pub max_degree: usize,
    pub islands: Vec<String>,
    pub unit_ids: Vec<String>,
}

/// Reads polygon features from a GeoJSON FeatureCollection. `id_key` names
/// the feature property holding the area id (strings and numbers accepted).
pub fn read_geojson_polygons<R: Read>(reader: R, id_key: &str) -> Result<Vec<AreaPolygon>> {
    let doc: Value = serde_json::from_reader(reader)?;
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Geometry("expected a FeatureCollection with `features`".into()))?;
    let mut out = Vec::with_capacity(features.len());
    for (n, feature) in features.iter().enumerate() {
        let id = match feature.get("properties").and_then(|p| p.get(id_key)) {
            Some(Value::String(s)) => s.trim().to_string(),
            Some(Value::Number(x)) => x.to_string(),
            _ => {
                return Err(Error::Geometry(format!(
                    "feature #{n} lacks property `{id_key}`"
                )))
            }
        };
        let geometry = feature
            .get("geometry")
            .ok_or_else(|| Error::Geometry(format!("area `{id}` has no geometry")))?;
        let kind = geometry.get("type").and_then(Value::as_str).unwrap_or("");
        let coords = geometry
            .get("coordinates")
            .ok_or_else(|| Error::Geometry(format!("area `{id}` has no coordinates")))?;
        let rings = match kind {
            "Polygon" => parse_polygon(coords, &id)?,
            "MultiPolygon" => {
                let parts = coords
                    .as_array()
                    .ok_or_else(|| Error::Geometry(format!("area `{id}`: bad MultiPolygon")))?;
                let mut rings = Vec::new();
                for part in parts {
                    rings.extend(parse_polygon(part, &id)?);
                }
                rings
            }
            other => {
                return Err(Error::Geometry(format!(
                    "area `{id}`: unsupported geometry type `{other}`"
                )))
            }
        };
        out.push(AreaPolygon::new(id, rings));
    }
    Ok(out)
}

fn parse_polygon(value: &Value, id: &str) -> Result<Vec<Vec<[f64; 2]>>> {
    let bad = || Error::Geometry(format!("area `{id}`: malformed polygon coordinates"));
    let rings = value.as_array().ok_or_else(bad)?;
    let mut out = Vec::with_capacity(rings.len());
    for ring in rings {
        let pts = ring.as_array().ok_or_else(bad)?;
        let mut parsed = Vec::with_capacity(pts.len());
        for p in pts {
            let xy = p.as_array().ok_or_else(bad)?;
            let x = xy.first().and_then(Value::as_f64).ok_or_else(bad)?;
            let y = xy.get(1).and_then(Value::as_f64).ok_or_else(bad)?;
            parsed.push([x, y]);
        }
        out.push(parsed);
    }
    Ok(out)
}

/// Writes `from_id,to_id`, each undirected edge once with from_id < to_id.
pub fn write_edge_csv<W: Write>(graph: &ArealGraph, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["from_id", "to_id"])?;
    let ids = graph.unit_ids();
    for &(a, b) in graph.edges() {
        let (from, to) = if compare_ids(&ids[a], &ids[b]).is_lt() {
            (&ids[a], &ids[b])
        } else {
            (&ids[b], &ids[a])
        };
        w.write_record([from, to])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an edge list. Unit ids come from `unit_ids` when given (so islands
/// survive), otherwise from the endpoints present in the file.
pub fn read_edge_csv<R: Read>(reader: R, unit_ids: Option<&[String]>) -> Result<ArealGraph> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Parse(format!("edge list lacks column `{name}`")))
    };
    let (fc, tc) = (col("from_id")?, col("to_id")?);
    let mut pairs = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let from = row.get(fc).unwrap_or("").trim().to_string();
        let to = row.get(tc).unwrap_or("").trim().to_string();
        pairs.push((from, to));
    }
    let ids: Vec<String> = match unit_ids {
        Some(ids) => ids.to_vec(),
        None => {
            let mut ids: Vec<String> =
                pairs.iter().flat_map(|(a, b)| [a.clone(), b.clone()]).collect();
            ids.sort_by(|a, b| compare_ids(a, b));
            ids.dedup();
            ids
        }
    };
    ArealGraph::from_id_pairs(&ids, &pairs)
}

pub fn read_graph_summary<R: Read>(reader: R) -> Result<GraphSummary> {
    Ok(serde_json::from_reader(reader)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_contiguity, ContiguityKind, ContiguityRule};

    const TWO_SQUARES: &str = r#"{
      "type": "FeatureCollection",
      "features": [
        {"type": "Feature", "properties": {"area_numbe": "2"},
         "geometry": {"type": "Polygon", "coordinates": [[[1,0],[2,0],[2,1],[1,1],[1,0]]]}},
        {"type": "Feature", "properties": {"area_numbe": 1},
         "geometry": {"type": "MultiPolygon", "coordinates": [[[[0,0],[1,0],[1,1],[0,1],[0,0]]]]}},
        {"type": "Feature", "properties": {"area_numbe": "3"},
         "geometry": {"type": "Polygon", "coordinates": [[[5,5],[6,5],[6,6],[5,6],[5,5]]]}}
      ]
    }"#;

    #[test]
    fn geojson_to_graph_and_back() {
        let polys = read_geojson_polygons(TWO_SQUARES.as_bytes(), "area_numbe").unwrap();
        assert_eq!(polys.len(), 3);
        let rule = ContiguityRule { kind: ContiguityKind::Rook, snap_tolerance: 1e-9 };
        let g = build_contiguity(&polys, rule).unwrap();
        assert_eq!(g.unit_ids(), &["1", "2", "3"]);
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.islands(), vec![2]);

        let mut buf = Vec::new();
        write_edge_csv(&g, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "from_id,to_id\n1,2\n");
        let back = read_edge_csv(buf.as_slice(), Some(g.unit_ids())).unwrap();
        assert_eq!(back, g);
        let summary = g.summary();
        let json = serde_json::to_string(&summary).unwrap();
        assert_eq!(read_graph_summary(json.as_bytes()).unwrap(), summary);
    }

    #[test]
    fn missing_id_property() {
        let err = read_geojson_polygons(TWO_SQUARES.as_bytes(), "nope").unwrap_err();
        assert!(err.to_string().contains("nope"));
    }
}
