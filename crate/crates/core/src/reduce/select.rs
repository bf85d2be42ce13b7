use crate::node::MeshChannel;

use super::ReduceError;

/// Restricts `mesh` to the named fields, keeping the mesh's own field order.
/// Geometry is shared untouched.
pub fn select_fields<S: AsRef<str>>(keep: &[S], mesh: &MeshChannel) -> Result<MeshChannel, ReduceError> {
    if let Some(missing) = keep.iter().find(|k| mesh.field(k.as_ref()).is_none()) {
        return Err(ReduceError::MissingField(missing.as_ref().to_string()));
    }
    Ok(MeshChannel {
        coordset: mesh.coordset.clone(),
        topology: mesh.topology.clone(),
        fields: mesh
            .fields
            .iter()
            .filter(|f| keep.iter().any(|k| k.as_ref() == f.name))
            .cloned()
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minisim::{generate_step, SimConfig};
    use crate::node::{serialize_node, DataNode};

    fn mesh() -> MeshChannel {
        generate_step(&SimConfig { n: 6, ..SimConfig::default() }, 0, 0.4).unwrap()
    }

    fn geometry_bytes(m: &MeshChannel) -> Vec<u8> {
        let node = m.to_node();
        let mut out = serialize_node(node.child("coordset").unwrap());
        out.extend(serialize_node(node.child("topology").unwrap()));
        out
    }

    #[test]
    fn keep_all_is_identity() {
        let m = mesh();
        let names: Vec<&str> = m.fields.iter().map(|f| f.name.as_str()).collect();
        let out = select_fields(&names, &m).unwrap();
        assert_eq!(out.to_node(), m.to_node());
    }

    #[test]
    fn keep_one_of_three_shrinks_field_bytes() {
        // three fields of equal length so the factor is exact up to headers
        let m = mesh();
        let e = m.field("energy").unwrap().clone();
        let m = MeshChannel {
            fields: vec![
                e.clone(),
                crate::node::Field::new("b", e.association, e.values.to_vec()),
                crate::node::Field::new("c", e.association, e.values.to_vec()),
            ],
            ..m
        };
        let field_bytes = |m: &MeshChannel| serialize_node(m.to_node().child("fields").unwrap()).len();
        let before = field_bytes(&m);
        let after = field_bytes(&select_fields(&["energy"], &m).unwrap());
        let payload = 8 * e.values.len();
        // headers: object count, names, association strings, array counts
        assert!(before >= 3 * payload && before < 3 * payload + 256);
        assert!(after >= payload && after < payload + 128);
        let ratio = before as f64 / after as f64;
        assert!((ratio - 3.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn missing_field() {
        assert_eq!(
            select_fields(&["missing"], &mesh()).unwrap_err(),
            ReduceError::MissingField("missing".into())
        );
    }

    #[test]
    fn geometry_untouched() {
        let m = mesh();
        let out = select_fields(&["pressure"], &m).unwrap();
        assert_eq!(geometry_bytes(&m), geometry_bytes(&out));
        assert!(matches!(out.to_node().get_path("fields/pressure"), Some(DataNode::Object(_))));
    }
}
