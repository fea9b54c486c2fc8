use std::path::Path;

use gnnpcg::mesh::{load_obj, TriangleMesh};

fn disk() -> TriangleMesh {
    TriangleMesh::load_obj_file(&Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/disk.obj")).unwrap()
}

#[test]
fn disk_fixture_boundary_is_its_rim() {
    let mesh = disk();
    assert_eq!(mesh.n_vertices(), 129);
    let rim: Vec<usize> = (0..mesh.n_vertices())
        .filter(|&v| {
            let [x, y] = mesh.vertices()[v];
            ((x * x + y * y).sqrt() - 1.0).abs() < 1e-12
        })
        .collect();
    assert_eq!(rim.len(), 48);
    assert_eq!(mesh.boundary_vertices(), rim);
    assert_eq!(mesh.boundary_loops().len(), 1);
}

#[test]
fn disk_fixture_round_trips() {
    let mesh = disk();
    let again = load_obj(&mesh.to_obj()).unwrap();
    assert_eq!(again.vertices(), mesh.vertices());
    assert_eq!(again.triangles(), mesh.triangles());
}

#[test]
fn config_fixtures_parse() {
    for name in ["heat.json", "poisson.json", "wave.json"] {
        let text = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["schema_version"], 1, "{name}");
        let ds: gnnpcg::fem::DatasetConfig = serde_json::from_value(v["dataset"].clone()).unwrap();
        ds.validate().unwrap();
        let _: gnnpcg::gnn::GnnHyper = serde_json::from_value(v["model"].clone()).unwrap();
    }
}
