#![no_main]

use eikonal::mesh::{load_mesh, MeshFormat};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    for format in [MeshFormat::Off, MeshFormat::Obj] {
        if let Ok(mesh) = load_mesh(data, format) {
            for v in 0..mesh.num_vertices() {
                assert!(mesh.one_ring(v).iter().all(|&q| q < mesh.num_vertices()));
            }
        }
    }
});
