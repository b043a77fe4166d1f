#![no_main]

use boneforge::geometry::ply::{parse_ply, write_ply_ascii, write_ply_binary};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(mesh) = parse_ply(data) {
        let bin = parse_ply(&write_ply_binary(&mesh)).expect("written binary PLY parses");
        assert_eq!(bin.vertices, mesh.vertices);
        assert_eq!(bin.triangles, mesh.triangles);
        let ascii = parse_ply(write_ply_ascii(&mesh).as_bytes()).expect("written ASCII PLY parses");
        assert_eq!(ascii.vertices, mesh.vertices);
    }
});
