#![no_main]

use boneforge::geometry::obj::{parse_obj, write_obj};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(mesh) = parse_obj(data) {
        let again = parse_obj(write_obj(&mesh).as_bytes()).expect("written OBJ parses");
        assert_eq!(again.vertices, mesh.vertices);
        assert_eq!(again.triangles, mesh.triangles);
    }
});
