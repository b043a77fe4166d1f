#![no_main]

use boneforge::{parse_rig, write_rig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok((rig, poses)) = parse_rig(text) {
        let (again, again_poses) = parse_rig(&write_rig(&rig, &poses)).expect("written rig parses");
        assert_eq!(again, rig);
        assert_eq!(again_poses, poses);
        let _ = rig.compose_world(&rig.canonical_pose()).expect("canonical pose composes");
    }
});
