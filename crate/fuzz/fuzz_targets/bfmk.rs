#![no_main]

use boneforge::mask::decode_bfmk_raw;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((w, h, values)) = decode_bfmk_raw(data) {
        assert_eq!(values.len(), w as usize * h as usize);
        assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
    }
});
