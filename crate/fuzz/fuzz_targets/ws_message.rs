#![no_main]

use boneforge_service::protocol::{decode_vertices, parse_client, ServerMessage};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = decode_vertices(data);
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Err(reply) = parse_client(text) {
        assert!(matches!(reply, ServerMessage::Error { .. }));
    }
    let _ = ServerMessage::from_json(text);
});
