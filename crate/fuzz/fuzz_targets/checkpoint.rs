#![no_main]

use libfuzzer_sys::fuzz_target;
use sigtrust::checkpoint::decode;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(ckpt) = decode(text) else {
        return;
    };
    if let Ok(params) = ckpt.to_params() {
        assert!(params.is_finite());
    }
});
