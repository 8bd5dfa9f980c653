#![no_main]

use libfuzzer_sys::fuzz_target;
use repnet::checkpoint::{decode, encode};

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = decode(data) {
        assert_eq!(encode(&ckpt), data);
    }
});
