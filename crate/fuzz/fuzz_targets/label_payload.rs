#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| svdrank_fuzz::label_payload(data));
