#![no_main]

libfuzzer_sys::fuzz_target!(|data: &[u8]| amtgen_fuzz::config(data));
