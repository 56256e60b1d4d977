#![no_main]

libfuzzer_sys::fuzz_target!(|data: &[u8]| mpif_fuzz::keys(data));
