#![no_main]

use std::path::Path;

use cctune::vivace::{VivaceConfig, VivaceOverrides};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(o) = cctune::json::from_str::<VivaceOverrides>(text, Path::new("fuzz.json")) {
            let _ = VivaceConfig::default().with_overrides(&o);
        }
        if let Ok(c) = cctune::json::from_str::<VivaceConfig>(text, Path::new("fuzz.json")) {
            let _ = c.validate();
        }
    }
});
