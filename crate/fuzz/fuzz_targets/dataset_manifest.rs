#![no_main]
use cotrain::data::Manifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        // Parsing the canonical text of a parsed manifest gives it back.
        if let Ok(m) = Manifest::parse(text) {
            assert_eq!(Manifest::parse(&m.to_text()).expect("canonical text parses"), m);
        }
    }
});
