#![no_main]
use cotrain::saliency::{binarize_saliency, SaliencyDensity};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(d) = SaliencyDensity::decode(data, false, "fuzz") {
        let m = binarize_saliency(&d).expect("normalized density binarizes");
        assert!(m.mass >= 0.7 - 1e-9);
    }
});
