#![no_main]
use cotrain::image::{decode_raster, encode_raster, ValueSpace};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_raster(data, ValueSpace::Raw) {
        assert_eq!(img.data().len(), img.height() * img.width());
        let _ = encode_raster(&img);
    }
});
