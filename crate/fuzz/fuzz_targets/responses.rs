#![no_main]
use cotrain::training::NeuralResponseSet;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(set) = NeuralResponseSet::decode(data) {
        assert_eq!(set.data().len(), set.neurons * set.images);
        assert!(set.data().iter().all(|v| v.is_finite() && *v >= 0.0));
    }
});
