#![no_main]
use cotrain::model::ModelCheckpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // Anything that decodes must survive a re-encode unchanged.
    if let Ok(ck) = ModelCheckpoint::decode(data) {
        let again = ModelCheckpoint::decode(&ck.encode()).expect("re-encoded checkpoint decodes");
        assert_eq!(again.params.digest(), ck.params.digest());
    }
});
