#![no_main]

use flownet::scenario::QpInstance;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(inst) = QpInstance::parse(text) {
        let again = QpInstance::parse(&inst.serialize()).expect("serialized instance reparses");
        assert_eq!(inst, again);
    }
});
