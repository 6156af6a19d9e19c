#![no_main]

use flownet::scenario::Scenario;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(sc) = Scenario::parse(text, &[]) {
        // anything accepted must survive a round trip and system assembly
        let again = Scenario::parse(&sc.serialize(), &[]).expect("serialized scenario reparses");
        assert_eq!(sc, again);
        let _ = sc.closed_loop();
    }
});
