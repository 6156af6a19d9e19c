#![no_main]

use flownet::scenario::Scenario;
use libfuzzer_sys::fuzz_target;

const BASE: &str = "\
[graph]
vertices = 3
edge = 1 2
edge = 2 3
edge = 3 1

[controller]
constraint = adaptive

[initial]
x = 1 0 2
";

// Input lines are `--set` arguments against a fixed valid scenario.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let overrides: Vec<String> = text.lines().map(str::to_string).collect();
    if let Ok(sc) = Scenario::parse(BASE, &overrides) {
        assert_eq!(sc.overrides.len(), overrides.len());
        let _ = sc.closed_loop();
    }
});
