#![allow(dead_code)]

use dpf_core::network::{build_direction, parse_case, DirectionSpec, DirectionVector, PowerNetwork};

pub fn case_path(name: &str) -> String {
    format!("{}/../../cases/{name}", env!("CARGO_MANIFEST_DIR"))
}

pub fn load(name: &str) -> PowerNetwork {
    let text = std::fs::read_to_string(case_path(name)).unwrap();
    parse_case(&text).unwrap()
}

pub fn uniform(net: &PowerNetwork) -> DirectionVector {
    build_direction(net, &DirectionSpec::Uniform).unwrap()
}

pub fn explicit(net: &PowerNetwork, file: &str) -> DirectionVector {
    let text = std::fs::read_to_string(case_path(file)).unwrap();
    build_direction(net, &DirectionSpec::from_json(&text).unwrap()).unwrap()
}

pub const TWO_BUS: &str = r#"{
    "baseMVA": 100,
    "bus": [
        {"id": 1, "type": "REF"},
        {"id": 2, "type": "PQ", "pd": 50, "qd": 20}
    ],
    "gen": [{"bus": 1}],
    "branch": [{"from": 1, "to": 2, "x": 0.1}]
}"#;
