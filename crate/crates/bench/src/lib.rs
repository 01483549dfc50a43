//! Benchmark fixtures: the shipped tables, loaded once per benchmark group.

use tabsight_core::{parse_table, TableState};

pub const TABLES: [&str; 3] = ["planted.json", "console_sales.json", "insurance_premiums.json"];

pub fn load(name: &str) -> TableState {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/").to_string() + name;
    parse_table(&std::fs::read(&path).unwrap_or_else(|e| panic!("{path}: {e}"))).expect("shipped table parses")
}
