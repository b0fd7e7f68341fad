//! Bundled instances and reference objects.

use crate::instance::{load_matrix, CostMatrix};

pub const EXAMPLE3_TEXT: &str = include_str!("../fixtures/example3.txt");
pub const EXAMPLE4_TEXT: &str = include_str!("../fixtures/example4.txt");

/// Starting tour of the 20-vertex instance.
pub const EXAMPLE4_TOUR: &str = "[11 17 12 10 6 18 13 3 1 7 4 8 16 14 19 15 20 9 2 5]";
/// Perfect matching drawn from that tour.
pub const EXAMPLE4_MATCHING: &str = "(1 3)(2 9)(4 7)(5 11)(6 10)(8 16)(12 17)(13 18)(14 19)(15 20)";

/// Matrix of a bundled instance by name.
pub fn fixture(name: &str) -> Option<CostMatrix> {
    let text = match name {
        "example3" => EXAMPLE3_TEXT,
        "example4" => EXAMPLE4_TEXT,
        _ => return None,
    };
    Some(load_matrix(text).expect("bundled fixture parses"))
}
