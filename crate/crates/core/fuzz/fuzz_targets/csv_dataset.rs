#![no_main]

//! Input: the five CSV files in the order exercises, grades, groups, ballots,
//! exams, separated by lines holding only `%%`. Absent trailing parts are
//! missing optional files.

use libfuzzer_sys::fuzz_target;
use peergrade::data::csv_io::{self, CsvSources};

fn split(data: &[u8]) -> Vec<&[u8]> {
    let mut parts = Vec::new();
    let mut rest = data;
    while let Some(i) = rest.windows(4).position(|w| w == b"\n%%\n") {
        parts.push(&rest[..i + 1]);
        rest = &rest[i + 4..];
    }
    parts.push(rest);
    parts
}

fuzz_target!(|data: &[u8]| {
    let parts = split(data);
    let src = CsvSources {
        exercises: parts[0],
        grades: parts.get(1).copied().unwrap_or_default(),
        groups: parts.get(2).copied(),
        ballots: parts.get(3).copied(),
        exams: parts.get(4).copied(),
    };
    let Ok(d) = csv_io::parse_sources(src) else { return };
    let files = csv_io::render(&d);
    let get = |name: &str| files.iter().find(|(n, _)| *n == name).map(|(_, b)| b.as_slice()).unwrap();
    let again = csv_io::parse_sources(CsvSources {
        exercises: get(csv_io::EXERCISES_FILE),
        grades: get(csv_io::GRADES_FILE),
        groups: Some(get(csv_io::GROUPS_FILE)),
        ballots: Some(get(csv_io::BALLOTS_FILE)),
        exams: Some(get(csv_io::EXAMS_FILE)),
    })
    .expect("rendered dataset parses");
    assert_eq!(again, d);
});
