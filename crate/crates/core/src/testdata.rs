//! Small fixed datasets shared by the unit and integration test suites.

use crate::dataset::Dataset;

/// Ten web-log style records over twelve terms. Term ids follow first
/// appearance: itunes=0 flu=1 madonna=2 ikea=3 ruby=4 viagra=5 audi_a4=6
/// sony_tv=7 digital_camera=8 panic_disorder=9 playboy=10 iphone_sdk=11.
pub fn example_web_log() -> Dataset {
    let text = "\
itunes flu madonna ikea ruby
madonna flu viagra ruby audi_a4 sony_tv
itunes madonna audi_a4 ikea sony_tv
itunes flu viagra
itunes flu madonna audi_a4 sony_tv
madonna digital_camera panic_disorder playboy
iphone_sdk madonna ikea ruby
iphone_sdk digital_camera madonna playboy
iphone_sdk digital_camera panic_disorder
iphone_sdk digital_camera madonna ikea ruby
";
    Dataset::parse(text).unwrap().0
}

/// Five records over {a,b,c} whose greedy chunking meets the record-count
/// bound only after a term is demoted to the term chunk.
pub fn example_bound_repair() -> Dataset {
    Dataset::parse("a\na\nb c\nb c\na b c\n").unwrap().0
}
