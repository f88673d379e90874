use inforewrite::sparse::porter_stem;

#[test]
fn matches_reference_vocabulary() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/porter");
    let words = std::fs::read_to_string(format!("{dir}/voc.txt")).unwrap();
    let stems = std::fs::read_to_string(format!("{dir}/output.txt")).unwrap();
    let mut mismatches = Vec::new();
    let mut total = 0;
    for (word, expected) in words.lines().zip(stems.lines()) {
        total += 1;
        let got = porter_stem(word);
        if got != expected {
            mismatches.push(format!("{word}: got {got}, expected {expected}"));
        }
    }
    assert_eq!(total, 23531);
    assert!(mismatches.is_empty(), "{} mismatches:\n{}", mismatches.len(), mismatches.join("\n"));
}
