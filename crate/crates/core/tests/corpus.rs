mod labels;

fn check((docs, bad): labels::Tally) {
    assert!(docs >= 20, "only {docs} documents");
    assert!(bad.is_empty(), "{}", bad.join("\n"));
}

#[test]
fn listing_pages_match_labels() {
    check(labels::listings());
}

#[test]
fn spec_descriptions_match_labels() {
    check(labels::specs());
}

#[test]
fn forum_cascade_matches_labels() {
    check(labels::threads());
}

#[test]
fn incident_articles_match_labels() {
    check(labels::articles());
}
