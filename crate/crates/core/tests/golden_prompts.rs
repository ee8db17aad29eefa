use greenrec::agents::{detect_error, default_seed_prompt, render_evaluate_prompt, Agents};
use greenrec::domain::{CandidateKind, CandidateSet, Catalog, Item, Prompt, PromptId, RankedList, Session};
use greenrec::llm::{MockBackend, MockScript};

fn world() -> (Catalog, Session, CandidateSet) {
    let catalog = Catalog::new(vec![
        Item::new("h1", "Hemp Tote Bag", "Bags").with_attribute("material", "hemp").sustainable(true),
        Item::new("h2", "Leather Wallet", "Bags"),
        Item::new("c1", "Recycled Canvas Backpack", "Bags")
            .with_attribute("material", "recycled canvas")
            .with_attribute("color", "green")
            .sustainable(true),
        Item::new("c2", "Nylon Duffel", "Bags"),
        Item::new("c3", "Steel Water Bottle", "Outdoor").with_attribute("volume", "750ml").sustainable(true),
    ])
    .unwrap();
    let session = Session::new("s-golden", vec!["h2".into(), "h1".into()], "c1");
    let candidates = CandidateSet::new(
        "s-golden",
        vec!["c2".into(), "c1".into(), "c3".into()],
        CandidateKind::Filtered,
    )
    .unwrap();
    (catalog, session, candidates)
}

#[test]
fn evaluate_prompt_matches_golden() {
    let (catalog, session, candidates) = world();
    let prompt = Prompt::seed(PromptId(1), default_seed_prompt());
    let rendered = render_evaluate_prompt(&prompt, &session, &candidates, &catalog).unwrap();
    assert_eq!(rendered, include_str!("golden/evaluate_prompt.txt"));
}

#[test]
fn reflection_request_matches_golden() {
    let (catalog, session, candidates) = world();
    let mock = MockBackend::new(MockScript::default());
    let agents = Agents::new(&mock, &catalog);
    let prompt = Prompt::seed(PromptId(1), "Rank {candidates} given {session}.");
    let ranked = RankedList {
        session_id: "s-golden".into(),
        order: vec!["c2".into(), "c3".into(), "c1".into()],
        repaired: false,
    };
    let error = detect_error(&ranked, "c1", 1, prompt.id).unwrap();
    let req = agents.reflection_request(&prompt, &error, &session, &candidates).unwrap();
    assert_eq!(req.tag, "infer_reason");
    assert_eq!(req.user, include_str!("golden/infer_reason_request.txt"));
}
