use proptest::prelude::*;

use stepguard::codec::{emit, parse, parse_bytes, Bit, StructuredResult};
use stepguard::eval::{average_precision, compute_metrics};
use stepguard::executor::{parse_command, CommandIntent, Verb};
use stepguard::privacy::{redact, restore, strip_markup, CollisionPolicy, PlaceholderMemory, RuleDetector};
use stepguard::screen::{parse_serialized_elements, serialize_screen, BBox, ElementType, Screen, UiElement};

fn proper_bbox(limit: u32) -> impl Strategy<Value = BBox> {
    (0..limit - 1, 0..limit - 1)
        .prop_flat_map(move |(x0, y0)| (Just(x0), Just(y0), x0 + 1..=limit, y0 + 1..=limit))
        .prop_map(|(x0, y0, x1, y1)| BBox::new(x0, y0, x1, y1))
}

fn structured() -> impl Strategy<Value = StructuredResult> {
    prop_oneof![
        any::<bool>().prop_map(|b| StructuredResult::Feasibility(Bit::from_bool(b))),
        any::<bool>().prop_map(|b| StructuredResult::Completeness(Bit::from_bool(b))),
        proper_bbox(u32::MAX).prop_map(StructuredResult::Locate),
    ]
}

fn etype() -> impl Strategy<Value = ElementType> {
    prop_oneof![Just(ElementType::Button), Just(ElementType::Input), Just(ElementType::Icon)]
}

fn screen() -> impl Strategy<Value = Screen> {
    prop::collection::vec((any::<String>(), proper_bbox(2000), etype()), 0..12).prop_map(|els| {
        let elements =
            els.into_iter().enumerate().map(|(i, (text, bbox, t))| UiElement::new(i, text, bbox, t)).collect();
        Screen::new("s", 2000, 2000, elements)
    })
}

fn caption() -> impl Strategy<Value = String> {
    "[A-Za-z0-9'&][A-Za-z0-9'& ]{0,20}[A-Za-z0-9]|[A-Za-z0-9]"
}

fn intent() -> impl Strategy<Value = CommandIntent> {
    (0..4usize, caption(), "[a-z0-9_{}]{1,12}").prop_map(|(v, c, w)| match Verb::ALL[v] {
        Verb::Select => CommandIntent::select(c),
        Verb::ClickRightOf => CommandIntent::click_right_of(c),
        Verb::Enter => CommandIntent::enter(w, c),
        Verb::ScrollUntil => CommandIntent::scroll_until(c),
    })
}

fn scored_labels() -> impl Strategy<Value = Vec<(f64, bool)>> {
    prop::collection::vec(((0u32..=20).prop_map(|k| k as f64 / 20.0), any::<bool>()), 1..40)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn codec_round_trip(r in structured()) {
        prop_assert_eq!(parse(&emit(&r)), Ok(r));
    }

    #[test]
    fn codec_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let _ = parse_bytes(&bytes);
    }

    #[test]
    fn codec_tolerates_surrounding_whitespace(r in structured(), pre in "[ \t\n]{0,4}", post in "[ \t\n]{0,4}") {
        prop_assert_eq!(parse(&format!("{pre}{}{post}", emit(&r))), Ok(r));
    }

    #[test]
    fn screen_serialization_parses_back(s in screen()) {
        let text = serialize_screen(&s).unwrap();
        let back = parse_serialized_elements(&text).unwrap();
        prop_assert_eq!(back, s.elements);
    }

    #[test]
    fn command_render_parse_round_trip(i in intent()) {
        prop_assert_eq!(parse_command(&i.render()).unwrap(), i);
    }

    #[test]
    fn ap_invariant_under_monotone_rescaling(pairs in scored_labels()) {
        let squashed: Vec<(f64, bool)> = pairs.iter().map(|&(s, l)| (s * s * 0.5 + 0.1, l)).collect();
        prop_assert_eq!(average_precision(&pairs), average_precision(&squashed));
    }

    #[test]
    fn ap_bounds_and_perfect_ranking(pairs in scored_labels()) {
        if let Some(ap) = average_precision(&pairs) {
            prop_assert!((0.0..=1.0).contains(&ap));
            let mut ranked: Vec<(f64, bool)> = pairs.iter().map(|&(_, l)| (if l { 0.9 } else { 0.1 }, l)).collect();
            ranked.reverse();
            prop_assert_eq!(average_precision(&ranked), Some(1.0));
        }
        let m = compute_metrics(&pairs).unwrap();
        prop_assert_eq!(m.confusion.tp + m.confusion.fp + m.confusion.tn + m.confusion.fn_, pairs.len());
    }

    #[test]
    fn redaction_is_reversible(
        filler in prop::collection::vec("[a-z]{1,8}", 0..6),
        user in "[a-z][a-z0-9_]{3,10}",
        pw in "[A-Za-z0-9!#]{3,12}[0-9]",
        markup_value in "[A-Za-z0-9 ]{0,10}[A-Za-z0-9]",
    ) {
        let instruction = format!(
            "{} username {user} then password {pw} and {{{{member_id:{markup_value}}}}} {}",
            filler.join(" "),
            filler.first().map_or("", String::as_str),
        );
        let mut memory = PlaceholderMemory::in_memory();
        let red = redact(&instruction, &RuleDetector, &mut memory, CollisionPolicy::Suffix).unwrap();
        prop_assert!(!red.text.contains(&pw));
        let spaced_user = format!(" {user} ");
        prop_assert!(!red.text.contains(&spaced_user));
        let back = restore(&red.text, &memory);
        prop_assert!(back.unknown.is_empty());
        prop_assert_eq!(back.text, strip_markup(&instruction));
    }
}
