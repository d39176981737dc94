//! Parsed-screen data model and its canonical text serialization.
//!
//! A [`Screen`] is an ordered set of typed UI elements. Guards and the
//! LLM-facing prompts consume it through [`serialize_screen`], which renders
//! a dictionary-style text keyed by element index:
//!
//! ```text
//! {0: {text: "Add to Cart", location: [10,20,110,50], type: button}, 1: {...}}
//! ```
//!
//! Text values are JSON-escaped string literals. The empty screen renders as
//! `{}`. Typed input contents are deliberately not part of the canonical
//! form, so text typed by the executor never reaches a remote prompt through
//! a screen description.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementType {
    Button,
    Input,
    Icon,
}

impl ElementType {
    pub fn as_str(self) -> &'static str {
        match self {
            ElementType::Button => "button",
            ElementType::Input => "input",
            ElementType::Icon => "icon",
        }
    }

    fn from_keyword(s: &str) -> Option<Self> {
        match s {
            "button" => Some(ElementType::Button),
            "input" => Some(ElementType::Input),
            "icon" => Some(ElementType::Icon),
            _ => None,
        }
    }
}

impl fmt::Display for ElementType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Axis-aligned box in absolute integer pixels, `[x_min, y_min, x_max, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 4]", into = "[u32; 4]")]
pub struct BBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl From<[u32; 4]> for BBox {
    fn from(v: [u32; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

impl BBox {
    pub const fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Self {
        BBox { x_min, y_min, x_max, y_max }
    }

    pub fn is_proper(&self) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max
    }

    pub fn area(&self) -> u64 {
        if !self.is_proper() {
            return 0;
        }
        u64::from(self.x_max - self.x_min) * u64::from(self.y_max - self.y_min)
    }

    /// Twice the horizontal center, kept integral.
    pub fn center_x2(&self) -> i64 {
        i64::from(self.x_min) + i64::from(self.x_max)
    }

    /// Length of the shared vertical interval, zero when disjoint.
    pub fn vertical_overlap(&self, other: &BBox) -> u32 {
        let lo = self.y_min.max(other.y_min);
        let hi = self.y_max.min(other.y_max);
        hi.saturating_sub(lo)
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let ix = self.x_max.min(other.x_max).saturating_sub(self.x_min.max(other.x_min));
        let iy = self.y_max.min(other.y_max).saturating_sub(self.y_min.max(other.y_min));
        let inter = u64::from(ix) * u64::from(iy);
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UiElement {
    pub index: usize,
    #[serde(default)]
    pub text: String,
    pub bbox: BBox,
    pub etype: ElementType,
}

impl UiElement {
    pub fn new(index: usize, text: impl Into<String>, bbox: BBox, etype: ElementType) -> Self {
        UiElement { index, text: text.into(), bbox, etype }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Screen {
    pub screen_id: String,
    pub width: u32,
    pub height: u32,
    pub elements: Vec<UiElement>,
    #[serde(default)]
    pub typed_values: BTreeMap<usize, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScreenError {
    #[error("screen {screen}: non-positive dimensions {width}x{height}")]
    BadDimensions { screen: String, width: u32, height: u32 },
    #[error("screen {screen}: element {index} has a degenerate bbox {bbox:?}")]
    DegenerateBBox { screen: String, index: usize, bbox: BBox },
    #[error("screen {screen}: element {index} bbox {bbox:?} lies outside {width}x{height}")]
    OutOfBounds { screen: String, index: usize, bbox: BBox, width: u32, height: u32 },
    #[error("screen {screen}: element indices are not unique and contiguous from 0 (found {found:?})")]
    BadIndices { screen: String, found: Vec<usize> },
    #[error("screen {screen}: typed value references element {index}, which is not an input")]
    TypedValueTarget { screen: String, index: usize },
    #[error("caption {caption:?} is ambiguous: matches elements {indices:?}")]
    AmbiguousCaption { caption: String, indices: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed screen text at byte {offset}: {reason}")]
pub struct ScreenParseError {
    pub offset: usize,
    pub reason: String,
}

impl Screen {
    pub fn new(screen_id: impl Into<String>, width: u32, height: u32, elements: Vec<UiElement>) -> Self {
        Screen { screen_id: screen_id.into(), width, height, elements, typed_values: BTreeMap::new() }
    }

    pub fn element(&self, index: usize) -> Option<&UiElement> {
        self.elements.iter().find(|e| e.index == index)
    }

    pub fn typed_value(&self, index: usize) -> Option<&str> {
        self.typed_values.get(&index).map(String::as_str)
    }

    pub fn validate(&self) -> Result<(), ScreenError> {
        if self.width == 0 || self.height == 0 {
            return Err(ScreenError::BadDimensions {
                screen: self.screen_id.clone(),
                width: self.width,
                height: self.height,
            });
        }
        for e in &self.elements {
            if !e.bbox.is_proper() {
                return Err(ScreenError::DegenerateBBox {
                    screen: self.screen_id.clone(),
                    index: e.index,
                    bbox: e.bbox,
                });
            }
            if e.bbox.x_max > self.width || e.bbox.y_max > self.height {
                return Err(ScreenError::OutOfBounds {
                    screen: self.screen_id.clone(),
                    index: e.index,
                    bbox: e.bbox,
                    width: self.width,
                    height: self.height,
                });
            }
        }
        let mut indices: Vec<usize> = self.elements.iter().map(|e| e.index).collect();
        indices.sort_unstable();
        if indices.iter().enumerate().any(|(i, &idx)| i != idx) {
            return Err(ScreenError::BadIndices { screen: self.screen_id.clone(), found: indices });
        }
        for &index in self.typed_values.keys() {
            match self.element(index) {
                Some(e) if e.etype == ElementType::Input => {}
                _ => return Err(ScreenError::TypedValueTarget { screen: self.screen_id.clone(), index }),
            }
        }
        Ok(())
    }

    pub fn sorted_elements(&self) -> Vec<&UiElement> {
        let mut v: Vec<&UiElement> = self.elements.iter().collect();
        v.sort_by_key(|e| e.index);
        v
    }
}

/// Trim, collapse internal whitespace runs to one space, lowercase.
pub fn normalize_caption(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Exact-after-normalization caption lookup.
pub fn find_by_caption<'a>(screen: &'a Screen, caption: &str) -> Result<Option<&'a UiElement>, ScreenError> {
    let wanted = normalize_caption(caption);
    if wanted.is_empty() {
        return Ok(None);
    }
    let mut hits: Vec<&UiElement> = screen.elements.iter().filter(|e| normalize_caption(&e.text) == wanted).collect();
    match hits.len() {
        0 => Ok(None),
        1 => Ok(hits.pop()),
        _ => {
            let mut indices: Vec<usize> = hits.iter().map(|e| e.index).collect();
            indices.sort_unstable();
            Err(ScreenError::AmbiguousCaption { caption: caption.to_string(), indices })
        }
    }
}

/// Canonical dictionary-style rendering, sorted by index.
pub fn serialize_screen(screen: &Screen) -> Result<String, ScreenError> {
    screen.validate()?;
    Ok(serialize_elements(&screen.sorted_elements()))
}

fn serialize_elements(elements: &[&UiElement]) -> String {
    let mut out = String::from("{");
    for (i, e) in elements.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let text = serde_json::to_string(&e.text).expect("string serialization is infallible");
        let b = e.bbox;
        out.push_str(&format!(
            "{}: {{text: {}, location: [{},{},{},{}], type: {}}}",
            e.index, text, b.x_min, b.y_min, b.x_max, b.y_max, e.etype
        ));
    }
    out.push('}');
    out
}

/// Inverse of [`serialize_screen`] for the element list.
pub fn parse_serialized_elements(text: &str) -> Result<Vec<UiElement>, ScreenParseError> {
    let mut p = TextCursor { src: text, pos: 0 };
    let mut out = Vec::new();
    p.skip_ws();
    p.expect("{")?;
    p.skip_ws();
    if p.eat("}") {
        p.skip_ws();
        return p.finish(out);
    }
    loop {
        p.skip_ws();
        let index = p.integer()? as usize;
        p.expect(":")?;
        p.skip_ws();
        p.expect("{")?;
        p.skip_ws();
        p.expect("text:")?;
        p.skip_ws();
        let elem_text = p.string_literal()?;
        p.expect(",")?;
        p.skip_ws();
        p.expect("location:")?;
        p.skip_ws();
        p.expect("[")?;
        let mut coords = [0u32; 4];
        for (i, c) in coords.iter_mut().enumerate() {
            if i > 0 {
                p.expect(",")?;
            }
            p.skip_ws();
            *c = p.integer()?;
            p.skip_ws();
        }
        p.expect("]")?;
        p.expect(",")?;
        p.skip_ws();
        p.expect("type:")?;
        p.skip_ws();
        let kw = p.word();
        let etype = ElementType::from_keyword(kw).ok_or_else(|| p.error(format!("unknown element type {kw:?}")))?;
        p.skip_ws();
        p.expect("}")?;
        out.push(UiElement::new(index, elem_text, BBox::from(coords), etype));
        p.skip_ws();
        if p.eat(",") {
            continue;
        }
        p.expect("}")?;
        p.skip_ws();
        return p.finish(out);
    }
}

struct TextCursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> TextCursor<'a> {
    fn rest(&self) -> &str {
        &self.src[self.pos..]
    }

    fn error(&self, reason: impl Into<String>) -> ScreenParseError {
        ScreenParseError { offset: self.pos, reason: reason.into() }
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn eat(&mut self, lit: &str) -> bool {
        if self.rest().starts_with(lit) {
            self.pos += lit.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, lit: &str) -> Result<(), ScreenParseError> {
        if self.eat(lit) {
            Ok(())
        } else {
            Err(self.error(format!("expected {lit:?}")))
        }
    }

    fn integer(&mut self) -> Result<u32, ScreenParseError> {
        let digits = self.rest().bytes().take_while(u8::is_ascii_digit).count();
        if digits == 0 {
            return Err(self.error("expected integer"));
        }
        let v = self.rest()[..digits].parse::<u32>().map_err(|e| self.error(e.to_string()))?;
        self.pos += digits;
        Ok(v)
    }

    fn word(&mut self) -> &'a str {
        let n = self.rest().bytes().take_while(|b| b.is_ascii_alphanumeric() || *b == b'_').count();
        let w = &self.src[self.pos..self.pos + n];
        self.pos += n;
        w
    }

    fn string_literal(&mut self) -> Result<String, ScreenParseError> {
        let mut de = serde_json::Deserializer::from_str(self.rest()).into_iter::<String>();
        match de.next() {
            Some(Ok(s)) => {
                self.pos += de.byte_offset();
                Ok(s)
            }
            _ => Err(self.error("expected string literal")),
        }
    }

    fn finish(&self, out: Vec<UiElement>) -> Result<Vec<UiElement>, ScreenParseError> {
        if self.pos == self.src.len() {
            Ok(out)
        } else {
            Err(self.error("trailing input"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn add_to_cart() -> UiElement {
        UiElement::new(0, "Add to Cart", BBox::new(10, 20, 110, 50), ElementType::Button)
    }

    #[test]
    fn empty_screen_serializes_to_braces() {
        let s = Screen::new("empty", 100, 100, vec![]);
        assert_eq!(serialize_screen(&s).unwrap(), "{}");
    }

    #[test]
    fn one_button_canonical_form() {
        let s = Screen::new("p", 200, 100, vec![add_to_cart()]);
        assert_eq!(
            serialize_screen(&s).unwrap(),
            r#"{0: {text: "Add to Cart", location: [10,20,110,50], type: button}}"#
        );
    }

    #[test]
    fn serialization_sorted_by_index() {
        let second = UiElement::new(1, "Qty", BBox::new(0, 60, 40, 80), ElementType::Input);
        let a = Screen::new("p", 200, 100, vec![second.clone(), add_to_cart()]);
        let b = Screen::new("p", 200, 100, vec![add_to_cart(), second]);
        let text = serialize_screen(&a).unwrap();
        assert_eq!(text, serialize_screen(&b).unwrap());
        assert!(text.find("0: ").unwrap() < text.find("1: ").unwrap());
    }

    #[test]
    fn validation_names_offending_element() {
        let bad = UiElement::new(0, "x", BBox::new(10, 10, 10, 20), ElementType::Button);
        let err = serialize_screen(&Screen::new("p", 100, 100, vec![bad])).unwrap_err();
        assert!(matches!(err, ScreenError::DegenerateBBox { index: 0, .. }));

        let oob = UiElement::new(0, "x", BBox::new(10, 10, 120, 20), ElementType::Button);
        let err = Screen::new("p", 100, 100, vec![oob]).validate().unwrap_err();
        assert!(err.to_string().contains("element 0"));

        let gap = UiElement::new(2, "x", BBox::new(1, 1, 2, 2), ElementType::Button);
        let err = Screen::new("p", 1000, 1000, vec![add_to_cart(), gap]).validate().unwrap_err();
        assert!(matches!(err, ScreenError::BadIndices { .. }));
    }

    #[test]
    fn typed_values_must_target_inputs() {
        let mut s = Screen::new("p", 200, 100, vec![add_to_cart()]);
        s.typed_values.insert(0, "x".into());
        assert!(matches!(s.validate(), Err(ScreenError::TypedValueTarget { index: 0, .. })));
    }

    #[test]
    fn caption_lookup_normalizes() {
        let s = Screen::new("p", 200, 100, vec![add_to_cart()]);
        assert_eq!(find_by_caption(&s, "Add to Cart").unwrap().unwrap().index, 0);
        assert_eq!(find_by_caption(&s, "  add   to CART ").unwrap().unwrap().index, 0);
        assert!(find_by_caption(&s, "Sort by price").unwrap().is_none());
        assert!(find_by_caption(&s, "   ").unwrap().is_none());
    }

    #[test]
    fn caption_lookup_reports_ambiguity() {
        let dup = UiElement::new(1, "add to cart", BBox::new(0, 60, 40, 80), ElementType::Button);
        let s = Screen::new("p", 200, 100, vec![add_to_cart(), dup]);
        match find_by_caption(&s, "Add to Cart") {
            Err(ScreenError::AmbiguousCaption { indices, .. }) => assert_eq!(indices, vec![0, 1]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_back_handles_escapes() {
        let e = UiElement::new(0, "say \"hi\", {ok}: [x]\\", BBox::new(1, 2, 3, 4), ElementType::Icon);
        let s = Screen::new("p", 10, 10, vec![e.clone()]);
        let text = serialize_screen(&s).unwrap();
        assert_eq!(parse_serialized_elements(&text).unwrap(), vec![e]);
        assert!(parse_serialized_elements("{0: {text: \"a\"").is_err());
        assert!(parse_serialized_elements("{} x").is_err());
    }

    #[test]
    fn iou_and_overlap() {
        let a = BBox::new(0, 0, 10, 10);
        let b = BBox::new(5, 0, 15, 10);
        assert!((a.iou(&b) - 50.0 / 150.0).abs() < 1e-12);
        assert_eq!(a.vertical_overlap(&BBox::new(0, 10, 5, 20)), 0);
        assert_eq!(a.vertical_overlap(&BBox::new(0, 9, 5, 20)), 1);
    }
}
