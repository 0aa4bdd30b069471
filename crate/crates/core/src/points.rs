//! HTML-like point annotations.
//!
//! ```text
//! <point x="10.0" y="10.0" alt="alt text">Inline text</point>
//! <points x1="10.0" y1="10.0" x2="20.0" y2="20.0" alt="alt text">Inline text</points>
//! ```
//!
//! Coordinates are percentages of the image width/height in `[0, 100]`.
//! Rendering is canonical: points sorted top-down then left-to-right,
//! numbered from 1, one fractional digit, so the last index of a
//! multi-point tag is the count.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Snaps both coordinates to the 0.1 grid used on the wire.
    pub fn rounded(self) -> Self {
        let snap = |v: f64| (v * 10.0).round() / 10.0 + 0.0;
        Self::new(snap(self.x), snap(self.y))
    }

    fn reading_order(&self, other: &Self) -> Ordering {
        self.y.total_cmp(&other.y).then(self.x.total_cmp(&other.x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    pub points: Vec<Point>,
    pub alt: String,
    pub inline: String,
    /// Parsed from a `<point>` tag rather than `<points>`.
    pub singular: bool,
}

impl PointSet {
    pub fn new(points: Vec<Point>, alt: impl Into<String>, inline: impl Into<String>) -> Self {
        let singular = points.len() == 1;
        Self {
            points,
            alt: alt.into(),
            inline: inline.into(),
            singular,
        }
    }

    /// Rounded, ordered, with the tag form implied by the point count.
    pub fn canonicalize(&self) -> Self {
        let points = order_points(&self.points.iter().map(|p| p.rounded()).collect::<Vec<_>>());
        Self {
            singular: points.len() == 1,
            points,
            alt: self.alt.clone(),
            inline: self.inline.clone(),
        }
    }
}

/// Stable sort top-down, then left-to-right.
pub fn order_points(points: &[Point]) -> Vec<Point> {
    let mut sorted = points.to_vec();
    sorted.sort_by(Point::reading_order);
    sorted
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    /// Any malformed tag is an error.
    #[default]
    Strict,
    /// Malformed tags are kept as plain text; out-of-range coordinates are clamped.
    Lenient,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Fragment {
    Text(String),
    Points {
        set: PointSet,
        /// Byte span of the whole tag in the input.
        start: usize,
        end: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseErrorKind {
    #[error("unterminated opening tag")]
    UnterminatedTag,
    #[error("missing closing </{0}> tag")]
    MissingClose(String),
    #[error("point {0} lacks an x or y coordinate")]
    MissingCoordinate(u32),
    #[error("tag has no coordinates")]
    NoPoints,
    #[error("coordinate {0} outside [0, 100]")]
    OutOfRange(f64),
    #[error("non-numeric coordinate {0:?}")]
    NonNumeric(String),
    #[error("point indices must be strictly increasing, got {got} after {previous}")]
    IndexOrder { previous: u32, got: u32 },
    #[error("duplicate attribute {0}")]
    DuplicateAttribute(String),
    #[error("malformed attribute")]
    MalformedAttribute,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{kind} at byte {offset}")]
pub struct PointParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RenderError {
    #[error("cannot render a point tag with no points")]
    Empty,
}

/// Splits `text` into plain-text spans and point tags.
pub fn parse(text: &str, mode: ParseMode) -> Result<Vec<Fragment>, PointParseError> {
    let mut fragments = Vec::new();
    let mut plain = String::new();
    let mut cursor = 0;
    let mut search = 0;

    while let Some(rel) = text[search..].find('<') {
        let start = search + rel;
        let Some(name) = tag_name_at(text, start) else {
            search = start + 1;
            continue;
        };
        match parse_tag(text, start, name, mode) {
            Ok((set, end)) => {
                plain.push_str(&text[cursor..start]);
                if !plain.is_empty() {
                    fragments.push(Fragment::Text(std::mem::take(&mut plain)));
                }
                fragments.push(Fragment::Points { set, start, end });
                cursor = end;
                search = end;
            }
            Err((err, span_end)) => match mode {
                ParseMode::Strict => return Err(err),
                ParseMode::Lenient => {
                    // Skip the whole tag when its extent is known, else just the '<'.
                    search = span_end.unwrap_or(start + 1);
                }
            },
        }
    }
    plain.push_str(&text[cursor..]);
    if !plain.is_empty() {
        fragments.push(Fragment::Text(plain));
    }
    Ok(fragments)
}

/// All point sets in `text`, in order of appearance.
pub fn parse_point_sets(text: &str, mode: ParseMode) -> Result<Vec<PointSet>, PointParseError> {
    Ok(parse(text, mode)?
        .into_iter()
        .filter_map(|f| match f {
            Fragment::Points { set, .. } => Some(set),
            Fragment::Text(_) => None,
        })
        .collect())
}

fn tag_name_at(text: &str, start: usize) -> Option<&'static str> {
    let rest = &text[start + 1..];
    for name in ["points", "point"] {
        if let Some(after) = rest.strip_prefix(name) {
            match after.chars().next() {
                Some(c) if c.is_whitespace() || c == '>' || c == '/' => return Some(name),
                _ => {}
            }
        }
    }
    None
}

struct Attr<'a> {
    name: &'a str,
    value: String,
    offset: usize,
}

type TagResult = Result<(PointSet, usize), (PointParseError, Option<usize>)>;

fn parse_tag(text: &str, start: usize, name: &str, mode: ParseMode) -> TagResult {
    let err = |offset, kind| PointParseError { offset, kind };
    let bytes = text.as_bytes();
    let mut i = start + 1 + name.len();
    let mut attrs: Vec<Attr> = Vec::new();
    let self_closing;

    loop {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i >= bytes.len() {
            return Err((err(start, ParseErrorKind::UnterminatedTag), None));
        }
        match bytes[i] {
            b'>' => {
                self_closing = false;
                i += 1;
                break;
            }
            b'/' if bytes.get(i + 1) == Some(&b'>') => {
                self_closing = true;
                i += 2;
                break;
            }
            _ => {}
        }
        let name_start = i;
        while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'-') {
            i += 1;
        }
        if i == name_start {
            return Err((err(i, ParseErrorKind::MalformedAttribute), None));
        }
        let attr_name = &text[name_start..i];
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if bytes.get(i) != Some(&b'=') {
            // Valueless attribute.
            attrs.push(Attr { name: attr_name, value: String::new(), offset: name_start });
            continue;
        }
        i += 1;
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        let value = match bytes.get(i) {
            Some(&q @ (b'"' | b'\'')) => {
                let body = i + 1;
                let Some(len) = text[body..].find(q as char) else {
                    return Err((err(start, ParseErrorKind::UnterminatedTag), None));
                };
                i = body + len + 1;
                unescape(&text[body..body + len])
            }
            Some(_) => {
                let body = i;
                while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b'>' {
                    i += 1;
                }
                unescape(&text[body..i])
            }
            None => return Err((err(start, ParseErrorKind::UnterminatedTag), None)),
        };
        attrs.push(Attr { name: attr_name, value, offset: name_start });
    }

    let (inline, end) = if self_closing {
        (String::new(), i)
    } else {
        let close = format!("</{name}>");
        match text[i..].find(&close) {
            Some(rel) => (unescape(&text[i..i + rel]), i + rel + close.len()),
            None => {
                return Err((err(start, ParseErrorKind::MissingClose(name.to_string())), None));
            }
        }
    };

    let set = build_point_set(&attrs, name == "point", inline, mode).map_err(|e| (e, Some(end)))?;
    Ok((set, end))
}

#[derive(Default)]
struct Slot {
    index: u32,
    x: Option<f64>,
    y: Option<f64>,
}

fn coordinate_index(name: &str) -> Option<(char, u32)> {
    let mut chars = name.chars();
    let axis = chars.next().filter(|c| *c == 'x' || *c == 'y')?;
    let digits = chars.as_str();
    if digits.is_empty() {
        return Some((axis, 0));
    }
    if !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok().map(|n| (axis, n))
}

fn build_point_set(
    attrs: &[Attr],
    singular: bool,
    inline: String,
    mode: ParseMode,
) -> Result<PointSet, PointParseError> {
    let err = |offset, kind| PointParseError { offset, kind };
    let mut slots: Vec<Slot> = Vec::new();
    let mut alt = String::new();

    for attr in attrs {
        if attr.name == "alt" {
            alt = attr.value.clone();
            continue;
        }
        let Some((axis, index)) = coordinate_index(attr.name) else {
            continue;
        };
        let value = parse_coordinate(&attr.value, mode).map_err(|k| err(attr.offset, k))?;
        let existing = slots.iter().position(|s| s.index == index);
        match (axis, existing) {
            ('x', Some(pos)) => {
                if slots[pos].x.is_some() {
                    return Err(err(attr.offset, ParseErrorKind::DuplicateAttribute(attr.name.into())));
                }
                slots[pos].x = Some(value);
            }
            ('y', Some(pos)) if slots[pos].y.is_none() => slots[pos].y = Some(value),
            (_, Some(_)) => {
                // Repeated y index right after a new x: pair it with that x.
                match slots.last_mut() {
                    Some(last) if last.y.is_none() && last.x.is_some() => last.y = Some(value),
                    _ => {
                        return Err(err(attr.offset, ParseErrorKind::DuplicateAttribute(attr.name.into())))
                    }
                }
            }
            (_, None) => {
                if let Some(last) = slots.last() {
                    if index <= last.index {
                        return Err(err(
                            attr.offset,
                            ParseErrorKind::IndexOrder { previous: last.index, got: index },
                        ));
                    }
                }
                let mut slot = Slot { index, ..Default::default() };
                if axis == 'x' {
                    slot.x = Some(value);
                } else {
                    slot.y = Some(value);
                }
                slots.push(slot);
            }
        }
    }

    let offset = attrs.first().map_or(0, |a| a.offset);
    if slots.is_empty() {
        return Err(err(offset, ParseErrorKind::NoPoints));
    }
    let points = slots
        .iter()
        .map(|s| match (s.x, s.y) {
            (Some(x), Some(y)) => Ok(Point::new(x, y)),
            _ => Err(err(offset, ParseErrorKind::MissingCoordinate(s.index))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PointSet {
        points,
        alt,
        inline,
        singular,
    })
}

fn parse_coordinate(raw: &str, mode: ParseMode) -> Result<f64, ParseErrorKind> {
    let value: f64 = raw
        .trim()
        .parse()
        .map_err(|_| ParseErrorKind::NonNumeric(raw.to_string()))?;
    if !value.is_finite() {
        return Err(ParseErrorKind::NonNumeric(raw.to_string()));
    }
    if !(0.0..=100.0).contains(&value) {
        return match mode {
            ParseMode::Strict => Err(ParseErrorKind::OutOfRange(value)),
            ParseMode::Lenient => Ok(value.clamp(0.0, 100.0)),
        };
    }
    Ok(value)
}

fn escape_attr(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('"', "&quot;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn escape_text(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn unescape(s: &str) -> String {
    if !s.contains('&') {
        return s.to_string();
    }
    s.replace("&quot;", "\"")
        .replace("&#39;", "'")
        .replace("&apos;", "'")
        .replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&amp;", "&")
}

/// Canonical serialization of a point set.
pub fn render(set: &PointSet) -> Result<String, RenderError> {
    let canonical = set.canonicalize();
    let alt = escape_attr(&canonical.alt);
    let inline = escape_text(&canonical.inline);
    match canonical.points.as_slice() {
        [] => Err(RenderError::Empty),
        [p] => Ok(format!(
            r#"<point x="{:.1}" y="{:.1}" alt="{alt}">{inline}</point>"#,
            p.x, p.y
        )),
        points => {
            let mut out = String::from("<points");
            for (i, p) in points.iter().enumerate() {
                let n = i + 1;
                out.push_str(&format!(r#" x{n}="{:.1}" y{n}="{:.1}""#, p.x, p.y));
            }
            out.push_str(&format!(r#" alt="{alt}">{inline}</points>"#));
            Ok(out)
        }
    }
}

impl fmt::Display for PointSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match render(self) {
            Ok(s) => f.write_str(&s),
            Err(_) => Ok(()),
        }
    }
}

/// Column-oriented JSON form used by tooling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSetRecord {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    #[serde(default)]
    pub alt: String,
    #[serde(default)]
    pub inline: String,
}

impl From<&PointSet> for PointSetRecord {
    fn from(set: &PointSet) -> Self {
        Self {
            x: set.points.iter().map(|p| p.x).collect(),
            y: set.points.iter().map(|p| p.y).collect(),
            alt: set.alt.clone(),
            inline: set.inline.clone(),
        }
    }
}

impl TryFrom<PointSetRecord> for PointSet {
    type Error = String;

    fn try_from(r: PointSetRecord) -> Result<Self, Self::Error> {
        if r.x.len() != r.y.len() {
            return Err(format!("{} x values but {} y values", r.x.len(), r.y.len()));
        }
        let points = r.x.iter().zip(&r.y).map(|(&x, &y)| Point::new(x, y)).collect();
        Ok(PointSet::new(points, r.alt, r.inline))
    }
}
