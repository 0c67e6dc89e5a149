//! Brand-bearing key-information extraction from raw HTML.
//!
//! Extraction is total: markup is parsed with browser-style error recovery
//! and never rejected. Script and style contents are excluded everywhere.

use scraper::node::Node;
use scraper::{ElementRef, Html, Selector};
use serde::{Deserialize, Serialize};

/// Entries kept per sequence field before character budgeting, bounding
/// pathological pages with huge numbers of spans.
pub const MAX_SEQUENCE_ENTRIES: usize = 50;

/// Default character budget applied before prompting.
pub const DEFAULT_CHAR_BUDGET: usize = 4096;

/// The key information extracted from a page's HTML.
///
/// Every field is always present (possibly empty) and whitespace-normalized:
/// runs of whitespace collapsed to single spaces, ends trimmed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HtmlKeyInfo {
    pub title: String,
    pub meta_description: String,
    pub favicon_path: String,
    pub logo_alt_texts: Vec<String>,
    pub header_text: String,
    pub footer_text: String,
    pub nav_bar_content: String,
    pub paragraph_texts: Vec<String>,
    pub span_texts: Vec<String>,
}

impl HtmlKeyInfo {
    /// Total character count across all fields.
    pub fn total_chars(&self) -> usize {
        let seq = |v: &[String]| v.iter().map(|s| s.chars().count()).sum::<usize>();
        self.title.chars().count()
            + self.meta_description.chars().count()
            + self.favicon_path.chars().count()
            + seq(&self.logo_alt_texts)
            + self.header_text.chars().count()
            + self.footer_text.chars().count()
            + self.nav_bar_content.chars().count()
            + seq(&self.paragraph_texts)
            + seq(&self.span_texts)
    }

    pub fn is_empty(&self) -> bool {
        self.total_chars() == 0
    }
}

/// Collapses whitespace runs to single spaces and trims the ends.
pub fn normalize_ws(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut pending_space = false;
    for ch in s.chars() {
        if ch.is_whitespace() {
            pending_space = !out.is_empty();
        } else {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(ch);
        }
    }
    out
}

fn selector(css: &str) -> Selector {
    Selector::parse(css).expect("static selector")
}

/// Visible text of a subtree: all text nodes except those under
/// `<script>`/`<style>`, whitespace-normalized. Iterative walk.
fn visible_text_of(el: ElementRef<'_>) -> String {
    let mut out = String::new();
    let mut stack: Vec<_> = {
        let mut children: Vec<_> = el.children().collect();
        children.reverse();
        children
    };
    while let Some(node) = stack.pop() {
        match node.value() {
            Node::Text(t) => {
                out.push_str(t);
                out.push(' ');
            }
            Node::Element(e) => {
                let name = e.name();
                if !name.eq_ignore_ascii_case("script") && !name.eq_ignore_ascii_case("style") {
                    let mut children: Vec<_> = node.children().collect();
                    children.reverse();
                    stack.extend(children);
                }
            }
            _ => {}
        }
    }
    normalize_ws(&out)
}

/// Visible text of a whole document.
pub fn visible_text(html: &str) -> String {
    let doc = Html::parse_document(html);
    visible_text_of(doc.root_element())
}

fn attr_contains_logo(el: &scraper::node::Element) -> bool {
    ["src", "alt", "id", "class"].iter().any(|a| {
        el.attr(a)
            .map(|v| v.to_ascii_lowercase().contains("logo"))
            .unwrap_or(false)
    })
}

/// True when the element is the semantic tag `name`, or carries `id` equal to
/// `name`, or has a class token equal to `name` (all case-insensitive).
fn is_region(el: ElementRef<'_>, name: &str) -> bool {
    let e = el.value();
    if e.name().eq_ignore_ascii_case(name) {
        return true;
    }
    if e.attr("id").is_some_and(|id| id.eq_ignore_ascii_case(name)) {
        return true;
    }
    e.attr("class").is_some_and(|classes| {
        classes
            .split_whitespace()
            .any(|c| c.eq_ignore_ascii_case(name))
    })
}

/// Concatenated visible text of all matching regions, skipping regions nested
/// inside an already-matched one so text is not counted twice.
fn region_text(doc: &Html, all: &Selector, name: &str) -> String {
    let mut parts = Vec::new();
    for el in doc.select(all) {
        if !is_region(el, name) {
            continue;
        }
        let nested = el
            .ancestors()
            .filter_map(ElementRef::wrap)
            .any(|a| is_region(a, name));
        if nested {
            continue;
        }
        let text = visible_text_of(el);
        if !text.is_empty() {
            parts.push(text);
        }
    }
    normalize_ws(&parts.join(" "))
}

/// Extracts the brand-bearing key information from raw HTML.
///
/// Rules, in document order where order matters:
/// - `title`: text of the first `<title>`.
/// - `meta_description`: `content` of the first `<meta name="description">`.
/// - `favicon_path`: `href` of the first `<link>` whose `rel` is `icon`,
///   `shortcut icon` or `apple-touch-icon`.
/// - `logo_alt_texts`: `alt` of `<img>` elements whose `src`, `alt`, `id` or
///   `class` contains `logo` case-insensitively.
/// - `header_text`/`footer_text`/`nav_bar_content`: visible text under
///   `<header>`/`<footer>`/`<nav>`, plus elements with an `id` or class token
///   equal to `header`/`footer`.
/// - `paragraph_texts`/`span_texts`: visible text of each `<p>`/`<span>`.
pub fn extract_key_info(html: &str) -> HtmlKeyInfo {
    let doc = Html::parse_document(html);

    let title = doc
        .select(&selector("title"))
        .next()
        .map(|el| normalize_ws(&el.text().collect::<String>()))
        .unwrap_or_default();

    let meta_description = doc
        .select(&selector("meta[content]"))
        .find(|el| {
            el.value()
                .attr("name")
                .is_some_and(|n| n.eq_ignore_ascii_case("description"))
        })
        .and_then(|el| el.value().attr("content"))
        .map(normalize_ws)
        .unwrap_or_default();

    let favicon_path = doc
        .select(&selector("link[rel][href]"))
        .find(|el| {
            let rel = el.value().attr("rel").unwrap_or_default();
            matches!(
                normalize_ws(rel).to_ascii_lowercase().as_str(),
                "icon" | "shortcut icon" | "apple-touch-icon"
            )
        })
        .and_then(|el| el.value().attr("href"))
        .map(normalize_ws)
        .unwrap_or_default();

    let logo_alt_texts: Vec<String> = doc
        .select(&selector("img[alt]"))
        .filter(|el| attr_contains_logo(el.value()))
        .filter_map(|el| el.value().attr("alt"))
        .map(normalize_ws)
        .filter(|alt| !alt.is_empty())
        .take(MAX_SEQUENCE_ENTRIES)
        .collect();

    let any = selector("*");
    let header_text = region_text(&doc, &any, "header");
    let footer_text = region_text(&doc, &any, "footer");

    let nav_bar_content = {
        let mut parts = Vec::new();
        for el in doc.select(&selector("nav")) {
            let nested = el
                .ancestors()
                .filter_map(ElementRef::wrap)
                .any(|a| a.value().name().eq_ignore_ascii_case("nav"));
            if nested {
                continue;
            }
            let text = visible_text_of(el);
            if !text.is_empty() {
                parts.push(text);
            }
        }
        normalize_ws(&parts.join(" "))
    };

    let per_element = |css: &str| -> Vec<String> {
        doc.select(&selector(css))
            .map(visible_text_of)
            .filter(|t| !t.is_empty())
            .take(MAX_SEQUENCE_ENTRIES)
            .collect()
    };
    let paragraph_texts = per_element("p");
    let span_texts = per_element("span");

    HtmlKeyInfo {
        title,
        meta_description,
        favicon_path,
        logo_alt_texts,
        header_text,
        footer_text,
        nav_bar_content,
        paragraph_texts,
        span_texts,
    }
}

/// Cuts `s` to at most `budget` characters, preferring a whitespace boundary
/// within the last 20 characters of the cut.
fn cut_to(s: &str, budget: usize) -> String {
    let chars: Vec<char> = s.chars().collect();
    if chars.len() <= budget {
        return s.to_string();
    }
    if budget == 0 {
        return String::new();
    }
    let window_start = budget.saturating_sub(20);
    let boundary = (window_start..budget)
        .rev()
        .find(|&i| chars[i].is_whitespace());
    let end = boundary.unwrap_or(budget);
    chars[..end]
        .iter()
        .collect::<String>()
        .trim_end()
        .to_string()
}

/// Reduces `info` to at most `max_chars` total characters.
///
/// Budget is granted to fields in priority order (title first, spans last),
/// so under pressure `span_texts` empties first, then `paragraph_texts`,
/// `nav_bar_content`, `footer_text`, `header_text`, `logo_alt_texts`,
/// `favicon_path`, `meta_description` and finally `title`. Within a sequence,
/// later entries are dropped before earlier ones. Idempotent for a fixed
/// budget. Callers should keep `max_chars >= 64`.
pub fn truncate_for_budget(info: &HtmlKeyInfo, max_chars: usize) -> HtmlKeyInfo {
    let mut remaining = max_chars;
    let mut take = |s: &str| -> String {
        let cut = cut_to(s, remaining);
        remaining -= cut.chars().count();
        cut
    };
    let title = take(&info.title);
    let meta_description = take(&info.meta_description);
    let favicon_path = take(&info.favicon_path);
    let take_seq = |v: &[String], remaining: &mut usize| -> Vec<String> {
        let mut out = Vec::new();
        for entry in v {
            if *remaining == 0 {
                break;
            }
            let cut = cut_to(entry, *remaining);
            *remaining -= cut.chars().count();
            if !cut.is_empty() {
                out.push(cut);
            }
        }
        out
    };
    let logo_alt_texts = take_seq(&info.logo_alt_texts, &mut remaining);
    let mut take = |s: &str| -> String {
        let cut = cut_to(s, remaining);
        remaining -= cut.chars().count();
        cut
    };
    let header_text = take(&info.header_text);
    let footer_text = take(&info.footer_text);
    let nav_bar_content = take(&info.nav_bar_content);
    let paragraph_texts = take_seq(&info.paragraph_texts, &mut remaining);
    let span_texts = take_seq(&info.span_texts, &mut remaining);

    HtmlKeyInfo {
        title,
        meta_description,
        favicon_path,
        logo_alt_texts,
        header_text,
        footer_text,
        nav_bar_content,
        paragraph_texts,
        span_texts,
    }
}
