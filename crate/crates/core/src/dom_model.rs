//! Text-bearing DOM nodes of a detail page.
//!
//! A page is reduced to the ordered list of elements that carry non-empty
//! direct text. Descendant text is never attributed to an ancestor, so each
//! record corresponds to exactly one element and one candidate value.

use std::fmt::Write as _;

use ego_tree::NodeRef;
use scraper::{Html, Node};
use serde::{Deserialize, Serialize};

use crate::error::{LeastError, Result};

/// Elements whose content is never page text.
const SKIPPED_TAGS: &[&str] = &["script", "style", "noscript", "template"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomNodeRecord {
    pub node_id: usize,
    /// Absolute path, lowercase tags, 1-based same-tag sibling index on every step.
    pub xpath: String,
    pub tag: String,
    pub text: String,
    /// `node_id / node count`.
    pub rel_position: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetailPage {
    pub page_id: String,
    pub website_id: String,
    pub nodes: Vec<DomNodeRecord>,
}

impl DetailPage {
    pub fn node_by_xpath(&self, xpath: &str) -> Option<&DomNodeRecord> {
        self.nodes.iter().find(|n| n.xpath == xpath)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Collapse whitespace runs to one space and trim. Case is preserved.
pub fn normalize_text(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for word in raw.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Parse an HTML document leniently and collect its text-bearing elements in
/// document order.
///
/// Invalid UTF-8 is replaced rather than rejected. Input containing NUL bytes
/// is treated as binary and rejected with [`LeastError::UnparseableDocument`].
pub fn parse_page(html: &[u8], page_id: &str, website_id: &str) -> Result<DetailPage> {
    if html.contains(&0) {
        return Err(LeastError::UnparseableDocument {
            page_id: page_id.to_string(),
            reason: "binary content (NUL byte)".into(),
        });
    }
    let source = String::from_utf8_lossy(html);
    let doc = Html::parse_document(&source);

    let mut raw = Vec::new();
    let mut path = String::new();
    walk(*doc.root_element(), 1, &mut path, &mut raw);

    let count = raw.len();
    let nodes = raw
        .into_iter()
        .enumerate()
        .map(|(node_id, (xpath, tag, text))| DomNodeRecord {
            node_id,
            xpath,
            tag,
            text,
            rel_position: node_id as f64 / count as f64,
        })
        .collect();

    Ok(DetailPage {
        page_id: page_id.to_string(),
        website_id: website_id.to_string(),
        nodes,
    })
}

fn walk(
    node: NodeRef<'_, Node>,
    index: usize,
    path: &mut String,
    out: &mut Vec<(String, String, String)>,
) {
    let Node::Element(el) = node.value() else {
        return;
    };
    let tag = el.name().to_ascii_lowercase();
    if SKIPPED_TAGS.contains(&tag.as_str()) {
        return;
    }
    let saved = path.len();
    let _ = write!(path, "/{tag}[{index}]");

    // Direct text runs are merged with single spaces.
    let mut text = String::new();
    for child in node.children() {
        if let Node::Text(t) = child.value() {
            let run = normalize_text(&t[..]);
            if !run.is_empty() {
                if !text.is_empty() {
                    text.push(' ');
                }
                text.push_str(&run);
            }
        }
    }
    if !text.is_empty() {
        out.push((path.clone(), tag.clone(), text));
    }

    let mut seen: Vec<(String, usize)> = Vec::new();
    for child in node.children() {
        if let Node::Element(cel) = child.value() {
            let name = cel.name().to_ascii_lowercase();
            let idx = match seen.iter_mut().find(|(n, _)| *n == name) {
                Some((_, c)) => {
                    *c += 1;
                    *c
                }
                None => {
                    seen.push((name, 1));
                    1
                }
            };
            walk(child, idx, path, out);
        }
    }
    path.truncate(saved);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texts(page: &DetailPage) -> Vec<(&str, &str)> {
        page.nodes
            .iter()
            .map(|n| (n.xpath.as_str(), n.text.as_str()))
            .collect()
    }

    #[test]
    fn two_text_nodes() {
        let html = b"<html><body><h1>Inception</h1><span>Christopher Nolan</span></body></html>";
        let page = parse_page(html, "p1", "w1").unwrap();
        assert_eq!(
            texts(&page),
            vec![
                ("/html[1]/body[1]/h1[1]", "Inception"),
                ("/html[1]/body[1]/span[1]", "Christopher Nolan"),
            ]
        );
        assert_eq!(page.nodes[0].tag, "h1");
        assert_eq!(page.nodes[1].rel_position, 0.5);
    }

    #[test]
    fn empty_body() {
        let page = parse_page(b"<html><body></body></html>", "p", "w").unwrap();
        assert!(page.is_empty());
    }

    #[test]
    fn script_and_comments_excluded() {
        let html = b"<html><head><script>var x=1;</script><style>p{}</style></head>\
                     <body><!-- note --><p>PG-13</p></body></html>";
        let page = parse_page(html, "p", "w").unwrap();
        assert_eq!(texts(&page), vec![("/html[1]/body[1]/p[1]", "PG-13")]);
    }

    #[test]
    fn sibling_indices_count_same_tag_only() {
        let html = b"<div><span>a</span><b>x</b><span>b</span></div><div><span>c</span></div>";
        let page = parse_page(html, "p", "w").unwrap();
        assert_eq!(
            texts(&page),
            vec![
                ("/html[1]/body[1]/div[1]/span[1]", "a"),
                ("/html[1]/body[1]/div[1]/b[1]", "x"),
                ("/html[1]/body[1]/div[1]/span[2]", "b"),
                ("/html[1]/body[1]/div[2]/span[1]", "c"),
            ]
        );
    }

    #[test]
    fn direct_text_only_and_runs_merged() {
        let html = b"<p>Directed  by <b>Nolan</b> in\n 2010</p>";
        let page = parse_page(html, "p", "w").unwrap();
        assert_eq!(
            texts(&page),
            vec![
                ("/html[1]/body[1]/p[1]", "Directed by in 2010"),
                ("/html[1]/body[1]/p[1]/b[1]", "Nolan"),
            ]
        );
    }

    #[test]
    fn malformed_markup_is_repaired() {
        let html = b"<html><body><div><span>Open<div>Inner</span></body>";
        let page = parse_page(html, "p", "w").unwrap();
        let t: Vec<_> = page.nodes.iter().map(|n| n.text.as_str()).collect();
        assert_eq!(t, vec!["Open", "Inner"]);
    }

    #[test]
    fn binary_input_rejected() {
        assert!(matches!(
            parse_page(b"\x00\x01\x02", "p", "w"),
            Err(LeastError::UnparseableDocument { .. })
        ));
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_text("  Christopher   Nolan \n"), "Christopher Nolan");
        assert_eq!(normalize_text("PG-13"), "PG-13");
        assert_eq!(normalize_text(""), "");
    }

    /// Independent count: every element whose direct text is non-blank.
    fn count_text_elements(doc: &Html) -> usize {
        doc.tree
            .nodes()
            .filter(|n| match n.value() {
                Node::Element(el) => {
                    let skipped = n.ancestors().chain(std::iter::once(*n)).any(|a| {
                        matches!(a.value(), Node::Element(e) if SKIPPED_TAGS.contains(&e.name()))
                    });
                    !skipped
                        && !SKIPPED_TAGS.contains(&el.name())
                        && n.children().any(|c| {
                            matches!(c.value(), Node::Text(t) if !t.trim().is_empty())
                        })
                }
                _ => false,
            })
            .count()
    }

    fn html_fragment() -> impl Strategy<Value = String> {
        let leaf = prop_oneof![
            "[a-zA-Z0-9 ]{0,12}".prop_map(|s| s),
            Just("<script>x=1</script>".to_string()),
            Just("  \n ".to_string()),
        ];
        leaf.prop_recursive(4, 32, 4, |inner| {
            (
                prop::sample::select(vec!["div", "span", "p", "li", "b", "section"]),
                prop::collection::vec(inner, 0..4),
            )
                .prop_map(|(tag, kids)| format!("<{tag}>{}</{tag}>", kids.concat()))
        })
    }

    proptest! {
        #[test]
        fn normalize_idempotent(s in "\\PC*") {
            let once = normalize_text(&s);
            prop_assert_eq!(normalize_text(&once), once);
        }

        #[test]
        fn node_count_matches_tree_walk(body in html_fragment()) {
            let html = format!("<html><body>{body}</body></html>");
            let page = parse_page(html.as_bytes(), "p", "w").unwrap();
            let doc = Html::parse_document(&html);
            prop_assert_eq!(page.nodes.len(), count_text_elements(&doc));
            let again = parse_page(html.as_bytes(), "p", "w").unwrap();
            prop_assert_eq!(&page, &again);
            let mut xp: Vec<_> = page.nodes.iter().map(|n| &n.xpath).collect();
            xp.sort();
            xp.dedup();
            prop_assert_eq!(xp.len(), page.nodes.len());
            for n in &page.nodes {
                prop_assert!(!n.text.is_empty());
                prop_assert!((0.0..=1.0).contains(&n.rel_position));
            }
        }
    }
}
