//! Boilerplate removal for converted screenshot HTML.
//!
//! Embedding a full HTML rendering wastes most of the token budget on
//! styling noise, so [`prune_html`] strips everything that does not carry
//! semantic content before the document is embedded. The pruner is a small
//! single-pass tag scanner rather than a full HTML parser: it only needs to
//! recognize tags, comments, and raw-text elements, and it copies kept
//! content verbatim from the source, which guarantees the output is never
//! longer than the input.

use super::ProviderError;

/// Removes presentation boilerplate from an HTML document.
///
/// Dropped: `<script>` and `<style>` elements (with their content),
/// comments, `style` and `class` attributes, event handlers, and any
/// attribute whose value is a `data:` URI. Kept: tag structure, text
/// content, and the `id`, `href`, `alt`, and `aria-*` attributes.
///
/// Pruning an already-pruned document is a fixed point, and the output is
/// always at most as long as the input. Unterminated tags or comments are
/// reported as [`ProviderError::HtmlParse`].
pub fn prune_html(html: &str) -> Result<String, ProviderError> {
    let mut out = String::with_capacity(html.len());
    let mut rest = html;

    while !rest.is_empty() {
        if let Some(after) = rest.strip_prefix("<!--") {
            let end = after.find("-->").ok_or_else(|| {
                ProviderError::HtmlParse("unterminated comment".into())
            })?;
            rest = &after[end + 3..];
        } else if starts_tag(rest) {
            let (tag, remainder) = split_tag(rest)?;
            rest = remainder;
            let parsed = parse_tag(tag)?;
            if !parsed.closing && is_raw_text_element(parsed.name) && !parsed.self_closing {
                rest = skip_raw_text(rest, parsed.name)?;
            } else if !is_raw_text_element(parsed.name) {
                emit_tag(&mut out, &parsed);
            }
            // Closing script/style tags reaching here (e.g. orphaned ones)
            // are dropped along with their element.
        } else {
            // Literal text, including a lone '<' that does not open a tag.
            let mut chars = rest.char_indices();
            let (_, first) = chars.next().expect("rest is non-empty");
            let next = chars
                .as_str()
                .find('<')
                .map(|i| i + first.len_utf8())
                .unwrap_or(rest.len());
            out.push_str(&rest[..next]);
            rest = &rest[next..];
        }
    }

    Ok(out)
}

/// True when the input starts a tag: `<` followed by a name, `/`, `!`, or
/// `?`. A lone `<` in prose is treated as text.
fn starts_tag(s: &str) -> bool {
    let mut chars = s.chars();
    if chars.next() != Some('<') {
        return false;
    }
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '/' || c == '!' || c == '?')
}

/// Splits off one `<...>` tag, honoring quotes inside attribute values.
fn split_tag(s: &str) -> Result<(&str, &str), ProviderError> {
    let bytes = s.as_bytes();
    let mut quote: Option<u8> = None;
    for (i, &b) in bytes.iter().enumerate().skip(1) {
        match quote {
            Some(q) => {
                if b == q {
                    quote = None;
                }
            }
            None => match b {
                b'"' | b'\'' => quote = Some(b),
                b'>' => return Ok((&s[..=i], &s[i + 1..])),
                _ => {}
            },
        }
    }
    Err(ProviderError::HtmlParse(format!(
        "unterminated tag near \"{}\"",
        &s[..s.len().min(40)]
    )))
}

fn is_raw_text_element(name: &str) -> bool {
    name.eq_ignore_ascii_case("script") || name.eq_ignore_ascii_case("style")
}

/// Skips everything through the matching `</name ...>` closing tag.
fn skip_raw_text<'a>(rest: &'a str, name: &str) -> Result<&'a str, ProviderError> {
    let lower = rest.to_ascii_lowercase();
    let needle = format!("</{}", name.to_ascii_lowercase());
    let mut from = 0;
    while let Some(pos) = lower[from..].find(&needle) {
        let at = from + pos;
        let after = at + needle.len();
        // The closing name must end here (e.g. reject "</scripted").
        let boundary = lower[after..]
            .chars()
            .next()
            .map(|c| c == '>' || c.is_ascii_whitespace())
            .unwrap_or(false);
        if boundary {
            if let Some(gt) = rest[after..].find('>') {
                return Ok(&rest[after + gt + 1..]);
            }
            break;
        }
        from = after;
    }
    Err(ProviderError::HtmlParse(format!("unterminated <{name}> element")))
}

/// One attribute: lowercased name, value without quotes, and the exact
/// source span (so kept attributes are emitted verbatim).
struct Attr<'a> {
    name: String,
    value: &'a str,
    source: &'a str,
}

struct Tag<'a> {
    name: &'a str,
    closing: bool,
    declaration: bool,
    self_closing: bool,
    attrs: Vec<Attr<'a>>,
    source: &'a str,
}

/// Parses the inside of one `<...>` span. This scanner is lenient about
/// structure but rejects quote characters outside quoted attribute values:
/// such tags cannot be reconstructed unambiguously.
fn parse_tag(tag: &str) -> Result<Tag<'_>, ProviderError> {
    let misquoted = |what: &str| {
        ProviderError::HtmlParse(format!("quote character inside {what} in \"{tag}\""))
    };
    let inner = &tag[1..tag.len() - 1];
    let closing = inner.starts_with('/');
    let declaration = inner.starts_with('!') || inner.starts_with('?');
    let body = if closing { &inner[1..] } else { inner };
    let self_closing = body.trim_end().ends_with('/');

    let name_end = body
        .char_indices()
        .find(|(_, c)| c.is_ascii_whitespace() || *c == '/' || *c == '>')
        .map(|(i, _)| i)
        .unwrap_or(body.len());
    let name = &body[..name_end];
    if !closing && !declaration && name.contains(['"', '\'']) {
        return Err(misquoted("tag name"));
    }

    let mut attrs = Vec::new();
    if !closing && !declaration {
        // Peel off the self-close marker so an unquoted final value does
        // not swallow it.
        let mut rest = body[name_end..].trim_end();
        if self_closing {
            rest = rest[..rest.len() - 1].trim_end();
        }
        loop {
            rest = rest.trim_start();
            if rest.is_empty() || rest == "/" {
                break;
            }
            let start_len = rest.len();
            let name_len = rest
                .char_indices()
                .find(|(_, c)| c.is_ascii_whitespace() || *c == '=' || *c == '/')
                .map(|(i, _)| i)
                .unwrap_or(rest.len());
            if name_len == 0 {
                // A stray '/' or '=' not part of an attribute; skip it.
                rest = &rest[1..];
                continue;
            }
            let attr_name = &rest[..name_len];
            if attr_name.contains(['"', '\'']) {
                return Err(misquoted("attribute name"));
            }
            let mut after = rest[name_len..].trim_start();
            let mut value: &str = "";
            if let Some(eq_rest) = after.strip_prefix('=') {
                let v = eq_rest.trim_start();
                if let Some(q) = v.chars().next().filter(|c| *c == '"' || *c == '\'') {
                    let inner_v = &v[1..];
                    let end = inner_v.find(q).unwrap_or(inner_v.len());
                    value = &inner_v[..end];
                    after = &inner_v[(end + 1).min(inner_v.len())..];
                } else {
                    let end = v
                        .char_indices()
                        .find(|(_, c)| c.is_ascii_whitespace())
                        .map(|(i, _)| i)
                        .unwrap_or(v.len());
                    value = &v[..end];
                    after = &v[end..];
                    if value.contains(['"', '\'']) {
                        return Err(misquoted("unquoted attribute value"));
                    }
                }
            }
            let consumed = start_len - after.len();
            attrs.push(Attr {
                name: attr_name.to_ascii_lowercase(),
                value,
                source: rest[..consumed].trim_end(),
            });
            rest = after;
        }
    }

    Ok(Tag { name, closing, declaration, self_closing, attrs, source: tag })
}

/// Attributes that survive pruning: identity, navigation, and
/// accessibility. Anything carrying a data: URI is dropped regardless.
fn keep_attr(attr: &Attr<'_>) -> bool {
    let keep_name = matches!(attr.name.as_str(), "id" | "href" | "alt")
        || attr.name.starts_with("aria-");
    keep_name && !attr.value.trim_start().to_ascii_lowercase().starts_with("data:")
}

fn emit_tag(out: &mut String, tag: &Tag<'_>) {
    if tag.declaration || tag.closing {
        out.push_str(tag.source);
        return;
    }
    out.push('<');
    out.push_str(tag.name);
    for attr in &tag.attrs {
        if keep_attr(attr) {
            out.push(' ');
            out.push_str(attr.source);
        }
    }
    if tag.self_closing {
        out.push_str("/>");
    } else {
        out.push('>');
    }
}
