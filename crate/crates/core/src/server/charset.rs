//! Request body decoding driven by the Content-Type `charset` parameter.

use encoding_rs::Encoding;

#[derive(Debug, PartialEq, Eq)]
pub enum DecodeError {
    UnknownCharset(String),
    Undecodable(&'static str),
}

impl std::fmt::Display for DecodeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DecodeError::UnknownCharset(c) => write!(f, "unsupported charset `{c}`"),
            DecodeError::Undecodable(name) => write!(f, "body is not valid {name}"),
        }
    }
}

/// Extracts the `charset` parameter from a Content-Type value.
pub fn declared_charset(content_type: &str) -> Option<String> {
    content_type.split(';').skip(1).find_map(|param| {
        let (k, v) = param.split_once('=')?;
        k.trim()
            .eq_ignore_ascii_case("charset")
            .then(|| v.trim().trim_matches('"').to_string())
    })
}

/// Decodes `body` into UTF-8 text. Without a declared charset the body must
/// already be UTF-8. Malformed byte sequences are rejected rather than
/// replaced.
pub fn decode_body(content_type: Option<&str>, body: &[u8]) -> Result<String, DecodeError> {
    let encoding = match content_type.and_then(declared_charset) {
        None => encoding_rs::UTF_8,
        Some(label) => Encoding::for_label(label.as_bytes())
            .ok_or(DecodeError::UnknownCharset(label))?,
    };
    encoding
        .decode_without_bom_handling_and_without_replacement(body)
        .map(|text| text.into_owned())
        .ok_or(DecodeError::Undecodable(encoding.name()))
}
