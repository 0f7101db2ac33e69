use serde::de::DeserializeOwned;
use serde_json::error::Category;

pub(crate) enum DocError {
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    Schema {
        path: String,
        message: String,
    },
}

/// Deserializes a whole JSON document, separating malformed text from
/// well-formed text that does not fit the schema.
pub(crate) fn parse_document<T: DeserializeOwned>(text: &str) -> Result<T, DocError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        classify(e.into_inner(), path)
    })?;
    de.end().map_err(|e| classify(e, String::from(".")))?;
    Ok(value)
}

fn classify(e: serde_json::Error, path: String) -> DocError {
    match e.classify() {
        Category::Data => DocError::Schema {
            path,
            message: strip_position(&e.to_string()),
        },
        Category::Io | Category::Syntax | Category::Eof => DocError::Parse {
            line: e.line(),
            column: e.column(),
            message: strip_position(&e.to_string()),
        },
    }
}

fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}
