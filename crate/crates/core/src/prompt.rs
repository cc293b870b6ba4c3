//! The answering prompt shown to the model.

use crate::model::Source;

const HEADER: &str = "Given are the following sources: [BEGIN OF SOURCES]\n";
const SOURCES_END: &str = " [END OF SOURCES] \n\n";

/// Renders the instruction prompt. Each source becomes one `NAME: CONTENT`
/// line; nothing is escaped or normalized, so a name containing `": "` is
/// emitted as-is and cannot be told apart from its content on re-reading.
pub fn render_prompt(question: &str, sources: &[Source]) -> String {
    let mut out = String::with_capacity(
        1024 + sources.iter().map(|s| s.name.len() + s.content.len() + 3).sum::<usize>(),
    );
    out.push_str(HEADER);
    for (i, s) in sources.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&s.name);
        out.push_str(": ");
        out.push_str(&s.content);
    }
    out.push_str(SOURCES_END);
    out.push_str("Can you respond to the question \"");
    out.push_str(question);
    out.push_str(
        "\" by only relying on the sources. Ignore all sources that do not provide an answer to the question. \n\
Do not include any knowledge from outside of these sources. Only write a single paragraph. \
Each sentence must end with the reference in the form of (author, year, page number). \
Strictly follow this format. Citing multiple sources in one sentence is not allowed. \n\
However, if no source addresses the question, admit truthfully that no answer can be given.\n\
Answer the question concisely and avoid being verbose.    ",
    );
    out
}
