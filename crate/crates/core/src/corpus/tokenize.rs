/// Lowercases, splits on whitespace and peels punctuation off into standalone
/// tokens. An apostrophe between letters starts a clitic token (`i'm` ->
/// `i`, `'m`).
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let chars: Vec<char> = chunk.chars().flat_map(char::to_lowercase).collect();
        let mut word = String::new();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c.is_alphanumeric() {
                word.push(c);
            } else if c == '\'' && !word.is_empty() && chars.get(i + 1).is_some_and(|n| n.is_alphabetic()) {
                out.push(std::mem::take(&mut word));
                word.push(c);
            } else {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(c.to_string());
            }
            i += 1;
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}
