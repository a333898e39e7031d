use std::io::BufRead;

use super::FormatError;

/// Longest token accepted; anything longer is certainly not a number or keyword.
pub(crate) const MAX_TOKEN_LEN: usize = 4096;

/// ASCII whitespace in the C sense, which unlike `u8::is_ascii_whitespace`
/// includes vertical tab.
fn is_space(b: u8) -> bool {
    b.is_ascii_whitespace() || b == 0x0b
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub bytes: Vec<u8>,
    pub line: usize,
}

impl Token {
    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.bytes).into_owned()
    }

    pub fn is(&self, keyword: &str) -> bool {
        self.bytes == keyword.as_bytes()
    }

    /// Grammar keywords all start with `begin.` or `end.`.
    pub fn is_keyword(&self) -> bool {
        self.bytes.starts_with(b"begin.") || self.bytes.starts_with(b"end.")
    }
}

/// Whitespace tokenizer over a byte stream with one token of lookahead.
pub(crate) struct Tokenizer<R> {
    reader: R,
    line: usize,
    peeked: Option<Option<Token>>,
}

impl<R: BufRead> Tokenizer<R> {
    pub fn new(reader: R) -> Self {
        Self {
            reader,
            line: 1,
            peeked: None,
        }
    }

    /// Line of the next unread byte.
    pub fn line(&self) -> usize {
        match &self.peeked {
            Some(Some(tok)) => tok.line,
            _ => self.line,
        }
    }

    pub fn peek(&mut self) -> Result<Option<&Token>, FormatError> {
        if self.peeked.is_none() {
            let tok = self.read_token()?;
            self.peeked = Some(tok);
        }
        Ok(self.peeked.as_ref().and_then(|t| t.as_ref()))
    }

    pub fn next_token(&mut self) -> Result<Option<Token>, FormatError> {
        match self.peeked.take() {
            Some(tok) => Ok(tok),
            None => self.read_token(),
        }
    }

    fn read_token(&mut self) -> Result<Option<Token>, FormatError> {
        let mut bytes = Vec::new();
        let mut start_line = self.line;
        loop {
            let buf = self.reader.fill_buf()?;
            if buf.is_empty() {
                break;
            }
            let mut used = 0;
            let mut done = false;
            for &b in buf {
                if is_space(b) {
                    if !bytes.is_empty() {
                        done = true;
                        break;
                    }
                    used += 1;
                    if b == b'\n' {
                        self.line += 1;
                    }
                } else {
                    if bytes.is_empty() {
                        start_line = self.line;
                    }
                    if bytes.len() == MAX_TOKEN_LEN {
                        return Err(FormatError::TokenTooLong {
                            max: MAX_TOKEN_LEN,
                            line: start_line,
                        });
                    }
                    bytes.push(b);
                    used += 1;
                }
            }
            self.reader.consume(used);
            if done {
                break;
            }
        }
        Ok((!bytes.is_empty()).then_some(Token {
            bytes,
            line: start_line,
        }))
    }
}
