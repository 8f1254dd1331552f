use crate::data::LabelSchema;

/// A successfully read answer block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedAnswer {
    pub labels: Vec<usize>,
    /// Text outside the block, trimmed.
    pub rationale: String,
}

const RATIONALE_CAP: usize = 600;

fn fenced_blocks(text: &str) -> Vec<(usize, usize, Vec<&str>)> {
    let mut blocks = Vec::new();
    let mut open: Option<(usize, Vec<&str>)> = None;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        match open.take() {
            None if trimmed.starts_with("```") => open = Some((offset, Vec::new())),
            None => {}
            Some((start, body)) if trimmed.starts_with("```") => {
                blocks.push((start, offset + line.len(), body));
            }
            Some((start, mut body)) => {
                body.push(trimmed);
                open = Some((start, body));
            }
        }
        offset += line.len();
    }
    blocks
}

fn parse_block(lines: &[&str], schema: &LabelSchema, start: usize, width: usize) -> Result<Vec<usize>, String> {
    let mut labels: Vec<Option<usize>> = vec![None; width];
    for line in lines.iter().filter(|l| !l.is_empty()) {
        let (idx, label) = line
            .split_once(':')
            .ok_or_else(|| format!("line '{line}' is not '<index>: <LABEL>'"))?;
        let idx: usize = idx.trim().parse().map_err(|_| format!("bad depth index in '{line}'"))?;
        if idx < start || idx >= start + width {
            return Err(format!("depth index {idx} outside window {start}..{}", start + width - 1));
        }
        let class = schema
            .index_of(label.trim())
            .ok_or_else(|| format!("unknown label '{}'", label.trim()))?;
        if labels[idx - start].replace(class).is_some() {
            return Err(format!("depth index {idx} answered twice"));
        }
    }
    labels
        .iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| format!("depth index {} missing", start + i)))
        .collect()
}

/// Reads the last well-formed answer block covering depths
/// `start..start + width`. Labels match class names case-insensitively.
pub fn parse_answer(text: &str, schema: &LabelSchema, start: usize, width: usize) -> Result<ParsedAnswer, String> {
    let blocks = fenced_blocks(text);
    if blocks.is_empty() {
        return Err("no fenced answer block".into());
    }
    let mut last_err = String::new();
    for (from, to, lines) in blocks.iter().rev() {
        match parse_block(lines, schema, start, width) {
            Ok(labels) => {
                let mut rationale = format!("{}{}", &text[..*from], &text[*to..]).trim().to_string();
                if rationale.len() > RATIONALE_CAP {
                    let cut = (0..=RATIONALE_CAP).rev().find(|&i| rationale.is_char_boundary(i)).unwrap_or(0);
                    rationale.truncate(cut);
                }
                return Ok(ParsedAnswer { labels, rationale });
            }
            Err(e) => last_err = e,
        }
    }
    Err(last_err)
}

/// Renders labels in the answer-block format.
pub fn format_answer(labels: &[usize], start: usize, schema: &LabelSchema) -> String {
    let mut out = String::from("```answer\n");
    for (i, &l) in labels.iter().enumerate() {
        out.push_str(&format!("{}: {}\n", start + i, schema.name(l)));
    }
    out.push_str("```\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schema() -> LabelSchema {
        LabelSchema::new(["SS", "SH", "LS"]).unwrap()
    }

    #[test]
    fn parses_block_with_rationale() {
        let text = "Mostly shale.\n```answer\n4: sh\n5: SS\n```\n";
        let a = parse_answer(text, &schema(), 4, 2).unwrap();
        assert_eq!(a.labels, vec![1, 0]);
        assert_eq!(a.rationale, "Mostly shale.");
    }

    #[test]
    fn last_valid_block_wins() {
        let text = "```answer\n0: SS\n```\nrevised:\n```\n0: LS\n```";
        assert_eq!(parse_answer(text, &schema(), 0, 1).unwrap().labels, vec![2]);
        let trailing_junk = "```answer\n0: SS\n```\n```\nnot an answer\n```";
        assert_eq!(parse_answer(trailing_junk, &schema(), 0, 1).unwrap().labels, vec![0]);
    }

    #[test]
    fn rejects_malformed() {
        let s = schema();
        assert!(parse_answer("SS", &s, 0, 1).is_err());
        assert!(parse_answer("```\n0: SS\n```", &s, 0, 2).is_err());
        assert!(parse_answer("```\n0: XX\n```", &s, 0, 1).is_err());
        assert!(parse_answer("```\n0: SS\n0: SH\n```", &s, 0, 1).is_err());
        assert!(parse_answer("```\n3: SS\n```", &s, 0, 1).is_err());
        assert!(parse_answer("```\n0: SS\n", &s, 0, 1).is_err());
    }

    proptest! {
        #[test]
        fn format_parse_round_trip(labels in proptest::collection::vec(0usize..3, 1..12), start in 0usize..500) {
            let text = format!("notes\n{}", format_answer(&labels, start, &schema()));
            prop_assert_eq!(parse_answer(&text, &schema(), start, labels.len()).unwrap().labels, labels);
        }
    }
}
