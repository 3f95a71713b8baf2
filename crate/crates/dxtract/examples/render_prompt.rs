//! Render one of the two pipeline prompts for a given impression.
//!
//! Usage: render_prompt <teacher|finetune> <vocab.tsv> <impression text...>

use std::path::Path;
use std::process::exit;

use dxtract::prompt::{render, PromptTemplate};
use dxtract::vocab::Vocabulary;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.len() < 3 {
        eprintln!("usage: render_prompt <teacher|finetune> <vocab.tsv> <impression text...>");
        exit(2);
    }
    let template = match args[0].as_str() {
        "teacher" => PromptTemplate::teacher_labeling(),
        "finetune" => PromptTemplate::fine_tune(),
        other => {
            eprintln!("unknown template kind {other:?} (expected teacher|finetune)");
            exit(2);
        }
    };
    let vocab = match Vocabulary::load(Path::new(&args[1]), true) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("vocabulary: {e}");
            exit(2);
        }
    };
    let impression = args[2..].join(" ");
    match render(&template, &impression, &vocab) {
        Ok(text) => print!("{text}"),
        Err(e) => {
            eprintln!("{e}");
            exit(2);
        }
    }
}
