//! BLEU and entity F1 on hand-written responses.

use std::collections::BTreeSet;

use datml::corpus::{tokenize, Entity};
use datml::eval::{bleu, entity_f1, BLEU_CONVENTION};

fn main() -> datml::Result<()> {
    let pairs = [
        ("the golden palace serves cheap chinese food", "golden palace serves cheap chinese food in the north"),
        ("your taxi is a red toyota", "a red toyota will pick you up"),
        ("is there anything else", "is there anything else i can help with"),
    ];
    let cands: Vec<_> = pairs.iter().map(|(c, _)| tokenize(c)).collect();
    let refs: Vec<_> = pairs.iter().map(|(_, r)| tokenize(r)).collect();
    println!("{BLEU_CONVENTION}");
    println!("corpus BLEU  {:.6}", bleu(&cands, &refs)?);
    println!("identical    {:.6}", bleu(&refs, &refs)?);

    let set = |vs: &[&str]| -> BTreeSet<Entity> { vs.iter().map(|v| Entity::new("name", *v)).collect() };
    let s = entity_f1(&[set(&["a", "b"])], &[set(&["b", "c"])])?;
    println!("entity F1    {:.3} (p {:.3}, r {:.3})", s.f1, s.precision, s.recall);
    Ok(())
}
