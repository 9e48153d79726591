use crate::text::labels::WebEntity;
use crate::text::vocab::{Vocabulary, BOS, EOS, PAD, TYPE_UNK};
use crate::text::words::normalize_ws;

/// Generic rendering of `TYPE:UNK` when no entity type is known.
const UNKNOWN_TYPE_NAME: &str = "entity";

/// Detokenizes `ids`, replacing each type token by the lowercased name of
/// the highest-scored input entity of that type (first on ties), or by the
/// lowercased type name when no such entity exists.
pub fn postprocess_types(ids: &[usize], vocab: &Vocabulary, entities: &[WebEntity]) -> String {
    let mut out = String::new();
    let mut run: Vec<usize> = Vec::new();
    let flush = |run: &mut Vec<usize>, out: &mut String| {
        if !run.is_empty() {
            out.push(' ');
            out.push_str(&vocab.detokenize(run));
            run.clear();
        }
    };
    for &id in ids {
        if matches!(id, PAD | BOS | EOS) {
            continue;
        }
        if !vocab.is_type_token(id) {
            run.push(id);
            continue;
        }
        flush(&mut run, &mut out);
        out.push(' ');
        out.push_str(&render_type(id, vocab, entities));
    }
    flush(&mut run, &mut out);
    normalize_ws(&out)
}

fn render_type(id: usize, vocab: &Vocabulary, entities: &[WebEntity]) -> String {
    let ty = vocab.type_of(id).unwrap_or("UNK");
    let best = entities
        .iter()
        .filter(|e| id != TYPE_UNK && vocab.type_id(&e.entity_type) == Some(id))
        .fold(None::<&WebEntity>, |best, e| match best {
            Some(b) if b.score >= e.score => Some(b),
            _ => Some(e),
        });
    match best {
        Some(e) => e.name.to_lowercase(),
        None if id == TYPE_UNK => UNKNOWN_TYPE_NAME.to_string(),
        None => ty.to_lowercase(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::vocab::build_vocab;

    fn vocab() -> Vocabulary {
        let types = ["ARTIST", "FILM"].map(String::from);
        build_vocab(&["performs on stage", "performs on stage"], &types, 200).unwrap()
    }

    #[test]
    fn artist_is_substituted() {
        let v = vocab();
        let mut ids = vec![v.type_id("ARTIST").unwrap()];
        ids.extend(v.tokenize("performs on stage"));
        ids.push(EOS);
        let we = [WebEntity::new("Eric Clapton", "ARTIST", 0.9)];
        assert_eq!(postprocess_types(&ids, &v, &we), "eric clapton performs on stage");
    }

    #[test]
    fn missing_type_uses_generic_name() {
        let v = vocab();
        let ids = [v.type_id("FILM").unwrap()];
        assert_eq!(postprocess_types(&ids, &v, &[]), "film");
    }

    #[test]
    fn highest_score_wins() {
        let v = vocab();
        let ids = [v.type_id("ARTIST").unwrap()];
        let we = [
            WebEntity::new("B Singer", "ARTIST", 0.7),
            WebEntity::new("A Singer", "ARTIST", 0.9),
        ];
        assert_eq!(postprocess_types(&ids, &v, &we), "a singer");
    }
}
