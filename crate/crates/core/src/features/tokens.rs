//! Grouped content tokens and their code-vector embedding.

use crate::error::{Error, Result};

/// Frame-major matrix of token ids, `frames x groups`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    ids: Vec<u32>,
    groups: usize,
    pub frame_rate: u32,
}

impl TokenSeq {
    pub fn new(ids: Vec<u32>, groups: usize) -> Result<Self> {
        if groups == 0 || ids.len() % groups != 0 {
            return Err(Error::Dim(format!("{} ids do not split into {groups} groups", ids.len())));
        }
        Ok(Self { ids, groups, frame_rate: 100 })
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn n_frames(&self) -> usize {
        self.ids.len() / self.groups
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn frame(&self, f: usize) -> &[u32] {
        &self.ids[f * self.groups..(f + 1) * self.groups]
    }

    /// Frames `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> TokenSeq {
        TokenSeq {
            ids: self.ids[start * self.groups..end * self.groups].to_vec(),
            groups: self.groups,
            frame_rate: self.frame_rate,
        }
    }
}

/// One code-vector table per group.
#[derive(Debug, Clone, PartialEq)]
pub struct CodebookSet {
    /// `tables[g]` is `codebook_size x code_dim`, row-major.
    tables: Vec<Vec<f32>>,
    sizes: Vec<usize>,
    code_dim: usize,
}

impl CodebookSet {
    pub fn new(tables: Vec<Vec<f32>>, code_dim: usize) -> Result<Self> {
        if tables.is_empty() || code_dim == 0 {
            return Err(Error::EmptyInput("codebook set"));
        }
        let mut sizes = Vec::with_capacity(tables.len());
        for t in &tables {
            if t.is_empty() || t.len() % code_dim != 0 {
                return Err(Error::Dim(format!("code table of {} values is not a multiple of {code_dim}", t.len())));
            }
            sizes.push(t.len() / code_dim);
        }
        Ok(Self { tables, sizes, code_dim })
    }

    pub fn groups(&self) -> usize {
        self.tables.len()
    }

    pub fn codebook_size(&self, group: usize) -> usize {
        self.sizes[group]
    }

    pub fn code_dim(&self) -> usize {
        self.code_dim
    }

    /// Concatenated width of one embedded frame.
    pub fn content_dim(&self) -> usize {
        self.code_dim * self.tables.len()
    }

    pub fn table(&self, group: usize) -> &[f32] {
        &self.tables[group]
    }

    pub fn code(&self, group: usize, id: usize) -> &[f32] {
        &self.tables[group][id * self.code_dim..(id + 1) * self.code_dim]
    }
}

/// Concatenates each group's code-vector per frame; returns `frames x content_dim`.
pub fn embed_tokens(t: &TokenSeq, cb: &CodebookSet) -> Result<Vec<f32>> {
    if t.groups() != cb.groups() {
        return Err(Error::Dim(format!(
            "token sequence has {} groups, codebooks have {}",
            t.groups(),
            cb.groups()
        )));
    }
    let mut out = Vec::with_capacity(t.n_frames() * cb.content_dim());
    for f in 0..t.n_frames() {
        for (g, &id) in t.frame(f).iter().enumerate() {
            let id = id as usize;
            if id >= cb.codebook_size(g) {
                return Err(Error::OutOfRange(format!(
                    "token id {id} in group {g} exceeds codebook size {}",
                    cb.codebook_size(g)
                )));
            }
            out.extend_from_slice(cb.code(g, id));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn codebooks() -> CodebookSet {
        let t0: Vec<f32> = (0..4 * 256).map(|i| i as f32).collect();
        let t1: Vec<f32> = (0..4 * 256).map(|i| -(i as f32)).collect();
        CodebookSet::new(vec![t0, t1], 256).unwrap()
    }

    #[test]
    fn two_groups_of_256_give_512_dim_frames() {
        let cb = codebooks();
        let t = TokenSeq::new(vec![0, 1, 3, 2, 0, 1], 2).unwrap();
        let e = embed_tokens(&t, &cb).unwrap();
        assert_eq!(cb.content_dim(), 512);
        assert_eq!(e.len(), 3 * 512);
        assert_eq!(&e[..512], &e[2 * 512..]);
        assert_eq!(&e[256..512], cb.code(1, 1));
    }

    #[test]
    fn out_of_range_id_is_rejected() {
        let cb = codebooks();
        let t = TokenSeq::new(vec![4, 0], 2).unwrap();
        assert!(matches!(embed_tokens(&t, &cb), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn ragged_ids_are_rejected() {
        assert!(TokenSeq::new(vec![0, 1, 2], 2).is_err());
    }
}
