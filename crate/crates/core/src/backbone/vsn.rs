//! Per-variable embedding and variable selection.

use crate::error::{Error, Result};
use crate::nn::layers::{self, Initializer};
use crate::nn::{ParameterStore, Tape, Var};

/// Registers embedders, the importance GRN and the per-variable GRNs.
/// Per-variable GRNs map the `embed`-wide embedding to `output` columns.
pub fn init_vsn(
    init: &mut Initializer,
    n_vars: usize,
    embed: usize,
    output: usize,
) -> Result<()> {
    for j in 0..n_vars {
        init.dense(&format!("vsn.embed.{j}"), 1, embed)?;
    }
    init.grn("vsn.importance", n_vars * embed, output, n_vars)?;
    for j in 0..n_vars {
        init.grn(&format!("vsn.var.{j}"), embed, output, output)?;
    }
    Ok(())
}

/// Applies `Dense_j` to column `j` of `x` (`T x V`); returns one `T x E`
/// embedding per variable.
pub fn embed(tape: &mut Tape, store: &ParameterStore, x: Var, n_vars: usize) -> Result<Vec<Var>> {
    let cols = tape.value(x).cols();
    if cols != n_vars {
        return Err(Error::shape(
            "embed",
            format!("input has {cols} variables, model expects {n_vars}"),
        ));
    }
    (0..n_vars)
        .map(|j| {
            let col = tape.slice_cols(x, j, 1)?;
            layers::dense(tape, store, col, &format!("vsn.embed.{j}"))
        })
        .collect()
}

/// Returns the combined features (`T x output`) and the importance weights
/// (`T x V`, rows summing to one).
pub fn vsn_forward(tape: &mut Tape, store: &ParameterStore, embeddings: &[Var]) -> Result<(Var, Var)> {
    let flat = tape.concat_cols(embeddings)?;
    let logits = layers::grn(tape, store, flat, "vsn.importance")?;
    let weights = tape.softmax_rows(logits, None)?;
    let mut acc = None;
    for (j, &e) in embeddings.iter().enumerate() {
        let processed = layers::grn(tape, store, e, &format!("vsn.var.{j}"))?;
        let w = tape.slice_cols(weights, j, 1)?;
        let term = tape.mul_col(processed, w)?;
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    let combined = acc.ok_or_else(|| Error::InvalidArgument("no input variables".into()))?;
    Ok((combined, weights))
}
