use crate::error::Result;
use crate::grammar::LexTree;
use crate::scoring::LpcfgModel;

/// Most probable tree of `sentence` with the compound vector fixed at the proposal mean.
pub fn decode(model: &LpcfgModel, sentence: &[usize]) -> Result<(LexTree, f64)> {
    let (mu, _) = model.encoder().encode_values(&model.params, sentence)?;
    super::viterbi(&model.build_tables(&mu, sentence)?)
}
