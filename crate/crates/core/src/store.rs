//! Chain persistence: hierarchical scalar-parameter names, state
//! flattening, and the flat chain CSV format (one row per stored draw, one
//! column per scalar parameter, 17 significant digits).

use std::io::{Read, Write};

use crate::data::format_g17;
use crate::error::{Error, Result};
use crate::mcmc::ChainOutput;
use crate::model::{ModelDims, ParameterState, PrecisionVariant};

/// Hierarchical names of every stored scalar parameter, in the canonical
/// flattening order. Indices i and t are 1-based (t = 0 marks the
/// random-walk roots); covariate positions m and k are 0-based.
pub fn param_names(dims: &ModelDims) -> Vec<String> {
    let mut names = Vec::new();
    for i in 1..=dims.n_levels {
        for t in 1..=dims.n_years {
            for m in 0..dims.p {
                names.push(format!("beta[i={i},t={t},m={m}]"));
            }
        }
    }
    for t in 0..=dims.n_years {
        for m in 0..dims.p {
            names.push(format!("alpha[t={t},m={m}]"));
        }
    }
    match dims.variant {
        PrecisionVariant::M1 | PrecisionVariant::M2 => {
            for k in 0..dims.q {
                names.push(format!("delta[k={k}]"));
            }
        }
        PrecisionVariant::M3 => {
            for i in 1..=dims.n_levels {
                for k in 0..dims.q {
                    names.push(format!("delta[i={i},k={k}]"));
                }
            }
        }
        PrecisionVariant::M4 => {
            for t in 1..=dims.n_years {
                for k in 0..dims.q {
                    names.push(format!("delta[t={t},k={k}]"));
                }
            }
        }
        PrecisionVariant::M5 => {
            for i in 1..=dims.n_levels {
                for t in 1..=dims.n_years {
                    for k in 0..dims.q {
                        names.push(format!("delta[i={i},t={t},k={k}]"));
                    }
                }
            }
        }
    }
    match dims.variant {
        PrecisionVariant::M1 | PrecisionVariant::M2 => {}
        PrecisionVariant::M3 => {
            for k in 0..dims.q {
                names.push(format!("gamma[k={k}]"));
            }
        }
        PrecisionVariant::M4 | PrecisionVariant::M5 => {
            for t in 0..=dims.n_years {
                for k in 0..dims.q {
                    names.push(format!("gamma[t={t},k={k}]"));
                }
            }
        }
    }
    for i in 1..=dims.n_levels {
        for m in 0..dims.p {
            names.push(format!("v_beta[i={i},m={m}]"));
        }
    }
    for m in 0..dims.p {
        names.push(format!("w_alpha[m={m}]"));
    }
    match dims.variant {
        PrecisionVariant::M1 | PrecisionVariant::M2 => {}
        PrecisionVariant::M4 => {
            for k in 0..dims.q {
                names.push(format!("v_delta[k={k}]"));
            }
        }
        PrecisionVariant::M3 | PrecisionVariant::M5 => {
            for i in 1..=dims.n_levels {
                for k in 0..dims.q {
                    names.push(format!("v_delta[i={i},k={k}]"));
                }
            }
        }
    }
    if dims.has_gamma_walk() {
        for k in 0..dims.q {
            names.push(format!("w_gamma[k={k}]"));
        }
    }
    names
}

/// Flatten a state in the `param_names` order.
pub fn flatten_state(state: &ParameterState, dims: &ModelDims) -> Vec<f64> {
    let mut out = Vec::with_capacity(
        state.beta.len()
            + state.alpha.len()
            + state.delta.len()
            + state.gamma.len()
            + state.v_beta.len()
            + state.w_alpha.len()
            + state.v_delta.len()
            + state.w_gamma.len(),
    );
    out.extend_from_slice(&state.beta);
    out.extend_from_slice(&state.alpha);
    out.extend_from_slice(&state.delta);
    out.extend_from_slice(&state.gamma);
    out.extend_from_slice(&state.v_beta);
    out.extend_from_slice(&state.w_alpha);
    out.extend_from_slice(&state.v_delta);
    out.extend_from_slice(&state.w_gamma);
    debug_assert_eq!(out.len(), param_names(dims).len());
    out
}

/// Rebuild a state from a flat row in the `param_names` order.
pub fn unflatten_state(dims: &ModelDims, values: &[f64]) -> Result<ParameterState> {
    let mut state = ParameterState::init(dims, &crate::model::PriorSpec::default());
    let want = flatten_state(&state, dims).len();
    if values.len() != want {
        return Err(Error::DimensionMismatch(format!(
            "flat row has {} values, dims need {want}",
            values.len()
        )));
    }
    let mut cursor = 0usize;
    for field in [
        &mut state.beta,
        &mut state.alpha,
        &mut state.delta,
        &mut state.gamma,
        &mut state.v_beta,
        &mut state.w_alpha,
        &mut state.v_delta,
        &mut state.w_gamma,
    ] {
        let n = field.len();
        field.copy_from_slice(&values[cursor..cursor + n]);
        cursor += n;
    }
    Ok(state)
}

/// Write a chain as CSV: `draw,log_lik,deviance,<param columns...>`.
pub fn write_chain_csv<W: Write>(writer: W, output: &ChainOutput, dims: &ModelDims) -> Result<()> {
    let mut wr = csv::Writer::from_writer(writer);
    let mut header = vec!["draw".to_string(), "log_lik".to_string(), "deviance".to_string()];
    header.extend(param_names(dims));
    wr.write_record(&header)?;
    for (k, draw) in output.draws.iter().enumerate() {
        let mut row = Vec::with_capacity(header.len());
        row.push(k.to_string());
        row.push(format_g17(output.log_likelihoods[k]));
        row.push(format_g17(output.deviances[k]));
        row.extend(flatten_state(draw, dims).into_iter().map(format_g17));
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

/// Read a chain CSV written by `write_chain_csv`. Tuning metadata is not
/// part of the CSV; the returned output carries empty block diagnostics.
pub fn read_chain_csv<R: Read>(reader: R, dims: &ModelDims) -> Result<ChainOutput> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let expected: Vec<String> = {
        let mut h = vec!["draw".to_string(), "log_lik".to_string(), "deviance".to_string()];
        h.extend(param_names(dims));
        h
    };
    let headers = rd.headers()?.clone();
    if headers.len() != expected.len() || headers.iter().zip(&expected).any(|(a, b)| a != b) {
        return Err(Error::InvalidData(
            "chain CSV header does not match the model's parameter layout".into(),
        ));
    }
    let mut output = ChainOutput {
        chain_index: 0,
        draws: Vec::new(),
        log_likelihoods: Vec::new(),
        deviances: Vec::new(),
        blocks: Vec::new(),
    };
    let mut row = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        row.clear();
        for field in rec.iter().skip(1) {
            row.push(field.parse::<f64>().map_err(|_| {
                Error::InvalidData(format!("cannot parse chain CSV value '{field}'"))
            })?);
        }
        output.log_likelihoods.push(row[0]);
        output.deviances.push(row[1]);
        output.draws.push(unflatten_state(dims, &row[2..])?);
    }
    Ok(output)
}
