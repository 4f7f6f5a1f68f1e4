use clipsight_tensor::{BoundParams, Init, ParamStore, Tape, Tensor, Var};

use crate::error::Result;

/// One LSTM direction: fused gate weights for input and recurrent paths.
pub fn lstm_params(store: &mut ParamStore, path: &str, in_dim: usize, units: usize) {
    store.get_or_init(
        &format!("{path}/wx"),
        &[in_dim, 4 * units],
        Init::GlorotUniform { fan_in: in_dim, fan_out: 4 * units },
    );
    store.get_or_init(
        &format!("{path}/wh"),
        &[units, 4 * units],
        Init::GlorotUniform { fan_in: units, fan_out: 4 * units },
    );
    store.get_or_init(&format!("{path}/b"), &[4 * units], Init::Zeros);
}

#[derive(Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

pub fn lstm_init(tape: &Tape, units: usize) -> LstmState {
    LstmState {
        h: tape.leaf(Tensor::zeros(vec![1, units])),
        c: tape.leaf(Tensor::zeros(vec![1, units])),
    }
}

/// Standard cell: gates ordered input, forget, candidate, output.
pub fn lstm_cell(
    tape: &Tape,
    bound: &BoundParams,
    path: &str,
    x: Var,
    st: &LstmState,
    units: usize,
) -> Result<LstmState> {
    let wx = bound.var(&format!("{path}/wx"));
    let wh = bound.var(&format!("{path}/wh"));
    let b = bound.var(&format!("{path}/b"));
    let gates = tape.add(
        tape.add(tape.matmul(x, wx)?, tape.matmul(st.h, wh)?)?,
        b,
    )?;
    let i = tape.sigmoid(tape.slice_last(gates, 0, units)?)?;
    let f = tape.sigmoid(tape.slice_last(gates, units, units)?)?;
    let g = tape.tanh_op(tape.slice_last(gates, 2 * units, units)?)?;
    let o = tape.sigmoid(tape.slice_last(gates, 3 * units, units)?)?;
    let c = tape.add(tape.mul(f, st.c)?, tape.mul(i, g)?)?;
    let h = tape.mul(o, tape.tanh_op(c)?)?;
    Ok(LstmState { h, c })
}

pub fn bilstm_params(store: &mut ParamStore, path: &str, in_dim: usize, units: usize) {
    lstm_params(store, &format!("{path}/fwd"), in_dim, units);
    lstm_params(store, &format!("{path}/bwd"), in_dim, units);
}

pub struct BiLstmOut {
    /// Per step: concat of the forward and backward hidden state, [1, 2*units].
    pub steps: Vec<Var>,
    /// Forward state after the last step.
    pub final_fwd: Var,
    /// Backward state after its last step (input position 0).
    pub final_bwd: Var,
}

pub fn bilstm(
    tape: &Tape,
    bound: &BoundParams,
    path: &str,
    xs: &[Var],
    units: usize,
) -> Result<BiLstmOut> {
    let mut fwd = Vec::with_capacity(xs.len());
    let mut st = lstm_init(tape, units);
    for &x in xs {
        st = lstm_cell(tape, bound, &format!("{path}/fwd"), x, &st, units)?;
        fwd.push(st.h);
    }
    let final_fwd = st.h;

    let mut bwd = vec![final_fwd; xs.len()];
    let mut st = lstm_init(tape, units);
    for (i, &x) in xs.iter().enumerate().rev() {
        st = lstm_cell(tape, bound, &format!("{path}/bwd"), x, &st, units)?;
        bwd[i] = st.h;
    }
    let final_bwd = st.h;

    let steps = xs
        .iter()
        .enumerate()
        .map(|(i, _)| tape.concat_last(&[fwd[i], bwd[i]]))
        .collect::<clipsight_tensor::Result<Vec<_>>>()?;
    Ok(BiLstmOut {
        steps,
        final_fwd,
        final_bwd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_zero_states() {
        let mut store = ParamStore::new(1);
        lstm_params(&mut store, "cell", 3, 4);
        store.set("cell/wx", Tensor::zeros(vec![3, 16]));
        store.set("cell/wh", Tensor::zeros(vec![4, 16]));
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let x = tape.leaf(Tensor::new(vec![1, 3], vec![1.0, -2.0, 0.5]).unwrap());
        let st = lstm_cell(&tape, &bound, "cell", x, &lstm_init(&tape, 4), 4).unwrap();
        // gates all sigmoid(0)/tanh(0): c = 0.5*0 + 0.5*0 = 0, h = 0.5*tanh(0) = 0
        assert!(tape.value(st.h).iter().all(|&v| v == 0.0));
        assert!(tape.value(st.c).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bilstm_step_count_matches_input() {
        let mut store = ParamStore::new(2);
        bilstm_params(&mut store, "bi", 3, 5);
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let xs: Vec<Var> = (0..4)
            .map(|i| tape.leaf(Tensor::full(vec![1, 3], i as f64 / 4.0)))
            .collect();
        let out = bilstm(&tape, &bound, "bi", &xs, 5).unwrap();
        assert_eq!(out.steps.len(), 4);
        assert_eq!(tape.shape_of(out.steps[0]), vec![1, 10]);
        // step 3's forward half equals the final forward state
        let step3 = tape.value_cloned(out.steps[3]);
        let ff = tape.value_cloned(out.final_fwd);
        assert_eq!(&step3.data()[..5], ff.data());
    }
}
