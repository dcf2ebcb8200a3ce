//! FiLM conditioner: maps the latent code, station identity and calendar to
//! a per-feature scale and shift, and applies them to the lifted series.

use super::ops::{affine, affine_backward, silu, silu_grad, tensor_row};
use super::params::Params;
use crate::error::ModelError;

#[derive(Debug, Clone, PartialEq)]
pub struct Film {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    cond_input: Vec<f64>,
    calendar: Vec<f64>,
    pre_hidden: Vec<f64>,
    hidden: Vec<f64>,
    station: usize,
}

pub fn condition(z: &[f64], station: usize, calendar: &[f64], p: &Params) -> Result<Film, ModelError> {
    let n_stations = p.station_table.shape[0];
    if station >= n_stations {
        return Err(ModelError::StationOutOfRange {
            index: station,
            count: n_stations,
        });
    }
    let h_cal = affine(&p.calendar_proj, calendar, 1);
    let cond_input = [z, tensor_row(&p.station_table, station), &h_cal].concat();
    if cond_input.len() != p.cond1.input_dim() {
        return Err(ModelError::Shape {
            what: "conditioner input",
            expected: p.cond1.input_dim(),
            got: cond_input.len(),
        });
    }
    let pre_hidden = affine(&p.cond1, &cond_input, 1);
    let hidden: Vec<f64> = pre_hidden.iter().map(|&h| silu(h)).collect();
    let out = affine(&p.cond2, &hidden, 1);
    let half = out.len() / 2;
    Ok(Film {
        gamma: out[..half].to_vec(),
        beta: out[half..].to_vec(),
        cond_input,
        calendar: calendar.to_vec(),
        pre_hidden,
        hidden,
        station,
    })
}

/// Lifts each scalar step to `d` features, applies `gamma`/`beta` and adds
/// the position table. Returns `values.len() × d`.
pub fn modulate(values: &[f64], gamma: &[f64], beta: &[f64], lift_w: &[f64], lift_b: &[f64], pe: &[f64]) -> Vec<f64> {
    let d = gamma.len();
    let mut x = Vec::with_capacity(values.len() * d);
    for (t, v) in values.iter().enumerate() {
        for i in 0..d {
            x.push(gamma[i] * (lift_w[i] * v + lift_b[i]) + beta[i] + pe[t * d + i]);
        }
    }
    x
}

/// Backward of [`modulate`]; returns `(d_gamma, d_beta)` and accumulates the
/// lift gradients.
pub(crate) fn modulate_backward(values: &[f64], gamma: &[f64], p: &Params, dx: &[f64], grad: &mut Params) -> (Vec<f64>, Vec<f64>) {
    let d = gamma.len();
    let mut d_gamma = vec![0.0; d];
    let mut d_beta = vec![0.0; d];
    for (t, v) in values.iter().enumerate() {
        for i in 0..d {
            let g = dx[t * d + i];
            let e = p.lift_w.data[i] * v + p.lift_b.data[i];
            d_gamma[i] += g * e;
            d_beta[i] += g;
            let de = g * gamma[i];
            grad.lift_w.data[i] += de * v;
            grad.lift_b.data[i] += de;
        }
    }
    (d_gamma, d_beta)
}

/// Backward of [`condition`]; returns the gradient w.r.t. `z`.
pub(crate) fn condition_backward(film: &Film, d_gamma: &[f64], d_beta: &[f64], p: &Params, grad: &mut Params) -> Vec<f64> {
    let d_out = [d_gamma, d_beta].concat();
    let d_hidden = affine_backward(&p.cond2, &film.hidden, 1, &d_out, &mut grad.cond2, true);
    let d_pre: Vec<f64> = d_hidden
        .iter()
        .zip(&film.pre_hidden)
        .map(|(g, h)| g * silu_grad(*h))
        .collect();
    let d_in = affine_backward(&p.cond1, &film.cond_input, 1, &d_pre, &mut grad.cond1, true);
    let d_lat = d_in.len() - p.station_table.shape[1] - p.calendar_proj.output_dim();
    let d_stat = p.station_table.shape[1];
    let row = &mut grad.station_table.data[film.station * d_stat..(film.station + 1) * d_stat];
    for (g, v) in row.iter_mut().zip(&d_in[d_lat..d_lat + d_stat]) {
        *g += v;
    }
    affine_backward(
        &p.calendar_proj,
        &film.calendar,
        1,
        &d_in[d_lat + d_stat..],
        &mut grad.calendar_proj,
        false,
    );
    d_in[..d_lat].to_vec()
}
