//! Synthetic translating-Gaussian problems.

use transflow_core::grid::{Field, GridSpec};

pub const BUMP_CENTRE: [f64; 2] = [0.5, 0.5];
pub const BUMP_WIDTH: f64 = 0.1;

/// Gaussian of standard deviation `width` centred at `centre`, periodised
/// over the unit square (5×5 images, enough for widths up to ~0.2).
pub fn periodic_bump(x: [f64; 2], centre: [f64; 2], width: f64) -> f64 {
    let mut v = 0.0;
    for a in -2..=2 {
        for b in -2..=2 {
            let dx = x[0] - centre[0] - a as f64;
            let dy = x[1] - centre[1] - b as f64;
            v += (-(dx * dx + dy * dy) / (2.0 * width * width)).exp();
        }
    }
    v.min(1.0)
}

fn check_shift(shift: [f64; 2]) -> Result<(), String> {
    if shift.iter().all(|s| s.abs() < 0.5) {
        Ok(())
    } else {
        Err(format!("shift components must lie in (-0.5, 0.5), got {shift:?}"))
    }
}

fn bump_field(grid: &GridSpec, time_index: usize, centre: [f64; 2]) -> Field {
    Field::from_fn(*grid, time_index, |x, y| periodic_bump([x, y], centre, BUMP_WIDTH))
}

fn centre_at(shift: [f64; 2], t: f64) -> [f64; 2] {
    [BUMP_CENTRE[0] + t * shift[0], BUMP_CENTRE[1] + t * shift[1]]
}

/// `(y0, y1)`: the bump at the domain centre and translated by `shift`.
pub fn synth_gaussian_translation(grid: &GridSpec, shift: [f64; 2]) -> Result<(Field, Field), String> {
    check_shift(shift)?;
    Ok((bump_field(grid, 0, BUMP_CENTRE), bump_field(grid, grid.n_t, centre_at(shift, 1.0))))
}

/// Frames at `t_k = kτ`, `k = 1..=N_t`, stacked step-major; the last one is `y1`.
pub fn synth_gaussian_sequence(grid: &GridSpec, shift: [f64; 2]) -> Result<Vec<f64>, String> {
    check_shift(shift)?;
    Ok((1..=grid.n_t)
        .flat_map(|k| bump_field(grid, k, centre_at(shift, k as f64 * grid.tau)).values)
        .collect())
}

/// The translated bump at time `t` sampled at arbitrary points.
pub fn sample_bump(points: &[[f64; 2]], shift: [f64; 2], t: f64) -> Vec<f64> {
    let c = centre_at(shift, t);
    points.iter().map(|&p| periodic_bump(p, c, BUMP_WIDTH)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_shift_is_identity() {
        let g = GridSpec::new(16, 16, 4).unwrap();
        let (a, b) = synth_gaussian_translation(&g, [0.0, 0.0]).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn translation_preserves_mass_and_moves_peak() {
        let g = GridSpec::new(32, 32, 4).unwrap();
        let (a, b) = synth_gaussian_translation(&g, [0.125, -0.0625]).unwrap();
        assert!((a.sum() - b.sum()).abs() <= 1e-12 * a.sum());
        let argmax = |f: &Field| {
            let (i, _) = f
                .values
                .iter()
                .enumerate()
                .fold((0, f64::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
            (i % 32, i / 32)
        };
        let (i0, j0) = argmax(&a);
        let (i1, j1) = argmax(&b);
        assert_eq!((i0 as i64 + 4, j0 as i64 - 2), (i1 as i64, j1 as i64));
        assert!(a.values.iter().chain(&b.values).all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn non_grid_shift_still_conserves_mass() {
        let g = GridSpec::new(16, 16, 2).unwrap();
        let (a, b) = synth_gaussian_translation(&g, [0.0371, 0.21]).unwrap();
        assert!((a.sum() - b.sum()).abs() <= 1e-12 * a.sum());
    }

    #[test]
    fn sequence_ends_at_target() {
        let g = GridSpec::new(8, 8, 5).unwrap();
        let (_, y1) = synth_gaussian_translation(&g, [0.1, 0.2]).unwrap();
        let seq = synth_gaussian_sequence(&g, [0.1, 0.2]).unwrap();
        assert_eq!(&seq[4 * 64..], &y1.values[..]);
        assert!(synth_gaussian_sequence(&g, [0.5, 0.0]).is_err());
    }
}
