//! Integer grid stepping along a line segment (Amanatides & Woo).

use nalgebra::Point3;

/// Cell containing `p` on a grid with cubic cells of side `cell`.
pub fn cell_of(p: &Point3<f64>, cell: f64) -> [i64; 3] {
    // The epsilon keeps exact cell-corner positions in their own cell when
    // `p` was reconstructed as `index * cell`.
    [0, 1, 2].map(|i| (p[i] / cell + 1e-9).floor() as i64)
}

/// Visits, in order from `start` to `end`, every grid cell the segment passes
/// through. Both endpoint cells are always visited, each cell at most once.
pub fn traverse_cells(
    start: &Point3<f64>,
    end: &Point3<f64>,
    cell: f64,
    mut visit: impl FnMut([i64; 3]),
) {
    let first = cell_of(start, cell);
    let last = cell_of(end, cell);
    let delta = end - start;

    let mut cur = first;
    let mut step = [0i64; 3];
    let mut remaining = [0i64; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for i in 0..3 {
        remaining[i] = (last[i] - first[i]).abs();
        if remaining[i] == 0 {
            continue;
        }
        step[i] = (last[i] - first[i]).signum();
        if delta[i] != 0.0 {
            let boundary = (cur[i] + i64::from(step[i] > 0)) as f64 * cell;
            t_max[i] = ((boundary - start[i]) / delta[i]).max(0.0);
            t_delta[i] = cell / delta[i].abs();
        } else {
            t_max[i] = 0.0;
        }
    }

    visit(cur);
    loop {
        let mut axis = None;
        for i in 0..3 {
            if remaining[i] > 0 && axis.is_none_or(|a: usize| t_max[i] < t_max[a]) {
                axis = Some(i);
            }
        }
        let Some(axis) = axis else { break };
        cur[axis] += step[axis];
        remaining[axis] -= 1;
        t_max[axis] += t_delta[axis];
        visit(cur);
    }
}
