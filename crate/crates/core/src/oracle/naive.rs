use crate::geometry::QtBox;
use crate::quadtree::NodeKind;

/// Node cells of the compressed quadtree storing `boxes`, built by the direct
/// top-down recursion: find the smallest box `H` holding every box strictly
/// inside the current cell; split into quadrants when `H` is the cell itself,
/// otherwise hang `H` plus the compressed remainder. Quadratic; reference only.
///
/// Returns `(cell, marked)` pairs in no particular order.
pub fn naive_quadtree_cells(dim: usize, boxes: &[QtBox]) -> Vec<(NodeKind, bool)> {
    let mut out = Vec::new();
    let all: Vec<QtBox> = boxes.to_vec();
    recurse(QtBox::root(dim), &all, boxes, &mut out);
    out
}

fn recurse(cell: QtBox, within: &[QtBox], input: &[QtBox], out: &mut Vec<(NodeKind, bool)>) {
    out.push((NodeKind::Ordinary(cell), input.contains(&cell)));
    let inside: Vec<QtBox> = within
        .iter()
        .copied()
        .filter(|b| b.level() > cell.level() && cell.contains_box(b))
        .collect();
    if inside.is_empty() {
        return;
    }
    let mut h = cell;
    'zoom: loop {
        if inside.contains(&h) {
            break;
        }
        for q in 0..1usize << cell.dim() {
            let quad = h.child(q);
            if inside.iter().all(|b| quad.contains_box(b)) {
                h = quad;
                continue 'zoom;
            }
        }
        break;
    }
    if h == cell {
        for q in 0..1usize << cell.dim() {
            let quad = cell.child(q);
            let sub: Vec<QtBox> = inside.iter().copied().filter(|b| quad.contains_box(b)).collect();
            recurse(quad, &sub, input, out);
        }
    } else {
        recurse(h, &inside, input, out);
        out.push((NodeKind::Compressed { outer: cell, inner: h }, false));
    }
}
