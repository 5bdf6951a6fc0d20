//! Conditional generation: analogy rows and style sweeps.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sgvae_core::dist::DistParams;
use sgvae_core::model::{recognition_dist, Evidence, ExecutionPlan, Family, Rows, Supervision, TraceConfig};
use sgvae_core::train::{classify, Binding};
use sgvae_core::{Tape, Tensor};

use crate::error::{Error, Result};
use crate::pgm::Grid;

/// Variable indices of an `x ← (y, z)` model with a Gaussian style `z`.
#[derive(Clone, Copy, Debug)]
pub struct Roles {
    pub x: usize,
    pub y: usize,
    pub z: usize,
    pub classes: usize,
    pub style_dims: usize,
}

impl Roles {
    pub fn infer(plan: &ExecutionPlan) -> Result<Self> {
        let g = plan.graph();
        let binding = Binding::infer(plan)?;
        let y = binding
            .label
            .ok_or_else(|| Error::Usage("generation needs a partial categorical label".into()))?;
        let x = binding.observed;
        let parents = g.generative_parents(x);
        let z = parents
            .iter()
            .copied()
            .find(|&p| g.variable(p).supervision == Supervision::Latent && g.variable(p).family == Family::Normal)
            .ok_or_else(|| Error::Usage(format!("`{}` has no Gaussian latent parent", g.variable(x).name)))?;
        if parents.len() != 2 || !parents.contains(&y) {
            return Err(Error::Usage(format!(
                "generation expects `{}` to depend on exactly the label and the style",
                g.variable(x).name
            )));
        }
        Ok(Roles {
            x,
            y,
            z,
            classes: g.variable(y).shape,
            style_dims: g.variable(z).shape,
        })
    }
}

/// Mean of `q(z | x, y)`, `[rows, D_z]`.
pub fn infer_style(
    plan: &ExecutionPlan,
    params: &[Tensor],
    roles: &Roles,
    x: &Tensor,
    labels: &[usize],
) -> Result<Tensor> {
    let g = plan.graph();
    let tape = Tape::new();
    let vars: Vec<_> = params.iter().map(|t| tape.constant(t.clone())).collect();
    let ev = Evidence::new()
        .with(&g.variable(roles.x).name, x.clone())
        .with(&g.variable(roles.y).name, Tensor::one_hot(labels, roles.classes)?);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (dist, _) = recognition_dist(plan, &tape, &vars, &ev, &TraceConfig::exact(1), roles.z, &mut rng)?;
    match dist {
        DistParams::Normal { mean, .. } => Ok(mean.to_tensor()),
        _ => Err(Error::Usage("the style variable is not Gaussian".into())),
    }
}

/// Mean of `p(x | y, z)` for one-hot `labels` and style rows `z`.
pub fn decode(plan: &ExecutionPlan, params: &[Tensor], roles: &Roles, labels: &[usize], z: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    let vars: Vec<_> = params.iter().map(|t| tape.constant(t.clone())).collect();
    let y = tape.constant(Tensor::one_hot(labels, roles.classes)?);
    let z = tape.constant(z.clone());
    let parents: Vec<Rows> = plan
        .graph()
        .generative_parents(roles.x)
        .iter()
        .map(|&p| Rows {
            var: if p == roles.y { y } else { z },
            per_sample: false,
        })
        .collect();
    let (dist, _) = plan.generative_params(roles.x, &vars, &parents, labels.len(), 1, &tape)?;
    Ok(dist.mean()?.to_tensor())
}

/// For each input, infers its style under the predicted label and renders
/// every class with that style. Returns one `[rows, width]` tensor per class.
pub fn analogies(plan: &ExecutionPlan, params: &[Tensor], x: &Tensor) -> Result<Vec<Tensor>> {
    let roles = Roles::infer(plan)?;
    let predicted = classify(plan, params, x, 1, 0)?;
    let z = infer_style(plan, params, &roles, x, &predicted)?;
    (0..roles.classes)
        .map(|c| decode(plan, params, &roles, &vec![c; x.rows()], &z))
        .collect()
}

fn tile_side(width: usize) -> Result<usize> {
    let side = (width as f64).sqrt().round() as usize;
    if side * side == width {
        Ok(side)
    } else {
        Err(Error::Usage(format!("{width} features do not form a square image")))
    }
}

/// One row per input: the input itself, then the rendering for each class.
pub fn analogy_grid(plan: &ExecutionPlan, params: &[Tensor], x: &Tensor) -> Result<Grid> {
    let side = tile_side(x.cols())?;
    let rendered = analogies(plan, params, x)?;
    let mut grid = Grid::new(x.rows(), rendered.len() + 1, side, side);
    for r in 0..x.rows() {
        grid.set(r, 0, x.row_slice(r));
        for (c, t) in rendered.iter().enumerate() {
            grid.set(r, c + 1, t.row_slice(r));
        }
    }
    Ok(grid)
}

/// Renders `label` over an `n × n` grid of a two-dimensional style spanning
/// `[−extent, extent]²`; rows vary the second coordinate.
pub fn style_sweep(plan: &ExecutionPlan, params: &[Tensor], label: usize, n: usize, extent: f64) -> Result<Grid> {
    let roles = Roles::infer(plan)?;
    if roles.style_dims != 2 {
        return Err(Error::Usage(format!(
            "style sweeps need a 2-d style, the model has {}",
            roles.style_dims
        )));
    }
    if label >= roles.classes {
        return Err(Error::Usage(format!("label {label} outside {} classes", roles.classes)));
    }
    if n < 2 {
        return Err(Error::Usage("a style sweep needs at least 2 points per axis".into()));
    }
    let at = |i: usize| -extent + 2.0 * extent * i as f64 / (n - 1) as f64;
    let mut z = Vec::with_capacity(n * n * 2);
    for r in 0..n {
        for c in 0..n {
            z.extend([at(c), at(n - 1 - r)]);
        }
    }
    let images = decode(plan, params, &roles, &vec![label; n * n], &Tensor::new([n * n, 2], z)?)?;
    let side = tile_side(images.cols())?;
    let mut grid = Grid::new(n, n, side, side);
    for r in 0..n {
        for c in 0..n {
            grid.set(r, c, images.row_slice(r * n + c));
        }
    }
    Ok(grid)
}

/// Fraction of analogy renderings that the recognition network assigns
/// to the class they were rendered for.
pub fn cycle_consistency(plan: &ExecutionPlan, params: &[Tensor], x: &Tensor) -> Result<f64> {
    let rendered = analogies(plan, params, x)?;
    let mut hits = 0usize;
    for (c, images) in rendered.iter().enumerate() {
        hits += classify(plan, params, images, 1, 0)?
            .iter()
            .filter(|&&p| p == c)
            .count();
    }
    Ok(hits as f64 / (rendered.len() * x.rows()) as f64)
}
