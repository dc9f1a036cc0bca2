//! Radial meshes.  The production mesh is geometrically stretched toward the
//! inner boundary: r(t) = r0 + A (e^{g t} - 1) with t in [0, 1], so resolution
//! concentrates where the fields vary fastest.  A and g are fixed by the
//! endpoints, which makes an n -> 2n refinement a strict subdivision of the
//! same map — every spacing halves, and observed-order studies come out clean.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Grid {
    pub r0: f64,
    pub rmax: f64,
    /// Interval count; there are n + 1 nodes.
    pub n: usize,
    /// Stretch exponent g; 0 gives a uniform mesh.
    pub stretch: f64,
    nodes: Vec<f64>,
    /// True when built from an explicit node list (ingested data); such a
    /// grid has no generating map to refine.
    explicit: bool,
}

impl Grid {
    pub fn new(r0: f64, rmax: f64, n: usize, stretch: f64) -> Result<Grid> {
        if !(rmax > r0) || !r0.is_finite() || !rmax.is_finite() {
            return Err(Error::InvalidInput(format!(
                "grid endpoints must satisfy r0 < rmax, got [{r0}, {rmax}]"
            )));
        }
        if n < 8 {
            return Err(Error::InvalidInput(format!("grid needs >= 8 intervals, got {n}")));
        }
        let span = rmax - r0;
        let nodes = (0..=n)
            .map(|i| {
                let t = i as f64 / n as f64;
                if stretch.abs() < 1e-12 {
                    r0 + span * t
                } else {
                    r0 + span * ((stretch * t).exp_m1()) / stretch.exp_m1()
                }
            })
            .collect();
        Ok(Grid { r0, rmax, n, stretch, nodes, explicit: false })
    }

    /// Wrap an explicit strictly increasing node list (ingested data).
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Grid> {
        if nodes.len() < 9 {
            return Err(Error::InvalidInput("node list needs >= 9 entries".into()));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("node list must be strictly increasing".into()));
        }
        Ok(Grid {
            r0: nodes[0],
            rmax: *nodes.last().unwrap(),
            n: nodes.len() - 1,
            stretch: 0.0,
            nodes,
            explicit: true,
        })
    }

    /// Stretched mesh tuned for an asymptotically flat exterior: dense near
    /// r0, spacing growing geometrically outward.
    pub fn exterior(r0: f64, rmax: f64, n: usize) -> Result<Grid> {
        Grid::new(r0, rmax, n, 9.0)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Same map, interval count multiplied; every old node is retained and
    /// every old spacing splits into `factor` parts.
    pub fn refine(&self, factor: usize) -> Grid {
        assert!(!self.explicit, "an explicit node list has no generating map to refine");
        Grid::new(self.r0, self.rmax, self.n * factor, self.stretch).expect("refining a valid grid")
    }

    /// Smallest spacing (at the inner end for positive stretch).
    pub fn min_spacing(&self) -> f64 {
        self.nodes
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// Indices of nodes in the outermost decade [rmax/10, rmax], used for
    /// asymptotic tail fits.
    pub fn outer_decade(&self) -> Vec<usize> {
        let cut = self.rmax / 10.0;
        (0..self.nodes.len()).filter(|&i| self.nodes[i] >= cut).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn endpoints_are_exact() {
        let g = Grid::new(0.5, 200.0, 256, 9.0).unwrap();
        assert_abs_diff_eq!(g.nodes()[0], 0.5, epsilon = 0.0);
        assert_abs_diff_eq!(*g.nodes().last().unwrap(), 200.0, epsilon = 1e-12);
        assert_eq!(g.len(), 257);
    }

    #[test]
    fn refinement_is_nested_and_halves_spacings() {
        let g = Grid::new(0.5, 200.0, 64, 9.0).unwrap();
        let g2 = g.refine(2);
        for (i, &r) in g.nodes().iter().enumerate() {
            assert_abs_diff_eq!(g2.nodes()[2 * i], r, epsilon = 1e-12 * r.abs().max(1.0));
        }
        for i in 0..g.n {
            let h = g.nodes()[i + 1] - g.nodes()[i];
            let hl = g2.nodes()[2 * i + 1] - g2.nodes()[2 * i];
            let hr = g2.nodes()[2 * i + 2] - g2.nodes()[2 * i + 1];
            // Both halves within a fixed ratio of h/2 set by the stretch map.
            assert!(hl > 0.0 && hr > 0.0);
            assert!((hl + hr - h).abs() < 1e-10 * h.abs().max(1e-12));
            assert!(hl < h && hr < h);
        }
    }

    #[test]
    fn zero_stretch_is_uniform() {
        let g = Grid::new(1.0, 2.0, 10, 0.0).unwrap();
        for i in 0..=10 {
            assert_abs_diff_eq!(g.nodes()[i], 1.0 + i as f64 * 0.1, epsilon = 1e-14);
        }
    }

    #[test]
    fn outer_decade_nonempty() {
        let g = Grid::exterior(0.5, 200.0, 128).unwrap();
        let idx = g.outer_decade();
        assert!(idx.len() >= 8, "stretched mesh keeps points in the outer decade");
        assert!(g.nodes()[idx[0]] >= 20.0);
    }
}
