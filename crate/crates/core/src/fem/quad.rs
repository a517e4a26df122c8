//! Quadrature rules on the reference triangle (barycentric points, weights
//! summing to one) and on edges (parametric points in [0,1]).

#[derive(Debug, Clone)]
pub struct TriRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl TriRule {
    pub fn nq(&self) -> usize {
        self.points.len()
    }

    /// Three-point midpoint rule, exact for quadratics.
    pub fn degree2() -> Self {
        let w = 1.0 / 3.0;
        TriRule {
            points: vec![[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]],
            weights: vec![w, w, w],
        }
    }

    /// Six-point rule, exact for quartics.
    pub fn degree4() -> Self {
        let a = 0.445948490915965;
        let wa = 0.223381589678011;
        let b = 0.091576213509771;
        let wb = 0.109951743655322;
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for &(c, w) in &[(a, wa), (b, wb)] {
            let d = 1.0 - 2.0 * c;
            points.push([d, c, c]);
            points.push([c, d, c]);
            points.push([c, c, d]);
            weights.extend_from_slice(&[w, w, w]);
        }
        TriRule { points, weights }
    }

    /// Twelve-point rule, exact for degree six; used by brute-force
    /// verification assemblies.
    pub fn degree6() -> Self {
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for &(c, w) in &[
            (0.063089014491502, 0.050844906370207),
            (0.249286745170910, 0.116786275726379),
        ] {
            let d = 1.0 - 2.0 * c;
            points.push([d, c, c]);
            points.push([c, d, c]);
            points.push([c, c, d]);
            weights.extend_from_slice(&[w, w, w]);
        }
        let (a, b) = (0.053145049844817, 0.310352451033784);
        let c = 1.0 - a - b;
        let w = 0.082851075618374;
        for p in [[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
            points.push(p);
            weights.push(w);
        }
        TriRule { points, weights }
    }

    pub fn for_degree(space_degree: u8) -> Self {
        match space_degree {
            1 => Self::degree2(),
            2 => Self::degree4(),
            other => panic!("unsupported polynomial degree {other}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EdgeRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl EdgeRule {
    /// Two-point Gauss rule on the unit interval, exact for cubics.
    pub fn gauss2() -> Self {
        let d = 1.0 / (2.0 * 3.0f64.sqrt());
        EdgeRule { points: vec![0.5 - d, 0.5 + d], weights: vec![0.5, 0.5] }
    }

    /// Three-point Gauss rule on the unit interval, exact for degree five.
    pub fn gauss3() -> Self {
        let d = 0.5 * (3.0f64 / 5.0).sqrt();
        EdgeRule {
            points: vec![0.5 - d, 0.5, 0.5 + d],
            weights: vec![5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0],
        }
    }

    pub fn for_degree(space_degree: u8) -> Self {
        match space_degree {
            1 => Self::gauss2(),
            2 => Self::gauss3(),
            other => panic!("unsupported polynomial degree {other}"),
        }
    }
}
